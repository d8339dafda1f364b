"""Full-batch training of single autoencoders and ensembles.

Each epoch is one Adam step on the whole fixed batch of clean returns (512
equally spaced separations on [0, 1]). In denoising mode every epoch sees a
fresh noise tensor drawn from the stream (master_seed, TRAIN_NOISE, member,
epoch); initial parameters come from (master_seed, INIT, member).
"""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .architectures import (
    AutoencoderModel, EncoderKind, build_model, decode_array, encode_array,
    model_from_dict, model_to_dict,
)
from .nn.optim import AdamState, adam_step, mse_loss
from .pulses import PulseSpec
from .scene import CANONICAL_GRID, SamplingGrid, noise_sigma_for_ratio, return_signals
from .streams import Purpose, stream

log = logging.getLogger(__name__)

NOISELESS_EPOCHS = 3000
NOISY_EPOCHS = 5000
STATE_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float, member: int = 0):
        super().__init__(f"member {member}: non-finite loss {loss} at epoch {epoch}")
        self.epoch, self.loss, self.member = epoch, loss, member


class EnsembleMemberError(RuntimeError):
    def __init__(self, member: int, cause: BaseException):
        super().__init__(f"ensemble member {member} failed: {cause}")
        self.member, self.cause = member, cause


@dataclass(frozen=True)
class TrainConfig:
    pulse: PulseSpec
    target_ratio: float | None = None
    epochs: int | None = None
    batch_size: int = 512
    learning_rate: float = 1e-3
    master_seed: int = 0
    ensemble_size: int = 20
    grid: SamplingGrid = CANONICAL_GRID

    def __post_init__(self):
        if self.epochs is None:
            object.__setattr__(self, "epochs", NOISELESS_EPOCHS if self.noiseless else NOISY_EPOCHS)
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch size must be >= 2, got {self.batch_size}")
        if self.target_ratio is not None and not self.target_ratio >= 0:
            raise ValueError(f"target ratio must be >= 0, got {self.target_ratio}")
        if self.ensemble_size < 1:
            raise ValueError("ensemble needs at least one member")

    @property
    def noiseless(self) -> bool:
        return self.target_ratio is None

    @property
    def sigma(self) -> float:
        """Per-sample noise std; 0 keeps the denoising code path with zero noise."""
        if not self.target_ratio:
            return 0.0
        return noise_sigma_for_ratio(self.target_ratio, self.grid.n_samples, 1.0)


@dataclass
class TrainReport:
    member: int
    master_seed: int
    losses: list[float] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def make_training_batch(spec: PulseSpec, batch_size: int = 512,
                        grid: SamplingGrid = CANONICAL_GRID) -> tuple[np.ndarray, np.ndarray]:
    """Clean normalized returns (B, 1, N) at separations j / (B - 1)."""
    if batch_size < 2:
        raise ValueError(f"batch size must be >= 2, got {batch_size}")
    seps = np.arange(batch_size) / (batch_size - 1)
    return return_signals(spec, seps, grid)[:, None, :], seps


def _metadata(kind: EncoderKind, config: TrainConfig, member: int) -> dict:
    return {
        "pulse": config.pulse.kind.value,
        "target_ratio": config.target_ratio,
        "master_seed": config.master_seed,
        "member": member,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
    }


def _save_state(path: Path, model: AutoencoderModel, adam: AdamState, report: TrainReport) -> None:
    doc = {
        "state_version": STATE_VERSION,
        "epoch": len(report.losses),
        "losses": report.losses,
        "model": model_to_dict(model),
        "adam": {
            "t": adam.t,
            "m": {k: encode_array(v) for k, v in adam.m.items()},
            "v": {k: encode_array(v) for k, v in adam.v.items()},
        },
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def _load_state(path: Path, kind: EncoderKind, config: TrainConfig):
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("state_version") != STATE_VERSION:
        raise ValueError(f"{path}: unsupported training state version")
    model = model_from_dict(doc["model"], expected_kind=kind)
    adam = AdamState(lr=config.learning_rate, t=int(doc["adam"]["t"]))
    adam.m = {k: decode_array(v) for k, v in doc["adam"]["m"].items()}
    adam.v = {k: decode_array(v) for k, v in doc["adam"]["v"].items()}
    return model, adam, [float(x) for x in doc["losses"]]


def train_autoencoder(kind: EncoderKind | str, config: TrainConfig, member: int = 0,
                      state_path: str | os.PathLike | None = None,
                      save_every: int = 100,
                      clean: np.ndarray | None = None) -> tuple[AutoencoderModel, TrainReport]:
    """Train one autoencoder.

    With ``state_path`` the optimizer state is written every ``save_every``
    epochs and an existing state file is resumed from; because every random
    draw is keyed by epoch, a resumed run is bitwise identical to an
    uninterrupted one. ``clean`` may pass a precomputed training batch.
    """
    kind = EncoderKind(kind)
    started = time.perf_counter()
    if clean is None:
        clean, _ = make_training_batch(config.pulse, config.batch_size, config.grid)
    report = TrainReport(member=member, master_seed=config.master_seed)
    state_path = Path(state_path) if state_path is not None else None

    if state_path is not None and state_path.exists():
        model, adam, report.losses = _load_state(state_path, kind, config)
        log.info("member %d: resuming at epoch %d", member, len(report.losses))
    else:
        model = build_model(kind, stream(config.master_seed, Purpose.INIT, member))
        adam = AdamState(lr=config.learning_rate)
    model.metadata = _metadata(kind, config, member)
    params = model.params()
    sigma = config.sigma

    for epoch in range(len(report.losses), config.epochs):
        if config.noiseless:
            inputs = clean
        else:
            noise = stream(config.master_seed, Purpose.TRAIN_NOISE, member, epoch).standard_normal(clean.shape)
            inputs = clean + sigma * noise
        _, recon = model.forward(inputs)
        loss, grad = mse_loss(recon, clean)
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss, member)
        model.backward(grad)
        adam_step(params, model.grads(), adam)
        report.losses.append(loss)
        if state_path is not None and (epoch + 1) % save_every == 0:
            _save_state(state_path, model, adam, report)

    if state_path is not None:
        _save_state(state_path, model, adam, report)
    report.wall_time = time.perf_counter() - started
    return model, report


def worker_count() -> int:
    """Worker cap from RANGE_AE_THREADS (default 1)."""
    raw = os.environ.get("RANGE_AE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"RANGE_AE_THREADS must be an integer, got {raw!r}") from None


def _train_member(args):
    kind, config, member, state_dir, save_every, clean, raise_errors = args
    state_path = None if state_dir is None else Path(state_dir) / f"member_{member}.state.json"
    try:
        return train_autoencoder(kind, config, member, state_path=state_path,
                                 save_every=save_every, clean=clean)
    except Exception as exc:
        err = EnsembleMemberError(member, exc)
        if raise_errors:
            raise err from exc
        return err


def train_ensemble(kind: EncoderKind | str, config: TrainConfig,
                   members: list[int] | None = None,
                   state_dir: str | os.PathLike | None = None,
                   save_every: int = 100,
                   workers: int | None = None,
                   raise_errors: bool = True) -> list:
    """Train ``config.ensemble_size`` independent members (or the listed ones).

    Returns ``(model, report)`` pairs in member order whatever the worker
    count. With ``raise_errors=False`` a failed member is returned as its
    EnsembleMemberError instead of aborting the rest.
    """
    kind = EncoderKind(kind)
    members = list(range(config.ensemble_size)) if members is None else list(members)
    clean, _ = make_training_batch(config.pulse, config.batch_size, config.grid)
    if state_dir is not None:
        Path(state_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(kind, config, k, state_dir, save_every, clean, raise_errors) for k in members]
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(jobs) <= 1:
        return [_train_member(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_train_member, jobs))
