"""Experiment configuration and end-to-end orchestration.

An experiment trains, for every (pulse, snr) pair, an ensemble of
autoencoders and writes their checkpoints, loss reports, clean response
curves, noise statistics and a ranking summary. ``manifest.json`` echoes
the full configuration and the SHA-256 of every file written, so the
manifest alone pins down the whole output tree.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    DegenerateCurveError, encoder_response, export_curves, monotonicity_fraction,
    noisy_response_stats, rank_signals, scale_curve,
)
from .architectures import EncoderKind, save_checkpoint
from .pulses import PulseKind, PulseSpec
from .training import EnsembleMemberError, TrainConfig, train_ensemble

log = logging.getLogger(__name__)

PAPER_SNRS = (None, 0.5, 2.0 / 3.0, 1.0, 2.0)

PROFILES = {
    "desk": {
        "encoder": "fourier",
        "snrs": [1.0],
        "ensemble_size": 5,
        "epochs_noiseless": 1000,
        "epochs_noisy": 1000,
        "n_draws": 200,
    },
    "paper": {
        "encoder": "conv",
        "snrs": list(PAPER_SNRS),
        "ensemble_size": 20,
        "epochs_noiseless": 3000,
        "epochs_noisy": 5000,
        "n_draws": 1000,
    },
}

# Rough single-core seconds per full-batch (512) epoch, for cost estimates only.
SECONDS_PER_EPOCH = {"conv": 3.5, "linear": 0.08, "fourier": 0.045}


class ConfigError(ValueError):
    """Unknown key or out-of-range value; the message names the offender."""


class LongRunRefused(RuntimeError):
    def __init__(self, hours: float):
        super().__init__(
            f"paper profile needs roughly {hours:.0f} CPU-hours; pass --long-run to proceed"
        )
        self.hours = hours


@dataclass
class ExperimentConfig:
    profile: str = "desk"
    pulses: list[str] = field(default_factory=lambda: [k.value for k in PulseKind])
    encoder: str | None = None
    snrs: list[float | None] | None = None
    ensemble_size: int | None = None
    epochs_noiseless: int | None = None
    epochs_noisy: int | None = None
    n_draws: int | None = None
    n_seps_clean: int = 256
    n_seps_noisy: int = 101
    batch_size: int = 512
    learning_rate: float = 1e-3
    t_min: float = -5.0
    t_max: float = 5.0
    n_samples: int = 1024
    master_seed: int = 0
    output_dir: str = "experiment"
    save_every: int = 0
    long_run: bool = False

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"profile: must be one of {sorted(PROFILES)}, got {self.profile!r}")
        for key, value in PROFILES[self.profile].items():
            if getattr(self, key) is None:
                setattr(self, key, list(value) if isinstance(value, list) else value)
        self.validate()

    def validate(self) -> None:
        for p in self.pulses:
            if p not in {k.value for k in PulseKind}:
                raise ConfigError(f"pulses: unknown pulse {p!r}")
        if not self.pulses:
            raise ConfigError("pulses: need at least one pulse")
        if self.encoder not in {k.value for k in EncoderKind}:
            raise ConfigError(f"encoder: unknown encoder {self.encoder!r}")
        if not self.snrs:
            raise ConfigError("snrs: need at least one entry")
        for r in self.snrs:
            if r is not None and not (isinstance(r, (int, float)) and r > 0):
                raise ConfigError(f"snrs: values must be > 0 (or null for noiseless), got {r!r}")
        for key in ("ensemble_size", "epochs_noiseless", "epochs_noisy", "n_draws"):
            if not (isinstance(getattr(self, key), int) and getattr(self, key) >= 1):
                raise ConfigError(f"{key}: must be a positive integer, got {getattr(self, key)!r}")
        if self.n_seps_clean < 2 or self.n_seps_noisy < 2:
            raise ConfigError("n_seps_clean / n_seps_noisy: need at least 2 separations")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size: must be >= 2, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate: must be > 0, got {self.learning_rate}")
        if self.n_samples != 1024:
            raise ConfigError("n_samples: the architectures are fixed to 1024 samples")
        if not self.t_max > self.t_min:
            raise ConfigError("t_min/t_max: empty window")
        if not (isinstance(self.master_seed, int) and 0 <= self.master_seed < 2**64):
            raise ConfigError(f"master_seed: must be a 64-bit unsigned integer, got {self.master_seed!r}")
        if self.save_every < 0:
            raise ConfigError("save_every: must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def estimated_hours(self) -> float:
        per_epoch = SECONDS_PER_EPOCH[self.encoder] * self.batch_size / 512
        epochs = sum(self.epochs_noiseless if r is None else self.epochs_noisy for r in self.snrs)
        return per_epoch * epochs * self.ensemble_size * len(self.pulses) / 3600.0


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def parse_config(file_values: dict | None = None, flag_values: dict | None = None) -> ExperimentConfig:
    """Merge a flat JSON object with command-line values; flags win.

    ``None`` flag values mean "not given". Conflicts are logged.
    """
    merged: dict = {}
    for source, values in (("config file", file_values or {}), ("flag", flag_values or {})):
        if not isinstance(values, dict):
            raise ConfigError(f"{source}: expected a flat JSON object")
        for key, value in values.items():
            if key not in _FIELDS:
                raise ConfigError(f"{source}: unknown key {key!r}")
            if value is None and source == "flag":
                continue
            if source == "flag" and key in merged and merged[key] != value:
                log.warning("flag --%s=%r overrides config file value %r", key.replace("_", "-"),
                            value, merged[key])
            merged[key] = value
    return ExperimentConfig(**merged)


def load_config_file(path: str | os.PathLike) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return doc


def snr_tag(ratio: float | None) -> str:
    if ratio is None:
        return "noiseless"
    frac = Fraction(ratio).limit_denominator(1000)
    if abs(float(frac) - ratio) < 1e-12:
        return f"snr_{frac.numerator}" if frac.denominator == 1 else f"snr_{frac.numerator}-{frac.denominator}"
    return f"snr_{ratio!r}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_report(path: Path, reports) -> None:
    with path.open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["member", "epoch", "loss"])
        for rep in reports:
            for epoch, loss in enumerate(rep.losses):
                writer.writerow([rep.member, epoch, format(loss, ".17g")])


def run_experiment(config: ExperimentConfig) -> Path:
    """Run every (pulse, snr) cell and write the output tree; returns its root.

    Raises LongRunRefused for the paper profile unless ``long_run`` is set.
    Member failures are recorded in the manifest rather than raised; check
    ``manifest["failed"]``.
    """
    if config.profile == "paper" and not config.long_run:
        raise LongRunRefused(config.estimated_hours())
    root = Path(config.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    cells = []
    failed = []
    ranking = {}

    for ratio in config.snrs:
        noise_stats = {}
        for pulse in config.pulses:
            spec = PulseSpec.named(pulse)
            cell_dir = root / pulse / snr_tag(ratio)
            cell_dir.mkdir(parents=True, exist_ok=True)
            tc = TrainConfig(
                pulse=spec, target_ratio=ratio,
                epochs=config.epochs_noiseless if ratio is None else config.epochs_noisy,
                batch_size=config.batch_size, learning_rate=config.learning_rate,
                master_seed=config.master_seed, ensemble_size=config.ensemble_size,
            )
            state_dir = cell_dir / "state" if config.save_every else None
            outcomes = train_ensemble(config.encoder, tc, state_dir=state_dir,
                                      save_every=config.save_every or 100, raise_errors=False)
            reports, members, cell_stats = [], [], []
            for k, outcome in enumerate(outcomes):
                if isinstance(outcome, EnsembleMemberError):
                    log.error("%s %s: %s", pulse, snr_tag(ratio), outcome)
                    failed.append({"pulse": pulse, "snr": ratio, "member": k, "stage": "training",
                                   "error": str(outcome.cause)})
                    continue
                model, rep = outcome
                reports.append(rep)
                files.append(save_checkpoint(model, cell_dir / f"member_{k}.json"))
                entry = {"member": k, "final_loss": rep.final_loss}
                try:
                    curve = scale_curve(encoder_response(model, spec, config.n_seps_clean))
                    files.append(export_curves(curve, cell_dir / f"clean_member_{k}.csv"))
                    entry["monotonicity"] = monotonicity_fraction(curve)
                    if ratio is not None:
                        stats = noisy_response_stats(model, spec, ratio, config.n_seps_noisy,
                                                     config.n_draws, seed=config.master_seed)
                        files.append(export_curves(stats, cell_dir / f"noisy_member_{k}.csv"))
                        entry["mean_scaled_std"] = stats.mean_scaled_std
                        cell_stats.append(stats)
                except DegenerateCurveError as exc:
                    failed.append({"pulse": pulse, "snr": ratio, "member": k, "stage": "analysis",
                                   "error": str(exc)})
                members.append(entry)
            if reports:
                report_path = cell_dir / "report.csv"
                _write_report(report_path, reports)
                files.append(report_path)
            if cell_stats:
                noise_stats[pulse] = cell_stats
            cells.append({"pulse": pulse, "snr": ratio, "dir": cell_dir.relative_to(root).as_posix(),
                          "members": members})
        if noise_stats:
            order = rank_signals(noise_stats)
            ranking[snr_tag(ratio)] = {
                "order": order,
                "mean_scaled_std": {p: float(np.mean([s.mean_scaled_std for s in v]))
                                    for p, v in noise_stats.items()},
            }

    ranking_path = root / "ranking.json"
    ranking_path.write_text(json.dumps(ranking, indent=1, sort_keys=True) + "\n", encoding="ascii")
    files.append(ranking_path)

    manifest = {
        "package_version": __version__,
        "config": config.to_dict(),
        "master_seed": config.master_seed,
        "cells": cells,
        "failed": failed,
        "files": {p.relative_to(root).as_posix(): _sha256(p) for p in sorted(files)},
    }
    # the output location does not affect results
    manifest["config"].pop("output_dir")
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                        encoding="ascii")
    return root


def manifest_hash(root: str | os.PathLike) -> str:
    return _sha256(Path(root) / "manifest.json")

