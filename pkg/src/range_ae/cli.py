"""Command-line entry point: ``range-ae <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 training failure,
4 I/O error, 5 long run refused.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .architectures import CheckpointError, EncoderKind, describe, load_checkpoint, save_checkpoint
from .experiment import ConfigError, LongRunRefused, load_config_file, parse_config, run_experiment
from .pulses import PulseKind, PulseSpec, power_spectrum
from .scene import (
    CANONICAL_GRID, SceneConfig, corrupt, noise_sigma_for_ratio, return_signal,
    sample_pulse,
)
from .streams import Purpose, stream
from .training import EnsembleMemberError, TrainConfig, TrainingDivergedError, train_autoencoder, train_ensemble

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING, EXIT_IO, EXIT_REFUSED = 0, 2, 3, 4, 5

log = logging.getLogger("range_ae")


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(float(v), ".17g") for v in row])


def read_signal_csv(path) -> np.ndarray:
    cols = analysis.read_curve_csv(path)
    if "amplitude" not in cols:
        raise ValueError(f"{path}: expected columns t,amplitude")
    return cols["amplitude"]


def _pulse_of(model, override):
    name = override or model.metadata.get("pulse")
    if name is None:
        raise ConfigError("checkpoint has no pulse in its metadata; pass --pulse")
    return PulseSpec.named(name)


def cmd_synth(args):
    signal = sample_pulse(PulseSpec.named(args.pulse), CANONICAL_GRID)
    _write_rows(args.out, ["t", "amplitude"], zip(CANONICAL_GRID.points, signal.values))
    if args.spectrum:
        freqs, power = power_spectrum(signal.values, CANONICAL_GRID.window)
        order = np.argsort(freqs, kind="stable")
        _write_rows(args.spectrum, ["f", "power"], zip(freqs[order], power[order]))


def cmd_scene(args):
    grid = CANONICAL_GRID
    signal = return_signal(SceneConfig(PulseSpec.named(args.pulse), args.separation), grid)
    if args.snr is not None:
        sigma = noise_sigma_for_ratio(args.snr, grid.n_samples, 1.0)
        signal = corrupt(signal, sigma, stream(args.seed, Purpose.SCENE_NOISE))
    _write_rows(args.out, ["t", "amplitude"], zip(grid.points, signal.values))


def _train_config(args, ensemble_size=1):
    return TrainConfig(PulseSpec.named(args.pulse), target_ratio=args.snr, epochs=args.epochs,
                       batch_size=args.batch_size, master_seed=args.seed,
                       ensemble_size=ensemble_size)


def cmd_train(args):
    config = _train_config(args)
    model, report = train_autoencoder(args.encoder, config, args.member, state_path=args.state)
    save_checkpoint(model, args.out)
    print(f"final loss {report.final_loss:.6g} after {len(report.losses)} epochs "
          f"({report.wall_time:.1f} s)")


def cmd_ensemble(args):
    config = _train_config(args, ensemble_size=args.count)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = train_ensemble(args.encoder, config, state_dir=args.state_dir)
    rows = []
    for model, report in results:
        save_checkpoint(model, out / f"member_{report.member}.json")
        rows += [(report.member, e, loss) for e, loss in enumerate(report.losses)]
    with (out / "report.csv").open("w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["member", "epoch", "loss"])
        for member, epoch, loss in rows:
            writer.writerow([member, epoch, format(loss, ".17g")])
    print(f"trained {len(results)} members into {out}")


def cmd_analyze_clean(args):
    model = load_checkpoint(args.ckpt)
    curve = analysis.encoder_response(model, _pulse_of(model, args.pulse), args.n_seps)
    if not args.raw:
        curve = analysis.scale_curve(curve)
        print(f"monotonicity {analysis.monotonicity_fraction(curve):.4f}")
    analysis.export_curves(curve, args.out)


def cmd_analyze_noisy(args):
    model = load_checkpoint(args.ckpt)
    stats = analysis.noisy_response_stats(model, _pulse_of(model, args.pulse), args.snr,
                                          args.n_seps, args.n_draws, seed=args.seed)
    analysis.export_curves(stats, args.out, scaled=not args.raw)
    print(f"mean scaled std {stats.mean_scaled_std:.6g}")


def cmd_rank(args):
    stats = {}
    for item in args.stats:
        name, _, path = item.rpartition("=")
        name = name or Path(path).stem
        stats.setdefault(name, []).append(analysis.stats_from_csv(path))
    order = analysis.rank_signals(stats)
    for name in order:
        print(f"{name}\t{np.mean([s.mean_scaled_std for s in stats[name]]):.6g}")


def cmd_compare(args):
    model = load_checkpoint(args.ckpt)
    result = analysis.compare_scenes(model, _pulse_of(model, args.pulse),
                                     read_signal_csv(args.scene1), read_signal_csv(args.scene2),
                                     tol=args.tol)
    print(result.value)


def cmd_gradcheck(args):
    from .gradcheck import TOLERANCE, run_all

    results = run_all(seed=args.seed, cases_per_layer=args.cases)
    worst = {}
    for r in results:
        key = f"{r.layer}.{r.wrt}"
        worst[key] = max(worst.get(key, 0.0), r.rel_error)
    for key, err in sorted(worst.items()):
        print(f"{'PASS' if err < TOLERANCE else 'FAIL'}  {key:28s} max rel err {err:.2e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_TRAINING


def cmd_run(args):
    file_values = load_config_file(args.config) if args.config else {}
    flags = {
        "profile": args.profile, "pulses": args.pulses, "encoder": args.encoder,
        "snrs": args.snr, "ensemble_size": args.count, "epochs_noiseless": args.epochs_noiseless,
        "epochs_noisy": args.epochs_noisy, "n_draws": args.n_draws, "master_seed": args.seed,
        "output_dir": args.out_dir, "save_every": args.save_every,
        "long_run": True if args.long_run else None,
    }
    config = parse_config(file_values, flags)
    root = run_experiment(config)
    manifest = json.loads((root / "manifest.json").read_text())
    print(json.dumps(json.loads((root / "ranking.json").read_text()), indent=1))
    if manifest["failed"]:
        for f in manifest["failed"]:
            print(f"failed: {f}", file=sys.stderr)
        return EXIT_TRAINING
    return EXIT_OK


def cmd_model_info(args):
    print(describe(load_checkpoint(args.ckpt)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="range-ae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    pulses = [k.value for k in PulseKind]
    encoders = [k.value for k in EncoderKind]

    p = sub.add_parser("synth", help="sample an outgoing pulse")
    p.add_argument("--pulse", choices=pulses, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--spectrum")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("scene", help="two-scatterer return signal")
    p.add_argument("--pulse", choices=pulses, required=True)
    p.add_argument("--separation", type=float, required=True)
    p.add_argument("--snr", type=_positive)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_scene)

    def training_args(p):
        p.add_argument("--encoder", choices=encoders, default="fourier")
        p.add_argument("--pulse", choices=pulses, required=True)
        p.add_argument("--snr", type=_positive)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int, default=512)
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one autoencoder")
    training_args(p)
    p.add_argument("--member", type=int, default=0)
    p.add_argument("--state", help="resumable training-state file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ensemble", help="train independent members")
    training_args(p)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--state-dir")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("analyze-clean", help="scaled encoder response on clean returns")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pulse", choices=pulses)
    p.add_argument("--n-seps", type=int, default=256)
    p.add_argument("--raw", action="store_true", help="write unscaled outputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_clean)

    p = sub.add_parser("analyze-noisy", help="encoder output statistics under noise")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pulse", choices=pulses)
    p.add_argument("--snr", type=_positive, required=True)
    p.add_argument("--n-seps", type=int, default=101)
    p.add_argument("--n-draws", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze_noisy)

    p = sub.add_parser("rank", help="order pulses by mean scaled std")
    p.add_argument("--stats", nargs="+", required=True, metavar="[NAME=]CSV")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("compare", help="which scene has the larger separation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pulse", choices=pulses)
    p.add_argument("--scene1", required=True)
    p.add_argument("--scene2", required=True)
    p.add_argument("--tol", type=float, default=1e-9)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference checks of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cases", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("run", help="full experiment")
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--profile", choices=["desk", "paper"])
    p.add_argument("--pulses", nargs="+", choices=pulses)
    p.add_argument("--encoder", choices=encoders)
    p.add_argument("--snr", type=_positive, nargs="+")
    p.add_argument("--count", type=int)
    p.add_argument("--epochs-noiseless", type=int)
    p.add_argument("--epochs-noisy", type=int)
    p.add_argument("--n-draws", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--save-every", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--long-run", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("model", help="checkpoint utilities")
    msub = p.add_subparsers(dest="model_command", required=True)
    q = msub.add_parser("info", help="print kind, shapes and metadata")
    q.add_argument("ckpt")
    q.set_defaults(func=cmd_model_info)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except LongRunRefused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except (TrainingDivergedError, EnsembleMemberError, analysis.DegenerateCurveError) as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ConfigError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
