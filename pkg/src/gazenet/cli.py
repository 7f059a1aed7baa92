"""Command-line interface.

Subcommands: synth, train, eval, loocv, count, bench, gradcheck.  Reports are
JSON, training logs are CSV, and both get a rendered PNG figure written
alongside them unless --no-figures is given.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data, models, reporting, training
from .imaging import FILTERS, AugmentConfig
from .training import INPUT_MODES, TrainConfig


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got '{text}'") from None


def _load_config(args) -> TrainConfig:
    """Build a TrainConfig from --config JSON plus explicit flag overrides."""
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key, value in (
        ("architecture", getattr(args, "arch", None)),
        ("seed", getattr(args, "seed", None)),
        ("input_mode", getattr(args, "mode", None)),
        ("epochs", getattr(args, "epochs", None)),
        ("batch_size", getattr(args, "batch_size", None)),
        ("learning_rate", getattr(args, "learning_rate", None)),
        ("momentum", getattr(args, "momentum", None)),
    ):
        if value is not None:
            base[key] = value
    if getattr(args, "no_augment", False):
        aug = base.get("augment", AugmentConfig().to_dict())
        aug["degrade_probability"] = 0.0
        base["augment"] = aug
    return TrainConfig.from_dict(base)


def _eval_condition(args):
    if args.degrade is None:
        return None
    return (args.degrade, args.filter)


def cmd_synth(args) -> int:
    manifest = data.synth_generate(args.out, args.persons, args.frames, args.seed)
    print(f"wrote {args.persons * args.frames} frames to {manifest}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    frames = data.load_manifest(args.data)
    train_frames, _ = data.split_frames(frames, args.holdout)
    params, log = training.train_fold(train_frames, config)
    spec = training.spec_for(config)
    models.save_weights(spec, params, args.weights_out)
    reporting.write_train_log(args.log_out, log)
    if not args.no_figures:
        reporting.render_train_curves(log, Path(args.log_out).with_suffix(".png"))
    print(f"trained {config.architecture} on {len(train_frames)} frames "
          f"(held out '{args.holdout}'); final train error {log[-1][2]:.3f} deg")
    return 0


def cmd_eval(args) -> int:
    arch = models.peek_arch(args.weights)
    spec = models.build_arch(arch)
    params = models.load_weights(spec, args.weights)
    mode = args.mode or ("dual" if spec.in_channels == 2 else "left-only")
    channels = 2 if mode == "dual" else 1
    if channels != spec.in_channels:
        raise ValueError(f"mode '{mode}' provides {channels} channel(s); "
                         f"'{arch}' expects {spec.in_channels}")
    frames = data.load_manifest(args.data)
    if args.person:
        frames = [f for f in frames if f.person_id == args.person]
        if not frames:
            raise data.DatasetError(f"person '{args.person}' not in dataset")
    target, filt = (args.degrade, args.filter) if args.degrade else (None, args.filter)
    result = training.evaluate(frames, spec, params, mode, target, filt)
    doc = {
        "arch": arch,
        "weights": str(args.weights),
        "mode": mode,
        **result,
    }
    print(f"{result['condition']}: angular {result['mean_angular_error_deg']:.3f} deg, "
          f"euclidean {result['mean_euclidean_error_deg']:.3f} deg over {result['count']} samples")
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return 0


def cmd_loocv(args) -> int:
    config = _load_config(args)
    frames = data.load_manifest(args.data)
    reports, _ = training.run_loocv(frames, config, conditions=(_eval_condition(args),),
                                    jobs=args.jobs)
    report = reports[0]
    report.save(args.report_out)
    if not args.no_figures:
        reporting.render_fold_errors(report, Path(args.report_out).with_suffix(".png"))
    overall = report.overall()
    for fold in report.folds:
        print(f"fold {fold.held_out}: {fold.mean_angular_error_deg:.3f} deg "
              f"({fold.count} samples, {fold.wall_seconds:.1f}s)")
    print(f"overall: angular {overall['mean_angular_error_deg']:.3f} deg, "
          f"euclidean {overall['mean_euclidean_error_deg']:.3f} deg")
    return 0


def cmd_count(args) -> int:
    spec = models.build_arch(args.arch, args.width_scale)
    report = models.count_cost(spec)
    print(f"{spec.name} (input {spec.in_channels}x{models.INPUT_HEIGHT}x{models.INPUT_WIDTH})")
    header = f"{'layer':<14}{'kind':<12}{'output':<16}{'params':>12}{'MACs':>14}{'rf':>5}"
    print(header)
    print("-" * len(header))
    for lc in report.layers:
        shape = "x".join(str(d) for d in lc.out_shape)
        print(f"{lc.name:<14}{lc.kind:<12}{shape:<16}{lc.params:>12,}{lc.macs:>14,}"
              f"{lc.receptive_field:>5}")
    print("-" * len(header))
    print(f"{'total':<42}{report.total_params:>12,}{report.total_macs:>14,}")
    return 0


def cmd_bench(args) -> int:
    arch = models.peek_arch(args.weights)
    spec = models.build_arch(arch)
    params = models.load_weights(spec, args.weights)
    rng = np.random.default_rng(args.seed or 0)
    x = rng.uniform(-0.5, 0.5, (1, spec.in_channels, models.INPUT_HEIGHT,
                                models.INPUT_WIDTH)).astype(np.float32)
    pose = rng.uniform(-0.4, 0.4, (1, 2)).astype(np.float32)
    warmup = max(1, args.iterations // 10)
    for _ in range(warmup):
        models.forward(spec, params, x, pose)
    samples_ms = np.empty(args.iterations)
    for i in range(args.iterations):
        start = time.perf_counter()
        models.forward(spec, params, x, pose)
        samples_ms[i] = (time.perf_counter() - start) * 1e3
    stats = {
        "arch": arch,
        "iterations": args.iterations,
        "warmup": warmup,
        "mean_ms": float(np.mean(samples_ms)),
        "median_ms": float(np.median(samples_ms)),
        "p95_ms": float(np.percentile(samples_ms, 95)),
    }
    print(f"{arch}: batch-1 forward over {args.iterations} iterations: "
          f"mean {stats['mean_ms']:.3f} ms, median {stats['median_ms']:.3f} ms, "
          f"p95 {stats['p95_ms']:.3f} ms")
    if args.report_out:
        Path(args.report_out).write_text(json.dumps(stats, indent=2) + "\n",
                                         encoding="utf-8")
        if not args.no_figures:
            reporting.render_latency_hist(samples_ms, stats,
                                          Path(args.report_out).with_suffix(".png"))
    return 0


def cmd_gradcheck(args) -> int:
    dtype = np.float32 if args.bits == 32 else np.float64
    all_ok = True
    for seed in range(args.seed, args.seed + args.seeds):
        spec = models.build_arch(args.arch, args.width_scale)
        report = models.finite_diff_check_network(
            spec, seed=seed, dtype=dtype, corrupt_block=args.corrupt)
        print(f"{args.arch} @x{args.width_scale} seed {seed} "
              f"(step {report.step:g}, tol {report.tolerance:g}):")
        for line in report.lines():
            print(f"  {line}")
        all_ok &= report.passed
    print("gradient check:", "PASS" if all_ok else "FAIL")
    return 0 if all_ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazenet",
        description="Train and benchmark compact dual-eye gaze regression CNNs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic eye-pair dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--persons", type=int, required=True)
    p.add_argument("--frames", type=int, required=True, help="frames per person")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    def add_train_flags(p):
        p.add_argument("--config", help="JSON file mirroring the training config")
        p.add_argument("--arch", choices=models.ARCH_NAMES)
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=INPUT_MODES)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--learning-rate", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--no-augment", action="store_true",
                       help="disable resolution augmentation")

    p = sub.add_parser("train", help="train with one person held out")
    p.add_argument("--data", nargs="+", required=True, help="manifest file(s)")
    p.add_argument("--holdout", required=True, help="person id to exclude")
    p.add_argument("--weights-out", required=True)
    p.add_argument("--log-out", required=True)
    add_train_flags(p)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved weights on a dataset")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--person", help="restrict to one person's frames")
    p.add_argument("--mode", choices=INPUT_MODES)
    p.add_argument("--degrade", type=_parse_size,
                   help="degrade eye images to WxH before evaluation")
    p.add_argument("--filter", choices=FILTERS, default="lanczos3")
    p.add_argument("--report-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loocv", help="person-exclusive leave-one-out run")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--report-out", required=True)
    add_train_flags(p)
    p.add_argument("--degrade", type=_parse_size)
    p.add_argument("--filter", choices=FILTERS, default="lanczos3")
    p.add_argument("--jobs", type=int, default=1, help="concurrent folds")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_loocv)

    p = sub.add_parser("count", help="parameter / MAC / receptive-field table")
    p.add_argument("--arch", choices=models.ARCH_NAMES, required=True)
    p.add_argument("--width-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("bench", help="single-sample forward latency")
    p.add_argument("--weights", required=True)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report-out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--arch", choices=models.ARCH_NAMES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds to run")
    p.add_argument("--width-scale", type=float, default=0.25)
    p.add_argument("--bits", type=int, choices=(32, 64), default=32)
    p.add_argument("--corrupt", metavar="BLOCK",
                   help="sign-flip one analytic gradient block (negative control)")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "iterations", 1) < 1:
            raise ValueError("iterations must be >= 1")
        return args.func(args)
    except (ValueError, OSError, models.SpecError, models.WeightFormatError,
            data.DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
