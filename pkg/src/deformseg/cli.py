"""Command-line entry points: gradcheck, train, eval, ablate, bench.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  All commands are
deterministic given the seeds in the config / flags.  Commands that write
into an output directory also render PNG figures next to the delimited
output unless --no-figures is passed.
"""

from __future__ import annotations

import os


def _cap_threads() -> None:
    """Honor AGILE_THREADS before numpy's thread pools are configured."""
    cap = os.environ.get("AGILE_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


_cap_threads()

import argparse  # noqa: E402
import sys  # noqa: E402
from dataclasses import replace  # noqa: E402
from pathlib import Path  # noqa: E402

from .bench import VARIANTS as BENCH_VARIANTS  # noqa: E402
from .bench import bench_attention, to_csv  # noqa: E402
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: E402
from .config import RunConfig, load_config, write_config  # noqa: E402
from .data import make_split  # noqa: E402
from .errors import DeformsegError  # noqa: E402
from .gradcheck import CHECKS, ops_for_module, run_checks  # noqa: E402
from .network import Network, build  # noqa: E402
from .training import evaluate, train  # noqa: E402


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deformseg",
        description="Deformable-attention segmentation: training, evaluation, "
                    "gradient checking and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="central-difference checks for named ops")
    p.add_argument("--module", default=None, help="restrict to one module's ops")
    p.add_argument("--op", default=None, help="check a single op (default: all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=5)

    p = sub.add_parser("train", help="train on synthetic data and write artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the seeded test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("ablate", help="train design variants and compare mean DSC")
    p.add_argument("--config", required=True)
    p.add_argument("--axis", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("bench", help="attention wall-time scaling measurements")
    p.add_argument("--op", default="nmsa,full",
                   help="comma list of variants (nmsa, full, wmsa, dmsa)")
    p.add_argument("--sizes", default="32x32,64x32,64x64",
                   help="comma list of grid extents, e.g. 32x32,64x64")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--clock", choices=("wall", "cpu"), default="wall",
                   help="cpu ignores preemption on shared machines")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--no-figures", action="store_true")
    return parser


def _training_run(cfg: RunConfig) -> tuple[Network, "TrainLog", "MetricsSummary"]:
    net = build(cfg.model, seed=cfg.train.seed)
    train_samples = make_split(cfg.data.seed, "train", cfg.data.train_count,
                               cfg.data.num_classes, cfg.data.image_size,
                               cfg.data.image_size)
    log = train(net, train_samples, cfg.train)
    test_samples = make_split(cfg.data.seed, "test", cfg.data.test_count,
                              cfg.data.num_classes, cfg.data.image_size,
                              cfg.data.image_size)
    summary = evaluate(net, test_samples)
    return net, log, summary


def _cmd_gradcheck(args, parser) -> int:
    if args.trials < 1:
        parser.error(f"--trials must be >= 1, got {args.trials}")
    if args.op is not None:
        if args.op not in CHECKS:
            parser.error(f"unknown op {args.op!r}; available: {', '.join(sorted(CHECKS))}")
        ops = [args.op]
    else:
        ops = ops_for_module(args.module)
        if not ops:
            modules = sorted({mod for mod, _ in CHECKS.values()})
            parser.error(f"unknown module {args.module!r}; available: {', '.join(modules)}")
    results = run_checks(ops, seed=args.seed, trials=args.trials)
    worst_by_op: dict[str, dict[str, float]] = {}
    for r in results:
        acc = worst_by_op.setdefault(r.op, {})
        for group, err in r.worst.items():
            acc[group] = max(acc.get(group, 0.0), err)
    all_passed = all(r.passed for r in results)
    for op in ops:
        tol = next(r.tol for r in results if r.op == op)
        passed = all(r.passed for r in results if r.op == op)
        detail = " ".join(f"{g}={e:.3e}" for g, e in worst_by_op[op].items())
        print(f"{'PASS' if passed else 'FAIL'} {op} (tol {tol:g}): {detail}")
    return 0 if all_passed else 1


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net, log, summary = _training_run(cfg)
    (out / "config.txt").write_text(write_config(cfg), encoding="utf-8")
    (out / "log.csv").write_text(log.to_csv(), encoding="utf-8")
    save_checkpoint(out / "checkpoint.agfk", net.state_dict())
    (out / "metrics.txt").write_text(summary.format(), encoding="utf-8")
    if not args.no_figures:
        from . import figures
        figures.save_training_curves(log, out / "training_curves.png")
        figures.save_metrics_bars(summary, out / "metrics.png")
    sys.stdout.write(summary.format())
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    net = build(cfg.model, seed=cfg.train.seed)
    net.load_state_dict(load_checkpoint(args.checkpoint))
    test_samples = make_split(cfg.data.seed, "test", cfg.data.test_count,
                              cfg.data.num_classes, cfg.data.image_size,
                              cfg.data.image_size)
    summary = evaluate(net, test_samples)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.txt").write_text(summary.format(), encoding="utf-8")
        if not args.no_figures:
            from . import figures
            figures.save_metrics_bars(summary, out / "metrics.png")
    sys.stdout.write(summary.format())
    return 0


def _cmd_ablate(args, parser) -> int:
    if args.axis not in ("attention", "posenc", "embedding"):
        parser.error(f"unknown axis {args.axis!r}; expected attention, posenc or embedding")
    cfg = load_config(args.config)
    values = getattr(cfg.ablation, args.axis)
    rows: list[tuple[str, float]] = []
    for value in values:
        model = replace(cfg.model, **{args.axis: value})
        variant_cfg = replace(cfg, model=model)
        _, _, summary = _training_run(variant_cfg)
        rows.append((value, summary.dsc_mean))
    csv = "variant,dsc\n" + "".join(f"{name},{dsc:.12g}\n" for name, dsc in rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablation_{args.axis}.csv").write_text(csv, encoding="utf-8")
        if not args.no_figures:
            from . import figures
            figures.save_ablation_bars(rows, out / f"ablation_{args.axis}.png")
    sys.stdout.write(csv)
    return 0


def _parse_sizes(raw: str, parser) -> list[tuple[int, int]]:
    sizes = []
    for item in raw.split(","):
        parts = item.lower().strip().split("x")
        if len(parts) != 2 or not all(p.isdigit() for p in parts):
            parser.error(f"bad size {item!r}; expected HxW like 32x32")
        sizes.append((int(parts[0]), int(parts[1])))
    return sizes


def _cmd_bench(args, parser) -> int:
    variants = tuple(v.strip() for v in args.op.split(","))
    for v in variants:
        if v not in BENCH_VARIANTS:
            parser.error(f"unknown variant {v!r}; available: {', '.join(BENCH_VARIANTS)}")
    sizes = _parse_sizes(args.sizes, parser)
    rows = bench_attention(sizes, variants=variants, reps=args.reps, seed=args.seed,
                           clock=args.clock)
    csv = to_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "timings.csv").write_text(csv, encoding="utf-8")
        if not args.no_figures:
            from . import figures
            figures.save_bench_scaling(rows, out / "scaling.png")
    sys.stdout.write(csv)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return _cmd_gradcheck(args, parser)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "ablate":
            return _cmd_ablate(args, parser)
        if args.command == "bench":
            return _cmd_bench(args, parser)
    except DeformsegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
