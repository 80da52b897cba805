"""Command-line frontend: run, accuracy, scaling, and compare subcommands."""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import ConfigError, RunConfig, load_config
from . import experiments
from .simulation import run_simulation


def _load(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "engine", None) is not None:
        overrides["engine"] = args.engine
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if args.config:
        return load_config(args.config, **overrides)
    return RunConfig(**overrides) if overrides else RunConfig()


def _maybe_plot(out_dir: str, metrics_csv: str) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise SystemExit(f"--plot requires matplotlib: {exc}")
    import csv

    steps, calcium, synapses = [], [], []
    with open(metrics_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            calcium.append(float(row["calcium_mean"]))
            synapses.append(int(row["synapses_total"]))
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    ax1.plot(steps, calcium)
    ax1.set_ylabel("mean calcium")
    ax2.plot(steps, synapses)
    ax2.set_ylabel("total synapses")
    ax2.set_xlabel("activity step")
    fig.tight_layout()
    out = os.path.splitext(metrics_csv)[0] + ".png"
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")


def cmd_run(args) -> int:
    cfg = _load(args)
    out_dir = cfg.out_dir
    result = run_simulation(cfg, out_dir=out_dir)
    last = result.metrics[-1] if result.metrics else None
    print(f"ran n={cfg.n} p={cfg.p} steps={cfg.steps} engine={cfg.engine} "
          f"updates={result.updates}")
    if last:
        print(f"final: calcium_mean={last.calcium_mean:.4f} "
              f"synapses_total={last.synapses_total}")
    print(f"wrote {out_dir}/metrics.csv, timing.csv, network.csv")
    if args.plot:
        _maybe_plot(out_dir, os.path.join(out_dir, "metrics.csv"))
    return 0


def cmd_accuracy(args) -> int:
    cfg = _load(args)
    if args.n is not None:
        cfg = replace(cfg, n=args.n)
    stats = experiments.accuracy_experiment(cfg, samples=args.samples)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "accuracy.csv")
    experiments.write_accuracy(path, stats)
    for s in stats:
        if s.cutoff == cfg.cutoff:
            print(f"{s.kind} cutoff={s.cutoff}: max={s.max_pct:.4f}% "
                  f"median={s.median_pct:.5f}% outliers={s.outliers}")
    print(f"wrote {path}")
    return 0


def cmd_scaling(args) -> int:
    cfg = _load(args)
    sizes = [int(s) for s in args.sizes.split(",")]
    points = experiments.scaling_experiment(cfg, sizes, reps=args.reps,
                                            engine=args.engine or cfg.engine)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "scaling.csv")
    experiments.write_scaling(path, points)
    ratios = experiments.doubling_ratios(points, "connectivity_update")
    print(f"connectivity_update avg-time ratios between sizes: "
          f"{[round(r, 3) for r in ratios]}")
    print(f"wrote {path}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    engine_names = args.engines.split(",")
    seeds = [int(s) for s in args.seeds.split(",")]
    result = experiments.compare_experiment(cfg, engine_names, seeds)
    print(f"engines={engine_names} seeds={seeds}")
    for (engine, seed), total in sorted(result.totals.items()):
        print(f"  {engine} seed={seed}: final synapses={total}")
    print(f"max calcium-mean gap between engines: {result.max_calcium_gap:.5f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plastsim",
        description="Structural-plasticity network simulator with "
                    "octree-accelerated Gaussian synapse search")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulation configuration")
    run.add_argument("--config", help="path to a key = value config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--engine", choices=("direct", "barnes_hut", "fmm"))
    run.add_argument("--out", help="output directory")
    run.add_argument("--plot", action="store_true",
                     help="emit a PNG next to metrics.csv (needs matplotlib)")
    run.set_defaults(func=cmd_run)

    acc = sub.add_parser("accuracy", help="expansion-vs-direct deviation table")
    acc.add_argument("--config")
    acc.add_argument("--seed", type=int)
    acc.add_argument("--out")
    acc.add_argument("--n", type=int, help="instance size (default from config)")
    acc.add_argument("--samples", type=int, default=1200)
    acc.set_defaults(func=cmd_accuracy)

    sca = sub.add_parser("scaling", help="connectivity-update timing ladder")
    sca.add_argument("--config")
    sca.add_argument("--seed", type=int)
    sca.add_argument("--out")
    sca.add_argument("--sizes", default="2048,4096,8192",
                     help="comma-separated neuron counts")
    sca.add_argument("--reps", type=int, default=3)
    sca.add_argument("--engine", choices=("direct", "barnes_hut", "fmm"))
    sca.set_defaults(func=cmd_scaling)

    cmp_ = sub.add_parser("compare", help="same config under several engines")
    cmp_.add_argument("--config")
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--out")
    cmp_.add_argument("--engines", default="fmm,direct")
    cmp_.add_argument("--seeds", default="0")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
