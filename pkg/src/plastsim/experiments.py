"""Measurement harnesses: expansion accuracy, scaling, and engine comparison.

The accuracy experiment samples representative box pairs from a built tree
(uniformly over tree levels >= 2) and tabulates percent deviations of both
truncated expansions against the exact field, per cutoff.  The scaling
experiment times connectivity updates over a size ladder and reports
per-phase statistics, size-doubling ratios, and the spread over repetitions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernel, streams
from .config import RunConfig
from .simulation import Simulation

ACCURACY_SCHEME = ("box pairs sampled uniformly over tree levels 2..max among "
                   "inner nodes with nonzero vacancy on the needed side "
                   "(single-neuron boxes are exact by construction and never "
                   "expanded by the walk); deviation is the max percent error "
                   "over the target box's neurons")


@dataclass
class AccuracyStats:
    kind: str
    cutoff: tuple
    samples: int
    max_pct: float
    median_pct: float
    q1_pct: float
    q3_pct: float
    outliers: int  # above q3 + 1.5*IQR


def _instance_tree(cfg: RunConfig, vac_low: int = 1, vac_high: int = 10):
    """A placed instance with seeded integer vacancies on both sides."""
    from .octree import Box, Octree
    from .simulation import place_neurons

    ids, positions = place_neurons(cfg)
    gen = streams.generator(cfg.seed, "instance-vacancies")
    va = gen.integers(vac_low, vac_high + 1, size=cfg.n)
    vd = gen.integers(vac_low, vac_high + 1, size=cfg.n)
    domain = Box((0.0, 0.0, 0.0), cfg.resolved_domain_side())
    tree = Octree.build(ids, positions, va, vd, domain)
    return tree


def accuracy_experiment(cfg: RunConfig, samples: int = 1200,
                        max_order: int = 5) -> list[AccuracyStats]:
    """Percent deviation of both expansions vs the exact field, per cutoff."""
    tree = _instance_tree(cfg)
    kp = cfg.kernel_params()
    by_level: dict[int, list] = {}
    for node in tree.nodes_by_path.values():
        if node.level >= 2 and not node.is_leaf:
            by_level.setdefault(node.level, []).append(node)
    levels = sorted(by_level)
    if not levels:
        raise ValueError("tree too shallow; need inner nodes at level >= 2")

    gen = streams.generator(cfg.seed, "accuracy-sampling")
    deviations = {(kind, q): [] for q in range(max_order + 1)
                  for kind in ("hermite", "taylor")}
    drawn = 0
    while drawn < samples:
        level = levels[gen.integers(len(levels))]
        nodes = by_level[level]
        source = nodes[gen.integers(len(nodes))]
        target = nodes[gen.integers(len(nodes))]
        if source.dendrites_sum == 0 or target.axons_sum == 0:
            continue
        _, s_pos, _, s_vd = tree.points_below(source)
        s_mask = s_vd > 0
        sources = kernel.PointSet(s_pos[s_mask], s_vd[s_mask].astype(float))
        _, t_pos, t_va, _ = tree.points_below(target)
        t_pos = t_pos[t_va > 0]
        exact = kernel.direct_field(sources, t_pos, kp)
        scale = np.abs(exact)
        for q in range(max_order + 1):
            kq = replace(kp, cutoff=(q, q, q))
            herm = kernel.hermite_evaluate(
                kernel.hermite_expand(sources, source.dendrites_centroid, kq),
                t_pos, kq)
            tay = kernel.taylor_evaluate(
                kernel.taylor_expand(sources, target.axons_centroid, kq),
                t_pos, kq)
            deviations[("hermite", q)].append(
                float((np.abs(herm - exact) / scale).max() * 100.0))
            deviations[("taylor", q)].append(
                float((np.abs(tay - exact) / scale).max() * 100.0))
        drawn += 1

    stats = []
    for (kind, q), values in sorted(deviations.items()):
        arr = np.array(values)
        q1, med, q3 = np.percentile(arr, [25, 50, 75])
        fence = q3 + 1.5 * (q3 - q1)
        stats.append(AccuracyStats(kind, (q, q, q), len(arr), float(arr.max()),
                                   float(med), float(q1), float(q3),
                                   int((arr > fence).sum())))
    return stats


def write_accuracy(path: str, stats: list[AccuracyStats]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# sampling: {ACCURACY_SCHEME}\n")
        fh.write("kind,cutoff,samples,max_pct,median_pct,q1_pct,q3_pct,outliers\n")
        for s in stats:
            fh.write(f"{s.kind},{s.cutoff[0]},{s.samples},{s.max_pct!r},"
                     f"{s.median_pct!r},{s.q1_pct!r},{s.q3_pct!r},{s.outliers}\n")


@dataclass
class ScalingPoint:
    n: int
    engine: str
    phase: str
    min_s: float
    avg_s: float
    max_s: float
    cv: float
    choose_calls: int


def _single_update_config(base: RunConfig, n: int, engine: str, rep: int) -> RunConfig:
    return replace(base, n=n, engine=engine, seed=base.seed + rep,
                   steps=1, initial_axons=1.0, initial_dendrites=1.0,
                   placement="grid", domain_side=None, grid_side_count=None)


def time_one_update(cfg: RunConfig) -> tuple[dict, int]:
    """Wall time per phase for one connectivity update on a fresh instance."""
    sim = Simulation(cfg)
    sim.connectivity_update()
    phases = {}
    for phase in ("connectivity_update", "find_targets", "expansions"):
        phases[phase] = sum(rt.phase_seconds[phase][-1] for rt in sim.ranks)
    stats = sim._total_stats()
    return phases, stats.choose_target_calls + stats.choose_source_calls


def scaling_experiment(base: RunConfig, sizes: list[int], reps: int = 3,
                       engine: str = "fmm") -> list[ScalingPoint]:
    """Repeat single connectivity updates over a size ladder and aggregate."""
    points = []
    for n in sizes:
        per_phase: dict[str, list[float]] = {}
        calls = 0
        for rep in range(reps):
            phases, calls = time_one_update(_single_update_config(base, n, engine, rep))
            for phase, seconds in phases.items():
                per_phase.setdefault(phase, []).append(seconds)
        for phase, series in per_phase.items():
            avg = sum(series) / len(series)
            cv = (float(np.std(series)) / avg) if avg > 0 else 0.0
            points.append(ScalingPoint(n, engine, phase, min(series), avg,
                                       max(series), cv, calls))
    return points


def doubling_ratios(points: list[ScalingPoint], phase: str) -> list[float]:
    """avg-time ratios between consecutive sizes (sizes assumed doubling)."""
    series = sorted((p.n, p.avg_s) for p in points if p.phase == phase)
    return [b / a for (_, a), (_, b) in zip(series, series[1:]) if a > 0]


def write_scaling(path: str, points: list[ScalingPoint]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n,engine,phase,min_s,avg_s,max_s,cv,choose_calls\n")
        for p in points:
            fh.write(f"{p.n},{p.engine},{p.phase},{p.min_s!r},{p.avg_s!r},"
                     f"{p.max_s!r},{p.cv!r},{p.choose_calls}\n")


@dataclass
class CompareResult:
    engines: list[str]
    seeds: list[int]
    totals: dict          # (engine, seed) -> final synapse total
    max_calcium_gap: float  # worst |mean difference| between engines, any update


def compare_experiment(base: RunConfig, engine_names: list[str],
                       seeds: list[int]) -> CompareResult:
    """Run the same configuration under several engines and seeds."""
    curves = {}
    totals = {}
    for engine in engine_names:
        for seed in seeds:
            cfg = replace(base, engine=engine, seed=seed)
            result = Simulation(cfg).run()
            curves[(engine, seed)] = np.array([m.calcium_mean for m in result.metrics])
            totals[(engine, seed)] = result.metrics[-1].synapses_total
    gap = 0.0
    for seed in seeds:
        for i, a in enumerate(engine_names):
            for b in engine_names[i + 1:]:
                gap = max(gap, float(np.abs(curves[(a, seed)] - curves[(b, seed)]).max()))
    return CompareResult(engine_names, seeds, totals, gap)
