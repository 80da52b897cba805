"""Synapse-formation engine: stack-driven pair descent over the octree.

Pairs of (axon-side node, dendrite-side node) are processed from a stack.
Inner axon nodes fan out to their children, and each child draws one child
of the current dendrite node with probability proportional to the Gaussian
attraction between the two boxes.  When both sides reach leaves, all vacant
axons of the axon neuron issue a single connection request to the dendrite
neuron.  Dendrite neurons later accept at most their vacancy among the
competing requests.

Attraction between two boxes is evaluated directly when both vacancy counts
are small, and through a truncated source-centered or target-centered
expansion otherwise.  A box is represented either by its actual neurons
(when its vacant count is below the dispatch threshold for its side) or by
the centroid pseudo-particles of its up-to-eight children.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import kernel, streams
from .kernel import KernelParams, PointSet


class DispatchMethod(Enum):
    DIRECT = "direct"
    HERMITE = "hermite"
    TAYLOR = "taylor"


@dataclass(frozen=True)
class DispatchThresholds:
    c1: int = 70
    c2: int = 70

    def __post_init__(self):
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError("dispatch thresholds must be at least 1")


@dataclass(frozen=True)
class SynapseRequest:
    axon_neuron: int
    dendrite_neuron: int
    count: int


@dataclass(frozen=True)
class SynapseResponse:
    axon_neuron: int
    dendrite_neuron: int
    requested: int
    accepted: int


@dataclass
class WalkStats:
    choose_target_calls: int = 0
    choose_source_calls: int = 0
    method_counts: dict = field(default_factory=lambda: {m: 0 for m in DispatchMethod})
    expansion_seconds: float = 0.0
    fallback_choices: int = 0


def dispatch_method(axon_count: int, dendrite_count: int,
                    thresholds: DispatchThresholds) -> DispatchMethod:
    """Pick the evaluation path from the two vacant counts.

    Small counts on both sides are cheapest to evaluate directly; a large
    axon side clusters the evaluation points (target-centered series), and a
    large dendrite side with a small axon side clusters the sources
    (source-centered series).
    """
    if axon_count >= thresholds.c1:
        return DispatchMethod.TAYLOR
    if dendrite_count >= thresholds.c2:
        return DispatchMethod.HERMITE
    return DispatchMethod.DIRECT


# --- node views -----------------------------------------------------------
#
# The walk operates on a small duck-typed node interface so the same code
# descends local octrees, the shared top, and lazily fetched remote nodes:
#   path, level, is_leaf, axons_sum, dendrites_sum, axons_centroid,
#   dendrites_centroid, vacancy_children(side), actual_points(side),
#   pseudo_points(side), neuron_id, leaf_vacancy(side)

AXONS = "axons"
DENDRITES = "dendrites"


class LocalNodeView:
    __slots__ = ("tree", "node")

    def __init__(self, tree, node):
        self.tree = tree
        self.node = node

    @property
    def path(self):
        return self.node.path

    @property
    def level(self):
        return self.node.level

    @property
    def is_leaf(self):
        return self.node.is_leaf

    @property
    def axons_sum(self):
        return self.node.axons_sum

    @property
    def dendrites_sum(self):
        return self.node.dendrites_sum

    @property
    def axons_centroid(self):
        return self.node.axons_centroid

    @property
    def dendrites_centroid(self):
        return self.node.dendrites_centroid

    @property
    def neuron_id(self):
        slot = self.node.leaf_slot
        return int(self.tree.ids[slot])

    def side_sum(self, side):
        return self.axons_sum if side == AXONS else self.dendrites_sum

    def leaf_vacancy(self, side):
        slot = self.node.leaf_slot
        arr = self.tree.vac_axons if side == AXONS else self.tree.vac_dendrites
        return int(arr[slot])

    def vacancy_children(self, side):
        return [LocalNodeView(self.tree, c) for c in self.node.present_children()
                if (c.axons_sum if side == AXONS else c.dendrites_sum) > 0]

    def actual_points(self, side):
        # memoized on the tree; vacancy refreshes clear it
        cache = self.tree.points_cache
        key = (self.node.path, side)
        cached = cache.get(key)
        if cached is None:
            _, positions, va, vd = self.tree.points_below(self.node)
            vac = va if side == AXONS else vd
            mask = vac > 0
            cached = (positions[mask], vac[mask].astype(np.float64))
            cache[key] = cached
        return cached

    def pseudo_points(self, side):
        return _children_pseudo_points(self.vacancy_children(side), side)


def _children_pseudo_points(children, side):
    positions = np.array([
        (c.axons_centroid if side == AXONS else c.dendrites_centroid) for c in children
    ], dtype=np.float64)
    weights = np.array([c.side_sum(side) for c in children], dtype=np.float64)
    return positions, weights


def representation(view, side: str, threshold: int):
    """Evaluation points standing in for a node on one element side.

    Leaves are their neuron; nodes with fewer vacant elements than the
    dispatch threshold are their actual neurons; heavier nodes are the
    centroid pseudo-particles of their children.  Point counts stay bounded
    by max(threshold - 1, 8) either way.
    """
    if view.is_leaf:
        centroid = view.axons_centroid if side == AXONS else view.dendrites_centroid
        return centroid[None, :], np.array([float(view.side_sum(side))])
    if view.side_sum(side) < threshold:
        return view.actual_points(side)
    return view.pseudo_points(side)


def _gauss_field(s_pos, s_w, t_pos, delta):
    # tiny evaluations dominate the walk; plain loops beat array dispatch there
    if len(t_pos) * len(s_pos) <= 24:
        sp = s_pos.tolist()
        sw = s_w.tolist()
        out = np.empty(len(t_pos))
        for i, (tx, ty, tz) in enumerate(t_pos.tolist()):
            acc = 0.0
            for (sx, sy, sz), w in zip(sp, sw):
                dx = tx - sx
                dy = ty - sy
                dz = tz - sz
                acc += w * math.exp(-(dx * dx + dy * dy + dz * dz) / delta)
            out[i] = acc
        return out
    diff = t_pos[:, None, :] - s_pos[None, :, :]
    d2 = (diff * diff).sum(-1)
    return np.exp(-d2 / delta) @ s_w


def _eval_attraction(t_pos, t_w, t_centroid, dendrite_view, method,
                     thresholds, params, stats):
    s_pos, s_w = representation(dendrite_view, DENDRITES, thresholds.c2)
    if stats is not None:
        stats.method_counts[method] += 1
    if method is DispatchMethod.DIRECT:
        u = _gauss_field(s_pos, s_w, t_pos, params.delta)
    elif method is DispatchMethod.HERMITE:
        t0 = time.perf_counter()
        sources = PointSet(s_pos, s_w)
        coeffs = kernel.hermite_expand(sources, dendrite_view.dendrites_centroid, params)
        u = kernel.hermite_evaluate(coeffs, t_pos, params)
        if stats is not None:
            stats.expansion_seconds += time.perf_counter() - t0
    else:
        t0 = time.perf_counter()
        sources = PointSet(s_pos, s_w)
        coeffs = kernel.taylor_expand(sources, t_centroid, params)
        u = kernel.taylor_evaluate(coeffs, t_pos, params)
        if stats is not None:
            stats.expansion_seconds += time.perf_counter() - t0
    return max(float(t_w @ u), 0.0)


def attraction(axon_view, dendrite_view, thresholds: DispatchThresholds,
               params: KernelParams, stats: Optional[WalkStats] = None,
               method: Optional[DispatchMethod] = None) -> float:
    """Total attraction of one dendrite-side box on one axon-side box.

    Sum over axon-side evaluation points, weighted by vacant-axon counts, of
    the Gaussian field sourced by the dendrite-side representation.  Clamped
    at zero: truncated series may dip marginally negative.  ``method``
    overrides the count-based dispatch (sensitivity checks only).
    """
    if method is None:
        method = dispatch_method(axon_view.axons_sum, dendrite_view.dendrites_sum,
                                 thresholds)
    t_pos, t_w = representation(axon_view, AXONS, thresholds.c1)
    return _eval_attraction(t_pos, t_w, axon_view.axons_centroid, dendrite_view,
                            method, thresholds, params, stats)


def _weighted_pick(candidates, weights, u: float):
    total = sum(weights)
    acc = 0.0
    threshold = u * total
    for cand, w in zip(candidates, weights):
        acc += w
        if threshold < acc:
            return cand
    return candidates[-1]


def choose_target(axon_node, dendrite_node, thresholds: DispatchThresholds,
                  params: KernelParams, rng,
                  stats: Optional[WalkStats] = None):
    """Draw one child of the dendrite node, biased by attraction to the axon node.

    Falls back to a vacancy-proportional draw when every candidate
    attraction underflows to zero.
    """
    candidates = dendrite_node.vacancy_children(DENDRITES)
    if not candidates:
        raise ValueError("dendrite node has no children with vacant dendrites")
    if stats is not None:
        stats.choose_target_calls += 1
    if len(candidates) == 1:
        return candidates[0]
    t_pos, t_w = representation(axon_node, AXONS, thresholds.c1)
    axon_sum = axon_node.axons_sum
    weights = [
        _eval_attraction(t_pos, t_w, axon_node.axons_centroid, c,
                         dispatch_method(axon_sum, c.dendrites_sum, thresholds),
                         thresholds, params, stats)
        for c in candidates]
    u = rng.random()
    if sum(weights) > 0.0:
        return _weighted_pick(candidates, weights, u)
    if stats is not None:
        stats.fallback_choices += 1
    return _weighted_pick(candidates, [c.dendrites_sum for c in candidates], u)


def choose_source(dendrite_node, axon_node, thresholds: DispatchThresholds,
                  params: KernelParams, rng,
                  stats: Optional[WalkStats] = None):
    """Mirror of choose_target: draw one child of the axon node for a dendrite node."""
    candidates = axon_node.vacancy_children(AXONS)
    if not candidates:
        raise ValueError("axon node has no children with vacant axons")
    if stats is not None:
        stats.choose_source_calls += 1
    if len(candidates) == 1:
        return candidates[0]
    t_pos, t_w = representation(dendrite_node, DENDRITES, thresholds.c2)
    weights = [_source_attraction(t_pos, t_w, dendrite_node, c, thresholds,
                                  params, stats)
               for c in candidates]
    u = rng.random()
    if sum(weights) > 0.0:
        return _weighted_pick(candidates, weights, u)
    if stats is not None:
        stats.fallback_choices += 1
    return _weighted_pick(candidates, [c.axons_sum for c in candidates], u)


def _source_attraction(t_pos, t_w, dendrite_view, axon_view, thresholds,
                       params, stats):
    """Role-swapped attraction: field of an axon-side box at dendrite points."""
    method = dispatch_method(axon_view.axons_sum, dendrite_view.dendrites_sum, thresholds)
    s_pos, s_w = representation(axon_view, AXONS, thresholds.c1)
    if stats is not None:
        stats.method_counts[method] += 1
    if method is DispatchMethod.DIRECT:
        u = _gauss_field(s_pos, s_w, t_pos, params.delta)
    elif method is DispatchMethod.HERMITE:
        t0 = time.perf_counter()
        coeffs = kernel.hermite_expand(PointSet(s_pos, s_w),
                                       axon_view.axons_centroid, params)
        u = kernel.hermite_evaluate(coeffs, t_pos, params)
        if stats is not None:
            stats.expansion_seconds += time.perf_counter() - t0
    else:
        t0 = time.perf_counter()
        coeffs = kernel.taylor_expand(PointSet(s_pos, s_w),
                                      dendrite_view.dendrites_centroid, params)
        u = kernel.taylor_evaluate(coeffs, t_pos, params)
        if stats is not None:
            stats.expansion_seconds += time.perf_counter() - t0
    return max(float(t_w @ u), 0.0)


class KeyedDraws:
    """Per-decision stream factory keyed by (seed, update, context)."""

    def __init__(self, seed: int, update_index: int):
        self.seed = seed
        self.update_index = update_index

    def __call__(self, tag: str, path: tuple, level: int) -> streams.KeyedStream:
        return streams.KeyedStream(self.seed, tag, self.update_index, path, level)


def init_stack(subtree_roots, global_root, thresholds: DispatchThresholds,
               params: KernelParams, draws: Callable,
               stats: Optional[WalkStats] = None) -> list:
    """Seed the walk: pair each owned subtree root with a dendrite node at its level.

    The subtree root stays fixed while the dendrite side descends from the
    global root, one attraction-weighted draw per level.  An empty dendrite
    side anywhere yields an empty stack (no formation this update).

    Draws are keyed by (axon path, dendrite level), the same scheme the walk
    itself uses, so the stack a rank seeds for its subtree root is the stack
    a single-rank walk would have produced for that box.
    """
    if global_root.dendrites_sum == 0:
        return []
    pairs = []
    for root in subtree_roots:
        if root.axons_sum == 0:
            continue
        target = global_root
        while target.level < root.level and not target.is_leaf:
            rng = draws("walk", root.path, target.level)
            target = choose_target(root, target, thresholds, params, rng, stats)
        pairs.append((root, target))
    return pairs


def find_synapses(stack: list, thresholds: DispatchThresholds, params: KernelParams,
                  draws: Callable, stats: Optional[WalkStats] = None,
                  allow_self: bool = True) -> list[SynapseRequest]:
    """Process pair stack to leaf pairs and emit one request per axon leaf.

    All vacant axons of one neuron share a single descent, so they request
    the same dendrite neuron in one record.
    """
    requests: list[SynapseRequest] = []
    stack = list(stack)
    while stack:
        axon_node, dendrite_node = stack.pop()
        if axon_node.axons_sum == 0 or dendrite_node.dendrites_sum == 0:
            continue
        if axon_node.is_leaf and dendrite_node.is_leaf:
            if not allow_self and axon_node.neuron_id == dendrite_node.neuron_id:
                continue
            requests.append(SynapseRequest(axon_node.neuron_id,
                                           dendrite_node.neuron_id,
                                           axon_node.leaf_vacancy(AXONS)))
        elif not axon_node.is_leaf:
            for child in axon_node.vacancy_children(AXONS):
                if dendrite_node.is_leaf:
                    stack.append((child, dendrite_node))
                else:
                    rng = draws("walk", child.path, dendrite_node.level)
                    chosen = choose_target(child, dendrite_node, thresholds,
                                           params, rng, stats)
                    stack.append((child, chosen))
        else:
            rng = draws("walk", axon_node.path, dendrite_node.level)
            chosen = choose_target(axon_node, dendrite_node, thresholds,
                                   params, rng, stats)
            stack.append((axon_node, chosen))
    return requests


def resolve_conflicts(requests: list[SynapseRequest], vacant_dendrites,
                      rng) -> list[SynapseResponse]:
    """Per dendrite neuron, accept at most its vacancy among the requests.

    With total demand r and vacancy v, all requests are accepted when
    r <= v; otherwise a uniformly random sub-multiset of size v is accepted,
    so multi-count requests may be partially accepted.  ``rng`` is either a
    Generator or a callable dendrite_id -> Generator (for runs that must not
    depend on resolution order).
    """
    by_dendrite: dict[int, list[SynapseRequest]] = {}
    for req in sorted(requests, key=lambda r: (r.axon_neuron, r.dendrite_neuron)):
        by_dendrite.setdefault(req.dendrite_neuron, []).append(req)

    responses = []
    for dendrite in sorted(by_dendrite):
        group = by_dendrite[dendrite]
        if callable(vacant_dendrites):
            capacity = int(vacant_dendrites(dendrite))
        else:
            capacity = int(vacant_dendrites[dendrite])
        total = sum(r.count for r in group)
        if total <= capacity:
            accepted = [r.count for r in group]
        else:
            gen = rng(dendrite) if callable(rng) else rng
            tokens = np.repeat(np.arange(len(group)), [r.count for r in group])
            keep = gen.choice(len(tokens), size=capacity, replace=False)
            counts = np.bincount(tokens[keep], minlength=len(group))
            accepted = counts.tolist()
        for req, acc in zip(group, accepted):
            responses.append(SynapseResponse(req.axon_neuron, req.dendrite_neuron,
                                             req.count, int(acc)))
    return responses
