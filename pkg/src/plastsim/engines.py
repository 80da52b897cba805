"""Connectivity engines: exact all-pairs, tree-walk point-to-box, and the
box-to-box pair descent.

All three honor the same contract: given current positions, vacancies, and
a seeded update index, produce the connection requests for one connectivity
update.  The direct engine is the exact oracle (quadratic); the point-to-box
engine lets every vacant axon element walk the tree independently against a
size/distance acceptance parameter; the pair-descent engine shares one walk
per box, which is what makes it linear.
"""

from __future__ import annotations

import math

import numpy as np

from . import streams
from .connectivity import (DispatchThresholds, KeyedDraws, LocalNodeView,
                           SynapseRequest, WalkStats, find_synapses, init_stack)
from .kernel import KernelParams

ENGINE_KINDS = ("direct", "barnes_hut", "fmm")


def parse_engine(name: str) -> str:
    if name not in ENGINE_KINDS:
        raise ValueError(f"unknown engine {name!r}; expected one of {ENGINE_KINDS}")
    return name


def _merge_counts(pairs: dict) -> list[SynapseRequest]:
    return [SynapseRequest(a, d, c) for (a, d), c in sorted(pairs.items())]


def direct_requests(positions: np.ndarray, vacant_axons: np.ndarray,
                    vacant_dendrites: np.ndarray, params: KernelParams,
                    seed: int, update_index: int,
                    allow_self: bool = True) -> list[SynapseRequest]:
    """Exact engine: every vacant axon samples a dendrite from the full kernel.

    Each vacant axon element independently draws neuron j with probability
    proportional to vd_j * exp(-d^2/delta) over all vacant dendrites.
    """
    candidates = np.nonzero(vacant_dendrites > 0)[0]
    if len(candidates) == 0:
        return []
    cand_pos = positions[candidates]
    cand_w = vacant_dendrites[candidates].astype(np.float64)
    pairs: dict = {}
    for i in np.nonzero(vacant_axons > 0)[0]:
        diff = cand_pos - positions[i]
        weights = cand_w * np.exp(-(diff * diff).sum(axis=1) / params.delta)
        if not allow_self:
            weights[candidates == i] = 0.0
        total = weights.sum()
        if total <= 0.0:
            continue
        gen = streams.generator(seed, "direct", update_index, int(i))
        draws = gen.choice(len(candidates), size=int(vacant_axons[i]),
                           p=weights / total)
        for j in draws:
            key = (int(i), int(candidates[j]))
            pairs[key] = pairs.get(key, 0) + 1
    return _merge_counts(pairs)


def _mac_frontier(tree, node, position, theta, params, self_id, allow_self):
    """Accepted attractors for one axon position under the size/distance rule.

    A node whose side-to-distance ratio is below theta acts as one attractor
    at its dendrite centroid; otherwise it is expanded.  Leaves are always
    attractors.
    """
    frontier = []
    weights = []
    stack = list(node.present_children())
    while stack:
        nd = stack.pop()
        if nd.dendrites_sum == 0:
            continue
        if nd.is_leaf:
            if not allow_self and int(tree.ids[nd.leaf_slot]) == self_id:
                continue
            d2 = float(((position - nd.dendrites_centroid) ** 2).sum())
            frontier.append(nd)
            weights.append(nd.dendrites_sum * math.exp(-d2 / params.delta))
            continue
        d2 = float(((position - nd.dendrites_centroid) ** 2).sum())
        dist = math.sqrt(d2)
        if dist > 0.0 and nd.box.side / dist < theta:
            frontier.append(nd)
            weights.append(nd.dendrites_sum * math.exp(-d2 / params.delta))
        else:
            stack.extend(nd.present_children())
    return frontier, weights


def barnes_hut_requests(tree, theta: float, params: KernelParams,
                        seed: int, update_index: int,
                        allow_self: bool = True) -> list[SynapseRequest]:
    """Point-to-box engine: each vacant axon element walks the tree on its own.

    The element samples among the accepted attractors proportionally to
    weight * kernel, then repeats the procedure inside the chosen node until
    it lands on a leaf.  theta -> 0 expands everything and reproduces the
    exact engine's distribution.
    """
    if tree.root.dendrites_sum == 0:
        return []
    pairs: dict = {}
    axon_slots = np.nonzero(tree.vac_axons > 0)[0]
    for slot in axon_slots:
        i = int(tree.ids[slot])
        position = tree.positions[slot]
        frontier_cache: dict = {}

        def frontier_of(node):
            key = node.path
            if key not in frontier_cache:
                frontier_cache[key] = _mac_frontier(tree, node, position, theta,
                                                    params, i, allow_self)
            return frontier_cache[key]

        for element in range(int(tree.vac_axons[slot])):
            gen = streams.KeyedStream(seed, "bh", update_index, i, element)
            node = tree.root
            while not node.is_leaf:
                frontier, weights = frontier_of(node)
                total = sum(weights)
                if total <= 0.0:
                    break
                u = gen.random() * total
                acc = 0.0
                chosen = frontier[-1]
                for cand, w in zip(frontier, weights):
                    acc += w
                    if u < acc:
                        chosen = cand
                        break
                node = chosen
            if node.is_leaf:
                j = int(tree.ids[node.leaf_slot])
                pairs[(i, j)] = pairs.get((i, j), 0) + 1
    return _merge_counts(pairs)


def fmm_requests(tree, thresholds: DispatchThresholds, params: KernelParams,
                 seed: int, update_index: int, stats: WalkStats | None = None,
                 allow_self: bool = True) -> list[SynapseRequest]:
    """Single-rank pair-descent engine over one full tree."""
    root = LocalNodeView(tree, tree.root)
    draws = KeyedDraws(seed, update_index)
    stack = init_stack([root], root, thresholds, params, draws, stats)
    requests = find_synapses(stack, thresholds, params, draws, stats, allow_self)
    return sorted(requests, key=lambda r: (r.axon_neuron, r.dendrite_neuron))
