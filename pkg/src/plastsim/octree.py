"""Spatial octree with per-side vacant-element sums and centroids.

The domain is split recursively into eight octants until each cell holds at
most one neuron.  Every inner node stores, for both element sides (axons
and dendrites), the total vacant count below it and the vacancy-weighted
centroid.  The tree structure is built once (positions never move); only
the sums and centroids are refreshed between connectivity updates.

Logical ranks own contiguous blocks of the level-L octants where
L = ceil(log8(p)); the levels above L form the shared top that every rank
rebuilds identically from the exchanged branch summaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


class OctreeError(ValueError):
    pass


#: Octant child offsets in Z-order: bit 0 = +x, bit 1 = +y, bit 2 = +z.
_OFFSETS = np.array([[(d >> 0) & 1, (d >> 1) & 1, (d >> 2) & 1] for d in range(8)],
                    dtype=np.float64)


@dataclass(frozen=True)
class Box:
    origin: tuple[float, float, float]
    side: float

    def center(self) -> np.ndarray:
        return np.asarray(self.origin) + 0.5 * self.side

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        o = np.asarray(self.origin)
        return np.all((points >= o) & (points <= o + self.side), axis=1)

    def octant_digits(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        c = self.center()
        ge = points >= c
        return (ge[:, 0].astype(np.int64)
                + 2 * ge[:, 1].astype(np.int64)
                + 4 * ge[:, 2].astype(np.int64))

    def child(self, digit: int) -> "Box":
        half = 0.5 * self.side
        o = np.asarray(self.origin) + half * _OFFSETS[digit]
        return Box(tuple(o), half)


def combine_child_aggregates(children):
    """Aggregate (sum, centroid) pairs per side over children in octant order.

    Shared by the tree aggregation and the shared-top builder so that both
    produce bit-identical floats for the same child list.
    """
    a_sum = 0
    d_sum = 0
    a_acc = np.zeros(3)
    d_acc = np.zeros(3)
    for ca_sum, ca_cent, cd_sum, cd_cent in children:
        if ca_sum > 0:
            a_sum += ca_sum
            a_acc += ca_sum * ca_cent
        if cd_sum > 0:
            d_sum += cd_sum
            d_acc += cd_sum * cd_cent
    a_cent = a_acc / a_sum if a_sum > 0 else None
    d_cent = d_acc / d_sum if d_sum > 0 else None
    return a_sum, a_cent, d_sum, d_cent


class OctreeNode:
    __slots__ = ("box", "level", "path", "lo", "hi", "children", "parent",
                 "leaf_slot", "axons_sum", "dendrites_sum",
                 "axons_centroid", "dendrites_centroid")

    def __init__(self, box: Box, level: int, path: tuple, lo: int, hi: int, parent):
        self.box = box
        self.level = level
        self.path = path
        self.lo = lo
        self.hi = hi
        self.parent = parent
        self.children: Optional[list] = None
        self.leaf_slot = -1
        self.axons_sum = 0
        self.dendrites_sum = 0
        self.axons_centroid = None
        self.dendrites_centroid = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def present_children(self):
        if self.children is None:
            return []
        return [c for c in self.children if c is not None]


@dataclass
class NodeSummary:
    """Rank-portable snapshot of one node (what crosses the wire)."""

    path: tuple
    level: int
    origin: tuple[float, float, float]
    side: float
    axons_sum: int
    dendrites_sum: int
    axons_centroid: Optional[np.ndarray]
    dendrites_centroid: Optional[np.ndarray]
    child_mask: int
    neuron: Optional[tuple] = None  # (id, position, vacant_axons, vacant_dendrites)

    @property
    def is_leaf(self) -> bool:
        return self.child_mask == 0


class Octree:
    """Octree over one cell (the whole domain, or one owned octant)."""

    MAX_DEPTH = 48

    def __init__(self, root, box, ids, positions, vac_axons, vac_dendrites,
                 slot_of_id, nodes_by_path, leaf_nodes):
        self.root = root
        self.box = box
        self.ids = ids
        self.positions = positions
        self.vac_axons = vac_axons
        self.vac_dendrites = vac_dendrites
        self.slot_of_id = slot_of_id
        self.nodes_by_path = nodes_by_path
        self.leaf_nodes = leaf_nodes
        #: per-(path, side) filtered point arrays; valid between refreshes
        self.points_cache: dict = {}

    @classmethod
    def build(cls, ids, positions, vac_axons, vac_dendrites, box: Box,
              level: int = 0, path: tuple = ()) -> "Octree":
        ids = np.asarray(ids, dtype=np.int64)
        positions = np.asarray(positions, dtype=np.float64)
        vac_axons = np.asarray(vac_axons, dtype=np.int64).copy()
        vac_dendrites = np.asarray(vac_dendrites, dtype=np.int64).copy()
        if len(ids) == 0:
            raise OctreeError("cannot build a tree over zero neurons")
        inside = box.contains(positions)
        if not inside.all():
            bad = ids[~inside]
            raise OctreeError(f"positions outside the domain for neuron ids {bad.tolist()}")
        uniq, counts = np.unique(positions, axis=0, return_counts=True)
        if np.any(counts > 1):
            dup = uniq[counts > 1][0]
            dup_ids = ids[np.all(positions == dup, axis=1)]
            raise OctreeError(f"duplicate positions for neuron ids {dup_ids.tolist()}")

        perm = np.arange(len(ids))
        nodes_by_path: dict = {}
        leaf_nodes: dict = {}

        def recurse(lo, hi, node_box, node_level, node_path, parent):
            node = OctreeNode(node_box, node_level, node_path, lo, hi, parent)
            nodes_by_path[node_path] = node
            if hi - lo == 1:
                node.leaf_slot = lo
                leaf_nodes[lo] = node
                return node
            if node_level - level >= cls.MAX_DEPTH:
                raise OctreeError("max depth exceeded; positions too close")
            digits = node_box.octant_digits(positions[perm[lo:hi]])
            order = np.argsort(digits, kind="stable")
            perm[lo:hi] = perm[lo:hi][order]
            digits = digits[order]
            node.children = [None] * 8
            start = lo
            for d in range(8):
                width = int(np.count_nonzero(digits == d))
                if width:
                    node.children[d] = recurse(start, start + width,
                                               node_box.child(d),
                                               node_level + 1, node_path + (d,), node)
                    start += width
            return node

        root = recurse(0, len(ids), box, level, path, None)
        ids = ids[perm]
        positions = positions[perm]
        vac_axons = vac_axons[perm]
        vac_dendrites = vac_dendrites[perm]
        slot_of_id = {int(i): slot for slot, i in enumerate(ids)}
        tree = cls(root, box, ids, positions, vac_axons, vac_dendrites,
                   slot_of_id, nodes_by_path, leaf_nodes)
        tree._recompute(root)
        return tree

    def _recompute_node(self, node: OctreeNode):
        if node.is_leaf:
            slot = node.leaf_slot
            va = int(self.vac_axons[slot])
            vd = int(self.vac_dendrites[slot])
            node.axons_sum = va
            node.dendrites_sum = vd
            pos = self.positions[slot]
            node.axons_centroid = pos.copy() if va > 0 else None
            node.dendrites_centroid = pos.copy() if vd > 0 else None
        else:
            parts = [(c.axons_sum, c.axons_centroid, c.dendrites_sum, c.dendrites_centroid)
                     for c in node.present_children()]
            (node.axons_sum, node.axons_centroid,
             node.dendrites_sum, node.dendrites_centroid) = combine_child_aggregates(parts)

    def _recompute(self, node: OctreeNode):
        for child in node.present_children():
            self._recompute(child)
        self._recompute_node(node)

    def refresh_sums(self, updates: dict) -> None:
        """Apply new per-neuron vacancies and rebuild affected ancestor chains."""
        self.points_cache.clear()
        affected = set()
        for neuron_id, (va, vd) in updates.items():
            slot = self.slot_of_id.get(int(neuron_id))
            if slot is None:
                raise OctreeError(f"unknown neuron id {neuron_id}")
            self.vac_axons[slot] = va
            self.vac_dendrites[slot] = vd
            node = self.leaf_nodes[slot]
            while node is not None:
                affected.add(node)
                node = node.parent
        for node in sorted(affected, key=lambda nd: -nd.level):
            self._recompute_node(node)

    def set_all_vacancies(self, vac_axons_by_id, vac_dendrites_by_id) -> None:
        """Bulk refresh from id-indexed arrays (cheap full rebuild of sums)."""
        self.points_cache.clear()
        self.vac_axons = np.asarray(vac_axons_by_id)[self.ids].astype(np.int64)
        self.vac_dendrites = np.asarray(vac_dendrites_by_id)[self.ids].astype(np.int64)
        self._recompute(self.root)

    def node_at(self, path: tuple) -> OctreeNode:
        node = self.nodes_by_path.get(tuple(path))
        if node is None:
            raise OctreeError(f"no node at path {path}")
        return node

    def points_below(self, node: OctreeNode):
        """(ids, positions, vacant_axons, vacant_dendrites) for leaves under node."""
        sl = slice(node.lo, node.hi)
        return (self.ids[sl], self.positions[sl],
                self.vac_axons[sl], self.vac_dendrites[sl])

    def summary_of(self, node: OctreeNode) -> NodeSummary:
        mask = 0
        if not node.is_leaf:
            for d, child in enumerate(node.children):
                if child is not None:
                    mask |= 1 << d
        neuron = None
        if node.is_leaf:
            slot = node.leaf_slot
            neuron = (int(self.ids[slot]), self.positions[slot].copy(),
                      int(self.vac_axons[slot]), int(self.vac_dendrites[slot]))
        return NodeSummary(node.path, node.level, node.box.origin, node.box.side,
                           node.axons_sum, node.dendrites_sum,
                           None if node.axons_centroid is None else node.axons_centroid.copy(),
                           None if node.dendrites_centroid is None else node.dendrites_centroid.copy(),
                           mask, neuron)


def subtree_level(p: int) -> int:
    """Smallest L with 8^L >= p: depth of the shared top."""
    if p < 1:
        raise ValueError("p must be at least 1")
    level = 0
    while 8 ** level < p:
        level += 1
    return level


def octant_paths(level: int) -> list[tuple]:
    paths = [()]
    for _ in range(level):
        paths = [path + (d,) for path in paths for d in range(8)]
    return paths


def owner_of_octant(index: int, p: int, level: int) -> int:
    """Contiguous Z-order block assignment of level-L octants to ranks."""
    return index * p // (8 ** level)


def owned_octants(rank: int, p: int, level: int) -> list[tuple]:
    paths = octant_paths(level)
    return [path for i, path in enumerate(paths) if owner_of_octant(i, p, level) == rank]


def octant_path_of(domain: Box, position: np.ndarray, level: int) -> tuple:
    path = ()
    box = domain
    for _ in range(level):
        digit = int(box.octant_digits(position[None, :])[0])
        path += (digit,)
        box = box.child(digit)
    return path


def octant_box(domain: Box, path: tuple) -> Box:
    box = domain
    for digit in path:
        box = box.child(digit)
    return box


class SharedTop:
    """Deterministic upper tree (levels 0..L) over the branch summaries."""

    def __init__(self, summaries: dict, level: int):
        self.summaries = summaries
        self.level = level

    @property
    def root(self) -> NodeSummary:
        return self.summaries[()]

    def child_summaries(self, path: tuple) -> list[NodeSummary]:
        node = self.summaries[path]
        return [self.summaries[path + (d,)] for d in range(8)
                if node.child_mask & (1 << d)]


def shared_top(branches: dict, p: int, domain: Box) -> SharedTop:
    """Build the shared top from per-rank branch summaries.

    ``branches`` maps rank -> {octant path: NodeSummary or None}; every rank
    must report each of its owned octants (None for octants holding no
    neurons).  The result is identical on every rank given identical input.
    """
    level = subtree_level(p)
    summaries: dict = {}
    for rank in range(p):
        if rank not in branches:
            raise OctreeError(f"branch exchange incomplete: missing rank {rank}")
        reported = branches[rank]
        for path in owned_octants(rank, p, level):
            if path not in reported:
                raise OctreeError(
                    f"branch exchange incomplete: rank {rank} missing octant {path}")
            if reported[path] is not None:
                summaries[path] = reported[path]
    if not summaries:
        raise OctreeError("no rank reported any neurons")

    for lvl in range(level - 1, -1, -1):
        for path in octant_paths(lvl):
            children = [(d, summaries[path + (d,)]) for d in range(8)
                        if path + (d,) in summaries]
            if not children:
                continue
            parts = [(s.axons_sum, s.axons_centroid, s.dendrites_sum, s.dendrites_centroid)
                     for _, s in children]
            a_sum, a_cent, d_sum, d_cent = combine_child_aggregates(parts)
            mask = 0
            for d, _ in children:
                mask |= 1 << d
            box = octant_box(domain, path)
            summaries[path] = NodeSummary(path, lvl, box.origin, box.side,
                                          a_sum, d_sum, a_cent, d_cent, mask)
    return SharedTop(summaries, level)
