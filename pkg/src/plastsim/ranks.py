"""Logical-rank execution layer: mailbox transport and the octree protocol.

Ranks are logical workers in one process.  They own contiguous blocks of
the level-L octant subtrees, exchange branch summaries to rebuild the
shared top identically everywhere, fetch remote octree nodes lazily with a
per-update cache, and route synapse requests/responses between owners.
Every payload crosses the mailbox in the versioned binary wire format, so
the transport boundary is real even though delivery is in-process.
"""

from __future__ import annotations

import threading
from collections import deque

import numpy as np

from . import wire
from .connectivity import AXONS, LocalNodeView
from .octree import (NodeSummary, OctreeError, SharedTop, owner_of_octant,
                     shared_top)
from .wire import MessageKind


class ProtocolError(RuntimeError):
    pass


class Transport:
    """Ordered, reliable in-process mailboxes with traffic accounting."""

    def __init__(self, p: int):
        self.p = p
        self.inboxes = {rank: deque() for rank in range(p)}
        self.lock = threading.Lock()
        self.sent_counts: dict[MessageKind, int] = {k: 0 for k in MessageKind}
        self.fetch_log: list[tuple] = []  # (requester, owner, mode, path) per update
        self.rpc_handlers: dict[int, object] = {}

    def register_handler(self, rank: int, handler) -> None:
        self.rpc_handlers[rank] = handler

    def begin_update(self) -> None:
        with self.lock:
            self.fetch_log.clear()

    def send(self, kind: MessageKind, sender: int, receiver: int, payload: bytes) -> None:
        data = wire.encode_message(kind, sender, receiver, payload)
        with self.lock:
            self.sent_counts[kind] += 1
            self.inboxes[receiver].append(data)

    def drain(self, receiver: int) -> list[tuple]:
        """All pending messages for a rank, decoded, in delivery order."""
        out = []
        with self.lock:
            while self.inboxes[receiver]:
                out.append(wire.decode_message(self.inboxes[receiver].popleft()))
        return out

    def fetch_rpc(self, requester: int, owner: int, mode: int, path: tuple):
        """Synchronous node fetch: one request and one reply message."""
        payload = wire.encode_fetch_request(mode, path)
        request = wire.encode_message(MessageKind.NODE_FETCH_REQUEST,
                                      requester, owner, payload)
        with self.lock:
            self.sent_counts[MessageKind.NODE_FETCH_REQUEST] += 1
            self.fetch_log.append((requester, owner, mode, path))
        handler = self.rpc_handlers.get(owner)
        if handler is None:
            raise ProtocolError(f"no fetch handler registered for rank {owner}")
        _, _, _, req_payload = wire.decode_message(request)
        reply_payload = handler.answer_fetch(req_payload)
        reply = wire.encode_message(MessageKind.NODE_FETCH_REPLY,
                                    owner, requester, reply_payload)
        with self.lock:
            self.sent_counts[MessageKind.NODE_FETCH_REPLY] += 1
        _, _, _, body = wire.decode_message(reply)
        return wire.decode_fetch_reply(body)


class NodeServer:
    """Answers fetches against a rank's frozen subtrees (read-only)."""

    def __init__(self, trees: dict, level: int):
        self.trees = trees
        self.level = level

    def _tree_for(self, path: tuple):
        octant = tuple(path[:self.level])
        tree = self.trees.get(octant)
        if tree is None:
            raise ProtocolError(f"no subtree at octant {octant}")
        return tree

    def answer_fetch(self, payload: bytes) -> bytes:
        mode, path = wire.decode_fetch_request(payload)
        tree = self._tree_for(path)
        try:
            node = tree.node_at(path)
        except OctreeError as exc:
            raise ProtocolError(str(exc)) from exc
        if mode == wire.FETCH_NODE:
            return wire.encode_fetch_reply(mode, path, tree.summary_of(node))
        return wire.encode_fetch_reply(mode, path, tree.points_below(node))


class RemoteNodeCache:
    """Per-rank cache of fetched node data, valid for one connectivity update."""

    def __init__(self):
        self.entries: dict = {}

    def clear(self) -> None:
        self.entries.clear()


class NodeClient:
    """Lazy access to any rank's nodes; local reads bypass the transport."""

    def __init__(self, rank: int, transport: Transport, level: int,
                 local_trees: dict, cache: RemoteNodeCache):
        self.rank = rank
        self.transport = transport
        self.level = level
        self.local_trees = local_trees
        self.cache = cache

    def owner_of(self, path: tuple) -> int:
        octant = tuple(path[:self.level])
        index = 0
        for digit in octant:
            index = index * 8 + digit
        return owner_of_octant(index, self.transport.p, self.level)

    def _local_node(self, path: tuple):
        octant = tuple(path[:self.level])
        return self.local_trees[octant], self.local_trees[octant].node_at(path)

    def node_summary(self, path: tuple) -> NodeSummary:
        owner = self.owner_of(path)
        if owner == self.rank:
            tree, node = self._local_node(path)
            return tree.summary_of(node)
        key = (wire.FETCH_NODE, path)
        if key not in self.cache.entries:
            _, _, body = self.transport.fetch_rpc(self.rank, owner, wire.FETCH_NODE, path)
            self.cache.entries[key] = body
        return self.cache.entries[key]

    def points(self, path: tuple):
        owner = self.owner_of(path)
        if owner == self.rank:
            tree, node = self._local_node(path)
            return tree.points_below(node)
        key = (wire.FETCH_POINTS, path)
        if key not in self.cache.entries:
            _, _, body = self.transport.fetch_rpc(self.rank, owner, wire.FETCH_POINTS, path)
            self.cache.entries[key] = body
        return self.cache.entries[key]


class RemoteNodeView:
    """Walk-facing view of a node owned by another rank (lazily completed)."""

    __slots__ = ("client", "summary")

    def __init__(self, client: NodeClient, summary: NodeSummary):
        self.client = client
        self.summary = summary

    @property
    def path(self):
        return self.summary.path

    @property
    def level(self):
        return self.summary.level

    @property
    def is_leaf(self):
        return self.summary.is_leaf

    @property
    def axons_sum(self):
        return self.summary.axons_sum

    @property
    def dendrites_sum(self):
        return self.summary.dendrites_sum

    @property
    def axons_centroid(self):
        return self.summary.axons_centroid

    @property
    def dendrites_centroid(self):
        return self.summary.dendrites_centroid

    @property
    def neuron_id(self):
        return int(self.summary.neuron[0])

    def side_sum(self, side):
        return self.axons_sum if side == AXONS else self.dendrites_sum

    def leaf_vacancy(self, side):
        _, _, va, vd = self.summary.neuron
        return int(va if side == AXONS else vd)

    def _child_views(self):
        views = []
        for digit in range(8):
            if self.summary.child_mask & (1 << digit):
                child = self.client.node_summary(self.path + (digit,))
                views.append(make_view(self.client, child))
        return views

    def vacancy_children(self, side):
        return [v for v in self._child_views() if v.side_sum(side) > 0]

    def actual_points(self, side):
        _, positions, va, vd = self.client.points(self.path)
        vac = va if side == AXONS else vd
        mask = vac > 0
        return positions[mask], vac[mask].astype(np.float64)

    def pseudo_points(self, side):
        from .connectivity import _children_pseudo_points
        return _children_pseudo_points(self.vacancy_children(side), side)


def make_view(client: NodeClient, summary: NodeSummary):
    """Local or remote view for a node at/below the branch level."""
    owner = client.owner_of(summary.path)
    if owner == client.rank:
        octant = tuple(summary.path[:client.level])
        tree = client.local_trees[octant]
        return LocalNodeView(tree, tree.node_at(summary.path))
    return RemoteNodeView(client, summary)


class SharedTopView:
    """Walk-facing view of a shared-top node (levels above the branch roots)."""

    __slots__ = ("shared", "summary", "client")

    def __init__(self, shared: SharedTop, summary: NodeSummary, client: NodeClient):
        self.shared = shared
        self.summary = summary
        self.client = client

    @property
    def path(self):
        return self.summary.path

    @property
    def level(self):
        return self.summary.level

    @property
    def is_leaf(self):
        return self.summary.is_leaf

    @property
    def axons_sum(self):
        return self.summary.axons_sum

    @property
    def dendrites_sum(self):
        return self.summary.dendrites_sum

    @property
    def axons_centroid(self):
        return self.summary.axons_centroid

    @property
    def dendrites_centroid(self):
        return self.summary.dendrites_centroid

    def side_sum(self, side):
        return self.axons_sum if side == AXONS else self.dendrites_sum

    def _child_views(self):
        views = []
        for child in self.shared.child_summaries(self.path):
            if child.level == self.shared.level:
                views.append(make_view(self.client, child))
            else:
                views.append(SharedTopView(self.shared, child, self.client))
        return views

    def vacancy_children(self, side):
        return [v for v in self._child_views() if v.side_sum(side) > 0]

    def actual_points(self, side):
        chunks = [v.actual_points(side) for v in self.vacancy_children(side)]
        positions = np.concatenate([c[0] for c in chunks], axis=0)
        weights = np.concatenate([c[1] for c in chunks])
        return positions, weights

    def pseudo_points(self, side):
        from .connectivity import _children_pseudo_points
        children = [c for c in self.shared.child_summaries(self.path)
                    if (c.axons_sum if side == AXONS else c.dendrites_sum) > 0]
        positions = np.array([
            (c.axons_centroid if side == AXONS else c.dendrites_centroid)
            for c in children], dtype=np.float64)
        weights = np.array([
            (c.axons_sum if side == AXONS else c.dendrites_sum)
            for c in children], dtype=np.float64)
        return positions, weights


def global_root_view(shared: SharedTop, client: NodeClient):
    """Descent entry point: the shared-top root, resolved when p == 1."""
    root = shared.root
    if shared.level == 0:
        return make_view(client, root)
    return SharedTopView(shared, root, client)


def send_branches(rank: int, transport: Transport, local_octants: dict, p: int) -> None:
    """First half of the all-gather: one summary batch to every other rank."""
    payload = wire.encode_branch_exchange(local_octants)
    for other in range(p):
        if other != rank:
            transport.send(MessageKind.BRANCH_EXCHANGE, rank, other, payload)


def collect_branches(rank: int, transport: Transport, local_octants: dict,
                     p: int, domain) -> SharedTop:
    """Second half of the all-gather: assemble the branch set, build the top.

    A peer that failed to report is a fail-stop protocol error: the whole
    connectivity update aborts.
    """
    branches = {rank: local_octants}
    for kind, sender, _, body in transport.drain(rank):
        if kind != MessageKind.BRANCH_EXCHANGE:
            raise ProtocolError(f"unexpected {kind.name} during branch exchange")
        branches[sender] = wire.decode_branch_exchange(body)
    if len(branches) != p:
        missing = sorted(set(range(p)) - set(branches))
        raise ProtocolError(f"branch exchange incomplete: missing ranks {missing}")
    return shared_top(branches, p, domain)


def exchange_branches(transport: Transport, octants_by_rank: dict, domain) -> dict:
    """Serial convenience: run the full exchange for every rank, return the tops."""
    p = transport.p
    for rank in range(p):
        send_branches(rank, transport, octants_by_rank[rank], p)
    return {rank: collect_branches(rank, transport, octants_by_rank[rank], p, domain)
            for rank in range(p)}
