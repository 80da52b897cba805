"""Simulation loop: placement, the three-phase model cycle, and the
per-update connectivity protocol with metrics and timing capture.

One run interleaves `plasticity_interval` vectorized activity/calcium/
element steps with a connectivity update that prunes excess synapses,
refreshes the octree vacancy sums, exchanges branch summaries, searches for
partners with the configured engine, and resolves conflicts on the dendrite
side.  Metrics are emitted once per connectivity update; wall time is
tracked per rank for the whole update, the partner search, and the series
expansions inside it.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from . import engines, streams, wire
from .config import RunConfig
from .connectivity import (KeyedDraws, LocalNodeView, SynapseRequest,
                           SynapseResponse, WalkStats, find_synapses,
                           init_stack, resolve_conflicts)
from .model import Population
from .octree import (Box, Octree, octant_box, octant_path_of, owned_octants,
                     subtree_level)
from .ranks import (NodeClient, NodeServer, ProtocolError, RemoteNodeCache,
                    Transport, collect_branches, global_root_view,
                    send_branches)
from .wire import MessageKind

METRICS_HEADER = "step,calcium_mean,calcium_std,synapses_total,vacant_axons,vacant_dendrites"
TIMING_HEADER = "rank,phase,min_s,avg_s,max_s"
NETWORK_HEADER = "axon_id,dendrite_id,count"

TIMING_PHASES = ("connectivity_update", "find_targets", "expansions")


@dataclass
class MetricsRow:
    step: int
    calcium_mean: float
    calcium_std: float
    synapses_total: int
    vacant_axons: int
    vacant_dendrites: int

    def to_csv(self) -> str:
        return (f"{self.step},{self.calcium_mean!r},{self.calcium_std!r},"
                f"{self.synapses_total},{self.vacant_axons},{self.vacant_dendrites}")


@dataclass
class TimingRow:
    rank: int
    phase: str
    min_s: float
    avg_s: float
    max_s: float

    def to_csv(self) -> str:
        return f"{self.rank},{self.phase},{self.min_s!r},{self.avg_s!r},{self.max_s!r}"


def place_neurons(cfg: RunConfig):
    """Deterministic neuron placement; ids are assigned in placement order."""
    side = cfg.resolved_domain_side()
    n = cfg.n
    if cfg.placement == "grid":
        per_axis = cfg.grid_side_count or math.ceil(n ** (1.0 / 3.0) - 1e-9)
        if n > per_axis ** 3:
            raise ValueError(
                f"grid of {per_axis}^3 sites cannot hold {n} neurons")
        pitch = side / per_axis
        coords = []
        for iz in range(per_axis):
            for iy in range(per_axis):
                for ix in range(per_axis):
                    coords.append(((ix + 0.5) * pitch, (iy + 0.5) * pitch,
                                   (iz + 0.5) * pitch))
                    if len(coords) == n:
                        positions = np.array(coords)
                        return np.arange(n, dtype=np.int64), positions
        positions = np.array(coords)
        return np.arange(n, dtype=np.int64), positions
    gen = streams.generator(cfg.seed, "placement")
    positions = gen.uniform(0.0, side, size=(n, 3))
    # exact duplicates would break leaf splitting; resample them
    while True:
        _, first = np.unique(positions, axis=0, return_index=True)
        dup = np.setdiff1d(np.arange(n), first)
        if len(dup) == 0:
            break
        positions[dup] = gen.uniform(0.0, side, size=(len(dup), 3))
    return np.arange(n, dtype=np.int64), positions


class EdgeStore:
    """Global synapse multiset with per-side totals and flat-array cache."""

    def __init__(self, n: int):
        self.n = n
        self.edges: dict = {}
        self.out_by: dict = {}
        self.in_by: dict = {}
        self.out_tot = np.zeros(n, dtype=np.int64)
        self.in_tot = np.zeros(n, dtype=np.int64)
        self._arrays = None

    def add(self, axon: int, dendrite: int, count: int) -> None:
        if count <= 0:
            return
        key = (axon, dendrite)
        self.edges[key] = self.edges.get(key, 0) + count
        self.out_by.setdefault(axon, {})[dendrite] = \
            self.out_by.get(axon, {}).get(dendrite, 0) + count
        self.in_by.setdefault(dendrite, {})[axon] = \
            self.in_by.get(dendrite, {}).get(axon, 0) + count
        self.out_tot[axon] += count
        self.in_tot[dendrite] += count
        self._arrays = None

    def remove(self, axon: int, dendrite: int, count: int) -> int:
        """Remove up to `count` synapses on the edge; returns how many went."""
        key = (axon, dendrite)
        have = self.edges.get(key, 0)
        took = min(count, have)
        if took == 0:
            return 0
        if took == have:
            del self.edges[key]
            del self.out_by[axon][dendrite]
            del self.in_by[dendrite][axon]
        else:
            self.edges[key] -= took
            self.out_by[axon][dendrite] -= took
            self.in_by[dendrite][axon] -= took
        self.out_tot[axon] -= took
        self.in_tot[dendrite] -= took
        self._arrays = None
        return took

    def arrays(self):
        if self._arrays is None:
            if self.edges:
                keys = sorted(self.edges)
                src = np.array([k[0] for k in keys], dtype=np.int64)
                dst = np.array([k[1] for k in keys], dtype=np.int64)
                cnt = np.array([self.edges[k] for k in keys], dtype=np.float64)
            else:
                src = np.empty(0, dtype=np.int64)
                dst = np.empty(0, dtype=np.int64)
                cnt = np.empty(0, dtype=np.float64)
            self._arrays = (src, dst, cnt)
        return self._arrays

    def total(self) -> int:
        return int(self.out_tot.sum())

    def sorted_edges(self):
        return [(a, d, c) for (a, d), c in sorted(self.edges.items())]


@dataclass
class RankRuntime:
    rank: int
    octants: list
    trees: dict
    neuron_ids: np.ndarray
    cache: RemoteNodeCache
    client: NodeClient = None
    stats: WalkStats = field(default_factory=WalkStats)
    shared = None
    requests: list = field(default_factory=list)
    incoming: list = field(default_factory=list)
    pending: dict = field(default_factory=dict)
    phase_seconds: dict = field(default_factory=lambda: {p: [] for p in TIMING_PHASES})


@dataclass
class RunResult:
    config: RunConfig
    metrics: list
    timing: list
    network: list
    message_counts: dict
    stats: WalkStats
    updates: int


class SimulationError(RuntimeError):
    """A module failure, annotated with the step/rank where it happened."""


class Simulation:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.params = cfg.model_params()
        self.kparams = cfg.kernel_params()
        self.thresholds = cfg.thresholds()
        self.seed = cfg.seed
        self.p = cfg.p

        ids, positions = place_neurons(cfg)
        self.n = len(ids)
        self.domain = Box((0.0, 0.0, 0.0), cfg.resolved_domain_side())
        self.population = Population(ids, positions, self.params, cfg.seed,
                                     cfg.initial_axons, cfg.initial_dendrites)
        self.edges = EdgeStore(self.n)

        self.level = subtree_level(self.p)
        self.rank_of = np.zeros(self.n, dtype=np.int64)
        octant_of = {}
        for i in range(self.n):
            path = octant_path_of(self.domain, positions[i], self.level)
            octant_of[i] = path
        self.transport = Transport(self.p)
        self.ranks: list[RankRuntime] = []
        floors_a, floors_d = self.population.element_floors()
        for r in range(self.p):
            octants = owned_octants(r, self.p, self.level)
            owned_set = set(octants)
            mine = np.array(sorted(i for i in range(self.n)
                                   if octant_of[i] in owned_set), dtype=np.int64)
            self.rank_of[mine] = r
            trees = {}
            for octant in octants:
                members = np.array([i for i in mine if octant_of[i] == octant],
                                   dtype=np.int64)
                if len(members) == 0:
                    trees[octant] = None
                    continue
                trees[octant] = Octree.build(
                    members, positions[members],
                    floors_a[members], floors_d[members],
                    octant_box(self.domain, octant),
                    level=self.level, path=octant)
            runtime = RankRuntime(r, octants, trees, mine, RemoteNodeCache())
            runtime.client = NodeClient(r, self.transport, self.level,
                                        trees, runtime.cache)
            self.transport.register_handler(r, NodeServer(trees, self.level))
            self.ranks.append(runtime)

        self.metrics: list[MetricsRow] = []
        self.update_index = 0
        self._thread_errors: list = []

    # -- scheduler ---------------------------------------------------------

    def _each_rank(self, fn) -> None:
        if self.cfg.scheduler == "threads" and self.p > 1:
            threads = []
            for runtime in self.ranks:
                def call(rt=runtime):
                    try:
                        fn(rt)
                    except Exception as exc:  # surfaced after join
                        self._thread_errors.append((rt.rank, exc))
                t = threading.Thread(target=call)
                threads.append(t)
                t.start()
            for t in threads:
                t.join()
            if self._thread_errors:
                rank, exc = self._thread_errors.pop(0)
                self._thread_errors.clear()
                raise SimulationError(
                    f"update {self.update_index}, rank {rank}: {exc}") from exc
        else:
            for runtime in self.ranks:
                try:
                    fn(runtime)
                except SimulationError:
                    raise
                except Exception as exc:
                    raise SimulationError(
                        f"update {self.update_index}, rank {runtime.rank}: {exc}"
                    ) from exc

    def _timed(self, runtime: RankRuntime, seconds: float) -> None:
        runtime.phase_seconds["connectivity_update"][-1] += seconds

    # -- main loop ---------------------------------------------------------

    def run(self) -> RunResult:
        interval = self.params.plasticity_interval
        for step in range(self.cfg.steps):
            try:
                inputs = self._spike_inputs()
                self.population.step(step, inputs)
                if (step + 1) % interval == 0:
                    self.connectivity_update()
                    self._emit_metrics(step + 1)
            except SimulationError:
                raise
            except Exception as exc:
                raise SimulationError(f"step {step}: {exc}") from exc
        timing = self._timing_rows()
        stats = self._total_stats()
        return RunResult(self.cfg, self.metrics, timing,
                         self.edges.sorted_edges(),
                         dict(self.transport.sent_counts), stats,
                         self.update_index)

    def _spike_inputs(self):
        src, dst, cnt = self.edges.arrays()
        if len(src) == 0:
            return None
        spiked = self.population.spiked
        active = cnt * spiked[src]
        return np.bincount(dst, weights=active, minlength=self.n)

    def _total_stats(self) -> WalkStats:
        total = WalkStats()
        for runtime in self.ranks:
            total.choose_target_calls += runtime.stats.choose_target_calls
            total.choose_source_calls += runtime.stats.choose_source_calls
            total.expansion_seconds += runtime.stats.expansion_seconds
            total.fallback_choices += runtime.stats.fallback_choices
            for k, v in runtime.stats.method_counts.items():
                total.method_counts[k] += v
        return total

    # -- connectivity update -----------------------------------------------

    def connectivity_update(self) -> None:
        idx = self.update_index
        self.transport.begin_update()
        for runtime in self.ranks:
            runtime.cache.clear()
            for phase in TIMING_PHASES:
                runtime.phase_seconds[phase].append(0.0)

        floors_a, floors_d = self.population.element_floors()
        self._prune_phase(idx, floors_a, floors_d)
        self._refresh_phase(floors_a, floors_d)
        self._exchange_phase()
        self._find_phase(idx, floors_a, floors_d)
        self._route_phase(idx, floors_a, floors_d)
        self.update_index += 1

    def _prune_phase(self, idx: int, floors_a, floors_d) -> None:
        removals: dict = {}
        notices_by_rank: dict = {r: {} for r in range(self.p)}

        def decide(runtime: RankRuntime):
            t0 = time.perf_counter()
            local_removals = {}
            local_notices = []
            mine = runtime.neuron_ids
            out_excess = mine[self.edges.out_tot[mine] > floors_a[mine]]
            in_excess = mine[self.edges.in_tot[mine] > floors_d[mine]]
            for i in out_excess:
                i = int(i)
                excess = int(self.edges.out_tot[i] - floors_a[i])
                gen = streams.generator(self.seed, "prune", idx, i, "axon")
                for partner in _sample_tokens(self.edges.out_by.get(i, {}),
                                              excess, gen):
                    key = (i, partner)
                    local_removals[key] = local_removals.get(key, 0) + 1
                    local_notices.append((i, partner, "axon"))
            for i in in_excess:
                i = int(i)
                excess = int(self.edges.in_tot[i] - floors_d[i])
                gen = streams.generator(self.seed, "prune", idx, i, "dendrite")
                for partner in _sample_tokens(self.edges.in_by.get(i, {}),
                                              excess, gen):
                    key = (partner, i)
                    local_removals[key] = local_removals.get(key, 0) + 1
                    local_notices.append((i, partner, "dendrite"))
            with self.transport.lock:
                for key, cnt in local_removals.items():
                    removals[key] = removals.get(key, 0) + cnt
                notices_by_rank[runtime.rank] = local_notices
            self._timed(runtime, time.perf_counter() - t0)

        self._each_rank(decide)

        for (axon, dendrite), count in sorted(removals.items()):
            self.edges.remove(axon, dendrite, count)

        # deletion notices to the partner's rank (cross-rank only)
        for r, notices in notices_by_rank.items():
            batches: dict = {}
            for initiator, partner, side in notices:
                owner = int(self.rank_of[partner])
                if owner != r:
                    batches.setdefault(owner, []).append((initiator, partner, side))
            for owner, batch in sorted(batches.items()):
                self.transport.send(MessageKind.DELETION_NOTICE, r, owner,
                                    wire.encode_deletions(batch))

        def drain_notices(runtime: RankRuntime):
            for kind, _, _, payload in self.transport.drain(runtime.rank):
                if kind != MessageKind.DELETION_NOTICE:
                    raise ProtocolError(f"unexpected {kind.name} in prune phase")
                wire.decode_deletions(payload)

        self._each_rank(drain_notices)

    def _refresh_phase(self, floors_a, floors_d) -> None:
        va_all = floors_a - self.edges.out_tot
        vd_all = floors_d - self.edges.in_tot
        if va_all.min(initial=0) < 0 or vd_all.min(initial=0) < 0:
            raise RuntimeError("vacancy went negative after pruning")

        def refresh(runtime: RankRuntime):
            t0 = time.perf_counter()
            for tree in runtime.trees.values():
                if tree is None:
                    continue
                new_va = va_all[tree.ids]
                new_vd = vd_all[tree.ids]
                changed = (new_va != tree.vac_axons) | (new_vd != tree.vac_dendrites)
                if np.any(changed):
                    updates = {int(tree.ids[k]): (int(new_va[k]), int(new_vd[k]))
                               for k in np.nonzero(changed)[0]}
                    tree.refresh_sums(updates)
            self._timed(runtime, time.perf_counter() - t0)

        self._each_rank(refresh)

    def _exchange_phase(self) -> None:
        def send(runtime: RankRuntime):
            t0 = time.perf_counter()
            summaries = {octant: (None if tree is None else tree.summary_of(tree.root))
                         for octant, tree in runtime.trees.items()}
            runtime._octant_summaries = summaries
            send_branches(runtime.rank, self.transport, summaries, self.p)
            self._timed(runtime, time.perf_counter() - t0)

        def collect(runtime: RankRuntime):
            t0 = time.perf_counter()
            runtime.shared = collect_branches(runtime.rank, self.transport,
                                              runtime._octant_summaries,
                                              self.p, self.domain)
            self._timed(runtime, time.perf_counter() - t0)

        self._each_rank(send)
        self._each_rank(collect)

    def _find_phase(self, idx: int, floors_a, floors_d) -> None:
        engine = self.cfg.engine

        def find(runtime: RankRuntime):
            t0 = time.perf_counter()
            expansion_before = runtime.stats.expansion_seconds
            if engine == "fmm":
                runtime.requests = self._fmm_find(runtime, idx)
            elif engine == "direct":
                va = floors_a - self.edges.out_tot
                vd = floors_d - self.edges.in_tot
                runtime.requests = engines.direct_requests(
                    self.population.positions, va, vd, self.kparams,
                    self.seed, idx, self.cfg.allow_self_connections)
            else:
                tree = runtime.trees[()]
                runtime.requests = engines.barnes_hut_requests(
                    tree, self.cfg.bh_theta, self.kparams, self.seed, idx,
                    self.cfg.allow_self_connections)
            elapsed = time.perf_counter() - t0
            runtime.phase_seconds["find_targets"][-1] += elapsed
            runtime.phase_seconds["expansions"][-1] += \
                runtime.stats.expansion_seconds - expansion_before
            self._timed(runtime, elapsed)

        self._each_rank(find)

    def _fmm_find(self, runtime: RankRuntime, idx: int) -> list[SynapseRequest]:
        roots = [LocalNodeView(tree, tree.root)
                 for tree in runtime.trees.values() if tree is not None]
        if not roots:
            return []
        global_root = global_root_view(runtime.shared, runtime.client)
        draws = KeyedDraws(self.seed, idx)
        stack = init_stack(roots, global_root, self.thresholds, self.kparams,
                           draws, runtime.stats)
        requests = find_synapses(stack, self.thresholds, self.kparams, draws,
                                 runtime.stats, self.cfg.allow_self_connections)
        return sorted(requests, key=lambda r: (r.axon_neuron, r.dendrite_neuron))

    def _route_phase(self, idx: int, floors_a, floors_d) -> None:
        vd_all = floors_d - self.edges.in_tot

        def send_requests(runtime: RankRuntime):
            t0 = time.perf_counter()
            runtime.pending = {}
            runtime.incoming = []
            batches: dict = {}
            for req in runtime.requests:
                key = (req.axon_neuron, req.dendrite_neuron)
                runtime.pending[key] = runtime.pending.get(key, 0) + req.count
                owner = int(self.rank_of[req.dendrite_neuron])
                if owner == runtime.rank:
                    runtime.incoming.append(req)
                else:
                    batches.setdefault(owner, []).append(req)
            for owner, batch in sorted(batches.items()):
                self.transport.send(MessageKind.SYNAPSE_REQUEST_BATCH,
                                    runtime.rank, owner,
                                    wire.encode_request_batch(batch))
            self._timed(runtime, time.perf_counter() - t0)

        def resolve(runtime: RankRuntime):
            t0 = time.perf_counter()
            for kind, _, _, payload in self.transport.drain(runtime.rank):
                if kind != MessageKind.SYNAPSE_REQUEST_BATCH:
                    raise ProtocolError(f"unexpected {kind.name} in route phase")
                runtime.incoming.extend(wire.decode_request_batch(payload))
            responses = resolve_conflicts(
                runtime.incoming, lambda d: vd_all[d],
                lambda d: streams.generator(self.seed, "resolve", idx, d))
            runtime._responses = responses
            self._timed(runtime, time.perf_counter() - t0)

        def send_responses(runtime: RankRuntime):
            t0 = time.perf_counter()
            batches: dict = {}
            for resp in runtime._responses:
                owner = int(self.rank_of[resp.axon_neuron])
                if owner == runtime.rank:
                    self._apply_response(runtime, resp)
                else:
                    batches.setdefault(owner, []).append(resp)
            for owner, batch in sorted(batches.items()):
                self.transport.send(MessageKind.SYNAPSE_RESPONSE_BATCH,
                                    runtime.rank, owner,
                                    wire.encode_response_batch(batch))
            self._timed(runtime, time.perf_counter() - t0)

        def apply_remote(runtime: RankRuntime):
            t0 = time.perf_counter()
            for kind, _, _, payload in self.transport.drain(runtime.rank):
                if kind != MessageKind.SYNAPSE_RESPONSE_BATCH:
                    raise ProtocolError(f"unexpected {kind.name} in route phase")
                for resp in wire.decode_response_batch(payload):
                    self._apply_response(runtime, resp)
            self._timed(runtime, time.perf_counter() - t0)

        self._each_rank(send_requests)
        self._each_rank(resolve)
        self._each_rank(send_responses)
        self._each_rank(apply_remote)

    def _apply_response(self, runtime: RankRuntime, resp: SynapseResponse) -> None:
        key = (resp.axon_neuron, resp.dendrite_neuron)
        if runtime.pending.get(key, 0) < resp.requested:
            raise ProtocolError(f"response for unknown request {key}")
        runtime.pending[key] -= resp.requested
        if resp.accepted > 0:
            with self.transport.lock:
                self.edges.add(resp.axon_neuron, resp.dendrite_neuron, resp.accepted)

    # -- outputs -------------------------------------------------------------

    def _emit_metrics(self, step: int) -> None:
        floors_a, floors_d = self.population.element_floors()
        va = int((floors_a - self.edges.out_tot).sum())
        vd = int((floors_d - self.edges.in_tot).sum())
        self.metrics.append(MetricsRow(
            step, float(self.population.calcium.mean()),
            float(self.population.calcium.std()),
            self.edges.total(), va, vd))

    def _timing_rows(self) -> list[TimingRow]:
        rows = []
        for runtime in self.ranks:
            for phase in TIMING_PHASES:
                series = runtime.phase_seconds[phase]
                if not series:
                    series = [0.0]
                rows.append(TimingRow(runtime.rank, phase,
                                      min(series), sum(series) / len(series),
                                      max(series)))
        return rows


def _sample_tokens(multiset: dict, how_many: int, gen) -> list:
    """Uniformly sample synapse tokens (with multiplicity) without replacement."""
    partners = sorted(multiset)
    counts = np.array([multiset[p] for p in partners], dtype=np.int64)
    tokens = np.repeat(np.arange(len(partners)), counts)
    how_many = min(how_many, len(tokens))
    picked = gen.choice(len(tokens), size=how_many, replace=False)
    return [partners[tokens[k]] for k in picked]


def write_metrics(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in rows:
            fh.write(row.to_csv() + "\n")


def write_timing(path, rows: list[TimingRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TIMING_HEADER + "\n")
        for row in rows:
            fh.write(row.to_csv() + "\n")


def write_network(path, edges: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(NETWORK_HEADER + "\n")
        for axon, dendrite, count in edges:
            fh.write(f"{axon},{dendrite},{count}\n")


def run_simulation(cfg: RunConfig, out_dir=None) -> RunResult:
    """Run one configuration and optionally write the three output files."""
    sim = Simulation(cfg)
    result = sim.run()
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        write_metrics(os.path.join(out_dir, "metrics.csv"), result.metrics)
        write_timing(os.path.join(out_dir, "timing.csv"), result.timing)
        write_network(os.path.join(out_dir, "network.csv"), result.network)
    return result
