"""
EM training from sparse trajectories.

Consecutive GPS fixes become weakly labelled pairs: only the elapsed time
between them is observed, the route and per-segment times are not. Training
alternates two steps until the estimates settle:

* E step: fit the model to the observed gaps by minimizing the aggregate
  Gaussian NLL of each pair's currently assigned route;
* M step: reassign each pair to the candidate route whose summed mean time is
  closest to its observed gap.

Candidate routes are built once per (origin, destination) with free-flow
weights. A single-writer phase separates the parallel parts (gradient shards,
per-pair argmin) from parameter and assignment updates, and shard results are
always combined in the same order, so results do not depend on ``threads``.
"""

import dataclasses
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, ContextManager, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sparse_eta.atoms.config import ExperimentConfig
from sparse_eta.atoms.error_utils import (
    FileIOError,
    NoNodeInRange,
    NoPathError,
    NonFiniteLossError,
    TrainingError,
    ValidationError,
)
from sparse_eta.molecules.autodiff import AdamState, adam_step
from sparse_eta.molecules.road_network import NodeId, RoadNetwork, snap_point
from sparse_eta.molecules.routing import DEFAULT_OVERSAMPLE, CandidateSet, Route, candidate_set
from sparse_eta.molecules.trajectories import SparseTrajectory
from sparse_eta.organisms.st_model import (
    TIME_STEPS,
    ContextKey,
    ContextTables,
    GraphInputs,
    ModelParams,
    RouteBatch,
    TableSource,
    TemporalContext,
    TravelTimeTable,
    checkpoint_document,
    loss_and_grads,
    pair_losses,
    pair_nll,
    params_from_document,
)

logger = logging.getLogger(__name__)

PAIR_SHARD_SIZE = 16
EM_STATE_FORMAT = "sparse-eta-em-state"

STOP_DELTA_MU = "delta_mu_below_tolerance"
STOP_STABLE = "no_reassignment"
STOP_MAX_ITERS = "max_em_iters"

IterationCallback = Callable[["EmState"], None]


@dataclass
class PairSample:
    """Two consecutive fixes, their observed gap, and the candidate routes between them."""
    pair_id: int
    trajectory_id: str
    position: int
    origin_node: NodeId
    dest_node: NodeId
    t_obs: float
    departure: float
    context: TemporalContext
    candidates: CandidateSet

    @property
    def time_step(self) -> int:
        return self.context.time_step

    @property
    def assigned_route(self) -> Route:
        return self.candidates.assigned


@dataclass
class PairBuildStats:
    trajectories: int = 0
    fix_pairs: int = 0
    kept: int = 0
    dropped_unsnapped: int = 0
    dropped_same_node: int = 0
    dropped_nonpositive_time: int = 0
    dropped_no_path: int = 0

    @property
    def dropped(self) -> int:
        return (
            self.dropped_unsnapped
            + self.dropped_same_node
            + self.dropped_nonpositive_time
            + self.dropped_no_path
        )


class CandidateCache:
    """Candidate routes per OD pair (and optional extra key), computed at most once."""

    def __init__(self, m: int, tau: float, oversample: int = DEFAULT_OVERSAMPLE):
        self.m = m
        self.tau = tau
        self.oversample = oversample
        self._routes: Dict[Tuple[Any, ...], Tuple[Route, ...]] = {}

    def __len__(self) -> int:
        return len(self._routes)

    def routes(
        self,
        net: RoadNetwork,
        weights: np.ndarray,
        src: NodeId,
        dst: NodeId,
        key_extra: Any = None,
    ) -> Tuple[Route, ...]:
        key = (src, dst, key_extra)
        if key not in self._routes:
            cands = candidate_set(net, weights, src, dst, self.m, self.tau, self.oversample)
            self._routes[key] = cands.routes
        return self._routes[key]


def build_pairs_with_stats(
    net: RoadNetwork,
    trajectories: Sequence[SparseTrajectory],
    m: int,
    tau: float,
    oversample: int = DEFAULT_OVERSAMPLE,
    snap_radius_m: float = 100.0,
    cache: Optional[CandidateCache] = None,
) -> Tuple[List[PairSample], PairBuildStats]:
    """
    Split trajectories into consecutive fix pairs with free-flow candidate sets.

    Pairs whose fixes do not snap, snap to the same node, have a
    non-positive gap, or have no connecting path are dropped and counted.
    """
    cache = cache or CandidateCache(m, tau, oversample)
    weights = net.base_times()
    stats = PairBuildStats(trajectories=len(trajectories))
    pairs: List[PairSample] = []
    for traj in trajectories:
        snapped: List[Optional[NodeId]] = []
        for lon, lat, _ in traj.fixes:
            try:
                snapped.append(snap_point(net, lon, lat, snap_radius_m))
            except NoNodeInRange:
                snapped.append(None)
        for pos in range(len(traj.fixes) - 1):
            stats.fix_pairs += 1
            src, dst = snapped[pos], snapped[pos + 1]
            t_a, t_b = traj.fixes[pos][2], traj.fixes[pos + 1][2]
            if src is None or dst is None:
                stats.dropped_unsnapped += 1
                continue
            if src == dst:
                stats.dropped_same_node += 1
                continue
            if not t_b - t_a > 0.0:
                stats.dropped_nonpositive_time += 1
                continue
            try:
                routes = cache.routes(net, weights, src, dst)
            except NoPathError:
                stats.dropped_no_path += 1
                continue
            pairs.append(PairSample(
                pair_id=len(pairs),
                trajectory_id=traj.trajectory_id,
                position=pos,
                origin_node=src,
                dest_node=dst,
                t_obs=t_b - t_a,
                departure=t_a,
                context=TemporalContext.from_timestamp(t_a, traj.weather_id, traj.holiday_id),
                candidates=CandidateSet(src, dst, routes, 0),
            ))
    stats.kept = len(pairs)
    if stats.dropped:
        logger.warning(
            "Dropped %d of %d fix pairs (unsnapped=%d, same_node=%d, nonpositive_time=%d, no_path=%d)",
            stats.dropped, stats.fix_pairs, stats.dropped_unsnapped, stats.dropped_same_node,
            stats.dropped_nonpositive_time, stats.dropped_no_path,
        )
    return pairs, stats


def build_pairs(
    net: RoadNetwork,
    trajectories: Sequence[SparseTrajectory],
    m: int,
    tau: float,
    oversample: int = DEFAULT_OVERSAMPLE,
    snap_radius_m: float = 100.0,
    cache: Optional[CandidateCache] = None,
) -> List[PairSample]:
    pairs, _ = build_pairs_with_stats(net, trajectories, m, tau, oversample, snap_radius_m, cache)
    return pairs


@dataclass
class IterationRecord:
    iteration: int
    mean_nll_before: float
    mean_nll: float
    delta_mu_max: float
    reassigned_count: int
    epochs_run: int
    val_nll: Optional[float]
    assignments: List[int]


@dataclass
class EmState:
    """Everything needed to continue EM exactly where it stopped."""
    iteration: int
    model: ModelParams
    tables: ContextTables
    pairs: List[PairSample]
    optimizer: AdamState
    rng: np.random.Generator
    val_pairs: List[PairSample] = field(default_factory=list)
    delta_mu_max: float = math.inf
    reassigned_count: Optional[int] = None
    nll_history: List[float] = field(default_factory=list)
    history: List[IterationRecord] = field(default_factory=list)
    initial_assignments: List[int] = field(default_factory=list)
    stop_reason: Optional[str] = None
    last_e_step: Dict[str, Any] = field(default_factory=dict)

    @property
    def table(self) -> TravelTimeTable:
        """Table of the reference context."""
        return self.tables.table

    @property
    def table_context(self) -> ContextKey:
        return self.tables.reference

    @property
    def converged(self) -> bool:
        return self.stop_reason in (STOP_DELTA_MU, STOP_STABLE)

    def assignments(self) -> List[int]:
        return [p.candidates.assigned_index for p in self.pairs]


def _pairs_batch(pairs: Sequence[PairSample]) -> RouteBatch:
    return RouteBatch.from_routes(
        [p.assigned_route.segment_ids for p in pairs],
        [p.context for p in pairs],
        [p.t_obs for p in pairs],
    )


def _mean_loss(params: ModelParams, graph: GraphInputs, pairs: Sequence[PairSample]) -> float:
    if not pairs:
        return 0.0
    return float(np.mean(pair_losses(params, graph, _pairs_batch(pairs))))


def _executor(threads: int) -> ContextManager[Optional[ThreadPoolExecutor]]:
    if threads > 1:
        return ThreadPoolExecutor(max_workers=threads)
    return nullcontext(None)


def _sharded_loss_and_grads(
    params: ModelParams,
    graph: GraphInputs,
    pairs: Sequence[PairSample],
    pool: Optional[ThreadPoolExecutor],
) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    shards = [pairs[i:i + PAIR_SHARD_SIZE] for i in range(0, len(pairs), PAIR_SHARD_SIZE)]

    def run(shard: Sequence[PairSample]) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
        return loss_and_grads(params, graph, _pairs_batch(shard))

    results = list(pool.map(run, shards)) if pool is not None else [run(s) for s in shards]
    total = 0.0
    grads: Dict[str, np.ndarray] = {}
    for loss, shard_grads, _ in results:
        total += loss
        for name, g in shard_grads.items():
            grads[name] = grads[name] + g if name in grads else g.copy()
    per_pair = np.concatenate([r[2] for r in results])
    return total, grads, per_pair


def _delta_mu(old: ContextTables, new: ContextTables, keys: Sequence[ContextKey]) -> float:
    """Largest change of any mean over the given contexts."""
    if not new.table.mu.size:
        return 0.0
    return max(float(np.max(np.abs(new.for_key(k).mu - old.for_key(k).mu))) for k in keys)


def e_step(
    state: EmState,
    graph: GraphInputs,
    epochs: int,
    lr: float,
    batch_size: int = 64,
    patience: Optional[int] = None,
    threads: int = 1,
) -> EmState:
    """
    Fit the model to the current route assignments with Adam.

    Each epoch visits the training pairs in a seeded random order in
    mini-batches; the gradient of a batch is the mean over its pairs. With
    validation pairs and ``patience``, training stops after ``patience``
    epochs without a validation improvement and the best parameters are
    restored. The tables of every context in the corpus are then
    re-materialized and the iteration counted.

    The default rate suits mini-batches of dozens of pairs. A batch of one
    or two pairs needs a smaller ``lr`` than about 5e-3, or the mean of a
    lone segment overshoots and oscillates around the observed gap.

    Raises:
        NonFiniteLossError: If a batch loss or gradient is NaN or infinite
    """
    pairs = state.pairs
    if not pairs:
        state.iteration += 1
        state.nll_history.append(0.0)
        state.delta_mu_max = 0.0
        state.last_e_step = {"mean_nll_before": 0.0, "epochs_run": 0, "val_nll": None}
        return state

    params, optimizer = state.model, state.optimizer
    before = _mean_loss(params, graph, pairs)
    use_val = bool(state.val_pairs) and patience is not None
    best_val = _mean_loss(params, graph, state.val_pairs) if use_val else math.inf
    best = (params, optimizer)
    stale = 0
    epochs_run = 0

    with _executor(threads) as pool:
        for epoch in range(epochs):
            order = state.rng.permutation(len(pairs))
            for start in range(0, len(pairs), batch_size):
                batch = [pairs[i] for i in order[start:start + batch_size]]
                total, grads, per_pair = _sharded_loss_and_grads(params, graph, batch, pool)
                finite_grads = all(np.all(np.isfinite(g)) for g in grads.values())
                if not math.isfinite(total) or not finite_grads:
                    bad = [p.pair_id for p, v in zip(batch, per_pair) if not math.isfinite(v)]
                    raise NonFiniteLossError(
                        message=f"Non-finite loss in EM iteration {state.iteration + 1}, epoch {epoch + 1}",
                        pair_ids=bad or [p.pair_id for p in batch],
                        details={
                            "iteration": state.iteration + 1,
                            "epoch": epoch + 1,
                            "lr": lr,
                            "params": params.fingerprint(),
                            "finite_gradients": finite_grads,
                        }
                    )
                scaled = {name: g / len(batch) for name, g in grads.items()}
                new_arrays, optimizer = adam_step(params.arrays, scaled, optimizer, lr)
                params = params.with_arrays(new_arrays)
            epochs_run += 1
            if use_val:
                val_nll = _mean_loss(params, graph, state.val_pairs)
                if val_nll < best_val:
                    best_val, best, stale = val_nll, (params, optimizer), 0
                else:
                    stale += 1
                    if stale >= patience:
                        logger.info("Early stopping after %d epochs (best val NLL %.4f)", epochs_run, best_val)
                        break

    if use_val:
        params, optimizer = best
    tables = ContextTables(params, graph, state.tables.reference)
    keys = tables.warm(p.context for p in pairs + state.val_pairs)
    state.delta_mu_max = _delta_mu(state.tables, tables, keys)
    state.model, state.optimizer, state.tables = params, optimizer, tables
    state.iteration += 1
    state.nll_history.append(_mean_loss(params, graph, pairs))
    state.last_e_step = {
        "mean_nll_before": before,
        "epochs_run": epochs_run,
        "val_nll": best_val if use_val else None,
    }
    return state


def choose_candidate(pair: PairSample, table: TableSource, use_nll: bool = False) -> int:
    """
    Index of the candidate whose summed mean is closest to the observed gap.

    Means come from the table of the pair's own context. Ties go to the
    shorter route, then to the smaller segment-id sequence. With ``use_nll``
    the route with the smallest aggregate NLL wins instead.
    """
    context_table = table.for_context(pair.context)
    best_idx = 0
    best_key: Optional[Tuple[float, float, Tuple[int, ...]]] = None
    for idx, route in enumerate(pair.candidates.routes):
        mu_total, sigma_total = context_table.route_moments(route, pair.time_step)
        score = pair_nll(mu_total, sigma_total, pair.t_obs) if use_nll else abs(pair.t_obs - mu_total)
        key = (score, route.total_length_m, route.segment_ids)
        if best_key is None or key < best_key:
            best_idx, best_key = idx, key
    return best_idx


def _assign(
    pairs: Sequence[PairSample], table: TableSource, use_nll: bool, threads: int
) -> int:
    if threads > 1 and len(pairs) > PAIR_SHARD_SIZE:
        chunks = [pairs[i:i + PAIR_SHARD_SIZE] for i in range(0, len(pairs), PAIR_SHARD_SIZE)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(lambda chunk: [choose_candidate(p, table, use_nll) for p in chunk], chunks)
            choices = [c for part in parts for c in part]
    else:
        choices = [choose_candidate(p, table, use_nll) for p in pairs]
    changed = 0
    for pair, choice in zip(pairs, choices):
        if pair.candidates.assigned_index != choice:
            pair.candidates.assigned_index = choice
            changed += 1
    return changed


def m_step(state: EmState, use_nll_assignment: bool = False, threads: int = 1) -> EmState:
    """Reassign every pair (training and validation) against the table of its context."""
    state.tables.warm(p.context for p in state.pairs + state.val_pairs)
    state.reassigned_count = _assign(state.pairs, state.tables, use_nll_assignment, threads)
    _assign(state.val_pairs, state.tables, use_nll_assignment, threads)
    return state


def refresh_candidates(
    state: EmState,
    net: RoadNetwork,
    m: int,
    tau: float,
    oversample: int = DEFAULT_OVERSAMPLE,
) -> None:
    """
    Rebuild every candidate set under the current means of the pair's context
    and time step, keeping the assigned route when it is still a candidate.
    """
    cache = CandidateCache(m, tau, oversample)
    for pair in state.pairs + state.val_pairs:
        weights = state.tables.for_context(pair.context).mu[:, pair.time_step]
        key_extra = (pair.context.key, pair.time_step)
        routes = cache.routes(net, weights, pair.origin_node, pair.dest_node, key_extra=key_extra)
        current = pair.assigned_route.segment_ids
        index = next((i for i, r in enumerate(routes) if r.segment_ids == current), 0)
        pair.candidates = CandidateSet(pair.origin_node, pair.dest_node, routes, index)


def init_em_state(
    net: RoadNetwork,
    trajectories: Sequence[SparseTrajectory],
    config: ExperimentConfig,
    graph: Optional[GraphInputs] = None,
    val_trajectories: Sequence[SparseTrajectory] = (),
    rng: Optional[np.random.Generator] = None,
) -> EmState:
    """Free-flow model, candidate sets, and the first assignment under free-flow means."""
    graph = graph or GraphInputs.from_network(net)
    model_cfg = config.model
    table_context = (model_cfg.table_day_of_week, model_cfg.table_weather_id, model_cfg.table_holiday_id)
    params = ModelParams.init(model_cfg, config.seed)
    cands = config.candidates
    cache = CandidateCache(cands.m, cands.tau, cands.oversample)
    radius = config.network.snap_radius_m
    pairs = build_pairs(net, trajectories, cands.m, cands.tau, cands.oversample, radius, cache)
    val_pairs = build_pairs(net, val_trajectories, cands.m, cands.tau, cands.oversample, radius, cache)
    if pairs and table_context not in {p.context.key for p in pairs}:
        logger.warning(
            "Reference context %s (day_of_week, weather_id, holiday_id) matches no training pair; "
            "reports and condition maps drawn from it are extrapolated",
            table_context,
        )
    state = EmState(
        iteration=0,
        model=params,
        tables=ContextTables(params, graph, table_context),
        pairs=pairs,
        val_pairs=val_pairs,
        optimizer=AdamState.zeros(params.arrays),
        rng=rng if rng is not None else np.random.default_rng(config.seed),
    )
    m_step(state, config.em.use_nll_assignment, config.threads)
    state.reassigned_count = None
    state.initial_assignments = state.assignments()
    logger.info(
        "EM initialized: %d training pairs, %d validation pairs, %d candidate sets",
        len(pairs), len(val_pairs), len(cache),
    )
    return state


def _em_loop(
    state: EmState,
    net: RoadNetwork,
    graph: GraphInputs,
    config: ExperimentConfig,
    on_iteration: Optional[IterationCallback] = None,
) -> EmState:
    em = config.em
    state.stop_reason = None
    while state.iteration < em.max_em_iters:
        e_step(state, graph, em.epochs, em.lr, em.batch_size, em.patience, config.threads)
        if em.refresh_candidates_every_iter:
            refresh_candidates(state, net, config.candidates.m, config.candidates.tau, config.candidates.oversample)
        m_step(state, em.use_nll_assignment, config.threads)
        record = IterationRecord(
            iteration=state.iteration,
            mean_nll_before=state.last_e_step.get("mean_nll_before", 0.0),
            mean_nll=state.nll_history[-1],
            delta_mu_max=state.delta_mu_max,
            reassigned_count=state.reassigned_count or 0,
            epochs_run=state.last_e_step.get("epochs_run", 0),
            val_nll=state.last_e_step.get("val_nll"),
            assignments=state.assignments(),
        )
        state.history.append(record)
        logger.info(
            "EM iteration %d: mean_nll=%.4f delta_mu_max=%.3f reassigned=%d",
            record.iteration, record.mean_nll, record.delta_mu_max, record.reassigned_count,
        )
        if on_iteration:
            on_iteration(state)
        if state.delta_mu_max < em.delta_mu_tol:
            state.stop_reason = STOP_DELTA_MU
            break
        if state.reassigned_count == 0:
            state.stop_reason = STOP_STABLE
            break
    else:
        state.stop_reason = STOP_MAX_ITERS
    return state


def run_em(
    net: RoadNetwork,
    trajectories: Sequence[SparseTrajectory],
    config: ExperimentConfig,
    rng: Optional[np.random.Generator] = None,
    val_trajectories: Sequence[SparseTrajectory] = (),
    on_iteration: Optional[IterationCallback] = None,
) -> Tuple[TravelTimeTable, EmState]:
    """
    Run EM to convergence.

    Stops when the largest change of any mean falls below
    ``config.em.delta_mu_tol`` seconds, when an M step reassigns no pair, or
    after ``config.em.max_em_iters`` iterations.
    """
    graph = GraphInputs.from_network(net)
    state = init_em_state(net, trajectories, config, graph, val_trajectories, rng)
    _em_loop(state, net, graph, config, on_iteration)
    return state.table, state


def resume_em(
    state: EmState,
    net: RoadNetwork,
    config: ExperimentConfig,
    on_iteration: Optional[IterationCallback] = None,
) -> Tuple[TravelTimeTable, EmState]:
    """Continue a saved run; a converged state is returned unchanged."""
    if state.converged:
        logger.info("EM state already converged (%s); nothing to resume", state.stop_reason)
        return state.table, state
    _em_loop(state, net, GraphInputs.from_network(net), config, on_iteration)
    return state.table, state


def assignment_counts(pairs: Sequence[PairSample], num_segments: int) -> np.ndarray:
    """How often each (segment, time step) is traversed by the assigned routes."""
    counts = np.zeros((num_segments, TIME_STEPS), dtype=np.int64)
    for pair in pairs:
        for sid in pair.assigned_route.segment_ids:
            counts[sid, pair.time_step] += 1
    return counts


def split_trajectories(
    trajectory_ids: Sequence[str],
    val_fraction: float,
    test_fraction: float,
    seed: int,
) -> Dict[str, List[str]]:
    """Seeded train/val/test split of trajectory ids (independent of input order)."""
    ids = sorted(trajectory_ids)
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = int(round(len(ids) * test_fraction))
    n_val = int(round(len(ids) * val_fraction))
    shuffled = [ids[i] for i in order]
    return {
        "test": sorted(shuffled[:n_test]),
        "val": sorted(shuffled[n_test:n_test + n_val]),
        "train": sorted(shuffled[n_test + n_val:]),
    }


@dataclass
class PairEstimate:
    position: int
    route: Optional[Route]
    seconds: float
    sigma: float
    error: Optional[str] = None


@dataclass
class TrajectoryEstimate:
    trajectory_id: str
    total_seconds: float
    total_sigma: float
    pairs: List[PairEstimate]

    @property
    def complete(self) -> bool:
        return all(p.error is None for p in self.pairs)

    @property
    def coverage(self) -> float:
        if not self.pairs:
            return 0.0
        return sum(p.error is None for p in self.pairs) / len(self.pairs)

    def route(self) -> Route:
        """Concatenation of the per-pair routes that were inferred."""
        ids: List[int] = []
        lengths: List[float] = []
        for p in self.pairs:
            if p.route is not None:
                ids.extend(p.route.segment_ids)
                lengths.extend(p.route.lengths_m)
        return Route(tuple(ids), tuple(lengths), self.total_seconds)


def infer_trajectory(
    table: TableSource,
    net: RoadNetwork,
    traj: SparseTrajectory,
    m: int,
    tau: float,
    oversample: int = DEFAULT_OVERSAMPLE,
    snap_radius_m: float = 100.0,
    cache: Optional[CandidateCache] = None,
) -> TrajectoryEstimate:
    """
    Estimate the travel time of a whole trajectory.

    Each pair takes the candidate with the smallest summed mean under the
    context of its departure (no observed gap is used). The total sums the
    successful pairs; snapping or routing failures are reported per pair and
    clear :attr:`TrajectoryEstimate.complete`.
    """
    cache = cache or CandidateCache(m, tau, oversample)
    weights = net.base_times()
    snapped: List[Optional[NodeId]] = []
    errors: List[Optional[str]] = []
    for lon, lat, _ in traj.fixes:
        try:
            snapped.append(snap_point(net, lon, lat, snap_radius_m))
            errors.append(None)
        except NoNodeInRange as e:
            snapped.append(None)
            errors.append(e.message)

    estimates: List[PairEstimate] = []
    total = 0.0
    var_total = 0.0
    for pos in range(len(traj.fixes) - 1):
        src, dst = snapped[pos], snapped[pos + 1]
        if src is None or dst is None:
            estimates.append(PairEstimate(pos, None, 0.0, 0.0, errors[pos] or errors[pos + 1]))
            continue
        context = TemporalContext.from_timestamp(traj.fixes[pos][2], traj.weather_id, traj.holiday_id)
        ts = context.time_step
        if src == dst:
            estimates.append(PairEstimate(pos, Route(()), 0.0, 0.0))
            continue
        try:
            routes = cache.routes(net, weights, src, dst)
        except NoPathError as e:
            estimates.append(PairEstimate(pos, None, 0.0, 0.0, e.message))
            continue
        context_table = table.for_context(context)
        route = min(routes, key=lambda r: (context_table.route_moments(r, ts)[0], r.total_length_m, r.segment_ids))
        mu_total, sigma_total = context_table.route_moments(route, ts)
        estimates.append(PairEstimate(pos, route, mu_total, sigma_total))
        total += mu_total
        var_total += sigma_total * sigma_total
    return TrajectoryEstimate(traj.trajectory_id, total, math.sqrt(var_total), estimates)


def _pair_record(pair: PairSample) -> Dict[str, Any]:
    ctx = pair.context
    return {
        "pair_id": pair.pair_id,
        "trajectory_id": pair.trajectory_id,
        "position": pair.position,
        "origin": pair.origin_node,
        "dest": pair.dest_node,
        "t_obs": pair.t_obs,
        "departure": pair.departure,
        "context": [ctx.time_step, ctx.day_of_week, ctx.weather_id, ctx.holiday_id],
        "candidates": [list(r.segment_ids) for r in pair.candidates.routes],
        "assigned_index": pair.candidates.assigned_index,
    }


def _pair_from_record(record: Dict[str, Any], net: RoadNetwork, weights: np.ndarray) -> PairSample:
    routes = tuple(Route.from_segments(net, ids, weights) for ids in record["candidates"])
    return PairSample(
        pair_id=int(record["pair_id"]),
        trajectory_id=str(record["trajectory_id"]),
        position=int(record["position"]),
        origin_node=record["origin"],
        dest_node=record["dest"],
        t_obs=float(record["t_obs"]),
        departure=float(record["departure"]),
        context=TemporalContext(*[int(v) for v in record["context"]]),
        candidates=CandidateSet(record["origin"], record["dest"], routes, int(record["assigned_index"])),
    )


def em_state_document(state: EmState, config: Optional[ExperimentConfig] = None) -> Dict[str, Any]:
    return {
        "format": EM_STATE_FORMAT,
        "version": 1,
        "iteration": state.iteration,
        "delta_mu_max": state.delta_mu_max if math.isfinite(state.delta_mu_max) else None,
        "reassigned_count": state.reassigned_count,
        "nll_history": state.nll_history,
        "stop_reason": state.stop_reason,
        "table_context": list(state.table_context),
        "initial_assignments": state.initial_assignments,
        "model": checkpoint_document(state.model),
        "optimizer": {
            "t": state.optimizer.t,
            "m": {k: v.reshape(-1).tolist() for k, v in state.optimizer.m.items()},
            "v": {k: v.reshape(-1).tolist() for k, v in state.optimizer.v.items()},
        },
        "rng": state.rng.bit_generator.state,
        "pairs": [_pair_record(p) for p in state.pairs],
        "val_pairs": [_pair_record(p) for p in state.val_pairs],
        "history": [dataclasses.asdict(r) for r in state.history],
        "config": config.to_dict() if config is not None else None,
    }


def save_em_state(state: EmState, path: Union[str, Path], config: Optional[ExperimentConfig] = None) -> Path:
    """
    Raises:
        FileIOError: If the file cannot be written
    """
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(json.dumps(em_state_document(state, config)), encoding="utf-8")
    except OSError as e:
        raise FileIOError(
            message=f"Failed to write EM state: {str(e)}",
            file_path=str(file_path),
            operation="write"
        )
    return file_path


def load_em_state(path: Union[str, Path], net: RoadNetwork) -> EmState:
    """
    Restore a saved EM state against the network it was trained on.

    Raises:
        FileIOError: If the file cannot be read or parsed
        TrainingError: If the document is not a compatible EM state
    """
    file_path = Path(path)
    try:
        doc = json.loads(file_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FileIOError(
            message=f"Failed to read EM state: {str(e)}",
            file_path=str(file_path),
            operation="read"
        )
    if not isinstance(doc, dict) or doc.get("format") != EM_STATE_FORMAT:
        raise TrainingError(f"{file_path} is not an EM state file", {"file_path": str(file_path)})
    try:
        model = params_from_document(doc["model"])
        shapes = {k: v.shape for k, v in model.arrays.items()}
        optimizer = AdamState(
            m={k: np.asarray(v, dtype=float).reshape(shapes[k]) for k, v in doc["optimizer"]["m"].items()},
            v={k: np.asarray(v, dtype=float).reshape(shapes[k]) for k, v in doc["optimizer"]["v"].items()},
            t=int(doc["optimizer"]["t"]),
        )
        rng = np.random.default_rng()
        rng.bit_generator.state = doc["rng"]
        weights = net.base_times()
        pairs = [_pair_from_record(r, net, weights) for r in doc["pairs"]]
        val_pairs = [_pair_from_record(r, net, weights) for r in doc["val_pairs"]]
        table_context = tuple(int(v) for v in doc["table_context"])
        graph = GraphInputs.from_network(net)
        delta = doc["delta_mu_max"]
        return EmState(
            iteration=int(doc["iteration"]),
            model=model,
            tables=ContextTables(model, graph, (table_context[0], table_context[1], table_context[2])),
            pairs=pairs,
            val_pairs=val_pairs,
            optimizer=optimizer,
            rng=rng,
            delta_mu_max=math.inf if delta is None else float(delta),
            reassigned_count=doc["reassigned_count"],
            nll_history=[float(v) for v in doc["nll_history"]],
            history=[IterationRecord(**r) for r in doc["history"]],
            initial_assignments=list(doc["initial_assignments"]),
            stop_reason=doc["stop_reason"],
        )
    except (KeyError, TypeError, ValueError, IndexError, ValidationError) as e:
        raise TrainingError(f"Corrupt EM state in {file_path}: {str(e)}", {"file_path": str(file_path)})
