"""
Spatio-temporal travel-time model.

Maps static road features and a half-hour time-step context to the mean and
standard deviation (seconds) of every segment's travel time:

* road features (class, lane bucket, one-way flag) are embedded and passed
  through a three-layer relational graph convolution whose relations are the
  neighbor's road class;
* the time step, day of week, weather and holiday are encoded by a one-layer
  MLP;
* the two representations are summed and fed to a mean head
  (``base_time * exp(clamp(h))``) and a std head (``sigma_min + softplus(h)``).

The final layer of both heads starts at zero, so an untrained model predicts
free-flow time exactly and a constant initial std.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from sparse_eta.atoms.config import ModelConfig
from sparse_eta.atoms.error_utils import FileIOError, ValidationError
from sparse_eta.atoms.lognormal import to_lognormal
from sparse_eta.molecules import autodiff as ad
from sparse_eta.molecules.autodiff import GradientTape, Variable
from sparse_eta.molecules.road_network import (
    CLASS_INDEX,
    ROAD_CLASSES,
    RelationalAdjacency,
    RoadNetwork,
    RoadSegment,
    build_relational_adjacency,
)
from sparse_eta.molecules.routing import Route

logger = logging.getLogger(__name__)

TIME_STEPS = 48
SLOT_SECONDS = 1800
SECONDS_PER_DAY = 86400
DAYS_PER_WEEK = 7
LANE_BUCKETS = 4

CLASS_EMB_DIM = 8
LANES_EMB_DIM = 4
ONEWAY_EMB_DIM = 2
FEATURE_DIM = CLASS_EMB_DIM + LANES_EMB_DIM + ONEWAY_EMB_DIM
WEATHER_EMB_DIM = 8
HOLIDAY_EMB_DIM = 4
TEMPORAL_IN_DIM = DAYS_PER_WEEK + TIME_STEPS + WEATHER_EMB_DIM + HOLIDAY_EMB_DIM
RGCN_LAYERS = 3

CHECKPOINT_FORMAT = "sparse-eta-checkpoint"
CHECKPOINT_VERSION = 1

_ZERO_INIT = ("mu_w2", "mu_b2", "sigma_w2")

# (day_of_week, weather_id, holiday_id): everything in a context but the time step
ContextKey = Tuple[int, int, int]


def lanes_bucket(lanes: int) -> int:
    """Lane count to embedding row: 1, 2, 3 and 4+ lanes map to 0..3."""
    return min(max(int(lanes), 1), LANE_BUCKETS) - 1


def time_step_of(unix_ts: float) -> int:
    """Half-hour slot of the day (UTC) for a unix timestamp."""
    return int((float(unix_ts) % SECONDS_PER_DAY) // SLOT_SECONDS)


@dataclass(frozen=True)
class TemporalContext:
    time_step: int
    day_of_week: int = 0
    weather_id: int = 0
    holiday_id: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.time_step < TIME_STEPS:
            raise ValidationError(
                message=f"time_step must be in [0, {TIME_STEPS})",
                input_value=str(self.time_step),
                validation_type="time_step"
            )
        if not 0 <= self.day_of_week < DAYS_PER_WEEK:
            raise ValidationError(
                message="day_of_week must be in [0, 7)",
                input_value=str(self.day_of_week),
                validation_type="day_of_week"
            )
        if self.weather_id < 0 or self.holiday_id < 0:
            raise ValidationError(
                message="weather_id and holiday_id must be non-negative",
                input_value=f"{self.weather_id}, {self.holiday_id}",
                validation_type="context_id"
            )

    @property
    def key(self) -> ContextKey:
        return (self.day_of_week, self.weather_id, self.holiday_id)

    @classmethod
    def from_timestamp(cls, unix_ts: float, weather_id: int = 0, holiday_id: int = 0) -> "TemporalContext":
        moment = datetime.fromtimestamp(float(unix_ts), tz=timezone.utc)
        return cls(
            time_step=time_step_of(unix_ts),
            day_of_week=moment.weekday(),
            weather_id=weather_id,
            holiday_id=holiday_id,
        )


def parameter_shapes(hidden_dim: int, n_weather: int, n_holiday: int) -> Dict[str, Tuple[int, ...]]:
    """Name and shape of every trainable array, in a fixed order."""
    shapes: Dict[str, Tuple[int, ...]] = {
        "emb_class": (len(ROAD_CLASSES), CLASS_EMB_DIM),
        "emb_lanes": (LANE_BUCKETS, LANES_EMB_DIM),
        "emb_oneway": (2, ONEWAY_EMB_DIM),
    }
    in_dim = FEATURE_DIM
    for layer in range(1, RGCN_LAYERS + 1):
        shapes[f"rgcn{layer}_self"] = (in_dim, hidden_dim)
        for k in range(len(ROAD_CLASSES)):
            shapes[f"rgcn{layer}_rel{k}"] = (in_dim, hidden_dim)
        in_dim = hidden_dim
    shapes.update({
        "emb_weather": (n_weather, WEATHER_EMB_DIM),
        "emb_holiday": (n_holiday, HOLIDAY_EMB_DIM),
        "temporal_w": (TEMPORAL_IN_DIM, hidden_dim),
        "temporal_b": (hidden_dim,),
    })
    for head in ("mu", "sigma"):
        shapes.update({
            f"{head}_w1": (hidden_dim, hidden_dim),
            f"{head}_b1": (hidden_dim,),
            f"{head}_w2": (hidden_dim, 1),
            f"{head}_b2": (1,),
        })
    return shapes


def sigma_bias_for(sigma_init: float, sigma_min: float) -> float:
    """Std-head bias that makes ``sigma_min + softplus(bias) == sigma_init``."""
    return math.log(math.expm1(sigma_init - sigma_min))


class ModelParams:
    """
    All trainable arrays of the model plus the fixed link-function settings.

    Instances are treated as immutable: optimizer steps build a new one
    through :meth:`with_arrays`.
    """

    def __init__(
        self,
        arrays: Mapping[str, np.ndarray],
        hidden_dim: int,
        mu_clamp: float = 3.0,
        sigma_min: float = 1.0,
        seed: int = 0,
    ):
        self.arrays: Dict[str, np.ndarray] = {
            name: np.array(value, dtype=float) for name, value in arrays.items()
        }
        self.hidden_dim = hidden_dim
        self.mu_clamp = mu_clamp
        self.sigma_min = sigma_min
        self.seed = seed
        expected = parameter_shapes(hidden_dim, self.n_weather, self.n_holiday)
        for name, shape in expected.items():
            if name not in self.arrays or self.arrays[name].shape != shape:
                got = self.arrays[name].shape if name in self.arrays else None
                raise ValidationError(
                    message=f"Parameter '{name}' has shape {got}, expected {shape}",
                    input_value=name,
                    validation_type="parameter_shape"
                )

    @property
    def n_weather(self) -> int:
        return int(self.arrays["emb_weather"].shape[0]) if "emb_weather" in self.arrays else 0

    @property
    def n_holiday(self) -> int:
        return int(self.arrays["emb_holiday"].shape[0]) if "emb_holiday" in self.arrays else 0

    @classmethod
    def init(cls, config: ModelConfig, seed: int) -> "ModelParams":
        """
        Seeded initialization.

        Embeddings are drawn from ``N(0, init_scale)``, weight matrices from a
        Glorot-uniform range, biases start at zero, the heads' final layers at
        zero, and the std-head bias at :func:`sigma_bias_for`.
        """
        rng = np.random.default_rng(seed)
        arrays: Dict[str, np.ndarray] = {}
        for name, shape in parameter_shapes(config.hidden_dim, config.n_weather, config.n_holiday).items():
            if name in _ZERO_INIT or len(shape) == 1:
                arrays[name] = np.zeros(shape)
            elif name.startswith("emb_"):
                arrays[name] = rng.normal(0.0, config.init_scale, size=shape)
            else:
                limit = math.sqrt(6.0 / (shape[0] + shape[1]))
                arrays[name] = rng.uniform(-limit, limit, size=shape)
        arrays["sigma_b2"] = np.full((1,), sigma_bias_for(config.sigma_init, config.sigma_min))
        return cls(
            arrays,
            hidden_dim=config.hidden_dim,
            mu_clamp=config.mu_clamp,
            sigma_min=config.sigma_min,
            seed=seed,
        )

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return ModelParams(
            arrays,
            hidden_dim=self.hidden_dim,
            mu_clamp=self.mu_clamp,
            sigma_min=self.sigma_min,
            seed=self.seed,
        )

    def copy(self) -> "ModelParams":
        return self.with_arrays(self.arrays)

    def fingerprint(self) -> str:
        """Short content hash used to tie a table to the parameters that produced it."""
        digest = hashlib.sha1()
        for name in sorted(self.arrays):
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(self.arrays[name]).tobytes())
        return digest.hexdigest()[:12]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __repr__(self) -> str:
        count = sum(a.size for a in self.arrays.values())
        return f"ModelParams(hidden_dim={self.hidden_dim}, arrays={len(self.arrays)}, values={count})"


@dataclass(frozen=True)
class GraphInputs:
    """Static per-segment model inputs derived once from a network."""
    class_index: np.ndarray
    lanes_index: np.ndarray
    oneway_index: np.ndarray
    base_times: np.ndarray
    relation_edges: Tuple[Tuple[np.ndarray, np.ndarray, np.ndarray], ...]

    @property
    def num_segments(self) -> int:
        return int(self.base_times.shape[0])

    @classmethod
    def from_network(cls, net: RoadNetwork, adj: Optional[RelationalAdjacency] = None) -> "GraphInputs":
        adj = adj or build_relational_adjacency(net)
        return cls(
            class_index=np.array([CLASS_INDEX[s.road_class] for s in net.segments], dtype=np.int64),
            lanes_index=np.array([lanes_bucket(s.lanes) for s in net.segments], dtype=np.int64),
            oneway_index=np.array([int(s.oneway) for s in net.segments], dtype=np.int64),
            base_times=net.base_times(),
            relation_edges=tuple(adj.relation_edges(k) for k in range(adj.num_relations)),
        )


@dataclass
class TravelTimeTable:
    """Per-segment, per-time-step travel-time mean and std in seconds."""
    mu: np.ndarray
    sigma: np.ndarray
    producing_params: str = ""

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 2:
            raise ValidationError(
                message="mu and sigma must be matrices of equal shape",
                input_value=f"{self.mu.shape} vs {self.sigma.shape}",
                validation_type="table_shape"
            )
        if not (np.all(np.isfinite(self.mu)) and np.all(self.mu > 0.0)):
            raise ValidationError(message="mu must be finite and positive", validation_type="table_values")
        if not (np.all(np.isfinite(self.sigma)) and np.all(self.sigma >= 0.0)):
            raise ValidationError(message="sigma must be finite and non-negative", validation_type="table_values")

    @property
    def num_segments(self) -> int:
        return int(self.mu.shape[0])

    @property
    def num_time_steps(self) -> int:
        return int(self.mu.shape[1])

    def lognormal(self) -> Tuple[np.ndarray, np.ndarray]:
        """Moment-matched lognormal ``(log_mu, log_sigma)`` per entry."""
        log_mu, log_sigma = to_lognormal(self.mu, self.sigma)
        return np.asarray(log_mu), np.asarray(log_sigma)

    def for_context(self, context: TemporalContext) -> "TravelTimeTable":
        """A stand-alone table answers for every context."""
        return self

    def route_moments(self, route: Union[Route, Sequence[int]], time_step: int) -> Tuple[float, float]:
        return aggregate_route(route, self.mu, self.sigma, time_step)


@dataclass(frozen=True)
class RouteBatch:
    """
    Flattened (pair, segment) entries of a set of routes for one loss evaluation.

    ``segment_index[j]`` is traversed by pair ``pair_index[j]`` under context
    ``contexts[context_index[j]]``.
    """
    segment_index: np.ndarray
    context_index: np.ndarray
    pair_index: np.ndarray
    contexts: Tuple[TemporalContext, ...]
    t_obs: np.ndarray

    @property
    def num_pairs(self) -> int:
        return int(self.t_obs.shape[0])

    @classmethod
    def from_routes(
        cls,
        routes: Sequence[Sequence[int]],
        contexts: Sequence[TemporalContext],
        t_obs: Sequence[float],
    ) -> "RouteBatch":
        """
        Raises:
            ValidationError: On length mismatch or an empty route
        """
        if not len(routes) == len(contexts) == len(t_obs):
            raise ValidationError(
                message="routes, contexts and t_obs must have equal length",
                input_value=f"{len(routes)}, {len(contexts)}, {len(t_obs)}",
                validation_type="batch_shape"
            )
        unique: Dict[TemporalContext, int] = {}
        seg: List[int] = []
        ctx: List[int] = []
        pair: List[int] = []
        for p, (route, context) in enumerate(zip(routes, contexts)):
            ids = route.segment_ids if isinstance(route, Route) else tuple(route)
            if not ids:
                raise ValidationError(
                    message=f"Pair {p} has an empty route",
                    input_value=str(p),
                    validation_type="batch_route"
                )
            c = unique.setdefault(context, len(unique))
            seg.extend(ids)
            ctx.extend([c] * len(ids))
            pair.extend([p] * len(ids))
        return cls(
            segment_index=np.asarray(seg, dtype=np.int64),
            context_index=np.asarray(ctx, dtype=np.int64),
            pair_index=np.asarray(pair, dtype=np.int64),
            contexts=tuple(unique),
            t_obs=np.asarray(t_obs, dtype=float),
        )


def _segment_embedding(p: Dict[str, Variable], graph: GraphInputs, rows: Optional[np.ndarray] = None) -> Variable:
    rows = np.arange(graph.num_segments) if rows is None else rows
    return ad.concat_cols([
        ad.gather_rows(p["emb_class"], graph.class_index[rows]),
        ad.gather_rows(p["emb_lanes"], graph.lanes_index[rows]),
        ad.gather_rows(p["emb_oneway"], graph.oneway_index[rows]),
    ])


def _rgcn(
    p: Dict[str, Variable],
    relation_edges: Sequence[Tuple[np.ndarray, np.ndarray, np.ndarray]],
    h0: Variable,
) -> Variable:
    n = h0.shape[0]
    h = h0
    for layer in range(1, RGCN_LAYERS + 1):
        out = ad.matmul(h, p[f"rgcn{layer}_self"])
        for k, (dst, src, weight) in enumerate(relation_edges):
            if dst.size == 0:
                continue
            messages = ad.matmul(h, p[f"rgcn{layer}_rel{k}"])
            out = ad.add(out, ad.segment_sum(ad.scale_rows(ad.gather_rows(messages, src), weight), dst, n))
        h = ad.relu(out) if layer < RGCN_LAYERS else out
    return h


def _temporal(tape: GradientTape, p: Dict[str, Variable], contexts: Sequence[TemporalContext]) -> Variable:
    n = len(contexts)
    onehot = np.zeros((n, DAYS_PER_WEEK + TIME_STEPS))
    rows = np.arange(n)
    onehot[rows, [c.day_of_week for c in contexts]] = 1.0
    onehot[rows, [DAYS_PER_WEEK + c.time_step for c in contexts]] = 1.0
    x = ad.concat_cols([
        tape.constant(onehot),
        ad.gather_rows(p["emb_weather"], np.array([c.weather_id for c in contexts], dtype=np.int64)),
        ad.gather_rows(p["emb_holiday"], np.array([c.holiday_id for c in contexts], dtype=np.int64)),
    ])
    return ad.relu(ad.add(ad.matmul(x, p["temporal_w"]), p["temporal_b"]))


def _head(p: Dict[str, Variable], prefix: str, fused: Variable) -> Variable:
    hidden = ad.relu(ad.add(ad.matmul(fused, p[f"{prefix}_w1"]), p[f"{prefix}_b1"]))
    return ad.add(ad.matmul(hidden, p[f"{prefix}_w2"]), p[f"{prefix}_b2"])


def _link(
    params: ModelParams, h_mu: Variable, h_sigma: Variable, base: np.ndarray
) -> Tuple[Variable, Variable]:
    mu = ad.mul(base.reshape(-1, 1), ad.exp(ad.clamp(h_mu, -params.mu_clamp, params.mu_clamp)))
    sigma = ad.add(ad.softplus(h_sigma), params.sigma_min)
    return mu, sigma


def _check_contexts(params: ModelParams, contexts: Sequence[TemporalContext]) -> None:
    for c in contexts:
        if c.weather_id >= params.n_weather or c.holiday_id >= params.n_holiday:
            raise ValidationError(
                message="Context id exceeds the model's embedding table",
                input_value=f"weather={c.weather_id}, holiday={c.holiday_id}",
                validation_type="context_id",
                details={"n_weather": params.n_weather, "n_holiday": params.n_holiday}
            )


def forward_entries(
    tape: GradientTape,
    p: Dict[str, Variable],
    params: ModelParams,
    graph: GraphInputs,
    segment_index: np.ndarray,
    context_index: np.ndarray,
    contexts: Sequence[TemporalContext],
) -> Tuple[Variable, Variable]:
    """``(mu, sigma)`` column vectors for each requested (segment, context) entry."""
    _check_contexts(params, contexts)
    s_v = _rgcn(p, graph.relation_edges, _segment_embedding(p, graph))
    s_t = _temporal(tape, p, contexts)
    fused = ad.add(ad.gather_rows(s_v, segment_index), ad.gather_rows(s_t, context_index))
    return _link(
        params,
        _head(p, "mu", fused),
        _head(p, "sigma", fused),
        graph.base_times[segment_index],
    )


def _batch_nll(tape: GradientTape, params: ModelParams, graph: GraphInputs, batch: RouteBatch) -> Variable:
    p = tape.watch_all(params.arrays)
    mu, sigma = forward_entries(
        tape, p, params, graph, batch.segment_index, batch.context_index, batch.contexts
    )
    mu_total = ad.segment_sum(mu, batch.pair_index, batch.num_pairs)
    var_total = ad.segment_sum(ad.square(sigma), batch.pair_index, batch.num_pairs)
    residual = ad.sub(batch.t_obs.reshape(-1, 1), mu_total)
    fit = ad.div(ad.square(residual), ad.scale(var_total, 2.0))
    spread = ad.scale(ad.log(ad.scale(var_total, 2.0 * math.pi)), 0.5)
    return ad.add(fit, spread)


def pair_losses(params: ModelParams, graph: GraphInputs, batch: RouteBatch) -> np.ndarray:
    """Per-pair aggregate NLL values without gradients."""
    return _batch_nll(GradientTape(), params, graph, batch).value.reshape(-1)


def loss_and_grads(
    params: ModelParams, graph: GraphInputs, batch: RouteBatch
) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    """
    Summed aggregate NLL of a batch, its gradient, and the per-pair losses.

    The loss of one pair is ``(T_obs - mu_T)^2 / (2 var_T) + log(2 pi var_T) / 2``
    where ``mu_T`` and ``var_T`` sum the route's segment means and variances.
    """
    tape = GradientTape()
    per_pair = _batch_nll(tape, params, graph, batch)
    total = ad.reduce_sum(per_pair)
    grads = tape.backward(total)
    return float(total.value), grads, per_pair.value.reshape(-1).copy()


def embed_segment_features(seg: RoadSegment, params: ModelParams) -> np.ndarray:
    """``[class(8) | lanes(4) | oneway(2)]`` embedding of one segment."""
    return np.concatenate([
        params["emb_class"][CLASS_INDEX[seg.road_class]],
        params["emb_lanes"][lanes_bucket(seg.lanes)],
        params["emb_oneway"][int(seg.oneway)],
    ])


def rgcn_forward(adj: RelationalAdjacency, h0: np.ndarray, params: ModelParams) -> np.ndarray:
    """Three relational convolution layers over the segment graph."""
    tape = GradientTape()
    p = tape.watch_all(params.arrays)
    edges = [adj.relation_edges(k) for k in range(adj.num_relations)]
    return _rgcn(p, edges, tape.constant(h0)).value


def temporal_embed(ctx: TemporalContext, params: ModelParams) -> np.ndarray:
    _check_contexts(params, [ctx])
    tape = GradientTape()
    p = tape.watch_all(params.arrays)
    return _temporal(tape, p, [ctx]).value[0]


def predict_params(
    s_v: np.ndarray,
    s_t: np.ndarray,
    seg_id: int,
    params: ModelParams,
    base_time: float,
) -> Tuple[float, float]:
    """Mean and std of one segment's travel time from its fused representation."""
    if not base_time > 0.0:
        raise ValidationError(
            message="base_time must be positive",
            input_value=str(base_time),
            validation_type="base_time"
        )
    tape = GradientTape()
    p = tape.watch_all(params.arrays)
    fused = tape.constant((np.asarray(s_v)[seg_id] + np.asarray(s_t)).reshape(1, -1))
    mu, sigma = _link(params, _head(p, "mu", fused), _head(p, "sigma", fused), np.array([base_time]))
    return float(mu.value[0, 0]), float(sigma.value[0, 0])


def aggregate_route(
    route: Union[Route, Sequence[int]],
    mu_table: np.ndarray,
    sigma_table: np.ndarray,
    time_step: int,
) -> Tuple[float, float]:
    """
    Route-level mean and std: summed means, root of summed variances.

    Example:
        >>> mu = np.array([[60.0], [120.0]])
        >>> sigma = np.array([[3.0], [4.0]])
        >>> aggregate_route([0, 1], mu, sigma, 0)
        (180.0, 5.0)
    """
    ids = list(route.segment_ids if isinstance(route, Route) else route)
    if not ids:
        return 0.0, 0.0
    mu_total = 0.0
    var_total = 0.0
    for sid in ids:
        mu_total += float(mu_table[sid, time_step])
        s = float(sigma_table[sid, time_step])
        var_total += s * s
    return mu_total, math.sqrt(var_total)


def pair_nll(mu_total: float, sigma_total: float, t_obs: float) -> float:
    """
    Gaussian negative log-likelihood of an observed route time.

    Example:
        >>> round(pair_nll(300.0, 30.0, 300.0), 4)
        4.3201
    """
    var = sigma_total * sigma_total
    return (t_obs - mu_total) ** 2 / (2.0 * var) + 0.5 * math.log(2.0 * math.pi * var)


def materialize_table(
    params: ModelParams,
    graph: GraphInputs,
    day_of_week: int = 0,
    weather_id: int = 0,
    holiday_id: int = 0,
) -> TravelTimeTable:
    """Evaluate the model for every segment and every time step of a reference day."""
    contexts = [TemporalContext(ts, day_of_week, weather_id, holiday_id) for ts in range(TIME_STEPS)]
    n = graph.num_segments
    seg_index = np.repeat(np.arange(n), TIME_STEPS)
    ctx_index = np.tile(np.arange(TIME_STEPS), n)
    tape = GradientTape()
    p = tape.watch_all(params.arrays)
    mu, sigma = forward_entries(tape, p, params, graph, seg_index, ctx_index, contexts)
    return TravelTimeTable(
        mu=mu.value.reshape(n, TIME_STEPS),
        sigma=sigma.value.reshape(n, TIME_STEPS),
        producing_params=params.fingerprint(),
    )


class ContextTables:
    """
    Tables of one model, one per (day of week, weather, holiday) context,
    materialized on first use.

    ``reference`` names the context of :attr:`table`, the single table that
    reports and condition maps are drawn from.
    """

    def __init__(self, params: ModelParams, graph: GraphInputs, reference: ContextKey = (0, 0, 0)):
        self.params = params
        self.graph = graph
        self.reference = (int(reference[0]), int(reference[1]), int(reference[2]))
        self._tables: Dict[ContextKey, TravelTimeTable] = {}

    def for_key(self, key: ContextKey) -> TravelTimeTable:
        if key not in self._tables:
            self._tables[key] = materialize_table(self.params, self.graph, *key)
        return self._tables[key]

    def for_context(self, context: TemporalContext) -> TravelTimeTable:
        return self.for_key(context.key)

    @property
    def table(self) -> TravelTimeTable:
        return self.for_key(self.reference)

    def warm(self, contexts: Iterable[TemporalContext]) -> List[ContextKey]:
        """Materialize every context in ``contexts``; returns the sorted keys."""
        keys = sorted({c.key for c in contexts} | {self.reference})
        for key in keys:
            self.for_key(key)
        return keys

    def keys(self) -> List[ContextKey]:
        return sorted(self._tables)


TableSource = Union[TravelTimeTable, ContextTables]


def checkpoint_document(params: ModelParams, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    doc: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "seed": params.seed,
        "hidden_dim": params.hidden_dim,
        "mu_clamp": params.mu_clamp,
        "sigma_min": params.sigma_min,
        "fingerprint": params.fingerprint(),
        "params": {
            name: {"shape": list(value.shape), "data": value.reshape(-1).tolist()}
            for name, value in params.arrays.items()
        },
    }
    if extra:
        doc["extra"] = extra
    return doc


def params_from_document(doc: Dict[str, Any]) -> ModelParams:
    """
    Raises:
        ValidationError: If the document is not a model checkpoint
    """
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(
            message="Not a sparse-eta checkpoint",
            validation_type="checkpoint_format"
        )
    try:
        arrays = {
            name: np.asarray(entry["data"], dtype=float).reshape(entry["shape"])
            for name, entry in doc["params"].items()
        }
        return ModelParams(
            arrays,
            hidden_dim=int(doc["hidden_dim"]),
            mu_clamp=float(doc["mu_clamp"]),
            sigma_min=float(doc["sigma_min"]),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ValidationError(
            message=f"Malformed checkpoint: {str(e)}",
            validation_type="checkpoint_format"
        )


def save_checkpoint(
    params: ModelParams, path: Union[str, Path], extra: Optional[Dict[str, Any]] = None
) -> Path:
    """
    Write every parameter array with its shape as JSON.

    Floats are written with ``repr`` precision, so loading reproduces the
    arrays bit for bit.

    Raises:
        FileIOError: If the file cannot be written
    """
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(json.dumps(checkpoint_document(params, extra)), encoding="utf-8")
    except OSError as e:
        raise FileIOError(
            message=f"Failed to write checkpoint: {str(e)}",
            file_path=str(file_path),
            operation="write"
        )
    logger.info("Saved checkpoint %s (%s)", file_path, params.fingerprint())
    return file_path


def load_checkpoint(path: Union[str, Path]) -> ModelParams:
    """
    Raises:
        FileIOError: If the file cannot be read or parsed
        ValidationError: If the content is not a checkpoint
    """
    file_path = Path(path)
    try:
        doc = json.loads(file_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise FileIOError(
            message=f"Failed to read checkpoint: {str(e)}",
            file_path=str(file_path),
            operation="read"
        )
    return params_from_document(doc)
