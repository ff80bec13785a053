"""
Synthetic ground truth for closed-loop experiments.

Builds a lattice road network, assigns every segment a time-varying true
travel-time distribution with morning and evening rush hours, drives trips
along known routes, and thins the resulting dense trajectories down to
sparse GPS fixes at a chosen sampling ratio.

All generators are pure given their inputs and seed. Trips use per-trip
seeds derived from ``(master_seed, trip_index)`` so they can be generated
in any order or in parallel with identical results.
"""

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date, datetime, timezone
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from sparse_eta.atoms.config import NetworkConfig, SimulationConfig
from sparse_eta.atoms.error_utils import ValidationError
from sparse_eta.atoms.geo import offset_degrees
from sparse_eta.atoms.input_validator import validate_keep_ratio, validate_positive_int
from sparse_eta.atoms.lognormal import sample_truncated_lognormal
from sparse_eta.molecules.road_network import Node, NodeId, RoadClass, RoadNetwork, RoadSegment
from sparse_eta.molecules.routing import k_shortest_paths
from sparse_eta.molecules.trajectories import DenseTrajectory, SparseTrajectory
from sparse_eta.organisms.st_model import TIME_STEPS, time_step_of

logger = logging.getLogger(__name__)

ARTERY_SPEED_KPH = 60.0
LOCAL_SPEED_KPH = 30.0

MORNING_PEAK = (16, 17, 18)
EVENING_PEAK = (34, 35, 36)
SHOULDERS = (15, 19, 33, 37)

_PEAK_GROUP = {
    RoadClass.TRUNK: "primary",
    RoadClass.TRUNK_LINK: "primary",
    RoadClass.FREEWAY_LINK: "primary",
    RoadClass.PRIMARY: "primary",
    RoadClass.PRIMARY_LINK: "primary",
    RoadClass.SECONDARY: "secondary",
    RoadClass.SECONDARY_LINK: "secondary",
    RoadClass.TERTIARY: "tertiary",
    RoadClass.TERTIARY_LINK: "tertiary",
}


def gen_grid_network(
    rows: int,
    cols: int,
    spacing_m: float = 500.0,
    artery_stride: int = 3,
    seed: int = 0,
    origin_lon: float = 108.94,
    origin_lat: float = 34.26,
) -> RoadNetwork:
    """
    A two-way ``rows x cols`` lattice.

    Node ``r * cols + c`` sits ``c * spacing_m`` east and ``r * spacing_m``
    north of the origin. Every ``artery_stride``-th row of horizontal roads
    is a primary artery (60 kph, 3-4 lanes); all other roads are tertiary
    (30 kph, 1-2 lanes). The two directions of a road are consecutive
    segment ids and share their lane count.

    Raises:
        ValidationError: If the grid is smaller than 2x2
    """
    validate_positive_int(artery_stride, "artery_stride")
    if rows < 2 or cols < 2:
        raise ValidationError(
            message="Grid networks need at least 2 rows and 2 columns",
            input_value=f"{rows}x{cols}",
            validation_type="grid_shape"
        )
    rng = np.random.default_rng(seed)
    nodes: List[Node] = []
    for r in range(rows):
        for c in range(cols):
            dlon, dlat = offset_degrees(origin_lat, c * spacing_m, r * spacing_m)
            nodes.append(Node(id=r * cols + c, lon=origin_lon + dlon, lat=origin_lat + dlat))

    segments: List[RoadSegment] = []

    def add_road(a: int, b: int, artery: bool) -> None:
        road_class = RoadClass.PRIMARY if artery else RoadClass.TERTIARY
        speed = ARTERY_SPEED_KPH if artery else LOCAL_SPEED_KPH
        lanes = int((3 if artery else 1) + rng.integers(0, 2))
        for u, v in ((a, b), (b, a)):
            segments.append(RoadSegment(
                id=len(segments),
                from_node=u,
                to_node=v,
                length_m=float(spacing_m),
                road_class=road_class,
                lanes=lanes,
                oneway=False,
                speed_limit_kph=speed,
            ))

    for r in range(rows):
        for c in range(cols - 1):
            add_road(r * cols + c, r * cols + c + 1, artery=(r % artery_stride == 0))
    for r in range(rows - 1):
        for c in range(cols):
            add_road(r * cols + c, (r + 1) * cols + c, artery=False)

    net = RoadNetwork(nodes, segments)
    logger.info("Generated %dx%d grid: %r", rows, cols, net)
    return net


def grid_from_config(config: NetworkConfig, seed: int) -> RoadNetwork:
    return gen_grid_network(
        rows=config.rows,
        cols=config.cols,
        spacing_m=config.spacing_m,
        artery_stride=config.artery_stride,
        seed=seed,
        origin_lon=config.origin_lon,
        origin_lat=config.origin_lat,
    )


def congestion_curve(peak: float) -> np.ndarray:
    """
    Per-time-step multiplier: ``peak`` during 08:00-09:30 and 17:00-18:30,
    halfway to it in the adjacent half hours, 1 elsewhere.
    """
    curve = np.ones(TIME_STEPS)
    curve[list(MORNING_PEAK + EVENING_PEAK)] = peak
    curve[list(SHOULDERS)] = 1.0 + 0.5 * (peak - 1.0)
    return curve


@dataclass(frozen=True)
class CongestionProfile:
    primary_peak: float = 2.5
    secondary_peak: float = 2.0
    tertiary_peak: float = 1.5
    cv: float = 0.15
    noise_sd: float = 0.1

    def __post_init__(self) -> None:
        if min(self.primary_peak, self.secondary_peak, self.tertiary_peak) < 1.0:
            raise ValidationError(
                message="Peak multipliers must be at least 1",
                validation_type="congestion_peak"
            )
        if self.cv < 0.0 or self.noise_sd < 0.0:
            raise ValidationError(
                message="cv and noise_sd must be non-negative",
                validation_type="congestion_noise"
            )

    @classmethod
    def from_config(cls, config: SimulationConfig) -> "CongestionProfile":
        return cls(
            primary_peak=config.primary_peak,
            secondary_peak=config.secondary_peak,
            tertiary_peak=config.tertiary_peak,
            cv=config.cv,
            noise_sd=config.noise_sd,
        )

    def peak_for(self, road_class: RoadClass) -> float:
        group = _PEAK_GROUP[road_class]
        return {
            "primary": self.primary_peak,
            "secondary": self.secondary_peak,
            "tertiary": self.tertiary_peak,
        }[group]


@dataclass
class GroundTruth:
    """True per-segment, per-time-step travel-time moments (seconds)."""
    true_mu: np.ndarray
    true_sigma: np.ndarray
    rush_profile: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        if not (np.all(self.true_mu > 0.0) and np.all(self.true_sigma >= 0.0)):
            raise ValidationError(message="Ground truth moments out of range", validation_type="ground_truth")
        if np.any(self.rush_profile < 1.0):
            raise ValidationError(message="Congestion multipliers must be >= 1", validation_type="ground_truth")

    def to_document(self) -> Dict[str, object]:
        return {
            "seed": self.seed,
            "true_mu": self.true_mu.tolist(),
            "true_sigma": self.true_sigma.tolist(),
            "rush_profile": self.rush_profile.tolist(),
        }

    @classmethod
    def from_document(cls, doc: Dict[str, object]) -> "GroundTruth":
        return cls(
            true_mu=np.asarray(doc["true_mu"], dtype=float),
            true_sigma=np.asarray(doc["true_sigma"], dtype=float),
            rush_profile=np.asarray(doc["rush_profile"], dtype=float),
            seed=int(doc.get("seed", 0)),
        )


def gen_ground_truth(net: RoadNetwork, profile: CongestionProfile, seed: int) -> GroundTruth:
    """
    ``true_mu = base_time * congestion(ts, class) * noise`` with a per-segment
    lognormal noise factor, and ``true_sigma = cv * true_mu``.
    """
    rng = np.random.default_rng(seed)
    base = net.base_times()
    multipliers = np.vstack([congestion_curve(profile.peak_for(s.road_class)) for s in net.segments])
    if profile.noise_sd > 0.0:
        noise = np.exp(rng.normal(0.0, profile.noise_sd, size=net.num_segments))
    else:
        noise = np.ones(net.num_segments)
    true_mu = base[:, None] * multipliers * noise[:, None]
    return GroundTruth(
        true_mu=true_mu,
        true_sigma=profile.cv * true_mu,
        rush_profile=multipliers,
        seed=seed,
    )


class OdSampler:
    """Uniform sampler over node pairs at least ``min_hops`` segments apart."""

    def __init__(self, net: RoadNetwork, min_hops: int = 6):
        self.min_hops = min_hops
        pairs: List[Tuple[NodeId, NodeId]] = []
        for src in net.node_ids:
            for dst, hops in self._hop_distances(net, src).items():
                if hops >= min_hops:
                    pairs.append((src, dst))
        if not pairs:
            raise ValidationError(
                message=f"No node pair is at least {min_hops} hops apart",
                input_value=str(min_hops),
                validation_type="min_hops"
            )
        self.pairs = pairs

    @staticmethod
    def _hop_distances(net: RoadNetwork, src: NodeId) -> Dict[NodeId, int]:
        dist: Dict[NodeId, int] = {src: 0}
        queue = deque([src])
        while queue:
            node = queue.popleft()
            for sid in net.out_segments(node):
                nxt = net.segments[sid].to_node
                if nxt not in dist:
                    dist[nxt] = dist[node] + 1
                    queue.append(nxt)
        return dist

    def sample(self, rng: np.random.Generator) -> Tuple[NodeId, NodeId]:
        return self.pairs[int(rng.integers(0, len(self.pairs)))]


def trip_rng(master_seed: int, trip_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master_seed, trip_index]))


def gen_trip(
    net: RoadNetwork,
    truth: GroundTruth,
    od: Tuple[NodeId, NodeId],
    departure: float,
    rng: np.random.Generator,
    route_probs: Sequence[float] = (0.7, 0.2, 0.1),
    trajectory_id: str = "t0",
    weather_id: int = 0,
    holiday_id: int = 0,
) -> DenseTrajectory:
    """
    Drive one trip from ``od[0]`` to ``od[1]`` leaving at ``departure``.

    The route is drawn among the fastest ``len(route_probs)`` routes under the
    true means of the departure time step; each segment's time is a truncated
    lognormal draw with the true moments of the time step at which the
    vehicle enters it.

    Raises:
        NoPathError: If the OD pair is not connected
    """
    src, dst = od
    weights = truth.true_mu[:, time_step_of(departure)]
    routes = k_shortest_paths(net, weights, src, dst, len(route_probs))
    probs = np.asarray(route_probs[:len(routes)], dtype=float)
    choice = int(rng.choice(len(routes), p=probs / probs.sum())) if len(routes) > 1 else 0
    route = routes[choice]

    t = float(departure)
    node_times = [t]
    nodes: List[NodeId] = [src]
    for sid in route.segment_ids:
        ts = time_step_of(t)
        t += sample_truncated_lognormal(float(truth.true_mu[sid, ts]), float(truth.true_sigma[sid, ts]), rng)
        node_times.append(t)
        nodes.append(net.segments[sid].to_node)
    coords = tuple((net.nodes[n].lon, net.nodes[n].lat) for n in nodes)
    return DenseTrajectory(
        trajectory_id=trajectory_id,
        route=route,
        nodes=tuple(nodes),
        coords=coords,
        node_times=tuple(node_times),
        weather_id=weather_id,
        holiday_id=holiday_id,
    )


def day_start_unix(base_date: str) -> float:
    day = date.fromisoformat(base_date)
    return datetime(day.year, day.month, day.day, tzinfo=timezone.utc).timestamp()


def trajectory_id_for(trip_index: int) -> str:
    return f"t{trip_index:06d}"


def gen_corpus(
    net: RoadNetwork,
    truth: GroundTruth,
    config: SimulationConfig,
    seed: int,
    threads: int = 1,
    progress_callback: Optional[Callable[[int], None]] = None,
) -> List[DenseTrajectory]:
    """
    Generate ``config.trips`` dense trips.

    Trip ``i`` takes all its randomness (OD pair, departure, route choice,
    segment times) from :func:`trip_rng` ``(seed, i)``, so the corpus does
    not depend on ``threads``.
    """
    if config.trips == 0:
        return []
    sampler = OdSampler(net, config.min_hops)
    day0 = day_start_unix(config.base_date)
    window = (config.day_start_hour * 3600.0, config.day_end_hour * 3600.0)

    def make(i: int) -> DenseTrajectory:
        rng = trip_rng(seed, i)
        od = sampler.sample(rng)
        departure = day0 + float(rng.uniform(*window))
        trip = gen_trip(
            net, truth, od, departure, rng,
            route_probs=config.route_probs,
            trajectory_id=trajectory_id_for(i),
            weather_id=config.weather_id,
            holiday_id=config.holiday_id,
        )
        if progress_callback:
            progress_callback(1)
        return trip

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            trips = list(executor.map(make, range(config.trips)))
    else:
        trips = [make(i) for i in range(config.trips)]
    logger.info("Generated %d trips", len(trips))
    return trips


def _tick_times(start: float, end: float, tick_s: float) -> List[float]:
    ticks = list(np.arange(start, end, tick_s, dtype=float))
    if not ticks or ticks[-1] < end:
        ticks.append(end)
    return [float(t) for t in ticks]


def _position_at(dense: DenseTrajectory, times: np.ndarray, t: float) -> Tuple[int, float]:
    """Segment index along the route and the fraction of it covered at time ``t``."""
    k = int(np.searchsorted(times, t, side="right")) - 1
    k = min(max(k, 0), len(times) - 2)
    frac = (t - times[k]) / (times[k + 1] - times[k])
    return k, min(max(frac, 0.0), 1.0)


def sparsify(
    dense: DenseTrajectory,
    keep_ratio: float,
    tick_s: float = 15.0,
    snap_to_nodes: bool = True,
    jitter_m: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> SparseTrajectory:
    """
    Thin a dense trip to a sparse trajectory.

    The trip is resampled on ``tick_s`` ticks (the arrival is always the last
    tick), then the first tick, the last tick and every
    ``round(1 / keep_ratio)``-th tick in between are kept.

    With ``snap_to_nodes`` each kept tick is replaced by the route junction
    passed nearest in time, carrying that junction's coordinates and exact
    passage time; repeated junctions collapse. Gaps between fixes are then
    junction-to-junction times, not multiples of ``tick_s``. Otherwise fixes
    carry the interpolated position and the tick time, and interior gaps are
    exactly ``round(1 / keep_ratio) * tick_s`` (120 s at 0.125, 480 s at
    0.03125 with 15 s ticks). ``jitter_m`` adds isotropic
    Gaussian position noise (meters) and needs ``rng``.

    Raises:
        ValidationError: If ``keep_ratio`` is outside (0, 1]
    """
    validate_keep_ratio(keep_ratio)
    if jitter_m > 0.0 and rng is None:
        raise ValidationError(
            message="jitter_m needs a random generator",
            input_value=str(jitter_m),
            validation_type="jitter"
        )
    times = np.asarray(dense.node_times, dtype=float)
    if len(dense.route) == 0:
        raise ValidationError(
            message=f"Trajectory {dense.trajectory_id} has an empty route",
            validation_type="dense_trajectory"
        )
    ticks = _tick_times(times[0], times[-1], tick_s)
    step = max(1, int(round(1.0 / keep_ratio)))
    kept = [i for i in range(len(ticks)) if i % step == 0 or i == len(ticks) - 1]

    points: List[Tuple[float, float, float]] = []
    if snap_to_nodes:
        last_node = -1
        for i in kept:
            k, frac = _position_at(dense, times, ticks[i])
            idx = k if frac < 0.5 else k + 1
            if i == 0:
                idx = 0
            elif i == len(ticks) - 1:
                idx = len(times) - 1
            if idx <= last_node:
                continue
            lon, lat = dense.coords[idx]
            points.append((lon, lat, float(times[idx])))
            last_node = idx
    else:
        for i in kept:
            k, frac = _position_at(dense, times, ticks[i])
            (lon0, lat0), (lon1, lat1) = dense.coords[k], dense.coords[k + 1]
            points.append((lon0 + frac * (lon1 - lon0), lat0 + frac * (lat1 - lat0), ticks[i]))

    if jitter_m > 0.0 and rng is not None:
        jittered = []
        for lon, lat, t in points:
            east, north = rng.normal(0.0, jitter_m, size=2)
            dlon, dlat = offset_degrees(lat, float(east), float(north))
            jittered.append((lon + dlon, lat + dlat, t))
        points = jittered

    return SparseTrajectory(
        trajectory_id=dense.trajectory_id,
        fixes=tuple(points),
        weather_id=dense.weather_id,
        holiday_id=dense.holiday_id,
        source_id=dense.trajectory_id,
    )


def sparsify_corpus(
    trips: Sequence[DenseTrajectory],
    keep_ratio: float,
    config: SimulationConfig,
    seed: int,
) -> List[SparseTrajectory]:
    """Sparsify every trip; jitter draws come from a per-ratio, per-trip seed."""
    out: List[SparseTrajectory] = []
    ratio_key = int(round(1.0 / keep_ratio))
    for i, trip in enumerate(trips):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i, ratio_key])) if config.jitter_m > 0 else None
        out.append(sparsify(
            trip,
            keep_ratio,
            tick_s=config.tick_s,
            snap_to_nodes=config.snap_to_nodes,
            jitter_m=config.jitter_m,
            rng=rng,
        ))
    return out
