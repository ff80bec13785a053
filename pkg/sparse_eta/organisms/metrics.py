"""
Evaluation metrics: travel-time error, route recovery and road conditions.

All functions are pure and safe to call from several threads.
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from sparse_eta.atoms.error_utils import ValidationError
from sparse_eta.molecules.road_network import RoadNetwork
from sparse_eta.molecules.routing import Route
from sparse_eta.organisms.st_model import SLOT_SECONDS, TravelTimeTable

logger = logging.getLogger(__name__)

DAY_START_HOUR = 6.0
DAY_END_HOUR = 22.0
BIN_HOURS = 0.5
NUM_TIME_BINS = int((DAY_END_HOUR - DAY_START_HOUR) / BIN_HOURS)

# speed ratios sitting on a quartile boundary up to rounding count as the upper bin
_BOUNDARY_EPS = 1e-9


@dataclass
class TteReport:
    """Travel-time estimation error in minutes (RMSE, MAE) and percent (MAPE)."""
    rmse_min: float
    mae_min: float
    mape_pct: float
    n: int
    label: str = ""
    breakdown: Dict[str, "TteReport"] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "n": self.n,
            "rmse_min": self.rmse_min,
            "mae_min": self.mae_min,
            "mape_pct": self.mape_pct,
            "breakdown": {k: v.to_dict() for k, v in self.breakdown.items()},
        }


def tte_metrics(
    pred_seconds: Sequence[float],
    true_seconds: Sequence[float],
    label: str = "",
) -> TteReport:
    """
    RMSE, MAE and MAPE of predicted against true travel times.

    MAPE only averages over positive truths.

    Raises:
        ValidationError: If the sequences are empty or differ in length

    >>> r = tte_metrics([60.0, 180.0], [60.0, 120.0])
    >>> round(r.rmse_min, 4), r.mae_min, r.mape_pct
    (0.7071, 0.5, 25.0)
    """
    pred = np.asarray(pred_seconds, dtype=float)
    true = np.asarray(true_seconds, dtype=float)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValidationError(
            message="Predicted and true travel times must be flat sequences of equal length",
            input_value=f"{pred.shape} vs {true.shape}",
            validation_type="tte_lengths"
        )
    if pred.size == 0:
        raise ValidationError(
            message="At least one travel time is needed",
            input_value="0",
            validation_type="tte_lengths"
        )
    err = pred - true
    positive = true > 0.0
    if np.any(positive):
        mape = float(100.0 * np.mean(np.abs(err[positive]) / true[positive]))
    else:
        logger.warning("No positive true travel times%s; MAPE reported as 0", f" for {label}" if label else "")
        mape = 0.0
    return TteReport(
        rmse_min=float(np.sqrt(np.mean(err ** 2)) / 60.0),
        mae_min=float(np.mean(np.abs(err)) / 60.0),
        mape_pct=mape,
        n=int(pred.size),
        label=label,
    )


def tte_metrics_by_label(
    samples: Mapping[str, Tuple[Sequence[float], Sequence[float]]],
    label: str = "all",
) -> TteReport:
    """Pooled metrics over every label, with one sub-report per label in ``breakdown``."""
    non_empty = {k: v for k, v in samples.items() if len(v[0])}
    if not non_empty:
        raise ValidationError(
            message="At least one travel time is needed",
            input_value="0",
            validation_type="tte_lengths"
        )
    pred = np.concatenate([np.asarray(p, dtype=float) for p, _ in non_empty.values()])
    true = np.concatenate([np.asarray(t, dtype=float) for _, t in non_empty.values()])
    report = tte_metrics(pred, true, label=label)
    report.breakdown = {k: tte_metrics(p, t, label=k) for k, (p, t) in non_empty.items()}
    return report


def _overlap_key(net: Optional[RoadNetwork], seg_id: int, undirected: bool) -> int:
    if not undirected:
        return seg_id
    twin = net.reverse_of(seg_id) if net is not None else None
    return seg_id if twin is None else min(seg_id, twin)


def route_accuracy(
    truth: Route,
    inferred: Route,
    net: Optional[RoadNetwork] = None,
    undirected_overlap: bool = False,
) -> float:
    """
    Length of the shared segments over the longer of the two routes.

    Overlap is over directed segment ids unless ``undirected_overlap`` is set,
    in which case a segment and its two-way twin match (requires ``net``).

    >>> a = Route(segment_ids=(0, 1), lengths_m=(600.0, 400.0))
    >>> b = Route(segment_ids=(0, 2), lengths_m=(600.0, 200.0))
    >>> route_accuracy(a, b)
    0.6
    """
    if undirected_overlap and net is None:
        raise ValidationError(
            message="Undirected overlap needs the road network",
            validation_type="route_accuracy"
        )
    if not truth.segment_ids and not inferred.segment_ids:
        return 1.0
    if not truth.segment_ids or not inferred.segment_ids:
        return 0.0
    truth_len = {_overlap_key(net, s, undirected_overlap): l for s, l in zip(truth.segment_ids, truth.lengths_m)}
    inferred_len = {_overlap_key(net, s, undirected_overlap): l for s, l in zip(inferred.segment_ids, inferred.lengths_m)}
    shared = sum(min(truth_len[k], inferred_len[k]) for k in truth_len.keys() & inferred_len.keys())
    return float(shared / max(truth.total_length_m, inferred.total_length_m))


@dataclass
class RouteBin:
    label: str
    n: int
    mean_accuracy: Optional[float]


@dataclass
class RouteReport:
    """Mean route-recovery accuracy, overall and per half hour of the day."""
    mean_accuracy: float
    n: int
    bins: List[RouteBin]
    label: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "label": self.label,
            "n": self.n,
            "mean_accuracy": self.mean_accuracy,
            "bins": [asdict(b) for b in self.bins],
        }


def time_bin_labels() -> List[str]:
    labels = []
    for i in range(NUM_TIME_BINS):
        start = DAY_START_HOUR + i * BIN_HOURS
        end = start + BIN_HOURS
        labels.append(f"{_clock(start)}-{_clock(end)}")
    return labels


def _clock(hours: float) -> str:
    minutes = int(round(hours * 60))
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def time_bin_of(unix_ts: float) -> Optional[int]:
    """Half-hour bin index within 06:00-22:00 UTC, or None outside that window."""
    hour = (unix_ts % 86400.0) / 3600.0
    if hour < DAY_START_HOUR or hour >= DAY_END_HOUR:
        return None
    return int((hour - DAY_START_HOUR) // BIN_HOURS)


def route_report(
    pairs_of_routes: Sequence[Tuple[Route, Route]],
    departure_times: Sequence[float],
    net: Optional[RoadNetwork] = None,
    undirected_overlap: bool = False,
    label: str = "",
) -> RouteReport:
    """
    Route accuracy over ``(truth, inferred)`` pairs, binned by departure time.

    Departures outside the daytime window count towards the overall mean only.
    """
    if len(pairs_of_routes) != len(departure_times):
        raise ValidationError(
            message="Every route pair needs a departure time",
            input_value=f"{len(pairs_of_routes)} vs {len(departure_times)}",
            validation_type="route_report"
        )
    acc = [route_accuracy(t, i, net, undirected_overlap) for t, i in pairs_of_routes]
    per_bin: List[List[float]] = [[] for _ in range(NUM_TIME_BINS)]
    for a, ts in zip(acc, departure_times):
        b = time_bin_of(ts)
        if b is not None:
            per_bin[b].append(a)
    bins = [
        RouteBin(label=name, n=len(vals), mean_accuracy=float(np.mean(vals)) if vals else None)
        for name, vals in zip(time_bin_labels(), per_bin)
    ]
    return RouteReport(
        mean_accuracy=float(np.mean(acc)) if acc else 0.0,
        n=len(acc),
        bins=bins,
        label=label,
    )


class SpeedState(str, Enum):
    VERY_CONGESTED = "very_congested"
    CONGESTED = "congested"
    SLOW = "slow"
    UNBLOCKED = "unblocked"


_STATE_ORDER = (SpeedState.VERY_CONGESTED, SpeedState.CONGESTED, SpeedState.SLOW, SpeedState.UNBLOCKED)


def classify_speed_state(speed_kph: float, limit_kph: float) -> SpeedState:
    """
    Quartile of the speed limit the speed falls in; bins are right-open.

    >>> classify_speed_state(20.0, 60.0).value
    'congested'
    >>> classify_speed_state(50.0, 60.0).value
    'unblocked'
    """
    if not limit_kph > 0.0:
        raise ValidationError(
            message="Speed limit must be positive",
            input_value=str(limit_kph),
            validation_type="speed_limit"
        )
    if speed_kph < 0.0 or math.isnan(speed_kph):
        raise ValidationError(
            message="Speed must be non-negative",
            input_value=str(speed_kph),
            validation_type="speed"
        )
    index = math.floor(4.0 * speed_kph / limit_kph + _BOUNDARY_EPS)
    return _STATE_ORDER[min(max(index, 0), 3)]


@dataclass
class SegmentCondition:
    segment_id: int
    speed_kph: float
    limit_kph: float
    state: SpeedState
    no_data: bool = False


def _counts_at(traversal_counts: Optional[np.ndarray], time_step: int, num_segments: int) -> Optional[np.ndarray]:
    if traversal_counts is None:
        return None
    counts = np.asarray(traversal_counts)
    if counts.ndim == 2:
        counts = counts[:, time_step]
    if counts.shape != (num_segments,):
        raise ValidationError(
            message="Traversal counts must have one entry per segment",
            input_value=str(counts.shape),
            validation_type="traversal_counts"
        )
    return counts


def condition_map(
    table: TravelTimeTable,
    net: RoadNetwork,
    time_step: int,
    traversal_counts: Optional[np.ndarray] = None,
) -> List[SegmentCondition]:
    """
    Speed state of every segment at one time step.

    Average speed is ``3.6 * length_m / mu`` in kph. Segments with a zero
    traversal count (shape ``(E,)`` or ``(E, 48)``) carry ``no_data`` and are
    shown as unblocked.
    """
    if table.num_segments != net.num_segments:
        raise ValidationError(
            message="Travel-time table does not cover every segment",
            input_value=f"{table.num_segments} vs {net.num_segments}",
            validation_type="table_shape"
        )
    if not 0 <= time_step < table.num_time_steps:
        raise ValidationError(
            message=f"Time step must be in [0, {table.num_time_steps})",
            input_value=str(time_step),
            validation_type="time_step"
        )
    counts = _counts_at(traversal_counts, time_step, net.num_segments)
    conditions = []
    for seg in net.segments:
        speed = 3.6 * seg.length_m / float(table.mu[seg.id, time_step])
        no_data = counts is not None and counts[seg.id] == 0
        state = SpeedState.UNBLOCKED if no_data else classify_speed_state(speed, seg.speed_limit_kph)
        conditions.append(SegmentCondition(seg.id, speed, seg.speed_limit_kph, state, bool(no_data)))
    return conditions


def state_counts(conditions: Sequence[SegmentCondition]) -> Dict[str, int]:
    counts = {s.value: 0 for s in _STATE_ORDER}
    for c in conditions:
        counts[c.state.value] += 1
    return counts


@dataclass
class RecoveryReport:
    mape_pct: Optional[float]
    n_entries: int
    min_count: int


def parameter_recovery_mape(
    table: TravelTimeTable,
    truth_mu: np.ndarray,
    counts: np.ndarray,
    min_count: int = 30,
) -> RecoveryReport:
    """MAPE of learned against true mean times over (segment, time step) entries seen at least ``min_count`` times."""
    truth = np.asarray(truth_mu, dtype=float)
    counts = np.asarray(counts)
    if truth.shape != table.mu.shape or counts.shape != table.mu.shape:
        raise ValidationError(
            message="Truth and counts must match the table shape",
            input_value=f"{truth.shape}, {counts.shape} vs {table.mu.shape}",
            validation_type="table_shape"
        )
    mask = counts >= min_count
    n = int(np.count_nonzero(mask))
    if n == 0:
        logger.warning("No table entries traversed at least %d times", min_count)
        return RecoveryReport(None, 0, min_count)
    mape = float(100.0 * np.mean(np.abs(table.mu[mask] - truth[mask]) / truth[mask]))
    return RecoveryReport(mape, n, min_count)


def time_step_divergence(
    table: TravelTimeTable,
    truth_mu: np.ndarray,
    counts: Optional[np.ndarray] = None,
) -> pd.DataFrame:
    """
    Per-time-step summary of learned against true mean times.

    Columns: ``time_step``, ``start`` (HH:MM), ``mean_pred_s``, ``mean_true_s``,
    ``mape_pct`` and ``traversals`` (0 when no counts are given).
    """
    truth = np.asarray(truth_mu, dtype=float)
    if truth.shape != table.mu.shape:
        raise ValidationError(
            message="Truth must match the table shape",
            input_value=f"{truth.shape} vs {table.mu.shape}",
            validation_type="table_shape"
        )
    ape = np.abs(table.mu - truth) / truth
    traversals = np.zeros(table.num_time_steps, dtype=int) if counts is None else np.asarray(counts).sum(axis=0)
    return pd.DataFrame({
        "time_step": np.arange(table.num_time_steps),
        "start": [_clock(ts * SLOT_SECONDS / 3600.0) for ts in range(table.num_time_steps)],
        "mean_pred_s": table.mu.mean(axis=0),
        "mean_true_s": truth.mean(axis=0),
        "mape_pct": 100.0 * ape.mean(axis=0),
        "traversals": traversals.astype(int),
    })
