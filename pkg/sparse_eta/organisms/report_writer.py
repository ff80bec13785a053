"""
Report files: JSON documents, long-format CSV metric tables, and GeoJSON
condition maps.

The CSV tables are keyed ``(metric, sampling_interval, time_bin)`` so runs at
different sampling ratios can be concatenated and pivoted directly.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

from sparse_eta.atoms.error_utils import FileIOError
from sparse_eta.atoms.path_utils import ensure_directory_exists
from sparse_eta.molecules.road_network import RoadNetwork
from sparse_eta.organisms.em_trainer import IterationRecord
from sparse_eta.organisms.metrics import RouteReport, SegmentCondition, TteReport

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ["metric", "sampling_interval", "time_bin", "value", "n"]
ALL_DAY = "all"


def write_json(path: Union[str, Path], document: Any) -> Path:
    """
    Write a JSON document with sorted keys, so equal documents give equal bytes.

    Raises:
        FileIOError: If the file cannot be written
    """
    file_path = Path(path)
    try:
        ensure_directory_exists(file_path.parent)
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
    except (OSError, ValueError) as e:
        raise FileIOError(
            message=f"Failed to write JSON report: {str(e)}",
            file_path=str(file_path),
            operation="write"
        )
    return file_path


def read_json(path: Union[str, Path]) -> Any:
    file_path = Path(path)
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise FileIOError(
            message=f"Invalid JSON: {e.msg}",
            file_path=str(file_path),
            operation="read",
            details={"line": e.lineno}
        )
    except OSError as e:
        raise FileIOError(
            message=f"Failed to read JSON file: {str(e)}",
            file_path=str(file_path),
            operation="read"
        )


def metrics_frame(
    tte_reports: Mapping[str, TteReport],
    route_reports: Optional[Mapping[str, RouteReport]] = None,
) -> pd.DataFrame:
    """
    Long-format table of every metric, one row per (metric, sampling interval, time bin).

    Both mappings are keyed by sampling-interval label. Empty route bins are
    left out.
    """
    rows: List[Dict[str, Any]] = []
    for interval, tte in tte_reports.items():
        for metric in ("rmse_min", "mae_min", "mape_pct"):
            rows.append({
                "metric": metric,
                "sampling_interval": interval,
                "time_bin": ALL_DAY,
                "value": getattr(tte, metric),
                "n": tte.n,
            })
    for interval, report in (route_reports or {}).items():
        rows.append({
            "metric": "route_accuracy",
            "sampling_interval": interval,
            "time_bin": ALL_DAY,
            "value": report.mean_accuracy,
            "n": report.n,
        })
        for b in report.bins:
            if b.mean_accuracy is None:
                continue
            rows.append({
                "metric": "route_accuracy",
                "sampling_interval": interval,
                "time_bin": b.label,
                "value": b.mean_accuracy,
                "n": b.n,
            })
    return pd.DataFrame(rows, columns=METRIC_COLUMNS)


def write_csv(path: Union[str, Path], frame: pd.DataFrame) -> Path:
    """
    Write a table as CSV without the index.

    Raises:
        FileIOError: If the file cannot be written
    """
    file_path = Path(path)
    try:
        ensure_directory_exists(file_path.parent)
        frame.to_csv(file_path, index=False, float_format="%.6f")
    except OSError as e:
        raise FileIOError(
            message=f"Failed to write CSV report: {str(e)}",
            file_path=str(file_path),
            operation="write"
        )
    return file_path


def history_frame(history: Sequence[IterationRecord]) -> pd.DataFrame:
    """Per-iteration EM diagnostics, without the assignment snapshots."""
    return pd.DataFrame(
        [
            {
                "iteration": r.iteration,
                "mean_nll_before": r.mean_nll_before,
                "mean_nll": r.mean_nll,
                "delta_mu_max": r.delta_mu_max,
                "reassigned_count": r.reassigned_count,
                "epochs_run": r.epochs_run,
                "val_nll": r.val_nll,
            }
            for r in history
        ],
        columns=[
            "iteration", "mean_nll_before", "mean_nll", "delta_mu_max",
            "reassigned_count", "epochs_run", "val_nll",
        ],
    )


def conditions_geojson(
    conditions: Sequence[SegmentCondition],
    net: RoadNetwork,
    time_step: int,
) -> Dict[str, Any]:
    """A FeatureCollection with one LineString per segment and its speed state."""
    features = []
    for c in conditions:
        seg = net.segments[c.segment_id]
        a, b = net.nodes[seg.from_node], net.nodes[seg.to_node]
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [[a.lon, a.lat], [b.lon, b.lat]]},
            "properties": {
                "segment_id": c.segment_id,
                "time_step": time_step,
                "state": c.state.value,
                "speed_kph": round(c.speed_kph, 3),
                "limit_kph": c.limit_kph,
                "no_data": c.no_data,
            },
        })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(
    path: Union[str, Path],
    conditions: Sequence[SegmentCondition],
    net: RoadNetwork,
    time_step: int,
) -> Path:
    file_path = write_json(path, conditions_geojson(conditions, net, time_step))
    logger.info("Wrote condition map for time step %d to %s", time_step, file_path)
    return file_path
