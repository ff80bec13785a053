"""
Trajectory data types and their JSON-lines files.

A sparse trajectory file holds one record per trajectory::

    {"id": "t000001", "fixes": [[lon, lat, unix_ts], ...], "weather_id": 0, "holiday_id": 0}

The dense sidecar holds the ground truth of simulated trips (route segment
ids, traversed nodes with coordinates, and node passage times) and is read
by evaluation only.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from sparse_eta.atoms.error_utils import FileIOError, ValidationError
from sparse_eta.molecules.road_network import NodeId, RoadNetwork
from sparse_eta.molecules.routing import Route

logger = logging.getLogger(__name__)

Fix = Tuple[float, float, float]


@dataclass(frozen=True)
class SparseTrajectory:
    """Ordered GPS fixes ``(lon, lat, unix_ts)`` of one trip."""
    trajectory_id: str
    fixes: Tuple[Fix, ...]
    weather_id: int = 0
    holiday_id: int = 0
    source_id: Optional[str] = None

    def __post_init__(self) -> None:
        if len(self.fixes) < 2:
            raise ValidationError(
                message=f"Trajectory {self.trajectory_id} needs at least 2 fixes",
                input_value=str(len(self.fixes)),
                validation_type="trajectory_fixes"
            )
        times = [f[2] for f in self.fixes]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError(
                message=f"Trajectory {self.trajectory_id} timestamps are not strictly increasing",
                input_value=self.trajectory_id,
                validation_type="trajectory_order"
            )

    @property
    def start_time(self) -> float:
        return self.fixes[0][2]

    @property
    def duration_s(self) -> float:
        return self.fixes[-1][2] - self.fixes[0][2]

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": self.trajectory_id,
            "fixes": [list(f) for f in self.fixes],
            "weather_id": self.weather_id,
            "holiday_id": self.holiday_id,
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "SparseTrajectory":
        return cls(
            trajectory_id=str(record["id"]),
            fixes=tuple((float(f[0]), float(f[1]), float(f[2])) for f in record["fixes"]),
            weather_id=int(record.get("weather_id", 0)),
            holiday_id=int(record.get("holiday_id", 0)),
        )


@dataclass(frozen=True)
class DenseTrajectory:
    """
    A simulated trip with its exact route and node passage times.

    ``nodes``, ``coords`` and ``node_times`` have one entry per traversed
    junction, i.e. ``len(route) + 1``.
    """
    trajectory_id: str
    route: Route
    nodes: Tuple[NodeId, ...]
    coords: Tuple[Tuple[float, float], ...]
    node_times: Tuple[float, ...]
    weather_id: int = 0
    holiday_id: int = 0

    def __post_init__(self) -> None:
        n = len(self.route.segment_ids) + 1
        if not len(self.nodes) == len(self.coords) == len(self.node_times) == n:
            raise ValidationError(
                message=f"Trajectory {self.trajectory_id} needs {n} nodes, coords and node times",
                input_value=f"{len(self.nodes)}, {len(self.coords)}, {len(self.node_times)}",
                validation_type="dense_trajectory"
            )
        if any(b <= a for a, b in zip(self.node_times, self.node_times[1:])):
            raise ValidationError(
                message=f"Trajectory {self.trajectory_id} node times are not strictly increasing",
                input_value=self.trajectory_id,
                validation_type="trajectory_order"
            )

    @property
    def departure(self) -> float:
        return self.node_times[0]

    @property
    def total_time_s(self) -> float:
        return self.node_times[-1] - self.node_times[0]

    def segment_times(self) -> np.ndarray:
        return np.diff(np.asarray(self.node_times, dtype=float))

    def node_index_at(self, unix_ts: float) -> int:
        """Index of the junction passed closest in time to ``unix_ts``."""
        times = np.asarray(self.node_times, dtype=float)
        return int(np.argmin(np.abs(times - unix_ts)))

    def subroute(self, start_ts: float, end_ts: float) -> Route:
        """The part of the true route driven between two fix times."""
        i, j = self.node_index_at(start_ts), self.node_index_at(end_ts)
        if j < i:
            i, j = j, i
        return Route(
            segment_ids=self.route.segment_ids[i:j],
            lengths_m=self.route.lengths_m[i:j],
        )

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": self.trajectory_id,
            "segments": list(self.route.segment_ids),
            "nodes": list(self.nodes),
            "coords": [list(c) for c in self.coords],
            "node_times": list(self.node_times),
            "weather_id": self.weather_id,
            "holiday_id": self.holiday_id,
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any], net: RoadNetwork) -> "DenseTrajectory":
        return cls(
            trajectory_id=str(record["id"]),
            route=Route.from_segments(net, record["segments"]),
            nodes=tuple(record["nodes"]),
            coords=tuple((float(c[0]), float(c[1])) for c in record["coords"]),
            node_times=tuple(float(t) for t in record["node_times"]),
            weather_id=int(record.get("weather_id", 0)),
            holiday_id=int(record.get("holiday_id", 0)),
        )


def _write_jsonl(path: Union[str, Path], records: Iterable[Dict[str, Any]]) -> Path:
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record, separators=(",", ":")))
                f.write("\n")
    except OSError as e:
        raise FileIOError(
            message=f"Failed to write trajectory file: {str(e)}",
            file_path=str(file_path),
            operation="write"
        )
    return file_path


def _read_jsonl(path: Union[str, Path]) -> List[Tuple[int, Dict[str, Any]]]:
    file_path = Path(path)
    records: List[Tuple[int, Dict[str, Any]]] = []
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    records.append((lineno, json.loads(line)))
                except json.JSONDecodeError as e:
                    raise FileIOError(
                        message=f"Invalid JSON on line {lineno}: {e.msg}",
                        file_path=str(file_path),
                        operation="read",
                        details={"line": lineno}
                    )
    except OSError as e:
        raise FileIOError(
            message=f"Failed to read trajectory file: {str(e)}",
            file_path=str(file_path),
            operation="read"
        )
    return records


def write_trajectories(path: Union[str, Path], trajectories: Iterable[SparseTrajectory]) -> Path:
    """
    Write sparse trajectories as JSON lines.

    Raises:
        FileIOError: If the file cannot be written
    """
    return _write_jsonl(path, (t.to_record() for t in trajectories))


def read_trajectories(path: Union[str, Path]) -> List[SparseTrajectory]:
    """
    Read sparse trajectories from JSON lines.

    Raises:
        FileIOError: If the file cannot be read or a line is not valid JSON
        ValidationError: If a record is malformed
    """
    trajectories: List[SparseTrajectory] = []
    for lineno, record in _read_jsonl(path):
        try:
            trajectories.append(SparseTrajectory.from_record(record))
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ValidationError(
                message=f"Malformed trajectory record on line {lineno}: {str(e)}",
                input_value=str(path),
                validation_type="trajectory_record",
                details={"line": lineno}
            )
    logger.info("Read %d trajectories from %s", len(trajectories), path)
    return trajectories


def write_dense_sidecar(path: Union[str, Path], trajectories: Iterable[DenseTrajectory]) -> Path:
    return _write_jsonl(path, (t.to_record() for t in trajectories))


def read_dense_sidecar(path: Union[str, Path], net: RoadNetwork) -> Dict[str, DenseTrajectory]:
    """
    Read the ground-truth sidecar, keyed by trajectory id.

    Raises:
        FileIOError: If the file cannot be read
        ValidationError: If a record is malformed or references unknown segments
    """
    dense: Dict[str, DenseTrajectory] = {}
    for lineno, record in _read_jsonl(path):
        try:
            traj = DenseTrajectory.from_record(record, net)
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise ValidationError(
                message=f"Malformed sidecar record on line {lineno}: {str(e)}",
                input_value=str(path),
                validation_type="sidecar_record",
                details={"line": lineno}
            )
        dense[traj.trajectory_id] = traj
    return dense
