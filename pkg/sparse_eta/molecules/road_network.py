"""
Road network data model for the sparse-eta package.

This module holds the directed road-segment graph, its JSON file format,
the relation-typed segment adjacency used by the graph convolution, and
nearest-node snapping of GPS fixes.

Example:
    ```python
    from sparse_eta.molecules.road_network import load_network, snap_point

    net = load_network("network.json")
    node = snap_point(net, 108.9401, 34.2602)
    ```
"""

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from sparse_eta.atoms.error_utils import (
    FileIOError,
    NetworkFormatError,
    NoNodeInRange,
    ValidationError,
)
from sparse_eta.atoms.geo import haversine_m
from sparse_eta.atoms.input_validator import validate_file_path

logger = logging.getLogger(__name__)

NodeId = Union[int, str]

KPH_TO_MPS = 1000.0 / 3600.0
DEFAULT_SNAP_RADIUS_M = 100.0


class RoadClass(str, Enum):
    """The nine road classes; declaration order is the relation/embedding index."""
    TRUNK = "trunk"
    TRUNK_LINK = "trunk_link"
    FREEWAY_LINK = "freeway_link"
    PRIMARY = "primary"
    PRIMARY_LINK = "primary_link"
    SECONDARY = "secondary"
    SECONDARY_LINK = "secondary_link"
    TERTIARY = "tertiary"
    TERTIARY_LINK = "tertiary_link"


ROAD_CLASSES: Tuple[RoadClass, ...] = tuple(RoadClass)
CLASS_INDEX: Mapping[RoadClass, int] = MappingProxyType({c: i for i, c in enumerate(ROAD_CLASSES)})


def parse_road_class(value: Union[str, RoadClass]) -> RoadClass:
    """
    Map a class name onto the nine-class enum.

    Unknown names (e.g. "residential") fall back to tertiary with a warning.
    """
    if isinstance(value, RoadClass):
        return value
    try:
        return RoadClass(str(value).strip().lower())
    except ValueError:
        logger.warning("Unknown road class %r mapped to tertiary", value)
        return RoadClass.TERTIARY


def node_sort_key(node_id: NodeId) -> Tuple[int, int, str]:
    """Total order over mixed int/str node ids: ints first, numerically."""
    if isinstance(node_id, int):
        return (0, node_id, "")
    return (1, 0, str(node_id))


@dataclass(frozen=True)
class Node:
    id: NodeId
    lon: float
    lat: float


@dataclass(frozen=True)
class RoadSegment:
    """A directed road segment between two junctions."""
    id: int
    from_node: NodeId
    to_node: NodeId
    length_m: float
    road_class: RoadClass
    lanes: int
    oneway: bool
    speed_limit_kph: float

    def __post_init__(self) -> None:
        if not self.length_m > 0:
            raise ValidationError(
                message=f"Segment {self.id} has non-positive length",
                input_value=str(self.length_m),
                validation_type="segment_length"
            )
        if not self.speed_limit_kph > 0:
            raise ValidationError(
                message=f"Segment {self.id} has non-positive speed limit",
                input_value=str(self.speed_limit_kph),
                validation_type="speed_limit"
            )
        if self.lanes < 1:
            raise ValidationError(
                message=f"Segment {self.id} must have at least one lane",
                input_value=str(self.lanes),
                validation_type="lanes"
            )

    @property
    def speed_limit_mps(self) -> float:
        return self.speed_limit_kph * 1000.0 / 3600.0


def segment_base_time(seg: RoadSegment) -> float:
    """
    Free-flow traversal time in seconds: length over speed limit.

    Example:
        >>> seg = RoadSegment(0, 0, 1, 500.0, RoadClass.TERTIARY, 1, False, 36.0)
        >>> segment_base_time(seg)
        50.0
    """
    return seg.length_m / seg.speed_limit_mps


class RoadNetwork:
    """
    Immutable directed road graph.

    Segment ids are dense in ``[0, num_segments)``. A two-way road is stored
    as two directed segments (both ``oneway=False``), one per direction.
    """

    def __init__(self, nodes: Sequence[Node], segments: Sequence[RoadSegment]):
        node_map: Dict[NodeId, Node] = {}
        for node in nodes:
            if node.id in node_map:
                raise ValidationError(
                    message=f"Duplicate node id: {node.id}",
                    input_value=str(node.id),
                    validation_type="node_id"
                )
            node_map[node.id] = node

        ordered = sorted(segments, key=lambda s: s.id)
        if [s.id for s in ordered] != list(range(len(ordered))):
            raise ValidationError(
                message="Segment ids must be dense in [0, n)",
                input_value=str([s.id for s in ordered][:10]),
                validation_type="segment_ids"
            )

        dangling = sorted(
            {str(n) for s in ordered for n in (s.from_node, s.to_node) if n not in node_map}
        )
        if dangling:
            raise ValidationError(
                message=f"Segments reference missing nodes: {', '.join(dangling)}",
                input_value=", ".join(dangling),
                validation_type="node_reference",
                details={"missing_nodes": dangling}
            )

        self._nodes: Mapping[NodeId, Node] = MappingProxyType(node_map)
        self._segments: Tuple[RoadSegment, ...] = tuple(ordered)
        self._node_ids: Tuple[NodeId, ...] = tuple(node_map.keys())

        out_adj: Dict[NodeId, List[int]] = {nid: [] for nid in node_map}
        in_adj: Dict[NodeId, List[int]] = {nid: [] for nid in node_map}
        by_endpoints: Dict[Tuple[NodeId, NodeId], List[int]] = {}
        for seg in self._segments:
            out_adj[seg.from_node].append(seg.id)
            in_adj[seg.to_node].append(seg.id)
            by_endpoints.setdefault((seg.from_node, seg.to_node), []).append(seg.id)
        self._out = MappingProxyType({k: tuple(v) for k, v in out_adj.items()})
        self._in = MappingProxyType({k: tuple(v) for k, v in in_adj.items()})

        twins: Dict[int, int] = {}
        for seg in self._segments:
            if seg.oneway:
                continue
            reverse = [
                j for j in by_endpoints.get((seg.to_node, seg.from_node), [])
                if not self._segments[j].oneway
            ]
            if not reverse:
                raise ValidationError(
                    message=f"Two-way segment {seg.id} has no reverse segment",
                    input_value=str(seg.id),
                    validation_type="two_way"
                )
            twins[seg.id] = reverse[0]
        self._twins = MappingProxyType(twins)

        self._lon = np.array([node_map[n].lon for n in self._node_ids], dtype=float)
        self._lat = np.array([node_map[n].lat for n in self._node_ids], dtype=float)
        self._lon.setflags(write=False)
        self._lat.setflags(write=False)

    @property
    def nodes(self) -> Mapping[NodeId, Node]:
        return self._nodes

    @property
    def node_ids(self) -> Tuple[NodeId, ...]:
        return self._node_ids

    @property
    def segments(self) -> Tuple[RoadSegment, ...]:
        return self._segments

    @property
    def num_nodes(self) -> int:
        return len(self._nodes)

    @property
    def num_segments(self) -> int:
        return len(self._segments)

    @property
    def node_coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """Read-only (lon, lat) arrays aligned with :attr:`node_ids`."""
        return self._lon, self._lat

    def out_segments(self, node: NodeId) -> Tuple[int, ...]:
        return self._out[node]

    def in_segments(self, node: NodeId) -> Tuple[int, ...]:
        return self._in[node]

    def reverse_of(self, seg_id: int) -> Optional[int]:
        """The opposite-direction twin of a two-way segment, if any."""
        return self._twins.get(seg_id)

    def base_times(self) -> np.ndarray:
        """Free-flow times of every segment, indexed by segment id."""
        return np.array([segment_base_time(s) for s in self._segments], dtype=float)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RoadNetwork):
            return NotImplemented
        return dict(self._nodes) == dict(other._nodes) and self._segments == other._segments

    def __repr__(self) -> str:
        return f"RoadNetwork(nodes={self.num_nodes}, segments={self.num_segments})"


@dataclass(frozen=True)
class RelationalAdjacency:
    """
    Relation-typed segment adjacency.

    ``neighbors[i][k]`` lists the segments that share a junction with
    segment ``i`` and have road class ``ROAD_CLASSES[k]``; ``norms[i][k]``
    is ``len(neighbors[i][k])`` (1.0 when the list is empty).
    """
    neighbors: Tuple[Tuple[Tuple[int, ...], ...], ...]
    norms: Tuple[Tuple[float, ...], ...]

    @property
    def num_segments(self) -> int:
        return len(self.neighbors)

    @property
    def num_relations(self) -> int:
        return len(ROAD_CLASSES)

    def relation_edges(self, relation: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Flattened messages of one relation as ``(dst, src, weight)`` arrays,
        with ``weight = 1 / c_{dst, relation}``.
        """
        dst: List[int] = []
        src: List[int] = []
        weight: List[float] = []
        for i, per_rel in enumerate(self.neighbors):
            nbrs = per_rel[relation]
            for j in nbrs:
                dst.append(i)
                src.append(j)
                weight.append(1.0 / self.norms[i][relation])
        return (
            np.asarray(dst, dtype=np.int64),
            np.asarray(src, dtype=np.int64),
            np.asarray(weight, dtype=float),
        )


def build_relational_adjacency(net: RoadNetwork) -> RelationalAdjacency:
    """
    Group each segment's junction-sharing neighbors by the neighbor's road class.

    Every other segment touching either endpoint of ``i`` (including its
    two-way twin) is a neighbor. The per-relation lists partition the
    neighbor set.
    """
    incident: Dict[NodeId, set] = {nid: set() for nid in net.node_ids}
    for seg in net.segments:
        incident[seg.from_node].add(seg.id)
        incident[seg.to_node].add(seg.id)

    neighbors: List[Tuple[Tuple[int, ...], ...]] = []
    norms: List[Tuple[float, ...]] = []
    for seg in net.segments:
        nbr_ids = (incident[seg.from_node] | incident[seg.to_node]) - {seg.id}
        buckets: List[List[int]] = [[] for _ in ROAD_CLASSES]
        for j in sorted(nbr_ids):
            buckets[CLASS_INDEX[net.segments[j].road_class]].append(j)
        neighbors.append(tuple(tuple(b) for b in buckets))
        norms.append(tuple(float(len(b)) if b else 1.0 for b in buckets))

    return RelationalAdjacency(neighbors=tuple(neighbors), norms=tuple(norms))


def snap_point(
    net: RoadNetwork,
    lon: float,
    lat: float,
    radius_m: float = DEFAULT_SNAP_RADIUS_M,
) -> NodeId:
    """
    Snap a GPS fix onto the nearest junction by great-circle distance.

    Ties (within a nanometer) go to the smallest node id, so the answer does
    not depend on node storage order.

    Raises:
        ValidationError: If the network has no nodes
        NoNodeInRange: If the nearest node is farther than ``radius_m``
    """
    if net.num_nodes == 0:
        raise ValidationError(
            message="Cannot snap onto an empty network",
            validation_type="empty_network"
        )
    node_lon, node_lat = net.node_coords
    dist = haversine_m(lon, lat, node_lon, node_lat)
    best = float(dist.min())
    if best > radius_m:
        raise NoNodeInRange(lon=lon, lat=lat, distance_m=best, radius_m=radius_m)
    tied = np.flatnonzero(dist <= best + 1e-9)
    return min((net.node_ids[i] for i in tied), key=node_sort_key)


def _require(record: Dict[str, Any], key: str, where: str, file_path: str) -> Any:
    if key not in record:
        raise NetworkFormatError(
            message=f"Missing field '{key}'",
            file_path=file_path,
            record=where
        )
    return record[key]


def _parse_network_document(doc: Any, file_path: str) -> RoadNetwork:
    if not isinstance(doc, dict) or "nodes" not in doc or "segments" not in doc:
        raise NetworkFormatError(
            message="Network document must be an object with 'nodes' and 'segments'",
            file_path=file_path,
            record="document"
        )

    nodes: List[Node] = []
    for idx, rec in enumerate(doc["nodes"]):
        where = f"nodes[{idx}]"
        try:
            nodes.append(Node(
                id=_require(rec, "id", where, file_path),
                lon=float(_require(rec, "lon", where, file_path)),
                lat=float(_require(rec, "lat", where, file_path)),
            ))
        except (TypeError, ValueError) as e:
            raise NetworkFormatError(
                message=f"Malformed node record: {str(e)}",
                file_path=file_path,
                record=where
            )

    raw_segments: List[Dict[str, Any]] = []
    for idx, rec in enumerate(doc["segments"]):
        where = f"segments[{idx}]"
        try:
            raw_segments.append({
                "id": _require(rec, "id", where, file_path),
                "from_node": _require(rec, "from", where, file_path),
                "to_node": _require(rec, "to", where, file_path),
                "length_m": float(_require(rec, "length_m", where, file_path)),
                "road_class": parse_road_class(_require(rec, "class", where, file_path)),
                "lanes": int(_require(rec, "lanes", where, file_path)),
                "oneway": bool(_require(rec, "oneway", where, file_path)),
                "speed_limit_kph": float(_require(rec, "speed_limit_kph", where, file_path)),
            })
        except (TypeError, ValueError) as e:
            raise NetworkFormatError(
                message=f"Malformed segment record: {str(e)}",
                file_path=file_path,
                record=where
            )

    ids = [r["id"] for r in raw_segments]
    dense = all(isinstance(i, int) and not isinstance(i, bool) for i in ids) and sorted(ids) == list(
        range(len(ids))
    )
    if not dense:
        logger.warning("Segment ids in %s are not dense integers; renumbering in file order", file_path)
        for new_id, rec in enumerate(raw_segments):
            rec["id"] = new_id

    # Complete two-way roads whose reverse direction is missing from the file.
    present = {(r["from_node"], r["to_node"]) for r in raw_segments if not r["oneway"]}
    next_id = len(raw_segments)
    for rec in list(raw_segments):
        if rec["oneway"] or (rec["to_node"], rec["from_node"]) in present:
            continue
        twin = dict(rec, id=next_id, from_node=rec["to_node"], to_node=rec["from_node"])
        raw_segments.append(twin)
        present.add((twin["from_node"], twin["to_node"]))
        logger.warning("Added reverse segment %d for two-way segment %d", next_id, rec["id"])
        next_id += 1

    segments = [RoadSegment(**rec) for rec in raw_segments]
    return RoadNetwork(nodes, segments)


def load_network(path: Union[str, Path]) -> RoadNetwork:
    """
    Load a road network from its JSON file.

    Args:
        path: Network JSON file with "nodes" and "segments" arrays

    Returns:
        A validated RoadNetwork with dense segment ids

    Raises:
        ValidationError: If the path is invalid or a segment references a missing node
        NetworkFormatError: If the JSON cannot be parsed or a record is malformed
    """
    file_path = validate_file_path(path)
    try:
        text = file_path.read_text(encoding="utf-8")
    except OSError as e:
        raise FileIOError(
            message=f"Failed to read network file: {str(e)}",
            file_path=str(file_path),
            operation="read"
        )
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(
            message=f"Invalid JSON: {e.msg}",
            file_path=str(file_path),
            record=f"line {e.lineno}, column {e.colno}"
        )
    net = _parse_network_document(doc, str(file_path))
    logger.info("Loaded %r from %s", net, file_path)
    return net


def network_to_document(net: RoadNetwork) -> Dict[str, Any]:
    return {
        "nodes": [
            {"id": node.id, "lon": node.lon, "lat": node.lat}
            for node in net.nodes.values()
        ],
        "segments": [
            {
                "id": s.id,
                "from": s.from_node,
                "to": s.to_node,
                "length_m": s.length_m,
                "class": s.road_class.value,
                "lanes": s.lanes,
                "oneway": s.oneway,
                "speed_limit_kph": s.speed_limit_kph,
            }
            for s in net.segments
        ],
    }


def write_network(net: RoadNetwork, path: Union[str, Path]) -> Path:
    """
    Write a network in the JSON format read by :func:`load_network`.

    Raises:
        FileIOError: If the file cannot be written
    """
    file_path = Path(path)
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_text(json.dumps(network_to_document(net), indent=1), encoding="utf-8")
    except OSError as e:
        raise FileIOError(
            message=f"Failed to write network file: {str(e)}",
            file_path=str(file_path),
            operation="write"
        )
    return file_path
