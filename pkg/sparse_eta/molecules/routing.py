"""
Routing over the road network.

Shortest and k-shortest loopless paths (Yen's algorithm on top of a single
Dijkstra engine with segment/node exclusion masks), the length-weighted
Jaccard overlap of two routes, and the diverse candidate set built from them.

All ties are broken by the lexicographically smaller segment-id sequence,
so results are reproducible across runs and platforms.

Example:
    ```python
    from sparse_eta.molecules.routing import candidate_set

    cands = candidate_set(net, net.base_times(), src=0, dst=63, m=5, tau=0.8)
    fastest = cands.routes[0]
    ```
"""

import heapq
from dataclasses import dataclass
from typing import AbstractSet, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np

from sparse_eta.atoms.error_utils import NoPathError, ValidationError
from sparse_eta.atoms.input_validator import (
    validate_positive_int,
    validate_positive_weights,
    validate_threshold,
)
from sparse_eta.molecules.road_network import NodeId, RoadNetwork

Weights = Union[np.ndarray, Sequence[float]]

DEFAULT_OVERSAMPLE = 4


@dataclass(frozen=True)
class Route:
    """An ordered, junction-consistent sequence of directed segments."""
    segment_ids: Tuple[int, ...]
    lengths_m: Tuple[float, ...] = ()
    total_weight_s: float = 0.0

    @property
    def total_length_m(self) -> float:
        return float(sum(self.lengths_m))

    def __len__(self) -> int:
        return len(self.segment_ids)

    @classmethod
    def from_segments(
        cls,
        net: RoadNetwork,
        segment_ids: Sequence[int],
        weights: Optional[Weights] = None,
    ) -> "Route":
        """
        Build a route from segment ids, checking junction consistency.

        Raises:
            ValidationError: If consecutive segments do not connect or a segment repeats
        """
        ids = tuple(int(s) for s in segment_ids)
        for a, b in zip(ids, ids[1:]):
            if net.segments[a].to_node != net.segments[b].from_node:
                raise ValidationError(
                    message=f"Segments {a} and {b} do not share a junction",
                    input_value=str(ids),
                    validation_type="route"
                )
        if len(set(ids)) != len(ids):
            raise ValidationError(
                message="Route repeats a segment",
                input_value=str(ids),
                validation_type="route"
            )
        lengths = tuple(net.segments[s].length_m for s in ids)
        weight = _path_weight(_weight_list(weights), ids) if weights is not None else 0.0
        return cls(segment_ids=ids, lengths_m=lengths, total_weight_s=weight)


@dataclass
class CandidateSet:
    """The diverse candidate routes of one snapped OD pair plus the current assignment."""
    origin_node: NodeId
    dest_node: NodeId
    routes: Tuple[Route, ...]
    assigned_index: int = 0

    def __post_init__(self) -> None:
        if not self.routes:
            raise ValidationError(
                message="A candidate set needs at least one route",
                validation_type="candidate_set"
            )
        if not 0 <= self.assigned_index < len(self.routes):
            raise ValidationError(
                message="assigned_index out of range",
                input_value=str(self.assigned_index),
                validation_type="candidate_set"
            )

    @property
    def assigned(self) -> Route:
        return self.routes[self.assigned_index]


def _weight_list(weights: Weights) -> List[float]:
    if isinstance(weights, np.ndarray):
        return weights.astype(float).tolist()
    return [float(w) for w in weights]


def _path_weight(w: List[float], seq: Sequence[int]) -> float:
    # Left-to-right accumulation, identical to the order used by Dijkstra.
    total = 0.0
    for sid in seq:
        total += w[sid]
    return total


def _to_route(net: RoadNetwork, w: List[float], seq: Tuple[int, ...]) -> Route:
    return Route(
        segment_ids=seq,
        lengths_m=tuple(net.segments[s].length_m for s in seq),
        total_weight_s=_path_weight(w, seq),
    )


def _check_nodes(net: RoadNetwork, *nodes: NodeId) -> None:
    for node in nodes:
        if node not in net.nodes:
            raise ValidationError(
                message=f"Node {node} is not in the network",
                input_value=str(node),
                validation_type="node_reference"
            )


def _dijkstra(
    net: RoadNetwork,
    w: List[float],
    src: NodeId,
    dst: NodeId,
    banned_segments: AbstractSet[int] = frozenset(),
    banned_nodes: AbstractSet[NodeId] = frozenset(),
) -> Optional[Tuple[float, Tuple[int, ...]]]:
    """Min (cost, segment sequence) path from src to dst under exclusion masks."""
    best: Dict[NodeId, Tuple[float, Tuple[int, ...]]] = {src: (0.0, ())}
    heap: List[Tuple[float, Tuple[int, ...], NodeId]] = [(0.0, (), src)]
    settled = set()
    segments = net.segments
    while heap:
        cost, seq, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if node == dst:
            return cost, seq
        for sid in net.out_segments(node):
            if sid in banned_segments:
                continue
            nxt = segments[sid].to_node
            if nxt in settled or nxt in banned_nodes:
                continue
            label = (cost + w[sid], seq + (sid,))
            prev = best.get(nxt)
            if prev is None or label < prev:
                best[nxt] = label
                heapq.heappush(heap, (label[0], label[1], nxt))
    return None


def shortest_path(net: RoadNetwork, weights: Weights, src: NodeId, dst: NodeId) -> Route:
    """
    Minimum-weight path from ``src`` to ``dst``.

    Raises:
        ValidationError: On unknown nodes or non-positive weights
        NoPathError: If ``dst`` is unreachable
    """
    _check_nodes(net, src, dst)
    w = _weight_list(weights)
    validate_positive_weights(w)
    if src == dst:
        return Route(segment_ids=(), lengths_m=(), total_weight_s=0.0)
    found = _dijkstra(net, w, src, dst)
    if found is None:
        raise NoPathError(src, dst)
    return _to_route(net, w, found[1])


def k_shortest_paths(
    net: RoadNetwork,
    weights: Weights,
    src: NodeId,
    dst: NodeId,
    k: int,
) -> List[Route]:
    """
    Up to ``k`` loopless paths in nondecreasing weight order (Yen's algorithm).

    Spur paths are computed on the original graph with the root's nodes and
    the already-used deviation segments masked out, so no graph copies are made.

    Raises:
        ValidationError: On unknown nodes, non-positive weights or ``k < 1``
        NoPathError: If no path exists at all
    """
    validate_positive_int(k, "k")
    _check_nodes(net, src, dst)
    w = _weight_list(weights)
    validate_positive_weights(w)
    if src == dst:
        return [Route(segment_ids=(), lengths_m=(), total_weight_s=0.0)]

    first = _dijkstra(net, w, src, dst)
    if first is None:
        raise NoPathError(src, dst)

    accepted: List[Tuple[float, Tuple[int, ...]]] = [(_path_weight(w, first[1]), first[1])]
    seen = {first[1]}
    pool: List[Tuple[float, Tuple[int, ...]]] = []
    segments = net.segments

    while len(accepted) < k:
        last = accepted[-1][1]
        path_nodes = [src] + [segments[s].to_node for s in last]
        for i in range(len(last)):
            root = last[:i]
            banned_segments = {
                seq[i] for _, seq in accepted if len(seq) > i and seq[:i] == root
            }
            banned_nodes: FrozenSet[NodeId] = frozenset(path_nodes[:i])
            spur = _dijkstra(net, w, path_nodes[i], dst, banned_segments, banned_nodes)
            if spur is None:
                continue
            total = root + spur[1]
            if total in seen:
                continue
            seen.add(total)
            heapq.heappush(pool, (_path_weight(w, total), total))
        if not pool:
            break
        accepted.append(heapq.heappop(pool))

    return [_to_route(net, w, seq) for _, seq in accepted]


def weighted_jaccard(r1: Route, r2: Route) -> float:
    """
    Length-weighted overlap of two routes' segment sets.

    Shared length over union length; two empty routes count as identical.

    Example:
        >>> a = Route((1, 2), (100.0, 200.0))
        >>> b = Route((2, 3), (200.0, 300.0))
        >>> round(weighted_jaccard(a, b), 4)
        0.3333
    """
    len1 = dict(zip(r1.segment_ids, r1.lengths_m))
    len2 = dict(zip(r2.segment_ids, r2.lengths_m))
    if not len1 and not len2:
        return 1.0
    union = {**len1, **len2}
    union_len = sum(union.values())
    shared_len = sum(length for sid, length in len1.items() if sid in len2)
    if union_len <= 0.0:
        return 1.0
    return shared_len / union_len


def candidate_set(
    net: RoadNetwork,
    weights: Weights,
    src: NodeId,
    dst: NodeId,
    m: int,
    tau: float,
    oversample: int = DEFAULT_OVERSAMPLE,
) -> CandidateSet:
    """
    Build the diverse candidate set for one OD pair.

    Draws ``oversample * m`` shortest paths, then greedily accepts a path
    only if its weighted Jaccard overlap with every accepted path is at most
    ``tau``, stopping at ``m`` routes. The assignment starts at the shortest.

    Raises:
        ValidationError: On invalid ``m`` or ``tau``
        NoPathError: If no path exists
    """
    validate_positive_int(m, "m")
    validate_threshold(tau)
    pool = k_shortest_paths(net, weights, src, dst, oversample * m)
    accepted: List[Route] = []
    for route in pool:
        if all(weighted_jaccard(route, kept) <= tau for kept in accepted):
            accepted.append(route)
            if len(accepted) == m:
                break
    return CandidateSet(origin_node=src, dest_node=dst, routes=tuple(accepted), assigned_index=0)
