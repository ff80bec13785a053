"""
Tests for road_network.py
"""

import json

import pytest

from sparse_eta.atoms.error_utils import NetworkFormatError, NoNodeInRange, ValidationError
from sparse_eta.molecules.road_network import (
    ROAD_CLASSES,
    CLASS_INDEX,
    Node,
    RoadClass,
    RoadNetwork,
    RoadSegment,
    build_relational_adjacency,
    load_network,
    parse_road_class,
    segment_base_time,
    snap_point,
    write_network,
)
from sparse_eta.organisms.simulator import gen_grid_network


def _segment(seg_id, u, v, oneway=True, road_class=RoadClass.TERTIARY, length=100.0):
    return RoadSegment(seg_id, u, v, length, road_class, 1, oneway, 36.0)


class TestRoadSegment:
    """Per-segment checks and the free-flow time."""

    def test_base_time(self):
        assert segment_base_time(_segment(0, 0, 1, length=500.0)) == pytest.approx(50.0)

    @pytest.mark.parametrize("field, value", [("length_m", 0.0), ("speed_limit_kph", -1.0), ("lanes", 0)])
    def test_rejects_bad_attributes(self, field, value):
        kwargs = dict(
            id=0, from_node=0, to_node=1, length_m=10.0, road_class=RoadClass.PRIMARY,
            lanes=1, oneway=True, speed_limit_kph=50.0,
        )
        kwargs[field] = value
        with pytest.raises(ValidationError):
            RoadSegment(**kwargs)

    def test_unknown_class_falls_back_to_tertiary(self):
        assert parse_road_class("residential") is RoadClass.TERTIARY
        assert parse_road_class(" Primary ") is RoadClass.PRIMARY

    def test_nine_classes_in_order(self):
        assert len(ROAD_CLASSES) == 9
        assert CLASS_INDEX[RoadClass.TRUNK] == 0
        assert CLASS_INDEX[RoadClass.TERTIARY_LINK] == 8


class TestRoadNetwork:
    """Construction-time checks of RoadNetwork."""

    def setup_method(self):
        self.nodes = [Node(0, 0.0, 0.0), Node(1, 0.001, 0.0), Node(2, 0.002, 0.0)]

    def test_adjacency(self):
        net = RoadNetwork(self.nodes, [_segment(0, 0, 1), _segment(1, 1, 2)])
        assert net.out_segments(1) == (1,)
        assert net.in_segments(1) == (0,)
        assert net.out_segments(2) == ()
        assert net.base_times().tolist() == [10.0, 10.0]

    def test_segment_ids_must_be_dense(self):
        with pytest.raises(ValidationError) as excinfo:
            RoadNetwork(self.nodes, [_segment(0, 0, 1), _segment(2, 1, 2)])
        assert excinfo.value.validation_type == "segment_ids"

    def test_missing_node(self):
        with pytest.raises(ValidationError) as excinfo:
            RoadNetwork(self.nodes, [_segment(0, 0, 9)])
        assert excinfo.value.details["missing_nodes"] == ["9"]

    def test_two_way_needs_reverse(self):
        with pytest.raises(ValidationError):
            RoadNetwork(self.nodes, [_segment(0, 0, 1, oneway=False)])

    def test_two_way_twins(self):
        net = RoadNetwork(self.nodes, [_segment(0, 0, 1, oneway=False), _segment(1, 1, 0, oneway=False)])
        assert net.reverse_of(0) == 1
        assert net.reverse_of(1) == 0

    def test_duplicate_nodes(self):
        with pytest.raises(ValidationError):
            RoadNetwork(self.nodes + [Node(1, 5.0, 5.0)], [])


class TestRelationalAdjacency:
    """Neighbor grouping on a 2x2 grid (one primary road, three tertiary)."""

    def setup_method(self):
        self.net = gen_grid_network(2, 2, spacing_m=100.0, artery_stride=3, seed=0)
        self.adj = build_relational_adjacency(self.net)

    def test_grid_layout(self):
        assert self.net.num_nodes == 4
        assert self.net.num_segments == 8
        assert self.net.segments[0].road_class is RoadClass.PRIMARY
        assert self.net.segments[2].road_class is RoadClass.TERTIARY

    def test_neighbors_grouped_by_class(self):
        primary = CLASS_INDEX[RoadClass.PRIMARY]
        tertiary = CLASS_INDEX[RoadClass.TERTIARY]
        assert self.adj.neighbors[0][primary] == (1,)
        assert self.adj.neighbors[0][tertiary] == (4, 5, 6, 7)
        assert self.adj.norms[0][tertiary] == 4.0
        assert self.adj.norms[0][CLASS_INDEX[RoadClass.TRUNK]] == 1.0

    def test_relations_partition_neighbors(self):
        for i, per_rel in enumerate(self.adj.neighbors):
            flat = [j for rel in per_rel for j in rel]
            assert len(flat) == len(set(flat))
            assert i not in flat

    def test_relation_edges(self):
        dst, src, weight = self.adj.relation_edges(CLASS_INDEX[RoadClass.PRIMARY])
        assert len(dst) == len(src) == len(weight)
        assert set(src.tolist()) <= {0, 1}
        assert all(w == pytest.approx(1.0 / self.adj.norms[d][CLASS_INDEX[RoadClass.PRIMARY]])
                   for d, w in zip(dst, weight))


class TestSnapPoint:
    """Nearest-junction snapping."""

    def setup_method(self):
        self.net = gen_grid_network(3, 3, spacing_m=500.0, seed=0)

    def test_snaps_to_nearest(self):
        node = self.net.nodes[4]
        assert snap_point(self.net, node.lon + 1e-5, node.lat - 1e-5) == 4

    def test_outside_radius(self):
        node = self.net.nodes[0]
        with pytest.raises(NoNodeInRange) as excinfo:
            snap_point(self.net, node.lon - 0.05, node.lat, radius_m=100.0)
        assert excinfo.value.details["radius_m"] == 100.0

    def test_tie_goes_to_smallest_id(self):
        nodes = [Node(7, 0.001, 0.0), Node(3, -0.001, 0.0)]
        net = RoadNetwork(nodes, [])
        assert snap_point(net, 0.0, 0.0, radius_m=500.0) == 3


class TestNetworkFile:
    """Reading and writing the network JSON format."""

    def _write(self, tmp_path, doc):
        path = tmp_path / "network.json"
        path.write_text(json.dumps(doc))
        return path

    def test_round_trip(self, tmp_path):
        net = gen_grid_network(2, 3, seed=4)
        path = write_network(net, tmp_path / "out" / "network.json")
        assert load_network(path) == net

    def test_adds_missing_reverse_and_renumbers(self, tmp_path):
        doc = {
            "nodes": [{"id": "a", "lon": 0.0, "lat": 0.0}, {"id": "b", "lon": 0.001, "lat": 0.0}],
            "segments": [{
                "id": 10, "from": "a", "to": "b", "length_m": 111.0, "class": "residential",
                "lanes": 2, "oneway": False, "speed_limit_kph": 40,
            }],
        }
        net = load_network(self._write(tmp_path, doc))
        assert net.num_segments == 2
        assert net.segments[0].id == 0
        assert net.segments[0].road_class is RoadClass.TERTIARY
        assert (net.segments[1].from_node, net.segments[1].to_node) == ("b", "a")
        assert net.reverse_of(0) == 1

    def test_missing_field(self, tmp_path):
        doc = {"nodes": [{"id": 0, "lon": 0.0}], "segments": []}
        with pytest.raises(NetworkFormatError) as excinfo:
            load_network(self._write(tmp_path, doc))
        assert excinfo.value.record == "nodes[0]"

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "network.json"
        path.write_text("{not json")
        with pytest.raises(NetworkFormatError):
            load_network(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_network(tmp_path / "absent.json")
