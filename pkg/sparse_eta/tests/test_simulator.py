"""
Tests for simulator.py
"""

import numpy as np
import pytest

from sparse_eta.atoms.config import SimulationConfig
from sparse_eta.atoms.error_utils import ValidationError
from sparse_eta.molecules.road_network import RoadClass
from sparse_eta.molecules.routing import Route, shortest_path
from sparse_eta.molecules.trajectories import DenseTrajectory
from sparse_eta.organisms.simulator import (
    CongestionProfile,
    GroundTruth,
    OdSampler,
    congestion_curve,
    day_start_unix,
    gen_corpus,
    gen_grid_network,
    gen_ground_truth,
    gen_trip,
    sparsify,
    sparsify_corpus,
)
from sparse_eta.organisms.st_model import time_step_of


class TestGridNetwork:
    """Tests for gen_grid_network."""

    def test_shape(self):
        net = gen_grid_network(3, 4, seed=0)
        assert net.num_nodes == 12
        # 3 rows x 3 horizontal + 2 x 4 vertical roads, two directions each
        assert net.num_segments == 2 * (3 * 3 + 2 * 4)

    def test_arteries_and_shared_lanes(self):
        net = gen_grid_network(4, 3, artery_stride=3, seed=5)
        for i in range(0, net.num_segments, 2):
            a, b = net.segments[i], net.segments[i + 1]
            assert a.lanes == b.lanes
            assert net.reverse_of(a.id) == b.id
        classes = {s.road_class for s in net.segments}
        assert classes == {RoadClass.PRIMARY, RoadClass.TERTIARY}

    def test_same_seed_same_network(self):
        assert gen_grid_network(3, 3, seed=2) == gen_grid_network(3, 3, seed=2)

    def test_too_small(self):
        with pytest.raises(ValidationError):
            gen_grid_network(1, 5)


class TestGroundTruth:
    """Congestion profile and ground-truth moments."""

    def test_curve(self):
        curve = congestion_curve(2.5)
        assert curve.shape == (48,)
        assert curve[16] == 2.5
        assert curve[35] == 2.5
        assert curve[15] == pytest.approx(1.75)
        assert curve[0] == 1.0

    def test_noise_free_truth(self):
        net = gen_grid_network(2, 2, seed=0)
        profile = CongestionProfile(cv=0.2, noise_sd=0.0)
        truth = gen_ground_truth(net, profile, seed=0)
        base = net.base_times()
        assert truth.true_mu.shape == (8, 48)
        np.testing.assert_allclose(truth.true_mu[:, 0], base)
        assert truth.true_mu[0, 17] == pytest.approx(base[0] * 2.5)
        assert truth.true_mu[2, 17] == pytest.approx(base[2] * 1.5)
        np.testing.assert_allclose(truth.true_sigma, 0.2 * truth.true_mu)

    def test_document_round_trip(self):
        net = gen_grid_network(2, 2, seed=0)
        truth = gen_ground_truth(net, CongestionProfile(), seed=3)
        restored = GroundTruth.from_document(truth.to_document())
        np.testing.assert_array_equal(restored.true_mu, truth.true_mu)
        assert restored.seed == 3

    def test_invalid_profile(self):
        with pytest.raises(ValidationError):
            CongestionProfile(primary_peak=0.5)


class TestCorpus:
    """Trip generation and sparsification."""

    def setup_method(self):
        self.net = gen_grid_network(4, 4, seed=0)
        self.truth = gen_ground_truth(self.net, CongestionProfile(), seed=0)
        self.config = SimulationConfig(trips=12, min_hops=3)

    def test_od_sampler_respects_min_hops(self):
        sampler = OdSampler(self.net, min_hops=6)
        assert sampler.pairs
        assert all(src in (0, 3, 12, 15) for src, _ in sampler.pairs)
        with pytest.raises(ValidationError):
            OdSampler(self.net, min_hops=7)

    def test_trips_are_consistent(self):
        trips = gen_corpus(self.net, self.truth, self.config, seed=1)
        assert [t.trajectory_id for t in trips] == [f"t{i:06d}" for i in range(12)]
        day0 = day_start_unix(self.config.base_date)
        for trip in trips:
            assert len(trip.route) >= 3
            assert day0 + 6 * 3600 <= trip.departure <= day0 + 22 * 3600
            assert np.all(trip.segment_times() > 0.0)
            assert trip.nodes[0] == self.net.segments[trip.route.segment_ids[0]].from_node

    def test_threads_do_not_change_the_corpus(self):
        one = gen_corpus(self.net, self.truth, self.config, seed=1, threads=1)
        four = gen_corpus(self.net, self.truth, self.config, seed=1, threads=4)
        assert [t.to_record() for t in one] == [t.to_record() for t in four]

    def test_progress_callback(self):
        calls = []
        gen_corpus(self.net, self.truth, self.config, seed=1, progress_callback=calls.append)
        assert calls == [1] * 12

    def test_zero_trips(self):
        assert gen_corpus(self.net, self.truth, SimulationConfig(trips=0), seed=1) == []

    def test_sparsify_keeps_endpoints(self):
        trip = gen_corpus(self.net, self.truth, self.config, seed=2)[0]
        sparse = sparsify(trip, keep_ratio=0.125)
        assert sparse.trajectory_id == trip.trajectory_id
        assert sparse.fixes[0][2] == trip.node_times[0]
        assert sparse.fixes[-1][2] == trip.node_times[-1]
        assert sparse.fixes[-1][:2] == trip.coords[-1]
        assert len(sparse.fixes) <= len(trip.nodes)

    def test_lower_ratio_gives_fewer_fixes(self):
        trips = gen_corpus(self.net, self.truth, self.config, seed=3)
        dense_count = sum(len(t.fixes) for t in sparsify_corpus(trips, 1.0, self.config, seed=3))
        sparse_count = sum(len(t.fixes) for t in sparsify_corpus(trips, 0.03125, self.config, seed=3))
        assert sparse_count < dense_count

    def test_interpolated_fixes_use_tick_times(self):
        trip = gen_corpus(self.net, self.truth, self.config, seed=4)[0]
        sparse = sparsify(trip, keep_ratio=1.0, tick_s=15.0, snap_to_nodes=False)
        times = [f[2] for f in sparse.fixes]
        assert times[1] - times[0] == pytest.approx(15.0)
        assert times[-1] == trip.node_times[-1]

    def test_jitter_needs_rng(self):
        trip = gen_corpus(self.net, self.truth, self.config, seed=4)[0]
        with pytest.raises(ValidationError):
            sparsify(trip, keep_ratio=0.5, jitter_m=5.0)
        jittered = sparsify(trip, keep_ratio=0.5, jitter_m=5.0, rng=np.random.default_rng(0))
        assert jittered.fixes[0][:2] != trip.coords[0]

    def test_bad_keep_ratio(self):
        trip = gen_corpus(self.net, self.truth, self.config, seed=4)[0]
        with pytest.raises(ValidationError):
            sparsify(trip, keep_ratio=0.0)


class TestGenTrip:
    """One simulated drive."""

    def setup_method(self):
        self.net = gen_grid_network(4, 4, seed=0)
        self.truth = gen_ground_truth(self.net, CongestionProfile(), seed=0)
        self.departure = day_start_unix("2023-10-02") + 3 * 3600

    def test_follows_fastest_route_when_forced(self):
        trip = gen_trip(self.net, self.truth, (0, 15), self.departure, np.random.default_rng(1), route_probs=(1.0,))
        expected = shortest_path(self.net, self.truth.true_mu[:, 6], 0, 15)
        assert trip.route.segment_ids == expected.segment_ids
        assert trip.nodes[0] == 0
        assert trip.nodes[-1] == 15

    def test_segment_times_inside_truncation_window(self):
        rng = np.random.default_rng(5)
        trip = gen_trip(self.net, self.truth, (0, 15), self.departure, rng, trajectory_id="x")
        assert trip.trajectory_id == "x"
        assert trip.node_times[0] == self.departure
        entries = zip(trip.route.segment_ids, trip.node_times, trip.segment_times())
        for sid, entered, seconds in entries:
            mu = self.truth.true_mu[sid, time_step_of(entered)]
            assert 0.25 * mu * (1 - 1e-9) <= seconds <= 4.0 * mu * (1 + 1e-9)
        for sid, a, b in zip(trip.route.segment_ids, trip.nodes, trip.nodes[1:]):
            assert (self.net.segments[sid].from_node, self.net.segments[sid].to_node) == (a, b)

    def test_seeded(self):
        one = gen_trip(self.net, self.truth, (0, 15), self.departure, np.random.default_rng(9))
        two = gen_trip(self.net, self.truth, (0, 15), self.departure, np.random.default_rng(9))
        assert one.to_record() == two.to_record()


class TestSparsifyGaps:
    """Fix spacing of a hand-made ten-segment drive starting on a whole second."""

    def setup_method(self):
        day0 = day_start_unix("2023-10-02")
        offsets = [0.0, 97.0, 230.0, 301.0, 388.0, 512.0, 590.0, 655.0, 790.0, 871.0, 1000.0]
        self.trip = DenseTrajectory(
            trajectory_id="line",
            route=Route(tuple(range(10)), (500.0,) * 10),
            nodes=tuple(range(11)),
            coords=tuple((108.94 + 0.005 * i, 34.26) for i in range(11)),
            node_times=tuple(day0 + s for s in offsets),
        )

    @pytest.mark.parametrize("keep_ratio, gap", [(0.125, 120.0), (0.0625, 240.0), (0.03125, 480.0)])
    def test_tick_gaps(self, keep_ratio, gap):
        sparse = sparsify(self.trip, keep_ratio, tick_s=15.0, snap_to_nodes=False)
        times = [f[2] for f in sparse.fixes]
        assert times[0] == self.trip.node_times[0]
        assert times[-1] == self.trip.node_times[-1]
        interior = np.diff(times[:-1])
        assert len(interior) >= 2
        assert np.all(interior == gap)
        assert 0.0 < times[-1] - times[-2] <= gap

    def test_node_fixes_carry_passage_times(self):
        sparse = sparsify(self.trip, 0.125, tick_s=15.0, snap_to_nodes=True)
        times = [f[2] for f in sparse.fixes]
        assert set(times) <= set(self.trip.node_times)
        assert times == sorted(times)
        assert not np.all(np.diff(times[:-1]) == 120.0)
