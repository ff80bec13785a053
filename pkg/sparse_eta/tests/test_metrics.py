"""
Tests for metrics.py
"""

import numpy as np
import pytest

from sparse_eta.atoms.error_utils import ValidationError
from sparse_eta.molecules.routing import Route
from sparse_eta.organisms.metrics import (
    NUM_TIME_BINS,
    SpeedState,
    classify_speed_state,
    condition_map,
    parameter_recovery_mape,
    route_accuracy,
    route_report,
    state_counts,
    time_bin_labels,
    time_bin_of,
    time_step_divergence,
    tte_metrics,
    tte_metrics_by_label,
)
from sparse_eta.organisms.simulator import gen_grid_network
from sparse_eta.organisms.st_model import TravelTimeTable

DAY0 = 1696204800.0  # 2023-10-02 00:00 UTC


class TestTteMetrics:
    """Travel-time error metrics."""

    def test_single_trip(self):
        report = tte_metrics([120.0], [60.0])
        assert report.rmse_min == pytest.approx(1.0)
        assert report.mae_min == pytest.approx(1.0)
        assert report.mape_pct == pytest.approx(100.0)
        assert report.n == 1

    def test_two_trips(self):
        report = tte_metrics([60.0, 180.0], [60.0, 120.0])
        assert report.rmse_min == pytest.approx(np.sqrt(0.5))
        assert report.mae_min == pytest.approx(0.5)
        assert report.mape_pct == pytest.approx(25.0)

    def test_zero_truth_excluded_from_mape(self):
        report = tte_metrics([30.0, 90.0], [0.0, 60.0])
        assert report.mape_pct == pytest.approx(50.0)
        assert tte_metrics([30.0], [0.0]).mape_pct == 0.0

    @pytest.mark.parametrize("pred, true", [([], []), ([1.0, 2.0], [1.0])])
    def test_invalid_lengths(self, pred, true):
        with pytest.raises(ValidationError) as excinfo:
            tte_metrics(pred, true)
        assert excinfo.value.validation_type == "tte_lengths"

    def test_by_label(self):
        report = tte_metrics_by_label({
            "r0p125": ([120.0], [60.0]),
            "r0p0625": ([60.0], [60.0]),
            "empty": ([], []),
        })
        assert report.label == "all"
        assert report.n == 2
        assert report.mae_min == pytest.approx(0.5)
        assert set(report.breakdown) == {"r0p125", "r0p0625"}
        assert report.breakdown["r0p0625"].rmse_min == 0.0
        assert report.to_dict()["breakdown"]["r0p125"]["mape_pct"] == pytest.approx(100.0)


class TestRouteAccuracy:
    """Length-weighted route overlap."""

    def test_worked_example(self):
        truth = Route(segment_ids=(0, 1), lengths_m=(600.0, 400.0))
        inferred = Route(segment_ids=(0, 2), lengths_m=(600.0, 200.0))
        assert route_accuracy(truth, inferred) == pytest.approx(0.6)

    def test_identical_and_empty(self):
        route = Route((3, 4), (100.0, 100.0))
        assert route_accuracy(route, route) == 1.0
        assert route_accuracy(Route(()), Route(())) == 1.0
        assert route_accuracy(route, Route(())) == 0.0

    def test_directed_by_default(self):
        net = gen_grid_network(2, 2, seed=0)
        forward = Route.from_segments(net, [0])
        backward = Route.from_segments(net, [1])
        assert route_accuracy(forward, backward) == 0.0
        assert route_accuracy(forward, backward, net=net, undirected_overlap=True) == 1.0

    def test_undirected_needs_network(self):
        with pytest.raises(ValidationError):
            route_accuracy(Route((0,), (1.0,)), Route((1,), (1.0,)), undirected_overlap=True)


class TestTimeBins:
    """Half-hour bins of the daytime window."""

    def test_labels(self):
        labels = time_bin_labels()
        assert len(labels) == NUM_TIME_BINS == 32
        assert labels[0] == "06:00-06:30"
        assert labels[-1] == "21:30-22:00"

    @pytest.mark.parametrize("hour, expected", [(5.99, None), (6.0, 0), (8.25, 4), (21.99, 31), (22.0, None)])
    def test_bin_of(self, hour, expected):
        assert time_bin_of(DAY0 + hour * 3600.0) == expected

    def test_report_bins(self):
        perfect = (Route((0,), (100.0,)), Route((0,), (100.0,)))
        miss = (Route((0,), (100.0,)), Route((1,), (100.0,)))
        report = route_report(
            [perfect, miss, perfect],
            [DAY0 + 8 * 3600, DAY0 + 8 * 3600 + 60, DAY0 + 3 * 3600],
            label="r0p125",
        )
        assert report.n == 3
        assert report.mean_accuracy == pytest.approx(2.0 / 3.0)
        assert report.bins[4].n == 2
        assert report.bins[4].mean_accuracy == pytest.approx(0.5)
        assert report.bins[0].mean_accuracy is None
        assert report.to_dict()["bins"][4]["label"] == "08:00-08:30"

    def test_report_length_mismatch(self):
        with pytest.raises(ValidationError):
            route_report([(Route(()), Route(()))], [])


class TestSpeedState:
    """Quartile speed states."""

    @pytest.mark.parametrize("speed, expected", [
        (0.0, SpeedState.VERY_CONGESTED),
        (14.99, SpeedState.VERY_CONGESTED),
        (15.0, SpeedState.CONGESTED),
        (20.0, SpeedState.CONGESTED),
        (30.0, SpeedState.SLOW),
        (45.0, SpeedState.UNBLOCKED),
        (50.0, SpeedState.UNBLOCKED),
        (90.0, SpeedState.UNBLOCKED),
    ])
    def test_limit_60(self, speed, expected):
        assert classify_speed_state(speed, 60.0) is expected

    def test_invalid_inputs(self):
        with pytest.raises(ValidationError):
            classify_speed_state(10.0, 0.0)
        with pytest.raises(ValidationError):
            classify_speed_state(-1.0, 60.0)
        with pytest.raises(ValidationError):
            classify_speed_state(float("nan"), 60.0)


class TestConditionMap:
    """Road-condition maps from a travel-time table."""

    def setup_method(self):
        self.net = gen_grid_network(2, 2, seed=0)
        base = self.net.base_times()
        self.mu = np.repeat(base[:, None], 48, axis=1)
        self.mu[:, 34] *= 4.0
        self.table = TravelTimeTable(mu=self.mu, sigma=np.ones_like(self.mu))

    def test_free_flow_is_unblocked(self):
        conditions = condition_map(self.table, self.net, 12)
        assert all(c.state is SpeedState.UNBLOCKED for c in conditions)
        assert conditions[0].speed_kph == pytest.approx(conditions[0].limit_kph)

    def test_four_times_slower_is_congested(self):
        conditions = condition_map(self.table, self.net, 34)
        assert all(c.state is SpeedState.CONGESTED for c in conditions)
        assert state_counts(conditions) == {
            "very_congested": 0, "congested": 8, "slow": 0, "unblocked": 0,
        }

    def test_no_data_segments(self):
        counts = np.zeros((self.net.num_segments, 48), dtype=int)
        counts[0, 34] = 3
        conditions = condition_map(self.table, self.net, 34, traversal_counts=counts)
        assert conditions[0].state is SpeedState.CONGESTED
        assert not conditions[0].no_data
        assert conditions[1].no_data
        assert conditions[1].state is SpeedState.UNBLOCKED

    def test_bad_time_step(self):
        with pytest.raises(ValidationError):
            condition_map(self.table, self.net, 48)

    def test_table_must_cover_network(self):
        small = TravelTimeTable(mu=self.mu[:4], sigma=np.ones_like(self.mu[:4]))
        with pytest.raises(ValidationError):
            condition_map(small, self.net, 0)


class TestRecovery:
    """Learned means against the simulated truth."""

    def setup_method(self):
        self.truth = np.full((3, 48), 100.0)
        self.table = TravelTimeTable(mu=np.full((3, 48), 110.0), sigma=np.ones((3, 48)))

    def test_mape_over_well_observed_entries(self):
        counts = np.zeros((3, 48), dtype=int)
        counts[0, 16] = 30
        counts[1, 16] = 29
        report = parameter_recovery_mape(self.table, self.truth, counts, min_count=30)
        assert report.n_entries == 1
        assert report.mape_pct == pytest.approx(10.0)

    def test_no_eligible_entries(self):
        report = parameter_recovery_mape(self.table, self.truth, np.zeros((3, 48), dtype=int))
        assert report.mape_pct is None
        assert report.n_entries == 0

    def test_divergence_frame(self):
        counts = np.ones((3, 48), dtype=int)
        frame = time_step_divergence(self.table, self.truth, counts)
        assert list(frame.columns) == [
            "time_step", "start", "mean_pred_s", "mean_true_s", "mape_pct", "traversals",
        ]
        assert len(frame) == 48
        assert frame.loc[17, "start"] == "08:30"
        assert frame["mape_pct"].tolist() == pytest.approx([10.0] * 48)
        assert frame["traversals"].tolist() == [3] * 48

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            time_step_divergence(self.table, np.ones((2, 48)))
