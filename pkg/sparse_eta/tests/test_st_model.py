"""
Tests for st_model.py
"""

import math

import numpy as np
import pytest

from sparse_eta.atoms.config import ModelConfig
from sparse_eta.atoms.error_utils import FileIOError, ValidationError
from sparse_eta.molecules.road_network import (
    ROAD_CLASSES,
    RelationalAdjacency,
    RoadClass,
    RoadSegment,
    build_relational_adjacency,
)
from sparse_eta.organisms.simulator import gen_grid_network
from sparse_eta.organisms.st_model import (
    FEATURE_DIM,
    TEMPORAL_IN_DIM,
    TIME_STEPS,
    ContextTables,
    GraphInputs,
    ModelParams,
    RouteBatch,
    TemporalContext,
    TravelTimeTable,
    aggregate_route,
    embed_segment_features,
    lanes_bucket,
    load_checkpoint,
    loss_and_grads,
    materialize_table,
    pair_losses,
    pair_nll,
    parameter_shapes,
    predict_params,
    rgcn_forward,
    save_checkpoint,
    sigma_bias_for,
    temporal_embed,
    time_step_of,
)


def _perturbed(params, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    return params.with_arrays({
        name: value + scale * rng.normal(size=value.shape)
        for name, value in params.arrays.items()
    })


class TestHelpers:
    """Small pure functions of the model."""

    def test_aggregate_route(self):
        mu = np.array([[60.0], [120.0]])
        sigma = np.array([[3.0], [4.0]])
        assert aggregate_route([0, 1], mu, sigma, 0) == (180.0, 5.0)
        assert aggregate_route([], mu, sigma, 0) == (0.0, 0.0)

    def test_pair_nll(self):
        assert pair_nll(300.0, 30.0, 300.0) == pytest.approx(0.5 * math.log(2 * math.pi * 900.0))
        assert pair_nll(300.0, 30.0, 300.0) == pytest.approx(4.3201, abs=1e-4)
        assert pair_nll(300.0, 30.0, 360.0) == pytest.approx(4.3201 + 2.0, abs=1e-4)

    def test_time_step_of(self):
        assert time_step_of(0.0) == 0
        assert time_step_of(8 * 3600 + 1799) == 16
        assert time_step_of(86400 + 23.5 * 3600) == 47

    def test_lanes_bucket(self):
        assert [lanes_bucket(n) for n in (0, 1, 2, 3, 4, 7)] == [0, 0, 1, 2, 3, 3]

    def test_context_from_timestamp(self):
        # 2023-10-02 was a Monday
        ctx = TemporalContext.from_timestamp(1696204800.0 + 9 * 3600)
        assert ctx.day_of_week == 0
        assert ctx.time_step == 18

    def test_context_range(self):
        with pytest.raises(ValidationError):
            TemporalContext(time_step=48)
        with pytest.raises(ValidationError):
            TemporalContext(time_step=0, day_of_week=7)


class TestInitialization:
    """A freshly initialized model predicts free-flow means."""

    def setup_method(self):
        self.net = gen_grid_network(3, 3, seed=0)
        self.graph = GraphInputs.from_network(self.net)
        self.config = ModelConfig(hidden_dim=8)

    def test_table_equals_base_times(self):
        params = ModelParams.init(self.config, seed=0)
        table = materialize_table(params, self.graph)
        assert table.mu.shape == (self.net.num_segments, TIME_STEPS)
        base = self.net.base_times()
        assert np.array_equal(table.mu, np.repeat(base[:, None], TIME_STEPS, axis=1))
        np.testing.assert_allclose(table.sigma, 60.0)

    def test_sigma_bias(self):
        assert 1.0 + math.log1p(math.exp(sigma_bias_for(60.0, 1.0))) == pytest.approx(60.0)

    def test_seeded(self):
        a = ModelParams.init(self.config, seed=3)
        b = ModelParams.init(self.config, seed=3)
        c = ModelParams.init(self.config, seed=4)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != c.fingerprint()

    def test_wrong_shape_rejected(self):
        params = ModelParams.init(self.config, seed=0)
        arrays = dict(params.arrays)
        arrays["temporal_b"] = np.zeros(3)
        with pytest.raises(ValidationError) as excinfo:
            params.with_arrays(arrays)
        assert excinfo.value.validation_type == "parameter_shape"

    def test_context_ids_bounded_by_embeddings(self):
        params = ModelParams.init(self.config, seed=0)
        with pytest.raises(ValidationError):
            materialize_table(params, self.graph, weather_id=self.config.n_weather)


class TestForward:
    """Forward pass and loss."""

    def setup_method(self):
        self.net = gen_grid_network(2, 3, seed=1)
        self.graph = GraphInputs.from_network(self.net)
        self.params = _perturbed(ModelParams.init(ModelConfig(hidden_dim=4), seed=1))
        self.batch = RouteBatch.from_routes(
            [[0, 2], [4], [1, 10]],
            [TemporalContext(16), TemporalContext(16, weather_id=1), TemporalContext(40, day_of_week=5)],
            [150.0, 70.0, 210.0],
        )

    def test_batch_shares_contexts(self):
        assert self.batch.num_pairs == 3
        assert len(self.batch.contexts) == 3
        assert self.batch.pair_index.tolist() == [0, 0, 1, 2, 2]

    def test_empty_route_rejected(self):
        with pytest.raises(ValidationError):
            RouteBatch.from_routes([[]], [TemporalContext(0)], [10.0])

    def test_losses_match_table(self):
        table = materialize_table(self.params, self.graph, day_of_week=0)
        losses = pair_losses(self.params, self.graph, self.batch)
        mu_total, sigma_total = table.route_moments([0, 2], 16)
        assert losses[0] == pytest.approx(pair_nll(mu_total, sigma_total, 150.0), rel=1e-9)

    def test_mu_bounded_by_clamp(self):
        table = materialize_table(self.params, self.graph)
        ratio = table.mu / self.net.base_times()[:, None]
        assert np.all(ratio <= math.exp(3.0) + 1e-9)
        assert np.all(ratio >= math.exp(-3.0) - 1e-12)
        assert np.all(table.sigma >= 1.0)

    def test_gradients_match_finite_differences(self):
        total, grads, per_pair = loss_and_grads(self.params, self.graph, self.batch)
        assert total == pytest.approx(per_pair.sum())
        rng = np.random.default_rng(5)
        eps = 1e-6
        for name in ("mu_w2", "sigma_b1", "rgcn1_self", "rgcn3_rel3", "temporal_w", "emb_class", "emb_weather"):
            value = self.params.arrays[name]
            for _ in range(3):
                idx = tuple(int(rng.integers(0, n)) for n in value.shape)
                plus = dict(self.params.arrays)
                minus = dict(self.params.arrays)
                plus[name] = value.copy()
                minus[name] = value.copy()
                plus[name][idx] += eps
                minus[name][idx] -= eps
                f_plus = pair_losses(self.params.with_arrays(plus), self.graph, self.batch).sum()
                f_minus = pair_losses(self.params.with_arrays(minus), self.graph, self.batch).sum()
                numeric = (f_plus - f_minus) / (2 * eps)
                assert grads[name][idx] == pytest.approx(numeric, rel=1e-3, abs=1e-6)

    @pytest.mark.parametrize("seed", range(50))
    def test_gradients_of_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        net = gen_grid_network(int(rng.integers(2, 4)), int(rng.integers(2, 4)), seed=seed)
        graph = GraphInputs.from_network(net)
        config = ModelConfig(hidden_dim=int(rng.integers(2, 5)))
        params = _perturbed(ModelParams.init(config, seed=seed), seed=seed)
        base = net.base_times()
        routes, contexts, t_obs = [], [], []
        for _ in range(int(rng.integers(1, 4))):
            route = rng.choice(net.num_segments, size=int(rng.integers(1, 7))).tolist()
            routes.append(route)
            contexts.append(TemporalContext(
                int(rng.integers(0, TIME_STEPS)),
                day_of_week=int(rng.integers(0, 7)),
                weather_id=int(rng.integers(0, config.n_weather)),
                holiday_id=int(rng.integers(0, config.n_holiday)),
            ))
            t_obs.append(float(base[route].sum() * rng.uniform(0.7, 1.5)))
        batch = RouteBatch.from_routes(routes, contexts, t_obs)

        _, grads, _ = loss_and_grads(params, graph, batch)
        assert set(grads) == set(params.arrays)
        eps = 1e-6
        for name, value in params.arrays.items():
            idx = tuple(int(rng.integers(0, n)) for n in value.shape)
            plus = dict(params.arrays)
            minus = dict(params.arrays)
            plus[name] = value.copy()
            minus[name] = value.copy()
            plus[name][idx] += eps
            minus[name][idx] -= eps
            f_plus = pair_losses(params.with_arrays(plus), graph, batch).sum()
            f_minus = pair_losses(params.with_arrays(minus), graph, batch).sum()
            numeric = (f_plus - f_minus) / (2 * eps)
            assert grads[name][idx] == pytest.approx(numeric, rel=1e-4, abs=1e-6), name

    def test_single_segment_helpers_agree_with_table(self):
        table = materialize_table(self.params, self.graph)
        adj = build_relational_adjacency(self.net)
        h0 = np.vstack([embed_segment_features(s, self.params) for s in self.net.segments])
        s_v = rgcn_forward(adj, h0, self.params)
        s_t = temporal_embed(TemporalContext(20), self.params)
        mu, sigma = predict_params(s_v, s_t, 3, self.params, float(self.net.base_times()[3]))
        assert mu == pytest.approx(table.mu[3, 20], rel=1e-10)
        assert sigma == pytest.approx(table.sigma[3, 20], rel=1e-10)

    def test_predict_needs_positive_base_time(self):
        with pytest.raises(ValidationError):
            predict_params(np.zeros((1, 4)), np.zeros(4), 0, self.params, 0.0)


def _zero_params(hidden_dim):
    return ModelParams({name: np.zeros(shape) for name, shape in parameter_shapes(hidden_dim, 4, 2).items()}, hidden_dim)


def _no_edges(n):
    return RelationalAdjacency(
        neighbors=tuple(tuple(() for _ in ROAD_CLASSES) for _ in range(n)),
        norms=tuple(tuple(1.0 for _ in ROAD_CLASSES) for _ in range(n)),
    )


class TestEmbeddings:
    """Road-feature, graph and temporal encoders on hand-set weights."""

    def setup_method(self):
        self.params = _perturbed(ModelParams.init(ModelConfig(hidden_dim=4), seed=2), seed=2)

    def test_oneway_changes_only_its_own_block(self):
        a = RoadSegment(0, 0, 1, 500.0, RoadClass.TERTIARY, 2, True, 30.0)
        b = RoadSegment(1, 1, 0, 500.0, RoadClass.TERTIARY, 2, False, 30.0)
        ea = embed_segment_features(a, self.params)
        eb = embed_segment_features(b, self.params)
        assert ea.shape == (FEATURE_DIM,)
        assert np.array_equal(ea[:-2], eb[:-2])
        assert not np.array_equal(ea[-2:], eb[-2:])
        assert np.array_equal(embed_segment_features(a, _zero_params(4)), np.zeros(FEATURE_DIM))

    def test_graph_without_edges_applies_self_weights_only(self):
        h0 = np.random.default_rng(4).normal(size=(3, FEATURE_DIM))
        w = self.params.arrays
        expected = np.maximum(np.maximum(h0 @ w["rgcn1_self"], 0.0) @ w["rgcn2_self"], 0.0) @ w["rgcn3_self"]
        np.testing.assert_allclose(rgcn_forward(_no_edges(3), h0, self.params), expected, rtol=1e-12)

    def test_path_graph_by_hand(self):
        # 0 - 1 - 2, every neighbor in relation 0, one-dimensional features
        arrays = dict(_zero_params(1).arrays)
        arrays["rgcn1_self"] = np.zeros((FEATURE_DIM, 1))
        arrays["rgcn1_self"][0, 0] = 0.5
        arrays["rgcn1_rel0"] = np.zeros((FEATURE_DIM, 1))
        arrays["rgcn1_rel0"][0, 0] = 2.0
        arrays["rgcn2_self"] = np.ones((1, 1))
        arrays["rgcn3_self"] = np.ones((1, 1))
        params = ModelParams(arrays, hidden_dim=1)
        empty = tuple(() for _ in ROAD_CLASSES[1:])
        ones = tuple(1.0 for _ in ROAD_CLASSES[1:])
        adj = RelationalAdjacency(
            neighbors=(((1,),) + empty, ((0, 2),) + empty, ((1,),) + empty),
            norms=((1.0,) + ones, (2.0,) + ones, (1.0,) + ones),
        )
        h0 = np.zeros((3, FEATURE_DIM))
        h0[:, 0] = [1.0, 2.0, 3.0]
        # 0.5 * h_i + 2 * mean of the neighbors' h
        out = rgcn_forward(adj, h0, params)
        np.testing.assert_allclose(out[:, 0], [0.5 + 4.0, 1.0 + 4.0, 1.5 + 4.0])

    def test_temporal_inputs_differ_in_two_one_hot_slots(self):
        params = ModelParams.init(ModelConfig(hidden_dim=TEMPORAL_IN_DIM), seed=0)
        arrays = dict(params.arrays)
        # identity layer with positive embeddings exposes the input vector
        arrays["temporal_w"] = np.eye(TEMPORAL_IN_DIM)
        arrays["emb_weather"] = np.abs(arrays["emb_weather"]) + 0.1
        arrays["emb_holiday"] = np.abs(arrays["emb_holiday"]) + 0.1
        params = params.with_arrays(arrays)

        a = temporal_embed(TemporalContext(5, day_of_week=2), params)
        assert a.shape == (TEMPORAL_IN_DIM,)
        assert a[2] == 1.0 and a[7 + 5] == 1.0
        b = temporal_embed(TemporalContext(30, day_of_week=2), params)
        assert np.flatnonzero(a != b).tolist() == [7 + 5, 7 + 30]
        c = temporal_embed(TemporalContext(5, day_of_week=6), params)
        assert np.flatnonzero(a != c).tolist() == [2, 6]
        assert np.array_equal(a, temporal_embed(TemporalContext(5, day_of_week=2), params))

    def test_zero_temporal_weights(self):
        assert np.array_equal(temporal_embed(TemporalContext(7), _zero_params(4)), np.zeros(4))


class TestContextTables:
    """Per-context tables of one model."""

    def setup_method(self):
        self.net = gen_grid_network(3, 3, seed=0)
        self.graph = GraphInputs.from_network(self.net)
        self.params = _perturbed(ModelParams.init(ModelConfig(hidden_dim=4), seed=3), seed=3)

    def test_reference_table(self):
        tables = ContextTables(self.params, self.graph, reference=(2, 1, 0))
        expected = materialize_table(self.params, self.graph, 2, 1, 0)
        assert np.array_equal(tables.table.mu, expected.mu)
        assert np.array_equal(tables.table.sigma, expected.sigma)

    def test_one_table_per_context(self):
        tables = ContextTables(self.params, self.graph)
        monday = tables.for_context(TemporalContext(16))
        assert tables.for_context(TemporalContext(40)) is monday
        tuesday = tables.for_context(TemporalContext(16, day_of_week=1, weather_id=1))
        assert not np.array_equal(monday.mu, tuesday.mu)
        assert tables.keys() == [(0, 0, 0), (1, 1, 0)]

    def test_warm_includes_reference(self):
        tables = ContextTables(self.params, self.graph, reference=(0, 0, 0))
        keys = tables.warm([TemporalContext(3, day_of_week=4), TemporalContext(9, day_of_week=4)])
        assert keys == [(0, 0, 0), (4, 0, 0)]
        assert tables.keys() == keys

    def test_plain_table_answers_every_context(self):
        table = materialize_table(self.params, self.graph)
        assert table.for_context(TemporalContext(16, day_of_week=5)) is table


class TestTravelTimeTable:
    """Tests for TravelTimeTable."""

    def test_rejects_non_positive_mu(self):
        with pytest.raises(ValidationError):
            TravelTimeTable(mu=np.zeros((2, 48)), sigma=np.ones((2, 48)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValidationError):
            TravelTimeTable(mu=np.ones((2, 48)), sigma=np.ones((3, 48)))

    def test_lognormal_view(self):
        table = TravelTimeTable(mu=np.full((1, 2), 100.0), sigma=np.full((1, 2), 15.0))
        log_mu, log_sigma = table.lognormal()
        assert log_sigma[0, 0] ** 2 == pytest.approx(math.log(1.0225))


class TestCheckpoint:
    """Saving and loading parameters."""

    def test_bitwise_round_trip(self, tmp_path):
        params = _perturbed(ModelParams.init(ModelConfig(hidden_dim=4), seed=2))
        path = save_checkpoint(params, tmp_path / "ckpt" / "checkpoint.json", extra={"corpus": "r0p125"})
        loaded = load_checkpoint(path)
        assert loaded.fingerprint() == params.fingerprint()
        for name, value in params.arrays.items():
            assert np.array_equal(loaded.arrays[name], value)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ValidationError):
            load_checkpoint(path)

    def test_unreadable(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{")
        with pytest.raises(FileIOError):
            load_checkpoint(path)
