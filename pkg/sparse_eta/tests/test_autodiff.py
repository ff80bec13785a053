"""
Tests for autodiff.py
"""

import numpy as np
import pytest

from sparse_eta.atoms.error_utils import ConsumedTapeError, ValidationError
from sparse_eta.molecules import autodiff as ad
from sparse_eta.molecules.autodiff import AdamState, GradientTape, adam_step


def _numeric_grad(fn, arrays, name, eps=1e-6):
    base = {k: v.copy() for k, v in arrays.items()}
    grad = np.zeros_like(base[name])
    it = np.nditer(base[name], flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        plus = {k: v.copy() for k, v in base.items()}
        minus = {k: v.copy() for k, v in base.items()}
        plus[name][idx] += eps
        minus[name][idx] -= eps
        grad[idx] = (fn(plus) - fn(minus)) / (2 * eps)
    return grad


def _small_network(tape, arrays, x, rows):
    p = tape.watch_all(arrays)
    hidden = ad.relu(ad.add(ad.matmul(tape.constant(x), p["w"]), p["b"]))
    picked = ad.gather_rows(hidden, rows)
    out = ad.softplus(ad.matmul(picked, p["v"]))
    return ad.reduce_mean(ad.square(ad.sub(ad.exp(ad.clamp(out, -3.0, 3.0)), 1.5)))


class TestGradients:
    """Reverse-mode gradients against central finite differences."""

    def setup_method(self):
        rng = np.random.default_rng(0)
        self.x = rng.normal(size=(5, 3))
        self.rows = np.array([0, 2, 2, 4])
        self.arrays = {
            "w": rng.normal(size=(3, 4)),
            "b": rng.normal(size=(1, 4)),
            "v": rng.normal(size=(4, 1)) * 0.5,
        }

    def _value(self, arrays):
        tape = GradientTape()
        return float(_small_network(tape, arrays, self.x, self.rows).value)

    @pytest.mark.parametrize("name", ["w", "b", "v"])
    def test_matches_finite_differences(self, name):
        tape = GradientTape()
        loss = _small_network(tape, self.arrays, self.x, self.rows)
        grads = tape.backward(loss)
        numeric = _numeric_grad(self._value, self.arrays, name)
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-7)

    def test_division_and_log(self):
        arrays = {"a": np.array([1.5, 2.0, 3.0]), "c": np.array([0.5, 4.0, 2.0])}

        def value(arr):
            tape = GradientTape()
            p = tape.watch_all(arr)
            return float(ad.reduce_sum(ad.log(ad.div(p["a"], p["c"]) + 1.0)).value)

        tape = GradientTape()
        p = tape.watch_all(arrays)
        grads = tape.backward(ad.reduce_sum(ad.log(ad.div(p["a"], p["c"]) + 1.0)))
        for name in arrays:
            np.testing.assert_allclose(grads[name], _numeric_grad(value, arrays, name), rtol=1e-5)

    def test_gather_accumulates_repeated_rows(self):
        tape = GradientTape()
        a = tape.watch("a", np.arange(6.0).reshape(3, 2))
        grads = tape.backward(ad.reduce_sum(ad.gather_rows(a, np.array([1, 1, 2]))))
        np.testing.assert_array_equal(grads["a"], [[0, 0], [2, 2], [1, 1]])

    def test_segment_sum_and_scale_rows(self):
        tape = GradientTape()
        a = tape.watch("a", np.ones((4, 2)))
        summed = ad.segment_sum(ad.scale_rows(a, np.array([1.0, 2.0, 3.0, 4.0])), np.array([0, 1, 0, 1]), 2)
        np.testing.assert_array_equal(summed.value, [[4, 4], [6, 6]])
        grads = tape.backward(ad.reduce_sum(summed))
        np.testing.assert_array_equal(grads["a"][:, 0], [1, 2, 3, 4])

    def test_concat_splits_gradient(self):
        tape = GradientTape()
        a = tape.watch("a", np.ones((2, 1)))
        b = tape.watch("b", np.ones((2, 3)))
        joined = ad.concat_cols([a, b])
        assert joined.shape == (2, 4)
        grads = tape.backward(ad.reduce_sum(ad.mul(joined, 2.0)))
        np.testing.assert_array_equal(grads["a"], np.full((2, 1), 2.0))
        np.testing.assert_array_equal(grads["b"], np.full((2, 3), 2.0))

    def test_clamp_blocks_gradient_at_bound(self):
        tape = GradientTape()
        a = tape.watch("a", np.array([-5.0, 0.0, 5.0]))
        grads = tape.backward(ad.reduce_sum(ad.clamp(a, -1.0, 1.0)))
        np.testing.assert_array_equal(grads["a"], [0.0, 1.0, 0.0])

    def test_unused_parameter_gets_zeros(self):
        tape = GradientTape()
        a = tape.watch("a", np.array([1.0, 2.0]))
        tape.watch("unused", np.ones((2, 2)))
        grads = tape.backward(ad.reduce_sum(a))
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))

    def test_softplus_does_not_overflow(self):
        tape = GradientTape()
        a = tape.watch("a", np.array([-800.0, 800.0]))
        out = ad.softplus(a)
        assert np.all(np.isfinite(out.value))
        grads = tape.backward(ad.reduce_sum(out))
        np.testing.assert_allclose(grads["a"], [0.0, 1.0])


class TestTapeLifecycle:
    """A tape is replayed at most once."""

    def test_second_backward_raises(self):
        tape = GradientTape()
        loss = ad.reduce_sum(tape.watch("a", np.ones(3)))
        tape.backward(loss)
        assert tape.consumed
        with pytest.raises(ConsumedTapeError):
            tape.backward(loss)

    def test_recording_after_backward_raises(self):
        tape = GradientTape()
        a = tape.watch("a", np.ones(3))
        tape.backward(ad.reduce_sum(a))
        with pytest.raises(ConsumedTapeError):
            tape.constant(1.0)

    def test_non_scalar_loss(self):
        tape = GradientTape()
        a = tape.watch("a", np.ones(3))
        with pytest.raises(ValidationError):
            tape.backward(a)

    def test_duplicate_watch(self):
        tape = GradientTape()
        tape.watch("a", 1.0)
        with pytest.raises(ValidationError):
            tape.watch("a", 2.0)

    def test_operands_from_two_tapes(self):
        a = GradientTape().watch("a", np.ones(2))
        b = GradientTape().watch("b", np.ones(2))
        with pytest.raises(ValidationError):
            ad.add(a, b)


class TestAdam:
    """Tests for adam_step."""

    def test_first_step_moves_by_learning_rate(self):
        params = {"w": np.array([1.0, -1.0, 0.5])}
        grads = {"w": np.array([10.0, -0.01, 0.0])}
        new_params, state = adam_step(params, grads, AdamState.zeros(params), lr=0.1)
        np.testing.assert_allclose(new_params["w"], [0.9, -0.9, 0.5], atol=1e-6)
        assert state.t == 1

    def test_inputs_are_not_modified(self):
        params = {"w": np.array([1.0])}
        state = AdamState.zeros(params)
        adam_step(params, {"w": np.array([1.0])}, state, lr=0.1)
        assert params["w"][0] == 1.0
        assert state.t == 0
        assert state.m["w"][0] == 0.0

    def test_minimizes_a_quadratic(self):
        params = {"x": np.array([3.0, -2.0])}
        state = AdamState.zeros(params)
        for _ in range(500):
            tape = GradientTape()
            x = tape.watch("x", params["x"])
            grads = tape.backward(ad.reduce_sum(ad.square(x)))
            params, state = adam_step(params, grads, state, lr=0.05)
        np.testing.assert_allclose(params["x"], [0.0, 0.0], atol=0.05)
