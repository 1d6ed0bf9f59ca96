import numpy as np
import pytest

from focusmix.optim import GradCheckError, ParamStore, adam_step, grad_check
from focusmix.tensor import DimensionError, Tensor


class TestAdam:
    def test_zero_grad_is_noop_on_value(self):
        store = ParamStore()
        p = store.add("w", np.array([1.0, -2.0]))
        before = p.data.copy()
        adam_step(store, {"w": np.zeros(2)})
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_bias_corrected(self):
        store = ParamStore(np.float64)
        p = store.add("w", np.array([0.0]))
        adam_step(store, {"w": np.array([1.0])})
        # m_hat = v_hat = 1 at t=1, so update is -lr/(1+eps)
        assert p.data[0] == pytest.approx(-0.001 / (1.0 + 1e-8), rel=1e-9)

    def test_untouched_param_byte_identical(self):
        store = ParamStore()
        a = store.add("a", np.array([1.0]))
        store.add("b", np.array([2.0]))
        before = a.data.tobytes()
        adam_step(store, {"b": np.array([0.5])})
        assert a.data.tobytes() == before
        assert store.step_count("a") == 0
        assert store.step_count("b") == 1

    def test_shape_mismatch(self):
        store = ParamStore()
        store.add("w", np.zeros(3))
        with pytest.raises(DimensionError):
            adam_step(store, {"w": np.zeros(2)})

    def test_moments_advance_only_for_touched(self):
        store = ParamStore()
        store.add("a", np.zeros(2))
        store.add("b", np.zeros(2))
        for _ in range(3):
            adam_step(store, {"a": np.ones(2)})
        assert store.step_count("a") == 3
        assert store.step_count("b") == 0


class TestGradCheck:
    def test_quadratic_exact(self):
        store = ParamStore(np.float64)
        store.add("p", np.array([0.5, -1.5, 2.0]))
        err = grad_check(lambda s: (s["p"] * s["p"]).sum() * 0.5, store)
        assert err < 1e-8

    def test_detects_wrong_gradient(self):
        store = ParamStore(np.float64)
        store.add("p", np.array([0.7]))

        def bad_loss(s):
            p = s["p"]
            out = Tensor(p.data * p.data, _prev=(p,))
            out._backward = lambda g: p._accum(g * 3.0 * p.data)  # wrong factor
            return out.sum()

        assert grad_check(bad_loss, store) > 1e-2

    def test_nonfinite_loss_diagnosed(self):
        store = ParamStore(np.float64)
        store.add("p", np.array([np.inf]))
        with pytest.raises(GradCheckError):
            grad_check(lambda s: (s["p"] * s["p"]).sum(), store)


class TestParamStore:
    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("w", np.zeros(1))
        with pytest.raises(ValueError):
            store.add("w", np.zeros(1))

    def test_iteration_order_is_insertion_order(self):
        store = ParamStore()
        for name in ("z", "a", "m"):
            store.add(name, np.zeros(1))
        assert store.names() == ["z", "a", "m"]

    def test_collect_grads_only_touched(self):
        store = ParamStore(np.float64)
        a = store.add("a", np.array([2.0]))
        store.add("b", np.array([3.0]))
        store.zero_grad()
        (a * a).sum().backward()
        grads = store.collect_grads()
        assert set(grads) == {"a"}
        np.testing.assert_allclose(grads["a"], [4.0])

    def test_load_arrays_shape_check(self):
        store = ParamStore()
        store.add("w", np.zeros((2, 2)))
        with pytest.raises(DimensionError):
            store.load_arrays({"w": np.zeros((2, 3))})
