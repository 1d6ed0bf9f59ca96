import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from focusmix.optim import ParamStore, grad_check
from focusmix.tensor import (
    DimensionError,
    Tensor,
    affine,
    bernoulli_nll,
    embedding_lookup,
    matmul,
    sigmoid,
    softmax,
    softmax_xent,
    tanh,
)


def t(x):
    return Tensor(np.asarray(x, dtype=np.float64))


class TestAffine:
    def test_hand_arithmetic(self):
        y = affine(t([1.0, 1.0]), t([[1.0, 2.0], [3.0, 4.0]]), t([0.0, 0.0]))
        np.testing.assert_allclose(y.data, [3.0, 7.0])

    def test_identity(self):
        x = np.array([0.3, -1.2, 4.0])
        y = affine(t(x), t(np.eye(3)), t(np.zeros(3)))
        np.testing.assert_allclose(y.data, x)

    def test_zero_weights(self):
        y = affine(t([9.0]), t([[0.0]]), t([5.0]))
        np.testing.assert_allclose(y.data, [5.0])

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError) as e:
            affine(t([1.0, 2.0, 3.0]), t([[1.0, 2.0], [3.0, 4.0]]), t([0.0, 0.0]))
        assert "(2, 2)" in str(e.value) and "(3,)" in str(e.value)


class TestActivations:
    def test_sigmoid_zero(self):
        assert sigmoid(t([0.0])).data[0] == 0.5

    def test_tanh_zero(self):
        assert tanh(t([0.0])).data[0] == 0.0

    def test_sigmoid_closed_form(self):
        assert sigmoid(t([math.log(3.0)])).data[0] == pytest.approx(0.75, abs=1e-12)

    @given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
    def test_sigmoid_open_interval_no_nan(self, x):
        y = sigmoid(t([x])).data[0]
        assert np.isfinite(y)
        assert 0.0 < y < 1.0 or (abs(x) > 30 and 0.0 <= y <= 1.0)

    @given(st.floats(min_value=-1e3, max_value=1e3))
    def test_tanh_range(self, x):
        assert -1.0 <= tanh(t([x])).data[0] <= 1.0


class TestEmbeddingLookup:
    def test_repeated_row(self):
        E = t([[1.0, 2.0], [3.0, 4.0]])
        out = embedding_lookup(E, [0, 0])
        np.testing.assert_allclose(out.data, [[1.0, 2.0], [1.0, 2.0]])

    def test_empty_ids(self):
        out = embedding_lookup(t([[1.0, 2.0], [3.0, 4.0]]), [])
        assert out.data.shape == (0, 2)

    def test_gather_order(self):
        out = embedding_lookup(t([[1.0, 2.0], [3.0, 4.0]]), [1, 0])
        np.testing.assert_allclose(out.data, [[3.0, 4.0], [1.0, 2.0]])

    def test_out_of_range_names_id(self):
        with pytest.raises(IndexError, match="7"):
            embedding_lookup(t([[1.0, 2.0]]), [7])

    def test_scatter_add_backward(self):
        E = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
        out = embedding_lookup(E, [0, 0, 1])
        out.sum().backward()
        np.testing.assert_allclose(E.grad, [[2.0, 2.0], [1.0, 1.0]])


class TestSoftmaxXent:
    def test_uniform(self):
        loss = softmax_xent(t([1.0, 1.0, 1.0, 1.0]), 2)
        assert loss.item() == pytest.approx(math.log(4.0), abs=1e-12)

    def test_saturated_correct(self):
        loss = softmax_xent(t([500.0, 0.0, 0.0]), 0)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_closed_form(self):
        loss = softmax_xent(t([1.0, 0.0]), 1)
        assert loss.item() == pytest.approx(math.log(1.0 + math.e), abs=1e-12)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            softmax_xent(t([1.0, 0.0]), 2)


class TestBernoulliNll:
    def test_uniform(self):
        loss = bernoulli_nll(t([0.5, 0.5]), [0, 1])
        assert loss.item() == pytest.approx(2.0 * math.log(2.0), abs=1e-12)

    def test_saturated(self):
        loss = bernoulli_nll(t([1.0 - 1e-7]), [1])
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_closed_form(self):
        loss = bernoulli_nll(t([0.75, 0.25]), [1, 0])
        assert loss.item() == pytest.approx(-2.0 * math.log(0.75), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            bernoulli_nll(t([0.5]), [0, 1])


class TestSoftmax:
    @given(st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=8))
    def test_simplex(self, xs):
        w = softmax(t(xs)).data
        assert (w >= 0).all()
        assert w.sum() == pytest.approx(1.0, abs=1e-6)


class TestDeterminism:
    def test_bit_identical_reruns(self):
        x = np.linspace(-2, 2, 16).astype(np.float32)
        a = sigmoid(Tensor(x)).data.tobytes()
        b = sigmoid(Tensor(x)).data.tobytes()
        assert a == b


def _gc(build_loss, arrays, tol=1e-6):
    store = ParamStore(np.float64)
    for name, a in arrays.items():
        store.add(name, np.asarray(a, dtype=np.float64))
    assert grad_check(build_loss, store) < tol


class TestOpGradients:
    rng = np.random.default_rng(0)

    def test_affine_grad(self):
        _gc(lambda s: affine(s["x"], s["W"], s["b"]).sum(),
            {"x": self.rng.normal(size=3), "W": self.rng.normal(size=(2, 3)),
             "b": self.rng.normal(size=2)})

    def test_sigmoid_tanh_grad(self):
        _gc(lambda s: (sigmoid(s["x"]) * tanh(s["x"])).sum(),
            {"x": self.rng.normal(size=5)})

    def test_matmul_grad(self):
        _gc(lambda s: matmul(s["A"], s["B"]).sum(),
            {"A": self.rng.normal(size=(3, 4)), "B": self.rng.normal(size=(4, 2))})

    def test_embedding_grad(self):
        _gc(lambda s: (embedding_lookup(s["E"], [2, 0, 2]).sum() * 1.5),
            {"E": self.rng.normal(size=(4, 3))})

    def test_softmax_xent_grad(self):
        _gc(lambda s: softmax_xent(s["x"], 1), {"x": self.rng.normal(size=6)})

    def test_bernoulli_nll_grad(self):
        _gc(lambda s: bernoulli_nll(sigmoid(s["x"]), [1, 0, 1, 1]),
            {"x": self.rng.normal(size=4)})

    def test_softmax_weighted_sum_grad(self):
        _gc(lambda s: (softmax(s["x"]) * s["y"]).sum(),
            {"x": self.rng.normal(size=5), "y": self.rng.normal(size=5)})
