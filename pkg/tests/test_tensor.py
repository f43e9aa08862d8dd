import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advre import tensor as T
from advre.errors import ConfigError, DimensionError, TrainingError
from advre.tensor import SgdConfig, Tensor, sgd_step

from gradcheck import TOL, max_rel_error, numeric_grad


def test_tensor_invariants():
    t = Tensor(np.arange(6.0).reshape(2, 3))
    assert t.shape == (2, 3)
    assert t.data.size == t.grad.size == 6
    assert not t.grad.any()
    t.grad += 3.0
    t.zero_grad()
    assert not t.grad.any()


def test_tensor_rejects_empty_dims():
    with pytest.raises(DimensionError):
        Tensor(np.zeros((0, 3)))


# -- matvec -----------------------------------------------------------------

def test_matvec_examples():
    np.testing.assert_array_equal(T.matvec(np.eye(2), [3.0, 4.0]), [3.0, 4.0])
    np.testing.assert_array_equal(T.matvec(np.zeros((3, 2)), [5.0, -1.0]), np.zeros(3))
    np.testing.assert_array_equal(T.matvec([[1, 2], [3, 4]], [1, 1]), [3, 7])


def test_matvec_shape_mismatch():
    with pytest.raises(DimensionError):
        T.matvec(np.zeros((2, 3)), np.zeros(2))


@pytest.mark.parametrize("shape", [(2, 3), (4, 1), (3, 5)])
def test_matvec_gradient(shape):
    rng = np.random.default_rng(1)
    W = rng.normal(size=shape)
    x = rng.normal(size=shape[1])
    proj = rng.normal(size=shape[0])
    f = lambda: float(proj @ T.matvec(W, x))
    dW, dx = T.matvec_backward(proj, W, x)
    assert max_rel_error(dW, numeric_grad(f, W)) < TOL
    assert max_rel_error(dx, numeric_grad(f, x)) < TOL


# -- conv1d -----------------------------------------------------------------

def _sliding_window(X, K, m):
    # independent oracle: explicit loops over positions and window offsets
    n, k_i = X.shape
    half = (m - 1) // 2
    out = np.zeros((n, K.shape[0]))
    for i in range(n):
        window = []
        for j in range(i - half, i + half + 1):
            window.extend(X[j] if 0 <= j < n else np.zeros(k_i))
        out[i] = K @ np.array(window)
    return out


def test_conv1d_examples():
    H, _ = T.conv1d(np.array([[1.0, 2.0]]), np.zeros((4, 6)), 3)
    np.testing.assert_array_equal(H, np.zeros((1, 4)))
    H, _ = T.conv1d(np.array([[1.0], [2.0], [3.0]]), np.array([[1.0, 1.0, 1.0]]), 3)
    np.testing.assert_array_equal(H[:, 0], [3.0, 6.0, 5.0])


def test_conv1d_center_selector_is_identity():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(5, 3))
    K = np.zeros((3, 9))
    K[:, 3:6] = np.eye(3)
    H, _ = T.conv1d(X, K, 3)
    np.testing.assert_array_equal(H, X)


def test_conv1d_even_window():
    with pytest.raises(ConfigError):
        T.conv1d(np.zeros((3, 2)), np.zeros((1, 4)), 2)


@pytest.mark.parametrize("n,k_i,k_h,m", [(1, 2, 3, 3), (4, 3, 2, 3), (6, 2, 2, 5), (3, 1, 1, 1)])
def test_conv1d_matches_oracle_and_gradient(n, k_i, k_h, m):
    rng = np.random.default_rng(n * 7 + m)
    X = rng.normal(size=(n, k_i))
    K = rng.normal(size=(k_h, m * k_i))
    H, cols = T.conv1d(X, K, m)
    np.testing.assert_allclose(H, _sliding_window(X, K, m), atol=1e-12)
    proj = rng.normal(size=H.shape)
    f = lambda: float(np.sum(proj * T.conv1d(X, K, m)[0]))
    dX, dK = T.conv1d_backward(proj, cols, K, m)
    assert max_rel_error(dX, numeric_grad(f, X)) < TOL
    assert max_rel_error(dK, numeric_grad(f, K)) < TOL


def test_conv1d_batched_equals_single():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(3, 4, 2))
    K = rng.normal(size=(2, 6))
    H, _ = T.conv1d(X, K, 3)
    for b in range(3):
        np.testing.assert_allclose(H[b], T.conv1d(X[b], K, 3)[0], atol=1e-12)


# -- max pooling ------------------------------------------------------------

def test_max_pool_examples():
    out, _, _ = T.max_pool_cols(np.array([[1.0, -2.0, 4.0]]))
    np.testing.assert_array_equal(out, [1.0, -2.0, 4.0])
    out, _, _ = T.max_pool_cols(np.array([[1.0, 5.0], [3.0, 2.0]]))
    np.testing.assert_array_equal(out, [3.0, 5.0])


def test_max_pool_tie_goes_to_first_row():
    out, arg, empty = T.max_pool_cols(np.array([[2.0], [2.0]]))
    dH = T.max_pool_cols_backward(np.array([1.0]), arg, empty, 2)
    np.testing.assert_array_equal(dH, [[1.0], [0.0]])


def test_max_pool_empty():
    with pytest.raises(DimensionError):
        T.max_pool_cols(np.zeros((0, 3)))


def test_max_pool_masked_empty_column_pools_to_zero():
    H = np.array([[[4.0, 1.0], [2.0, 3.0]]])
    out, arg, empty = T.max_pool_cols(H, np.array([[False, False]]))
    np.testing.assert_array_equal(out, [[0.0, 0.0]])
    dH = T.max_pool_cols_backward(np.ones((1, 2)), arg, empty, 2)
    assert not dH.any()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 4)),
              elements=st.floats(-10, 10)),
       st.integers(0, 2**31 - 1))
def test_max_pool_gradient_mass(H, seed):
    dout = np.random.default_rng(seed).normal(size=H.shape[1])
    out, arg, empty = T.max_pool_cols(H)
    dH = T.max_pool_cols_backward(dout, arg, empty, H.shape[0])
    np.testing.assert_array_equal(dH.sum(axis=0), dout)
    assert ((dH != 0).sum(axis=0) <= 1).all()
    np.testing.assert_array_equal(out, H.max(axis=0))


# -- GRU --------------------------------------------------------------------

def _scalar_gru(value):
    return {k: np.array([[value]]) if k[0] in "WU" else np.array([value]) for k in T.GRU_KEYS}


def _random_gru(k_i, k_h, rng):
    p = {}
    for k in T.GRU_KEYS:
        shape = (k_h, k_i) if k[0] == "W" else (k_h, k_h) if k[0] == "U" else (k_h,)
        p[k] = rng.normal(scale=0.7, size=shape)
    return p


def test_gru_zero_params_zero_state():
    h, _ = T.gru_cell(np.array([1.0, -2.0]), np.zeros(3),
                      {k: np.zeros((3, 2) if k[0] == "W" else (3, 3) if k[0] == "U" else 3)
                       for k in T.GRU_KEYS})
    np.testing.assert_array_equal(h, np.zeros(3))


def test_gru_closed_update_gate_keeps_state():
    rng = np.random.default_rng(4)
    p = _random_gru(2, 3, rng)
    p["b_z"] = np.full(3, -50.0)
    h_prev = rng.normal(size=3)
    h, _ = T.gru_cell(rng.normal(size=2), h_prev, p)
    np.testing.assert_allclose(h, h_prev, atol=1e-12)


def test_gru_scalar_oracle():
    p = {"W_z": [[0.5]], "U_z": [[-0.3]], "b_z": [0.1],
         "W_r": [[0.2]], "U_r": [[0.4]], "b_r": [-0.1],
         "W_h": [[0.7]], "U_h": [[0.6]], "b_h": [0.05]}
    p = {k: np.array(v) for k, v in p.items()}
    h, _ = T.gru_cell(np.array([1.0]), np.array([0.5]), p)
    # z = s(0.5-0.15+0.1), r = s(0.2+0.2-0.1), h~ = tanh(0.7+0.6*r*0.5+0.05)
    assert h[0] == pytest.approx(0.6386145630028828, abs=1e-12)


@pytest.mark.parametrize("batch", [None, 3])
def test_gru_gradient(batch):
    rng = np.random.default_rng(5)
    k_i, k_h = 3, 2
    p = _random_gru(k_i, k_h, rng)
    lead = () if batch is None else (batch,)
    x = rng.normal(size=lead + (k_i,))
    h0 = rng.normal(size=lead + (k_h,))
    proj = rng.normal(size=lead + (k_h,))
    f = lambda: float(np.sum(proj * T.gru_cell(x, h0, p)[0]))
    _, cache = T.gru_cell(x, h0, p)
    dx, dh, grads = T.gru_cell_backward(proj, cache, p)
    assert max_rel_error(dx, numeric_grad(f, x)) < TOL
    assert max_rel_error(dh, numeric_grad(f, h0)) < TOL
    for k in T.GRU_KEYS:
        assert max_rel_error(grads[k], numeric_grad(f, p[k])) < TOL, k


# -- elementwise ------------------------------------------------------------

def test_sigmoid_values():
    assert T.sigmoid(0.0) == 0.5
    assert T.sigmoid(1.0) == pytest.approx(1 / (1 + math.e ** -1), abs=1e-15)
    big = T.sigmoid(np.array([-800.0, 800.0]))
    assert np.isfinite(big).all() and big[0] >= 0 and big[1] == 1.0


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax(np.full(4, 2.5)), np.full(4, 0.25), atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)))
def test_softmax_normalized(v):
    p = T.softmax(v)
    assert abs(p.sum() - 1.0) < 1e-9
    assert ((p > 0) & (p <= 1)).all()


def test_softmax_gradient():
    rng = np.random.default_rng(6)
    v = rng.normal(size=5)
    proj = rng.normal(size=5)
    f = lambda: float(proj @ T.softmax(v))
    assert max_rel_error(T.softmax_backward(proj, T.softmax(v)), numeric_grad(f, v)) < TOL


def test_dropout_identity_cases():
    rng = np.random.default_rng(0)
    v = np.arange(5.0)
    out, mask = T.dropout(v, 0.0, True, rng)
    np.testing.assert_array_equal(out, v)
    out, _ = T.dropout(v, 0.5, False, rng)
    np.testing.assert_array_equal(out, v)


def test_dropout_statistics_and_determinism():
    v = np.ones(20000)
    out1, mask1 = T.dropout(v, 0.3, True, np.random.default_rng(9))
    out2, _ = T.dropout(v, 0.3, True, np.random.default_rng(9))
    np.testing.assert_array_equal(out1, out2)
    dropped = np.mean(out1 == 0)
    assert abs(dropped - 0.3) < 0.02
    np.testing.assert_allclose(out1[out1 != 0], 1 / 0.7)
    np.testing.assert_array_equal(out1, v * mask1)


def test_dropout_bad_probability():
    with pytest.raises(ConfigError):
        T.dropout(np.ones(3), 1.0, True, np.random.default_rng(0))


# -- SGD --------------------------------------------------------------------

def test_sgd_zero_grad_is_noop():
    p = Tensor([1.0, -2.0])
    sgd_step([p], SgdConfig(0.5))
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_sgd_scalar_arithmetic():
    p = Tensor([1.0])
    p.grad[:] = 2.0
    sgd_step([p], SgdConfig(0.1))
    assert p.data[0] == pytest.approx(0.8, abs=1e-15)
    assert not p.grad.any()


def test_sgd_global_norm_clip():
    a, b = Tensor([0.0, 0.0]), Tensor([0.0])
    a.grad[:] = [6.0, 0.0]
    b.grad[:] = [8.0]                      # global norm 10
    sgd_step([a, b], SgdConfig(1.0, clip_norm=1.0))
    np.testing.assert_allclose(a.data, [-0.6, 0.0], atol=1e-15)
    np.testing.assert_allclose(b.data, [-0.8], atol=1e-15)


def test_sgd_zero_learning_rate():
    p = Tensor([1.5, 2.5])
    p.grad[:] = [100.0, -3.0]
    sgd_step([p], SgdConfig(0.0))
    np.testing.assert_array_equal(p.data, [1.5, 2.5])


def test_sgd_non_finite_gradient():
    p = Tensor([1.0, 2.0])
    p.grad[:] = [np.nan, 1.0]
    with pytest.raises(TrainingError, match="weights"):
        sgd_step([p], SgdConfig(0.1), names=["weights"])


def test_sgd_config_validation():
    with pytest.raises(ConfigError):
        SgdConfig(-0.1)
    with pytest.raises(ConfigError):
        SgdConfig(0.1, clip_norm=0.0)
