"""Dense float64 tensors with hand-written forward and backward passes.

Every differentiable operation comes as a pair: ``op(...)`` computes the
output (plus whatever the backward pass needs) and ``op_backward(...)``
maps an upstream gradient to gradients of the inputs.  Operations accept
an optional leading batch axis so that the encoders can process padded
mini-batches in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, DimensionError, TrainingError

DTYPE = np.float64


class Tensor:
    """A value array paired with a same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data):
        arr = np.array(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if any(d <= 0 for d in arr.shape):
            raise DimensionError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.grad = np.zeros_like(self.data)

    @classmethod
    def zeros(cls, *shape):
        return cls(np.zeros(shape, dtype=DTYPE))

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad[...] = 0.0

    def copy(self):
        t = Tensor(self.data.copy())
        t.grad[...] = self.grad
        return t

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


# --------------------------------------------------------------------------
# elementwise


def sigmoid(x):
    """Numerically stable logistic function; scalars in, scalars out."""
    arr = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    e = np.exp(arr[~pos])
    out[~pos] = e / (1.0 + e)
    if np.ndim(x) == 0:
        return float(out)
    return out


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=DTYPE)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(dout, out, axis=-1):
    """Gradient through softmax given its output."""
    inner = np.sum(dout * out, axis=axis, keepdims=True)
    return out * (dout - inner)


def dropout(v, p, training, rng):
    """Inverted dropout.  Returns ``(output, scale_mask)``.

    The mask already carries the ``1/(1-p)`` factor, so the backward pass
    is ``dout * mask``.  No random numbers are drawn when the layer is a
    no-op, which keeps rng streams aligned between p=0 and eval runs.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    v = np.asarray(v, dtype=DTYPE)
    if not training or p == 0.0:
        return v, np.ones_like(v)
    keep = rng.random(v.shape) >= p
    mask = keep.astype(DTYPE) / (1.0 - p)
    return v * mask, mask


# --------------------------------------------------------------------------
# linear algebra


def matvec(W, x):
    """``out[..., i] = sum_j W[i, j] * x[..., j]``."""
    W = np.asarray(W, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"matvec: W{W.shape} incompatible with x{x.shape}")
    return x @ W.T


def matvec_backward(dout, W, x):
    """Return ``(dW, dx)``; batch axes of ``x`` are summed into ``dW``."""
    dout = np.asarray(dout, dtype=DTYPE)
    x = np.asarray(x, dtype=DTYPE)
    d2 = dout.reshape(-1, dout.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return d2.T @ x2, dout @ W


def conv1d(X, K, m):
    """Same-length 1-D convolution with zero padding.

    ``X`` has shape ``(n, k_i)`` or ``(B, n, k_i)``; ``K`` has shape
    ``(k_h, m * k_i)`` and is applied to the concatenation of the ``m``
    input rows centred on each position.  Returns ``(H, cols)`` where
    ``cols`` is the unfolded input needed by :func:`conv1d_backward`.
    """
    if m < 1 or m % 2 == 0:
        raise ConfigError(f"convolution window must be odd and positive, got {m}")
    X = np.asarray(X, dtype=DTYPE)
    K = np.asarray(K, dtype=DTYPE)
    if X.ndim not in (2, 3):
        raise DimensionError(f"conv1d expects a 2-D or 3-D input, got {X.shape}")
    n, k_i = X.shape[-2], X.shape[-1]
    if n < 1:
        raise DimensionError("conv1d needs at least one input row")
    if K.ndim != 2 or K.shape[1] != m * k_i:
        raise DimensionError(f"kernel {K.shape} does not match window {m} x {k_i}")
    half = (m - 1) // 2
    pad = [(0, 0)] * (X.ndim - 2) + [(half, half), (0, 0)]
    Xp = np.pad(X, pad)
    cols = np.concatenate([Xp[..., j:j + n, :] for j in range(m)], axis=-1)
    return cols @ K.T, cols


def conv1d_backward(dH, cols, K, m):
    """Return ``(dX, dK)`` for :func:`conv1d`."""
    K = np.asarray(K, dtype=DTYPE)
    k_i = K.shape[1] // m
    n = dH.shape[-2]
    dK = dH.reshape(-1, dH.shape[-1]).T @ cols.reshape(-1, cols.shape[-1])
    dcols = dH @ K
    half = (m - 1) // 2
    shape = dH.shape[:-2] + (n + 2 * half, k_i)
    dXp = np.zeros(shape, dtype=DTYPE)
    for j in range(m):
        dXp[..., j:j + n, :] += dcols[..., j * k_i:(j + 1) * k_i]
    return dXp[..., half:half + n, :], dK


def max_pool_cols(H, mask=None):
    """Column-wise max over rows.

    ``mask`` (shape ``H.shape[:-1]``) marks the rows that take part.  A
    column with no participating rows pools to 0 and passes no gradient.
    Ties go to the lowest row index.  Returns ``(out, argmax, empty)``.
    """
    H = np.asarray(H, dtype=DTYPE)
    if H.ndim < 2 or H.shape[-2] == 0:
        raise DimensionError(f"max_pool_cols needs at least one row, got {H.shape}")
    if mask is None:
        work = H
        empty = np.zeros(H.shape[:-2], dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        work = np.where(mask[..., None], H, -np.inf)
        empty = ~mask.any(axis=-1)
    arg = np.argmax(work, axis=-2)
    out = np.take_along_axis(H, arg[..., None, :], axis=-2)[..., 0, :]
    if empty.any():
        out = np.where(empty[..., None], 0.0, out)
    return out, arg, empty


def max_pool_cols_backward(dout, arg, empty, n):
    dout = np.where(empty[..., None], 0.0, dout)
    shape = dout.shape[:-1] + (n, dout.shape[-1])
    dH = np.zeros(shape, dtype=DTYPE)
    np.put_along_axis(dH, arg[..., None, :], dout[..., None, :], axis=-2)
    return dH


# --------------------------------------------------------------------------
# GRU

GRU_KEYS = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


def gru_cell(x, h_prev, params):
    """One GRU step.

    ``params`` maps the names in :data:`GRU_KEYS` to arrays; ``W_*`` are
    ``(k_h, k_i)``, ``U_*`` are ``(k_h, k_h)`` and ``b_*`` are ``(k_h,)``.

        z  = sigmoid(W_z x + U_z h + b_z)
        r  = sigmoid(W_r x + U_r h + b_r)
        h~ = tanh(W_h x + U_h (r * h) + b_h)
        h' = (1 - z) * h + z * h~

    Returns ``(h', cache)``.
    """
    x = np.asarray(x, dtype=DTYPE)
    h_prev = np.asarray(h_prev, dtype=DTYPE)
    W_z = params["W_z"]
    if x.shape[-1] != W_z.shape[1] or h_prev.shape[-1] != W_z.shape[0]:
        raise DimensionError(
            f"gru_cell: x{x.shape} / h{h_prev.shape} do not match W{W_z.shape}"
        )
    z = sigmoid(x @ W_z.T + h_prev @ params["U_z"].T + params["b_z"])
    r = sigmoid(x @ params["W_r"].T + h_prev @ params["U_r"].T + params["b_r"])
    rh = r * h_prev
    c = np.tanh(x @ params["W_h"].T + rh @ params["U_h"].T + params["b_h"])
    h = (1.0 - z) * h_prev + z * c
    return h, (x, h_prev, z, r, rh, c)


def gru_cell_backward(dh, cache, params):
    """Return ``(dx, dh_prev, grads)`` with ``grads`` keyed like ``params``."""
    x, h_prev, z, r, rh, c = cache
    x2 = x.reshape(-1, x.shape[-1])
    hp2 = h_prev.reshape(-1, h_prev.shape[-1])
    rh2 = rh.reshape(-1, rh.shape[-1])

    dz = dh * (c - h_prev)
    dc = dh * z
    dh_prev = dh * (1.0 - z)

    da_h = dc * (1.0 - c * c)
    da_h2 = da_h.reshape(-1, da_h.shape[-1])
    drh = da_h @ params["U_h"]
    dr = drh * h_prev
    dh_prev = dh_prev + drh * r

    da_r = dr * r * (1.0 - r)
    da_z = dz * z * (1.0 - z)
    da_r2 = da_r.reshape(-1, da_r.shape[-1])
    da_z2 = da_z.reshape(-1, da_z.shape[-1])

    dx = da_h @ params["W_h"] + da_r @ params["W_r"] + da_z @ params["W_z"]
    dh_prev = dh_prev + da_r @ params["U_r"] + da_z @ params["U_z"]

    grads = {
        "W_h": da_h2.T @ x2, "U_h": da_h2.T @ rh2, "b_h": da_h2.sum(axis=0),
        "W_r": da_r2.T @ x2, "U_r": da_r2.T @ hp2, "b_r": da_r2.sum(axis=0),
        "W_z": da_z2.T @ x2, "U_z": da_z2.T @ hp2, "b_z": da_z2.sum(axis=0),
    }
    return dx, dh_prev, grads


# --------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    clip_norm: Optional[float] = None

    def __post_init__(self):
        # lr == 0 is allowed: it freezes a parameter group
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be positive, got {self.clip_norm}")


def global_grad_norm(params: Iterable[Tensor]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params)))


def sgd_step(params, cfg: SgdConfig, names=None):
    """Plain SGD with optional global-norm clipping; zeroes grads after."""
    params = list(params)
    for i, p in enumerate(params):
        if not np.all(np.isfinite(p.grad)):
            label = names[i] if names is not None else f"#{i}"
            bad = int(np.sum(~np.isfinite(p.grad)))
            raise TrainingError(
                f"non-finite gradient in parameter {label} {p.shape}: {bad} bad entries"
            )
    scale = 1.0
    if cfg.clip_norm is not None:
        norm = global_grad_norm(params)
        if norm > cfg.clip_norm:
            scale = cfg.clip_norm / norm
    step = cfg.learning_rate * scale
    for p in params:
        if step != 0.0:
            p.data -= step * p.grad
        p.zero_grad()
