"""Sampler and discriminator scores and their losses.

The discriminator scores an embedding ``y`` against its labeled relation
with ``sigmoid(r . y)``; an NA-labeled instance is scored by the mean over
all real relations.  The sampler ranks unconfident instances with the
linear confusing score ``C = W . y`` and turns scores into a sharpened
softmax ``Q`` over the unconfident batch.

Gradients respect the two stop-gradient boundaries of the game: the
sampler loss only reaches ``W`` (the discriminator scores are constants
there) and the discriminator loss never reaches ``W`` (``Q`` is constant).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, TrainingError, ValidationError
from .tensor import sigmoid, softmax

log = logging.getLogger(__name__)

LOG_EPS = 1e-12
Q_FLOOR = np.finfo(np.float64).tiny
NA_ID = 0


@dataclass(frozen=True)
class AdvConfig:
    alpha: float = 1.0
    lam: float = 1.0
    batch_conf: int = 64
    batch_unconf: int = 64

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")
        if self.batch_conf < 1 or self.batch_unconf < 1:
            raise ConfigError("batch sizes must be >= 1")


@dataclass
class BatchScores:
    ids: np.ndarray
    y: np.ndarray
    confusing: np.ndarray
    disc: np.ndarray
    q: np.ndarray


# --------------------------------------------------------------------------
# scores


def discriminator_score(y, r, relation):
    """``sigmoid(relation[r] . y)`` for a real (non-NA) relation ``r``."""
    relation = np.asarray(relation, dtype=np.float64)
    r_arr = np.asarray(r)
    if np.any(r_arr < 0) or np.any(r_arr >= relation.shape[0]):
        raise ValidationError(f"relation id out of range [0, {relation.shape[0]})")
    if np.any(r_arr == NA_ID):
        raise ValidationError("NA has no embedding of its own; use na_score")
    y = np.asarray(y, dtype=np.float64)
    return sigmoid(np.sum(relation[r_arr] * y, axis=-1))


def na_score(y, relation):
    """Mean discriminator score over every relation except NA."""
    relation = np.asarray(relation, dtype=np.float64)
    if relation.shape[0] < 2:
        raise ValidationError("na_score needs at least one real relation")
    scores = sigmoid(np.asarray(y, dtype=np.float64) @ relation[1:].T)
    return scores.mean(axis=-1)


def label_scores(y, labels, relation):
    """D(s, r_s) for a batch, routing NA labels through :func:`na_score`.

    Returns ``(D, S)`` where ``S`` holds the sigmoid score of every row
    against every relation (needed by :func:`label_scores_backward`).
    """
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    relation = np.asarray(relation, dtype=np.float64)
    R = relation.shape[0]
    if np.any(labels < 0) or np.any(labels >= R):
        raise ValidationError(f"label out of range [0, {R})")
    S = sigmoid(y @ relation.T)
    is_na = labels == NA_ID
    D = S[np.arange(len(labels)), labels]
    if is_na.any():
        D = np.where(is_na, S[:, 1:].mean(axis=1), D)
    return D, S


def label_scores_backward(dD, y, labels, relation, S):
    """Map dL/dD to ``(dL/dy, dL/drelation)``."""
    B, R = S.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    dS = np.zeros_like(S)
    is_na = labels == NA_ID
    rows = np.arange(B)
    dS[rows[~is_na], labels[~is_na]] = dD[~is_na]
    if is_na.any():
        dS[is_na, 1:] = (dD[is_na] / (R - 1))[:, None]
    dZ = dS * S * (1.0 - S)
    return dZ @ relation, dZ.T @ y


def confusing_score(y, w):
    """``W . y``; no bias term."""
    return np.asarray(y, dtype=np.float64) @ np.asarray(w, dtype=np.float64)


def _sharpen(c, alpha):
    # sign-preserving power keeps exp(C^alpha) defined for negative C
    if alpha == 1.0:
        return c
    return np.sign(c) * np.abs(c) ** alpha


def _sharpen_grad(c, alpha):
    if alpha == 1.0:
        return np.ones_like(c)
    return alpha * np.maximum(np.abs(c), 1e-12) ** (alpha - 1.0)


def confusing_probabilities(scores, alpha=1.0):
    """Softmax of ``sign(C) |C|^alpha`` over the batch."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if scores.size == 0:
        raise ValidationError("confusing_probabilities needs at least one score")
    if not alpha > 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    q = softmax(_sharpen(scores, alpha))
    # large |C|^alpha gaps underflow exp to 0; keep every entry strictly positive
    if q.min() < Q_FLOOR:
        q = np.maximum(q, Q_FLOOR)
        q /= q.sum()
    return q


def batch_scores(ids, y, labels, relation, w, alpha=1.0) -> BatchScores:
    c = confusing_score(y, w)
    d, _ = label_scores(y, labels, relation)
    return BatchScores(np.asarray(ids), np.asarray(y), c, d, confusing_probabilities(c, alpha))


def _safe_log(x, what):
    clipped = x < LOG_EPS
    if clipped.any():
        log.warning("%d %s value(s) below %g clamped before log", int(clipped.sum()), what, LOG_EPS)
    return np.log(np.maximum(x, LOG_EPS)), ~clipped


# --------------------------------------------------------------------------
# losses


def sampler_loss_and_grad(y_u, labels_u, relation, w, alpha=1.0):
    """``-sum_s Q(s) log D(s, r_s)`` over the unconfident batch.

    Returns ``(loss, dL/dW)``.  ``y`` and the discriminator scores are
    treated as constants.
    """
    y_u = np.atleast_2d(np.asarray(y_u, dtype=np.float64))
    c = confusing_score(y_u, w)
    q = confusing_probabilities(c, alpha)
    d, _ = label_scores(y_u, labels_u, relation)
    log_d, _ = _safe_log(d, "D(s, r_s)")
    nll = -log_d
    loss = float(np.sum(q * nll))
    dg = q * (nll - loss)
    dc = dg * _sharpen_grad(c, alpha)
    return loss, dc @ y_u


def sampler_loss(y_u, labels_u, relation, w, alpha=1.0) -> float:
    return sampler_loss_and_grad(y_u, labels_u, relation, w, alpha)[0]


def discriminator_loss_and_grad(y_c, labels_c, y_u, labels_u, relation, w, alpha=1.0):
    """Confident log-likelihood plus Q-weighted unconfident log(1 - D).

    Returns ``(loss, dL/dy_c, dL/dy_u, dL/drelation)``; ``Q`` is computed
    from the current ``W`` and held constant.
    """
    y_c = np.asarray(y_c, dtype=np.float64)
    if y_c.ndim != 2 or y_c.shape[0] == 0:
        raise TrainingError("empty confident batch: the confident set is degenerate")
    y_u = np.atleast_2d(np.asarray(y_u, dtype=np.float64))
    relation = np.asarray(relation, dtype=np.float64)
    n_c = y_c.shape[0]

    d_c, s_c = label_scores(y_c, labels_c, relation)
    log_c, ok_c = _safe_log(d_c, "confident D(s, r_s)")
    q = confusing_probabilities(confusing_score(y_u, w), alpha)
    d_u, s_u = label_scores(y_u, labels_u, relation)
    log_u, ok_u = _safe_log(1.0 - d_u, "unconfident 1 - D(s, r_s)")

    loss = float(-np.sum(log_c) / n_c - np.sum(q * log_u))

    dd_c = np.where(ok_c, -1.0 / (n_c * np.maximum(d_c, LOG_EPS)), 0.0)
    dd_u = np.where(ok_u, q / np.maximum(1.0 - d_u, LOG_EPS), 0.0)
    dy_c, drel_c = label_scores_backward(dd_c, y_c, labels_c, relation, s_c)
    dy_u, drel_u = label_scores_backward(dd_u, y_u, labels_u, relation, s_u)
    return loss, dy_c, dy_u, drel_c + drel_u


def discriminator_loss(y_c, labels_c, y_u, labels_u, relation, w, alpha=1.0) -> float:
    return discriminator_loss_and_grad(y_c, labels_c, y_u, labels_u, relation, w, alpha)[0]


def combined_objective(y_c, labels_c, y_u, labels_u, relation, w, cfg: AdvConfig):
    """Both game losses ``(L_D, L_S)`` on one pair of batches.

    The weighted sum ``L_D + lam * L_S`` is never formed: the two losses
    are minimized alternately and ``lam`` scales the sampler learning rate.
    """
    l_d = discriminator_loss(y_c, labels_c, y_u, labels_u, relation, w, cfg.alpha)
    l_s = sampler_loss(y_u, labels_u, relation, w, cfg.alpha)
    return l_d, l_s
