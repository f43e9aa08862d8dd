"""Pretraining, confident/unconfident split, the alternating adversarial
loop and periodic promotion of unconfident instances."""

from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from . import adversarial as adv
from .corpus import Corpus, CorpusSplit
from .encoders import EncoderParams, encode, encode_backward, encode_instances, make_batch, save_checkpoint
from .errors import ConfigError, TrainingError
from .tensor import SgdConfig, sgd_step, softmax

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
METRIC_COLUMNS = ("epoch", "L_D", "L_S", "n_confident", "promoted")


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent, named random stream derived from the run seed."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])


@dataclass(frozen=True)
class TrainConfig:
    alpha_d: float = 0.1
    alpha_s: float = 0.01
    epochs: int = 100
    pretrain_epochs: int = 50
    pretrain_lr: float = 0.1
    pretrain_batch: int = 64
    promotion_period: int = 10
    tau_d: float = 0.5
    promote_quantile: float = 0.5
    q: float = 0.3
    clip_norm: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ConfigError(f"confident fraction q must be in (0, 1), got {self.q}")
        if self.promotion_period < 1:
            raise ConfigError("promotion_period must be >= 1")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.alpha_d <= 0 or self.alpha_s < 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.pretrain_batch < 1:
            raise ConfigError("pretrain_batch must be >= 1")
        if not 0.0 <= self.promote_quantile < 1.0:
            raise ConfigError("promote_quantile must be in [0, 1)")


@dataclass
class EpochLog:
    epoch: int
    loss_d: float
    loss_s: float
    n_confident: int
    promoted: int

    def row(self):
        return [self.epoch, repr(self.loss_d), repr(self.loss_s), self.n_confident, self.promoted]


@dataclass
class TrainState:
    params: EncoderParams
    split: CorpusSplit
    epoch: int = 0
    batch_rng: np.random.Generator = None
    dropout_rng: np.random.Generator = None
    history: List[EpochLog] = field(default_factory=list)
    promoted_ids: List[int] = field(default_factory=list)

    @classmethod
    def start(cls, params, split, seed):
        return cls(params, split, batch_rng=rng_stream(seed, "batch"),
                   dropout_rng=rng_stream(seed, "dropout"))


def write_metrics(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for rec in history:
            writer.writerow(rec.row())


def _check_loss(value, what, on_divergence=None):
    if not math.isfinite(value) or value > DIVERGENCE_LIMIT:
        dumped = on_divergence() if on_divergence is not None else None
        where = f"; state dumped to {dumped}" if dumped else ""
        raise TrainingError(f"{what} diverged (value={value!r}){where}")


# --------------------------------------------------------------------------
# pretraining


def classifier_loss_and_grad(y, labels, relation):
    """Mean softmax cross-entropy over ``relation . y`` logits.

    Returns ``(loss, dL/dy, dL/drelation)``.
    """
    logits = y @ relation.T
    p = softmax(logits)
    rows = np.arange(len(labels))
    B = len(labels)
    loss = float(-np.mean(np.log(np.maximum(p[rows, labels], 1e-300))))
    dlogits = p.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= B
    return loss, dlogits @ relation, dlogits.T @ y


def pretrain_classifier(corpus: Corpus, params: EncoderParams, *, epochs: int, lr: float,
                        batch_size: int = 64, seed: int = 0, clip_norm=None):
    """Train encoder + relation table as a softmax classifier on all instances
    under their distant labels.

    The rows of the softmax weight matrix become the relation embeddings,
    so ``params`` is updated in place and returned with the per-epoch mean
    losses.  The sampler hyperplane is left untouched.
    """
    if len(corpus) == 0:
        raise TrainingError("cannot pretrain on an empty corpus")
    order_rng = rng_stream(seed, "pretrain-batch")
    drop_rng = rng_stream(seed, "pretrain-dropout")
    names = params.encoder_names + [EncoderParams.RELATION]
    tensors = params.group(names)
    sgd = SgdConfig(lr, clip_norm)
    instances = list(corpus)
    max_len = params.config.max_len
    losses = []
    for epoch in range(epochs):
        order = order_rng.permutation(len(instances))
        total, count = 0.0, 0
        for start in range(0, len(order), batch_size):
            chunk = [instances[i] for i in order[start:start + batch_size]]
            batch = make_batch(chunk, max_len)
            y, cache = encode(params, batch, training=True, rng=drop_rng)
            loss, dy, drel = classifier_loss_and_grad(y, batch.labels, params.relation.data)
            _check_loss(loss, f"pretraining loss at epoch {epoch}")
            params.relation.grad += drel
            encode_backward(params, dy, cache)
            sgd_step(tensors, sgd, names)
            total += loss * len(chunk)
            count += len(chunk)
        losses.append(total / count)
        log.info("pretrain epoch %d loss %.4f", epoch, losses[-1])
    return params, losses


def classifier_probabilities(params: EncoderParams, instances):
    y = encode_instances(params, instances)
    return softmax(y @ params.relation.data.T)


# --------------------------------------------------------------------------
# split and promotion


def initial_split(corpus: Corpus, params: EncoderParams, q: float, na_id: int = 0) -> CorpusSplit:
    """Rank non-NA instances by the classifier's probability of their own
    label; the top ``ceil(q N)`` become confident, everything else
    (including every NA instance) is unconfident.  Ties break by id."""
    if not 0.0 < q < 1.0:
        raise ConfigError(f"q must be in (0, 1), got {q}")
    candidates = [inst for inst in corpus if inst.label != na_id]
    if not candidates:
        raise ConfigError("no non-NA instances: the confident set would be empty")
    probs = classifier_probabilities(params, candidates)
    own = probs[np.arange(len(candidates)), [i.label for i in candidates]]
    order = sorted(range(len(candidates)), key=lambda k: (-own[k], candidates[k].id))
    n_conf = math.ceil(q * len(candidates))
    confident = {candidates[k].id for k in order[:n_conf]}
    if not confident:
        raise ConfigError("confident set is empty after the split")
    split = CorpusSplit(confident, set(corpus.ids) - confident)
    split.check(corpus.ids)
    return split


def promotion_candidates(corpus: Corpus, params: EncoderParams, unconfident, tau_d=0.5,
                         quantile=0.5, na_id: int = 0):
    """Ids in ``unconfident`` endorsed by both modules: D(s, r_s) >= tau_d and
    C(s) strictly above the ``quantile`` of C over the unconfident set.
    With a single unconfident instance only the D test applies."""
    ids = sorted(unconfident)
    if not ids:
        return []
    insts = corpus.subset(ids)
    y = encode_instances(params, insts)
    labels = np.array([i.label for i in insts])
    d, _ = adv.label_scores(y, labels, params.relation.data)
    c = adv.confusing_score(y, params.sampler_w.data)
    ok = (d >= tau_d) & (labels != na_id)
    if len(ids) > 1:
        ok &= c > np.quantile(c, quantile)
    return [i for i, keep in zip(ids, ok) if keep]


def promote(state: TrainState, corpus: Corpus, cfg: TrainConfig):
    moved = promotion_candidates(corpus, state.params, state.split.unconfident,
                                 cfg.tau_d, cfg.promote_quantile)
    state.split.promote(moved)
    state.split.check(corpus.ids)
    state.promoted_ids.extend(moved)
    return moved


# --------------------------------------------------------------------------
# adversarial training


def adversarial_step(params: EncoderParams, conf, unconf, adv_cfg: adv.AdvConfig,
                     alpha_d: float, alpha_s: float, *, dropout_rng=None, clip_norm=None):
    """One sampler update followed by one discriminator update.

    Both updates share one encoder pass: the sampler step leaves the
    encoder untouched, so the cached activations stay valid.  Returns the
    pre-update losses ``(L_D, L_S)``.
    """
    batch = make_batch(list(conf) + list(unconf), params.config.max_len)
    y, cache = encode(params, batch, training=True, rng=dropout_rng)
    n_c = len(conf)
    y_c, y_u = y[:n_c], y[n_c:]
    lab_c, lab_u = batch.labels[:n_c], batch.labels[n_c:]

    loss_s, grad_w = adv.sampler_loss_and_grad(y_u, lab_u, params.relation.data,
                                               params.sampler_w.data, adv_cfg.alpha)
    params.sampler_w.grad += grad_w
    sgd_step([params.sampler_w], SgdConfig(alpha_s * adv_cfg.lam, clip_norm), [EncoderParams.SAMPLER])

    loss_d, dy_c, dy_u, drel = adv.discriminator_loss_and_grad(
        y_c, lab_c, y_u, lab_u, params.relation.data, params.sampler_w.data, adv_cfg.alpha)
    params.relation.grad += drel
    encode_backward(params, np.concatenate([dy_c, dy_u], axis=0), cache)
    names = params.encoder_names + [EncoderParams.RELATION]
    sgd_step(params.group(names), SgdConfig(alpha_d, clip_norm), names)
    return loss_d, loss_s


def train_adversarial(state: TrainState, corpus: Corpus, cfg: TrainConfig, adv_cfg: adv.AdvConfig,
                      *, on_promotion: Optional[Callable] = None, dump_dir=None) -> TrainState:
    """Run ``cfg.epochs`` epochs of the min-max game.

    An epoch walks once over a shuffled copy of the unconfident set in
    batches of ``adv_cfg.batch_unconf``; each step pairs that batch with a
    fresh uniform sample of the confident set.  Every
    ``cfg.promotion_period`` epochs :func:`promote` runs and
    ``on_promotion(state)`` is called.
    """
    params = state.params

    def dump():
        if dump_dir is None:
            return None
        out = Path(dump_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "diverged.ckpt", params, {"epoch": state.epoch})
        (out / "diverged_split.json").write_text(json.dumps(state.split.to_json()))
        return str(out)

    for _ in range(cfg.epochs):
        conf_ids = np.array(sorted(state.split.confident))
        unconf_ids = np.array(sorted(state.split.unconfident))
        if len(conf_ids) == 0:
            raise TrainingError("confident set is empty")
        if len(unconf_ids) == 0:
            log.info("unconfident set exhausted at epoch %d", state.epoch)
            break
        order = state.batch_rng.permutation(unconf_ids)
        sum_d = sum_s = 0.0
        steps = 0
        for start in range(0, len(order), adv_cfg.batch_unconf):
            u_ids = order[start:start + adv_cfg.batch_unconf]
            k = min(adv_cfg.batch_conf, len(conf_ids))
            c_ids = state.batch_rng.choice(conf_ids, size=k, replace=False)
            try:
                loss_d, loss_s = adversarial_step(
                    params, corpus.subset(c_ids.tolist()), corpus.subset(u_ids.tolist()), adv_cfg,
                    cfg.alpha_d, cfg.alpha_s, dropout_rng=state.dropout_rng, clip_norm=cfg.clip_norm)
            except TrainingError as exc:
                dumped = dump()
                where = f"; state dumped to {dumped}" if dumped else ""
                raise TrainingError(f"training diverged at epoch {state.epoch}: {exc}{where}") from exc
            _check_loss(loss_d, f"discriminator loss at epoch {state.epoch}", dump)
            _check_loss(loss_s, f"sampler loss at epoch {state.epoch}", dump)
            sum_d += loss_d
            sum_s += loss_s
            steps += 1
        state.epoch += 1
        moved = []
        if state.epoch % cfg.promotion_period == 0:
            moved = promote(state, corpus, cfg)
            if on_promotion is not None:
                on_promotion(state)
        state.history.append(EpochLog(state.epoch, sum_d / steps, sum_s / steps,
                                      len(state.split.confident), len(moved)))
        log.info("epoch %d L_D %.4f L_S %.4f |I_c| %d promoted %d", state.epoch,
                 sum_d / steps, sum_s / steps, len(state.split.confident), len(moved))
    return state
