"""Held-out evaluation, few-sentence regimes, noise-detection AUC against
synthetic ground truth, and sampler-based inspection."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional

import numpy as np
from scipy.stats import rankdata

from . import adversarial as adv
from .corpus import Corpus, Instance, corpus_facts
from .encoders import EncoderParams, encode_instances
from .errors import ValidationError
from .tensor import sigmoid
from .trainer import rng_stream

log = logging.getLogger(__name__)

MODES = ("ONE", "TWO", "ALL")
AGGREGATES = ("max", "mean")


@dataclass(frozen=True)
class RankedTriple:
    pair_id: int
    relation: int
    score: float
    is_correct: bool


@dataclass
class PrCurve:
    points: List[tuple] = field(default_factory=list)

    @property
    def recall(self):
        return np.array([p[0] for p in self.points])

    @property
    def precision(self):
        return np.array([p[1] for p in self.points])


def score_triples(corpus: Corpus, params: EncoderParams, facts=None, aggregate="max",
                  na_id: int = 0) -> List[RankedTriple]:
    """Score every (pair, real relation) candidate by aggregating
    ``sigmoid(r . y)`` over the pair's sentences, best first.

    ``facts`` defaults to the labels of ``corpus`` itself, which is right
    for a noise-free test corpus.
    """
    if aggregate not in AGGREGATES:
        raise ValidationError(f"aggregate must be one of {AGGREGATES}")
    if facts is None:
        facts = corpus_facts(corpus, na_id)
    groups = corpus.by_pair()
    instances = [inst for insts in groups.values() for inst in insts]
    if not instances:
        return []
    rel_ids = [r for r in range(params.n_relations) if r != na_id]
    y = encode_instances(params, instances)
    scores = sigmoid(y @ params.relation.data[rel_ids].T)
    triples = []
    row = 0
    for pair_id, insts in groups.items():
        block = scores[row:row + len(insts)]
        row += len(insts)
        agg = block.max(axis=0) if aggregate == "max" else block.mean(axis=0)
        for j, r in enumerate(rel_ids):
            triples.append(RankedTriple(pair_id, r, float(agg[j]), (pair_id, r) in facts))
    triples.sort(key=lambda t: (-t.score, t.pair_id, t.relation))
    return triples


def pr_curve(ranked, n_facts: Optional[int] = None) -> PrCurve:
    """Precision/recall after each rank.  ``n_facts`` is the recall
    denominator; by default the number of correct triples in ``ranked``."""
    if not ranked:
        raise ValidationError("cannot build a PR curve from an empty ranking")
    correct = np.cumsum([t.is_correct for t in ranked])
    total = int(correct[-1]) if n_facts is None else int(n_facts)
    if total <= 0:
        raise ValidationError("no positive triples: recall is undefined")
    ranks = np.arange(1, len(ranked) + 1)
    return PrCurve(list(zip((correct / total).tolist(), (correct / ranks).tolist())))


def p_at_n(ranked, n: int) -> float:
    if n < 1 or n > len(ranked):
        raise ValidationError(f"P@{n} undefined for a ranking of length {len(ranked)}")
    return sum(t.is_correct for t in ranked[:n]) / n


def precision_at_recall(curve: PrCurve, r: float) -> float:
    for rec, prec in curve.points:
        if rec >= r:
            return prec
    raise ValidationError(f"recall {r} is never reached (max {curve.points[-1][0]:.4f})")


def restrict_sentences(corpus: Corpus, mode: str, seed: int) -> Corpus:
    """Keep 1, 2 or all sentences per pair, chosen at random."""
    mode = mode.upper()
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if mode == "ALL":
        return corpus
    keep = 1 if mode == "ONE" else 2
    rng = rng_stream(seed, f"few-sentence-{mode}")
    kept = []
    for insts in corpus.by_pair().values():
        if len(insts) <= keep:
            kept.extend(insts)
        else:
            idx = sorted(rng.choice(len(insts), size=keep, replace=False).tolist())
            kept.extend(insts[i] for i in idx)
    return Corpus(kept)


def few_sentence_eval(corpus: Corpus, params: EncoderParams, mode: str, seed: int,
                      ns=(100, 200, 300), facts=None, aggregate="max") -> dict:
    """P@N for each N in ``ns`` plus their mean, after restricting pairs to
    one, two or all of their sentences.  Facts come from the full corpus."""
    if facts is None:
        facts = corpus_facts(corpus)
    ranked = score_triples(restrict_sentences(corpus, mode, seed), params, facts, aggregate)
    out = {f"P@{n}": p_at_n(ranked, n) for n in ns}
    out["mean"] = float(np.mean(list(out.values())))
    return out


# --------------------------------------------------------------------------
# noise detection


def rank_auc(scores, positives) -> float:
    """Mann-Whitney AUC: P(score of a positive > score of a negative),
    ties counted as one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC is undefined when all flags are identical")
    ranks = rankdata(scores)
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


class NoiseAuc(NamedTuple):
    confusing: float
    discriminator: float


def noise_detection_auc(corpus: Corpus, params: EncoderParams) -> NoiseAuc:
    """How well low C(s) and low D(s, r_s) single out the flagged noise."""
    if not corpus.has_noise_flags():
        raise ValidationError("noise detection needs a corpus with noise flags")
    insts = list(corpus)
    flags = np.array([bool(i.noise_flag) for i in insts])
    if flags.all() or not flags.any():
        raise ValidationError("AUC is undefined when all flags are identical")
    y = encode_instances(params, insts)
    c = adv.confusing_score(y, params.sampler_w.data)
    d, _ = adv.label_scores(y, np.array([i.label for i in insts]), params.relation.data)
    return NoiseAuc(rank_auc(-c, flags), rank_auc(-d, flags))


# --------------------------------------------------------------------------
# inspection


@dataclass
class Inspection:
    relation: int
    top: List[tuple]
    bottom: List[tuple]
    note: str = ""


def render(inst: Instance, vocab=None) -> str:
    words = [vocab.word(t) if vocab is not None else str(t) for t in inst.tokens]
    words[inst.e1_pos] = f"[{words[inst.e1_pos]}]"
    words[inst.e2_pos] = f"[{words[inst.e2_pos]}]"
    return " ".join(words)


def inspect(corpus: Corpus, params: EncoderParams, relation: int, k: int) -> Inspection:
    """The ``k`` highest- and lowest-C instances labeled ``relation``.

    Entries are ``(confusing_score, instance)``.  When there are fewer than
    ``2k`` such instances the ranking is split in half instead, so no
    instance shows up twice.
    """
    if not 0 <= relation < params.n_relations:
        raise ValidationError(f"relation {relation} out of range")
    if k < 0:
        raise ValidationError("k must be >= 0")
    insts = [i for i in corpus if i.label == relation]
    if k == 0 or not insts:
        return Inspection(relation, [], [], "" if k == 0 else "no instances with this label")
    c = adv.confusing_score(encode_instances(params, insts), params.sampler_w.data)
    order = sorted(range(len(insts)), key=lambda j: (-c[j], insts[j].id))
    ranked = [(float(c[j]), insts[j]) for j in order]
    note = ""
    if len(ranked) < 2 * k:
        half = math.ceil(len(ranked) / 2)
        top, bottom = ranked[:half], ranked[half:]
        note = f"only {len(ranked)} instances with this label; returning all of them"
    else:
        top, bottom = ranked[:k], ranked[-k:]
    return Inspection(relation, top, list(reversed(bottom)), note)


def format_inspection(result: Inspection, vocab=None, relation_name=None) -> str:
    name = relation_name if relation_name is not None else str(result.relation)
    lines = [f"relation: {name}"]
    if result.note:
        lines.append(f"note: {result.note}")
    for title, rows in (("highest confusing score", result.top),
                        ("lowest confusing score", result.bottom)):
        lines.append(f"-- {title} --")
        for score, inst in rows:
            flag = "" if inst.noise_flag is None else f" noise={int(inst.noise_flag)}"
            lines.append(f"{score:+.4f} id={inst.id}{flag}  {render(inst, vocab)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# CSV output


def write_pr_curve(curve: PrCurve, path, model: str = "model"):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "rank", "recall", "precision"])
        for i, (rec, prec) in enumerate(curve.points, start=1):
            w.writerow([model, i, repr(rec), repr(prec)])


def write_rows(rows, path, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
