"""Instances, corpora, on-disk formats and a synthetic distant-supervision
generator with known label noise."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

NA = "NA"
PAD = "<pad>"
UNK = "<unk>"
DEFAULT_MAX_LEN = 120


@dataclass(frozen=True)
class RelationSchema:
    names: tuple

    na_id = 0

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 2:
            raise ValidationError("a relation schema needs NA plus at least one relation")
        if names[self.na_id] != NA:
            raise ValidationError(f"relation {self.na_id} must be {NA!r}, got {names[0]!r}")
        if len(set(names)) != len(names):
            raise ValidationError("relation names must be unique")

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown relation {name!r}") from None

    def save(self, path):
        Path(path).write_text("\n".join(self.names) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(line for line in lines if line))


class Vocabulary:
    """Dense word ids.  Id 0 is padding, id 1 the unknown word."""

    pad_id = 0
    unk_id = 1

    def __init__(self, words: Iterable[str] = ()):
        self._ids: dict = {}
        self._words: list = []
        for w in (PAD, UNK, *words):
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self._ids:
            self._ids[word] = len(self._words)
            self._words.append(word)
        return self._ids[word]

    def id(self, word: str) -> int:
        return self._ids.get(word, self.unk_id)

    def word(self, idx: int) -> str:
        return self._words[idx]

    def __len__(self):
        return len(self._words)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._words == other._words

    @property
    def words(self):
        return list(self._words)

    def save(self, path):
        Path(path).write_text("\n".join(self._words) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        words = Path(path).read_text(encoding="utf-8").split("\n")
        if words and words[-1] == "":
            words.pop()
        if words[:2] != [PAD, UNK]:
            raise ValidationError(f"vocabulary must start with {PAD!r} and {UNK!r}")
        return cls(words[2:])


@dataclass(frozen=True)
class Instance:
    id: int
    tokens: tuple
    e1_pos: int
    e2_pos: int
    pair_id: int
    label: int
    noise_flag: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))

    def validate(self, n_relations=None, max_len=DEFAULT_MAX_LEN, vocab_size=None):
        n = len(self.tokens)
        if not 0 <= self.e1_pos < self.e2_pos < n:
            raise ValidationError(
                f"instance {self.id}: need 0 <= e1_pos < e2_pos < len(tokens), "
                f"got e1={self.e1_pos}, e2={self.e2_pos}, len={n}"
            )
        if n > max_len:
            raise ValidationError(f"instance {self.id}: {n} tokens exceeds max_len={max_len}")
        if self.label < 0 or (n_relations is not None and self.label >= n_relations):
            raise ValidationError(f"instance {self.id}: label {self.label} out of range")
        if vocab_size is not None and any(t < 0 or t >= vocab_size for t in self.tokens):
            raise ValidationError(f"instance {self.id}: token id outside vocabulary")
        return self

    def truncated(self, max_len: int) -> "Instance":
        if len(self.tokens) <= max_len:
            return self
        return Instance(self.id, self.tokens[:max_len], self.e1_pos, self.e2_pos,
                        self.pair_id, self.label, self.noise_flag)

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "tokens": list(self.tokens),
            "e1_pos": self.e1_pos,
            "e2_pos": self.e2_pos,
            "pair_id": self.pair_id,
            "label": self.label,
        }
        if self.noise_flag is not None:
            rec["noise_flag"] = self.noise_flag
        return rec


class Corpus:
    """An immutable, ordered collection of instances."""

    def __init__(self, instances: Iterable[Instance] = ()):
        self.instances = tuple(instances)
        self._by_id = {inst.id: inst for inst in self.instances}
        if len(self._by_id) != len(self.instances):
            raise ValidationError("instance ids must be unique")

    def __len__(self):
        return len(self.instances)

    def __iter__(self) -> Iterator[Instance]:
        return iter(self.instances)

    def __getitem__(self, instance_id: int) -> Instance:
        return self._by_id[instance_id]

    def __eq__(self, other):
        return isinstance(other, Corpus) and self.instances == other.instances

    @property
    def ids(self):
        return [inst.id for inst in self.instances]

    def subset(self, ids) -> list:
        return [self._by_id[i] for i in ids]

    def by_pair(self) -> "OrderedDict[int, list]":
        groups: OrderedDict = OrderedDict()
        for inst in self.instances:
            groups.setdefault(inst.pair_id, []).append(inst)
        return groups

    def has_noise_flags(self) -> bool:
        return len(self) > 0 and all(inst.noise_flag is not None for inst in self.instances)

    def noise_rate(self, ids=None) -> float:
        insts = self.instances if ids is None else self.subset(ids)
        if not insts:
            return float("nan")
        return sum(bool(i.noise_flag) for i in insts) / len(insts)


@dataclass
class CorpusSplit:
    """Confident / unconfident partition of training instance ids."""

    confident: set = field(default_factory=set)
    unconfident: set = field(default_factory=set)

    def check(self, all_ids=None):
        if self.confident & self.unconfident:
            raise ValidationError("confident and unconfident sets overlap")
        if all_ids is not None and (self.confident | self.unconfident) != set(all_ids):
            raise ValidationError("split does not cover the training ids exactly")

    def promote(self, ids):
        ids = set(ids)
        missing = ids - self.unconfident
        if missing:
            raise ValidationError(f"cannot promote ids not in the unconfident set: {sorted(missing)[:5]}")
        self.unconfident -= ids
        self.confident |= ids
        self.check()

    def to_json(self) -> dict:
        return {"confident": sorted(self.confident), "unconfident": sorted(self.unconfident)}

    @classmethod
    def from_json(cls, obj) -> "CorpusSplit":
        split = cls(set(obj["confident"]), set(obj["unconfident"]))
        split.check()
        return split


# --------------------------------------------------------------------------
# file formats


def save_corpus(corpus: Corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for inst in corpus:
            fh.write(json.dumps(inst.to_record(), separators=(",", ":")) + "\n")


_REQUIRED = ("id", "tokens", "e1_pos", "e2_pos", "pair_id", "label")


def _parse_record(obj, lineno) -> Instance:
    if not isinstance(obj, dict):
        raise ParseError("record is not an object", lineno)
    missing = [k for k in _REQUIRED if k not in obj]
    if missing:
        raise ParseError(f"missing fields {missing}", lineno)
    for key in ("id", "e1_pos", "e2_pos", "pair_id", "label"):
        if not isinstance(obj[key], int) or isinstance(obj[key], bool):
            raise ParseError(f"field {key!r} must be an integer", lineno)
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not all(
        isinstance(t, int) and not isinstance(t, bool) for t in tokens
    ):
        raise ParseError("field 'tokens' must be an array of integers", lineno)
    flag = obj.get("noise_flag")
    if flag is not None and not isinstance(flag, bool):
        raise ParseError("field 'noise_flag' must be a boolean", lineno)
    return Instance(obj["id"], tokens, obj["e1_pos"], obj["e2_pos"],
                    obj["pair_id"], obj["label"], flag)


def load_corpus(path, max_len=DEFAULT_MAX_LEN, n_relations=None, vocab_size=None) -> Corpus:
    """Read a JSON Lines corpus.

    Sentences longer than ``max_len`` are truncated; the entity positions
    must still fall inside the kept tokens.
    """
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            inst = _parse_record(obj, lineno).truncated(max_len)
            try:
                inst.validate(n_relations=n_relations, max_len=max_len, vocab_size=vocab_size)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            instances.append(inst)
    return Corpus(instances)


def load_facts(path) -> set:
    """Ground-truth (pair_id, relation) facts, one JSON object per line."""
    facts = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                facts.add((int(obj["pair_id"]), int(obj["relation"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad fact record: {exc}", lineno) from None
    return facts


def corpus_facts(corpus: Corpus, na_id: int = RelationSchema.na_id) -> set:
    """Facts implied by a noise-free corpus: every non-NA (pair, label)."""
    return {(inst.pair_id, inst.label) for inst in corpus if inst.label != na_id}


def position_features(inst: Instance, max_len=DEFAULT_MAX_LEN):
    """Relative distances to both entities as non-negative ids.

    Distances are clipped to ``[-max_len, max_len]`` and shifted by
    ``max_len``, so the id for distance 0 is ``max_len``.
    """
    n = len(inst.tokens)
    idx = np.arange(n)
    d1 = np.clip(idx - inst.e1_pos, -max_len, max_len) + max_len
    d2 = np.clip(idx - inst.e2_pos, -max_len, max_len) + max_len
    return d1.tolist(), d2.tolist()


# --------------------------------------------------------------------------
# synthetic corpora


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for :func:`generate_synthetic`.

    ``n_relations`` counts real relations; NA is added on top.  Each
    template is ``template_len`` tokens long and the template vocabulary of
    different relations is disjoint.  The remaining vocabulary is split
    between entity names and filler words.
    """

    n_relations: int = 8
    n_entity_pairs: int = 2000
    min_sentences: int = 1
    max_sentences: int = 4
    templates_per_relation: int = 4
    noise_rate: float = 0.3
    vocab_size: int = 3000
    seed: int = 0
    na_fraction: float = 0.3
    test_fraction: float = 0.2
    template_len: int = 2
    n_entities: int = 600
    max_filler: int = 4

    def __post_init__(self):
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError(f"noise_rate must be in [0, 1), got {self.noise_rate}")
        for name in ("n_relations", "n_entity_pairs", "min_sentences", "max_sentences",
                     "templates_per_relation", "vocab_size", "template_len", "n_entities"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_sentences < self.min_sentences:
            raise ConfigError("max_sentences must be >= min_sentences")
        if not 0.0 <= self.na_fraction < 1.0:
            raise ConfigError(f"na_fraction must be in [0, 1), got {self.na_fraction}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.max_filler < 0:
            raise ConfigError("max_filler must be >= 0")
        if self.n_entities < 2:
            raise ConfigError("n_entities must be at least 2")
        if self.n_entities * (self.n_entities - 1) < self.n_entity_pairs:
            raise ConfigError("n_entities is too small for the requested number of pairs")

    @property
    def n_template_tokens(self) -> int:
        return (self.n_relations + 1) * self.templates_per_relation * self.template_len

    @property
    def n_filler(self) -> int:
        return self.vocab_size - 2 - self.n_entities - self.n_template_tokens


def _build_vocab(cfg: SyntheticConfig):
    if cfg.n_filler < 1:
        raise ConfigError(
            f"vocab_size={cfg.vocab_size} too small: need {cfg.n_template_tokens} template "
            f"tokens, {cfg.n_entities} entities, 2 reserved ids and at least one filler word"
        )
    vocab = Vocabulary()
    n_rel = cfg.n_relations + 1
    templates = []
    for r in range(n_rel):
        rel_templates = []
        for t in range(cfg.templates_per_relation):
            rel_templates.append(
                [vocab.add(f"r{r}_t{t}_{j}") for j in range(cfg.template_len)]
            )
        templates.append(rel_templates)
    entities = np.array([vocab.add(f"ent{k}") for k in range(cfg.n_entities)])
    fillers = np.array([vocab.add(f"w{k}") for k in range(cfg.n_filler)])
    assert len(vocab) == cfg.vocab_size
    return vocab, templates, entities, fillers


def _sentence(rng, template, head, tail, fillers, max_filler):
    def fill():
        k = int(rng.integers(0, max_filler + 1))
        return [int(w) for w in rng.choice(fillers, size=k)] if k else []

    left, mid, right = fill(), fill(), fill()
    # the template phrase sits between the entities, at a random cut of the middle filler
    cut = int(rng.integers(0, len(mid) + 1))
    middle = mid[:cut] + list(template) + mid[cut:]
    tokens = left + [int(head)] + middle + [int(tail)] + right
    e1 = len(left)
    e2 = e1 + 1 + len(middle)
    return tokens, e1, e2


def generate_synthetic(cfg: SyntheticConfig):
    """Generate ``(train, test, schema, vocab)``.

    Every entity pair gets one true relation (NA with probability
    ``na_fraction``, otherwise uniform over the real relations) which is
    also its distant label.  A training sentence follows one of the pair's
    relation templates with probability ``1 - noise_rate``; otherwise it
    follows a template of a uniformly chosen *other* relation and is flagged
    as noise while keeping the pair's label.  Test pairs are disjoint from
    training pairs and carry no noise.
    """
    rng = np.random.default_rng(cfg.seed)
    vocab, templates, entities, fillers = _build_vocab(cfg)
    n_rel = cfg.n_relations + 1
    schema = RelationSchema((NA,) + tuple(f"rel{r}" for r in range(1, n_rel)))

    seen = set()
    pairs = []
    while len(pairs) < cfg.n_entity_pairs:
        h, t = rng.choice(len(entities), size=2, replace=False)
        if (h, t) in seen:
            continue
        seen.add((h, t))
        pairs.append((int(entities[h]), int(entities[t])))

    is_na = rng.random(cfg.n_entity_pairs) < cfg.na_fraction
    relations = np.where(is_na, 0, rng.integers(1, n_rel, size=cfg.n_entity_pairs))
    n_test = max(1, int(round(cfg.test_fraction * cfg.n_entity_pairs)))
    test_pairs = set(rng.permutation(cfg.n_entity_pairs)[:n_test].tolist())

    train, test = [], []
    next_id = 0
    for pair_id, ((head, tail), rel) in enumerate(zip(pairs, relations)):
        rel = int(rel)
        in_test = pair_id in test_pairs
        n_sent = int(rng.integers(cfg.min_sentences, cfg.max_sentences + 1))
        for _ in range(n_sent):
            noisy = (not in_test) and rng.random() < cfg.noise_rate
            source = rel
            if noisy:
                source = int(rng.integers(0, n_rel - 1))
                if source >= rel:
                    source += 1
            template = templates[source][int(rng.integers(0, cfg.templates_per_relation))]
            tokens, e1, e2 = _sentence(rng, template, head, tail, fillers, cfg.max_filler)
            inst = Instance(next_id, tokens, e1, e2, pair_id, rel, bool(noisy))
            next_id += 1
            (test if in_test else train).append(inst)
    return Corpus(train), Corpus(test), schema, vocab
