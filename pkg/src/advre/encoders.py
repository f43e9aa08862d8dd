"""Sentence encoders mapping an instance to a fixed-size embedding ``y``.

All four architectures share the input layer (word embedding plus two
relative-position embeddings).  The encoders work on padded mini-batches;
padded rows are zeroed before the encoding layer and masked out of pooling
and recurrence, so a batch gives exactly the per-sentence results.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .corpus import DEFAULT_MAX_LEN, Instance, position_features
from .errors import ConfigError, DimensionError, ValidationError
from .tensor import Tensor

ARCHS = ("CNN", "PCNN", "RNN", "BIRNN")
_CONV_ARCHS = ("CNN", "PCNN")


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder hyperparameters.

    ``k_p`` and ``k_h`` default per architecture family: 5 and 230 for the
    convolutional encoders, 3 and 150 for the recurrent ones.
    """

    arch: str = "PCNN"
    k_w: int = 50
    k_p: Optional[int] = None
    k_h: Optional[int] = None
    m: int = 3
    dropout_p: float = 0.5
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self):
        arch = str(self.arch).upper()
        if arch not in ARCHS:
            raise ConfigError(f"unknown encoder architecture {self.arch!r}; pick one of {ARCHS}")
        object.__setattr__(self, "arch", arch)
        conv = arch in _CONV_ARCHS
        if self.k_p is None:
            object.__setattr__(self, "k_p", 5 if conv else 3)
        if self.k_h is None:
            object.__setattr__(self, "k_h", 230 if conv else 150)
        for name in ("k_w", "k_p", "k_h", "m", "max_len"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.m % 2 == 0:
            raise ConfigError(f"convolution window m must be odd, got {self.m}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @property
    def k_i(self) -> int:
        return self.k_w + 2 * self.k_p

    @property
    def d_y(self) -> int:
        if self.arch == "PCNN":
            return 3 * self.k_h
        if self.arch == "BIRNN":
            return 2 * self.k_h
        return self.k_h

    @property
    def n_positions(self) -> int:
        return 2 * self.max_len + 1

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderParams:
    """Every trainable tensor of one model.

    Three groups matter to the optimizer: the encoder proper (embeddings
    and architecture weights), the relation embedding table used by the
    classifier and the discriminator, and the sampler hyperplane.
    """

    RELATION = "relation"
    SAMPLER = "sampler_w"

    def __init__(self, config: EncoderConfig, vocab_size: int, n_relations: int, tensors: dict):
        self.config = config
        self.vocab_size = int(vocab_size)
        self.n_relations = int(n_relations)
        self.tensors = dict(tensors)
        rel = self.tensors[self.RELATION]
        if rel.shape != (self.n_relations, config.d_y):
            raise DimensionError(
                f"relation table {rel.shape} must be ({self.n_relations}, {config.d_y})"
            )
        if self.tensors[self.SAMPLER].shape != (config.d_y,):
            raise DimensionError("sampler hyperplane must have length d_y")

    @classmethod
    def init(cls, config: EncoderConfig, vocab_size: int, n_relations: int, rng, pretrained=None):
        """Random initialization.

        Word vectors are uniform in [-0.25, 0.25] unless ``pretrained`` (a
        ``vocab_size x k_w`` array) is given; the padding row is zero.
        """
        c = config
        t = {}
        if pretrained is not None:
            pretrained = np.asarray(pretrained, dtype=np.float64)
            if pretrained.shape != (vocab_size, c.k_w):
                raise DimensionError(f"pretrained vectors must be {(vocab_size, c.k_w)}")
            word = pretrained.copy()
        else:
            word = rng.uniform(-0.25, 0.25, size=(vocab_size, c.k_w))
        word[0] = 0.0
        t["word"] = Tensor(word)
        t["pos1"] = Tensor(rng.uniform(-0.25, 0.25, size=(c.n_positions, c.k_p)))
        t["pos2"] = Tensor(rng.uniform(-0.25, 0.25, size=(c.n_positions, c.k_p)))
        if c.arch in _CONV_ARCHS:
            fan_in = c.m * c.k_i
            bound = np.sqrt(6.0 / (fan_in + c.k_h))
            t["conv.K"] = Tensor(rng.uniform(-bound, bound, size=(c.k_h, fan_in)))
            t["conv.b"] = Tensor.zeros(c.k_h)
        else:
            directions = ("gru_f", "gru_b") if c.arch == "BIRNN" else ("gru_f",)
            bound = 1.0 / np.sqrt(c.k_h)
            for d in directions:
                for key in T.GRU_KEYS:
                    if key.startswith("W"):
                        shape = (c.k_h, c.k_i)
                    elif key.startswith("U"):
                        shape = (c.k_h, c.k_h)
                    else:
                        shape = (c.k_h,)
                    t[f"{d}.{key}"] = Tensor(rng.uniform(-bound, bound, size=shape))
        bound = np.sqrt(6.0 / (n_relations + c.d_y))
        t[cls.RELATION] = Tensor(rng.uniform(-bound, bound, size=(n_relations, c.d_y)))
        t[cls.SAMPLER] = Tensor.zeros(c.d_y)
        return cls(config, vocab_size, n_relations, t)

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    @property
    def names(self):
        return list(self.tensors)

    @property
    def encoder_names(self):
        return [n for n in self.tensors if n not in (self.RELATION, self.SAMPLER)]

    @property
    def relation(self) -> Tensor:
        return self.tensors[self.RELATION]

    @property
    def sampler_w(self) -> Tensor:
        return self.tensors[self.SAMPLER]

    def group(self, names):
        return [self.tensors[n] for n in names]

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.config, self.vocab_size, self.n_relations,
                             {k: v.copy() for k, v in self.tensors.items()})

    def gru(self, direction="gru_f") -> dict:
        return {k: self.tensors[f"{direction}.{k}"].data for k in T.GRU_KEYS}

    def equal(self, other: "EncoderParams") -> bool:
        return (
            self.config == other.config
            and self.names == other.names
            and all(np.array_equal(self[n].data, other[n].data) for n in self.names)
        )


# --------------------------------------------------------------------------
# batches and the input layer


@dataclass
class Batch:
    ids: np.ndarray
    tokens: np.ndarray
    pos1: np.ndarray
    pos2: np.ndarray
    mask: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.ids)


def make_batch(instances: Sequence[Instance], max_len=DEFAULT_MAX_LEN) -> Batch:
    if not instances:
        raise DimensionError("cannot build an empty batch")
    n = max(len(inst.tokens) for inst in instances)
    B = len(instances)
    boundary = 2 * max_len
    tokens = np.zeros((B, n), dtype=np.int64)
    pos1 = np.full((B, n), boundary, dtype=np.int64)
    pos2 = np.full((B, n), boundary, dtype=np.int64)
    mask = np.zeros((B, n), dtype=bool)
    for b, inst in enumerate(instances):
        k = len(inst.tokens)
        tokens[b, :k] = inst.tokens
        d1, d2 = position_features(inst, max_len)
        pos1[b, :k] = d1
        pos2[b, :k] = d2
        mask[b, :k] = True
    return Batch(
        ids=np.array([i.id for i in instances], dtype=np.int64),
        tokens=tokens, pos1=pos1, pos2=pos2, mask=mask,
        e1=np.array([i.e1_pos for i in instances], dtype=np.int64),
        e2=np.array([i.e2_pos for i in instances], dtype=np.int64),
        labels=np.array([i.label for i in instances], dtype=np.int64),
    )


def embed_input(batch: Batch, params: EncoderParams):
    """Rows ``[w_i; p1_i; p2_i]`` of shape ``(B, n, k_w + 2 k_p)``."""
    if batch.tokens.size and (batch.tokens.max() >= params.vocab_size or batch.tokens.min() < 0):
        raise ValidationError(
            f"token id {int(batch.tokens.max())} outside vocabulary of size {params.vocab_size}"
        )
    X = np.concatenate(
        [params["word"].data[batch.tokens],
         params["pos1"].data[batch.pos1],
         params["pos2"].data[batch.pos2]],
        axis=-1,
    )
    return X * batch.mask[..., None]


def embed_input_backward(dX, batch: Batch, params: EncoderParams):
    c = params.config
    dX = dX * batch.mask[..., None]
    flat = dX.reshape(-1, dX.shape[-1])
    np.add.at(params["word"].grad, batch.tokens.ravel(), flat[:, :c.k_w])
    np.add.at(params["pos1"].grad, batch.pos1.ravel(), flat[:, c.k_w:c.k_w + c.k_p])
    np.add.at(params["pos2"].grad, batch.pos2.ravel(), flat[:, c.k_w + c.k_p:])


# --------------------------------------------------------------------------
# encoding layers


def encode_cnn(X, K, b, m, mask):
    """Convolution, column max-pool over real tokens, then tanh."""
    H, cols = T.conv1d(X, K, m)
    H = H + b
    pooled, arg, empty = T.max_pool_cols(H, mask)
    y = np.tanh(pooled)
    return y, (cols, arg, empty, y, H.shape[-2])


def encode_cnn_backward(dy, cache, K, m):
    cols, arg, empty, y, n = cache
    dpooled = dy * (1.0 - y * y)
    dH = T.max_pool_cols_backward(dpooled, arg, empty, n)
    dX, dK = T.conv1d_backward(dH, cols, K, m)
    return dX, dK, dH.reshape(-1, dH.shape[-1]).sum(axis=0)


def pcnn_segments(mask, e1, e2):
    """Boolean row masks for the three pieces around the two entities.

    With 0-based positions the pieces are ``[0, e1]``, ``[e1+1, e2]`` and
    ``[e2+1, n)``; the last one is empty when the tail entity ends the
    sentence.
    """
    n = mask.shape[-1]
    idx = np.arange(n)
    e1 = np.asarray(e1)[..., None]
    e2 = np.asarray(e2)[..., None]
    return (
        mask & (idx <= e1),
        mask & (idx > e1) & (idx <= e2),
        mask & (idx > e2),
    )


def encode_pcnn(X, K, b, m, mask, e1, e2):
    """Piecewise max-pooling: three pooled vectors concatenated, then tanh."""
    H, cols = T.conv1d(X, K, m)
    H = H + b
    pieces, caches = [], []
    for seg in pcnn_segments(mask, e1, e2):
        pooled, arg, empty = T.max_pool_cols(H, seg)
        pieces.append(pooled)
        caches.append((arg, empty))
    y = np.tanh(np.concatenate(pieces, axis=-1))
    return y, (cols, caches, y, H.shape[-2])


def encode_pcnn_backward(dy, cache, K, m):
    cols, caches, y, n = cache
    dpooled = dy * (1.0 - y * y)
    k_h = K.shape[0]
    dH = 0.0
    for s, (arg, empty) in enumerate(caches):
        dH = dH + T.max_pool_cols_backward(dpooled[..., s * k_h:(s + 1) * k_h], arg, empty, n)
    dX, dK = T.conv1d_backward(dH, cols, K, m)
    return dX, dK, dH.reshape(-1, dH.shape[-1]).sum(axis=0)


def _gru_scan(X, mask, gru, reverse=False):
    """Run a GRU over time with h_0 = 0; padded steps keep the state."""
    B, n, _ = X.shape
    k_h = gru["U_z"].shape[0]
    h = np.zeros((B, k_h))
    steps = range(n - 1, -1, -1) if reverse else range(n)
    caches = []
    for t in steps:
        h_new, cache = T.gru_cell(X[:, t], h, gru)
        keep = mask[:, t, None]
        h = np.where(keep, h_new, h)
        caches.append((t, keep, cache))
    return h, caches


def _gru_scan_backward(dh, caches, gru, dX):
    grads = {k: np.zeros_like(v) for k, v in gru.items()}
    for t, keep, cache in reversed(caches):
        dh_new = np.where(keep, dh, 0.0)
        dx_t, dh_prev, g = T.gru_cell_backward(dh_new, cache, gru)
        dX[:, t] += dx_t
        dh = dh_prev + np.where(keep, 0.0, dh)
        for k in grads:
            grads[k] += g[k]
    return grads


def encode_rnn(X, gru, mask):
    """The GRU state after the last real token."""
    h, caches = _gru_scan(X, mask, gru)
    return h, caches


def encode_rnn_backward(dy, caches, gru, X_shape):
    dX = np.zeros(X_shape)
    grads = _gru_scan_backward(dy, caches, gru, dX)
    return dX, grads


def encode_birnn(X, gru_f, gru_b, mask):
    """Final forward state concatenated with the backward state at token 1."""
    h_f, cf = _gru_scan(X, mask, gru_f)
    h_b, cb = _gru_scan(X, mask, gru_b, reverse=True)
    return np.concatenate([h_f, h_b], axis=-1), (cf, cb)


def encode_birnn_backward(dy, cache, gru_f, gru_b, X_shape):
    cf, cb = cache
    k_h = gru_f["U_z"].shape[0]
    dX = np.zeros(X_shape)
    gf = _gru_scan_backward(dy[:, :k_h], cf, gru_f, dX)
    gb = _gru_scan_backward(dy[:, k_h:], cb, gru_b, dX)
    return dX, gf, gb


# --------------------------------------------------------------------------
# full encoder


def encode(params: EncoderParams, batch: Batch, training=False, rng=None):
    """Embed and encode a batch.  Returns ``(y, cache)`` with y of shape (B, d_y).

    Dropout is applied once, to ``y``, and only when ``training`` is set.
    """
    c = params.config
    X = embed_input(batch, params)
    if c.arch == "CNN":
        y, enc = encode_cnn(X, params["conv.K"].data, params["conv.b"].data, c.m, batch.mask)
    elif c.arch == "PCNN":
        y, enc = encode_pcnn(X, params["conv.K"].data, params["conv.b"].data, c.m,
                             batch.mask, batch.e1, batch.e2)
    elif c.arch == "RNN":
        y, enc = encode_rnn(X, params.gru("gru_f"), batch.mask)
    else:
        y, enc = encode_birnn(X, params.gru("gru_f"), params.gru("gru_b"), batch.mask)
    if training and c.dropout_p > 0 and rng is None:
        raise ConfigError("training-mode encoding with dropout needs an rng")
    y, drop = T.dropout(y, c.dropout_p, training, rng)
    return y, (batch, X.shape, enc, drop)


def encode_backward(params: EncoderParams, dy, cache):
    """Accumulate d(loss)/d(params) for every encoder tensor given dL/dy."""
    c = params.config
    batch, X_shape, enc, drop = cache
    dy = dy * drop
    if c.arch in _CONV_ARCHS:
        K = params["conv.K"].data
        fn = encode_cnn_backward if c.arch == "CNN" else encode_pcnn_backward
        dX, dK, db = fn(dy, enc, K, c.m)
        params["conv.K"].grad += dK
        params["conv.b"].grad += db
    elif c.arch == "RNN":
        dX, grads = encode_rnn_backward(dy, enc, params.gru("gru_f"), X_shape)
        for k, g in grads.items():
            params[f"gru_f.{k}"].grad += g
    else:
        dX, gf, gb = encode_birnn_backward(dy, enc, params.gru("gru_f"), params.gru("gru_b"), X_shape)
        for k in gf:
            params[f"gru_f.{k}"].grad += gf[k]
            params[f"gru_b.{k}"].grad += gb[k]
    embed_input_backward(dX, batch, params)


def encode_instances(params: EncoderParams, instances, batch_size=256):
    """Inference-mode embeddings for many instances, shape (N, d_y)."""
    instances = list(instances)
    if not instances:
        return np.zeros((0, params.config.d_y))
    out = []
    for start in range(0, len(instances), batch_size):
        batch = make_batch(instances[start:start + batch_size], params.config.max_len)
        y, _ = encode(params, batch, training=False)
        out.append(y)
    return np.concatenate(out, axis=0)


# --------------------------------------------------------------------------
# checkpoints

MAGIC = b"ADVRECKP"
VERSION = 1


def save_checkpoint(path, params: EncoderParams, meta: Optional[dict] = None):
    """Write a versioned header followed by raw little-endian float64 tensors."""
    header = {
        "version": VERSION,
        "encoder_config": params.config.to_dict(),
        "vocab_size": params.vocab_size,
        "n_relations": params.n_relations,
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in params.names],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for n in params.names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(params, meta)`` from :func:`save_checkpoint` output."""
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", raw, off)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    off += struct.calcsize("<IQ")
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        tensors[entry["name"]] = Tensor(arr.astype(np.float64))
        off += 8 * count
    if off != len(raw):
        raise ValidationError(f"{path}: {len(raw) - off} trailing bytes")
    config = EncoderConfig(**header["encoder_config"])
    params = EncoderParams(config, header["vocab_size"], header["n_relations"], tensors)
    return params, header["meta"]
