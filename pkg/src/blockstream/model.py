"""Configuration, vocabulary, parameters and the shared numerics.

Everything probabilistic in the package is carried in natural-log domain.
Parameters are plain numpy arrays held in an ordered, read-only mapping;
the order of :func:`param_specs` is also the on-disk order of weight files.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

BLANK = 0
SOS = EOS = 1
UNK = 2
RESERVED_TOKENS = ("<blank>", "<sos/eos>", "<unk>")

WEIGHT_MAGIC = b"BSTW1"


# --------------------------------------------------------------------------
# numerics
# --------------------------------------------------------------------------


def logsumexp(v) -> float:
    """Stable ``log(sum(exp(v)))`` of a non-empty vector."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("logsumexp of an empty vector")
    m = np.max(v)
    if m == -np.inf:
        return -np.inf
    if m == np.inf:
        return np.inf
    return float(m + np.log(np.sum(np.exp(v - m))))


def log_softmax(v, axis: int = -1) -> np.ndarray:
    """``v - logsumexp(v)`` along ``axis``; ``-inf`` entries stay ``-inf``."""
    v = np.asarray(v, dtype=np.float64)
    m = np.max(v, axis=axis, keepdims=True)
    shifted = v - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def layer_norm(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def sinusoidal_positions(positions, d_model: int) -> np.ndarray:
    """Absolute sinusoidal encodings for integer ``positions``."""
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.zeros((pos.shape[0], d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    ff_dim: int = 256
    enc_layers: int = 12
    dec_layers: int = 6
    intermediate_layer: int = 8
    feature_dim: int = 80
    subsample_factor: int = 4
    vocab_size: int = 32
    frame_ms: int = 10

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{f.name} must be a positive int, got {value!r}")
        if self.d_model % self.n_heads:
            raise ValueError("n_heads must divide d_model")
        if self.d_model % 2:
            raise ValueError("d_model must be even (sinusoidal positions)")
        if not 1 <= self.intermediate_layer <= self.enc_layers:
            raise ValueError("intermediate_layer must lie in [1, enc_layers]")
        if self.subsample_factor != 4:
            raise ValueError("only the two stride-2 convolution front end (factor 4) is implemented")
        if self.vocab_size < len(RESERVED_TOKENS) + 1:
            raise ValueError("vocab_size must leave room for at least one regular token")

    def as_ints(self) -> tuple[int, ...]:
        return tuple(int(getattr(self, f.name)) for f in fields(self))

    @classmethod
    def from_ints(cls, values) -> "ModelConfig":
        return cls(*(int(v) for v in values))


# --------------------------------------------------------------------------
# vocabulary
# --------------------------------------------------------------------------


class Vocabulary:
    """Ordered token inventory. Index 0 is blank, 1 is sos/eos, 2 is unk."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if len(tokens) < len(RESERVED_TOKENS) or tuple(tokens[:3]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary must start with the reserved tokens {RESERVED_TOKENS}")
        seen = {}
        for i, tok in enumerate(tokens):
            if tok in seen:
                raise ValueError(f"duplicate token {tok!r} at indices {seen[tok]} and {i}")
            seen[tok] = i
        self._tokens = tuple(tokens)
        self._index = seen

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token) -> bool:
        return token in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self._tokens)

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def encode(self, tokens, unk_ok: bool = False) -> list[int]:
        if unk_ok:
            return [self._index.get(t, UNK) for t in tokens]
        return [self.index(t) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self._tokens[int(i)] for i in ids]


def load_vocab(path) -> Vocabulary:
    text = Path(path).read_text(encoding="utf-8")
    tokens = [line.rstrip("\r") for line in text.split("\n")]
    if tokens and tokens[-1] == "":
        tokens.pop()
    return Vocabulary(tokens)


def save_vocab(vocab: Vocabulary, path) -> None:
    Path(path).write_text("".join(t + "\n" for t in vocab), encoding="utf-8")


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


def _attn_specs(prefix: str, d: int) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for p in ("q", "k", "v", "o"):
        out.append((f"{prefix}.w{p}", (d, d)))
        out.append((f"{prefix}.b{p}", (d,)))
    return out


def _norm_specs(prefix: str, d: int):
    return [(f"{prefix}.g", (d,)), (f"{prefix}.b", (d,))]


def _ff_specs(prefix: str, d: int, ff: int):
    return [(f"{prefix}.w1", (d, ff)), (f"{prefix}.b1", (ff,)), (f"{prefix}.w2", (ff, d)), (f"{prefix}.b2", (d,))]


def param_specs(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of every tensor, in canonical (file) order.

    Matrices are stored ``(in, out)`` so that ``x @ w`` applies them; the
    convolution kernels are ``(kernel, in, out)``.
    """
    d, ff, V = config.d_model, config.ff_dim, config.vocab_size
    specs: list[tuple[str, tuple[int, ...]]] = [
        ("sub.conv1.w", (2, config.feature_dim, d)),
        ("sub.conv1.b", (d,)),
        ("sub.conv2.w", (2, d, d)),
        ("sub.conv2.b", (d,)),
        ("sub.out.w", (d, d)),
        ("sub.out.b", (d,)),
        ("enc.ctx.w", (d, d)),
        ("enc.ctx.b", (d,)),
    ]
    for i in range(config.enc_layers):
        p = f"enc.{i}"
        specs += _norm_specs(f"{p}.ln1", d)
        specs += _attn_specs(f"{p}.attn", d)
        specs += _norm_specs(f"{p}.ln2", d)
        specs += _ff_specs(f"{p}.ff", d, ff)
    specs += _norm_specs("enc.ln_f", d)
    specs.append(("dec.embed", (V, d)))
    for i in range(config.dec_layers):
        p = f"dec.{i}"
        specs += _norm_specs(f"{p}.ln1", d)
        specs += _attn_specs(f"{p}.self", d)
        specs += _norm_specs(f"{p}.ln2", d)
        specs += _attn_specs(f"{p}.src", d)
        specs += _norm_specs(f"{p}.ln3", d)
        specs += _ff_specs(f"{p}.ff", d, ff)
    specs += _norm_specs("dec.ln_f", d)
    specs += [("dec.out.w", (d, V)), ("dec.out.b", (V,))]
    specs += [("ctc.main.w", (d, V)), ("ctc.main.b", (V,))]
    specs += [("ctc.aux.w", (d, V)), ("ctc.aux.b", (V,))]
    return specs


def _is_gain(name: str) -> bool:
    return name.endswith(".g")


def _is_weight(name: str) -> bool:
    last = name.rsplit(".", 1)[-1]
    return name == "dec.embed" or last.startswith("w")


class ModelParams(Mapping):
    """Read-only mapping ``name -> float64 array`` tied to a :class:`ModelConfig`."""

    def __init__(self, config: ModelConfig, tensors: Mapping[str, np.ndarray]):
        specs = param_specs(config)
        expected = {name for name, _ in specs}
        missing = expected - set(tensors)
        extra = set(tensors) - expected
        if missing or extra:
            raise ValueError(f"parameter set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        self.config = config
        self._tensors: dict[str, np.ndarray] = {}
        for name, shape in specs:
            arr = np.array(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            self._tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def replace(self, **updates) -> "ModelParams":
        """Copy with some tensors swapped; keyword names use ``__`` for ``.``."""
        tensors = dict(self._tensors)
        for key, value in updates.items():
            tensors[key.replace("__", ".")] = value
        return ModelParams(self.config, tensors)

    def with_tensors(self, updates: Mapping[str, np.ndarray]) -> "ModelParams":
        tensors = dict(self._tensors)
        tensors.update(updates)
        return ModelParams(self.config, tensors)

    def equals(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(self[k], other[k]) for k in self
        )


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Deterministic initialisation.

    A ``numpy.random.Generator(PCG64(seed))`` is consumed in
    :func:`param_specs` order. Weight matrices and embeddings are drawn
    uniformly from ``[-1/sqrt(d_model), 1/sqrt(d_model)]``; layer-norm gains
    are 1 and every bias is 0. Values are rounded to float32 so that a
    weight-file round trip is exact.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    bound = 1.0 / math.sqrt(config.d_model)
    tensors = {}
    for name, shape in param_specs(config):
        if _is_gain(name):
            arr = np.ones(shape)
        elif _is_weight(name):
            arr = rng.uniform(-bound, bound, size=shape)
        else:
            arr = np.zeros(shape)
        tensors[name] = arr.astype(np.float32).astype(np.float64)
    return ModelParams(config, tensors)


def save_weights(params: ModelParams, path) -> None:
    """Write ``BSTW1`` + config as int32 + every tensor as row-major float32 (little endian)."""
    config = params.config
    with open(path, "wb") as fh:
        fh.write(WEIGHT_MAGIC)
        fh.write(struct.pack(f"<{len(config.as_ints())}i", *config.as_ints()))
        for name, _ in param_specs(config):
            fh.write(np.ascontiguousarray(params[name], dtype="<f4").tobytes())


def load_weights(path) -> ModelParams:
    data = Path(path).read_bytes()
    if not data.startswith(WEIGHT_MAGIC):
        raise ValueError(f"{path}: not a BSTW1 weight file")
    n_fields = len(fields(ModelConfig))
    offset = len(WEIGHT_MAGIC)
    header = struct.unpack_from(f"<{n_fields}i", data, offset)
    offset += 4 * n_fields
    config = ModelConfig.from_ints(header)
    tensors = {}
    for name, shape in param_specs(config):
        count = int(np.prod(shape))
        if offset + 4 * count > len(data):
            raise ValueError(f"{path}: truncated while reading {name}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).reshape(shape)
        tensors[name] = arr.astype(np.float64)
        offset += 4 * count
    if offset != len(data):
        raise ValueError(f"{path}: {len(data) - offset} trailing bytes")
    return ModelParams(config, tensors)


# --------------------------------------------------------------------------
# attention / feed-forward blocks shared by encoder and decoder
# --------------------------------------------------------------------------


def multi_head_attention(
    params: Mapping[str, np.ndarray],
    prefix: str,
    query: np.ndarray,
    memory: np.ndarray,
    n_heads: int,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Scaled dot-product attention.

    ``query`` is ``(..., Tq, d)`` and ``memory`` ``(..., Tk, d)``; ``mask``
    broadcasts to ``(..., Tq, Tk)`` and is True where attending is allowed.
    """
    d = query.shape[-1]
    dh = d // n_heads

    def split(x):
        return x.reshape(*x.shape[:-1], n_heads, dh).swapaxes(-2, -3)

    q = split(query @ params[f"{prefix}.wq"] + params[f"{prefix}.bq"])
    k = split(memory @ params[f"{prefix}.wk"] + params[f"{prefix}.bk"])
    v = split(memory @ params[f"{prefix}.wv"] + params[f"{prefix}.bv"])
    scores = q @ k.swapaxes(-1, -2) / math.sqrt(dh)
    if mask is not None:
        scores = np.where(np.expand_dims(mask, -3), scores, -np.inf)
    scores = scores - scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = (weights @ v).swapaxes(-2, -3)
    ctx = ctx.reshape(*ctx.shape[:-2], d)
    return ctx @ params[f"{prefix}.wo"] + params[f"{prefix}.bo"]


def feed_forward(params: Mapping[str, np.ndarray], prefix: str, x: np.ndarray) -> np.ndarray:
    h = np.maximum(x @ params[f"{prefix}.w1"] + params[f"{prefix}.b1"], 0.0)
    return h @ params[f"{prefix}.w2"] + params[f"{prefix}.b2"]
