"""Autoregressive Transformer decoder (source of the attention score).

The blank index is never a valid decoder output: its logit is masked to
``-inf`` before normalisation, so every distribution sums to one over the
remaining tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import EncodedBlocks
from .model import (
    BLANK,
    EOS,
    SOS,
    ModelParams,
    feed_forward,
    layer_norm,
    log_softmax,
    multi_head_attention,
    sinusoidal_positions,
)


def _memory(encoded) -> np.ndarray:
    mem = encoded.top if isinstance(encoded, EncodedBlocks) else np.asarray(encoded, dtype=np.float64)
    if mem.ndim != 2 or mem.shape[0] == 0:
        raise ValueError("decoder needs at least one encoded frame")
    return mem


def _embed(params: ModelParams, tokens: np.ndarray, offset: int = 0) -> np.ndarray:
    d = params.config.d_model
    pos = np.arange(offset, offset + tokens.shape[-1])
    return params["dec.embed"][tokens] * math.sqrt(d) + sinusoidal_positions(pos, d)


def _self_block(params, p, x, kv, n_heads, mask):
    h = layer_norm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
    hkv = h if kv is None else layer_norm(kv, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
    return x + multi_head_attention(params, f"{p}.self", h, hkv, n_heads, mask)


def _rest_of_layer(params, p, x, memory, n_heads):
    h = layer_norm(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    x = x + multi_head_attention(params, f"{p}.src", h, memory, n_heads)
    h = layer_norm(x, params[f"{p}.ln3.g"], params[f"{p}.ln3.b"])
    return x + feed_forward(params, f"{p}.ff", h)


def _output(params, x):
    h = layer_norm(x, params["dec.ln_f.g"], params["dec.ln_f.b"])
    logits = h @ params["dec.out.w"] + params["dec.out.b"]
    logits[..., BLANK] = -np.inf
    return log_softmax(logits)


def decoder_forward(params: ModelParams, encoded, prefixes) -> np.ndarray:
    """Teacher-forced log-probs for a batch of equal-length prefixes.

    ``prefixes`` is ``(B, J)`` (or ``(J,)``) token ids, each starting with sos.
    Returns ``(B, J, V)``: row ``j`` is the next-token distribution after
    ``prefix[:j+1]``.
    """
    memory = _memory(encoded)
    tokens = np.atleast_2d(np.asarray(prefixes, dtype=np.int64))
    if tokens.shape[1] == 0 or np.any(tokens[:, 0] != SOS):
        raise ValueError("every prefix must start with sos")
    cfg = params.config
    J = tokens.shape[1]
    causal = np.tril(np.ones((J, J), dtype=bool))
    x = _embed(params, tokens)
    for layer in range(cfg.dec_layers):
        p = f"dec.{layer}"
        x = _self_block(params, p, x, None, cfg.n_heads, causal)
        x = _rest_of_layer(params, p, x, memory, cfg.n_heads)
    return _output(params, x)


def decoder_step(params: ModelParams, encoded, prefix) -> np.ndarray:
    """Next-token log-probabilities given ``prefix`` (starting with sos)."""
    return decoder_forward(params, encoded, np.asarray(prefix)[None, :])[0, -1]


def decoder_step_batch(params: ModelParams, encoded, prefixes) -> np.ndarray:
    """:func:`decoder_step` for ``(B, J)`` equal-length prefixes -> ``(B, V)``."""
    return decoder_forward(params, encoded, prefixes)[:, -1]


def sequence_logprob(params: ModelParams, encoded, y) -> float:
    """``sum_j log p(y_j | sos, y_<j)`` for a target ending in eos."""
    y = [int(t) for t in y]
    if not y or y[-1] != EOS:
        raise ValueError("target must end with eos")
    lp = decoder_forward(params, encoded, [SOS] + y[:-1])[0]
    return float(lp[np.arange(len(y)), y].sum())


@dataclass
class DecoderState:
    """Incremental decoding state: the prefix plus per-layer cached inputs.

    The cache holds, for every layer, the hidden states (layer inputs) of the
    prefix positions already processed. It is tied to the memory it was built
    against; stepping with a different memory length rebuilds it.
    """

    prefix: list[int] = field(default_factory=lambda: [SOS])
    cache: list[np.ndarray] | None = None
    memory_frames: int = -1

    def step(self, params: ModelParams, encoded, use_cache: bool = True) -> np.ndarray:
        memory = _memory(encoded)
        if not use_cache:
            return decoder_step(params, memory, self.prefix)
        cfg = params.config
        if self.cache is None or self.memory_frames != memory.shape[0]:
            self.cache = [np.zeros((0, cfg.d_model)) for _ in range(cfg.dec_layers)]
            self.memory_frames = memory.shape[0]
        done = self.cache[0].shape[0]
        toks = np.asarray(self.prefix[done:], dtype=np.int64)
        x = _embed(params, toks, offset=done)
        J = len(self.prefix)
        # new rows attend to every cached row and causally among themselves
        mask = np.tril(np.ones((J, J), dtype=bool))[done:]
        for layer in range(cfg.dec_layers):
            p = f"dec.{layer}"
            kv = np.vstack([self.cache[layer], x])
            self.cache[layer] = kv
            x = _self_block(params, p, x, kv, cfg.n_heads, mask)
            x = _rest_of_layer(params, p, x, memory, cfg.n_heads)
        return _output(params, x)[-1]

    def advance(self, token: int) -> None:
        self.prefix.append(int(token))
