"""Contextual block processing encoder.

Frames are split into overlapping windows ``[history | central | look-ahead]``.
Each encoder layer of block ``i`` sees the window frames plus two context
slots: the context embedding that the same layer produced for block ``i-1``
(read by every position) and the current block's context embedding coming
from the layer below (read only by itself). The output at that second slot is
the layer's new context embedding; it feeds the layer above and, through
:class:`ContextState`, the same layer of the next block. Only central-range
outputs leave the encoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ModelParams, feed_forward, layer_norm, multi_head_attention, sinusoidal_positions


def block_params_for(block_size: int, ratio: float = 0.2) -> tuple[int, int, int]:
    """``(N_b, N_h, N_r)`` with hop and look-ahead a fixed fraction of the block."""
    share = max(1, int(round(ratio * block_size)))
    if 2 * share > block_size:
        raise ValueError(f"block size {block_size} too small for hop/look-ahead of {share}")
    return block_size, share, share


# --------------------------------------------------------------------------
# front end
# --------------------------------------------------------------------------


def subsample(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Two kernel-2/stride-2 convolutions with ReLU, then a linear layer.

    Output length is ``T_f // 4``. Each output frame depends only on its own
    four input frames, so chunked inputs whose lengths are multiples of four
    subsample to the same frames as the whole sequence.
    """
    features = np.asarray(features, dtype=np.float64)
    cfg = params.config
    if features.ndim != 2 or features.shape[1] != cfg.feature_dim:
        raise ValueError(f"features must be (T, {cfg.feature_dim}), got {features.shape}")
    if features.shape[0] < cfg.subsample_factor:
        raise ValueError(
            f"need at least {cfg.subsample_factor} feature frames, got {features.shape[0]}"
        )
    x = features
    for conv in ("sub.conv1", "sub.conv2"):
        n = x.shape[0] // 2
        w = params[f"{conv}.w"]
        x = x[: 2 * n].reshape(n, 2, -1)
        x = np.maximum(np.einsum("tki,kio->to", x, w) + params[f"{conv}.b"], 0.0)
    return x @ params["sub.out.w"] + params["sub.out.b"]


# --------------------------------------------------------------------------
# schedule
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockWindow:
    start: int
    end: int
    central_start: int
    central_end: int


@dataclass(frozen=True)
class BlockSchedule:
    block_size: int
    hop: int
    look_ahead: int
    total_frames: int
    blocks: tuple[BlockWindow, ...]

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, i: int) -> BlockWindow:
        return self.blocks[i]

    @property
    def history(self) -> int:
        return self.block_size - self.hop - self.look_ahead


def _window(i: int, T: int, N_b: int, N_h: int, N_r: int) -> BlockWindow:
    cs = i * N_h
    ce = min((i + 1) * N_h, T)
    return BlockWindow(max(0, cs - (N_b - N_h - N_r)), min(T, ce + N_r), cs, ce)


def _check_block_params(N_b: int, N_h: int, N_r: int) -> None:
    if N_h < 1 or N_r < 0:
        raise ValueError("hop must be >= 1 and look-ahead >= 0")
    if N_h + N_r > N_b:
        raise ValueError(f"hop + look-ahead ({N_h} + {N_r}) exceeds block size {N_b}")


def make_block_schedule(T: int, N_b: int, N_h: int, N_r: int) -> BlockSchedule:
    _check_block_params(N_b, N_h, N_r)
    if T < 1:
        raise ValueError("schedule needs at least one frame")
    n_blocks = math.ceil(T / N_h)
    blocks = tuple(_window(i, T, N_b, N_h, N_r) for i in range(n_blocks))
    return BlockSchedule(N_b, N_h, N_r, T, blocks)


# --------------------------------------------------------------------------
# encoder layers
# --------------------------------------------------------------------------


def _encoder_layer(params, layer: int, x: np.ndarray, n_heads: int, mask=None) -> np.ndarray:
    p = f"enc.{layer}"
    h = layer_norm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
    x = x + multi_head_attention(params, f"{p}.attn", h, h, n_heads, mask)
    h = layer_norm(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    return x + feed_forward(params, f"{p}.ff", h)


def embed_frames(params: ModelParams, frames: np.ndarray, offset: int = 0) -> np.ndarray:
    """Add sinusoidal encodings at absolute indices ``offset, offset+1, ...``."""
    frames = np.asarray(frames, dtype=np.float64)
    pos = np.arange(offset, offset + frames.shape[0])
    return frames + sinusoidal_positions(pos, params.config.d_model)


def encode_full(params: ModelParams, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Offline reference: full self-attention over all (subsampled) frames.

    Returns ``(top, mid)`` where ``top`` is the final-normed output of the last
    layer and ``mid`` the raw output of ``intermediate_layer`` (1-based).
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("encode_full needs a non-empty (T, d_model) matrix")
    cfg = params.config
    x = embed_frames(params, frames)
    mid = None
    for layer in range(cfg.enc_layers):
        x = _encoder_layer(params, layer, x, cfg.n_heads)
        if layer + 1 == cfg.intermediate_layer:
            mid = x
    top = layer_norm(x, params["enc.ln_f.g"], params["enc.ln_f.b"])
    return top, mid


# --------------------------------------------------------------------------
# blockwise encoding
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ContextState:
    """Per-layer context embeddings handed from one block to the next."""

    vectors: tuple[np.ndarray, ...]

    def __post_init__(self):
        for v in self.vectors:
            if not np.all(np.isfinite(v)):
                raise ValueError("context embedding has non-finite values")


def init_context(params: ModelParams, block_input: np.ndarray) -> np.ndarray:
    block_input = np.asarray(block_input, dtype=np.float64)
    if block_input.ndim != 2 or block_input.shape[0] == 0:
        raise ValueError("init_context needs a non-empty block")
    return block_input.mean(axis=0) @ params["enc.ctx.w"] + params["enc.ctx.b"]


def encode_block(
    params: ModelParams,
    schedule: BlockSchedule,
    block_idx: int,
    frames: np.ndarray,
    ctx: ContextState | None,
) -> tuple[np.ndarray, np.ndarray, ContextState]:
    """Encode one block window.

    ``frames`` are the subsampled frames of exactly the window
    ``schedule[block_idx]`` (without positional encoding). ``ctx`` is the state
    left by block ``block_idx - 1``; ``None`` means no previous block, in which
    case the previous-context slot is masked out.
    """
    cfg = params.config
    win = schedule[block_idx]
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] != win.end - win.start:
        raise ValueError(
            f"block {block_idx} window holds {win.end - win.start} frames, got {frames.shape[0]}"
        )
    if ctx is not None and len(ctx.vectors) != cfg.enc_layers:
        raise ValueError("context state does not match the number of encoder layers")

    x = embed_frames(params, frames, win.start)
    n = x.shape[0]
    # sequence layout: [prev ctx, frames..., current ctx]
    mask = np.ones((n + 2, n + 2), dtype=bool)
    mask[1 : n + 1, n + 1] = False  # frames do not read the current-block context slot
    mask[0, :] = False
    mask[0, 0] = True  # prev-ctx slot output is discarded; keep its row well defined
    if ctx is None:
        mask[1:, 0] = False

    cur = init_context(params, x)
    new_ctx = []
    mid = None
    for layer in range(cfg.enc_layers):
        prev = ctx.vectors[layer] if ctx is not None else np.zeros(cfg.d_model)
        seq = np.vstack([prev[None, :], x, cur[None, :]])
        out = _encoder_layer(params, layer, seq, cfg.n_heads, mask)
        x, cur = out[1 : n + 1], out[n + 1]
        new_ctx.append(cur)
        if layer + 1 == cfg.intermediate_layer:
            mid = x
    top = layer_norm(x, params["enc.ln_f.g"], params["enc.ln_f.b"])
    lo, hi = win.central_start - win.start, win.central_end - win.start
    return top[lo:hi], mid[lo:hi], ContextState(tuple(new_ctx))


@dataclass(frozen=True)
class EncodedBlocks:
    """Central outputs of the blocks consumed so far (``B^{1:b}``)."""

    top: np.ndarray
    mid: np.ndarray
    n_blocks: int = 0

    @classmethod
    def empty(cls, d_model: int) -> "EncodedBlocks":
        return cls(np.zeros((0, d_model)), np.zeros((0, d_model)), 0)

    def __len__(self) -> int:
        return self.top.shape[0]

    def append(self, top: np.ndarray, mid: np.ndarray) -> "EncodedBlocks":
        if top.shape[0] != mid.shape[0]:
            raise ValueError("top-layer and intermediate frame counts differ")
        return EncodedBlocks(
            np.vstack([self.top, top]), np.vstack([self.mid, mid]), self.n_blocks + 1
        )


def encode_blockwise(
    params: ModelParams, frames: np.ndarray, schedule: BlockSchedule, upto: int | None = None
) -> EncodedBlocks:
    """Encode blocks ``0 .. upto-1`` (all by default) of already subsampled frames."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] != schedule.total_frames:
        raise ValueError("frame count does not match schedule")
    enc = EncodedBlocks.empty(params.config.d_model)
    ctx = None
    for i in range(len(schedule) if upto is None else upto):
        win = schedule[i]
        top, mid, ctx = encode_block(params, schedule, i, frames[win.start : win.end], ctx)
        enc = enc.append(top, mid)
    return enc


class StreamingEncoder:
    """Incremental front end + block encoder for one stream.

    Raw feature chunks are pushed in order; every block whose window is fully
    available is encoded as soon as possible. The total length is only known
    once the final chunk arrives, at which point the remaining (possibly
    shortened) blocks are flushed.
    """

    def __init__(self, params: ModelParams, block_size: int, hop: int, look_ahead: int):
        _check_block_params(block_size, hop, look_ahead)
        self.params = params
        self.block_size, self.hop, self.look_ahead = block_size, hop, look_ahead
        self._raw = np.zeros((0, params.config.feature_dim))
        self._frames = np.zeros((0, params.config.d_model))
        self._ctx: ContextState | None = None
        self.encoded = EncodedBlocks.empty(params.config.d_model)
        self.finished = False
        self.schedule: BlockSchedule | None = None

    @property
    def n_frames(self) -> int:
        return self._frames.shape[0]

    def push(self, chunk: np.ndarray, is_final: bool = False) -> list[tuple[int, np.ndarray, np.ndarray]]:
        """Feed a raw feature chunk; return ``(block_idx, top, mid)`` for newly encoded blocks."""
        if self.finished:
            raise RuntimeError("stream already finished")
        chunk = np.asarray(chunk, dtype=np.float64).reshape(-1, self.params.config.feature_dim)
        self._raw = np.vstack([self._raw, chunk])
        usable = (self._raw.shape[0] // 4) * 4
        if usable:
            self._frames = np.vstack([self._frames, subsample(self.params, self._raw[:usable])])
            self._raw = self._raw[usable:]
        out = []
        T = self.n_frames
        if is_final:
            self.finished = True
            if T == 0:
                raise ValueError("stream too short: no encoder frames after subsampling")
            self.schedule = make_block_schedule(T, self.block_size, self.hop, self.look_ahead)
            n_blocks = len(self.schedule)
        else:
            # block i is complete once its look-ahead is in
            n_blocks = max(0, (T - self.look_ahead) // self.hop)
        while self.encoded.n_blocks < n_blocks:
            i = self.encoded.n_blocks
            win = _window(i, T, self.block_size, self.hop, self.look_ahead)
            sched = self.schedule or BlockSchedule(
                self.block_size, self.hop, self.look_ahead, T, tuple(_window(j, T, self.block_size, self.hop, self.look_ahead) for j in range(i + 1))
            )
            top, mid, self._ctx = encode_block(
                self.params, sched, i, self._frames[win.start : win.end], self._ctx
            )
            self.encoded = self.encoded.append(top, mid)
            out.append((i, top, mid))
        return out
