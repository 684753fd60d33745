"""Joint CTC/attention beam search, offline and blockwise synchronous.

Hypotheses are scored with ``S = mu * S_ctc + (1 - mu) * S_att`` where
``S_att`` is the accumulated decoder log-probability and ``S_ctc`` the CTC
prefix log-probability of the token sequence (the completion probability once
eos is appended). Search is label-synchronous: every running hypothesis has
the same length, so the decoder runs batched over the beam.

In the blockwise decoder, both scores of the running beam are refreshed over
``B^{1:b}`` whenever a block arrives. Before the last block an expansion round
is *unreliable* when the best hypothesis would next emit eos or repeat its
last token; the round is then dropped and the decoder waits for more input.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

from .ctc import (
    CtcPrefixState,
    ctc_head,
    ctc_prefix_eos,
    ctc_prefix_extend_many,
    ctc_prefix_grow,
    ctc_prefix_init,
    extend_state,
)
from .decoder import decoder_forward, decoder_step_batch
from .encoder import StreamingEncoder, block_params_for, encode_full, subsample
from .latency import EmissionEvent, EmissionLog
from .model import BLANK, EOS, SOS, ModelParams

NEG_INF = -np.inf

DEFAULT_CTC_WEIGHT = {"slu": 0.5, "st": 0.3}


class SearchError(RuntimeError):
    """Search ended without any finished hypothesis."""


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 10
    ctc_weight: float | None = None  # None: task default
    task: str = "st"
    block_size: int = 40
    hop: int | None = None  # None: 20% of the block
    look_ahead: int | None = None  # None: 20% of the block
    maxlen_ratio: float = 0.5
    maxlen_offset: int = 10
    pre_beam: int | None = None  # None: 2 * beam_size
    repetition_window: int = 1

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.task not in DEFAULT_CTC_WEIGHT:
            raise ValueError(f"task must be one of {sorted(DEFAULT_CTC_WEIGHT)}")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("ctc_weight must lie in [0, 1]")
        if self.repetition_window < 1:
            raise ValueError("repetition_window must be >= 1")

    @property
    def mu(self) -> float:
        return DEFAULT_CTC_WEIGHT[self.task] if self.ctc_weight is None else float(self.ctc_weight)

    @property
    def block_params(self) -> tuple[int, int, int]:
        N_b, hop, la = block_params_for(self.block_size)
        return N_b, self.hop if self.hop is not None else hop, self.look_ahead if self.look_ahead is not None else la

    @property
    def pre_beam_size(self) -> int:
        return 2 * self.beam_size if self.pre_beam is None else self.pre_beam

    def max_length(self, n_frames: int) -> int:
        return math.ceil(self.maxlen_ratio * n_frames) + self.maxlen_offset


@dataclass(frozen=True)
class Commit:
    block: int
    source_ms: float
    wall_ms: float


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]
    s_att: float
    s_ctc: float
    score: float
    ctc_state: CtcPrefixState | None
    commits: tuple[Commit, ...] = ()

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS

    @property
    def output(self) -> list[int]:
        return list(self.tokens[:-1] if self.finished else self.tokens)


def joint_score(s_att: float, s_ctc: float, mu: float) -> float:
    if mu == 0.0:
        return s_att
    if mu == 1.0:
        return s_ctc
    return mu * s_ctc + (1.0 - mu) * s_att


def is_unreliable(candidate: int, hypothesis, b: int, n_blocks: int, window: int = 1) -> bool:
    """Whether committing ``candidate`` on ``b`` of ``n_blocks`` blocks must wait.

    An end token, or a token equal to one of the last ``window`` committed
    tokens, is unreliable until the final block has been encoded.
    """
    if b >= n_blocks:
        return False
    if candidate == EOS:
        return True
    tokens = hypothesis.tokens if isinstance(hypothesis, Hypothesis) else tuple(hypothesis)
    return candidate in tokens[-window:] if tokens else False


# --------------------------------------------------------------------------
# expansion machinery shared by both decoders
# --------------------------------------------------------------------------


@dataclass(order=True)
class _Candidate:
    key: tuple = field(compare=True)
    hyp: int = field(compare=False, default=0)
    token: int = field(compare=False, default=0)
    s_att: float = field(compare=False, default=0.0)
    s_ctc: float = field(compare=False, default=0.0)
    score: float = field(compare=False, default=0.0)
    rows: tuple | None = field(compare=False, default=None)


def _root(lp: np.ndarray | None, mu: float) -> Hypothesis:
    state = ctc_prefix_init(lp) if mu > 0 else None
    return Hypothesis((), 0.0, 0.0, 0.0, state)


def _candidates(params, memory, lp, hyps: list[Hypothesis], cfg: DecodeConfig, maxlen: int) -> list[_Candidate]:
    """Score every allowed one-token expansion of ``hyps``."""
    mu = cfg.mu
    V = params.config.vocab_size
    prefixes = np.array([(SOS,) + h.tokens for h in hyps], dtype=np.int64)
    att = decoder_step_batch(params, memory, prefixes)
    out = []
    for i, hyp in enumerate(hyps):
        if len(hyp.tokens) >= maxlen:
            toks = np.array([EOS])
        elif mu == 1.0:
            toks = np.arange(1, V)
        else:
            order = np.argsort(-att[i], kind="stable")
            toks = order[order != BLANK][: cfg.pre_beam_size]
        s_att = hyp.s_att + att[i, toks]
        s_ctc = np.zeros(len(toks))
        rows: list = [None] * len(toks)
        if mu > 0.0:
            regular = toks != EOS
            if regular.any():
                cond, r_n, r_b = ctc_prefix_extend_many(lp, hyp.ctc_state, toks[regular])
                s_ctc[regular] = hyp.s_ctc + cond
                for j, k in enumerate(np.flatnonzero(regular)):
                    rows[k] = (r_n[j], r_b[j], cond[j])
            if not regular.all():
                s_ctc[~regular] = hyp.s_ctc + ctc_prefix_eos(lp, hyp.ctc_state, hyp.tokens)
        for k, tok in enumerate(toks):
            score = joint_score(float(s_att[k]), float(s_ctc[k]), mu)
            if score == NEG_INF:
                continue  # dead under CTC (or impossible under attention)
            out.append(_Candidate((-score, i, int(tok)), i, int(tok), float(s_att[k]), float(s_ctc[k]), score, rows[k]))
    return out


def _materialise(hyps: list[Hypothesis], cand: _Candidate, commit: Commit) -> Hypothesis:
    parent = hyps[cand.hyp]
    state = parent.ctc_state
    if cand.rows is not None:
        r_n, r_b, cond = cand.rows
        state = extend_state(state, cand.token, r_n, r_b, cond)
    return Hypothesis(
        parent.tokens + (cand.token,), cand.s_att, cand.s_ctc, cand.score, state, parent.commits + (commit,)
    )


def _select(cands: list[_Candidate], beam: int) -> list[_Candidate]:
    return sorted(cands)[:beam]


def _best(ended: list[Hypothesis]) -> Hypothesis:
    return min(ended, key=lambda h: (-h.score, h.tokens))


def _final_rounds(params, memory, lp, running, cfg, maxlen, commit_fn):
    """Expand until every hypothesis has ended (no reliability rule)."""
    ended: list[Hypothesis] = []
    while running:
        cands = _candidates(params, memory, lp, running, cfg, maxlen)
        if not cands:
            break
        commit = commit_fn()
        nxt = []
        for cand in _select(cands, cfg.beam_size):
            hyp = _materialise(running, cand, commit)
            (ended if cand.token == EOS else nxt).append(hyp)
        running = nxt
    if not ended:
        raise SearchError(
            f"no hypothesis finished: all candidates had -inf joint score "
            f"(mu={cfg.mu}, frames={memory.shape[0]}, maxlen={maxlen})"
        )
    return ended


# --------------------------------------------------------------------------
# offline
# --------------------------------------------------------------------------


def beam_search(params: ModelParams, memory: np.ndarray, lp: np.ndarray | None, cfg: DecodeConfig, maxlen: int | None = None) -> list[Hypothesis]:
    """Joint beam search over fixed encoder output; returns finished hypotheses, best first."""
    if maxlen is None:
        maxlen = cfg.max_length(memory.shape[0])
    if cfg.mu > 0.0 and lp is None:
        raise ValueError("CTC log-probs required when ctc_weight > 0")
    ended = _final_rounds(params, memory, lp, [_root(lp, cfg.mu)], cfg, maxlen, lambda: Commit(1, 0.0, 0.0))
    return sorted(ended, key=lambda h: (-h.score, h.tokens))


def decode_offline(params: ModelParams, features: np.ndarray, cfg: DecodeConfig = DecodeConfig(), maxlen: int | None = None) -> list[int]:
    """Full-context encoding followed by joint CTC/attention beam search."""
    top, _ = encode_full(params, subsample(params, features))
    lp = ctc_head(params, top, "main") if cfg.mu > 0 else None
    return beam_search(params, top, lp, cfg, maxlen)[0].output


# --------------------------------------------------------------------------
# blockwise synchronous
# --------------------------------------------------------------------------


class BlockwiseDecoder:
    """Streaming session: push raw feature chunks, get the decode at the end.

    ``clock`` returns wall-clock milliseconds; it is sampled at every commit,
    when the final chunk arrives and when decoding completes.
    """

    def __init__(
        self,
        params: ModelParams,
        cfg: DecodeConfig = DecodeConfig(),
        clock: Callable[[], float] | None = None,
        token_str: Callable[[int], str] = str,
    ):
        self.params = params
        self.cfg = cfg
        if clock is None:
            t0 = time.perf_counter()
            clock = lambda: (time.perf_counter() - t0) * 1000.0  # noqa: E731
        self.clock = clock
        self.token_str = token_str
        self.encoder = StreamingEncoder(params, *cfg.block_params)
        V = params.config.vocab_size
        self.lp = np.zeros((0, V))
        self.block_frames: list[int] = []  # cumulative central frames after each block
        self.running = [_root(self.lp, cfg.mu)]
        self.ended: list[Hypothesis] = []
        self.wait_events = 0
        self.wait_blocks: list[int] = []
        self.source_ms = 0.0
        self.source_end_wall_ms: float | None = None
        self.completion_wall_ms: float | None = None
        self.best: Hypothesis | None = None

    @property
    def n_blocks(self) -> int:
        return len(self.block_frames)

    def push(self, chunk: np.ndarray, is_final: bool = False) -> None:
        chunk = np.asarray(chunk, dtype=np.float64)
        self.source_ms += chunk.shape[0] * self.params.config.frame_ms
        if is_final:
            self.source_end_wall_ms = self.clock()
        blocks = self.encoder.push(chunk, is_final)
        total = len(self.encoder.schedule) if is_final else None
        for i, top, _mid in blocks:
            self.lp = np.vstack([self.lp, ctc_head(self.params, top, "main")])
            self.block_frames.append(self.lp.shape[0])
            self._on_block(i + 1, total is not None and i + 1 == total)
        if is_final:
            self.completion_wall_ms = self.clock()

    def _refresh(self, memory: np.ndarray) -> None:
        """Rescore the running beam over the frames now available."""
        mu = self.cfg.mu
        prefixes = np.array([(SOS,) + h.tokens for h in self.running], dtype=np.int64)
        if prefixes.shape[1] > 1:
            # row j of the teacher-forced output scores token j + 1
            lp_att = decoder_forward(self.params, memory, prefixes[:, :-1])
            s_att = np.take_along_axis(lp_att, prefixes[:, 1:, None], axis=2)[..., 0].sum(axis=1)
        else:
            s_att = np.zeros(len(self.running))
        refreshed = []
        for h, sa in zip(self.running, s_att):
            state, sc = h.ctc_state, h.s_ctc
            if mu > 0:
                state = ctc_prefix_grow(self.lp, state)
                sc = state.log_prefix_prob
            refreshed.append(replace(h, s_att=float(sa), s_ctc=sc, score=joint_score(float(sa), sc, mu), ctc_state=state))
        self.running = sorted(refreshed, key=lambda h: (-h.score, h.tokens))

    def _on_block(self, b: int, is_last: bool) -> None:
        cfg = self.cfg
        memory = self.encoder.encoded.top[: self.block_frames[-1]]
        self._refresh(memory)
        maxlen = cfg.max_length(memory.shape[0])
        commit = lambda: Commit(b, self.source_ms, self.clock())  # noqa: E731
        if is_last:
            self.ended = _final_rounds(self.params, memory, self.lp, self.running, cfg, maxlen, commit)
            self.running = []
            self.best = _best(self.ended)
            return
        while self.running and len(self.running[0].tokens) < maxlen:
            cands = _candidates(self.params, memory, self.lp, self.running, cfg, maxlen)
            # the total block count is unknown before the last block; b + 1 marks "not final"
            top_of_best = min((c for c in cands if c.hyp == 0), default=None)
            if top_of_best is None or is_unreliable(
                top_of_best.token, self.running[0], b, b + 1, cfg.repetition_window
            ):
                self.wait_events += 1
                self.wait_blocks.append(b)
                break
            reliable = [
                c for c in cands
                if not is_unreliable(c.token, self.running[c.hyp], b, b + 1, cfg.repetition_window)
            ]
            stamp = commit()
            self.running = [_materialise(self.running, c, stamp) for c in _select(reliable, cfg.beam_size)]

    def emission_log(self) -> EmissionLog:
        if self.best is None or self.completion_wall_ms is None:
            raise RuntimeError("decode has not completed")
        events = tuple(
            EmissionEvent(i, self.token_str(tok), c.block, min(c.source_ms, self.source_ms), c.wall_ms)
            for i, (tok, c) in enumerate(zip(self.best.tokens, self.best.commits), start=1)
        )
        return EmissionLog(events, self.source_ms, self.source_end_wall_ms, self.completion_wall_ms, self.wait_events)


def decode_blockwise(
    params: ModelParams,
    chunks: Iterable[np.ndarray],
    cfg: DecodeConfig = DecodeConfig(),
    clock: Callable[[], float] | None = None,
    token_str: Callable[[int], str] = str,
) -> tuple[list[int], EmissionLog]:
    """Run a full streaming session over ``chunks`` (raw feature slices, in order)."""
    chunks = list(chunks)
    if not chunks:
        raise ValueError("empty feature stream")
    dec = BlockwiseDecoder(params, cfg, clock, token_str)
    for i, chunk in enumerate(chunks):
        dec.push(chunk, is_final=i == len(chunks) - 1)
    return dec.best.output, dec.emission_log()
