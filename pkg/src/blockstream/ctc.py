"""CTC heads, loss, incremental prefix scoring and exhaustive oracles.

Prefix scoring follows the usual blank / non-blank forward variables. For a
prefix ``g`` over frames ``0..t``:

* ``r_n[t]``: log prob that frames ``0..t`` collapse to exactly ``g`` and the
  last frame emits ``g``'s last token,
* ``r_b[t]``: same, with the last frame emitting blank,
* ``psi``: log prob that the collapse of *all* available frames begins with
  ``g`` (the prefix probability).

A :class:`CtcPrefixState` keeps these rows for every prefix of its token
sequence, which is what allows appending new frames exactly without
recomputing earlier columns.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import BLANK, EOS, SOS, ModelParams, log_softmax

NEG_INF = -np.inf

BRUTE_FORCE_MAX_FRAMES = 8
BRUTE_FORCE_MAX_VOCAB = 5


class DeadHypothesisError(ValueError):
    """Raised when extending a prefix whose CTC prefix probability is zero."""


def ctc_head(params: ModelParams, frames: np.ndarray, head: str = "main") -> np.ndarray:
    """Per-frame log-softmax of a linear projection (``main`` or ``aux``)."""
    if head not in ("main", "aux"):
        raise ValueError(f"unknown CTC head {head!r}")
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ValueError("ctc_head needs a non-empty (T, d_model) matrix")
    return log_softmax(frames @ params[f"ctc.{head}.w"] + params[f"ctc.{head}.b"])


def _check_target(target) -> list[int]:
    target = [int(t) for t in target]
    if any(t in (BLANK, SOS) for t in target):
        raise ValueError("CTC targets may not contain blank or sos/eos")
    return target


def min_frames(target) -> int:
    """Shortest emission collapsing to ``target`` (a blank between repeats)."""
    target = list(target)
    return len(target) + sum(a == b for a, b in zip(target, target[1:]))


def ctc_loss(lp: np.ndarray, target) -> float:
    """``-log p(target | lp)`` by the forward algorithm; ``inf`` if infeasible."""
    lp = np.asarray(lp, dtype=np.float64)
    target = _check_target(target)
    T = lp.shape[0]
    if min_frames(target) > T:
        return float("inf")
    ext = [BLANK]
    for tok in target:
        ext += [tok, BLANK]
    ext = np.asarray(ext)
    S = len(ext)
    # transitions s-2 -> s allowed for labels that differ from the label two back
    skip = np.zeros(S, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full(S, NEG_INF)
    alpha[0] = lp[0, BLANK]
    if S > 1:
        alpha[1] = lp[0, ext[1]]
    for t in range(1, T):
        prev = alpha
        alpha = prev.copy()
        alpha[1:] = np.logaddexp(alpha[1:], prev[:-1])
        alpha[2:] = np.where(skip[2:], np.logaddexp(alpha[2:], prev[:-2]), alpha[2:])
        alpha = alpha + lp[t, ext]
    tail = alpha[-2:] if S > 1 else alpha[-1:]
    return -float(np.logaddexp.reduce(tail))


# --------------------------------------------------------------------------
# prefix scoring
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CtcPrefixState:
    """Forward variables for a token prefix and all of its own prefixes.

    ``r_n[d]``, ``r_b[d]`` and ``psi[d]`` belong to ``tokens[:d]``; row 0 is
    the empty prefix.
    """

    tokens: tuple[int, ...]
    r_n: tuple[np.ndarray, ...]
    r_b: tuple[np.ndarray, ...]
    psi: tuple[float, ...]
    frames_available: int

    @property
    def gamma_n(self) -> np.ndarray:
        return self.r_n[-1]

    @property
    def gamma_b(self) -> np.ndarray:
        return self.r_b[-1]

    @property
    def log_prefix_prob(self) -> float:
        """``log p_prefix(tokens)`` over the available frames."""
        return self.psi[-1]

    @property
    def log_complete_prob(self) -> float:
        """``log`` probability that the whole collapse equals ``tokens``."""
        if self.frames_available == 0:
            return 0.0 if not self.tokens else NEG_INF
        return float(np.logaddexp(self.r_n[-1][-1], self.r_b[-1][-1]))


def _root_rows(lp: np.ndarray, t0: int, T: int, carry_b: float):
    blanks = lp[t0:T, BLANK]
    r_b = carry_b + np.cumsum(blanks) if T > t0 else np.zeros(0)
    return np.full(T - t0, NEG_INF), r_b


def _parent_at(rows: np.ndarray, t: int, is_root: bool, blank_side: bool) -> float:
    """Parent forward value at frame ``t``; frame ``-1`` is the virtual start."""
    if t < 0:
        return 0.0 if (is_root and blank_side) else NEG_INF
    return rows[t]


def _advance(
    lp: np.ndarray,
    parent_n: np.ndarray,
    parent_b: np.ndarray,
    parent_is_root: bool,
    parent_last: int | None,
    tokens: np.ndarray,
    t0: int,
    T: int,
    carry_n: np.ndarray,
    carry_b: np.ndarray,
    psi: np.ndarray,
):
    """Forward rows for ``parent + c`` over frames ``t0..T-1`` for every ``c`` in ``tokens``.

    ``carry_*`` are the rows' values at ``t0 - 1`` (``-inf`` when ``t0 == 0``)
    and ``psi`` the prefix log prob accumulated up to ``t0``.
    """
    K = tokens.shape[0]
    same = tokens == parent_last if parent_last is not None else np.zeros(K, dtype=bool)
    out_n = np.empty((K, T - t0))
    out_b = np.empty((K, T - t0))
    n, b, psi = carry_n.copy(), carry_b.copy(), psi.copy()
    for t in range(t0, T):
        pb = _parent_at(parent_b, t - 1, parent_is_root, True)
        pn = _parent_at(parent_n, t - 1, parent_is_root, False)
        phi = np.where(same, pb, np.logaddexp(pb, pn))
        emit = lp[t, tokens]
        new_n = np.logaddexp(n, phi) + emit
        b = np.logaddexp(b, n) + lp[t, BLANK]
        n = new_n
        psi = np.logaddexp(psi, phi + emit)
        out_n[:, t - t0] = n
        out_b[:, t - t0] = b
    return out_n, out_b, psi


def ctc_prefix_init(lp: np.ndarray, frames_available: int | None = None) -> CtcPrefixState:
    """Empty-prefix state over the first ``frames_available`` frames of ``lp``."""
    lp = np.asarray(lp, dtype=np.float64)
    T = lp.shape[0] if frames_available is None else int(frames_available)
    if T < 0 or T > lp.shape[0]:
        raise ValueError(f"frames_available={T} outside [0, {lp.shape[0]}]")
    r_n, r_b = _root_rows(lp, 0, T, 0.0)
    return CtcPrefixState((), (r_n,), (r_b,), (0.0,), T)


def ctc_prefix_extend_many(lp: np.ndarray, state: CtcPrefixState, tokens) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised extension by several candidate tokens.

    Returns ``(cond, r_n, r_b)`` where ``cond[k]`` is
    ``log p_prefix(prefix + tokens[k]) - log p_prefix(prefix)`` and the row
    arrays are the new forward variables, one row per candidate.
    """
    lp = np.asarray(lp, dtype=np.float64)
    tokens = np.asarray(tokens, dtype=np.int64)
    if np.any((tokens == BLANK) | (tokens == EOS)):
        raise ValueError("prefix extension takes regular tokens only (use ctc_prefix_eos)")
    if state.log_prefix_prob == NEG_INF:
        raise DeadHypothesisError(f"prefix {state.tokens} has zero CTC prefix probability")
    T = state.frames_available
    K = tokens.shape[0]
    init = np.full(K, NEG_INF)
    r_n, r_b, psi = _advance(
        lp, state.r_n[-1], state.r_b[-1], not state.tokens,
        state.tokens[-1] if state.tokens else None, tokens, 0, T, init, init, init,
    )
    return psi - state.log_prefix_prob, r_n, r_b


def _push(state: CtcPrefixState, token: int, r_n, r_b, psi_abs: float) -> CtcPrefixState:
    return CtcPrefixState(
        state.tokens + (int(token),),
        state.r_n + (r_n,),
        state.r_b + (r_b,),
        state.psi + (float(psi_abs),),
        state.frames_available,
    )


def ctc_prefix_extend(lp: np.ndarray, state: CtcPrefixState, prefix, token: int) -> tuple[CtcPrefixState, float]:
    """Extend ``prefix`` by ``token``: ``(state', log p_prefix(prefix+token) / p_prefix(prefix))``."""
    if tuple(int(t) for t in prefix) != state.tokens:
        raise ValueError("state does not belong to the given prefix")
    cond, r_n, r_b = ctc_prefix_extend_many(lp, state, [token])
    c = float(cond[0])
    return _push(state, token, r_n[0], r_b[0], state.log_prefix_prob + c), c


def extend_state(state: CtcPrefixState, token: int, r_n: np.ndarray, r_b: np.ndarray, cond: float) -> CtcPrefixState:
    """Materialise a candidate from :func:`ctc_prefix_extend_many`."""
    return _push(state, token, r_n, r_b, state.log_prefix_prob + cond)


def ctc_prefix_eos(lp: np.ndarray, state: CtcPrefixState, prefix) -> float:
    """``log p_complete(prefix) - log p_prefix(prefix)``."""
    if tuple(int(t) for t in prefix) != state.tokens:
        raise ValueError("state does not belong to the given prefix")
    if state.log_prefix_prob == NEG_INF:
        raise DeadHypothesisError(f"prefix {state.tokens} has zero CTC prefix probability")
    return state.log_complete_prob - state.log_prefix_prob


def ctc_prefix_grow(lp: np.ndarray, state: CtcPrefixState) -> CtcPrefixState:
    """Append the columns for frames ``state.frames_available .. len(lp)-1``.

    Earlier columns are reused untouched; rows are advanced from the empty
    prefix upwards so each one reads its (already grown) parent.
    """
    lp = np.asarray(lp, dtype=np.float64)
    t0, T = state.frames_available, lp.shape[0]
    if T < t0:
        raise ValueError("CTC frames can only grow")
    if T == t0:
        return state
    root_carry = state.r_b[0][-1] if t0 else 0.0
    new_n, new_b = _root_rows(lp, t0, T, root_carry)
    r_n = [np.concatenate([state.r_n[0], new_n])]
    r_b = [np.concatenate([state.r_b[0], new_b])]
    psi = [0.0]
    for d, tok in enumerate(state.tokens, start=1):
        carry_n = np.array([state.r_n[d][-1] if t0 else NEG_INF])
        carry_b = np.array([state.r_b[d][-1] if t0 else NEG_INF])
        parent_last = state.tokens[d - 2] if d >= 2 else None
        gn, gb, gpsi = _advance(
            lp, r_n[d - 1], r_b[d - 1], d == 1, parent_last, np.array([tok]),
            t0, T, carry_n, carry_b, np.array([state.psi[d]]),
        )
        r_n.append(np.concatenate([state.r_n[d], gn[0]]))
        r_b.append(np.concatenate([state.r_b[d], gb[0]]))
        psi.append(float(gpsi[0]))
    return CtcPrefixState(state.tokens, tuple(r_n), tuple(r_b), tuple(psi), T)


def ctc_prefix_score(lp: np.ndarray, prefix) -> float:
    """``log p_prefix(prefix)`` from a fresh DP pass over all frames of ``lp``."""
    state = ctc_prefix_init(lp)
    for tok in prefix:
        if state.log_prefix_prob == NEG_INF:
            return NEG_INF
        state, _ = ctc_prefix_extend(lp, state, state.tokens, tok)
    return state.log_prefix_prob


def ctc_greedy_collapse(lp: np.ndarray) -> list[int]:
    """Best-path decoding: per-frame argmax, merge repeats, drop blanks."""
    path = np.argmax(np.asarray(lp), axis=1)
    out, prev = [], None
    for tok in path:
        tok = int(tok)
        if tok != prev and tok != BLANK:
            out.append(tok)
        prev = tok
    return out


# --------------------------------------------------------------------------
# exhaustive oracles
# --------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _all_collapses(T: int, V: int):
    paths = np.array(list(itertools.product(range(V), repeat=T)), dtype=np.int64).reshape(-1, T)
    collapsed = np.full((paths.shape[0], T), -1, dtype=np.int64)
    lengths = np.zeros(paths.shape[0], dtype=np.int64)
    for i, path in enumerate(paths):
        prev, n = None, 0
        for tok in path:
            if tok != prev and tok != BLANK:
                collapsed[i, n] = tok
                n += 1
            prev = tok
        lengths[i] = n
    return paths, collapsed, lengths


def _brute_force(lp, prefix, exact: bool) -> float:
    lp = np.asarray(lp, dtype=np.float64)
    T, V = lp.shape
    if T > BRUTE_FORCE_MAX_FRAMES or V > BRUTE_FORCE_MAX_VOCAB:
        raise ValueError(
            f"enumeration bound exceeded: frames={T} (max {BRUTE_FORCE_MAX_FRAMES}), "
            f"vocab={V} (max {BRUTE_FORCE_MAX_VOCAB})"
        )
    prefix = list(prefix)
    if len(prefix) > T:
        return 0.0
    paths, collapsed, lengths = _all_collapses(T, V)
    probs = np.exp(lp[np.arange(T), paths].sum(axis=1))
    L = len(prefix)
    match = np.all(collapsed[:, :L] == np.asarray(prefix, dtype=np.int64), axis=1) if L else np.ones(len(paths), bool)
    match &= (lengths == L) if exact else (lengths >= L)
    return float(probs[match].sum())


def brute_force_prefix_prob(lp: np.ndarray, prefix) -> float:
    """Probability that the collapsed emission begins with ``prefix`` (enumeration)."""
    return _brute_force(lp, prefix, exact=False)


def brute_force_sequence_prob(lp: np.ndarray, target) -> float:
    """Probability that the collapsed emission equals ``target`` exactly (enumeration)."""
    return _brute_force(lp, target, exact=True)
