"""Multi-task objectives for spoken language understanding and speech translation.

Losses are forward-evaluated only. Conventions: the cross-entropy term is
averaged over target positions, CTC terms are per-utterance sums (negative
log-likelihoods).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ctc import ctc_head, ctc_loss
from .decoder import decoder_forward
from .encoder import encode_full, subsample
from .model import BLANK, EOS, SOS, ModelParams, Vocabulary


@dataclass(frozen=True)
class ObjectiveConfig:
    ctc_weight: float = 0.3  # lambda (SLU)
    st_ctc_weight: float = 0.3  # beta (ST: translation CTC vs CE)
    asr_ctc_weight: float = 0.3  # gamma (ST: auxiliary ASR CTC)
    label_smoothing: float = 0.1

    def __post_init__(self):
        for name in ("ctc_weight", "st_ctc_weight", "asr_ctc_weight"):
            w = getattr(self, name)
            if not 0.0 <= w <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {w}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")


@dataclass(frozen=True)
class SupervisionPair:
    """Token-id targets for one utterance.

    ``main`` drives the decoder (with a trailing eos appended) and the main CTC
    head; ``aux`` drives the intermediate-layer CTC head.
    """

    main: tuple[int, ...]
    aux: tuple[int, ...]

    def __post_init__(self):
        for name in ("main", "aux"):
            if any(t in (BLANK, SOS) for t in getattr(self, name)):
                raise ValueError(f"{name} target contains a reserved token")

    @property
    def decoder_target(self) -> tuple[int, ...]:
        return self.main + (EOS,)


def build_slu_target(intent: str, transcript, vocab: Vocabulary | None = None) -> list[str]:
    """Intent token first, then the transcript."""
    if vocab is not None and intent not in vocab:
        raise KeyError(f"intent {intent!r} not in vocabulary")
    return [intent, *transcript]


def slu_pair(vocab: Vocabulary, intent: str, transcript) -> SupervisionPair:
    target = build_slu_target(intent, transcript, vocab)
    return SupervisionPair(tuple(vocab.encode(target)), tuple(vocab.encode(transcript)))


def st_pair(vocab: Vocabulary, translation, source_transcript) -> SupervisionPair:
    return SupervisionPair(tuple(vocab.encode(translation)), tuple(vocab.encode(source_transcript)))


def cross_entropy_loss(params: ModelParams, encoded, target, smoothing: float = 0.1) -> float:
    """Label-smoothed teacher-forced cross-entropy, averaged over positions.

    The smoothed target puts ``1 - smoothing`` on the gold token and spreads
    ``smoothing`` uniformly over every token the decoder can emit (all but
    blank).
    """
    y = [int(t) for t in target]
    if not y or y[-1] != EOS:
        raise ValueError("target must end with eos")
    lp = decoder_forward(params, encoded, [SOS] + y[:-1])[0]
    gold = lp[np.arange(len(y)), y]
    nll = -gold.mean()
    if smoothing == 0.0:
        return float(nll)
    emit = np.delete(lp, BLANK, axis=1)
    uniform = -emit.mean(axis=1).mean()
    return float((1.0 - smoothing) * nll + smoothing * uniform)


def slu_loss(l_ctc: float, l_ctc_aux: float, l_ce: float, weight: float = 0.3) -> float:
    return weight * (l_ctc + l_ctc_aux) + (1.0 - weight) * l_ce


def st_loss(l_ce: float, l_ctc: float, l_ctc_aux: float, beta: float = 0.3, gamma: float = 0.3) -> float:
    return (1.0 - gamma) * ((1.0 - beta) * l_ce + beta * l_ctc) + gamma * l_ctc_aux


def term_weights(task: str, config: ObjectiveConfig) -> dict[str, float]:
    """Coefficient of each loss term in the task's combination."""
    if task == "slu":
        lam = config.ctc_weight
        return {"ce": 1.0 - lam, "ctc": lam, "ctc_aux": lam}
    if task == "st":
        b, g = config.st_ctc_weight, config.asr_ctc_weight
        return {"ce": (1.0 - g) * (1.0 - b), "ctc": (1.0 - g) * b, "ctc_aux": g}
    raise ValueError(f"unknown task {task!r}")


@dataclass(frozen=True)
class ObjectiveResult:
    total: float
    ce: float
    ctc: float
    ctc_aux: float
    weights: dict
    infeasible: bool

    def recombine(self) -> float:
        terms = {"ce": self.ce, "ctc": self.ctc, "ctc_aux": self.ctc_aux}
        return _combine(terms, self.weights)


def _combine(terms: dict, weights: dict) -> float:
    # a zero-weighted infinite term must not poison the total
    return float(sum(weights[k] * v for k, v in terms.items() if weights[k] != 0.0))


def evaluate_objective(
    params: ModelParams,
    features: np.ndarray,
    supervision: SupervisionPair,
    config: ObjectiveConfig = ObjectiveConfig(),
    task: str = "slu",
) -> ObjectiveResult:
    """Full-context forward pass and the task's weighted loss with its breakdown."""
    weights = term_weights(task, config)
    top, mid = encode_full(params, subsample(params, features))
    ce = cross_entropy_loss(params, top, supervision.decoder_target, config.label_smoothing)
    l_ctc = ctc_loss(ctc_head(params, top, "main"), supervision.main)
    l_aux = ctc_loss(ctc_head(params, mid, "aux"), supervision.aux)
    terms = {"ce": ce, "ctc": l_ctc, "ctc_aux": l_aux}
    total = _combine(terms, weights)
    infeasible = any(math.isinf(terms[k]) and weights[k] != 0.0 for k in terms)
    return ObjectiveResult(total, ce, l_ctc, l_aux, weights, infeasible)
