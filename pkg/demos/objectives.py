"""
Multi-task objectives
=====================

Spoken language understanding puts the intent in front of the transcript;
speech translation mixes translation CE, translation CTC and an auxiliary
ASR CTC on an intermediate encoder layer.
"""

import numpy as np

from blockstream.model import RESERVED_TOKENS, ModelConfig, Vocabulary, init_params
from blockstream.objectives import ObjectiveConfig, evaluate_objective, slu_loss, slu_pair, st_loss, st_pair

# the weighting formulas on their own
print("SLU, lambda=0.3:", slu_loss(l_ctc=2.0, l_ctc_aux=1.0, l_ce=4.0))
print("ST, beta=gamma=0.3:", st_loss(l_ce=4.0, l_ctc=2.0, l_ctc_aux=1.0))

vocab = Vocabulary(list(RESERVED_TOKENS) + ["<play>", "<stop>", "la", "mu", "sol"])
config = ModelConfig(d_model=16, n_heads=2, ff_dim=32, enc_layers=3, dec_layers=2,
                     intermediate_layer=2, feature_dim=8, vocab_size=len(vocab))
params = init_params(config, seed=0)
features = np.random.default_rng(0).normal(size=(80, 8))

pair = slu_pair(vocab, "<play>", ["la", "mu"])
print("SLU decoder target:", vocab.decode(pair.decoder_target))
res = evaluate_objective(params, features, pair, ObjectiveConfig(), task="slu")
print(f"SLU total {res.total:.3f} = f(ce {res.ce:.3f}, ctc {res.ctc:.3f}, aux {res.ctc_aux:.3f})")

pair = st_pair(vocab, ["sol", "la"], ["la", "mu", "mu"])
for gamma in (0.0, 0.3, 1.0):
    res = evaluate_objective(params, features, pair, ObjectiveConfig(asr_ctc_weight=gamma), task="st")
    print(f"ST gamma={gamma}: total {res.total:.3f}")
