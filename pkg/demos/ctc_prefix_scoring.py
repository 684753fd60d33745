"""
Incremental CTC prefix scoring
==============================

A prefix score is the probability that the collapsed CTC output *starts
with* a token sequence. The decoder extends it one token at a time; here we
check it against brute-force path enumeration on a tiny problem.
"""

import math

import numpy as np

from blockstream.ctc import (
    brute_force_prefix_prob,
    ctc_loss,
    ctc_prefix_extend,
    ctc_prefix_grow,
    ctc_prefix_init,
)

rng = np.random.default_rng(0)

# five frames over {blank, eos, a=2, b=3}
lp = np.log(rng.dirichlet(np.ones(4), size=5))

state = ctc_prefix_init(lp)
for tok in (2, 3, 2):
    state, cond = ctc_prefix_extend(lp, state, state.tokens, tok)
    exact = math.log(brute_force_prefix_prob(lp, state.tokens))
    print(f"prefix {state.tokens}: incremental {state.log_prefix_prob:+.6f}  enumerated {exact:+.6f}  step {cond:+.4f}")

# the same state also knows the probability that the output is exactly the prefix
print(f"log p_complete{state.tokens} = {state.log_complete_prob:+.6f}   -ctc_loss = {-ctc_loss(lp, state.tokens):+.6f}")

# streaming: start on the first two frames and grow as more arrive
state = ctc_prefix_init(lp[:2])
state, _ = ctc_prefix_extend(lp[:2], state, (), 2)
for t in range(3, len(lp) + 1):
    state = ctc_prefix_grow(lp[:t], state)
    print(f"after {state.frames_available} frames: log p_prefix(a) = {state.log_prefix_prob:+.6f}")
