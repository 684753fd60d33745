"""
Contextual block processing
===========================

The encoder sees overlapping windows: some history, a central part it
emits, and a little look-ahead. Each layer hands a context vector to the
same layer of the next block.
"""

import numpy as np

from blockstream.encoder import block_params_for, encode_blockwise, encode_full, make_block_schedule, subsample
from blockstream.model import ModelConfig, init_params

N_b, N_h, N_r = block_params_for(10)
print(f"block size {N_b}, hop {N_h}, look-ahead {N_r}")

schedule = make_block_schedule(12, N_b, N_h, N_r)
for i, w in enumerate(schedule):
    print(f"block {i}: window [{w.start:2d},{w.end:2d})  emits [{w.central_start:2d},{w.central_end:2d})")

config = ModelConfig(d_model=16, n_heads=2, ff_dim=32, enc_layers=3, dec_layers=2,
                     intermediate_layer=2, feature_dim=8, vocab_size=7)
params = init_params(config, seed=1)
frames = subsample(params, np.random.default_rng(1).normal(size=(48, 8)))

# blockwise output approximates full-context encoding; one big block reproduces it
blocks = encode_blockwise(params, frames, schedule)
full, _ = encode_full(params, frames)
print("max |blockwise - full| =", np.abs(blocks.top - full).max())

one = encode_blockwise(params, frames, make_block_schedule(12, 12, 12, 0))
print("single block, max |diff| =", np.abs(one.top - full).max())
