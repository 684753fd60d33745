"""
Blockwise streaming decoding with latency
=========================================

Feature chunks of 640 ms arrive one at a time. The joint CTC/attention
beam search commits tokens after every block, waits when the best
expansion looks premature, and logs when each token was emitted.
"""

import numpy as np

from blockstream.io import chunk_stream
from blockstream.latency import latency_report
from blockstream.model import ModelConfig, init_params
from blockstream.search import BlockwiseDecoder, DecodeConfig, decode_blockwise, decode_offline

config = ModelConfig(d_model=16, n_heads=2, ff_dim=32, enc_layers=3, dec_layers=2,
                     intermediate_layer=2, feature_dim=8, vocab_size=9)
params = init_params(config, seed=3)
features = np.random.default_rng(3).normal(size=(300, 8))  # 3 s of audio

cfg = DecodeConfig(beam_size=4, block_size=10, ctc_weight=0.3)
chunks = chunk_stream(features, chunk_ms=640, frame_ms=config.frame_ms)

# a simulated clock keeps the log reproducible: wall time = audio received so far
now = [0.0]
dec = BlockwiseDecoder(params, cfg, clock=lambda: now[0])
for i, chunk in enumerate(chunks):
    now[0] += float(len(chunk) * config.frame_ms)
    dec.push(chunk, is_final=i == len(chunks) - 1)
log = dec.emission_log()

for ev in log.events:
    print(f"token {ev.token:>2}  committed after block {ev.block:2d} at {ev.source_ms:6.0f} ms of audio")
print("wait events before blocks:", dec.wait_blocks)
print(latency_report(log).as_dict())

# the streaming result next to a full-context decode of the same audio
print("streaming:", dec.best.output)
print("offline:  ", decode_offline(params, features, cfg))

# decode_blockwise wraps the loop above
tokens, _ = decode_blockwise(params, chunks, cfg, clock=lambda: 0.0)
assert tokens == dec.best.output
