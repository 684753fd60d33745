import math

import numpy as np
import pytest

from blockstream.ctc import ctc_head, ctc_loss
from blockstream.decoder import sequence_logprob
from blockstream.encoder import encode_full, subsample
from blockstream.model import EOS, init_params
from blockstream.search import (
    BlockwiseDecoder,
    DecodeConfig,
    Hypothesis,
    beam_search,
    decode_blockwise,
    decode_offline,
    is_unreliable,
    joint_score,
)

from conftest import tiny_config


def test_joint_score_examples():
    assert joint_score(-1.0, -2.0, 0.0) == -1.0
    assert joint_score(-1.0, -2.0, 1.0) == -2.0
    assert joint_score(-1.0, -2.0, 0.3) == pytest.approx(-1.3, abs=1e-12)


def test_decode_config_defaults():
    assert DecodeConfig().beam_size == 10
    assert DecodeConfig(task="st").mu == 0.3
    assert DecodeConfig(task="slu").mu == 0.5
    assert DecodeConfig(block_size=20).block_params == (20, 4, 4)
    assert DecodeConfig(beam_size=3).pre_beam_size == 6
    assert DecodeConfig().max_length(31) == 16 + 10
    with pytest.raises(ValueError):
        DecodeConfig(ctc_weight=1.2)


def test_reliability_rule():
    hyp = Hypothesis((3, 4), 0.0, 0.0, 0.0, None)
    assert is_unreliable(EOS, hyp, 2, 5)
    assert is_unreliable(4, hyp, 2, 5)
    assert not is_unreliable(3, hyp, 2, 5)
    assert is_unreliable(3, hyp, 2, 5, window=2)
    assert not is_unreliable(EOS, hyp, 5, 5)
    assert not is_unreliable(4, hyp, 5, 5)
    assert not is_unreliable(3, (), 1, 3)


def _stream(params, feats, cfg, chunk=16):
    chunks = [feats[i : i + chunk] for i in range(0, len(feats), chunk)]
    dec = BlockwiseDecoder(params, cfg, clock=lambda: 0.0)
    for i, c in enumerate(chunks):
        dec.push(c, is_final=i == len(chunks) - 1)
    return dec


@pytest.mark.parametrize("mu", [0.0, 0.3, 1.0])
def test_streaming_score_bookkeeping(params, rng, mu):
    feats = rng.normal(size=(90, params.config.feature_dim))
    cfg = DecodeConfig(beam_size=3, ctc_weight=mu, block_size=10)
    dec = _stream(params, feats, cfg)
    memory = dec.encoder.encoded.top
    lp = ctc_head(params, memory, "main")
    np.testing.assert_allclose(dec.lp, lp, atol=1e-12)
    for hyp in dec.ended:
        assert hyp.s_att == pytest.approx(sequence_logprob(params, memory, hyp.tokens), abs=1e-6)
        if mu > 0:
            assert hyp.s_ctc == pytest.approx(-ctc_loss(lp, hyp.output), abs=1e-6)
        assert hyp.score == pytest.approx(joint_score(hyp.s_att, hyp.s_ctc, mu), abs=1e-12)
        blocks = [c.block for c in hyp.commits]
        assert blocks == sorted(blocks)
        assert hyp.commits[-1].block == dec.n_blocks


def test_offline_score_bookkeeping(params, rng):
    feats = rng.normal(size=(60, params.config.feature_dim))
    top, _ = encode_full(params, subsample(params, feats))
    lp = ctc_head(params, top, "main")
    for hyp in beam_search(params, top, lp, DecodeConfig(beam_size=4, ctc_weight=0.5)):
        assert hyp.finished
        assert hyp.s_att == pytest.approx(sequence_logprob(params, top, hyp.tokens), abs=1e-6)
        assert hyp.s_ctc == pytest.approx(-ctc_loss(lp, hyp.output), abs=1e-6)


def test_wait_events_only_before_last_block(rng):
    for seed in range(4):
        p = init_params(tiny_config(), seed)
        feats = rng.normal(size=(120, p.config.feature_dim))
        dec = _stream(p, feats, DecodeConfig(beam_size=3, block_size=10))
        assert all(b < dec.n_blocks for b in dec.wait_blocks)
        assert dec.wait_events == len(dec.wait_blocks)


def test_emission_log_is_deterministic(params, rng):
    feats = rng.normal(size=(100, params.config.feature_dim))
    cfg = DecodeConfig(beam_size=3, block_size=10)
    chunks = [feats[i : i + 32] for i in range(0, 100, 32)]
    a = decode_blockwise(params, chunks, cfg, clock=lambda: 0.0)
    b = decode_blockwise(params, chunks, cfg, clock=lambda: 0.0)
    assert a == b
    toks, log = a
    assert [e.position for e in log.events] == list(range(1, len(toks) + 2))
    assert log.events[-1].token == str(EOS) and log.events[-1].source_ms == log.source_total_ms == 1000.0
    assert all(e.source_ms % 320 == 0 or e.source_ms == 1000.0 for e in log.events)


def test_empty_stream(params):
    with pytest.raises(ValueError):
        decode_blockwise(params, [], DecodeConfig())


def test_offline_default_runs(params, rng):
    feats = rng.normal(size=(48, params.config.feature_dim))
    out = decode_offline(params, feats, DecodeConfig(beam_size=2))
    assert all(t not in (0, EOS) for t in out)
    assert len(out) <= DecodeConfig().max_length(12)
