import numpy as np
import pytest

from blockstream.decoder import DecoderState, decoder_forward, decoder_step, sequence_logprob
from blockstream.encoder import EncodedBlocks
from blockstream.model import BLANK, EOS, SOS, logsumexp


@pytest.fixture
def memory(params, rng):
    return rng.normal(size=(10, params.config.d_model))


def test_step_normalised_and_never_blank(params, memory):
    lp = decoder_step(params, memory, [SOS, 3, 4])
    assert abs(logsumexp(lp)) < 1e-9
    assert lp[BLANK] == -np.inf


def test_step_deterministic(params, memory):
    a = decoder_step(params, memory, [SOS, 3])
    np.testing.assert_array_equal(a, decoder_step(params, memory, [SOS, 3]))


def test_cross_attention_reads_new_frames(params, memory, rng):
    b1 = EncodedBlocks(memory[:6], memory[:6], 1)
    b2 = b1.append(memory[6:], memory[6:])
    diff = np.abs(decoder_step(params, b1, [SOS, 4])[1:] - decoder_step(params, b2, [SOS, 4])[1:])
    assert diff.max() > 1e-6


def test_requires_sos_and_memory(params, memory):
    with pytest.raises(ValueError):
        decoder_step(params, memory, [3, 4])
    with pytest.raises(ValueError):
        decoder_step(params, np.zeros((0, params.config.d_model)), [SOS])


def test_sequence_logprob_shortest(params, memory):
    assert sequence_logprob(params, memory, [EOS]) == pytest.approx(decoder_step(params, memory, [SOS])[EOS], abs=1e-12)


def test_sequence_logprob_is_fold_of_steps(params, memory, rng):
    V = params.config.vocab_size
    for _ in range(10):
        y = list(rng.integers(2, V, size=rng.integers(0, 6))) + [EOS]
        fold = sum(decoder_step(params, memory, [SOS] + y[:j])[y[j]] for j in range(len(y)))
        total = sequence_logprob(params, memory, y)
        assert abs(total - fold) < 1e-9
        assert total <= 0


def test_sequence_logprob_needs_eos(params, memory):
    with pytest.raises(ValueError):
        sequence_logprob(params, memory, [3, 4])


def test_prefix_causality(params, memory):
    a = decoder_forward(params, memory, [SOS, 3, 4, 5])[0]
    b = decoder_forward(params, memory, [SOS, 3, 6, 2])[0]
    np.testing.assert_allclose(a[:2], b[:2], atol=1e-12)


def test_cache_transparency(params, memory):
    state = DecoderState()
    for tok in [3, 5, 5, 4]:
        cached = state.step(params, memory)
        plain = state.step(params, memory, use_cache=False)
        assert cached[BLANK] == plain[BLANK] == -np.inf
        assert np.abs(cached[1:] - plain[1:]).max() < 1e-9
        state.advance(tok)
    # growing the memory invalidates and rebuilds the cache
    bigger = np.vstack([memory, memory[:3]])
    np.testing.assert_allclose(state.step(params, bigger)[1:], decoder_step(params, bigger, state.prefix)[1:], atol=1e-9)
