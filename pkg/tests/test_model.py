import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockstream.model import (
    ModelConfig,
    Vocabulary,
    init_params,
    load_vocab,
    load_weights,
    log_softmax,
    logsumexp,
    param_specs,
    save_weights,
)

from conftest import tiny_config


def test_logsumexp_examples():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert logsumexp([-np.inf, 3.5]) == 3.5
    assert logsumexp([-1000.0, -1000.0]) == pytest.approx(-1000.0 + math.log(2), abs=1e-12)
    assert logsumexp([-np.inf, -np.inf]) == -np.inf


def test_logsumexp_empty():
    with pytest.raises(ValueError):
        logsumexp([])


def test_log_softmax_examples():
    np.testing.assert_allclose(log_softmax([0.0, 0.0]), [-math.log(2)] * 2, atol=1e-15)
    np.testing.assert_allclose(log_softmax([1.0, 1.0, 1.0]), [-math.log(3)] * 3, atol=1e-15)
    z = math.log1p(math.exp(-5))
    np.testing.assert_allclose(log_softmax([5.0, 0.0]), [-z, -5.0 - z], atol=1e-15)


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40))
def test_log_softmax_normalises(values):
    assert abs(logsumexp(log_softmax(values))) < 1e-9


def test_config_invariants():
    with pytest.raises(ValueError):
        ModelConfig(d_model=10, n_heads=3)
    with pytest.raises(ValueError):
        ModelConfig(enc_layers=4, intermediate_layer=5)
    with pytest.raises(ValueError):
        ModelConfig(intermediate_layer=0)
    cfg = ModelConfig()
    assert (cfg.enc_layers, cfg.dec_layers, cfg.intermediate_layer, cfg.feature_dim) == (12, 6, 8, 80)


def test_init_deterministic_and_seed_sensitive(config):
    a, b, c = init_params(config, 7), init_params(config, 7), init_params(config, 8)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(not np.array_equal(a[k], c[k]) for k in a)


def test_init_scheme(config):
    p = init_params(config, 3)
    bound = 1 / math.sqrt(config.d_model)
    for name in p:
        if name.endswith(".g"):
            assert np.all(p[name] == 1.0)
        elif name.rsplit(".", 1)[-1].startswith("b"):
            assert np.all(p[name] == 0.0)
        else:
            assert np.abs(p[name]).max() <= bound
            assert np.all(p[name].astype(np.float32) == p[name])


@pytest.mark.parametrize("overrides", [{}, {"enc_layers": 5, "intermediate_layer": 5}, {"vocab_size": 11, "ff_dim": 7}])
def test_shape_audit(overrides):
    cfg = tiny_config(**overrides)
    p = init_params(cfg, 0)
    d, V = cfg.d_model, cfg.vocab_size
    for name, shape in param_specs(cfg):
        assert p[name].shape == shape
        if name.startswith(("ctc.", "dec.out")):
            assert V in shape
        if name.endswith((".wq", ".wk", ".wv", ".wo")):
            assert shape == (d, d)
    n_enc = sum(1 for n in p if n.startswith("enc.") and n.endswith(".attn.wq"))
    assert n_enc == cfg.enc_layers


def test_params_read_only(params):
    with pytest.raises(ValueError):
        params["ctc.main.w"][0, 0] = 1.0


def test_weight_roundtrip(tmp_path, params):
    path = tmp_path / "w.bin"
    save_weights(params, path)
    assert path.read_bytes()[:5] == b"BSTW1"
    loaded = load_weights(path)
    assert loaded.config == params.config
    assert loaded.equals(params)


def test_weight_file_rejects_garbage(tmp_path, params):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + b"\0" * 64)
    with pytest.raises(ValueError):
        load_weights(bad)
    save_weights(params, bad)
    bad.write_bytes(bad.read_bytes()[:-4])
    with pytest.raises(ValueError, match="truncated"):
        load_weights(bad)


def test_load_vocab(tmp_path):
    f = tmp_path / "vocab.txt"
    f.write_text("<blank>\n<sos/eos>\n<unk>\na\nb\n", encoding="utf-8")
    v = load_vocab(f)
    assert len(v) == 5 and v.index("a") == 3
    f.write_text("<blank>\n<sos/eos>\n<unk>\na\na\n", encoding="utf-8")
    with pytest.raises(ValueError, match="duplicate"):
        load_vocab(f)
    f.write_text("", encoding="utf-8")
    with pytest.raises(ValueError):
        load_vocab(f)


def test_vocab_encode_decode():
    v = Vocabulary(["<blank>", "<sos/eos>", "<unk>", "x", "y"])
    assert v.encode(["y", "x"]) == [4, 3]
    assert v.encode(["zz"], unk_ok=True) == [2]
    assert v.decode([3, 4]) == ["x", "y"]
    with pytest.raises(KeyError):
        v.index("zz")
