import json

import numpy as np
import pytest

from blockstream.cli import intent_accuracy, main
from blockstream.io import (
    ManifestEntry,
    chunk_stream,
    read_features,
    read_manifest,
    write_features,
    write_manifest,
)
from blockstream.latency import read_emission_log
from blockstream.model import RESERVED_TOKENS, Vocabulary, init_params, load_weights, save_vocab, save_weights

from conftest import tiny_config

WORDS = ["play", "stop", "la", "mu"]


@pytest.fixture
def workspace(tmp_path):
    rng = np.random.default_rng(5)
    vocab = Vocabulary(list(RESERVED_TOKENS) + WORDS)
    save_vocab(vocab, tmp_path / "vocab.txt")
    save_weights(init_params(tiny_config(), 3), tmp_path / "w.bin")
    for i, T in enumerate((100, 64)):
        write_features(rng.normal(size=(T, 8)), tmp_path / f"u{i}.feat")
    write_manifest(
        [
            ManifestEntry("u0", "u0.feat", ("la", "mu"), ("la", "mu"), "play"),
            ManifestEntry("u1", "u1.feat", ("mu",), ("la",), "stop"),
        ],
        tmp_path / "m.tsv",
    )
    return tmp_path


def _base(ws):
    return ["--vocab", str(ws / "vocab.txt"), "--weights", str(ws / "w.bin")]


def test_features_roundtrip(tmp_path, rng):
    x = rng.normal(size=(7, 3))
    write_features(x, tmp_path / "f")
    np.testing.assert_array_equal(read_features(tmp_path / "f"), x)


@pytest.mark.parametrize(
    "text, where",
    [("2 2\n1 2\n3\n", ":3:"), ("0 4\n", ":1:"), ("x y\n", ":1:"), ("1 2\n1 zz\n", ":2:"), ("", ":1:")],
)
def test_features_errors_name_the_line(tmp_path, text, where):
    p = tmp_path / "bad.feat"
    p.write_text(text)
    with pytest.raises(ValueError, match=where):
        read_features(p)


def test_chunk_stream():
    x = np.arange(100.0)[:, None]
    chunks = chunk_stream(x, 640, 10)
    assert [len(c) for c in chunks] == [64, 36]
    np.testing.assert_array_equal(np.concatenate(chunks), x)
    with pytest.raises(ValueError):
        chunk_stream(x, 15, 10)


def test_manifest_roundtrip(workspace):
    entries = read_manifest(workspace / "m.tsv")
    assert [e.utt_id for e in entries] == ["u0", "u1"]
    assert entries[0].features == workspace / "u0.feat"
    assert entries[1].intent == "stop" and entries[1].aux == ("la",)
    (workspace / "bad.tsv").write_text("a\tb\tc\n")
    with pytest.raises(ValueError, match=":1:"):
        read_manifest(workspace / "bad.tsv")


def test_intent_accuracy():
    assert intent_accuracy(["play a", "stop"], ["play b", "stop c"]) == 100.0
    assert intent_accuracy(["stop a", "play"], ["play a", "stop"]) == 0.0
    assert intent_accuracy(["a", "b", "c", ""], ["a", "b", "c", "d"]) == 75.0


def test_intent_eval_cli(tmp_path, capsys):
    (tmp_path / "h").write_text("a x\nb\nc\nz\n")
    (tmp_path / "r").write_text("a y\nb\nc\nd\n")
    assert main(["intent-eval", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r")]) == 0
    assert capsys.readouterr().out.strip() == "75.0"
    (tmp_path / "r").write_text("a\n")
    assert main(["intent-eval", "--hyp", str(tmp_path / "h"), "--ref", str(tmp_path / "r")]) == 1


def test_missing_vocab_is_reported(workspace, capsys):
    missing = workspace / "nope.txt"
    rc = main(["run-stream", "--vocab", str(missing), "--features", str(workspace / "u0.feat")])
    assert rc != 0
    assert str(missing) in capsys.readouterr().err


def test_run_stream_outputs(workspace, capsys):
    out = workspace / "o"
    for mu in ("0.0", "0.3"):
        rc = main(["run-stream", *_base(workspace), "--features", str(workspace / "u0.feat"),
                   "--block-size", "8", "--beam-size", "3", "--ctc-weight", mu, "--out-dir", str(out / mu)])
        assert rc == 0
        log = read_emission_log(out / mu / "emissions.tsv")
        assert log.source_total_ms == 1000.0
        assert log.events[-1].source_ms == 1000.0
        report = json.loads((out / mu / "report.json").read_text())
        assert report["wait_events"] == log.wait_events
        assert report["n_tokens"] == len(log)
        assert main(["eval-latency", "--log", str(out / mu / "emissions.tsv")]) == 0
        printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert printed["AL_ms"] == report["AL_ms"]


def test_run_stream_manifest(workspace):
    out = workspace / "o"
    assert main(["run-stream", *_base(workspace), "--manifest", str(workspace / "m.tsv"),
                 "--beam-size", "2", "--out-dir", str(out)]) == 0
    assert (out / "u0" / "emissions.tsv").exists() and (out / "u1" / "report.json").exists()
    assert len((out / "hypotheses.txt").read_text().splitlines()) == 2


def test_run_offline(workspace):
    assert main(["run-offline", *_base(workspace), "--features", str(workspace / "u1.feat"),
                 "--beam-size", "2", "--out-dir", str(workspace / "off")]) == 0
    assert (workspace / "off" / "hypothesis.txt").exists()


def _objective_rows(path):
    lines = path.read_text().splitlines()
    assert lines[0].split("\t") == ["utt_id", "L_ce", "L_ctc", "L_ctc_aux", "total", "flag"]
    return [line.split("\t") for line in lines[1:]]


def test_eval_objective_endpoints(workspace):
    out = workspace / "obj"
    assert main(["eval-objective", *_base(workspace), "--manifest", str(workspace / "m.tsv"),
                 "--task", "slu", "--lam", "0", "--out-dir", str(out / "slu")]) == 0
    rows = _objective_rows(out / "slu" / "objective.tsv")
    assert rows[-1][0] == "MEAN"
    for row in rows:
        assert float(row[4]) == pytest.approx(float(row[1]), abs=1e-9)
    assert main(["eval-objective", *_base(workspace), "--manifest", str(workspace / "m.tsv"),
                 "--task", "st", "--gamma", "1", "--out-dir", str(out / "st")]) == 0
    for row in _objective_rows(out / "st" / "objective.tsv"):
        assert float(row[4]) == pytest.approx(float(row[3]), abs=1e-9)


def test_eval_objective_empty_manifest(workspace, capsys):
    (workspace / "empty.tsv").write_text("")
    rc = main(["eval-objective", *_base(workspace), "--manifest", str(workspace / "empty.tsv")])
    assert rc != 0
    assert "empty" in capsys.readouterr().err


def test_weights_export_import(workspace):
    cfg = workspace / "c.json"
    cfg.write_text(json.dumps({"d-model": 16, "n_heads": 2, "ff_dim": 32, "enc_layers": 3, "dec_layers": 2,
                               "intermediate_layer": 2, "feature_dim": 8, "seed": 11}))
    out = workspace / "exp.bin"
    assert main(["export-weights", "--config", str(cfg), "--vocab", str(workspace / "vocab.txt"),
                 "--out", str(out)]) == 0
    assert load_weights(out).equals(init_params(tiny_config(), 11))
    assert main(["import-weights", "--weights", str(out), "--vocab", str(workspace / "vocab.txt"),
                 "--out-dir", str(workspace / "imp")]) == 0
    summary = json.loads((workspace / "imp" / "weights.json").read_text())
    assert summary["config"]["vocab_size"] == 7
    assert summary["n_tensors"] == len(init_params(tiny_config(), 11))


def test_bad_config_key(workspace, capsys):
    (workspace / "c.json").write_text('{"bogus": 1}')
    assert main(["run-stream", "--config", str(workspace / "c.json")]) == 1
    assert "bogus" in capsys.readouterr().err
