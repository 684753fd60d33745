"""Command-line harness: simulated-chunk streaming runs, objectives, latency and intent scoring.

Every option can also come from a JSON file given with ``--config`` (keys are
option names with ``-`` or ``_``); explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .io import atomic_write_text, chunk_stream, read_features, read_manifest
from .latency import latency_report, read_emission_log, write_emission_log
from .model import ModelConfig, init_params, load_vocab, load_weights, save_weights
from .objectives import ObjectiveConfig, SupervisionPair, build_slu_target, evaluate_objective
from .search import BlockwiseDecoder, DecodeConfig, decode_offline


class HarnessError(Exception):
    pass


@dataclass
class RunConfig:
    features: str | None = None
    manifest: str | None = None
    vocab: str | None = None
    weights: str | None = None
    out_dir: str = "out"
    chunk_ms: int = 640
    seed: int = 0
    clock: str = "monotonic"
    # model (ignored when --weights is given)
    d_model: int = 64
    n_heads: int = 4
    ff_dim: int = 256
    enc_layers: int = 12
    dec_layers: int = 6
    intermediate_layer: int = 8
    feature_dim: int = 80
    frame_ms: int = 10
    # decoding
    task: str = "st"
    beam_size: int = 10
    ctc_weight: float | None = None
    block_size: int = 40
    hop: int | None = None
    look_ahead: int | None = None
    pre_beam: int | None = None
    maxlen_ratio: float = 0.5
    maxlen_offset: int = 10
    # objectives
    lam: float = 0.3
    beta: float = 0.3
    gamma: float = 0.3
    label_smoothing: float = 0.1

    def decode_config(self) -> DecodeConfig:
        return DecodeConfig(
            beam_size=self.beam_size, ctc_weight=self.ctc_weight, task=self.task,
            block_size=self.block_size, hop=self.hop, look_ahead=self.look_ahead,
            pre_beam=self.pre_beam, maxlen_ratio=self.maxlen_ratio, maxlen_offset=self.maxlen_offset,
        )

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(self.lam, self.beta, self.gamma, self.label_smoothing)


_FIELD_TYPES = {
    "int": int, "float": float, "str": str,
    "int | None": int, "float | None": float, "str | None": str,
}


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON file with option values")
    for f in fields(RunConfig):
        parser.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=_FIELD_TYPES[f.type], default=None)


def _run_config(args) -> RunConfig:
    values = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise HarnessError(f"config file not found: {path}")
        raw = json.loads(path.read_text(encoding="utf-8"))
        known = {f.name for f in fields(RunConfig)}
        for key, value in raw.items():
            name = key.replace("-", "_")
            if name not in known:
                raise HarnessError(f"unknown config key {key!r} in {path}")
            values[name] = value
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = RunConfig(**values)
    if cfg.chunk_ms <= 0 or cfg.chunk_ms % cfg.frame_ms:
        raise HarnessError(f"chunk_ms={cfg.chunk_ms} must be a positive multiple of frame_ms={cfg.frame_ms}")
    if cfg.clock not in ("monotonic", "simulated"):
        raise HarnessError("clock must be 'monotonic' or 'simulated'")
    return cfg


def _require(path: str | None, what: str) -> Path:
    if not path:
        raise HarnessError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise HarnessError(f"{what} file not found: {p}")
    return p


def _load_model(cfg: RunConfig):
    vocab = load_vocab(_require(cfg.vocab, "vocab"))
    if cfg.weights:
        params = load_weights(_require(cfg.weights, "weights"))
        if params.config.vocab_size != len(vocab):
            raise HarnessError(
                f"weights expect {params.config.vocab_size} tokens, vocabulary has {len(vocab)}"
            )
    else:
        mc = ModelConfig(
            cfg.d_model, cfg.n_heads, cfg.ff_dim, cfg.enc_layers, cfg.dec_layers,
            cfg.intermediate_layer, cfg.feature_dim, 4, len(vocab), cfg.frame_ms,
        )
        params = init_params(mc, cfg.seed)
    return params, vocab


def _check_features(features: np.ndarray, params, path) -> None:
    if features.shape[1] != params.config.feature_dim:
        raise HarnessError(f"{path}: feature dim {features.shape[1]} != model feature_dim {params.config.feature_dim}")


class SimulatedClock:
    """Wall time pinned to simulated source time; computation takes no time."""

    def __init__(self):
        self.now = 0.0

    def __call__(self) -> float:
        return self.now


def _stream_one(params, vocab, features, cfg: RunConfig):
    clock = SimulatedClock() if cfg.clock == "simulated" else None
    dec = BlockwiseDecoder(params, cfg.decode_config(), clock, token_str=lambda t: vocab.tokens[t])
    chunks = chunk_stream(features, cfg.chunk_ms, params.config.frame_ms)
    for i, chunk in enumerate(chunks):
        if clock is not None:
            clock.now = dec.source_ms + len(chunk) * params.config.frame_ms
        dec.push(chunk, is_final=i == len(chunks) - 1)
    log = dec.emission_log()
    report = latency_report(log).as_dict()
    hyp = " ".join(vocab.decode(dec.best.output))
    report.update(hypothesis=hyp, score=dec.best.score, s_att=dec.best.s_att, s_ctc=dec.best.s_ctc,
                  wait_blocks=dec.wait_blocks, n_blocks=dec.n_blocks)
    return log, report, hyp


def _write_outputs(out: Path, log, report, hyp) -> None:
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / ".emissions.tsv.tmp"
    write_emission_log(log, tmp)
    tmp.replace(out / "emissions.tsv")
    atomic_write_text(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out / "hypothesis.txt", hyp + "\n")


def cmd_run_stream(cfg: RunConfig) -> int:
    params, vocab = _load_model(cfg)
    out = Path(cfg.out_dir)
    if cfg.manifest:
        entries = read_manifest(_require(cfg.manifest, "manifest"))
        if not entries:
            raise HarnessError("manifest is empty")
        hyps = []
        for e in entries:
            feats = read_features(e.features)
            _check_features(feats, params, e.features)
            log, report, hyp = _stream_one(params, vocab, feats, cfg)
            _write_outputs(out / e.utt_id, log, report, hyp)
            hyps.append(hyp)
            print(f"{e.utt_id}\tAL={report['AL_ms']:.1f}ms\tEP={report['EP_ms']:.1f}ms\t{hyp}")
        atomic_write_text(out / "hypotheses.txt", "".join(h + "\n" for h in hyps))
        return 0
    path = _require(cfg.features, "features")
    feats = read_features(path)
    _check_features(feats, params, path)
    log, report, hyp = _stream_one(params, vocab, feats, cfg)
    _write_outputs(out, log, report, hyp)
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_run_offline(cfg: RunConfig) -> int:
    params, vocab = _load_model(cfg)
    path = _require(cfg.features, "features")
    feats = read_features(path)
    _check_features(feats, params, path)
    hyp = " ".join(vocab.decode(decode_offline(params, feats, cfg.decode_config())))
    atomic_write_text(Path(cfg.out_dir) / "hypothesis.txt", hyp + "\n")
    print(hyp)
    return 0


def _supervision(entry, vocab, task: str) -> SupervisionPair:
    main = list(entry.main)
    if task == "slu":
        if entry.intent is None:
            raise HarnessError(f"{entry.utt_id}: SLU manifest rows need an intent column")
        main = build_slu_target(entry.intent, main, vocab)
    return SupervisionPair(tuple(vocab.encode(main, unk_ok=True)), tuple(vocab.encode(entry.aux, unk_ok=True)))


def cmd_eval_objective(cfg: RunConfig) -> int:
    params, vocab = _load_model(cfg)
    entries = read_manifest(_require(cfg.manifest, "manifest"))
    if not entries:
        raise HarnessError("manifest is empty")
    ocfg = cfg.objective_config()
    rows = ["utt_id\tL_ce\tL_ctc\tL_ctc_aux\ttotal\tflag"]
    totals = {"ce": [], "ctc": [], "ctc_aux": [], "total": []}
    for e in entries:
        feats = read_features(e.features)
        _check_features(feats, params, e.features)
        res = evaluate_objective(params, feats, _supervision(e, vocab, cfg.task), ocfg, cfg.task)
        flag = "infeasible" if res.infeasible else "ok"
        rows.append(f"{e.utt_id}\t{res.ce!r}\t{res.ctc!r}\t{res.ctc_aux!r}\t{res.total!r}\t{flag}")
        for key, value in (("ce", res.ce), ("ctc", res.ctc), ("ctc_aux", res.ctc_aux), ("total", res.total)):
            totals[key].append(value)
    mean = {k: float(np.mean(v)) for k, v in totals.items()}
    rows.append(f"MEAN\t{mean['ce']!r}\t{mean['ctc']!r}\t{mean['ctc_aux']!r}\t{mean['total']!r}\t-")
    text = "\n".join(rows) + "\n"
    atomic_write_text(Path(cfg.out_dir) / "objective.tsv", text)
    sys.stdout.write(text)
    return 0


def cmd_eval_latency(args) -> int:
    log = read_emission_log(_require(args.log, "log"))
    print(json.dumps(latency_report(log).as_dict(), sort_keys=True))
    return 0


def intent_accuracy(hyp_lines, ref_lines) -> float:
    if len(hyp_lines) != len(ref_lines):
        raise HarnessError(f"line count mismatch: {len(hyp_lines)} hypotheses vs {len(ref_lines)} references")
    if not hyp_lines:
        raise HarnessError("no lines to score")

    def first(line):
        toks = line.split()
        return toks[0] if toks else None

    hits = sum(first(h) == first(r) for h, r in zip(hyp_lines, ref_lines))
    return 100.0 * hits / len(hyp_lines)


def cmd_intent_eval(args) -> int:
    hyp = _require(args.hyp, "hyp").read_text(encoding="utf-8").splitlines()
    ref = _require(args.ref, "ref").read_text(encoding="utf-8").splitlines()
    print(f"{intent_accuracy(hyp, ref):.1f}")
    return 0


def cmd_export_weights(cfg: RunConfig, out: str) -> int:
    params, _ = _load_model(cfg)
    save_weights(params, out)
    print(f"wrote {out} ({len(params)} tensors)")
    return 0


def cmd_import_weights(cfg: RunConfig) -> int:
    path = _require(cfg.weights, "weights")
    params = load_weights(path)
    summary = {
        "config": {f.name: getattr(params.config, f.name) for f in fields(ModelConfig)},
        "n_tensors": len(params),
        "n_values": int(sum(v.size for v in params.values())),
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
    }
    if cfg.vocab:
        vocab = load_vocab(_require(cfg.vocab, "vocab"))
        if len(vocab) != params.config.vocab_size:
            raise HarnessError(f"vocabulary has {len(vocab)} tokens, weights expect {params.config.vocab_size}")
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    atomic_write_text(Path(cfg.out_dir) / "weights.json", text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockstream", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run-stream", "run-offline", "eval-objective", "import-weights"):
        _add_run_options(sub.add_parser(name))
    p = sub.add_parser("export-weights")
    _add_run_options(p)
    p.add_argument("--out", required=True, help="weight file to write")
    p = sub.add_parser("eval-latency")
    p.add_argument("--log", required=True)
    p = sub.add_parser("intent-eval")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "eval-latency":
            return cmd_eval_latency(args)
        if args.command == "intent-eval":
            return cmd_intent_eval(args)
        cfg = _run_config(args)
        if args.command == "run-stream":
            return cmd_run_stream(cfg)
        if args.command == "run-offline":
            return cmd_run_offline(cfg)
        if args.command == "eval-objective":
            return cmd_eval_objective(cfg)
        if args.command == "export-weights":
            return cmd_export_weights(cfg, args.out)
        if args.command == "import-weights":
            return cmd_import_weights(cfg)
    except (HarnessError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
