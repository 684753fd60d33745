"""Feature files, chunk simulation and supervision manifests."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def read_features(path) -> np.ndarray:
    """Read a ``T D`` header followed by ``T`` rows of ``D`` floats."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}:1: empty feature file")
    head = lines[0].split()
    try:
        T, D = (int(v) for v in head)
    except ValueError:
        raise ValueError(f"{path}:1: header must be 'T D', got {lines[0]!r}") from None
    if T < 1 or D < 1:
        raise ValueError(f"{path}:1: need T >= 1 and D >= 1, got T={T} D={D}")
    rows = lines[1:]
    while rows and not rows[-1].strip():
        rows.pop()
    if len(rows) != T:
        raise ValueError(f"{path}: header declares {T} rows, found {len(rows)}")
    out = np.empty((T, D))
    for i, line in enumerate(rows, start=2):
        vals = line.split()
        if len(vals) != D:
            raise ValueError(f"{path}:{i}: expected {D} values, got {len(vals)}")
        try:
            out[i - 2] = [float(v) for v in vals]
        except ValueError as exc:
            raise ValueError(f"{path}:{i}: {exc}") from None
    return out


def write_features(features: np.ndarray, path) -> None:
    features = np.asarray(features, dtype=np.float64)
    T, D = features.shape
    lines = [f"{T} {D}"] + [" ".join(repr(float(v)) for v in row) for row in features]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def chunk_stream(features: np.ndarray, chunk_ms: float, frame_ms: float) -> list[np.ndarray]:
    """Split into consecutive ``chunk_ms`` slices; the last one may be shorter."""
    step = chunk_ms / frame_ms
    if step < 1 or step != int(step):
        raise ValueError(f"chunk_ms={chunk_ms} is not a positive multiple of frame_ms={frame_ms}")
    step = int(step)
    return [features[i : i + step] for i in range(0, len(features), step)]


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    features: Path
    main: tuple[str, ...]
    aux: tuple[str, ...]
    intent: str | None = None


def read_manifest(path) -> list[ManifestEntry]:
    """TSV: utt-id, feature path, main target, aux target[, intent].

    Relative feature paths resolve against the manifest's directory.
    """
    path = Path(path)
    entries = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) not in (4, 5):
            raise ValueError(f"{path}:{lineno}: expected 4 or 5 tab-separated columns, got {len(cols)}")
        feat = Path(cols[1])
        if not feat.is_absolute():
            feat = path.parent / feat
        intent = cols[4].strip() if len(cols) == 5 and cols[4].strip() else None
        entries.append(ManifestEntry(cols[0], feat, tuple(cols[2].split()), tuple(cols[3].split()), intent))
    return entries


def write_manifest(entries, path) -> None:
    lines = []
    for e in entries:
        cols = [e.utt_id, str(e.features), " ".join(e.main), " ".join(e.aux)]
        if e.intent is not None:
            cols.append(e.intent)
        lines.append("\t".join(cols))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
