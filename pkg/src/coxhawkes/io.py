"""Plain-text artifacts: event CSVs, sample traces, field tables and JSON.

Every file carries a provenance line (``# config_hash=... seed=...``) and all
floats are written with 17 significant digits so they round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from .domain import EventError, EventSet, ModelKind
from .inference import PosteriorSamples
from .likelihood import TRIGGER_NAMES


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.17g}"


def provenance(config_hash: str, seed: int) -> str:
    return f"# config_hash={config_hash} seed={seed}"


def _write_rows(path, header: list[str], rows, config_hash: str, seed: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(provenance(config_hash, seed) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, int, np.floating, np.integer)) else v for v in row])


def _read_rows(path):
    """Yield ``(line_number, fields)`` of non-comment rows; the header comes first."""
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            yield lineno, next(csv.reader([s]))


def write_events(path, events: EventSet, config_hash: str, seed: int) -> None:
    header = ["t", "x", "y"] + (["gen"] if events.gen is not None else [])
    rows = []
    for i in range(events.n):
        row = [float(events.t[i]), float(events.x[i]), float(events.y[i])]
        if events.gen is not None:
            row.append(int(events.gen[i]))
        rows.append(row)
    _write_rows(path, header, rows, config_hash, seed)


def read_events(path) -> EventSet:
    """Parse an event CSV with header ``t,x,y`` and an optional ``gen`` column."""
    rows = _read_rows(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise EventError(f"{path}: no header line") from None
    header = [h.strip() for h in header]
    if header[:3] != ["t", "x", "y"] or header[3:] not in ([], ["gen"]):
        raise EventError(f"{path}: line {lineno}: expected header t,x,y[,gen], got {','.join(header)}")
    has_gen = len(header) == 4
    t, x, y, gen = [], [], [], []
    for lineno, fields in rows:
        if len(fields) != len(header):
            raise EventError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(fields)}")
        try:
            vals = [float(v) for v in fields[:3]]
            g = int(fields[3]) if has_gen else None
        except ValueError:
            raise EventError(f"{path}: line {lineno}: malformed row {','.join(fields)!r}") from None
        if not all(math.isfinite(v) for v in vals):
            raise EventError(f"{path}: line {lineno}: non-finite value")
        t.append(vals[0])
        x.append(vals[1])
        y.append(vals[2])
        gen.append(g)
    return EventSet(np.array(t), np.array(x), np.array(y), np.array(gen, dtype=np.int64) if has_gen else None)


def trace_header(kind: ModelKind, m_t: int, m_s: int) -> list[str]:
    kind = ModelKind(kind)
    cols = ["chain", "draw", "a0"]
    if kind.has_trigger:
        cols += list(TRIGGER_NAMES)
    cols += [f"z_t_{i}" for i in range(m_t)] + [f"z_s_{i}" for i in range(m_s)]
    return cols


def write_trace(path, samples: PosteriorSamples, config_hash: str, seed: int) -> None:
    """One row per retained draw, scalar parameters on the constrained scale."""
    n_trig = 4 if samples.kind.has_trigger else 0
    rows = []
    for c in range(samples.n_chains):
        for d in range(samples.n_draws):
            u = samples.draws[c, d]
            vals = [float(u[0])] + [math.exp(v) for v in u[1:1 + n_trig]] + u[1 + n_trig:].tolist()
            rows.append([c, d, *vals])
    _write_rows(path, trace_header(samples.kind, samples.m_t, samples.m_s), rows, config_hash, seed)


def read_trace(path, kind: ModelKind) -> PosteriorSamples:
    kind = ModelKind(kind)
    rows = _read_rows(path)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise EventError(f"{path}: empty trace") from None
    m_t = sum(h.startswith("z_t_") for h in header)
    m_s = sum(h.startswith("z_s_") for h in header)
    if header != trace_header(kind, m_t, m_s):
        raise EventError(f"{path}: line {lineno}: trace columns do not match model kind {kind.value}")
    n_trig = 4 if kind.has_trigger else 0
    by_chain: dict[int, list] = {}
    for lineno, fields in rows:
        if len(fields) != len(header):
            raise EventError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(fields)}")
        try:
            c = int(fields[0])
            vals = np.array([float(v) for v in fields[2:]])
        except ValueError:
            raise EventError(f"{path}: line {lineno}: malformed row") from None
        if np.any(vals[1:1 + n_trig] <= 0):
            raise EventError(f"{path}: line {lineno}: trigger parameters must be positive")
        vals[1:1 + n_trig] = np.log(vals[1:1 + n_trig])
        by_chain.setdefault(c, []).append(vals)
    if not by_chain:
        raise EventError(f"{path}: trace has no draws")
    lengths = {len(v) for v in by_chain.values()}
    if len(lengths) != 1:
        raise EventError(f"{path}: chains have unequal lengths")
    draws = np.stack([np.array(by_chain[c]) for c in sorted(by_chain)])
    names = ["a0"] + [f"log_{n}" for n in TRIGGER_NAMES][:n_trig] + header[3 + n_trig:]
    return PosteriorSamples(draws, names, kind, [], m_t, m_s)


def write_field(path, grid, summary: dict, config_hash: str, seed: int) -> None:
    """Per-cell posterior field summary: index, center coordinate(s), mean and quantiles."""
    centers = grid.points
    coord_cols = ["t"] if centers.shape[1] == 1 else ["x", "y"]
    qs = [q for q in summary if q != "mean"]
    header = ["cell", *coord_cols, "mean", *[f"q{q:g}" for q in qs]]
    rows = [[i, *centers[i].tolist(), summary["mean"][i], *[summary[q][i] for q in qs]] for i in range(len(centers))]
    _write_rows(path, header, rows, config_hash, seed)


def write_table(path, rows: list[list], config_hash: str, seed: int) -> None:
    _write_rows(path, rows[0], rows[1:], config_hash, seed)


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # json writes the shortest repr, which round-trips; it has no inf/nan
        return v if math.isfinite(v) else str(v)
    return obj


def write_json(path, payload: dict, config_hash: str, seed: int) -> None:
    data = {"config_hash": config_hash, "seed": seed, **payload}
    with open(path, "w") as fh:
        json.dump(_json_ready(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
