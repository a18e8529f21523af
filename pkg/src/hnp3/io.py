"""Event logs (JSON lines), model snapshots (JSON) and CSV reports."""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import BranchingRecord, Event
from .likelihood import RateEstimates

SNAPSHOT_VERSION = 1


class FormatError(ValueError):
    pass


def load_events(path: str | os.PathLike, jitter: float = 1e-9) -> list[Event]:
    """Parse one ``{"t": float, "u": int, "w": [int, ...]}`` object per line.

    Equal timestamps are separated by ``jitter`` in input order; a timestamp
    that goes backwards by more than that is an error.
    """
    events: list[Event] = []
    last = -math.inf
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                t, u, w = float(obj["t"]), int(obj["u"]), obj.get("w", [])
                if not isinstance(w, list):
                    raise TypeError("'w' must be a list")
                e_doc = tuple(int(x) for x in w)
            except (ValueError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed event: {exc}") from None
            if t <= last:
                if last - t > jitter:
                    raise FormatError(f"{path}:{lineno}: time {t} precedes {last}")
                t = last + jitter
            try:
                events.append(Event(t, u, e_doc))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            last = t
    return events


def dump_event(e: Event) -> str:
    return json.dumps({"t": e.time, "u": e.user, "w": list(e.doc)})


def save_events(events: Iterable[Event], path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for e in events:
            fh.write(dump_event(e) + "\n")


def load_vocab(path: str | os.PathLike) -> list[str]:
    """Sidecar vocabulary: one token string per line, line i is token id i."""
    with open(path) as fh:
        return [line.rstrip("\n") for line in fh]


def _records_block(records: Sequence[BranchingRecord]) -> dict:
    return {
        "trigger": [r.trigger for r in records],
        "topic": [r.topic for r in records],
        "new_table": [r.new_table for r in records],
        "table": [r.table for r in records],
    }


def records_from_block(block: dict) -> list[BranchingRecord]:
    cols = [block[k] for k in ("trigger", "topic", "new_table", "table")]
    if len({len(c) for c in cols}) > 1:
        raise FormatError("record columns have different lengths")
    return [BranchingRecord(i, int(s), int(z), bool(l), int(j)) for i, (s, z, l, j) in enumerate(zip(*cols))]


def truth_snapshot(truth, n_events: int | None = None) -> dict:
    """Snapshot document for a simulator ground truth."""
    return {
        "format": "hnp3-snapshot",
        "version": SNAPSHOT_VERSION,
        "kind": "truth",
        "n_users": int(len(truth.mu)),
        "vocab_size": int(truth.phi.shape[1]) if truth.phi.ndim == 2 else 0,
        "n_events": len(truth.records) if n_events is None else n_events,
        "mu": truth.mu.tolist(),
        "alpha": truth.alpha.tolist(),
        "beta": truth.beta.tolist(),
        "phi": truth.phi.tolist(),
        "records": _records_block(truth.records),
    }


def estimate_snapshot(pf) -> dict:
    """Snapshot document for the highest-weight particle of a filter."""
    from dataclasses import asdict

    p = pf.map_particle()
    K = p.K
    rates = p.rate_estimates(pf.t_last)
    return {
        "format": "hnp3-snapshot",
        "version": SNAPSHOT_VERSION,
        "kind": "estimate",
        "n_users": pf.hyper.n_users,
        "vocab_size": pf.hyper.vocab_size,
        "n_events": p.n,
        "t_now": pf.t_last,
        "mu": rates.mu_hat.tolist(),
        "alpha": rates.alpha_hat.tolist(),
        "beta": (p.beta_estimates() if K else np.zeros(0)).tolist(),
        "word_counts": p.word_counts[:K].astype(np.int64).tolist(),
        "beta_samples": p.beta_samples[:K].tolist(),
        # draws ruled out by the data carry weight zero; JSON has no -inf
        "beta_log_weights": [[x if math.isfinite(x) else None for x in row] for row in p.beta_logw[:K].tolist()],
        "records": _records_block(p.records),
        "hyper": asdict(pf.hyper),
        "inference": asdict(pf.config),
    }


def save_snapshot(snapshot: dict, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_snapshot(snapshot))


def dumps_snapshot(snapshot: dict) -> str:
    return json.dumps(snapshot, sort_keys=True, indent=1, allow_nan=False) + "\n"


def load_snapshot(path: str | os.PathLike) -> dict:
    with open(path) as fh:
        try:
            snap = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: not JSON: {exc}") from None
    if snap.get("format") != "hnp3-snapshot":
        raise FormatError(f"{path}: not a model snapshot")
    if snap.get("version") != SNAPSHOT_VERSION:
        raise FormatError(f"{path}: unsupported snapshot version {snap.get('version')}")
    return snap


def export_truth(truth, path: str | os.PathLike) -> None:
    save_snapshot(truth_snapshot(truth), path)


def snapshot_rates(snap: dict) -> RateEstimates:
    return RateEstimates(np.asarray(snap["mu"], float), np.asarray(snap["alpha"], float))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def topic_intensity(events: Sequence[Event], records: Sequence[BranchingRecord],
                    rates: RateEstimates, betas: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Per-topic excitation summed over all target users, on a time grid.

    Entry [g, k] is the sum over past events s of topic k of
    sum_u alpha[u_s, u] exp(-beta_k (grid[g] - t_s)).
    """
    K = len(betas)
    out = np.zeros((len(grid), K))
    if not events or not K:
        return out
    times = np.array([e.time for e in events])
    reach = rates.alpha_hat.sum(axis=1)[[e.user for e in events]]
    topics = np.array([r.topic for r in records])
    for k in range(K):
        sel = topics == k
        tk, ak = times[sel], reach[sel]
        lag = grid[:, None] - tk[None, :]
        with np.errstate(over="ignore"):
            contrib = np.where(lag > 0, ak * np.exp(-betas[k] * np.maximum(lag, 0.0)), 0.0)
        out[:, k] = contrib.sum(axis=1)
    return out


def export_reports(summary, events: Sequence[Event], metrics: Sequence[dict], out_dir: str | os.PathLike,
                   grid_points: int = 200, vocab: Sequence[str] | None = None) -> list[Path]:
    """Write topic_intensity, top_words, cascades, metrics and betas CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    K = summary.n_topics if summary is not None else 0
    paths = []

    p = out / "topic_intensity.csv"
    if events and K:
        grid = np.linspace(0.0, events[-1].time, grid_points)
        vals = topic_intensity(events, summary.records, summary.rates, summary.betas, grid)
        rows = [[float(g)] + [float(v) for v in row] for g, row in zip(grid, vals)]
    else:
        rows = []
    _write_csv(p, ["time"] + [f"topic_{k}" for k in range(K)], rows)
    paths.append(p)

    p = out / "top_words.csv"
    rows = []
    for k in range(K):
        words = summary.top_words[k]
        counts = [c for _, c in words]
        assert all(a >= b for a, b in zip(counts, counts[1:])), "top words out of order"
        for rank, (w, c) in enumerate(words):
            rows.append([k, rank, vocab[w] if vocab else w, c])
    _write_csv(p, ["topic", "rank", "token", "count"], rows)
    paths.append(p)

    p = out / "cascades.csv"
    rows = []
    if summary is not None:
        for r, root, e in zip(summary.records, summary.roots, events):
            rows.append([r.index, "" if r.exogenous else r.trigger, r.topic, e.user, int(root)])
    _write_csv(p, ["event", "trigger", "topic", "user", "cascade"], rows)
    paths.append(p)

    p = out / "metrics.csv"
    keys: list[str] = []
    for m in metrics:
        keys.extend(k for k in m if k not in keys)
    _write_csv(p, keys or ["events"], [[m.get(k, "") for k in keys] for m in metrics])
    paths.append(p)

    p = out / "betas.csv"
    rows = []
    for k in range(K):
        rows.append([k, float(summary.betas[k]), int(summary.topic_sizes[k])])
    _write_csv(p, ["topic", "beta", "events"], rows)
    paths.append(p)
    return paths
