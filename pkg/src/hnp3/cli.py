"""Command line: simulate | fit | eval | predict | report.

Exit codes: 0 on success, 2 for usage errors (bad flags, missing files,
invalid config or input), 1 for failures while running.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig
from .evaluation import (
    baseline_hawkes_fit,
    checkpoint_row,
    fit,
    next_event_time_loglik,
    paired_bootstrap_ci,
    relative_error,
    split,
    warm_start,
)
from .inference import map_summary
from .simulator import GroundTruth, simulate

log = logging.getLogger("hnp3")

USAGE, RUNTIME = 2, 1


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hnp3", description="Topic-marked Hawkes process: simulate and fit.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, events=True):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--particles", type=int, help="override the particle count")
        p.add_argument("--out", required=True, help="output directory (or file for predict)")
        if events:
            p.add_argument("--events", required=True, help="JSON-lines event log")

    p = sub.add_parser("simulate", help="draw a synthetic stream and its ground truth")
    common(p, events=False)

    p = sub.add_parser("fit", help="run the particle filter, write a snapshot and checkpoints")
    common(p)
    p.add_argument("--truth", help="truth snapshot; adds parameter errors to checkpoints")
    p.add_argument("--baseline", choices=["hawkes"], help="fit the single-topic baseline instead")

    p = sub.add_parser("eval", help="compare a snapshot to truth and/or score held-out events")
    common(p, events=False)
    p.add_argument("--events", help="event log for held-out scoring")
    p.add_argument("--snapshot", help="estimate snapshot to compare against --truth")
    p.add_argument("--truth", help="truth snapshot")
    p.add_argument("--baseline", choices=["hawkes"], help="also score the baseline and pair the results")
    p.add_argument("--train-frac", type=float)

    p = sub.add_parser("predict", help="rolling next-event log densities")
    common(p)
    p.add_argument("--horizon", type=int, help="number of held-out events to score")
    p.add_argument("--train-frac", type=float)
    p.add_argument("--snapshot", help="warm start from an estimate snapshot of the training prefix")
    p.add_argument("--baseline", choices=["hawkes"])

    p = sub.add_parser("report", help="fit and export CSV reports")
    common(p)
    p.add_argument("--vocab", help="sidecar vocabulary, one token per line")
    return ap


def _config(args) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.particles is not None:
            cfg.hyper = dataclasses.replace(cfg.hyper, n_particles=args.particles)
        if getattr(args, "train_frac", None) is not None:
            cfg.eval = dataclasses.replace(cfg.eval, train_frac=args.train_frac)
        if getattr(args, "horizon", None) is not None:
            cfg.eval = dataclasses.replace(cfg.eval, horizon=args.horizon)
    except FileNotFoundError as exc:
        raise UsageError(f"config not found: {exc.filename}") from None
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid config: {exc}") from None
    return cfg


def _events(path: str, cfg: ExperimentConfig):
    if not os.path.exists(path):
        raise UsageError(f"event file not found: {path}")
    try:
        events = io.load_events(path, jitter=cfg.eval.jitter)
        for e in events:
            e.validate(cfg.hyper.n_users, cfg.hyper.vocab_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return events


def _snapshot(path: str) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"snapshot not found: {path}")
    try:
        return io.load_snapshot(path)
    except io.FormatError as exc:
        raise UsageError(str(exc)) from None


def _write_json(obj, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def _write_rows(path: Path, rows: list[dict]) -> None:
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    io._write_csv(path, keys or ["events"], [[r.get(k, "") for k in keys] for r in rows])


def _fit(events, cfg, seed, baseline=None, truth=None, checkpoint_every=None):
    run = baseline_hawkes_fit if baseline == "hawkes" else fit
    pf, rows = run(events, cfg.hyper, cfg.inference, seed=seed, truth=truth, checkpoint_every=checkpoint_every)
    for r in rows:
        # wall clock goes to the log only, so output files stay reproducible
        log.info("events %d: %.1fs", r["events"], r.pop("seconds"))
    return pf, rows


def cmd_simulate(args, cfg) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    events, truth = simulate(cfg.simulation, cfg.hyper, seed=args.seed)
    io.save_events(events, out / "events.jsonl")
    io.export_truth(truth, out / "truth.json")
    log.info("simulated %d events", len(events))


def cmd_fit(args, cfg) -> None:
    events = _events(args.events, cfg)
    truth = _truth(args.truth) if args.truth else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pf, rows = _fit(events, cfg, args.seed, args.baseline, truth, cfg.eval.checkpoint_every)
    if not rows or rows[-1]["events"] != len(events):
        if events:
            rows.append(checkpoint_row(pf, truth))
    io.save_snapshot(io.estimate_snapshot(pf), out / "snapshot.json")
    _write_rows(out / "checkpoints.csv", rows)


def _truth(path: str) -> GroundTruth:
    snap = _snapshot(path)
    return GroundTruth(snap["mu"], snap["alpha"], snap.get("beta", []), snap.get("phi", []) or np.zeros((0, 0)),
                       io.records_from_block(snap["records"]) if "records" in snap else [])


def cmd_eval(args, cfg) -> None:
    if not (args.snapshot and args.truth) and not args.events:
        raise UsageError("eval needs --snapshot and --truth, or --events")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report: dict = {"error_metric": "frobenius relative: ||est - truth|| / ||truth||"}
    if args.snapshot and args.truth:
        est, tru = _snapshot(args.snapshot), _snapshot(args.truth)
        report["mu_error"] = relative_error(est["mu"], tru["mu"])
        report["alpha_error"] = relative_error(est["alpha"], tru["alpha"])
        report["beta_estimate"] = est.get("beta", [])
        report["beta_truth"] = tru.get("beta", [])
    elif args.snapshot or args.truth:
        raise UsageError("--snapshot and --truth go together")
    if args.events:
        events = _events(args.events, cfg)
        train, test = split(events, cfg.eval.train_frac)
        if not test:
            raise UsageError("no held-out events after the training split")
        pf, _ = _fit(train, cfg, args.seed)
        ll = next_event_time_loglik(pf, test)
        report["heldout_mean_loglik"] = float(ll.mean())
        report["heldout_events"] = len(test)
        rows = [{"event": len(train) + i, "loglik": float(v)} for i, v in enumerate(ll)]
        if args.baseline:
            pb, _ = _fit(train, cfg, args.seed, args.baseline)
            lb = next_event_time_loglik(pb, test)
            mean, lo, hi = paired_bootstrap_ci(ll - lb, seed=args.seed)
            report.update(baseline_mean_loglik=float(lb.mean()), paired_diff=mean, paired_ci=[lo, hi])
            for r, v in zip(rows, lb):
                r["baseline_loglik"] = float(v)
        _write_rows(out / "heldout.csv", rows)
    _write_json(report, out / "metrics.json")
    print(json.dumps(report, sort_keys=True))


def cmd_predict(args, cfg) -> None:
    events = _events(args.events, cfg)
    horizon = cfg.eval.horizon
    if args.snapshot:
        snap = _snapshot(args.snapshot)
        n_train = int(snap["n_events"])
        try:
            pf = warm_start(snap, events, cfg.hyper, cfg.inference, seed=args.seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        train = events[:n_train]
    else:
        train, _ = split(events, cfg.eval.train_frac)
        pf, _ = _fit(train, cfg, args.seed, args.baseline)
    test = events[len(train):len(train) + horizon]
    if len(test) < horizon:
        raise UsageError(f"only {len(test)} events after the training prefix, horizon is {horizon}")
    ll = next_event_time_loglik(pf, test)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io._write_csv(out, ["event", "time", "user", "loglik"],
                  [[len(train) + i, e.time, e.user, float(v)] for i, (e, v) in enumerate(zip(test, ll))])


def cmd_report(args, cfg) -> None:
    events = _events(args.events, cfg)
    vocab = None
    if args.vocab:
        if not os.path.exists(args.vocab):
            raise UsageError(f"vocabulary not found: {args.vocab}")
        vocab = io.load_vocab(args.vocab)
    pf, rows = _fit(events, cfg, args.seed, checkpoint_every=cfg.eval.checkpoint_every)
    summary = map_summary(pf) if events else None
    io.export_reports(summary, events, rows, args.out, grid_points=cfg.eval.grid_points, vocab=vocab)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "eval": cmd_eval, "predict": cmd_predict, "report": cmd_report}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("HNP3_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return USAGE if exc.code else 0
    start = time.perf_counter()
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"hnp3 {args.command}: {exc}", file=sys.stderr)
        return USAGE
    except Exception as exc:  # noqa: BLE001 - report and exit nonzero
        log.debug("failure", exc_info=True)
        print(f"hnp3 {args.command}: error: {exc}", file=sys.stderr)
        return RUNTIME
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - start)
    return 0


if __name__ == "__main__":
    sys.exit(main())
