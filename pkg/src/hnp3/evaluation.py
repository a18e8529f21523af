"""Metrics, the plain Hawkes baseline and fit/predict drivers."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Event, Hyperparams
from .inference import InferenceConfig, ParticleFilter, replay
from .io import records_from_block

log = logging.getLogger(__name__)


def relative_error(est, truth) -> float:
    """Frobenius norm of ``est - truth`` relative to that of ``truth``."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise ValueError("relative error against an all-zero truth")
    return float(np.linalg.norm(est - truth) / denom)


@dataclass
class MetricsReport:
    """Parameter-error checkpoints and held-out time log-likelihoods.

    Errors are Frobenius-relative: ||est - truth||_F / ||truth||_F.
    """

    checkpoints: list[dict] = field(default_factory=list)
    heldout_loglik: list[float] = field(default_factory=list)
    baseline_loglik: list[float] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        ts = [c["events"] for c in self.checkpoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("checkpoints must be strictly increasing")


def checkpoint_row(pf: ParticleFilter, truth=None) -> dict:
    p = pf.map_particle()
    row = {
        "events": len(pf.log),
        "time": pf.t_last,
        "n_topics": p.K,
        "ess": pf.ess(),
        "log_evidence": pf.log_evidence,
    }
    if truth is not None:
        rates = p.rate_estimates(pf.t_last)
        row["alpha_error"] = relative_error(rates.alpha_hat, truth.alpha)
        row["mu_error"] = relative_error(rates.mu_hat, truth.mu)
    return row


def fit(events: Sequence[Event], hyper: Hyperparams, config: InferenceConfig | None = None,
        seed: int | None = None, truth=None, checkpoint_every: int | None = None,
        pf: ParticleFilter | None = None) -> tuple[ParticleFilter, list[dict]]:
    """Run the filter over ``events``; optionally record checkpoint rows every
    ``checkpoint_every`` events (with parameter errors when ``truth`` is given)."""
    if pf is None:
        pf = ParticleFilter(hyper, config, seed)
    rows = []
    start = time.perf_counter()
    for e in events:
        pf.observe(e)
        if checkpoint_every and len(pf.log) % checkpoint_every == 0:
            row = checkpoint_row(pf, truth)
            row["seconds"] = time.perf_counter() - start
            rows.append(row)
            log.info("checkpoint %s", row)
    return pf, rows


def baseline_hawkes_fit(events: Sequence[Event], hyper: Hyperparams, config: InferenceConfig | None = None,
                        seed: int | None = None, **kwargs) -> tuple[ParticleFilter, list[dict]]:
    """The same engine with documents ignored and a single shared topic."""
    config = dataclasses.replace(config or InferenceConfig(), single_topic=True)
    return fit(events, hyper, config, seed, **kwargs)


def next_event_time_loglik(pf: ParticleFilter, heldout: Sequence[Event]) -> np.ndarray:
    """Rolling one-step-ahead log density of each held-out (time, user).

    Each event is scored before it is folded into the filter. The value is
    log lambda_u(t) minus the integrated intensity of all users since the
    previous event, mixed over particles.
    """
    out = np.empty(len(heldout))
    last = pf.t_last
    for i, e in enumerate(heldout):
        if e.time <= last:
            raise ValueError(f"held-out event {i} at {e.time} is not after {last}")
        out[i] = pf.predictive_log_density(e.time, e.user)
        pf.observe(e)
        last = e.time
    return out


def split(events: Sequence[Event], train_frac: float) -> tuple[list[Event], list[Event]]:
    n_train = int(round(len(events) * train_frac))
    return list(events[:n_train]), list(events[n_train:])


def paired_bootstrap_ci(diff: Sequence[float], n_boot: int = 2000, level: float = 0.95,
                        seed: int = 0) -> tuple[float, float, float]:
    """Mean of ``diff`` with a percentile bootstrap confidence interval."""
    d = np.asarray(diff, dtype=float)
    rng = np.random.default_rng(seed)
    means = d[rng.integers(0, len(d), size=(n_boot, len(d)))].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(d.mean()), float(lo), float(hi)


def warm_start(snapshot: dict, events: Sequence[Event], hyper: Hyperparams,
               config: InferenceConfig | None = None, seed: int | None = None) -> ParticleFilter:
    """Filter whose particles are all the snapshot's particle, rebuilt by
    replaying its records over the first ``n_events`` of ``events``."""
    if snapshot.get("kind") != "estimate":
        raise ValueError("warm start needs an estimate snapshot")
    records = records_from_block(snapshot["records"])
    n = len(records)
    if len(events) < n:
        raise ValueError(f"snapshot covers {n} events but only {len(events)} given")
    pf = ParticleFilter(hyper, config, seed)
    for e in events[:n]:
        e.validate(hyper.n_users, hyper.vocab_size)
        pf.log.append(e)
    samples = [np.asarray(s, dtype=float) for s in snapshot["beta_samples"]]
    particle, _ = replay(hyper, pf.config, events[:n], records, samples, log_=pf.log)
    pf.particles = [particle] + [particle.copy() for _ in range(hyper.n_particles - 1)]
    pf.t_last = particle.t_last
    return pf


def mean_or_nan(xs: Sequence[float]) -> float:
    return float(np.mean(xs)) if len(xs) else math.nan
