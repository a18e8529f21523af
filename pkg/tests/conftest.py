"""Shared helpers and the acceptance summary printed after the run."""

from __future__ import annotations

import numpy as np
import pytest

from hnp3.core import SELF, BranchingRecord, Event, Hyperparams
from hnp3.inference import EventLog, InferenceConfig, replay

import oracles

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the outcome of an acceptance criterion for the summary."""
    def record(n: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_toy(rng: np.random.Generator, n: int, U: int = 2, V: int = 2, M: int = 3) -> oracles.Toy:
    times = np.cumsum(rng.exponential(1.0, n)).tolist()
    users = rng.integers(U, size=n).tolist()
    docs = [tuple(sorted(rng.integers(V, size=rng.integers(1, 4)).tolist())) for _ in range(n)]
    return oracles.Toy(
        times, users, docs,
        mu=rng.uniform(0.2, 1.0, U),
        alpha=rng.uniform(0.1, 1.0, (U, U)),
        betas=[rng.uniform(0.5, 2.0, M) for _ in range(n)],
        gamma=rng.uniform(0.5, 2.0), zeta=rng.uniform(0.5, 2.0),
        nu=rng.uniform(0.0, 0.5), eta=rng.uniform(0.1, 1.0), V=V,
    )


def toy_events(toy: oracles.Toy) -> list[Event]:
    return [Event(t, u, d) for t, u, d in zip(toy.times, toy.users, toy.docs)]


def toy_records(toy: oracles.Toy, hist) -> list[BranchingRecord]:
    """Oracle histories as package records."""
    n_tables = {u: 0 for u in range(len(toy.mu))}
    out = []
    for i, (s, z, j) in enumerate(hist):
        u = toy.users[i]
        new = s == SELF and j == n_tables[u]
        n_tables[u] += new
        out.append(BranchingRecord(i, s, z, bool(new), j))
    return out


def toy_hyper(toy: oracles.Toy, M: int, P: int = 1, **kw) -> Hyperparams:
    return Hyperparams(n_users=len(toy.mu), vocab_size=toy.V, gamma=toy.gamma, zeta=toy.zeta, nu=toy.nu,
                       eta=toy.eta, n_beta_samples=M, n_particles=P, **kw)


def toy_config(toy: oracles.Toy) -> InferenceConfig:
    # long truncation so no candidate parent is dropped
    return InferenceConfig(fixed_mu=toy.mu.tolist(), fixed_alpha=toy.alpha.tolist(), truncation=60.0)


def toy_particle(toy: oracles.Toy, hist):
    """Particle holding ``hist`` for the first events, with all of the toy's
    events in its log."""
    log_ = EventLog()
    for e in toy_events(toy):
        log_.append(e)
    n = len(hist)
    return replay(toy_hyper(toy, len(toy.betas[0])), toy_config(toy), log_.events[:n],
                  toy_records(toy, hist), toy.betas, log_=log_)[0]
