"""Synthetic event streams from the full generative model, by Ogata thinning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import SELF, BranchingRecord, DecayedVector, Event, Hyperparams

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    pass


@dataclass
class SimulationConfig:
    """Ground-truth specification.

    ``mu`` and ``alpha`` may be given explicitly; otherwise ``mu`` is the
    common exogenous rate and ``alpha`` is drawn Uniform[0, alpha_max] with a
    fraction ``alpha_sparsity`` of entries zeroed. With ``betas`` set, the
    topic set is fixed to ``len(betas)`` topics and a fresh franchise draw
    picks one of them uniformly; with ``betas=None`` topics are created
    lazily, with word distributions from Dirichlet(eta) and decay rates from
    the Gamma prior.
    """

    n_users: int = 10
    vocab_size: int = 200
    horizon: float | None = None
    n_events: int | None = 10_000
    mu: float | list[float] = 0.05
    alpha: list[list[float]] | None = None
    alpha_max: float = 0.1
    alpha_sparsity: float = 0.5
    betas: list[float] | None = field(default_factory=lambda: [0.5, 1.0, 2.0, 4.0])
    phi: str | list[list[float]] = "dirichlet"
    phi_eta: float = 0.1
    doc_length: float = 20.0
    times_only: bool = False
    event_cap: int = 1_000_000

    def __post_init__(self):
        if self.horizon is None and self.n_events is None:
            raise ValueError("one of horizon or n_events is required")


@dataclass
class GroundTruth:
    mu: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    phi: np.ndarray
    records: list[BranchingRecord] = field(default_factory=list)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        if np.any(self.beta <= 0):
            raise ValueError("decay rates must be positive")
        if len(self.phi) and not np.allclose(self.phi.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ValueError("word distributions must sum to one")
        rho = self.branching_bound()
        if rho >= 1:
            log.warning("influence matrix is supercritical (bound %.3f)", rho)

    def branching_bound(self) -> float:
        """Spectral radius of alpha / min(beta); a conservative branching ratio."""
        if not len(self.beta) or not self.alpha.size:
            return 0.0
        return float(np.abs(np.linalg.eigvals(self.alpha / self.beta.min())).max())

    def expected_offspring(self, user: int, topic: int) -> float:
        return float(self.alpha[user].sum() / self.beta[topic])


def _draw_truth(cfg: SimulationConfig, hyper: Hyperparams, rng: np.random.Generator) -> GroundTruth:
    U, V = cfg.n_users, cfg.vocab_size
    mu = np.broadcast_to(np.asarray(cfg.mu, dtype=float), (U,)).copy()
    if cfg.alpha is not None:
        alpha = np.asarray(cfg.alpha, dtype=float)
    else:
        alpha = rng.uniform(0.0, cfg.alpha_max, size=(U, U))
        alpha[rng.random((U, U)) < cfg.alpha_sparsity] = 0.0
    if cfg.betas is None:
        return GroundTruth(mu, alpha, np.zeros(0), np.zeros((0, V)))
    K = len(cfg.betas)
    if isinstance(cfg.phi, str):
        if cfg.phi == "dirichlet":
            phi = rng.dirichlet(np.full(V, cfg.phi_eta), size=K)
        elif cfg.phi == "disjoint":
            phi = np.zeros((K, V))
            for k, block in enumerate(np.array_split(np.arange(V), K)):
                phi[k, block] = 1.0 / len(block)
        else:
            raise ValueError(f"unknown phi setting {cfg.phi!r}")
    else:
        phi = np.asarray(cfg.phi, dtype=float)
    phi /= phi.sum(axis=1, keepdims=True)
    return GroundTruth(mu, alpha, np.asarray(cfg.betas, dtype=float), phi)


class _Excitation:
    """Per (topic, source user) decayed sums of past events at the true rates."""

    def __init__(self, U: int):
        self.G = np.zeros((0, U))
        self.beta = np.zeros(0)
        self.anchor = 0.0

    def add_topic(self, beta: float) -> None:
        self.G = np.vstack([self.G, np.zeros((1, self.G.shape[1]))])
        self.beta = np.append(self.beta, beta)

    def at(self, t: float) -> np.ndarray:
        return self.G * np.exp(-self.beta * (t - self.anchor))[:, None]

    def move(self, t: float) -> None:
        self.G = self.at(t)
        self.anchor = t


def simulate(cfg: SimulationConfig, hyper: Hyperparams, seed: int | None = None,
             truth: GroundTruth | None = None) -> tuple[list[Event], GroundTruth]:
    """Sample an event stream and its full latent history.

    Runs until ``cfg.horizon`` (if set) or ``cfg.n_events`` events, whichever
    comes first. Deterministic given ``seed``.
    """
    rng = np.random.default_rng(seed)
    if truth is None:
        truth = _draw_truth(cfg, hyper, rng)
        fixed_topics = cfg.betas is not None
    else:
        truth = GroundTruth(truth.mu, truth.alpha, truth.beta, truth.phi)
        fixed_topics = len(truth.beta) > 0
    U, V = len(truth.mu), cfg.vocab_size
    a_beta, b_beta = hyper.beta_prior
    mu, alpha = truth.mu, truth.alpha
    betas = list(truth.beta)
    phis = list(truth.phi)

    exc = _Excitation(U)
    for b in betas:
        exc.add_topic(b)
    franchise = DecayedVector(hyper.nu)
    for _ in betas:
        franchise.append()
    tables: list[list[int]] = [[] for _ in range(U)]
    usage = [DecayedVector(hyper.nu, 2) for _ in range(U)]
    # event indices and times per (topic, user) for parent sampling
    groups: dict[tuple[int, int], list[int]] = {}

    events: list[Event] = []
    records: list[BranchingRecord] = []
    times: list[float] = []
    t = 0.0
    horizon = math.inf if cfg.horizon is None else cfg.horizon
    target = math.inf if cfg.n_events is None else cfg.n_events

    def intensities(at: float) -> tuple[np.ndarray, np.ndarray]:
        G = exc.at(at)
        return mu + alpha.T @ G.sum(axis=0), G

    lam_bar = float(intensities(t)[0].sum())
    while len(events) < target:
        if lam_bar <= 0:
            break
        t += rng.exponential(1.0 / lam_bar)
        if t > horizon:
            break
        lam, G = intensities(t)
        total = float(lam.sum())
        if rng.random() * lam_bar > total:
            lam_bar = total
            continue
        if len(events) >= cfg.event_cap:
            raise SimulationError(
                f"event cap {cfg.event_cap} reached at t={t:.3f}; "
                f"branching bound {truth.branching_bound():.3f}"
            )
        u = int(rng.choice(U, p=lam / total))
        # which component fired: exogenous, or a (topic, source user) pair
        comp = G * alpha[:, u][None, :]
        weights = np.concatenate([[mu[u]], comp.ravel()])
        c = int(np.searchsorted(np.cumsum(weights), rng.random() * weights.sum(), side="right"))
        c = min(c, len(weights) - 1)
        idx = len(events)
        if c == 0:
            trigger = SELF
            use = usage[u].read(t)
            crp = np.append(use, hyper.gamma)
            j = int(rng.choice(len(crp), p=crp / crp.sum()))
            if j < len(use):
                z, table, new_table = tables[u][j], j, False
            else:
                pop = franchise.read(t)
                fr = np.append(pop, hyper.zeta)
                k = int(rng.choice(len(fr), p=fr / fr.sum()))
                if k == len(pop):
                    if fixed_topics:
                        k = int(rng.integers(len(betas)))
                    else:
                        betas.append(float(rng.gamma(a_beta, 1.0 / b_beta)))
                        phis.append(rng.dirichlet(np.full(V, hyper.eta)))
                        exc.add_topic(betas[-1])
                        franchise.append()
                z = k
                tables[u].append(z)
                table = usage[u].append()
                new_table = True
                franchise.bump(t, z)
            usage[u].bump(t, table)
        else:
            z, v = divmod(c - 1, U)
            members = groups[(z, v)]
            # walk back from the newest event of the group
            r = rng.random() * G[z, v]
            trigger = members[0]
            for i in reversed(members):
                r -= math.exp(-betas[z] * (t - times[i]))
                if r <= 0:
                    trigger = i
                    break
            table, new_table = -1, False
        if cfg.times_only:
            doc: tuple[int, ...] = ()
        else:
            length = 1 + rng.poisson(max(cfg.doc_length - 1.0, 0.0))
            doc = tuple(sorted(rng.choice(V, size=length, p=phis[z]).tolist()))
        events.append(Event(t, u, doc))
        records.append(BranchingRecord(idx, trigger, z, new_table, table))
        times.append(t)
        groups.setdefault((z, u), []).append(idx)
        exc.move(t)
        exc.G[z, u] += 1.0
        lam_bar = float((mu + alpha.T @ exc.G.sum(axis=0)).sum())

    truth = GroundTruth(mu, alpha, np.asarray(betas, dtype=float),
                        np.asarray(phis, dtype=float).reshape(len(phis), V), records)
    return events, truth
