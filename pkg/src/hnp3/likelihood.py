"""Intensities, compensators, topic predictives and the per-event proposal.

The scalar functions here recompute everything from an explicit history
and are the reference the incremental particle state is checked against.
:func:`event_predictive` is the hot path used by the particle filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import SELF, BranchingRecord, DomainError, Event, kernel_eval, kernel_integral


@dataclass
class RateEstimates:
    """Posterior-mean exogenous rates ``mu_hat[u]`` and influences ``alpha_hat[v, u]``
    (row = source user, column = target user)."""

    mu_hat: np.ndarray
    alpha_hat: np.ndarray

    def __post_init__(self):
        self.mu_hat = np.asarray(self.mu_hat, dtype=float)
        self.alpha_hat = np.asarray(self.alpha_hat, dtype=float)
        n = len(self.mu_hat)
        if self.alpha_hat.shape != (n, n):
            raise ValueError(f"alpha_hat must be {n}x{n}, got {self.alpha_hat.shape}")
        if np.any(self.alpha_hat < 0) or not np.all(np.isfinite(self.alpha_hat)):
            raise ValueError("alpha_hat must be finite and non-negative")


def trigger_component(
    source: Event,
    record: BranchingRecord,
    u: int,
    t: float,
    rates: RateEstimates,
    betas: Mapping[int, float],
) -> float:
    if record.topic not in betas:
        raise KeyError(f"unknown topic {record.topic}")
    return rates.alpha_hat[source.user, u] * kernel_eval(betas[record.topic], t, source.time)


def user_intensity(
    u: int,
    t: float,
    events: Sequence[Event],
    records: Sequence[BranchingRecord],
    rates: RateEstimates,
    betas: Mapping[int, float],
) -> float:
    total = rates.mu_hat[u]
    for e, r in zip(events, records):
        if e.time < t:
            total += trigger_component(e, r, u, t, rates, betas)
    return float(total)


def compensator(
    u: int,
    a: float,
    b: float,
    events: Sequence[Event],
    records: Sequence[BranchingRecord],
    rates: RateEstimates,
    betas: Mapping[int, float],
) -> float:
    """Integral of ``user_intensity(u, .)`` over ``[a, b]``."""
    if a > b:
        raise DomainError(f"empty interval [{a}, {b}]")
    total = rates.mu_hat[u] * (b - a)
    for e, r in zip(events, records):
        if e.time < b:
            total += rates.alpha_hat[e.user, u] * kernel_integral(betas[r.topic], e.time, a, b)
    return float(total)


def crp_topic_predictive(usage: np.ndarray, gamma: float) -> np.ndarray:
    """Probabilities of a user's local tables followed by NEW (last entry)."""
    usage = np.asarray(usage, dtype=float)
    denom = usage.sum() + gamma
    return np.append(usage / denom, gamma / denom)


def franchise_predictive(popularity: np.ndarray, zeta: float) -> np.ndarray:
    """Probabilities of existing global topics followed by FRESH (last entry)."""
    popularity = np.asarray(popularity, dtype=float)
    denom = popularity.sum() + zeta
    return np.append(popularity / denom, zeta / denom)


def doc_stats(doc: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Token ids of a sorted doc and, per position, how often that token already
    occurred earlier in the doc."""
    words = np.asarray(doc, dtype=np.int64)
    occ = np.zeros(len(words))
    for j in range(1, len(words)):
        if words[j] == words[j - 1]:
            occ[j] = occ[j - 1] + 1
    return words, occ


def doc_predictive(doc: Sequence[int], counts: np.ndarray | None, eta: float, vocab_size: int) -> float:
    """Collapsed Dirichlet-multinomial log-predictive of ``doc`` under a topic
    with word counts ``counts`` (``None`` for a fresh topic).

    The multinomial coefficient is left out; it does not depend on the topic.
    """
    if len(doc) and max(doc) >= vocab_size:
        raise ValueError(f"token {max(doc)} out of range [0, {vocab_size})")
    words, occ = doc_stats(sorted(doc))
    if counts is None:
        counts = np.zeros(vocab_size)
    counts = np.asarray(counts, dtype=float)
    num = np.log(eta + counts[words] + occ).sum()
    den = np.log(vocab_size * eta + counts.sum() + np.arange(len(words))).sum()
    return float(num - den)


def doc_log_predictive_all(
    words: np.ndarray,
    occ: np.ndarray,
    word_counts: np.ndarray,
    totals: np.ndarray,
    eta: float,
    vocab_size: int,
) -> tuple[np.ndarray, float]:
    """Vectorized :func:`doc_predictive` over every row of ``word_counts``,
    plus the fresh-topic value."""
    n = len(words)
    if n == 0:
        return np.zeros(len(totals)), 0.0
    pos = np.arange(n)
    fresh = float(np.log(eta + occ).sum() - np.log(vocab_size * eta + pos).sum())
    if len(totals) == 0:
        return np.zeros(0), fresh
    num = np.log(eta + word_counts[:, words] + occ).sum(axis=1)
    den = np.log(vocab_size * eta + totals[:, None] + pos).sum(axis=1)
    return num - den, fresh


ENDO, LOCAL, NEW, FRESH = 0, 1, 2, 3


@dataclass
class Choice:
    kind: int
    trigger: int
    topic: int
    table: int

    @property
    def new_table(self) -> bool:
        return self.kind in (NEW, FRESH)


class Proposal:
    """Unnormalized log-scores of every way the next event can be explained.

    Candidates are laid out as [triggered by a past event..., existing local
    tables..., new table on an existing topic..., new table on a fresh topic].
    """

    def __init__(self, log_scores, parents, parent_topics, table_topics, n_topics, survival, n_new=None,
                 topic_prior=None):
        self.log_scores = log_scores
        # log probability of each topic (fresh last) for an exogenous event
        self.topic_prior = np.zeros(n_topics + 1) if topic_prior is None else topic_prior
        self.parents = parents
        self.parent_topics = parent_topics
        self.table_topics = table_topics
        self.n_topics = n_topics
        self.n_new = n_topics if n_new is None else n_new
        self.survival = survival
        top = log_scores.max() if len(log_scores) else -np.inf
        if np.isfinite(top):
            self.log_norm = float(top + math.log(np.exp(log_scores - top).sum()))
        else:
            self.log_norm = -np.inf
        self.log_marginal = self.log_norm - survival

    def __len__(self):
        return len(self.log_scores)

    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_scores - self.log_norm)

    def decode(self, i: int) -> Choice:
        n_endo = len(self.parents)
        if i < n_endo:
            return Choice(ENDO, int(self.parents[i]), int(self.parent_topics[i]), -1)
        i -= n_endo
        n_local = len(self.table_topics)
        if i < n_local:
            return Choice(LOCAL, SELF, int(self.table_topics[i]), i)
        i -= n_local
        if i < self.n_new:
            return Choice(NEW, SELF, i, n_local)
        return Choice(FRESH, SELF, self.n_topics, n_local)

    def sample(self, rng: np.random.Generator) -> Choice:
        if not np.isfinite(self.log_norm):
            raise FloatingPointError("proposal has no candidate with positive probability")
        c = np.cumsum(np.exp(self.log_scores - self.log_scores.max()))
        i = int(np.searchsorted(c, rng.random() * c[-1], side="right"))
        return self.decode(min(i, len(c) - 1))

    def sz_distribution(self) -> dict[tuple[int, int], float]:
        """Normalized distribution over (trigger, topic); the fresh topic gets
        id ``n_topics``. Table choices mapping to the same pair are merged."""
        out: dict[tuple[int, int], float] = {}
        for i, p in enumerate(self.probabilities()):
            c = self.decode(i)
            key = (c.trigger, c.topic)
            out[key] = out.get(key, 0.0) + float(p)
        return out


def event_predictive(particle, t: float, u: int, words: np.ndarray, occ: np.ndarray) -> Proposal:
    """Exact posterior over how ``particle`` explains an event (t, u, doc).

    ``log_marginal`` of the result is the log predictive density of the
    event, including the survival of every user's intensity since the
    particle's last event.
    """
    p = particle
    hp = p.hyper
    K = p.K
    dt = t - p.t_last
    if dt < 0:
        raise DomainError(f"event at {t} precedes last event at {p.t_last}")
    mu_u = p.mu_hat[u]
    survival = p.total_compensator(t)

    if p.single_topic:
        lp = np.zeros(K)
        lp_fresh = 0.0
    else:
        lp, lp_fresh = doc_log_predictive_all(
            words, occ, p.word_counts[:K], p.totals[:K], hp.eta, hp.vocab_size
        )

    with np.errstate(divide="ignore"):
        # triggered by one of the recent events
        n = p.n
        if K and n:
            cutoff = p.cutoff[:K]
            lo = int(np.searchsorted(p.log.times[:n], t - cutoff.max(), side="left"))
            cand = np.arange(lo, n)
            zc = p.z[lo:n]
            lag = t - p.log.times[lo:n]
            keep = lag < cutoff[zc]
            if not keep.all():
                cand, zc, lag = cand[keep], zc[keep], lag[keep]
            kern = p.kernel(zc, lag)
            endo = np.log(p.alpha_hat[p.log.users[cand], u]) + np.log(kern) + lp[zc]
        else:
            cand = np.zeros(0, dtype=np.int64)
            zc = cand
            endo = np.zeros(0)

        log_mu = math.log(mu_u) if mu_u > 0 else -np.inf
        if p.single_topic:
            # one exogenous slot: the shared topic, or a fresh one before any event
            table_topics = np.zeros(1 if K else 0, dtype=np.int64)
            log_scores = np.concatenate([endo, [log_mu]])
            return Proposal(log_scores, cand, zc, table_topics, K, survival, n_new=0)

        usage = p.usage[u].read(t)
        table_topics = np.asarray(p.tables[u], dtype=np.int64)
        denom_u = usage.sum() + hp.gamma
        local = log_mu + np.log(usage / denom_u) + lp[table_topics]
        log_new = log_mu + math.log(hp.gamma / denom_u)
        pop = p.franchise.read(t)
        denom_f = pop.sum() + hp.zeta
        new = log_new + np.log(pop / denom_f) + lp
        fresh = log_new + math.log(hp.zeta / denom_f) + lp_fresh
        prior = (hp.gamma / denom_u) * np.append(pop, hp.zeta) / denom_f
        prior += np.bincount(table_topics, weights=usage / denom_u, minlength=K + 1)
        topic_prior = np.log(prior)

    log_scores = np.concatenate([endo, local, new, [fresh]])
    return Proposal(log_scores, cand, zc, table_topics, K, survival, topic_prior=topic_prior)
