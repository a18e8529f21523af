"""Online collapsed SMC over event provenance and topics.

Each :class:`Particle` carries one hypothesis of the branching structure
and topic assignments together with the sufficient statistics needed to
score the next event: decayed table and franchise counts, collapsed word
counts, trigger/exogenous counts for the rate estimates, and per-topic
importance weights over prior draws of the kernel decay rate.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import (
    SELF,
    BranchingRecord,
    DecayedVector,
    DomainError,
    Event,
    Hyperparams,
    TopicAtom,
    UserState,
)
from .likelihood import (
    ENDO,
    FRESH,
    LOCAL,
    NEW,
    Choice,
    Proposal,
    RateEstimates,
    doc_stats,
    event_predictive,
)

log = logging.getLogger(__name__)


@dataclass
class InferenceConfig:
    """Knobs of the filter that are not model constants.

    ``refresh_every`` is how many events pass between refreshes of the cached
    kernel rates and rate estimates used by the proposal. ``truncation``
    drops candidate parents older than ``truncation / beta`` of their topic.
    ``single_topic`` ignores documents and ties every event to one topic
    with one shared decay rate (the plain multivariate Hawkes baseline).
    With ``rescore_every`` > 0 each particle periodically re-estimates its
    rates over its whole history by accelerated EM (at most ``rescore_iters``
    extrapolation steps, stopping once the relative change is below
    ``rescore_tol``, see :meth:`Particle.rescore`) and then reweights its
    decay-rate draws (:meth:`Particle.rescore_betas`). Rescores happen after
    ``rescore_every`` events, and later whenever the history has grown by a
    fraction ``rescore_growth`` since the last one, whichever gap is larger.
    """

    ess_threshold: float = 0.5
    refresh_every: int = 10
    truncation: float = 10.0
    rescore_every: int = 200
    rescore_iters: int = 30
    rescore_tol: float = 1e-6
    rescore_growth: float = 0.1
    single_topic: bool = False
    fixed_mu: list[float] | None = None
    fixed_alpha: list[list[float]] | None = None
    start_time: float = 0.0

    def __post_init__(self):
        if not 0 < self.ess_threshold <= 1:
            raise ValueError("ess_threshold must be in (0, 1]")
        if self.refresh_every < 1:
            raise ValueError("refresh_every must be >= 1")
        if self.rescore_every < 0 or self.rescore_iters < 1 or self.rescore_growth < 0:
            raise ValueError("rescore_every and rescore_growth must be >= 0, rescore_iters >= 1")
        if not self.rescore_tol > 0:
            raise ValueError("rescore_tol must be positive")
        if not self.truncation > 0:
            raise ValueError("truncation must be positive")


class EventLog:
    """Observed events shared (read-only) by all particles of a filter."""

    def __init__(self, capacity: int = 256):
        self.times = np.zeros(capacity)
        self.users = np.zeros(capacity, dtype=np.int64)
        self.events: list[Event] = []
        self.stats: list[tuple[np.ndarray, np.ndarray]] = []

    def __len__(self):
        return len(self.events)

    def append(self, e: Event) -> int:
        n = len(self.events)
        if n == len(self.times):
            self.times = np.concatenate([self.times, np.zeros(n)])
            self.users = np.concatenate([self.users, np.zeros(n, dtype=np.int64)])
        self.times[n] = e.time
        self.users[n] = e.user
        self.events.append(e)
        self.stats.append(doc_stats(e.doc))
        return n


def _grow(a: np.ndarray, size: int) -> np.ndarray:
    if size <= a.shape[0]:
        return a
    new = np.zeros((max(size, 2 * a.shape[0]),) + a.shape[1:], dtype=a.dtype)
    new[: a.shape[0]] = a
    return new


class Particle:
    """One hypothesis of the latent history plus its sufficient statistics."""

    def __init__(self, hyper: Hyperparams, config: InferenceConfig, log_: EventLog):
        U, V, M = hyper.n_users, hyper.vocab_size, hyper.n_beta_samples
        self.hyper = hyper
        self.config = config
        self.log = log_
        self.single_topic = config.single_topic
        self.truncation = config.truncation
        self.t_last = config.start_time
        self.n = 0

        cap = 64
        self.s = np.zeros(cap, dtype=np.int64)
        self.z = np.zeros(cap, dtype=np.int64)
        self.l = np.zeros(cap, dtype=bool)
        self.table = np.zeros(cap, dtype=np.int64)
        # log prior probability of the event's topic had it been exogenous
        self.topic_logp = np.zeros(cap)

        self.K = 0
        kcap = 4
        self.word_counts = np.zeros((kcap, V))
        self.totals = np.zeros(kcap)
        self.event_count = np.zeros(kcap, dtype=np.int64)
        self.franchise = DecayedVector(hyper.nu)
        self.tables: list[list[int]] = [[] for _ in range(U)]
        self.usage = [DecayedVector(hyper.nu, 2) for _ in range(U)]

        # each topic's kernel is a weighted mixture of exp(-b dt) over prior
        # draws b = beta_samples[k, m]; W holds the cached normalized weights
        self.beta_samples = np.ones((kcap, M))
        self.beta_logw = np.zeros((kcap, M))
        self.W = np.zeros((kcap, M))
        # lag beyond which a topic's kernel is below exp(-truncation)
        self.cutoff = np.zeros(kcap)
        # summed lag of triggered events behind their topic-k parent
        self.lag_sum = np.zeros(kcap)
        # S[k, v, m] = sum over topic-k events of user v of
        # exp(-beta_samples[k, m] (t_last - t_e))
        self.S = np.zeros((kcap, U, M))
        # G[k, v] = mixture kernel summed over the same events, at t_last
        self.G = np.zeros((kcap, U))
        self.n_kv = np.zeros((kcap, U))
        self._decay: tuple[float, np.ndarray] | None = None
        self.next_rescore = config.rescore_every

        self.exo_count = np.zeros(U)
        self.trig_count = np.zeros((U, U))
        self.mu_hat = np.zeros(U)
        self.alpha_hat = np.zeros((U, U))
        self.A = np.zeros(U)
        self._set_rates(self._prior_rates())

    # -- bookkeeping -------------------------------------------------------

    def copy(self) -> "Particle":
        out = Particle.__new__(Particle)
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.copy()
            elif isinstance(v, DecayedVector):
                v = v.copy()
            out.__dict__[k] = v
        out.tables = [list(t) for t in self.tables]
        out.usage = [u.copy() for u in self.usage]
        return out

    def _prior_rates(self) -> RateEstimates:
        hp, cfg = self.hyper, self.config
        U = hp.n_users
        a_mu, b_mu = hp.mu_prior
        a_al, b_al = hp.alpha_prior
        mu = np.full(U, a_mu / b_mu) if cfg.fixed_mu is None else np.asarray(cfg.fixed_mu, float)
        if cfg.fixed_alpha is None:
            alpha = np.full((U, U), a_al / b_al)
        else:
            alpha = np.asarray(cfg.fixed_alpha, float)
        return RateEstimates(mu, alpha)

    def _set_rates(self, rates: RateEstimates) -> None:
        self.mu_hat = rates.mu_hat.copy()
        self.alpha_hat = rates.alpha_hat.copy()
        self.A = self.alpha_hat.sum(axis=1)

    def _new_topic(self, samples: np.ndarray) -> int:
        k = self.K
        self.K += 1
        for name in ("word_counts", "totals", "event_count", "beta_logw", "S", "G", "n_kv",
                     "beta_samples", "W", "cutoff", "lag_sum"):
            setattr(self, name, _grow(getattr(self, name), self.K))
        self.beta_samples[k] = samples
        # until the first refresh the kernel is the prior predictive one
        self.W[k] = 1.0 / len(samples)
        self.cutoff[k] = kernel_cutoff(samples, self.W[k], self.truncation)
        self._decay = None
        self.franchise.append()
        return k

    # -- per-event update --------------------------------------------------

    def propose(self, index: int) -> Proposal:
        e = self.log.events[index]
        words, occ = self.log.stats[index]
        return event_predictive(self, e.time, e.user, words, occ)

    def decay(self, t: float) -> np.ndarray:
        """exp(-beta_samples * (t - t_last)) for the live topics."""
        dt = t - self.t_last
        if dt < 0:
            raise DomainError(f"time runs backwards: {t} < {self.t_last}")
        c = self._decay
        if c is None or c[0] != dt:
            c = (dt, np.exp(-self.beta_samples[: self.K] * dt))
            self._decay = c
        return c[1]

    def advance(self, t: float) -> None:
        """Move the decayed state from ``t_last`` to ``t``."""
        K = self.K
        if K and t != self.t_last:
            self.S[:K] *= self.decay(t)[:, None, :]
            self.G[:K] = np.einsum("kvm,km->kv", self.S[:K], self.W[:K])
        self.t_last = t
        self._decay = None

    def apply(self, index: int, choice: Choice, beta_samples: np.ndarray | None = None,
              rng: np.random.Generator | None = None, topic_logp: float = 0.0) -> BranchingRecord:
        """Commit ``choice`` for event ``index`` and fold the event into every
        sufficient statistic. A fresh topic takes ``beta_samples`` if given,
        otherwise draws them from the prior with ``rng``. ``topic_logp`` is
        the log prior probability of the chosen topic for an exogenous event
        (``Proposal.topic_prior``), kept for :meth:`rescore`."""
        e = self.log.events[index]
        t, u = e.time, e.user
        words, _ = self.log.stats[index]
        if index != self.n:
            raise ValueError(f"expected event {self.n}, got {index}")
        if choice.kind == FRESH:
            if beta_samples is None:
                a, b = self.hyper.beta_prior
                beta_samples = rng.gamma(a, 1.0 / b, size=self.hyper.n_beta_samples)
            k = self._new_topic(np.asarray(beta_samples, dtype=float))
            if k != choice.topic:
                raise ValueError(f"fresh topic id {k} does not match choice {choice.topic}")
        z = choice.topic
        table = -1
        new_table = False
        if choice.kind == ENDO:
            parent = choice.trigger
            self.trig_count[self.log.users[parent], u] += 1
            self.lag_sum[z] += t - self.log.times[parent]

        else:
            self.exo_count[u] += 1
            if self.single_topic:
                new_table = choice.kind == FRESH
            else:
                new_table = choice.new_table
                if new_table:
                    self.tables[u].append(z)
                    table = self.usage[u].append()
                    self.franchise.bump(t, z)
                else:
                    table = choice.table
                self.usage[u].bump(t, table)
        if not self.single_topic and len(words):
            np.add.at(self.word_counts[z], words, 1.0)
            self.totals[z] += len(words)
        self.event_count[z] += 1
        self.n_kv[z, u] += 1
        self.S[z, u] += 1.0
        self.G[z, u] += 1.0
        self._decay = None

        n = self.n
        if n == len(self.s):
            for name in ("s", "z", "l", "table", "topic_logp"):
                setattr(self, name, _grow(getattr(self, name), n + 1))
        self.s[n] = choice.trigger
        self.z[n] = z
        self.l[n] = new_table
        self.topic_logp[n] = topic_logp
        self.table[n] = table
        self.n = n + 1
        self.t_last = t
        cfg = self.config
        if cfg.rescore_every and self.n >= self.next_rescore:
            self.rescore()
            self.rescore_betas()
            self.next_rescore = self.n + max(cfg.rescore_every, int(cfg.rescore_growth * self.n))
        elif self.n % self.config.refresh_every == 0:
            self.refresh()
        return BranchingRecord(n, choice.trigger, z, new_table, table)

    def refresh(self) -> None:
        """Reweight every topic's decay-rate draws, then recompute the cached
        kernels and rate estimates."""
        K = self.K
        if K and not self.config.rescore_every:
            lw = self.beta_log_weights()
            self.beta_logw[:K] = lw
            w = np.exp(lw - lw.max(axis=1, keepdims=True))
            self.W[:K] = w / w.sum(axis=1, keepdims=True)
            for k in range(K):
                self.cutoff[k] = kernel_cutoff(self.beta_samples[k], self.W[k], self.truncation)
            self.G[:K] = np.einsum("kvm,km->kv", self.S[:K], self.W[:K])
        self._set_rates(self.rate_estimates(cached=True))

    def kernel(self, topics: np.ndarray, lags: np.ndarray) -> np.ndarray:
        """Mixture kernel of each topic in ``topics`` at the matching lag."""
        return np.einsum("cm,cm->c", self.W[topics], np.exp(-self.beta_samples[topics] * lags[:, None]))

    def rescore(self) -> None:
        """Re-estimate the rates over the whole history by EM, with every
        event's trigger as the missing data, then refresh.

        Given the rates and topics, triggers of different events are
        independent: event i is exogenous with weight
        mu[u_i] * exp(topic_logp[i]) or triggered by an earlier event j of
        the same topic with weight alpha[u_j, u_i] * kernel(t_i - t_j). The
        E-step replaces the exogenous, trigger and lag statistics by their
        expectations under these weights; the M-step is
        :meth:`rate_estimates`. Plain EM crawls along the flat directions of
        the likelihood, so steps are extrapolated (SQUAREM). The kernels are
        held fixed throughout.
        """
        K, n, U = self.K, self.n, self.hyper.n_users
        if not K or not n:
            return
        times = self.log.times[:n]
        users = self.log.users[:n]
        z = self.z[:n]
        I, J = window_pairs(times, self.cutoff[:K].max())
        lag = times[I] - times[J]
        keep = (z[I] == z[J]) & (lag < self.cutoff[z[I]])
        I, J, lag = I[keep], J[keep], lag[keep]
        zp = z[I]
        kern = self.kernel(zp, lag)
        pair = users[J] * U + users[I]
        prior_exo = np.exp(self.topic_logp[:n])
        resp = np.zeros(len(I))

        def step(theta: np.ndarray) -> np.ndarray:
            mu, alpha = theta[:U], theta[U:]
            comp = alpha[pair] * kern
            exo = mu[users] * prior_exo
            total = exo + np.bincount(I, weights=comp, minlength=n)
            np.divide(comp, total[I], out=resp)
            self.exo_count = np.bincount(users, weights=exo / total, minlength=U)
            self.trig_count = np.bincount(pair, weights=resp, minlength=U * U).reshape(U, U)
            r = self.rate_estimates()
            return np.concatenate([r.mu_hat, r.alpha_hat.ravel()])

        theta = np.concatenate([self.mu_hat, self.alpha_hat.ravel()])
        for _ in range(self.config.rescore_iters):
            t1 = step(theta)
            t2 = step(t1)
            r = t1 - theta
            v = t2 - 2 * t1 + theta
            nv = np.linalg.norm(v)
            a = min(-np.linalg.norm(r) / nv, -1.0) if nv > 0 else -1.0
            jump = theta - 2 * a * r + a * a * v
            if not np.all(np.isfinite(jump)):
                jump = t2
            new = step(np.maximum(jump, 1e-12))
            change = np.linalg.norm(new - theta) / max(np.linalg.norm(theta), 1e-300)
            theta = new
            if change < self.config.rescore_tol:
                break
        self.lag_sum[:K] = np.bincount(zp, weights=resp * lag, minlength=K)
        self.refresh()

    def rescore_betas(self, span: float = 2.0, chunk: int = 1 << 14) -> None:
        """Reweight every topic's decay-rate draws by the likelihood of the
        event times given topics, with triggers summed out.

        Under draw b of topic k the influence of topic-k parents is scaled by
        b / beta_hat[k], which keeps their expected offspring fixed while the
        kernel shape varies. Only draws within a factor ``span`` of the
        current estimate are scored; the rest get zero weight until the
        estimate moves toward them.
        """
        K, n = self.K, self.n
        if not K or not n:
            return
        times = self.log.times[:n]
        users = self.log.users[:n]
        z = self.z[:n]
        beta_hat = self.beta_estimates()
        exo = self.mu_hat[users] * np.exp(self.topic_logp[:n])
        E = self._exposures()
        for k in range(K):
            idx = np.nonzero(z == k)[0]
            live = np.abs(np.log(self.beta_samples[k] / beta_hat[k])) <= math.log(span)
            if not live.any():
                live = self.W[k] == self.W[k].max()
            B = self.beta_samples[k, live]
            scale = B / beta_hat[k]
            tk, uk = times[idx], users[idx]
            I, J = window_pairs(tk, self.truncation / B.min())
            lag = tk[I] - tk[J]
            a = self.alpha_hat[uk[J], uk[I]]
            exc = np.zeros((len(idx), len(B)))
            for lo in range(0, len(I), chunk):
                sl = slice(lo, lo + chunk)
                Ic = I[sl]
                # I is sorted, so each row is one contiguous run
                starts = np.flatnonzero(np.r_[True, Ic[1:] != Ic[:-1]])
                vals = a[sl, None] * np.exp(-np.outer(lag[sl], B))
                exc[Ic[starts]] += np.add.reduceat(vals, starts, axis=0)
            dens = exo[idx, None] + exc * scale
            ll = np.log(dens).sum(axis=0) - scale * (self.A @ E[k][:, live])
            self.beta_logw[k] = -np.inf
            self.beta_logw[k, live] = ll
            w = np.exp(ll - ll.max())
            self.W[k] = 0.0
            self.W[k, live] = w / w.sum()
            self.cutoff[k] = kernel_cutoff(self.beta_samples[k], self.W[k], self.truncation)
        self.G[:K] = np.einsum("kvm,km->kv", self.S[:K], self.W[:K])
        self._set_rates(self.rate_estimates())

    def _exposures(self) -> np.ndarray:
        """E[k, v, m]: integrated kernel of topic-k events of user v up to
        t_last at every decay-rate draw."""
        K = self.K
        B = self.beta_samples[:K, None, :]
        return (self.n_kv[:K, :, None] - self.S[:K]) / B

    def beta_log_weights(self) -> np.ndarray:
        """Log importance weights of the decay-rate draws given the branching.

        The influence matrix is integrated out under its Gamma prior; while
        one topic's draws are scored, the other topics contribute their
        exposure under the cached kernels. With a known influence matrix
        the plain likelihood is used instead.
        """
        K = self.K
        B = self.beta_samples[:K]
        E = self._exposures()
        lw = -B * self.lag_sum[:K, None]
        if self.config.fixed_alpha is not None:
            return lw - np.tensordot(self.A, E, axes=([0], [1]))
        a, b = self.hyper.alpha_prior
        U = self.hyper.n_users
        cur = np.einsum("kvm,km->kv", E, self.W[:K])
        rest = cur.sum(axis=0)[None, :] - cur
        shape = U * a + self.trig_count.sum(axis=1)
        return lw - np.einsum("v,kvm->km", shape, np.log(b + rest[:, :, None] + E))

    # -- estimates ---------------------------------------------------------

    def beta_estimates(self) -> np.ndarray:
        """Posterior mean decay rate of every topic under the cached weights."""
        K = self.K
        return (self.W[:K] * self.beta_samples[:K]).sum(axis=1)

    def beta_estimate(self, k: int) -> float:
        if not 0 <= k < self.K:
            raise KeyError(f"unknown topic {k}")
        return float(self.beta_estimates()[k])

    def rate_estimates(self, t_now: float | None = None, cached: bool = False) -> RateEstimates:
        """Conjugate Gamma posterior means of the exogenous rates and influence
        matrix given this particle's branching structure, with exposures under
        the cached kernels. ``cached`` is accepted for symmetry and ignored
        when ``t_now`` is the last event time.
        """
        hp, cfg = self.hyper, self.config
        t_now = self.t_last if t_now is None else t_now
        if t_now < self.t_last:
            raise DomainError(f"rates requested at {t_now} before last event {self.t_last}")
        a_mu, b_mu = hp.mu_prior
        a_al, b_al = hp.alpha_prior
        elapsed = t_now - cfg.start_time
        mu = (a_mu + self.exo_count) / (b_mu + elapsed)
        K = self.K
        exposure = np.zeros(hp.n_users)
        if K:
            S = self.S[:K]
            if t_now != self.t_last:
                S = S * np.exp(-self.beta_samples[:K] * (t_now - self.t_last))[:, None, :]
            E = (self.n_kv[:K, :, None] - S) / self.beta_samples[:K, None, :]
            exposure = np.einsum("kvm,km->v", E, self.W[:K])
        alpha = (a_al + self.trig_count) / (b_al + exposure[:, None])
        if cfg.fixed_mu is not None:
            mu = np.asarray(cfg.fixed_mu, float)
        if cfg.fixed_alpha is not None:
            alpha = np.asarray(cfg.fixed_alpha, float)
        return RateEstimates(mu, alpha)

    def intensity(self, u: int, t: float) -> float:
        """Intensity of user ``u`` at ``t >= t_last`` under the cached rates."""
        K = self.K
        lam = self.mu_hat[u]
        if K:
            G = np.einsum("kvm,km->v", self.S[:K], self.W[:K] * self.decay(t))
            lam += float(self.alpha_hat[:, u] @ G)
        return float(lam)

    def total_compensator(self, t: float) -> float:
        """Sum over users of the integrated intensity over ``[t_last, t]``."""
        K = self.K
        total = self.mu_hat.sum() * (t - self.t_last)
        if K:
            B = self.beta_samples[:K]
            reach = np.tensordot(self.A, self.S[:K], axes=([0], [1]))
            total += float((reach * self.W[:K] * (1.0 - self.decay(t)) / B).sum())
        return float(total)

    # -- views -------------------------------------------------------------

    @property
    def records(self) -> list[BranchingRecord]:
        return [
            BranchingRecord(i, int(self.s[i]), int(self.z[i]), bool(self.l[i]), int(self.table[i]))
            for i in range(self.n)
        ]

    def topic(self, k: int) -> TopicAtom:
        if not 0 <= k < self.K:
            raise KeyError(f"unknown topic {k}")
        return TopicAtom(
            id=k,
            word_counts=self.word_counts[k].astype(np.int64),
            franchise_count=self.franchise.counter(k),
            beta_samples=self.beta_samples[k].copy(),
            beta_log_weights=self.beta_logw[k].copy(),
            event_count=int(self.event_count[k]),
        )

    def user_state(self, u: int) -> UserState:
        vec = self.usage[u]
        return UserState(
            user=u,
            local_topics=list(self.tables[u]),
            usage=[vec.counter(j) for j in range(vec.size)],
            exo_event_count=int(self.exo_count[u]),
            triggered_counts=self.trig_count[:, u].astype(np.int64),
        )


def window_pairs(times: np.ndarray, width: float) -> tuple[np.ndarray, np.ndarray]:
    """All index pairs (i, j) with j < i and times[i] - times[j] <= width."""
    n = len(times)
    lo = np.searchsorted(times, times - width, side="left")
    counts = np.arange(n) - lo
    I = np.repeat(np.arange(n), counts)
    starts = np.repeat(lo - np.concatenate([[0], np.cumsum(counts)[:-1]]), counts)
    J = np.arange(len(I)) + starts
    return I, J


def kernel_cutoff(samples: np.ndarray, weights: np.ndarray, truncation: float) -> float:
    """Smallest lag among ``truncation / samples`` at which the mixture
    kernel sum_m weights[m] exp(-samples[m] lag) is below exp(-truncation)."""
    lags = np.sort(truncation / samples)
    vals = np.exp(-np.outer(lags, samples)) @ weights
    below = np.nonzero(vals <= math.exp(-truncation))[0]
    return float(lags[below[0]]) if len(below) else float(lags[-1])


def choice_from_record(particle: Particle, r: BranchingRecord) -> Choice:
    if r.trigger != SELF:
        return Choice(ENDO, r.trigger, r.topic, -1)
    if r.topic == particle.K:
        return Choice(FRESH, SELF, r.topic, -1)
    if particle.single_topic:
        return Choice(LOCAL, SELF, r.topic, -1)
    if r.new_table:
        return Choice(NEW, SELF, r.topic, len(particle.tables[particle.log.users[r.index]]))
    return Choice(LOCAL, SELF, r.topic, r.table)


def replay(
    hyper: Hyperparams,
    config: InferenceConfig,
    events: Sequence[Event],
    records: Sequence[BranchingRecord],
    beta_samples: Sequence[np.ndarray],
    log_: EventLog | None = None,
) -> tuple[Particle, float]:
    """Rebuild a particle by forcing the given records through the update path.

    ``beta_samples[k]`` are the prior draws of topic ``k``. Returns the
    particle and its accumulated log predictive weight.
    """
    if log_ is None:
        log_ = EventLog()
        for e in events:
            log_.append(e)
    p = Particle(hyper, config, log_)
    logw = 0.0
    for i, r in enumerate(records):
        prop = p.propose(i)
        logw += prop.log_marginal
        p.advance(log_.times[i])
        choice = choice_from_record(p, r)
        samples = beta_samples[r.topic] if choice.kind == FRESH else None
        p.apply(i, choice, beta_samples=samples, topic_logp=float(prop.topic_prior[r.topic]))
    return p, logw


def ess(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Ancestor indices from systematic resampling with one uniform offset."""
    w = np.asarray(weights, dtype=float)
    P = len(w)
    positions = (rng.random() + np.arange(P)) / P
    cum = np.cumsum(w)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


class ParticleFilter:
    """Collapsed SMC with the exact posterior as proposal.

    Events are fed one at a time through :meth:`observe`. ``log_evidence``
    accumulates the log of the running marginal likelihood estimate.
    """

    def __init__(self, hyper: Hyperparams, config: InferenceConfig | None = None,
                 seed: int | np.random.Generator | None = None):
        self.hyper = hyper
        self.config = config or InferenceConfig()
        self.rng = np.random.default_rng(seed)
        self.log = EventLog()
        P = hyper.n_particles
        self.particles = [Particle(hyper, self.config, self.log) for _ in range(P)]
        self.log_weights = np.full(P, -math.log(P))
        self.t_last = self.config.start_time
        self.log_evidence = 0.0
        self.n_resamples = 0

    @property
    def weights(self) -> np.ndarray:
        w = np.exp(self.log_weights - self.log_weights.max())
        return w / w.sum()

    def ess(self) -> float:
        return ess(self.weights)

    def observe(self, e: Event) -> None:
        e.validate(self.hyper.n_users, self.hyper.vocab_size)
        if len(self.log) and not e.time > self.t_last:
            raise DomainError(f"event at {e.time} does not follow last event at {self.t_last}")
        if e.time < self.config.start_time:
            raise DomainError(f"event at {e.time} precedes start time {self.config.start_time}")
        index = self.log.append(e)
        inc = np.empty(len(self.particles))
        for j, p in enumerate(self.particles):
            prop = p.propose(index)
            inc[j] = prop.log_marginal
            if not np.isfinite(prop.log_marginal):
                # degenerate: keep the particle consistent, drop its weight
                p.advance(e.time)
                p.apply(index, Choice(FRESH, SELF, p.K, -1), rng=self.rng)
                continue
            choice = prop.sample(self.rng)
            p.advance(e.time)
            p.apply(index, choice, rng=self.rng, topic_logp=float(prop.topic_prior[choice.topic]))
        inc = np.where(np.isfinite(inc), inc, -np.inf)
        if not np.isfinite(inc).any():
            raise FloatingPointError(f"all particles degenerate at event {index} ({e})")
        lw = self.log_weights + inc
        top = lw.max()
        norm = top + math.log(np.exp(lw - top).sum())
        self.log_evidence += norm
        self.log_weights = lw - norm
        self.t_last = e.time
        if self.ess() < self.config.ess_threshold * len(self.particles):
            self.resample()

    def observe_all(self, events: Iterable[Event]) -> None:
        for e in events:
            self.observe(e)

    def resample(self) -> None:
        idx = systematic_resample(self.weights, self.rng)
        seen = set()
        new = []
        for i in idx:
            p = self.particles[i]
            new.append(p.copy() if i in seen else p)
            seen.add(i)
        self.particles = new
        P = len(new)
        self.log_weights = np.full(P, -math.log(P))
        self.n_resamples += 1

    def map_particle(self) -> Particle:
        return self.particles[int(np.argmax(self.log_weights))]

    def predictive_log_density(self, t: float, u: int) -> float:
        """Log density that the next event happens at ``t`` and is by ``u``,
        mixed over particles."""
        if t < self.t_last:
            raise DomainError(f"prediction at {t} precedes last event {self.t_last}")
        vals = np.array([
            math.log(p.intensity(u, t)) - p.total_compensator(t) for p in self.particles
        ])
        lw = self.log_weights + vals
        top = lw.max()
        return float(top + math.log(np.exp(lw - top).sum()))


@dataclass
class Summary:
    """Read-only view of the highest-weight particle."""

    records: list[BranchingRecord]
    roots: np.ndarray
    n_topics: int
    topics_per_user: np.ndarray
    top_words: list[list[tuple[int, int]]]
    betas: np.ndarray
    rates: RateEstimates
    topic_sizes: np.ndarray
    t_now: float

    @property
    def topics(self) -> np.ndarray:
        return np.array([r.topic for r in self.records], dtype=np.int64)

    @property
    def cascades(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, root in enumerate(self.roots):
            out.setdefault(int(root), []).append(i)
        return out


def cascade_roots(triggers: Sequence[int]) -> np.ndarray:
    """Root event of every event's cascade (connected component of trigger links)."""
    roots = np.empty(len(triggers), dtype=np.int64)
    for i, s in enumerate(triggers):
        roots[i] = i if s == SELF else roots[s]
    return roots


def map_summary(pf: ParticleFilter, n_top_words: int = 10) -> Summary:
    if not len(pf.log):
        raise ValueError("no events observed")
    p = pf.map_particle()
    K = p.K
    top_words = []
    for k in range(K):
        counts = p.word_counts[k]
        order = np.argsort(-counts, kind="stable")[:n_top_words]
        top_words.append([(int(w), int(counts[w])) for w in order if counts[w] > 0])
    return Summary(
        records=p.records,
        roots=cascade_roots(p.s[: p.n]),
        n_topics=K,
        topics_per_user=np.array([len(set(t)) if t else 0 for t in p.tables]),
        top_words=top_words,
        betas=p.beta_estimates() if K else np.zeros(0),
        rates=p.rate_estimates(pf.t_last),
        topic_sizes=p.event_count[:K].copy(),
        t_now=pf.t_last,
    )
