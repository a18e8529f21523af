"""Domain types, hyperparameters, decayed counters and the exponential kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SELF = -1  # trigger id of an exogenous event


class DomainError(ValueError):
    """Raised when a time or interval argument runs backwards."""


@dataclass(frozen=True, slots=True)
class Event:
    """One observation: user ``user`` shares the token bag ``doc`` at ``time``.

    ``doc`` is stored as a sorted tuple so that two events with the same
    multiset of tokens compare (and serialize) identically.
    """

    time: float
    user: int
    doc: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.time >= 0:
            raise ValueError(f"event time must be non-negative, got {self.time}")
        if self.user < 0:
            raise ValueError(f"user id must be non-negative, got {self.user}")
        doc = tuple(sorted(int(w) for w in self.doc))
        if doc and doc[0] < 0:
            raise ValueError("token ids must be non-negative")
        object.__setattr__(self, "doc", doc)

    def validate(self, n_users: int, vocab_size: int) -> None:
        if self.user >= n_users:
            raise ValueError(f"user {self.user} out of range [0, {n_users})")
        if self.doc and self.doc[-1] >= vocab_size:
            raise ValueError(f"token {self.doc[-1]} out of range [0, {vocab_size})")


@dataclass
class Hyperparams:
    """Fixed model constants.

    ``beta_prior``, ``mu_prior`` and ``alpha_prior`` are (shape, rate) pairs of
    Gamma distributions.
    """

    n_users: int
    vocab_size: int
    gamma: float = 1.0
    zeta: float = 1.0
    nu: float = 0.001
    eta: float = 0.1
    beta_prior: tuple[float, float] = (2.0, 1.0)
    mu_prior: tuple[float, float] = (1.0, 10.0)
    alpha_prior: tuple[float, float] = (0.1, 1.0)
    n_beta_samples: int = 64
    n_particles: int = 8

    def __post_init__(self):
        self.beta_prior = tuple(float(x) for x in self.beta_prior)
        self.mu_prior = tuple(float(x) for x in self.mu_prior)
        self.alpha_prior = tuple(float(x) for x in self.alpha_prior)
        for name in ("gamma", "zeta", "eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.nu >= 0:
            raise ValueError("nu must be non-negative")
        for name in ("beta_prior", "mu_prior", "alpha_prior"):
            shape, rate = getattr(self, name)
            if not (shape > 0 and rate > 0):
                raise ValueError(f"{name} must have positive shape and rate")
        if self.n_beta_samples < 1 or self.n_particles < 1:
            raise ValueError("sample and particle counts must be >= 1")
        if self.n_users < 1 or self.vocab_size < 1:
            raise ValueError("n_users and vocab_size must be >= 1")


def kernel_eval(beta: float, t: float, t_s: float) -> float:
    if t < t_s:
        raise DomainError(f"kernel evaluated before its source ({t} < {t_s})")
    return math.exp(-beta * (t - t_s))


def kernel_integral(beta: float, t_s: float, a: float, b: float) -> float:
    """Integral of exp(-beta (tau - t_s)) over [max(a, t_s), b]."""
    if a > b:
        raise DomainError(f"empty interval [{a}, {b}]")
    lo = max(a, t_s)
    if lo >= b:
        return 0.0
    if math.isinf(b):
        return math.exp(-beta * (lo - t_s)) / beta
    # -expm1 keeps precision when beta * (b - lo) is tiny
    return math.exp(-beta * (lo - t_s)) * -math.expm1(-beta * (b - lo)) / beta


@dataclass(frozen=True, slots=True)
class DecayedCounter:
    """Exponentially decayed sum stored lazily as a value at an anchor time."""

    nu: float
    value_at_anchor: float = 0.0
    anchor_time: float = 0.0

    def read(self, t: float) -> float:
        if t < self.anchor_time:
            raise DomainError(f"counter read at {t} before anchor {self.anchor_time}")
        if self.value_at_anchor == 0.0:
            return 0.0
        return self.value_at_anchor * math.exp(-self.nu * (t - self.anchor_time))

    def bump(self, t: float, amount: float = 1.0) -> "DecayedCounter":
        return DecayedCounter(self.nu, self.read(t) + amount, t)


class DecayedVector:
    """A growable array of decayed counters sharing one rate and anchor.

    Same semantics as a list of :class:`DecayedCounter`, but reads are a
    single vector operation.
    """

    __slots__ = ("nu", "values", "anchor", "size")

    def __init__(self, nu: float, capacity: int = 4):
        self.nu = nu
        self.values = np.zeros(capacity)
        self.anchor = 0.0
        self.size = 0

    def copy(self) -> "DecayedVector":
        out = DecayedVector.__new__(DecayedVector)
        out.nu = self.nu
        out.values = self.values.copy()
        out.anchor = self.anchor
        out.size = self.size
        return out

    def read(self, t: float) -> np.ndarray:
        if t < self.anchor:
            raise DomainError(f"counter read at {t} before anchor {self.anchor}")
        v = self.values[: self.size]
        if self.nu == 0.0 or t == self.anchor:
            return v.copy()
        return v * math.exp(-self.nu * (t - self.anchor))

    def append(self) -> int:
        if self.size == len(self.values):
            self.values = np.concatenate([self.values, np.zeros(len(self.values))])
        self.size += 1
        return self.size - 1

    def bump(self, t: float, index: int, amount: float = 1.0) -> None:
        if t < self.anchor:
            raise DomainError(f"counter bumped at {t} before anchor {self.anchor}")
        if t != self.anchor and self.nu != 0.0:
            self.values[: self.size] *= math.exp(-self.nu * (t - self.anchor))
        self.anchor = t
        self.values[index] += amount

    def counter(self, index: int) -> DecayedCounter:
        return DecayedCounter(self.nu, float(self.values[index]), self.anchor)


@dataclass(frozen=True, slots=True)
class BranchingRecord:
    """Latent provenance of one event.

    ``table`` is the index of the user's local topic the event was seated
    at (``-1`` for triggered events); it is needed to replay the decayed
    local counts exactly when a user holds two tables for the same topic.
    """

    index: int
    trigger: int
    topic: int
    new_table: bool
    table: int = -1

    @property
    def exogenous(self) -> bool:
        return self.trigger == SELF


@dataclass
class TopicAtom:
    id: int
    word_counts: np.ndarray
    franchise_count: DecayedCounter
    beta_samples: np.ndarray
    beta_log_weights: np.ndarray
    event_count: int

    @property
    def total_count(self) -> int:
        return int(self.word_counts.sum())


@dataclass
class UserState:
    user: int
    local_topics: list[int]
    usage: list[DecayedCounter]
    exo_event_count: int
    triggered_counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def check_records(records: Sequence[BranchingRecord]) -> None:
    """Assert that triggered events inherit their parent's topic."""
    for i, r in enumerate(records):
        if r.index != i:
            raise ValueError(f"record {i} carries index {r.index}")
        if r.trigger == SELF:
            continue
        if not 0 <= r.trigger < i:
            raise ValueError(f"record {i} triggered by future event {r.trigger}")
        if r.new_table:
            raise ValueError(f"triggered record {i} marked as opening a table")
        if records[r.trigger].topic != r.topic:
            raise ValueError(f"record {i} does not inherit topic of {r.trigger}")
