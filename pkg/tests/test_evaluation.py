import math

import numpy as np
import pytest

from hnp3.core import Event, Hyperparams
from hnp3.evaluation import (
    MetricsReport,
    baseline_hawkes_fit,
    fit,
    next_event_time_loglik,
    paired_bootstrap_ci,
    relative_error,
    split,
    warm_start,
)
from hnp3.inference import InferenceConfig, ParticleFilter
from hnp3.io import estimate_snapshot
from hnp3.simulator import SimulationConfig, simulate


def test_relative_error_examples():
    x = np.array([[1.0, 2.0], [3.0, 0.0]])
    assert relative_error(x, x) == 0.0
    assert relative_error(2 * x, x) == pytest.approx(1.0)
    assert relative_error([1.0, 0.0], [1.0, 1.0]) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(ValueError):
        relative_error([1.0], [0.0])
    with pytest.raises(ValueError):
        relative_error([1.0, 2.0], [1.0])


def poisson_filter():
    hp = Hyperparams(1, 1, n_particles=1)
    return ParticleFilter(hp, InferenceConfig(fixed_mu=[1.0], fixed_alpha=[[0.0]]), seed=0)


def test_poisson_next_event_density():
    pf = poisson_filter()
    pf.observe(Event(1.0, 0, (0,)))
    # log(mu exp(-mu gap)) with mu = 1, gap = 2
    assert next_event_time_loglik(pf, [Event(3.0, 0, (0,))])[0] == pytest.approx(-2.0, rel=1e-12)


def test_tiny_gap_gives_log_intensity():
    hp = Hyperparams(2, 2, n_particles=1)
    pf = ParticleFilter(hp, InferenceConfig(fixed_mu=[0.3, 0.2], fixed_alpha=[[0.5, 0.1], [0.0, 0.2]]), seed=0)
    pf.observe(Event(1.0, 0, (0,)))
    p = pf.map_particle()
    t = 1.0 + 1e-12
    assert pf.predictive_log_density(t, 1) == pytest.approx(math.log(p.intensity(1, 1.0)), abs=1e-9)


def test_heldout_must_follow_training():
    pf = poisson_filter()
    pf.observe(Event(1.0, 0, (0,)))
    with pytest.raises(ValueError):
        next_event_time_loglik(pf, [Event(0.5, 0, (0,))])


def poisson_stream(seed):
    cfg = SimulationConfig(n_users=2, n_events=2000, mu=[0.5, 1.5], alpha=[[0.0, 0.0], [0.0, 0.0]], betas=[1.0])
    return simulate(cfg, Hyperparams(2, 200), seed=seed)


def hawkes_loglik(events, mu, alpha, beta):
    """Exact log-likelihood of a plain exponential-kernel Hawkes process."""
    U = len(mu)
    R = np.zeros(U)
    last, ll = 0.0, 0.0
    for e in events:
        R *= math.exp(-beta * (e.time - last))
        last = e.time
        ll += math.log(mu[e.user] + alpha[:, e.user] @ R)
        R[e.user] += 1.0
    T = events[-1].time
    comp = mu.sum() * T + sum(alpha[e.user].sum() * -math.expm1(-beta * (T - e.time)) / beta for e in events)
    return ll - comp


@pytest.mark.xfail(reason="on Poisson data the Hawkes fit moves part of the rate into spurious "
                          "excitation; on this stream even the exact maximum-likelihood fit is 9.7% low",
                   strict=False)
def test_baseline_recovers_poisson_rate():
    events, truth = poisson_stream(0)
    pf, _ = baseline_hawkes_fit(events, Hyperparams(2, 200, n_particles=4), seed=0)
    mu = pf.map_particle().rate_estimates(pf.t_last).mu_hat
    np.testing.assert_allclose(mu, truth.mu, rtol=0.1)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_baseline_fit_is_no_worse_than_poisson(seed):
    """The Hawkes family contains the Poisson model, so a converged fit must
    explain the times about as well as the Poisson maximum-likelihood fit.
    The estimates are posterior means on a grid of decay rates, not maxima,
    hence the small allowance; an EM stuck on the flat ridge of the
    likelihood falls short by several nats."""
    events, _ = poisson_stream(seed)
    pf, _ = baseline_hawkes_fit(events, Hyperparams(2, 200, n_particles=4), seed=seed)
    p = pf.map_particle()
    r = p.rate_estimates(pf.t_last)
    T = events[-1].time
    counts = np.bincount([e.user for e in events], minlength=2)
    poisson = float((counts * np.log(counts / T)).sum() - counts.sum())
    fitted = hawkes_loglik(events, r.mu_hat, r.alpha_hat, p.beta_estimate(0))
    assert fitted >= poisson - 2.0


def test_baseline_with_no_events_is_the_prior():
    hp = Hyperparams(2, 5)
    pf, rows = baseline_hawkes_fit([], hp, seed=0)
    r = pf.map_particle().rate_estimates()
    np.testing.assert_allclose(r.mu_hat, hp.mu_prior[0] / hp.mu_prior[1])
    np.testing.assert_allclose(r.alpha_hat, hp.alpha_prior[0] / hp.alpha_prior[1])
    assert rows == []


def test_baseline_matches_full_model_on_single_topic_data():
    diffs = []
    for seed in range(10):
        cfg = SimulationConfig(n_users=4, vocab_size=50, n_events=500, mu=0.2, betas=[1.0], alpha_max=0.4)
        events, _ = simulate(cfg, Hyperparams(4, 50), seed=seed)
        train, test = split(events, 0.8)
        hp = Hyperparams(4, 50, n_particles=4)
        full, _ = fit(train, hp, seed=seed)
        base, _ = baseline_hawkes_fit(train, hp, seed=seed)
        diffs.append(next_event_time_loglik(full, test) - next_event_time_loglik(base, test))
    _, lo, hi = paired_bootstrap_ci(np.concatenate(diffs))
    assert lo <= 0.0 <= hi


def test_predictions_are_prequential():
    events, _ = simulate(SimulationConfig(n_events=400), Hyperparams(10, 200), seed=1)
    train, test = split(events, 0.75)
    hp = Hyperparams(10, 200, n_particles=3)
    a, _ = fit(train, hp, seed=1)
    first = next_event_time_loglik(a, test[:40])
    second = next_event_time_loglik(a, test[40:])
    b, _ = fit(train, hp, seed=1)
    whole = next_event_time_loglik(b, test)
    np.testing.assert_allclose(np.concatenate([first, second]), whole, rtol=0, atol=1e-9)
    assert np.all(np.isfinite(whole))


def test_split_and_checkpoints():
    events, truth = simulate(SimulationConfig(n_events=300), Hyperparams(10, 200), seed=2)
    train, test = split(events, 0.8)
    assert len(train) == 240 and len(test) == 60
    _, rows = fit(events, Hyperparams(10, 200, n_particles=2), seed=2, truth=truth, checkpoint_every=100)
    assert [r["events"] for r in rows] == [100, 200, 300]
    assert all(r["alpha_error"] >= 0 and r["mu_error"] >= 0 for r in rows)
    MetricsReport(checkpoints=rows)
    with pytest.raises(ValueError):
        MetricsReport(checkpoints=rows[::-1])


def test_paired_bootstrap():
    d = np.random.default_rng(0).normal(1.0, 0.1, 500)
    mean, lo, hi = paired_bootstrap_ci(d)
    assert lo < mean < hi and lo > 0.9
    assert paired_bootstrap_ci(d) == (mean, lo, hi)


def test_warm_start_rebuilds_the_map_particle():
    events, _ = simulate(SimulationConfig(n_events=300), Hyperparams(10, 200), seed=3)
    hp = Hyperparams(10, 200, n_particles=2)
    pf, _ = fit(events[:200], hp, seed=3)
    snap = estimate_snapshot(pf)
    warm = warm_start(snap, events, hp, seed=3)
    p, q = pf.map_particle(), warm.map_particle()
    assert q.records == p.records
    np.testing.assert_allclose(q.alpha_hat, p.alpha_hat, rtol=1e-9)
    assert len(warm.particles) == 2 and warm.t_last == pf.t_last
    ll = next_event_time_loglik(warm, events[200:210])
    assert np.all(np.isfinite(ll))
    with pytest.raises(ValueError):
        warm_start(snap, events[:50], hp)
    with pytest.raises(ValueError):
        warm_start({"kind": "truth"}, events, hp)
