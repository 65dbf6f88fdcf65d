import math

import numpy as np
import pytest

from ultrarate.dynamics import SimConfig
from ultrarate.ergodic import (
    estimate_decay,
    fit_drift_bound,
    fit_log_linear,
    h_norm_sq,
    h_projection,
    lyapunov_curve,
    lyapunov_value,
    ou_exact,
    reliable_window,
    sample_invariant,
    tanh_functional,
)
from ultrarate.errors import DomainError, EmptyWindowError
from ultrarate.rates import FastDiffusionSpec
from ultrarate.spectral import DiagonalNoise, LinearDrift, PorousDrift

PI = math.pi


def test_ou_exact_values():
    mean, var = ou_exact(PI, 1.0, 1, math.inf, 3.0)
    assert (mean, var) == (0.0, 0.5)
    mean, var = ou_exact(PI, 2.0, 2, 0.5, 1.0)
    assert mean == pytest.approx(math.exp(-2.0))
    assert var == pytest.approx(4 * (1 - math.exp(-4.0)) / 8)
    assert ou_exact(PI, 1.0, 1, 0.0, 2.0) == (2.0, 0.0)
    for bad in (dict(sigma=0.0, t=1.0), dict(sigma=1.0, t=-1.0)):
        with pytest.raises(DomainError):
            ou_exact(PI, bad["sigma"], 1, bad["t"], 0.0)


def test_functionals():
    c = np.array([[2.0, 8.0, 0.0]])
    assert h_projection(2, PI)(c)[0] == pytest.approx(2.0)
    assert tanh_functional(1, PI, scale=2.0)(c)[0] == pytest.approx(math.tanh(1.0))
    assert h_norm_sq(PI)(c)[0] == pytest.approx(4 + 16)
    assert lyapunov_value(np.zeros(3), PI, 1.0, 0.5) == pytest.approx(math.e)


def test_reliable_window():
    t = np.arange(6.0)
    m = np.array([5, 4, 3, 2, 0.1, 0.1])
    s = np.full(6, 0.2)
    assert reliable_window(t, m, s) == (1, 3)
    with pytest.raises(EmptyWindowError):
        reliable_window(t, np.full(6, 0.1), s)
    with pytest.raises(EmptyWindowError):
        reliable_window(t, np.array([5, 4, 0.1, 0.1, 0.1, 0.1]), s)


def test_fit_log_linear_recovers_rate(rng):
    t = np.linspace(0.1, 3, 30)
    true = 2.0 * np.exp(-1.3 * t)
    se = 0.01 * true
    m = true * (1 + 0.01 * rng.normal(size=t.size))
    rate, rate_se, c = fit_log_linear(t, m, se)
    assert abs(rate - 1.3) < 4 * rate_se
    assert c == pytest.approx(math.log(2.0), abs=0.02)


def test_fit_drift_bound_is_upper_envelope(rng):
    t = np.linspace(0, 10, 41)
    v0 = 20.0
    true = v0 * np.exp(-0.7 * t) + 3.0
    se = np.full(t.size, 0.05)
    se[0] = 0.0
    m = true + se * rng.normal(size=t.size)
    m[0] = v0
    beta, c, worst = fit_drift_bound(t, m, se, v0)
    assert worst <= 3.0
    assert beta == pytest.approx(0.7, rel=0.1)
    assert c == pytest.approx(3.0, rel=0.05)


def test_fit_drift_bound_flags_growth():
    t = np.linspace(0, 5, 21)
    m = 1.0 + t  # grows past V(x0): no bound of the form V0 e^{-bt} + c with small c
    m[0] = 1.0
    se = np.full(t.size, 1e-6)
    beta, c, worst = fit_drift_bound(t, m, se, 1.0)
    assert c >= m.max() - 1.0 - 1e-3 or worst > 3.0


def test_sample_invariant_ou_variance():
    cfg = SimConfig(n=4, m=16, dt=1e-2, seed=1)
    s = sample_invariant(LinearDrift(), cfg, DiagonalNoise.scalar(1.0), PI, burn_in=5.0,
                         n_samples=4000, thinning=1.0, n_chains=400, lam_prior=1.0)
    mean, se = s.estimate(lambda c: c[..., 0] ** 2)
    # implicit Euler stationary variance 1 / (2 lam + lam^2 dt)
    assert abs(mean - 1 / (2 + 1e-2)) < 3 * se
    assert s.samples.shape == (4000, 4)


def test_sample_invariant_rejects_short_burn_in():
    cfg = SimConfig(n=4, m=16, dt=1e-2)
    with pytest.raises(DomainError):
        sample_invariant(LinearDrift(), cfg, DiagonalNoise.scalar(1.0), PI, burn_in=1.0,
                         n_samples=10, thinning=1.0, lam_prior=1.0)
    with pytest.raises(DomainError):
        sample_invariant(LinearDrift(), cfg, DiagonalNoise.scalar(1.0), PI, burn_in=5.0,
                         n_samples=10, thinning=1.0, n_chains=3)


def test_estimate_decay_linear_first_mode():
    cfg = SimConfig(n=4, m=16, dt=1e-2, seed=4)
    x0 = np.array([3.0, 0.0, 0.0, 0.0])
    est = estimate_decay(h_projection(1, PI), x0, LinearDrift(), cfg, DiagonalNoise.scalar(1.0), PI,
                         times=np.arange(0.0, 3.01, 0.25), n_paths=4000, mu_hat=(0.0, 0.0))
    assert abs(est.fitted_rate - 1.0) < 0.15
    assert est.window[0] > 0


def test_estimate_decay_rejects_off_grid_times():
    cfg = SimConfig(n=4, m=16, dt=1e-2)
    with pytest.raises(DomainError):
        estimate_decay(h_projection(1, PI), np.ones(4), LinearDrift(), cfg, DiagonalNoise.scalar(1.0),
                       PI, times=[0.0, 0.005], n_paths=10, mu_hat=(0.0, 0.0))


def test_lyapunov_rejects_inadmissible():
    cfg = SimConfig(n=4, m=16, dt=1e-2)
    with pytest.raises(DomainError, match="κ"):
        lyapunov_curve(FastDiffusionSpec(PI, 0.5, 0.2), cfg, np.ones(4), [0.0, 1.0], 10)
    with pytest.raises(DomainError):
        lyapunov_curve(FastDiffusionSpec(PI, 0.2, 0.3), cfg, np.ones(4), [0.0, 1.0], 10)


def test_lyapunov_small_run():
    cfg = SimConfig(n=4, m=16, dt=2e-2, seed=2)
    x0 = np.array([10.0 * 1.0, 0, 0, 0])
    curve = lyapunov_curve(FastDiffusionSpec(PI, 0.5, 0.3), cfg, x0, np.arange(0, 4.01, 0.5), 100)
    assert curve.v0 == pytest.approx(float(lyapunov_value(x0, PI, 1.0, 0.5)))
    assert curve.means[0] == pytest.approx(curve.v0)
    assert np.all(np.isfinite(curve.means))
    assert curve.worst_excess <= 3.0 and curve.satisfied
    assert curve.bound(0.0) == pytest.approx(curve.v0 + curve.c)


def test_estimate_decay_without_signal():
    cfg = SimConfig(n=4, m=16, dt=1e-2)
    with pytest.raises(EmptyWindowError):
        estimate_decay(lambda c: np.zeros(c.shape[:-1]), np.ones(4), PorousDrift(2.0), cfg,
                       DiagonalNoise.scalar(1.0), PI, times=[0.0, 0.5, 1.0], n_paths=5, mu_hat=(0.0, 0.0))
