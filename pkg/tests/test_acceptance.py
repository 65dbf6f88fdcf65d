"""End-to-end acceptance checks at desk scale.

Each test records a one-line PASS/FAIL verdict through the ``verdict``
fixture; the lines are repeated in the terminal summary. Heavy Monte Carlo
criteria are marked ``slow`` (deselect with ``-m "not slow"``).
"""

import math
import time

import numpy as np
import pytest

import oracles
from ultrarate.dynamics import SimConfig, girsanov_weight_stats, zeta_energy_bound
from ultrarate.ergodic import estimate_decay, h_projection, lyapunov_curve, ou_exact, sample_invariant
from ultrarate.rates import (
    FastDiffusionSpec,
    GeneralRateParams,
    PLaplaceSpec,
    PorousMediumSpec,
    alpha_general,
    fast_diffusion_admissible,
    lambda_sup,
    p_laplace_rates,
    plaplace_log_lower_bounds,
    porous_log_lower_bounds,
    porous_medium_rates,
    rate_report,
)
from ultrarate.spectral import DiagonalNoise, LinearDrift, PLaplaceDrift, PorousDrift, QuadratureGrid
from ultrarate.verify import (
    check_contraction,
    check_eps_slope,
    check_fastdiff_pointwise,
    check_monotonicity_22,
    check_power_inequality,
    contraction_pairs,
    coupling_traces,
    power_inequality_margin,
)

PI = math.pi


def test_criterion_01_rate_constants(verdict):
    t0 = time.perf_counter()
    pm = porous_medium_rates(PorousMediumSpec(PI, 1.0, 2.0, 3.0))
    alpha_rel = oracles.rel(pm.report.alpha, oracles.alpha(2, 3, 1, 1))
    closed_rel = oracles.rel(pm.report.alpha, oracles.porous_alpha_closed(PI, 1, 2))
    pl = p_laplace_rates(PLaplaceSpec(PI, 1.0, 4.0))
    generic = alpha_general(GeneralRateParams(3.0, 4.0, pl.eta, pl.delta))
    p_rel = max(abs(pl.report.alpha - 6) / 6, abs(generic - 6) / 6,
                oracles.rel(oracles.plaplace_alpha_closed(PI, 1, 4), 6))
    elapsed = time.perf_counter() - t0
    ok = (pm.eta == pytest.approx(1.0, rel=1e-14) and pm.delta == pytest.approx(1.0, rel=1e-14)
          and max(alpha_rel, closed_rel) < 1e-12 and p_rel < 1e-12 and elapsed < 1.0)
    verdict(1, ok, f"alpha={pm.report.alpha:.10g} rel={max(alpha_rel, closed_rel):.1e}; "
                   f"p-Laplace alpha={pl.report.alpha:.15g} rel={p_rel:.1e}; {elapsed:.2f}s")
    assert ok


def test_criterion_02_lambda_optimizer(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    argmax = []
    for a, r in ((227.8125, 2.0), (6.0, 3.0)):
        _, t_star, grid_value = oracles.dense_sup(a, r, n=10**6)
        worst = max(worst, abs(lambda_sup(a, r)[0] - grid_value) / grid_value)
        argmax.append(t_star)
    rng = np.random.default_rng(2)
    bad = 0
    for params in oracles.random_params(rng, 1000):
        rep = rate_report(GeneralRateParams(*params))
        bad += not (rep.lam >= rep.lb_primary * (1 - 1e-12) and rep.lb_primary >= rep.lb_secondary * (1 - 1e-12))
    elapsed = time.perf_counter() - t0
    ok = (worst < 1e-6 and bad == 0 and abs(argmax[0] - 14.0) < 0.5 and abs(argmax[1] - 5.5) < 0.5
          and elapsed < 30)
    verdict(2, ok, f"dense-grid rel={worst:.1e} t0=({argmax[0]:.2f}, {argmax[1]:.2f}); "
                   f"ordering violations {bad}/1000; {elapsed:.1f}s")
    assert ok


def test_criterion_03_lower_bound_cross_formula(verdict):
    t0 = time.perf_counter()
    pm = porous_medium_rates(PorousMediumSpec(PI, 1.0, 2.0))
    porous_closed = math.exp(porous_log_lower_bounds(PI, 1.0, 2.0)[0])
    rel_porous = oracles.rel(pm.report.lb_primary, porous_closed)
    rel_oracle = oracles.rel(porous_closed, oracles.porous_lb_closed(PI, 1, 2))
    pl = p_laplace_rates(PLaplaceSpec(PI, 1.0, 4.0))
    plap_closed = math.exp(plaplace_log_lower_bounds(PI, 1.0, 4.0)[0])
    rel_plap = oracles.rel(pl.report.lb_primary, plap_closed)
    elapsed = time.perf_counter() - t0
    worst = max(rel_porous, rel_oracle, rel_plap)
    ok = (worst < 1e-10 and abs(porous_closed - 0.22410) < 5e-5 and abs(plap_closed - 0.39962) < 5e-6
          and elapsed < 1.0)
    verdict(3, ok, f"porous {porous_closed:.7f} p-Laplace {plap_closed:.7f} worst rel={worst:.1e}; "
                   f"{elapsed:.2f}s")
    assert ok


def test_criterion_04_scalar_inequalities(verdict):
    t0 = time.perf_counter()
    seq = np.random.SeedSequence(4).spawn(6)
    reports = [check_power_inequality(r, 10**6, np.random.default_rng(s)) for r, s in zip((1.5, 2.0, 3.0), seq)]
    reports += [check_fastdiff_pointwise(r, 10**6, np.random.default_rng(s))
                for r, s in zip((0.4, 0.5, 0.9), seq[3:])]
    s = np.array([1e-3, 0.5, 1.0, 7.0, 1e3])
    equality = max(float(np.max(np.abs(power_inequality_margin(s, -s, r)))) for r in (1.5, 2.0, 3.0))
    elapsed = time.perf_counter() - t0
    violations = sum(r.n_violations for r in reports)
    ok = violations == 0 and equality < 1e-12 and elapsed < 60
    verdict(4, ok, f"{violations} violations over 6 x 1e6 samples; |margin| at s=-t {equality:.1e}; "
                   f"{elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_05_discrete_monotonicity(verdict):
    t0 = time.perf_counter()
    n, grid = 16, QuadratureGrid(PI, 256)
    seq = np.random.SeedSequence(5).spawn(2)
    porous = check_monotonicity_22(PorousDrift(2.0), 3.0, 1.0, 1.0, 1000, n, grid, DiagonalNoise.scalar(1.0),
                                   np.random.default_rng(seq[0]))
    plap = check_monotonicity_22(PLaplaceDrift(4.0), 4.0, 8.0, 8.0, 1000, n, grid,
                                 DiagonalNoise.power_law(1.0, -1.0), np.random.default_rng(seq[1]))
    elapsed = time.perf_counter() - t0
    ok = porous.passed and plap.passed and elapsed < 300
    verdict(5, ok, f"porous {porous.n_violations}/{porous.n_trials} (worst {porous.worst_margin:.3f}); "
                   f"p-Laplace eta=delta=8 {plap.n_violations}/{plap.n_trials} "
                   f"(worst {plap.worst_margin:.3f}); {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_06_ou_oracle(verdict):
    t0 = time.perf_counter()
    cfg = SimConfig(n=16, m=64, dt=1e-3, seed=6)
    noise = DiagonalNoise.scalar(1.0)
    inv = sample_invariant(LinearDrift(), cfg, noise, PI, burn_in=8.0, n_samples=10**4, thinning=1.0,
                           lam_prior=1.0, run=1)
    v = inv.samples[:, 0]
    var = float(v.var(ddof=1))
    var_se = var * math.sqrt(2.0 / (len(v) - 1))
    exact = ou_exact(PI, 1.0, 1, math.inf, 0.0)[1]
    f = h_projection(1, PI)
    x0 = np.zeros(16)
    x0[0] = 5.0
    est = estimate_decay(f, x0, LinearDrift(), cfg, noise, PI, np.arange(0.0, 8.001, 0.25), 10**4,
                         inv.estimate(f), run=2)
    elapsed = time.perf_counter() - t0
    ok = abs(var - exact) <= 3 * var_se and abs(est.fitted_rate - 1.0) <= 0.15 and elapsed < 600
    verdict(6, ok, f"variance {var:.4f} vs 0.5 ({abs(var - exact) / var_se:.2f} SE); "
                   f"rate {est.fitted_rate:.4f} vs 1; {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_07_coupling_benchmark(verdict):
    t0 = time.perf_counter()
    traces = coupling_traces(100, seed=7)
    pm = porous_medium_rates(PorousMediumSpec(PI, 1.0, 2.0, 3.0))
    bound = zeta_energy_bound(1.0, 1.0, 3.0, 2.0, pm.eta)
    coupled = sum(tr.coupled and tr.tau <= tr.T for tr in traces)
    energy = max(tr.zeta_energy for tr in traces)
    slope = check_eps_slope(traces)
    gs = girsanov_weight_stats(traces, math.exp(bound))
    elapsed = time.perf_counter() - t0
    ok = (coupled >= 99 and energy <= 11.51 * 1.05 and bound <= 11.51 * 1.05 and slope.passed
          and not gs.mean_violation and elapsed < 900)
    verdict(7, ok, f"coupled {coupled}/100; max zeta-energy {energy:.3f} (bound {bound:.3f}); "
                   f"slope margin {slope.worst_margin:.3f}; mean R {gs.mean_r:.4f} +- {gs.se_r:.4f}; "
                   f"{elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_08_synchronous_contraction(verdict):
    t0 = time.perf_counter()
    pairs = contraction_pairs(100, distances=(1.0, 10.0), seed=8)
    pm = porous_medium_rates(PorousMediumSpec(PI, 1.0, 2.0))
    rep = check_contraction(PorousDrift(2.0), pm.delta, 2.0, pairs, slack=1.05)
    elapsed = time.perf_counter() - t0
    ok = rep.passed and elapsed < 600
    verdict(8, ok, f"{rep.n_violations}/{rep.n_trials} saved times above envelope "
                   f"(worst margin {rep.worst_margin:.3f}); {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_09_porous_decay_one_sided(verdict):
    t0 = time.perf_counter()
    lam = porous_medium_rates(PorousMediumSpec(PI, 1.0, 2.0)).report.lam
    cfg = SimConfig(n=8, m=32, dt=1e-2, seed=9)
    model, noise = PorousDrift(2.0), DiagonalNoise.scalar(1.0)
    inv = sample_invariant(model, cfg, noise, PI, burn_in=25.0, n_samples=2000, thinning=1.0,
                           lam_prior=lam, run=1)
    f = h_projection(1, PI)
    x0 = np.zeros(8)
    x0[0] = 3.0
    est = estimate_decay(f, x0, model, cfg, noise, PI, np.arange(0.0, 10.001, 0.1), 2000,
                         inv.estimate(f), run=2)
    elapsed = time.perf_counter() - t0
    ok = est.fitted_rate >= 0.9 * lam and elapsed < 1800
    verdict(9, ok, f"fitted rate {est.fitted_rate:.3f} +- {est.rate_se:.3f} >= 0.9 x {lam:.4f}; "
                   f"window {est.window}; {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_10_fast_diffusion_lyapunov(verdict):
    t0 = time.perf_counter()
    spec = FastDiffusionSpec(PI, 0.5, 0.3, 1.0)
    adm = fast_diffusion_admissible(spec)
    cfg = SimConfig(n=8, m=32, dt=1e-2, seed=3)
    x0 = np.zeros(8)
    x0[0] = 10.0
    curve = lyapunov_curve(spec, cfg, x0, np.arange(0.0, 20.001, 0.5), 500)
    m, s = curve.means, curve.ses
    bounded = bool(np.all(np.isfinite(m)) and m.max() <= curve.v0 + curve.c)
    late, prev = m[-5:], m[-10:-5]
    plateau = abs(late.mean() - prev.mean()) <= 3 * math.sqrt(np.mean(s[-10:] ** 2) * 2 / 5)
    elapsed = time.perf_counter() - t0
    ok = adm.admissible and bounded and plateau and curve.k == 1.0 and curve.satisfied and elapsed < 900
    verdict(10, ok, f"admissible={adm.admissible} bounded={bounded} plateau={plateau} "
                    f"beta={curve.beta:.3f} c={curve.c:.3f} worst excess {curve.worst_excess:.2f} SE; "
                    f"{elapsed:.0f}s")
    assert ok
