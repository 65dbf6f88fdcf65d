"""Sampling checks of the scalar and functional inequalities behind the rates.

Margins use the relative convention ``(bound slack) / max(|LHS|, |RHS|, 1e-300)``;
a trial counts as a violation only when its margin is below ``-tolerance``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import (
    CouplingTrace,
    PathTrace,
    SimConfig,
    simulate_pair_coupled,
    simulate_pair_synchronous,
    stream,
    zeta_energy_bound,
)
from .rates import PorousMediumSpec, plaplace_constants, plaplace_constants_pointwise, porous_medium_rates
from .spectral import (
    DiagonalNoise,
    DriftModel,
    PLaplaceDrift,
    PorousDrift,
    QuadratureGrid,
    norm_H_array,
    signed_power,
    synthesize_array,
)

_TINY = 1e-300


@dataclass(frozen=True)
class CheckReport:
    name: str
    n_trials: int
    n_violations: int
    worst_margin: float
    tolerance: float

    @property
    def passed(self):
        return self.n_violations == 0

    def as_dict(self):
        return asdict(self)


def report_from_margins(name, margins, tol):
    margins = np.asarray(margins, dtype=float).ravel()
    if margins.size == 0:
        return CheckReport(name, 0, 0, math.inf, tol)
    bad = np.isnan(margins) | (margins < -tol)
    return CheckReport(name, int(margins.size), int(bad.sum()), float(np.nanmin(margins)), tol)


def relative_margin(slack, lhs, rhs):
    scale = np.maximum(np.maximum(np.abs(lhs), np.abs(rhs)), _TINY)
    return slack / scale


# ---------------------------------------------------------------------------
# Scalar samplers


def power_diff(s, t, r):
    """``s^r - t^r`` with signed powers, free of cancellation when ``s ~ t``."""
    s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
    naive = signed_power(s, r) - signed_power(t, r)
    # cancellation only bites when s and t are close; elsewhere the naive form is exact enough
    same = (s * t > 0) & (np.abs(s - t) <= 0.5 * np.abs(t))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(same, (s - t) / np.where(same, t, 1.0), 0.0)
        stable = signed_power(t, r) * np.expm1(r * np.log1p(ratio))
    return np.where(same, stable, naive)


def sample_scalar_pairs(rng, n):
    """Pairs ``(s, t)`` mixing a uniform box, log-uniform scales over six
    decades with random signs, near-equal pairs and near sign-flips."""
    k = n // 4
    box = rng.uniform(-10, 10, size=(k, 2))
    logs = 10.0 ** rng.uniform(-3, 3, size=(k, 2)) * rng.choice([-1.0, 1.0], size=(k, 2))
    base = 10.0 ** rng.uniform(-3, 3, size=k) * rng.choice([-1.0, 1.0], size=k)
    near = np.column_stack([base, base * (1 + 10.0 ** rng.uniform(-8, -1, size=k))])
    rest = n - 3 * k
    b2 = 10.0 ** rng.uniform(-3, 3, size=rest)
    flip = np.column_stack([b2, -b2 * (1 + rng.normal(scale=1e-3, size=rest))])
    pairs = np.concatenate([box, logs, near, flip])
    return pairs[:, 0], pairs[:, 1]


def power_inequality_margin(s, t, r):
    """Relative slack of ``(s^r - t^r)(s - t) >= 2^(1-r) |s - t|^(1+r)``."""
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    lhs = power_diff(s, t, r) * (s - t)
    rhs = 2.0 ** (1 - r) * np.abs(s - t) ** (1 + r)
    return relative_margin(lhs - rhs, lhs, rhs)


def check_power_inequality(r, n_trials, rng=None, tol=1e-12) -> CheckReport:
    rng = np.random.default_rng(0) if rng is None else rng
    s, t = sample_scalar_pairs(rng, n_trials)
    return report_from_margins(f"power_inequality[r={r:g}]", power_inequality_margin(s, t, r), tol)


def fastdiff_pointwise_margin(s, t, r):
    """Relative slack of ``(s^r - t^r)(s - t) >= r |s-t|^2 max(|s|,|t|)^(r-1)``."""
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    lhs = power_diff(s, t, r) * (s - t)
    big = np.maximum(np.abs(s), np.abs(t))
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = np.where(big > 0, r * (s - t) ** 2 * big ** (r - 1), 0.0)
    return relative_margin(lhs - rhs, lhs, rhs)


def check_fastdiff_pointwise(r, n_trials, rng=None, tol=1e-10) -> CheckReport:
    rng = np.random.default_rng(0) if rng is None else rng
    s, t = sample_scalar_pairs(rng, n_trials)
    return report_from_margins(f"fastdiff_pointwise[r={r:g}]", fastdiff_pointwise_margin(s, t, r), tol)


# ---------------------------------------------------------------------------
# Random fields


def random_fields(rng, n_pairs, n, l=math.pi, tight_fraction=0.2, near_fraction=0.2):
    """Pairs of band-limited coefficient arrays ``(u, v)``, shape ``(n_pairs, n)``.

    Mixes random spectra with random decay and log-uniform amplitude,
    near-equal pairs, and first-mode sign flips (the tight configuration
    for the power inequality).
    """
    k = np.arange(1, n + 1, dtype=float)

    def spectra(m):
        decay = rng.uniform(0.0, 2.0, size=(m, 1))
        amp = 10.0 ** rng.uniform(-3, 3, size=(m, 1))
        c = rng.normal(size=(m, n)) * k ** -decay
        return amp * c / np.linalg.norm(c, axis=1, keepdims=True)

    n_tight = int(n_pairs * tight_fraction)
    n_near = int(n_pairs * near_fraction)
    n_free = n_pairs - n_tight - n_near
    u_free, v_free = spectra(n_free), spectra(n_free)
    u_near = spectra(n_near)
    v_near = u_near * (1 + 10.0 ** rng.uniform(-6, -1, size=(n_near, 1)) * rng.normal(size=(n_near, n)))
    amp = 10.0 ** rng.uniform(-3, 3, size=n_tight)
    u_t = np.zeros((n_tight, n))
    u_t[:, 0] = amp
    jitter = rng.normal(scale=1e-3, size=(n_tight, n)) * amp[:, None] * rng.integers(0, 2, size=(n_tight, 1))
    v_t = -u_t + jitter
    return np.concatenate([u_free, u_near, u_t]), np.concatenate([v_free, v_near, v_t])


def check_fastdiff_holder(r, n_trials, grid: QuadratureGrid, n=8, rng=None, tol=1e-8) -> CheckReport:
    """Field-level chain for fast diffusion on random pairs:

    ``m(|u-v|^(1+r)) <= 2^((1-r)/2) m(|u-v|^2 (|u| v |v|)^(r-1))^((1+r)/2) (h(u) v h(v))^((1-r^2)/2)``
    with ``h = ||.||_(1+r)``, and
    ``m((u^r - v^r)(u - v)) >= r m(|u-v|^2 (|u| v |v|)^(r-1))``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    uc, vc = random_fields(rng, n_trials, n, grid.l)
    u, v = synthesize_array(uc, grid), synthesize_array(vc, grid)
    big = np.maximum(np.abs(u), np.abs(v))
    d2 = (u - v) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        weighted = grid.integrate(np.where(big > 0, d2 * big ** (r - 1), 0.0))
    lhs = grid.integrate(np.abs(u - v) ** (1 + r))
    hu = grid.integrate(np.abs(u) ** (1 + r)) ** (1 / (1 + r))
    hv = grid.integrate(np.abs(v) ** (1 + r)) ** (1 / (1 + r))
    rhs = 2 ** ((1 - r) / 2) * weighted ** ((1 + r) / 2) * np.maximum(hu, hv) ** ((1 - r * r) / 2)
    m1 = relative_margin(rhs - lhs, lhs, rhs)
    pair = grid.integrate((signed_power(u, r) - signed_power(v, r)) * (u - v))
    m2 = relative_margin(pair - r * weighted, pair, r * weighted)
    return report_from_margins(f"fastdiff_holder[r={r:g}]", np.concatenate([m1, m2]), tol)


def monotonicity_rhs(model: DriftModel, w, theta, eta, delta, noise: DiagonalNoise, l):
    """``max(eta ||w||_Q^theta |w|_H^(r+1-theta), delta |w|_H^(1+r))``."""
    r = model.exponent - 1 if isinstance(model, PLaplaceDrift) else model.exponent
    n = w.shape[-1]
    hn = norm_H_array(w, l, model.metric)
    qn = np.sqrt(np.sum((w / noise.coefficients(n)) ** 2, axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        first = np.where(hn > 0, eta * qn ** theta * hn ** (r + 1 - theta), 0.0)
    return np.maximum(first, delta * hn ** (1 + r))


def monotonicity_margins(model, u, v, theta, eta, delta, noise, grid):
    lhs = model.pairing_diff(u, v, grid)
    rhs = -monotonicity_rhs(model, u - v, theta, eta, delta, noise, grid.l)
    return relative_margin(rhs - lhs, lhs, rhs)


def check_monotonicity_22(model: DriftModel, theta, eta, delta, n_trials, n, grid: QuadratureGrid,
                          noise: DiagonalNoise, rng=None, tol=1e-6, name=None) -> CheckReport:
    """``2<b(u)-b(v), u-v> <= -max(eta ||u-v||_Q^theta |u-v|_H^(r+1-theta), delta |u-v|_H^(1+r))``
    on random band-limited pairs."""
    grid.check(n)
    rng = np.random.default_rng(0) if rng is None else rng
    u, v = random_fields(rng, n_trials, n, grid.l)
    margins = monotonicity_margins(model, u, v, theta, eta, delta, noise, grid)
    label = name or f"monotonicity[{model.name},eta={eta:.6g},delta={delta:.6g}]"
    return report_from_margins(label, margins, tol)


# ---------------------------------------------------------------------------
# Simulated envelopes


def contraction_envelope(t, delta, r):
    """``(delta t (r-1)/2)^(2/(1-r))``: bound on ``|X_t^x - X_t^y|_H^2``."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return (delta * t * (r - 1) / 2.0) ** (2.0 / (1.0 - r))


def check_contraction(model: DriftModel, delta, r, pair_traces, slack=1.05) -> CheckReport:
    """Every saved ``t > 0`` of every synchronous pair stays under the envelope."""
    margins = []
    for xs, ys in pair_traces:
        xs: PathTrace
        t = xs.times
        d2 = norm_H_array(xs.states - ys.states, xs.l, model.metric) ** 2
        keep = t > 0
        env = slack * contraction_envelope(t[keep], delta, r)
        margins.append(relative_margin(env - d2[keep], d2[keep], env))
    m = np.concatenate(margins) if margins else np.array([])
    return report_from_margins(f"contraction[delta={delta:g},r={r:g}]", m, 0.0)


def check_coupling_bounds(traces, theta, r, eta, slack=1.05) -> CheckReport:
    """Per trace: zeta-energy under its pathwise bound (times ``slack``) and
    coupling before the horizon."""
    margins = []
    for tr in traces:
        tr: CouplingTrace
        bound = slack * zeta_energy_bound(tr.initial_distance, tr.T, theta, r, eta)
        margins.append(relative_margin(bound - tr.zeta_energy, tr.zeta_energy, bound))
        hit = tr.tau if tr.coupled else math.inf
        margins.append(-1.0 if not hit <= tr.T * (1 + 1e-9) else (tr.T - hit) / tr.T)
    return report_from_margins(f"coupling_bounds[theta={theta:g},r={r:g}]", np.array(margins), 0.0)


def check_eps_slope(traces, slack=0.95) -> CheckReport:
    """Before coupling, ``|X-Y|_H^eps`` falls at least ``slack * eps * beta`` per unit time."""
    margins = []
    for tr in traces:
        if tr.beta == 0:
            continue
        slope = np.diff(tr.dist_eps) / np.diff(tr.times)
        target = -slack * tr.eps * tr.beta
        margins.append(relative_margin(target - slope, slope, target))
    m = np.concatenate(margins) if margins else np.array([])
    return report_from_margins(f"eps_slope[slack={slack:g}]", m, 0.0)


# ---------------------------------------------------------------------------
# Suites


def separated_pair(rng, n, l, dist, metric="H-1"):
    """Random starting pair ``(x0, y0)`` with ``|x0 - y0|_H = dist``."""
    x0 = rng.normal(size=n) / np.arange(1, n + 1)
    x0 /= norm_H_array(x0, l, metric)
    u = rng.normal(size=n)
    u *= dist / norm_H_array(u, l, metric)
    return x0, x0 - u


def contraction_pairs(n_pairs, distances=(1.0, 10.0), *, l=math.pi, sigma=1.0, r=2.0, n=8,
                      dt=1e-2, T=1.0, seed=0):
    """Synchronous porous-medium pairs, alternating over ``distances``."""
    model = PorousDrift(r)
    noise = DiagonalNoise.scalar(sigma)
    cfg = SimConfig(n=n, m=4 * n, dt=dt, T=T, seed=seed)
    rng = stream(seed, 10**6)
    out = []
    for i in range(n_pairs):
        x0, y0 = separated_pair(rng, n, l, distances[i % len(distances)])
        out.append(simulate_pair_synchronous(x0, y0, model, cfg, noise, l, run=i))
    return out


def coupling_traces(n_runs, *, l=math.pi, sigma=1.0, r=2.0, theta=3.0, n=16, dt=1e-3, T=1.0,
                    dist=1.0, seed=0):
    """Coupled porous-medium runs from ``x0 = dist/2 e_1``, ``y0 = -x0`` (in ``H`` units)."""
    model = PorousDrift(r)
    noise = DiagonalNoise.scalar(sigma)
    cfg = SimConfig(n=n, m=4 * n, dt=dt, T=T, seed=seed)
    x0 = np.zeros(n)
    x0[0] = 1.0
    x0 *= 0.5 * dist / norm_H_array(x0, l)
    return [simulate_pair_coupled(x0, -x0, model, cfg, theta, noise, l, run=i)
            for i in range(n_runs)]


SUITES = ("default", "stated", "quick")


def run_suite(name="default", seed=0, *, scale=1.0):
    """Run a named battery of checks; ``scale`` multiplies every trial count.

    ``default`` covers every explicit inequality with constants the
    inequalities actually support. ``stated`` adds the p-Laplace condition
    with the ``2^(p-1)`` prefactor, which is expected to report violations.
    ``quick`` is ``default`` at a hundredth of the trials.
    """
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
    if name == "quick":
        scale *= 0.01
    count = lambda k: max(int(k * scale), 10)  # noqa: E731
    seq = np.random.SeedSequence(seed)
    rngs = iter(np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(32))
    l, sigma = math.pi, 1.0
    reports = []
    for r in (1.5, 2.0, 3.0):
        reports.append(check_power_inequality(r, count(10**6), next(rngs)))
    for r in (0.4, 0.5, 0.9):
        reports.append(check_fastdiff_pointwise(r, count(10**6), next(rngs)))
    reports.append(check_fastdiff_holder(0.5, count(10**3), QuadratureGrid(l, 64), 16, next(rngs)))

    n = 16
    grid = QuadratureGrid(l, 16 * n)
    pm = porous_medium_rates(PorousMediumSpec(l, sigma, 2.0))
    reports.append(check_monotonicity_22(PorousDrift(2.0), 3.0, pm.eta, pm.delta, count(10**3), n, grid,
                                         DiagonalNoise.scalar(sigma), next(rngs)))
    p = 4.0
    pl_noise = DiagonalNoise.power_law(sigma, -1.0)
    eta, delta = plaplace_constants_pointwise(l, sigma, p)
    reports.append(check_monotonicity_22(PLaplaceDrift(p), p, eta, delta, count(10**3), n, grid, pl_noise,
                                         next(rngs)))
    if name == "stated":
        eta, delta = plaplace_constants(l, sigma, p)
        reports.append(check_monotonicity_22(PLaplaceDrift(p), p, eta, delta, count(10**3), n, grid,
                                             pl_noise, next(rngs)))

    pairs = contraction_pairs(count(20), seed=seed)
    reports.append(check_contraction(PorousDrift(2.0), pm.delta, 2.0, pairs))
    traces = coupling_traces(max(count(5), 2) if name != "quick" else 2, seed=seed)
    reports.append(check_coupling_bounds(traces, 3.0, 2.0, pm.eta))
    reports.append(check_eps_slope(traces))
    return reports
