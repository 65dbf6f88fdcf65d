"""Closed-form convergence-rate constants for monotone SPDEs.

All evaluations go through logarithms: exponents such as ``4/(r-1)`` make the
raw constants overflow long before the rates themselves become meaningless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, RateUnderflowError

_LOG_MAX = math.log(np.finfo(float).max)
_LOG_TINY = math.log(np.finfo(float).tiny)


def _finite_positive(name, value):
    if not (math.isfinite(value) and value > 0):
        return f"{name} must be finite and > 0 (got {value!r})"
    return None


def _exp_checked(log_value, what):
    if log_value > _LOG_MAX:
        raise RateUnderflowError(
            f"{what} overflows double precision (log = {log_value:.6g}); "
            "rate bound underflows to 0"
        )
    if log_value < _LOG_TINY:
        raise RateUnderflowError(
            f"{what} underflows to 0 (log = {log_value:.6g})"
        )
    return math.exp(log_value)


@dataclass(frozen=True)
class GeneralRateParams:
    """Exponent ``r``, coupling exponent ``theta`` and the constants ``eta``,
    ``delta`` of the quantitative monotonicity condition."""

    r: float
    theta: float
    eta: float
    delta: float

    def __post_init__(self):
        problems = []
        if not (math.isfinite(self.r) and self.r > 1):
            problems.append(f"r must be > 1 (got {self.r!r})")
        if not math.isfinite(self.theta) or self.theta < 2:
            problems.append(f"theta must be >= 2 (got {self.theta!r})")
        elif math.isfinite(self.r) and not self.theta > self.r - 1:
            problems.append(f"theta must be > r - 1 (got theta={self.theta!r}, r={self.r!r})")
        for name in ("eta", "delta"):
            msg = _finite_positive(name, getattr(self, name))
            if msg:
                problems.append(msg)
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def gap(self):
        """``theta + 1 - r``, positive by construction."""
        return self.theta + 1.0 - self.r


@dataclass(frozen=True)
class RateReport:
    alpha: float
    lam: float
    t_opt: float
    lb_primary: float
    lb_secondary: float
    c0: float

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "lambda": self.lam,
            "t_opt": self.t_opt,
            "lb_primary": self.lb_primary,
            "lb_secondary": self.lb_secondary,
            "c0": self.c0,
        }


# ---------------------------------------------------------------------------
# Generic constants


def log_alpha_general(params: GeneralRateParams) -> float:
    r, th = params.r, params.theta
    gap = params.gap
    return (
        (r + 1) / (r - 1) * math.log(th * (r + 1) / (r - 1))
        + math.log(2 + th)
        - 2 * r / (r - 1) * math.log(gap)
        - 2 * gap / (th * (r - 1)) * math.log(params.delta)
        - 2 / th * math.log(params.eta)
    )


def alpha_general(params: GeneralRateParams) -> float:
    return _exp_checked(log_alpha_general(params), "alpha")


def log_c0_constant(params: GeneralRateParams) -> float:
    r, th = params.r, params.theta
    gap = params.gap
    return (
        -2 / th * math.log(params.eta)
        + 2 * (th + 1) / th * math.log((2 + th) / gap)
        + 2 * gap / (th * (r - 1)) * math.log(2 / (params.delta * (r - 1)))
    )


def c0_constant(params: GeneralRateParams) -> float:
    """Prefactor of the two-time exponent ``C0 / (s**a1 * (t-s)**a2)``."""
    return _exp_checked(log_c0_constant(params), "C0")


def split_exponents(r, theta):
    """Exponents ``(a1, a2)`` on ``s`` and ``t - s``; they sum to ``(r+1)/(r-1)``."""
    return 2 * (theta + 1 - r) / (theta * (r - 1)), (2 + theta) / theta


def log_split_factor(r, theta) -> float:
    """log of ``inf_s t**(a1+a2) / (s**a1 (t-s)**a2)``, so alpha = C0 * factor."""
    a1, a2 = split_exponents(r, theta)
    a = a1 + a2
    return a * math.log(a) - a1 * math.log(a1) - a2 * math.log(a2)


def log_split_factor_closed(r, theta) -> float:
    """Same factor written as the product of three explicit powers."""
    gap = theta + 1 - r
    return (
        (r + 1) / (r - 1) * math.log((r + 1) / (r - 1))
        + 2 * gap / (theta * (r - 1)) * math.log(theta * (r - 1) / (2 * gap))
        + (2 + theta) / theta * math.log(theta / (2 + theta))
    )


# ---------------------------------------------------------------------------
# The sup over t


def _time_exponent(r):
    return (r + 1) / (r - 1)


def fy_objective(t, alpha, r):
    """``(1/t) log(2 / (exp(alpha t**-a) - 1))`` with ``a = (r+1)/(r-1)``.

    Vectorised over ``t``; evaluated through logs so that large ``alpha``
    and small ``t`` do not overflow.
    """
    t = np.asarray(t, dtype=float)
    a = _time_exponent(r)
    x = np.exp(math.log(alpha) - a * np.log(t))
    with np.errstate(over="ignore", divide="ignore"):
        log_em1 = np.where(x > 30.0, x + np.log1p(-np.exp(-np.minimum(x, 700.0))),
                           np.log(np.expm1(np.minimum(x, 30.0))))
    return (math.log(2.0) - log_em1) / t


def positivity_threshold(alpha, r):
    """Smallest time at which the objective is positive: ``(alpha/ln 3)**(1/a)``."""
    return (alpha / math.log(3.0)) ** (1.0 / _time_exponent(r))


def witness_time(alpha, r):
    a = _time_exponent(r)
    return (alpha / math.log1p(2.0 * math.exp(-a))) ** (1.0 / a)


_UNIT_CACHE: dict[float, tuple[float, float]] = {}


def _unit_sup(r, n_grid=4001):
    """Maximise the objective for ``alpha = 1``; returns ``(g_max, u_opt)``.

    The general case follows from the scaling ``t = alpha**(1/a) u``.
    """
    hit = _UNIT_CACHE.get(r)
    if hit is not None:
        return hit
    u_min = positivity_threshold(1.0, r)
    grid = np.geomspace(u_min * (1 + 1e-9), 1e4 * u_min, n_grid)
    vals = fy_objective(grid, 1.0, r)
    i = int(np.argmax(vals))
    if not vals[i] > 0 or i in (0, n_grid - 1):
        raise RuntimeError(f"no interior positive maximum of the rate objective for r={r}")

    def neg(logu):
        return -float(fy_objective(math.exp(logu), 1.0, r))

    # golden section in log t; tolerance is relative in t
    res = minimize_scalar(
        neg,
        bracket=(math.log(grid[i - 1]), math.log(grid[i]), math.log(grid[i + 1])),
        method="golden",
        tol=1e-12,
    )
    u_opt = math.exp(res.x)
    g_max = -res.fun
    if g_max < vals[i]:
        u_opt, g_max = float(grid[i]), float(vals[i])
    out = (g_max, u_opt)
    if len(_UNIT_CACHE) < 4096:
        _UNIT_CACHE[r] = out
    return out


def log_lambda_sup(log_alpha, r):
    """Return ``(log lambda, log t_opt)`` for ``alpha = exp(log_alpha)``."""
    if not r > 1:
        raise DomainError(f"r must be > 1 (got {r!r})")
    g_max, u_opt = _unit_sup(float(r))
    inv_a = 1.0 / _time_exponent(r)
    return math.log(g_max) - inv_a * log_alpha, math.log(u_opt) + inv_a * log_alpha


def lambda_sup(alpha, r):
    """Maximise the rate objective over ``t > 0``; returns ``(lambda, t_opt)``."""
    if not (math.isfinite(alpha) and alpha > 0):
        raise DomainError(f"alpha must be finite and > 0 (got {alpha!r})")
    log_lam, log_t = log_lambda_sup(math.log(alpha), r)
    return _exp_checked(log_lam, "lambda"), _exp_checked(log_t, "t_opt")


def log_lambda_lower_bounds(params: GeneralRateParams):
    r, th = params.r, params.theta
    gap = params.gap
    a = _time_exponent(r)
    common = (
        2 * r / (r + 1) * math.log(gap)
        + 2 * gap / (th * (r + 1)) * math.log(params.delta)
        + 2 * (r - 1) / (th * (r + 1)) * math.log(params.eta)
        - math.log(th)
        - (r - 1) / (r + 1) * math.log(2 + th)
    )
    primary = common + (r - 1) / (r + 1) * math.log(math.log1p(2.0 * math.exp(-a)))
    return primary, common - 1.0


def lambda_lower_bounds(params: GeneralRateParams):
    """Closed-form lower bounds ``(lb_primary, lb_secondary)`` on lambda."""
    lp, ls = log_lambda_lower_bounds(params)
    return _exp_checked(lp, "lb_primary"), _exp_checked(ls, "lb_secondary")


def rate_report(params: GeneralRateParams) -> RateReport:
    log_a = log_alpha_general(params)
    log_lam, log_t = log_lambda_sup(log_a, params.r)
    lb1, lb2 = lambda_lower_bounds(params)
    return RateReport(
        alpha=_exp_checked(log_a, "alpha"),
        lam=_exp_checked(log_lam, "lambda"),
        t_opt=_exp_checked(log_t, "t_opt"),
        lb_primary=lb1,
        lb_secondary=lb2,
        c0=c0_constant(params),
    )


# ---------------------------------------------------------------------------
# Stochastic porous medium equation


@dataclass(frozen=True)
class PorousMediumSpec:
    l: float
    sigma: float
    r: float
    theta: float | None = None

    def __post_init__(self):
        problems = [m for m in (_finite_positive("l", self.l),
                                _finite_positive("sigma", self.sigma)) if m]
        if not (math.isfinite(self.r) and self.r > 1):
            problems.append(f"r must be > 1 (got {self.r!r})")
        elif self.theta is not None:
            th, r = self.theta, self.r
            if not (th > r - 1 and 2 <= th <= r + 1):
                problems.append(
                    f"theta must lie in (r-1, r+1] ∩ [2, r+1] = [{max(2.0, r - 1):g}, {r + 1:g}] "
                    f"(got {th!r})"
                )
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def theta_value(self):
        return self.r + 1 if self.theta is None else self.theta


@dataclass(frozen=True)
class PorousRates:
    eta: float
    delta: float
    alpha_theta: float
    report: RateReport
    params: GeneralRateParams = field(repr=False)


def porous_constants(l, sigma, r, theta):
    """``(eta, delta)`` making the porous-medium drift satisfy the monotonicity
    condition with exponent ``theta``."""
    k1 = math.pi / l
    log_base = (2 - r) * math.log(2.0)
    eta = math.exp(log_base + theta * math.log(sigma) + (r + 1 - theta) * math.log(k1))
    delta = math.exp(log_base + (r + 1) * math.log(k1))
    return eta, delta


def porous_log_alpha_theta(l, sigma, r, theta):
    """alpha as a function of theta, in the factored form that shows it decreases."""
    gap = theta + 1 - r
    a = (r + 1) / (r - 1)
    return (
        (r - 2) / (r - 1) * math.log(4.0)
        - 2 * math.log(sigma)
        + 4 / (r - 1) * math.log(l / math.pi)
        + a * math.log(a)
        + a * math.log(theta / gap)
        + math.log((2 + theta) / gap)
    )


def porous_log_alpha(l, sigma, r):
    """alpha at the optimal theta = r + 1."""
    return (
        4 / (r - 1) * math.log(l)
        + math.log(3 + r)
        + 2 * (r + 1) / (r - 1) * math.log(r + 1)
        - 4 / (r - 1) * math.log(2 * math.pi)
        - 2 * math.log(sigma)
        - (r + 1) / (r - 1) * math.log(r - 1)
    )


def porous_log_lower_bounds(l, sigma, r):
    a = (r + 1) / (r - 1)
    common = (
        4 / (r + 1) * math.log(2 * math.pi)
        + 2 * (r - 1) / (r + 1) * math.log(sigma)
        - math.log(r + 1)
        - 4 / (r + 1) * math.log(l)
        - (r - 1) / (r + 1) * math.log(3 + r)
    )
    return common + (r - 1) / (r + 1) * math.log(math.log1p(2 * math.exp(-a))), common - 1.0


def porous_medium_rates(spec: PorousMediumSpec) -> PorousRates:
    th = spec.theta_value
    eta, delta = porous_constants(spec.l, spec.sigma, spec.r, th)
    alpha_theta = _exp_checked(porous_log_alpha_theta(spec.l, spec.sigma, spec.r, th), "alpha_theta")
    eta_opt, _ = porous_constants(spec.l, spec.sigma, spec.r, spec.r + 1)
    params = GeneralRateParams(spec.r, spec.r + 1, eta_opt, delta)
    return PorousRates(eta, delta, alpha_theta, rate_report(params), params)


# ---------------------------------------------------------------------------
# Stochastic p-Laplace equation


@dataclass(frozen=True)
class PLaplaceSpec:
    """``q`` holds leading noise coefficients; beyond them the noise follows
    ``tail_amplitude * i**tail_exponent``. Defaults to ``q_i = sigma / i``."""

    l: float
    sigma: float
    p: float
    q: tuple[float, ...] = ()
    tail_amplitude: float | None = None
    tail_exponent: float = -1.0

    def __post_init__(self):
        problems = [m for m in (_finite_positive("l", self.l),
                                _finite_positive("sigma", self.sigma)) if m]
        if not (math.isfinite(self.p) and self.p > 2):
            problems.append(f"p must be > 2 (got {self.p!r})")
        amp = self.sigma if self.tail_amplitude is None else self.tail_amplitude
        for i, qi in enumerate(self.q, start=1):
            if not qi * qi >= self.sigma ** 2 / i ** 2 * (1 - 1e-12):
                problems.append(f"q_{i}^2 must be >= sigma^2/{i}^2 (got q_{i}={qi!r})")
                break
        # tail: amp^2 i^(2e) >= sigma^2 i^-2 for all large i
        if self.tail_exponent < -1 or (self.tail_exponent == -1 and abs(amp) < self.sigma * (1 - 1e-12)):
            problems.append("noise tail decays faster than sigma/i")
        if not self.tail_exponent < -0.5:
            problems.append("sum of q_i^2 diverges (tail exponent must be < -1/2)")
        if problems:
            raise DomainError("; ".join(problems))

    def coefficients(self, n):
        amp = self.sigma if self.tail_amplitude is None else self.tail_amplitude
        out = np.empty(n)
        head = min(n, len(self.q))
        out[:head] = self.q[:head]
        idx = np.arange(head + 1, n + 1, dtype=float)
        out[head:] = amp * idx ** self.tail_exponent
        return out


@dataclass(frozen=True)
class PLaplaceRates:
    r: float
    theta: float
    eta: float
    delta: float
    report: RateReport
    params: GeneralRateParams = field(repr=False)


def plaplace_constants(l, sigma, p):
    eta = math.exp((p - 1) * math.log(2.0) + p * math.log(math.pi * sigma / l))
    delta = math.exp((p - 1) * math.log(2.0) + p * math.log(math.pi / l))
    return eta, delta


def plaplace_constants_pointwise(l, sigma, p):
    """``(eta, delta)`` with prefactor ``2^(3-p)`` in place of ``2^(p-1)``.

    This is what the vector inequality
    ``(|a|^(p-2) a - |b|^(p-2) b)(a - b) >= 2^(2-p) |a - b|^p`` gives after
    Jensen and the Poincare bounds ``||w'||_2 >= (pi/l) ||w||_2`` and
    ``||w'||_2 >= (pi sigma/l) ||w||_Q``. The larger ``2^(p-1)`` prefactor of
    :func:`plaplace_constants` fails on first-mode sign flips when ``p > 2``.
    """
    eta = math.exp((3 - p) * math.log(2.0) + p * math.log(math.pi * sigma / l))
    delta = math.exp((3 - p) * math.log(2.0) + p * math.log(math.pi / l))
    return eta, delta


def plaplace_log_alpha(l, sigma, p):
    return (
        p / (p - 2) * math.log(p * p * l * l / (math.pi ** 2 * (p - 2)))
        + math.log(2 + p)
        - 2 * math.log(sigma)
        - 4 * (p - 1) / (p - 2) * math.log(2.0)
    )


def plaplace_log_lower_bounds(l, sigma, p):
    common = (
        2 * math.log(math.pi)
        + 4 * (p - 1) / p * math.log(2.0)
        + 2 * (p - 2) / p * math.log(sigma)
        - math.log(p)
        - 2 * math.log(l)
        - (p - 2) / p * math.log(2 + p)
    )
    extra = (p - 2) / p * math.log(math.log1p(2 * math.exp(-p / (p - 2))))
    return common + extra, common - 1.0


def p_laplace_rates(spec: PLaplaceSpec) -> PLaplaceRates:
    p = spec.p
    eta, delta = plaplace_constants(spec.l, spec.sigma, p)
    params = GeneralRateParams(p - 1, p, eta, delta)
    return PLaplaceRates(p - 1, p, eta, delta, rate_report(params), params)


# ---------------------------------------------------------------------------
# Stochastic fast-diffusion equation


@dataclass(frozen=True)
class FastDiffusionSpec:
    l: float
    r: float
    kappa: float
    gamma: float = 1.0
    theta: float | None = None
    eps: float | None = None

    def __post_init__(self):
        problems = [m for m in (_finite_positive("l", self.l),
                                _finite_positive("gamma", self.gamma)) if m]
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def theta_value(self):
        return 4.0 / (1.0 + self.r) if self.theta is None else self.theta

    @property
    def eps_value(self):
        return 1.0 - 4.0 * self.kappa / (1.0 + self.r) if self.eps is None else self.eps


@dataclass(frozen=True)
class Admissibility:
    admissible: bool
    reasons: tuple[str, ...]
    theta: float
    eps: float
    summable: bool
    inf_positive: bool
    kappa_range: tuple[float, float]


def fast_diffusion_admissible(spec: FastDiffusionSpec) -> Admissibility:
    """Check the noise conditions for ``q_i = lambda_i**(1/2 - kappa)``.

    Never raises; every failed condition is listed in ``reasons``.
    """
    r, kappa = spec.r, spec.kappa
    theta, eps = spec.theta_value, spec.eps_value
    reasons = []
    lo, hi = 0.25, (1 + 3 * r) / 8
    if not 0 < r < 1:
        reasons.append("r must lie in (0, 1)")
    elif r <= 1 / 3:
        reasons.append("r ≤ 1/3")
    # sum q_i^2 / lambda_i = sum lambda_i^(-2 kappa) ~ sum i^(-4 kappa)
    summable = kappa > 0.25
    if not summable:
        reasons.append("κ ≤ 1/4 (Hilbert-Schmidt sum diverges)")
    if 0 < r < 1 and kappa >= hi:
        reasons.append("κ ≥ (1+3r)/8")
    if 0 < r < 1 and not theta >= 4 / (1 + r) * (1 - 1e-12):
        reasons.append("θ < 4/(1+r)")
    eps_lo = (1 - r) / (2 * (1 + r)) if r > -1 else math.inf
    if not eps_lo < eps < 1:
        reasons.append("ε outside ((1−r)/(2(1+r)), 1)")
    # |q_i| lambda_i^((1-eps)/theta - 1/2) = lambda_i^((1-eps)/theta - kappa)
    inf_positive = theta > 0 and kappa <= (1 - eps) / theta + 1e-12
    if not inf_positive:
        reasons.append("κ > (1−ε)/θ (noise too weak on high modes)")
    return Admissibility(not reasons, tuple(reasons), theta, eps, summable, inf_positive, (lo, hi))
