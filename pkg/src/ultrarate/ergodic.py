"""Monte Carlo estimates of invariant-measure functionals and decay rates."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .dynamics import SimConfig, simulate_ensemble, stream
from .errors import DomainError, EmptyWindowError
from .rates import FastDiffusionSpec, fast_diffusion_admissible
from .spectral import DiagonalNoise, PorousDrift, SpectralField, eigenvalue, norm_H_array


def ou_exact(l, sigma, k, t, x0_k):
    """Mean and variance of mode ``k`` of the linear equation at time ``t``.

    Mode dynamics ``dc = -lambda_k c dt + sigma dB``.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0 (got {sigma!r})")
    if not t >= 0:
        raise DomainError(f"t must be >= 0 (got {t!r})")
    lam = eigenvalue(k, l)
    if math.isinf(t):
        return 0.0, sigma ** 2 / (2 * lam)
    return x0_k * math.exp(-lam * t), sigma ** 2 * -math.expm1(-2 * lam * t) / (2 * lam)


# ---------------------------------------------------------------------------
# Test functionals (coefficient arrays -> values, vectorised over a batch)


def h_projection(k, l):
    """``x -> <x, e_k>_H = c_k / lambda_k``."""
    lam = eigenvalue(k, l)

    def f(c):
        return np.asarray(c)[..., k - 1] / lam

    f.__name__ = f"h_projection_{k}"
    return f


def tanh_functional(k, l, scale=1.0):
    """Bounded composition ``tanh(<x, e_k>_H / scale)``."""
    g = h_projection(k, l)

    def f(c):
        return np.tanh(g(c) / scale)

    f.__name__ = f"tanh_{k}"
    return f


def h_norm_sq(l, metric="H-1"):
    def f(c):
        return norm_H_array(c, l, metric) ** 2

    return f


# ---------------------------------------------------------------------------
# Invariant sample


@dataclass(frozen=True)
class InvariantSample:
    l: float
    samples: np.ndarray  # (n_samples, N)
    chain: np.ndarray  # chain index of each sample
    h2_mean: float
    h2_se: float

    @property
    def fields(self):
        return [SpectralField(self.l, c) for c in self.samples]

    def estimate(self, f):
        """Mean of ``f`` over the sample and its standard error (chain batch means)."""
        vals = np.asarray(f(self.samples), dtype=float)
        return _batch_mean(vals, self.chain)


def _batch_mean(vals, chain):
    ids = np.unique(chain)
    means = np.array([vals[chain == i].mean() for i in ids])
    if len(ids) < 2:
        return float(means[0]), math.nan
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(len(ids)))


def sample_invariant(model, cfg: SimConfig, noise: DiagonalNoise, l, burn_in, n_samples,
                     thinning, *, n_chains=None, x0=None, lam_prior=None, run=0) -> InvariantSample:
    """Approximate draws from the invariant measure.

    ``n_chains`` independent chains (default: one per sample) are burned in
    for ``burn_in`` time units, then each contributes samples ``thinning``
    time units apart.
    """
    if lam_prior is not None and burn_in < 5.0 / lam_prior:
        raise DomainError(
            f"burn_in={burn_in:g} shorter than 5/lambda_prior={5.0 / lam_prior:g}"
        )
    n_chains = n_samples if n_chains is None else n_chains
    if n_samples % n_chains:
        raise DomainError("n_samples must be a multiple of n_chains")
    per_chain = n_samples // n_chains
    burn_steps = int(round(burn_in / cfg.dt))
    thin_steps = max(1, int(round(thinning / cfg.dt)))
    total = burn_steps + (per_chain - 1) * thin_steps
    record = [burn_steps + j * thin_steps for j in range(per_chain)]
    start = np.zeros(cfg.n) if x0 is None else np.asarray(getattr(x0, "coeffs", x0), dtype=float)
    run_cfg = _with_horizon(cfg, max(total, 1) * cfg.dt)
    tr = simulate_ensemble(start, model, run_cfg, noise, l, rng=stream(cfg.seed, run),
                           n_paths=n_chains, record_steps=record)
    if burn_steps == 0:
        states = tr.states[: per_chain]
    else:
        states = tr.states[1:]
    samples = np.swapaxes(states, 0, 1).reshape(-1, cfg.n)
    chain = np.repeat(np.arange(n_chains), per_chain)
    h2 = norm_H_array(samples, l, model.metric) ** 2
    mean, se = _batch_mean(h2, chain)
    return InvariantSample(l, samples, chain, mean, se)


def _with_horizon(cfg, T):
    d = cfg.as_dict()
    d["T"] = T
    return SimConfig(**d)


# ---------------------------------------------------------------------------
# Decay fitting


@dataclass(frozen=True)
class DecayEstimate:
    times: np.ndarray
    means: np.ndarray  # |E f(X_t) - mu(f)|
    ses: np.ndarray
    fitted_rate: float
    rate_se: float
    window: tuple[float, float]
    intercept: float


def reliable_window(times, means, ses, z=3.0, min_points=3):
    """Index range of the first contiguous block (t > 0) with mean > z SE."""
    times, means, ses = map(np.asarray, (times, means, ses))
    ok = (times > 0) & (means > z * ses)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        raise EmptyWindowError("signal never exceeds 3 standard errors; no decay to fit")
    a = idx[0]
    b = a
    while b + 1 < len(ok) and ok[b + 1]:
        b += 1
    if b - a + 1 < min_points:
        raise EmptyWindowError(
            f"reliable window has {b - a + 1} point(s) (< {min_points}); signal lost in noise"
        )
    return a, b


def fit_log_linear(times, means, ses):
    """Weighted least squares of ``log mean = c - rate * t``.

    Weights are the delta-method inverse variances ``(mean/se)^2``.
    Returns ``(rate, rate_se, intercept)``.
    """
    t = np.asarray(times, dtype=float)
    y = np.log(means)
    w = (np.asarray(means) / np.asarray(ses)) ** 2
    X = np.column_stack([np.ones_like(t), t])
    A = X.T @ (w[:, None] * X)
    coef = np.linalg.solve(A, X.T @ (w * y))
    cov = np.linalg.inv(A)
    return float(-coef[1]), float(math.sqrt(cov[1, 1])), float(coef[0])


def estimate_decay(f, x0, model, cfg: SimConfig, noise: DiagonalNoise, l, times, n_paths,
                   mu_hat, *, run=0) -> DecayEstimate:
    """Fit the exponential decay of ``|E f(X_t^x) - mu(f)|``.

    ``mu_hat = (estimate, standard error)`` must come from an independent
    invariant sample. ``x0`` is one state or an ``(n_paths, N)`` array of
    starting states.
    """
    times = np.asarray(times, dtype=float)
    steps = np.rint(times / cfg.dt).astype(int)
    if np.any(np.abs(steps * cfg.dt - times) > 1e-9 * np.maximum(1, times)):
        raise DomainError("decay times must be multiples of dt")
    start = np.asarray(getattr(x0, "coeffs", x0), dtype=float)
    run_cfg = _with_horizon(cfg, max(int(steps.max()), 1) * cfg.dt)
    tr = simulate_ensemble(start, model, run_cfg, noise, l, rng=stream(cfg.seed, run),
                           n_paths=n_paths, functional=f, keep_states=False,
                           record_steps=steps)
    rec_steps = np.concatenate([[0], np.sort(np.unique(steps[steps > 0]))])
    vals = tr.values  # (len(rec_steps), n_paths)
    mu, mu_se = mu_hat
    npaths = vals.shape[1]
    means = np.abs(vals.mean(axis=1) - mu)
    ses = np.sqrt(vals.var(axis=1, ddof=1) / npaths + mu_se ** 2)
    t_rec = rec_steps * cfg.dt
    a, b = reliable_window(t_rec, means, ses)
    rate, rate_se, c = fit_log_linear(t_rec[a:b + 1], means[a:b + 1], ses[a:b + 1])
    return DecayEstimate(t_rec, means, ses, rate, rate_se, (float(t_rec[a]), float(t_rec[b])), c)


# ---------------------------------------------------------------------------
# Lyapunov drift for fast diffusion


def lyapunov_value(coeffs, l, gamma, r):
    """``V = exp(gamma (1 + |x|_H^2)^((1-r)/2))``."""
    h2 = norm_H_array(coeffs, l) ** 2
    return np.exp(gamma * (1.0 + h2) ** ((1.0 - r) / 2.0))


def fit_drift_bound(times, means, ses, v0):
    """Fit ``V(x0) e^{-beta t} + c`` to a Monte Carlo curve of ``E V(X_t)``.

    Returns ``(beta, c, worst)`` where ``worst`` is the largest excess of a
    sampled mean over the bound, in standard errors.
    """
    times, means, ses = (np.asarray(a, dtype=float) for a in (times, means, ses))
    tail = means[len(means) * 3 // 4:]
    plateau = float(tail.mean())
    fit_t, fit_m, fit_s = times[1:], means[1:], np.maximum(ses[1:], 1e-12)

    def model_fn(t, beta, c):
        return v0 * np.exp(-beta * t) + c

    # The drift condition is an upper bound, so the weighted least-squares fit
    # is constrained to stay above every sampled mean minus 2.9 SE (a little
    # inside the 3 SE acceptance band so rounding cannot flip the verdict).
    def loss(p):
        return float(np.sum(((model_fn(fit_t, *p) - fit_m) / fit_s) ** 2))

    def envelope(p):
        return (model_fn(fit_t, *p) - fit_m) / fit_s + 2.9

    with warnings.catch_warnings():
        # SLSQP clips trial points to the bounds and warns each time it does
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = minimize(loss, x0=(1.0, max(plateau, 1e-6)), method="SLSQP",
                       bounds=[(1e-8, None), (1e-8, None)],
                       constraints=[{"type": "ineq", "fun": envelope}],
                       options={"maxiter": 500, "ftol": 1e-12})
    beta, c = map(float, res.x)
    bound = model_fn(times, beta, c)
    excess = (means - bound) / np.where(ses > 0, ses, 1.0)
    worst = float(np.max(np.where(ses > 0, excess, np.where(means > bound + 1e-12 * v0, np.inf, -np.inf))))
    return beta, c, worst


@dataclass(frozen=True)
class LyapunovCurve:
    gamma: float
    r: float
    times: np.ndarray
    means: np.ndarray
    ses: np.ndarray
    v0: float
    k: float
    beta: float
    c: float
    satisfied: bool
    worst_excess: float  # max over t of (mean - bound) / se

    def bound(self, t):
        return self.k * self.v0 * np.exp(-self.beta * np.asarray(t)) + self.c


def lyapunov_curve(spec: FastDiffusionSpec, cfg: SimConfig, x0, times, n_paths, *,
                   run=0) -> LyapunovCurve:
    """Monte Carlo ``E V(X_t)`` and the fitted drift bound ``V(x0) e^{-beta t} + c``."""
    adm = fast_diffusion_admissible(spec)
    if not adm.admissible:
        raise DomainError("inadmissible fast-diffusion spec: " + "; ".join(adm.reasons))
    l, r, gamma = spec.l, spec.r, spec.gamma
    model = PorousDrift(r)
    noise = DiagonalNoise.fast_diffusion(l, spec.kappa)
    times = np.asarray(times, dtype=float)
    steps = np.rint(times / cfg.dt).astype(int)
    start = np.asarray(getattr(x0, "coeffs", x0), dtype=float)
    v = lambda c: lyapunov_value(c, l, gamma, r)  # noqa: E731
    run_cfg = _with_horizon(cfg, max(int(steps.max()), 1) * cfg.dt)
    tr = simulate_ensemble(start, model, run_cfg, noise, l, rng=stream(cfg.seed, run),
                           n_paths=n_paths, functional=v, keep_states=False, record_steps=steps)
    t_rec = np.concatenate([[0], np.sort(np.unique(steps[steps > 0]))]) * cfg.dt
    vals = tr.values
    means = vals.mean(axis=1)
    ses = vals.std(axis=1, ddof=1) / math.sqrt(vals.shape[1])
    v0 = float(lyapunov_value(start, l, gamma, r))
    if not np.all(np.isfinite(means)):
        raise DomainError("E V(X_t) is not finite along the run")

    beta, c, worst = fit_drift_bound(t_rec, means, ses, v0)
    return LyapunovCurve(gamma, r, t_rec, means, ses, v0, 1.0, beta, c,
                         bool(worst <= 3.0), worst)
