"""Dirichlet sine basis on (0, l), quadrature, norms and nonlinear drifts.

Fields are stored as coefficients ``c_k`` in the basis
``e_k(x) = sqrt(2) sin(k pi x / l)``, orthonormal in L^2 of the normalised
Lebesgue measure ``m``. Array-level functions accept a leading batch shape
``(..., N)`` so ensembles of paths can be advanced together.

Each drift model is the gradient of a convex potential in its state metric
(H^-1 for porous/fast-diffusion/linear, L^2 for p-Laplace); the implicit
time stepper relies on that structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import AliasingError, DomainError


def eigenvalue(k, l):
    """Dirichlet eigenvalue ``pi^2 k^2 / l^2`` of ``-Laplacian`` on (0, l)."""
    if k < 1 or int(k) != k:
        raise DomainError(f"mode index must be an integer >= 1 (got {k!r})")
    if not l > 0:
        raise DomainError(f"domain length must be > 0 (got {l!r})")
    return math.pi ** 2 * k * k / (l * l)


def eigenvalues(n, l):
    k = np.arange(1, n + 1, dtype=float)
    return (math.pi * k / l) ** 2


@dataclass(frozen=True)
class SpectralField:
    l: float
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise DomainError("a field needs a 1-d array of at least one coefficient")
        if not np.all(np.isfinite(c)):
            raise DomainError("field coefficients must be finite")
        if not self.l > 0:
            raise DomainError(f"domain length must be > 0 (got {self.l!r})")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n(self):
        return self.coeffs.size

    @classmethod
    def zeros(cls, l, n):
        return cls(l, np.zeros(n))

    @classmethod
    def mode(cls, l, n, k, amplitude=1.0):
        c = np.zeros(n)
        c[k - 1] = amplitude
        return cls(l, c)

    def __add__(self, other):
        return SpectralField(self.l, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectralField(self.l, self.coeffs - other.coeffs)

    def __mul__(self, s):
        return SpectralField(self.l, self.coeffs * s)

    __rmul__ = __mul__


class QuadratureGrid:
    """Midpoint nodes on (0, l) with equal weights ``1/M`` (summing to 1).

    The midpoint rule integrates ``cos(j pi x / l)`` exactly for
    ``0 < j < 2M``, so products of up to ``2M/N - 1`` band-limited factors
    are integrated without aliasing.
    """

    def __init__(self, l, m):
        if not l > 0:
            raise DomainError(f"domain length must be > 0 (got {l!r})")
        if m < 4:
            raise DomainError(f"need at least 4 quadrature points (got {m!r})")
        self.l = float(l)
        self.m = int(m)
        self.nodes = (np.arange(self.m) + 0.5) * self.l / self.m
        self.weights = np.full(self.m, 1.0 / self.m)
        self._cache = {}

    def __repr__(self):
        return f"QuadratureGrid(l={self.l!r}, m={self.m})"

    def check(self, n):
        if self.m < 4 * n:
            raise AliasingError(f"quadrature grid M={self.m} < 4N={4 * n}; refine the grid")

    def sine_matrix(self, n):
        """``(M, N)`` matrix of ``e_k(x_j)``."""
        key = ("s", n)
        if key not in self._cache:
            k = np.arange(1, n + 1)
            self._cache[key] = math.sqrt(2.0) * np.sin(np.outer(self.nodes, k) * math.pi / self.l)
        return self._cache[key]

    def cosine_matrix(self, n):
        """``(M, N)`` matrix of ``e_k'(x_j) = sqrt(2) (k pi/l) cos(k pi x_j/l)``."""
        key = ("c", n)
        if key not in self._cache:
            k = np.arange(1, n + 1)
            self._cache[key] = (math.sqrt(2.0) * (math.pi * k / self.l)
                                * np.cos(np.outer(self.nodes, k) * math.pi / self.l))
        return self._cache[key]

    def integrate(self, values):
        return np.asarray(values) @ self.weights


def synthesize_array(coeffs, grid: QuadratureGrid):
    c = np.asarray(coeffs, dtype=float)
    grid.check(c.shape[-1])
    return c @ grid.sine_matrix(c.shape[-1]).T


def analyze_array(values, grid: QuadratureGrid, n):
    grid.check(n)
    return (np.asarray(values) * grid.weights) @ grid.sine_matrix(n)


def gradient_array(coeffs, grid: QuadratureGrid):
    """Physical values of the x-derivative (a cosine series)."""
    c = np.asarray(coeffs, dtype=float)
    grid.check(c.shape[-1])
    return c @ grid.cosine_matrix(c.shape[-1]).T


def synthesize(field: SpectralField, grid: QuadratureGrid):
    _same_domain(field, grid)
    return synthesize_array(field.coeffs, grid)


def analyze(values, grid: QuadratureGrid, n) -> SpectralField:
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.m,):
        raise DomainError(f"expected {grid.m} nodal values, got shape {values.shape}")
    return SpectralField(grid.l, analyze_array(values, grid, n))


def _same_domain(field, grid):
    if not math.isclose(field.l, grid.l, rel_tol=1e-12):
        raise DomainError(f"field on (0,{field.l}) paired with grid on (0,{grid.l})")


# ---------------------------------------------------------------------------
# Norms


def h_weights(n, l, metric="H-1"):
    """Diagonal of the state inner product in coefficient space."""
    if metric == "H-1":
        return 1.0 / eigenvalues(n, l)
    if metric == "L2":
        return np.ones(n)
    raise DomainError(f"unknown metric {metric!r}")


def norm_H_array(coeffs, l, metric="H-1"):
    c = np.asarray(coeffs, dtype=float)
    return np.sqrt(np.sum(c * c * h_weights(c.shape[-1], l, metric), axis=-1))


def norm_H(field: SpectralField):
    """H^-1 norm: ``sqrt(sum c_k^2 / lambda_k)``."""
    return float(norm_H_array(field.coeffs, field.l))


def norm_L2(field: SpectralField):
    return float(np.linalg.norm(field.coeffs))


def norm_Lq(field: SpectralField, q, grid: QuadratureGrid):
    if not q >= 1:
        raise DomainError(f"L^q norm needs q >= 1 (got {q!r})")
    _same_domain(field, grid)
    u = synthesize_array(field.coeffs, grid)
    return float(grid.integrate(np.abs(u) ** q) ** (1.0 / q))


def norm_Q(field: SpectralField, noise: "DiagonalNoise"):
    """``||u||_Q`` for diagonal Q: ``sqrt(sum c_k^2 / q_k^2)``."""
    q = noise.coefficients(field.n)
    return float(np.sqrt(np.sum((field.coeffs / q) ** 2)))


def grad_L2_sq(field: SpectralField):
    """``int |f'|^2 dm = sum lambda_k c_k^2``."""
    return float(np.sum(eigenvalues(field.n, field.l) * field.coeffs ** 2))


# ---------------------------------------------------------------------------
# Noise


@dataclass(frozen=True)
class DiagonalNoise:
    """``Q e_k = q_k e_k``. Leading coefficients ``head`` are explicit; beyond
    them ``q_k = tail_amplitude * k**tail_exponent``."""

    head: tuple[float, ...] = ()
    tail_amplitude: float = 1.0
    tail_exponent: float = 0.0

    def __post_init__(self):
        if any(q == 0 or not math.isfinite(q) for q in self.head) or self.tail_amplitude == 0:
            raise DomainError("Q must have trivial kernel: every q_k must be finite and non-zero")

    @classmethod
    def scalar(cls, sigma):
        return cls((), float(sigma), 0.0)

    @classmethod
    def power_law(cls, amplitude, exponent):
        return cls((), float(amplitude), float(exponent))

    @classmethod
    def fast_diffusion(cls, l, kappa):
        """``q_k = lambda_k**(1/2 - kappa) = (pi k / l)**(1 - 2 kappa)``."""
        return cls((), (math.pi / l) ** (1 - 2 * kappa), 1 - 2 * kappa)

    def coefficients(self, n):
        out = np.empty(n)
        h = min(n, len(self.head))
        out[:h] = self.head[:h]
        k = np.arange(h + 1, n + 1, dtype=float)
        out[h:] = self.tail_amplitude * k ** self.tail_exponent
        return out

    def trace_finite(self, metric="H-1"):
        """Whether ``sum q_k^2 |e_k|_H^2`` converges, from the tail law."""
        shift = -2.0 if metric == "H-1" else 0.0
        return 2 * self.tail_exponent + shift < -1


# ---------------------------------------------------------------------------
# Pointwise nonlinearity and drifts


def signed_power(s, r):
    """``|s|**(r-1) * s`` with the value 0 at s = 0 for every r > 0."""
    if not r > 0:
        raise DomainError(f"signed power needs r > 0 (got {r!r})")
    s = np.asarray(s, dtype=float)
    out = np.sign(s) * np.abs(s) ** r
    return out if out.ndim else float(out)


class DriftModel:
    """Interface shared by the drift operators.

    ``potential``/``potential_grad``/``potential_hess`` are the convex
    functional whose negative state-metric gradient is the drift.
    """

    name = "model"
    metric = "H-1"
    exponent = 1.0

    def weights(self, n, l):
        return h_weights(n, l, self.metric)

    def norm(self, coeffs, l):
        return norm_H_array(coeffs, l, self.metric)

    def drift(self, coeffs, grid):
        n = np.shape(coeffs)[-1]
        return -self.potential_grad(coeffs, grid) / self.weights(n, grid.l)

    def potential(self, coeffs, grid):
        raise NotImplementedError

    def potential_grad(self, coeffs, grid):
        raise NotImplementedError

    def potential_hess(self, coeffs, grid):
        raise NotImplementedError

    def flux(self, u_vals, grid):
        raise NotImplementedError

    def pairing_diff(self, u, v, grid):
        """Exact weak pairing ``2 <b(u) - b(v), u - v>`` by quadrature."""
        raise NotImplementedError

    def as_dict(self):
        return {"model": self.name, "exponent": self.exponent}


class PorousDrift(DriftModel):
    """``b(u) = Laplacian(u^r)`` in H^-1; ``r < 1`` is fast diffusion."""

    metric = "H-1"

    def __init__(self, r):
        if not r > 0:
            raise DomainError(f"porous exponent must be > 0 (got {r!r})")
        self.exponent = float(r)
        self.name = "porous" if r > 1 else ("linear" if r == 1 else "fastdiff")

    def __repr__(self):
        return f"PorousDrift(r={self.exponent!r})"

    def potential(self, coeffs, grid):
        u = synthesize_array(coeffs, grid)
        return grid.integrate(np.abs(u) ** (self.exponent + 1)) / (self.exponent + 1)

    def potential_grad(self, coeffs, grid):
        n = np.shape(coeffs)[-1]
        u = synthesize_array(coeffs, grid)
        return analyze_array(signed_power(u, self.exponent), grid, n)

    def potential_hess(self, coeffs, grid):
        n = np.shape(coeffs)[-1]
        r = self.exponent
        u = np.abs(synthesize_array(coeffs, grid))
        if r < 1:
            # regularise the removable singularity; only the Newton metric sees this
            floor = 1e-9 * np.max(u, axis=-1, keepdims=True) + 1e-150
            u = np.maximum(u, floor)
        d = r * u ** (r - 1) * grid.weights
        s = grid.sine_matrix(n)
        return np.einsum("jk,...j,jl->...kl", s, d, s, optimize=True)

    def pairing_diff(self, u, v, grid):
        r = self.exponent
        a = synthesize_array(u, grid)
        b = synthesize_array(v, grid)
        return -2.0 * grid.integrate((signed_power(a, r) - signed_power(b, r)) * (a - b))


class LinearDrift(PorousDrift):
    """The heat drift ``b(u) = Laplacian u``; Ornstein-Uhlenbeck in H^-1."""

    def __init__(self):
        super().__init__(1.0)
        self.name = "linear"

    def __repr__(self):
        return "LinearDrift()"

    def drift(self, coeffs, grid):
        c = np.asarray(coeffs, dtype=float)
        return -eigenvalues(c.shape[-1], grid.l) * c

    def resolvent(self, rhs, dt, l):
        """Exact solution of ``x = rhs + dt * b(x)``."""
        rhs = np.asarray(rhs, dtype=float)
        return rhs / (1.0 + dt * eigenvalues(rhs.shape[-1], l))


class PLaplaceDrift(DriftModel):
    """``b(u) = (|u'|^(p-2) u')'`` with state space L^2."""

    name = "plaplace"
    metric = "L2"

    def __init__(self, p):
        if not p >= 2:
            raise DomainError(f"p-Laplacian needs p >= 2 (got {p!r})")
        self.exponent = float(p)

    def __repr__(self):
        return f"PLaplaceDrift(p={self.exponent!r})"

    def potential(self, coeffs, grid):
        g = gradient_array(coeffs, grid)
        return grid.integrate(np.abs(g) ** self.exponent) / self.exponent

    def potential_grad(self, coeffs, grid):
        n = np.shape(coeffs)[-1]
        g = gradient_array(coeffs, grid)
        flux = signed_power(g, self.exponent - 1)
        return (flux * grid.weights) @ grid.cosine_matrix(n)

    def potential_hess(self, coeffs, grid):
        n = np.shape(coeffs)[-1]
        p = self.exponent
        g = np.abs(gradient_array(coeffs, grid))
        d = (p - 1) * g ** (p - 2) * grid.weights
        c = grid.cosine_matrix(n)
        return np.einsum("jk,...j,jl->...kl", c, d, c, optimize=True)

    def pairing_diff(self, u, v, grid):
        p = self.exponent
        a = gradient_array(u, grid)
        b = gradient_array(v, grid)
        return -2.0 * grid.integrate((signed_power(a, p - 1) - signed_power(b, p - 1)) * (a - b))


def make_model(kind, exponent=None):
    """``kind`` in {porous, fastdiff, plaplace, linear}."""
    if kind == "linear":
        return LinearDrift()
    if kind == "porous":
        if exponent is None or not exponent > 1:
            raise DomainError(f"porous medium needs r > 1 (got {exponent!r})")
        return PorousDrift(exponent)
    if kind == "fastdiff":
        if exponent is None or not 0 < exponent < 1:
            raise DomainError(f"fast diffusion needs r in (0, 1) (got {exponent!r})")
        return PorousDrift(exponent)
    if kind == "plaplace":
        if exponent is None or not exponent > 2:
            raise DomainError(f"p-Laplace needs p > 2 (got {exponent!r})")
        return PLaplaceDrift(exponent)
    raise DomainError(f"unknown model {kind!r}")


def drift_porous(field: SpectralField, r, grid: QuadratureGrid) -> SpectralField:
    """Galerkin projection of ``Laplacian(u^r)``: ``-lambda_k (u^r)_k``."""
    _same_domain(field, grid)
    if r == 1:
        return SpectralField(field.l, LinearDrift().drift(field.coeffs, grid))
    return SpectralField(field.l, PorousDrift(r).drift(field.coeffs, grid))


def drift_plaplace(field: SpectralField, p, grid: QuadratureGrid) -> SpectralField:
    _same_domain(field, grid)
    return SpectralField(field.l, PLaplaceDrift(p).drift(field.coeffs, grid))


def drift_pairing_diff(u: SpectralField, v: SpectralField, model: DriftModel, grid: QuadratureGrid):
    if u.n != v.n or not math.isclose(u.l, v.l):
        raise DomainError("fields must share N and l")
    _same_domain(u, grid)
    if not isinstance(model, DriftModel):
        raise DomainError(f"not a drift model: {model!r}")
    return float(model.pairing_diff(u.coeffs, v.coeffs, grid))


def pairing_H(a, b, l, metric="H-1"):
    """State inner product of two coefficient arrays."""
    a = np.asarray(a, dtype=float)
    return np.sum(a * np.asarray(b) * h_weights(a.shape[-1], l, metric), axis=-1)
