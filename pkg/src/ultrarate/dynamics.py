"""Galerkin time stepping for single paths and for coupled pairs.

States are coefficient arrays in the sine basis (see :mod:`spectral`);
every routine accepts a leading batch dimension so ensembles advance
together. Each independent run draws from its own stream derived from
``(seed, run_index)`` via :class:`numpy.random.SeedSequence`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, SolverError, ZetaCapError
from .spectral import (
    DiagonalNoise,
    DriftModel,
    LinearDrift,
    PorousDrift,
    QuadratureGrid,
    SpectralField,
    norm_H_array,
)

SCHEMES = ("implicit-fixed-point", "tamed-explicit")


@dataclass(frozen=True)
class SimConfig:
    n: int = 16
    m: int = 64
    dt: float = 1e-3
    T: float = 1.0
    seed: int = 0
    scheme: str = "implicit-fixed-point"
    couple_tol: float = 1e-6
    save_every: int = 1
    solver_tol: float = 1e-10
    max_iter: int = 60
    zeta_cap: float = 1e12
    max_bisections: int = 40

    def __post_init__(self):
        problems = []
        if self.n < 1:
            problems.append(f"N must be >= 1 (got {self.n})")
        if self.m < 4 * self.n:
            problems.append(f"M must be >= 4N (got M={self.m}, N={self.n})")
        if not self.dt > 0:
            problems.append(f"dt must be > 0 (got {self.dt})")
        if not self.T >= self.dt:
            problems.append(f"T must be >= dt (got T={self.T}, dt={self.dt})")
        if not self.couple_tol > 0:
            problems.append(f"couple_tol must be > 0 (got {self.couple_tol})")
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES} (got {self.scheme!r})")
        if self.save_every < 1:
            problems.append("save_every must be >= 1")
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def grid(self, l):
        return QuadratureGrid(l, self.m)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def stream(seed, index=0):
    """Independent generator for run ``index`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.PCG64(ss))


def wiener_increment(noise: DiagonalNoise, dt, rng, n, batch=()):
    """Brownian increments over ``dt``.

    Returns ``(db, dw)``: ``db`` are the standard increments in E
    coordinates, ``dw = q * db`` the increment of ``Q W`` in state
    coordinates (variance ``q_k^2 dt`` per mode).
    """
    if not dt > 0:
        raise DomainError(f"dt must be > 0 (got {dt})")
    db = rng.standard_normal(tuple(batch) + (n,)) * math.sqrt(dt)
    return db, db * noise.coefficients(n)


# ---------------------------------------------------------------------------
# Implicit resolvent


def implicit_solve(rhs, model: DriftModel, dt, grid: QuadratureGrid, tol=1e-10, max_iter=60):
    """Solve ``x = rhs + dt * b(x)`` for every row of ``rhs``.

    ``x`` minimises the strictly convex functional
    ``0.5 |x - rhs|_H^2 + dt * Phi(x)``; damped Newton with Armijo
    backtracking on that functional converges for any monotone drift.
    """
    rhs = np.asarray(rhs, dtype=float)
    if isinstance(model, LinearDrift):
        return model.resolvent(rhs, dt, grid.l)
    if isinstance(model, PorousDrift) and model.exponent < 1:
        return _dual_solve(rhs, model, dt, grid, tol, max_iter)
    shape = rhs.shape
    n = shape[-1]
    b = rhs.reshape(-1, n)
    x = b.copy()
    h = model.weights(n, grid.l)
    thresh = tol * np.maximum(1.0, norm_H_array(b, grid.l, model.metric))

    def psi(xs, bs):
        d = xs - bs
        return 0.5 * np.sum(h * d * d, axis=-1) + dt * model.potential(xs, grid)

    active = np.arange(b.shape[0])
    res = np.full(b.shape[0], np.inf)
    for _ in range(max_iter):
        xa, ba = x[active], b[active]
        grad = h * (xa - ba) + dt * model.potential_grad(xa, grid)
        # state-metric residual |x - rhs - dt b(x)|_H
        r_a = np.sqrt(np.sum(grad * grad / h, axis=-1))
        res[active] = r_a
        keep = r_a > thresh[active]
        if not np.any(keep):
            active = active[:0]
            break
        active, xa, ba, grad = active[keep], xa[keep], ba[keep], grad[keep]
        hess = dt * model.potential_hess(xa, grid)
        hess[:, np.arange(n), np.arange(n)] += h
        step = -np.linalg.solve(hess, grad[..., None])[..., 0]
        f0 = psi(xa, ba)
        slope = np.sum(grad * step, axis=-1)
        t = np.ones(len(active))
        todo = np.arange(len(active))
        x_new = xa + step
        for _ in range(40):
            f1 = psi(x_new[todo], ba[todo])
            ok = f1 <= f0[todo] + 1e-4 * t[todo] * slope[todo] + 1e-14 * np.abs(f0[todo])
            todo = todo[~ok]
            if todo.size == 0:
                break
            t[todo] *= 0.5
            x_new[todo] = xa[todo] + t[todo, None] * step[todo]
        x[active] = x_new
    if active.size:
        worst = float(np.max(res[active]))
        raise SolverError(
            f"implicit solve did not reach residual {tol:g} in {max_iter} iterations "
            f"(residual {worst:.3e})",
            residual=worst,
        )
    return x.reshape(shape)


def _dual_solve(rhs, model, dt, grid, tol, max_iter):
    """Resolvent for ``r < 1`` through the nodal flux ``v = u^r``.

    The primal functional has unbounded curvature where ``u`` vanishes and
    Newton stalls there. Its Fenchel dual in ``v`` (conjugate exponent
    ``1 + 1/r``) is smooth, and ``x = rhs - dt Lambda P v`` is affine in
    ``v``.
    """
    shape = rhs.shape
    n = shape[-1]
    b = rhs.reshape(-1, n)
    r = model.exponent
    qexp = 1.0 / r
    s = grid.sine_matrix(n)
    w = grid.weights
    lam = 1.0 / model.weights(n, grid.l)
    ws = w[:, None] * s
    a = dt * (ws * lam) @ ws.T
    ridge = 1e-14 * np.trace(a) * np.eye(grid.m)
    sb_all = b @ ws.T
    u0 = b @ s.T
    v = np.sign(u0) * np.abs(u0) ** r
    x = b.copy()
    thresh = tol * np.maximum(1.0, norm_H_array(b, grid.l, model.metric))

    def dual(vs, sb):
        return (0.5 * np.einsum("bi,ij,bj->b", vs, a, vs) - np.sum(vs * sb, axis=-1)
                + np.sum(w * np.abs(vs) ** (1 + qexp), axis=-1) / (1 + qexp))

    active = np.arange(b.shape[0])
    res = np.full(b.shape[0], np.inf)
    for _ in range(max_iter):
        xa = b[active] - dt * lam * (v[active] @ ws)
        x[active] = xa
        r_a = norm_H_array(xa - b[active] - dt * model.drift(xa, grid), grid.l)
        res[active] = r_a
        keep = r_a > thresh[active]
        if not np.any(keep):
            active = active[:0]
            break
        active = active[keep]
        va, sb = v[active], sb_all[active]
        g = va @ a - sb + w * np.sign(va) * np.abs(va) ** qexp
        hess = a + ridge + np.einsum("bi,ij->bij", w * qexp * np.abs(va) ** (qexp - 1), np.eye(grid.m))
        stp = -np.linalg.solve(hess, g[..., None])[..., 0]
        f0 = dual(va, sb)
        slope = np.sum(g * stp, axis=-1)
        t = np.ones(len(active))
        v_new = va + stp
        todo = np.arange(len(active))
        for _ in range(40):
            ok = dual(v_new[todo], sb[todo]) <= f0[todo] + 1e-4 * t[todo] * slope[todo] + 1e-15 * np.abs(f0[todo])
            todo = todo[~ok]
            if todo.size == 0:
                break
            t[todo] *= 0.5
            v_new[todo] = va[todo] + t[todo, None] * stp[todo]
        v[active] = v_new
    if active.size:
        worst = float(np.max(res[active]))
        raise SolverError(
            f"implicit solve did not reach residual {tol:g} in {max_iter} iterations "
            f"(residual {worst:.3e})",
            residual=worst,
        )
    return x.reshape(shape)


def step(state, model: DriftModel, cfg: SimConfig, increment, grid=None, extra=None):
    """Advance one step of size ``cfg.dt``.

    ``state``/``increment`` are coefficient arrays (batched or not) or
    :class:`SpectralField`. ``extra`` is an optional drift added at the
    left point (the coupling term).
    """
    as_field = isinstance(state, SpectralField)
    l = state.l if as_field else (grid.l if grid is not None else None)
    x = state.coeffs if as_field else np.asarray(state, dtype=float)
    dw = increment.coeffs if isinstance(increment, SpectralField) else np.asarray(increment)
    if grid is None:
        if l is None:
            raise DomainError("a grid is needed when stepping raw arrays")
        grid = cfg.grid(l)
    out = _step(x, model, cfg.dt, grid, dw, cfg, extra)
    return SpectralField(grid.l, out) if as_field else out


def _step(x, model, dt, grid, dw, cfg, extra=None):
    rhs = x + dw if extra is None else x + dw + dt * extra
    if cfg.scheme == "implicit-fixed-point":
        return implicit_solve(rhs, model, dt, grid, cfg.solver_tol, cfg.max_iter)
    b = model.drift(x, grid)
    nb = norm_H_array(b, grid.l, model.metric)
    tamed = b / (1.0 + dt * nb)[..., None]
    out = x + dt * tamed + dw
    return out if extra is None else out + dt * extra


# ---------------------------------------------------------------------------
# Paths


@dataclass(frozen=True)
class PathTrace:
    l: float
    times: np.ndarray
    states: np.ndarray  # (n_saved, N) or (n_saved, batch..., N)
    values: np.ndarray | None = None

    def field(self, i) -> SpectralField:
        return SpectralField(self.l, self.states[i])


def _as_coeffs(x, n=None):
    c = x.coeffs if isinstance(x, SpectralField) else np.asarray(x, dtype=float)
    if n is not None and c.shape[-1] != n:
        raise DomainError(f"state has {c.shape[-1]} modes but config has N={n}")
    return c


def simulate_ensemble(x0, model, cfg: SimConfig, noise: DiagonalNoise, l, *, rng=None,
                      n_paths=None, functional=None, keep_states=True, record_steps=None):
    """Advance a batch of independent paths sharing one stream.

    ``x0`` is a single state (broadcast to ``n_paths``) or an array of shape
    ``(n_paths, N)``. Returns a :class:`PathTrace` whose ``states`` have a
    batch axis; ``functional`` (array -> array over the batch) is evaluated
    at every saved time when given. ``record_steps`` (step indices) replaces
    the regular ``save_every`` schedule.
    """
    c0 = _as_coeffs(x0, cfg.n)
    if c0.ndim == 1:
        if n_paths is None:
            n_paths = 1
        c0 = np.broadcast_to(c0, (n_paths, cfg.n)).copy()
    rng = stream(cfg.seed) if rng is None else rng
    grid = cfg.grid(l)
    x = c0.copy()
    times, states, values = [0.0], [x.copy()] if keep_states else [], []
    if functional is not None:
        values.append(functional(x))
    if record_steps is None:
        record = set(range(cfg.save_every, cfg.n_steps + 1, cfg.save_every)) | {cfg.n_steps}
    else:
        record = {int(i) for i in record_steps if 0 < i <= cfg.n_steps}
    for i in range(1, cfg.n_steps + 1):
        _, dw = wiener_increment(noise, cfg.dt, rng, cfg.n, (x.shape[0],))
        x = _step(x, model, cfg.dt, grid, dw, cfg)
        if i in record:
            times.append(i * cfg.dt)
            if keep_states:
                states.append(x.copy())
            if functional is not None:
                values.append(functional(x))
    return PathTrace(
        l,
        np.array(times),
        np.array(states) if keep_states else x[None],
        np.array(values) if functional is not None else None,
    )


def simulate_path(x0, model, cfg: SimConfig, noise: DiagonalNoise, l=None, run=0) -> PathTrace:
    l = x0.l if isinstance(x0, SpectralField) else l
    tr = simulate_ensemble(_as_coeffs(x0, cfg.n)[None], model, cfg, noise, l,
                           rng=stream(cfg.seed, run))
    return PathTrace(l, tr.times, tr.states[:, 0])


def simulate_pair_synchronous(x0, y0, model, cfg: SimConfig, noise: DiagonalNoise, l=None, run=0):
    """Two solutions from ``x0`` and ``y0`` driven by identical increments."""
    l = x0.l if isinstance(x0, SpectralField) else l
    pair = np.stack([_as_coeffs(x0, cfg.n), _as_coeffs(y0, cfg.n)])
    rng = stream(cfg.seed, run)
    grid = cfg.grid(l)
    x = pair.copy()
    times, states = [0.0], [x.copy()]
    for i in range(1, cfg.n_steps + 1):
        _, dw = wiener_increment(noise, cfg.dt, rng, cfg.n)
        x = _step(x, model, cfg.dt, grid, dw[None], cfg)
        if i % cfg.save_every == 0 or i == cfg.n_steps:
            times.append(i * cfg.dt)
            states.append(x.copy())
    st = np.array(states)
    t = np.array(times)
    return PathTrace(l, t, st[:, 0]), PathTrace(l, t, st[:, 1])


# ---------------------------------------------------------------------------
# Coupling by change of measure


def coupling_constants(x, y, T, theta, r, l=None, metric="H-1"):
    """``eps = (theta+1-r)/(2+theta)`` and ``beta = |x-y|_H^eps / (eps T)``."""
    if not T > 0:
        raise DomainError(f"T must be > 0 (got {T})")
    if not (theta >= 2 and theta > r - 1 and r > 0):
        raise DomainError(f"need theta >= 2 and theta > r - 1 (got theta={theta}, r={r})")
    eps = (theta + 1 - r) / (2 + theta)
    if not 0 < eps < 1:
        raise DomainError(f"eps = {eps} outside (0, 1)")
    if isinstance(x, SpectralField):
        d = norm_H_array(x.coeffs - y.coeffs, x.l, metric)
    else:
        d = float(norm_H_array(np.asarray(x) - np.asarray(y), l, metric))
    return eps, float(d) ** eps / (eps * T)


@dataclass
class CouplingTrace:
    eps: float
    beta: float
    T: float
    tau: float
    coupled: bool
    times: np.ndarray
    dist_eps: np.ndarray
    zeta_energy: float
    log_weight: float
    initial_distance: float
    extras: dict = field(default_factory=dict)

    @property
    def weight(self):
        return math.exp(self.log_weight)


def zeta_energy_bound(dist0, T, theta, r, eta):
    """Pathwise bound on ``int_0^T |zeta|_E^2 dt`` from the monotonicity condition."""
    gap = theta + 1 - r
    if dist0 == 0:
        return 0.0
    return math.exp(
        2 * (theta + 1) / theta * math.log(2 + theta)
        + 2 * gap / theta * math.log(dist0)
        - 2 * (theta + 1) / theta * math.log(gap)
        - (theta + 2) / theta * math.log(T)
        - 2 / theta * math.log(eta)
    )


def simulate_pair_coupled(x0, y0, model, cfg: SimConfig, theta, noise: DiagonalNoise,
                          l=None, run=0) -> CouplingTrace:
    """Run ``X`` from ``x0`` and the attracted copy ``Y`` from ``y0``.

    ``Y`` receives the extra drift ``beta (X-Y)/|X-Y|_H^eps``. Once
    ``|X-Y|_H <= couple_tol`` the copies are glued. Steps are bisected
    (Brownian bridge) while ``|X-Y|_H^eps < 10 eps beta h`` so the
    eps-distance cannot overshoot.
    """
    l = x0.l if isinstance(x0, SpectralField) else l
    x = _as_coeffs(x0, cfg.n).astype(float).copy()
    y = _as_coeffs(y0, cfg.n).astype(float).copy()
    r = model.exponent
    grid = cfg.grid(l)
    metric = model.metric
    q = noise.coefficients(cfg.n)
    eps, beta = coupling_constants(x, y, cfg.T, theta, r, l, metric)
    d0 = float(norm_H_array(x - y, l, metric))
    rng = stream(cfg.seed, run)

    state = {
        "x": x, "y": y, "t": 0.0,
        "coupled": d0 <= cfg.couple_tol, "tau": 0.0 if d0 <= cfg.couple_tol else math.nan,
        "energy": 0.0, "stoch": 0.0,
        "times": [0.0], "dist": [d0 ** eps], "substeps": 0,
    }
    if state["coupled"]:
        state["y"] = x.copy()

    def advance(db, h, depth):
        xs, ys = state["x"], state["y"]
        if state["coupled"]:
            xs = _step(xs[None], model, h, grid, (q * db)[None], cfg)[0]
            state["x"], state["y"] = xs, xs.copy()
            state["t"] += h
            return
        diff = xs - ys
        d = float(norm_H_array(diff, l, metric))
        if d ** eps < 10 * eps * beta * h and depth < cfg.max_bisections:
            g = rng.standard_normal(cfg.n)
            db1 = 0.5 * db + math.sqrt(h / 4) * g
            advance(db1, h / 2, depth + 1)
            advance(db - db1, h / 2, depth + 1)
            return
        pull = beta * diff / d ** eps
        zeta = pull / q
        z2 = float(zeta @ zeta)
        if not math.sqrt(z2) <= cfg.zeta_cap:
            raise ZetaCapError(
                f"|zeta|_E = {math.sqrt(z2):.3e} exceeds cap {cfg.zeta_cap:g} at t={state['t']:.6g}; "
                "reduce dt"
            )
        state["energy"] += z2 * h
        state["stoch"] += float(zeta @ db)
        both = np.stack([xs, ys])
        extra = np.stack([np.zeros_like(pull), pull])
        nxt = _step(both, model, h, grid, (q * db)[None], cfg, extra)
        state["x"], state["y"] = nxt[0], nxt[1]
        state["t"] += h
        state["substeps"] += 1
        dn = float(norm_H_array(nxt[0] - nxt[1], l, metric))
        state["times"].append(state["t"])
        state["dist"].append(dn ** eps)
        if dn <= cfg.couple_tol:
            state["coupled"] = True
            state["tau"] = state["t"]
            state["y"] = state["x"].copy()

    for _ in range(cfg.n_steps):
        db = rng.standard_normal(cfg.n) * math.sqrt(cfg.dt)
        advance(db, cfg.dt, 0)

    coupled = bool(state["coupled"])
    return CouplingTrace(
        eps=eps,
        beta=beta,
        T=cfg.T,
        tau=state["tau"] if coupled else math.inf,
        coupled=coupled,
        times=np.array(state["times"]),
        dist_eps=np.array(state["dist"]),
        zeta_energy=state["energy"],
        log_weight=-state["stoch"] - 0.5 * state["energy"],
        initial_distance=d0,
        extras={"substeps": state["substeps"], "final_x": state["x"]},
    )


@dataclass(frozen=True)
class GirsanovStats:
    n: int
    mean_r: float
    se_r: float
    mean_r2: float
    se_r2: float
    r2_bound: float
    r2_violation: bool
    mean_violation: bool

    @property
    def ok(self):
        return not (self.r2_violation or self.mean_violation)


def girsanov_weight_stats(traces, r2_bound=None) -> GirsanovStats:
    """Sample means of ``R`` and ``R^2`` with standard errors.

    ``r2_bound`` is the analytic bound on ``E R^2`` (``exp`` of the
    zeta-energy bound); violations are flagged at 3 standard errors.
    """
    traces = list(traces)
    if len(traces) < 30:
        raise DomainError(f"need at least 30 traces for weight statistics (got {len(traces)})")
    w = np.array([t.log_weight for t in traces])
    rw = np.exp(w)
    r2 = rw * rw
    n = len(rw)
    se = lambda a: float(np.std(a, ddof=1) / math.sqrt(n))  # noqa: E731
    mean_r, se_r = float(np.mean(rw)), se(rw)
    mean_r2, se_r2 = float(np.mean(r2)), se(r2)
    bound = math.inf if r2_bound is None else float(r2_bound)
    return GirsanovStats(
        n=n,
        mean_r=mean_r,
        se_r=se_r,
        mean_r2=mean_r2,
        se_r2=se_r2,
        r2_bound=bound,
        r2_violation=bool(mean_r2 - bound > 3 * se_r2),
        mean_violation=bool(abs(mean_r - 1.0) > 3 * se_r) if se_r > 0 else bool(abs(mean_r - 1) > 1e-12),
    )
