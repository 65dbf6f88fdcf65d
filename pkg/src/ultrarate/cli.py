"""Command-line runner: ``ultrarate {rates,simulate,couple,ergodic,verify}``.

Each run can write three artifacts into ``--out``: ``manifest.json``
(config echo, library version, seed scheme, timestamp), ``results.csv`` and
``checks.csv``. Tables contain no timestamps and are byte-identical when the
config and seed are unchanged.

Exit status 1 covers invalid input and failed checks; numerical failures
exit with 2.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    SimConfig,
    girsanov_weight_stats,
    simulate_ensemble,
    simulate_pair_coupled,
    stream,
    zeta_energy_bound,
)
from .ergodic import estimate_decay, h_projection, lyapunov_curve, ou_exact, sample_invariant
from .errors import DomainError, EmptyWindowError, NumericalError, RateUnderflowError
from .rates import (
    FastDiffusionSpec,
    PLaplaceSpec,
    PorousMediumSpec,
    fast_diffusion_admissible,
    p_laplace_rates,
    porous_medium_rates,
)
from .spectral import DiagonalNoise, eigenvalue, make_model, norm_H_array
from .verify import (
    SUITES,
    CheckReport,
    check_coupling_bounds,
    check_eps_slope,
    report_from_margins,
    run_suite,
)

MODELS = ("porous", "plaplace", "fastdiff", "linear")
SEED_SCHEME = ("numpy SeedSequence(seed, spawn_key=(run,)) feeding PCG64; one stream per run, "
               "normals drawn batch-major in step order")

DEFAULTS = {
    "model": "porous",
    "l": math.pi,
    "sigma": 1.0,
    "r": 2.0,
    "p": 4.0,
    "theta": None,
    "kappa": 0.3,
    "gamma": 1.0,
    "N": 16,
    "M": None,
    "dt": 1e-3,
    "T": 1.0,
    "paths": 100,
    "seed": 0,
    "out": None,
    "scheme": "implicit-fixed-point",
    "x0": None,
    "dist": 1.0,
    "burn_in": None,
    "samples": 1000,
    "record_every": 0.1,
    "suite": "default",
    "scale": 1.0,
}


# ---------------------------------------------------------------------------
# Argument handling


def build_parser():
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--model", choices=MODELS)
    common.add_argument("-l", type=float, help="domain length")
    common.add_argument("--sigma", type=float, help="noise intensity")
    common.add_argument("-r", type=float, help="nonlinearity exponent")
    common.add_argument("-p", type=float, help="p-Laplace exponent")
    common.add_argument("--theta", type=float)
    common.add_argument("--kappa", type=float, help="fast-diffusion noise decay")
    common.add_argument("--gamma", type=float, help="Lyapunov scale")
    common.add_argument("-N", type=int, help="Galerkin modes")
    common.add_argument("-M", type=int, help="quadrature nodes (default 4N)")
    common.add_argument("--dt", type=float)
    common.add_argument("-T", type=float, help="time horizon")
    common.add_argument("--paths", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="directory for manifest.json, results.csv, checks.csv")
    common.add_argument("--config", help="JSON file of defaults; flags override it")

    parser = argparse.ArgumentParser(prog="ultrarate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("rates", parents=[common], argument_default=argparse.SUPPRESS, help="explicit rate constants")
    sim = sub.add_parser("simulate", parents=[common], argument_default=argparse.SUPPRESS, help="ensemble moments over time")
    sim.add_argument("--scheme", choices=("implicit-fixed-point", "tamed-explicit"))
    sim.add_argument("--x0", type=float, help="|x0|_H along the first mode")
    cpl = sub.add_parser("couple", parents=[common], argument_default=argparse.SUPPRESS, help="coupling by change of measure")
    cpl.add_argument("--dist", type=float, help="|x0 - y0|_H")
    erg = sub.add_parser("ergodic", parents=[common], argument_default=argparse.SUPPRESS, help="decay or Lyapunov estimates")
    erg.add_argument("--x0", type=float, help="|x0|_H along the first mode")
    erg.add_argument("--burn-in", dest="burn_in", type=float)
    erg.add_argument("--samples", type=int, help="invariant-measure sample size")
    erg.add_argument("--record-every", dest="record_every", type=float)
    ver = sub.add_parser("verify", parents=[common], argument_default=argparse.SUPPRESS, help="inequality check suites")
    ver.add_argument("--suite", choices=SUITES)
    ver.add_argument("--scale", type=float, help="multiplier on trial counts")
    return parser


def resolve_config(args):
    """Defaults, then the ``--config`` file, then explicit flags."""
    given = vars(args).copy()
    command = given.pop("command")
    cfg = dict(DEFAULTS)
    path = given.pop("config", None)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DomainError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise DomainError("config file must hold a JSON object")
        doc.pop("command", None)
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise DomainError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(doc)
    cfg.update(given)
    if cfg["model"] not in MODELS:
        raise DomainError(f"model must be one of {MODELS} (got {cfg['model']!r})")
    if cfg["M"] is None:
        cfg["M"] = 4 * cfg["N"]
    return command, cfg


def sim_config(cfg, **over):
    return SimConfig(n=cfg["N"], m=cfg["M"], dt=cfg["dt"], T=cfg["T"], seed=cfg["seed"],
                     scheme=cfg.get("scheme", "implicit-fixed-point"), **over)


def model_setup(cfg):
    """Validated spec, drift model, noise, theta and rate bundle for ``cfg``."""
    kind, l = cfg["model"], cfg["l"]
    if kind == "porous":
        spec = PorousMediumSpec(l, cfg["sigma"], cfg["r"], cfg["theta"])
        rates = porous_medium_rates(spec)
        return spec, make_model("porous", cfg["r"]), DiagonalNoise.scalar(cfg["sigma"]), spec.theta_value, rates
    if kind == "plaplace":
        spec = PLaplaceSpec(l, cfg["sigma"], cfg["p"])
        rates = p_laplace_rates(spec)
        noise = DiagonalNoise.power_law(cfg["sigma"], -1.0)
        return spec, make_model("plaplace", cfg["p"]), noise, rates.theta, rates
    if kind == "fastdiff":
        spec = FastDiffusionSpec(l, cfg["r"], cfg["kappa"], cfg["gamma"], cfg["theta"])
        return spec, make_model("fastdiff", cfg["r"]), DiagonalNoise.fast_diffusion(l, cfg["kappa"]), None, None
    if not (cfg["sigma"] > 0 and l > 0):
        raise DomainError("linear model needs l > 0 and sigma > 0")
    return None, make_model("linear"), DiagonalNoise.scalar(cfg["sigma"]), None, None


def first_mode(n, l, amplitude):
    x = np.zeros(n)
    x[0] = 1.0
    return x * amplitude / norm_H_array(x, l)


# ---------------------------------------------------------------------------
# Commands. Each returns (rows, checks, summary).


def cmd_rates(cfg):
    spec, _, _, theta, rates = model_setup(cfg)
    kind = cfg["model"]
    if kind == "fastdiff":
        adm = fast_diffusion_admissible(spec)
        rows = [{"quantity": "admissible", "value": adm.admissible},
                {"quantity": "theta", "value": adm.theta},
                {"quantity": "eps", "value": adm.eps},
                {"quantity": "kappa_min", "value": adm.kappa_range[0]},
                {"quantity": "kappa_max", "value": adm.kappa_range[1]}]
        checks = [CheckReport("admissibility", 1, 0 if adm.admissible else 1, 0.0, 0.0)]
        for reason in adm.reasons:
            print(f"inadmissible: {reason}", file=sys.stderr)
        return rows, checks, {"reasons": list(adm.reasons)}
    if kind == "linear":
        lam1 = eigenvalue(1, cfg["l"])
        return [{"quantity": "lambda_1", "value": lam1}], [], {}
    rows = [{"quantity": "eta", "value": rates.eta}, {"quantity": "delta", "value": rates.delta},
            {"quantity": "theta", "value": theta}]
    rows += [{"quantity": k, "value": v} for k, v in rates.report.as_dict().items()]
    return rows, [], {}


def cmd_simulate(cfg):
    spec, model, noise, _, _ = model_setup(cfg)
    l, n = cfg["l"], cfg["N"]
    sc = sim_config(cfg)
    x0 = first_mode(n, l, 1.0 if cfg["x0"] is None else cfg["x0"])
    proj = h_projection(1, l)

    def moments(c):
        return np.stack([norm_H_array(c, l, model.metric) ** 2, proj(c)], axis=-1)

    tr = simulate_ensemble(x0, model, sc, noise, l, rng=stream(sc.seed, 0), n_paths=cfg["paths"],
                           functional=moments, keep_states=False)
    vals = tr.values  # (times, paths, 2)
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(vals.shape[1]) if vals.shape[1] > 1 else np.full_like(mean, math.nan)
    rows = [{"t": t, "mean_h2": m[0], "se_h2": s[0], "mean_proj1": m[1], "se_proj1": s[1]}
            for t, m, s in zip(tr.times, mean, se)]
    checks = [report_from_margins("finite_states", np.where(np.isfinite(vals).all(axis=(1, 2)), 1.0, -1.0), 0.0)]
    return rows, checks, {}


def cmd_couple(cfg):
    if cfg["model"] not in ("porous", "plaplace"):
        raise DomainError("couple supports --model porous or plaplace")
    spec, model, noise, theta, rates = model_setup(cfg)
    l, n = cfg["l"], cfg["N"]
    sc = sim_config(cfg)
    x0 = first_mode(n, l, 0.5 * cfg["dist"])
    traces = [simulate_pair_coupled(x0, -x0, model, sc, theta, noise, l, run=i)
              for i in range(cfg["paths"])]
    r = rates.params.r
    bound = zeta_energy_bound(traces[0].initial_distance, sc.T, theta, r, rates.eta)
    rows = [{"run": i, "tau": tr.tau, "coupled": tr.coupled, "zeta_energy": tr.zeta_energy,
             "zeta_energy_bound": bound, "log_weight": tr.log_weight}
            for i, tr in enumerate(traces)]
    checks = [check_coupling_bounds(traces, theta, r, rates.eta), check_eps_slope(traces)]
    summary = {"eps": traces[0].eps, "beta": traces[0].beta, "zeta_energy_bound": bound,
               "r2_bound": math.exp(bound), "coupled_runs": sum(t.coupled for t in traces)}
    if len(traces) >= 30:
        gs = girsanov_weight_stats(traces, math.exp(bound))
        summary.update(mean_r=gs.mean_r, se_r=gs.se_r, mean_r2=gs.mean_r2, se_r2=gs.se_r2)
        checks.append(CheckReport("girsanov_mean_r", 1, int(gs.mean_violation),
                                  (gs.se_r * 3 - abs(gs.mean_r - 1)) / max(abs(gs.mean_r), 1.0), 0.0))
        checks.append(CheckReport("girsanov_r2_bound", 1, int(gs.r2_violation),
                                  (gs.r2_bound - gs.mean_r2) / max(gs.r2_bound, gs.mean_r2), 0.0))
    return rows, checks, summary


def cmd_ergodic(cfg):
    spec, model, noise, _, rates = model_setup(cfg)
    l, n, T = cfg["l"], cfg["N"], cfg["T"]
    sc = sim_config(cfg)
    step = cfg["record_every"]
    times = np.round(np.arange(0.0, T + 1e-9, step) / sc.dt) * sc.dt
    if cfg["model"] == "fastdiff":
        x0 = first_mode(n, l, 10.0 if cfg["x0"] is None else cfg["x0"])
        curve = lyapunov_curve(spec, sc, x0, times, cfg["paths"])
        bound = curve.bound(curve.times)
        rows = [{"t": t, "mean_V": m, "se_V": s, "bound": b}
                for t, m, s, b in zip(curve.times, curve.means, curve.ses, bound)]
        margin = (3.0 - curve.worst_excess) / 3.0
        checks = [CheckReport("lyapunov_drift_bound", len(rows), int(not curve.satisfied), margin, 0.0)]
        return rows, checks, {"V0": curve.v0, "k": curve.k, "beta": curve.beta, "c": curve.c,
                              "worst_excess_se": curve.worst_excess}
    if cfg["model"] == "plaplace":
        raise DomainError("ergodic supports --model porous, linear or fastdiff")
    lam_prior = eigenvalue(1, l) if cfg["model"] == "linear" else rates.report.lam
    burn = cfg["burn_in"] if cfg["burn_in"] is not None else 5.0 / lam_prior
    inv = sample_invariant(model, sc, noise, l, burn, cfg["samples"], 1.0, n_chains=cfg["samples"],
                           lam_prior=lam_prior, run=1)
    f = h_projection(1, l)
    mu_hat = inv.estimate(f)
    x0 = first_mode(n, l, 3.0 if cfg["x0"] is None else cfg["x0"])
    est = estimate_decay(f, x0, model, sc, noise, l, times, cfg["paths"], mu_hat, run=0)
    rows = [{"t": t, "abs_bias": m, "se": s} for t, m, s in zip(est.times, est.means, est.ses)]
    summary = {"fitted_rate": est.fitted_rate, "rate_se": est.rate_se, "window": list(est.window),
               "mu_hat": list(mu_hat), "invariant_h2_mean": inv.h2_mean, "invariant_h2_se": inv.h2_se,
               "reference_rate": lam_prior}
    if cfg["model"] == "linear":
        var = float(np.var(inv.samples[:, 0], ddof=1))
        var_se = var * math.sqrt(2.0 / (len(inv.samples) - 1))
        exact = ou_exact(l, cfg["sigma"], 1, math.inf, 0.0)[1]
        summary.update(mode1_variance=var, mode1_variance_se=var_se, mode1_variance_exact=exact)
        checks = [
            CheckReport("ou_variance_3se", 1, int(abs(var - exact) > 3 * var_se),
                        (3 * var_se - abs(var - exact)) / exact, 0.0),
            CheckReport("ou_rate_15pct", 1, int(abs(est.fitted_rate - lam_prior) > 0.15 * lam_prior),
                        (0.15 * lam_prior - abs(est.fitted_rate - lam_prior)) / lam_prior, 0.0),
        ]
    else:
        target = 0.9 * lam_prior
        checks = [CheckReport("decay_rate_one_sided", 1, int(est.fitted_rate < target),
                              (est.fitted_rate - target) / max(est.fitted_rate, target), 0.0)]
    return rows, checks, summary


def cmd_verify(cfg):
    reports = run_suite(cfg["suite"], cfg["seed"], scale=cfg["scale"])
    return [], reports, {"suite": cfg["suite"]}


COMMANDS = {"rates": cmd_rates, "simulate": cmd_simulate, "couple": cmd_couple,
            "ergodic": cmd_ergodic, "verify": cmd_verify}


# ---------------------------------------------------------------------------
# Output


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def to_csv(rows):
    """CSV text with a header row. Rows holding a non-finite number name the
    offending columns in a trailing ``nonfinite`` column."""
    if not rows:
        return ""
    cols = list(rows[0])
    flag = any(isinstance(v, (float, np.floating)) and not math.isfinite(v) for row in rows for v in row.values())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols + (["nonfinite"] if flag else []))
    for row in rows:
        cells = [_cell(row[c]) for c in cols]
        if flag:
            bad = [c for c in cols if isinstance(row[c], (float, np.floating)) and not math.isfinite(row[c])]
            cells.append(";".join(bad))
        w.writerow(cells)
    return buf.getvalue()


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def write_outputs(out, command, cfg, rows, checks, summary, status):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(to_csv(rows))
    (out / "checks.csv").write_text(to_csv([c.as_dict() for c in checks]) or
                                    "name,n_trials,n_violations,worst_margin,tolerance\n")
    manifest = {
        "command": command,
        "config": _jsonable(cfg),
        "version": __version__,
        "numpy_version": np.__version__,
        "seed": cfg["seed"],
        "seed_scheme": SEED_SCHEME,
        "summary": _jsonable(summary),
        "status": status,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    command, cfg = None, None
    try:
        command, cfg = resolve_config(args)
        rows, checks, summary = COMMANDS[command](cfg)
    except (DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, RateUnderflowError, EmptyWindowError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        if cfg is not None and cfg.get("out"):
            write_outputs(cfg["out"], command, cfg, [], [], {"error": str(exc)}, 2)
        return 2
    failed = [c for c in checks if c.n_violations]
    status = 1 if failed else 0
    if rows:
        sys.stdout.write(to_csv(rows))
    if checks:
        sys.stdout.write(to_csv([c.as_dict() for c in checks]))
    for c in failed:
        print(f"check failed: {c.name} ({c.n_violations}/{c.n_trials} violations, "
              f"worst margin {c.worst_margin:.3e})", file=sys.stderr)
    if cfg.get("out"):
        write_outputs(cfg["out"], command, cfg, rows, checks, summary, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
