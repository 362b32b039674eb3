"""Command-line front end: config parsing, experiment commands, self test.

Config files are flat ``key = value`` lines; unknown keys are hard errors.
Randomized commands require an explicit seed (no wall-clock seeding).
All results are emitted as a single JSON RunRecord (floats with 17
significant digits, round-trip exact); CSV is available for tabular
sweeps.  Exit codes: 0 success, 1 verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import __version__
from .domain import ChannelParams, Spectrum, make_grid, sample_input

SCHEMA_VERSION = 1

_CONFIG_KEYS = {
    "beta": float,
    "gamma": float,
    "q": float,
    "l": float,
    "p": float,
    "m": int,
    "m_total": int,
    "n_z": int,
    "n_steps": int,
    "pad_factor": int,
    "seed": int,
    "n_samples": int,
    "tol": float,
    "out": str,
    "format": str,
}

_DEFAULTS = {
    "beta": 0.0253,  # beta_tilde = 1 at W = 2 pi, L = 1
    "gamma": 0.05,
    "q": 0.02,
    "l": 1.0,
    "p": 1.0,
    "m": 4,
    "m_total": None,
    "n_z": 64,
    "n_steps": 64,
    "pad_factor": 2,
    "seed": None,
    "n_samples": 16384,
    "tol": 1e-6,
    "out": None,
    "format": "json",
}


class ConfigError(ValueError):
    pass


def parse_config(path: str) -> dict:
    """Flat key = value file; '#' comments; unknown keys are hard errors."""
    cfg = dict(_DEFAULTS)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                cfg[key] = _CONFIG_KEYS[key](value)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    return cfg


def params_from_config(cfg: dict) -> ChannelParams:
    """CLI runs fix the inner bandwidth at W = 2 pi (delta = 1/m, P_ave = p)."""
    m = cfg["m"]
    m_total = cfg["m_total"] if cfg["m_total"] is not None else m
    grid = make_grid(m, m_total, 2.0 * np.pi)
    return ChannelParams(beta=cfg["beta"], gamma=cfg["gamma"], q=cfg["q"],
                         l=cfg["l"], p=cfg["p"], grid=grid, n_z=cfg["n_z"])


def require_seed(cfg: dict) -> int:
    if cfg["seed"] is None:
        raise ConfigError("randomized commands require an explicit 'seed' key")
    return int(cfg["seed"])


# -- serialization --------------------------------------------------------------

def _to_json(obj, indent=0) -> str:
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = ",\n".join(
            f'{pad}  {_to_json(str(k))}: {_to_json(v, indent + 1)}'
            for k, v in obj.items()
        )
        return "{\n" + items + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        return "[" + ", ".join(_to_json(v, indent) for v in obj) + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not np.isfinite(obj):
            return _to_json(str(obj))
        return format(float(obj), ".17g")
    if isinstance(obj, complex):
        return _to_json({"re": obj.real, "im": obj.imag}, indent)
    if isinstance(obj, str):
        escaped = obj.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    raise TypeError(f"cannot serialize {type(obj)}")


def run_record(command: str, cfg: dict, results: dict,
               verification: list | None = None,
               started: float | None = None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "params": {k: v for k, v in cfg.items() if v is not None},
        "results": results,
        "verification": verification or [],
        "seed": cfg.get("seed"),
        "runtime_ms": 0.0 if started is None
        else (time.monotonic() - started) * 1e3,
    }


def emit(record, cfg: dict, args, rows=None) -> None:
    fmt = cfg.get("format", "json") or "json"
    if fmt == "csv":
        if rows is None:
            raise ConfigError("csv format is only available for tabular sweeps")
        header, data = rows
        lines = [",".join(header)]
        lines += [",".join(format(float(v), ".17g") for v in row)
                  for row in data]
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        text = _to_json(record) + "\n"
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    out = cfg.get("out")
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    if getattr(args, "print", False) or not out:
        sys.stdout.write(text)


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# -- commands -------------------------------------------------------------------

def cmd_gfun(args) -> int:
    from .mi_formulas import g_function

    if args.points < 1:
        _progress("gfun: points must be >= 1")
        return 2
    if args.beta_min > args.beta_max:
        _progress("gfun: beta_min must not exceed beta_max")
        return 2
    started = time.monotonic()
    betas = np.linspace(args.beta_min, args.beta_max, args.points)
    values = [g_function(b, args.tol) for b in betas]
    if args.beta_min == 0.0 and abs(values[0] - 1.5) > max(args.tol, 1e-9):
        _progress(f"gfun: sanity failed, G(0) = {values[0]!r}")
        return 1
    cfg = {"out": args.out, "format": args.format, "tol": args.tol}
    record = run_record(
        "gfun", cfg,
        {"beta_tilde": list(map(float, betas)), "g": list(map(float, values))},
        started=started,
    )
    emit(record, cfg, args, rows=(("beta_tilde", "g"), list(zip(betas, values))))
    return 0


def cmd_mi(args) -> int:
    from .mi_formulas import mi_perturbative, mi_zero_dispersion, shannon_mi

    cfg = parse_config(args.config)
    params = params_from_config(cfg)
    started = time.monotonic()
    res = mi_perturbative(params)
    results = {
        "shannon_per_mode": res.shannon,
        "shannon_total": shannon_mi(params.eps, params.grid.m_inner),
        "value_per_mode": res.value_per_mode,
        "budget_gamma2": res.budget_gamma2,
        "budget_eps": res.budget_eps,
        "in_domain": res.in_domain,
        "eps": params.eps,
        "gamma_tilde": params.gamma_tilde,
        "beta_tilde": params.beta_tilde,
    }
    if params.beta_tilde == 0.0:
        zd = mi_zero_dispersion(params.eps, params.gamma_tilde,
                                params.grid.m_inner, cfg["tol"])
        results["zero_dispersion_total"] = zd
        results["zero_dispersion_per_mode"] = zd / params.grid.m_inner
    record = run_record("mi", cfg, results, started=started)
    emit(record, cfg, args)
    return 0


def _wick_suite(params: ChannelParams, corruption: float) -> list:
    from . import wick

    grids = [(2, params.beta_tilde), (3, params.beta_tilde)]
    reports = []
    for m, bt in grids:
        grid = make_grid(m, m, 2.0 * np.pi)
        pp = ChannelParams(beta=bt / grid.w_inner**2, gamma=params.gamma,
                           q=params.q, l=params.l, p=params.p, grid=grid,
                           n_z=params.n_z)
        reports.append(wick.verify_normalization(pp, corruption=corruption))
        reports.append(wick.verify_order_gamma(pp, corruption=corruption))
        reports.append(wick.verify_leading_singular(pp, 1, corruption=corruption))
        reports.append(wick.verify_leading_singular(pp, 2, corruption=corruption))
        reports.append(wick.verify_singular_cancellation(pp, corruption=corruption))
    return reports


def _mc_suite(params: ChannelParams, n: int, seed: int) -> list:
    from . import wick
    from .montecarlo import estimate, mc_mutual_information

    reports = []

    def add(name, passed, residual, scale, details=None):
        reports.append(wick.VerificationReport(
            name=name, passed=bool(passed), residual=float(residual),
            scale=float(scale), details=details or {}))

    est = estimate(lambda x, b, p:
                   p.grid.delta * np.abs(b[:, 0]) ** 2 / (p.q * p.l),
                   params, n, seed)
    add("mc B covariance", est.within(1.0), abs(est.mean - 1.0),
        3 * est.stderr, {"mean": est.mean, "stderr": est.stderr})

    from .montecarlo import alpha1_batch
    est = estimate(lambda x, b, p: alpha1_batch(x, b, p), params, n, seed + 1)
    add("mc alpha1 normalization", est.within(0.0), abs(est.mean),
        3 * est.stderr, {"mean": est.mean, "stderr": est.stderr})

    res = mc_mutual_information(params, n, seed + 2,
                                rao_blackwell=params.grid.m_total <= 4)
    i12 = res["i1_plus_i2"]
    budget = 3 * i12.stderr + 10.0 * params.gamma_tilde**2 * params.grid.m_inner
    add("mc i1+i2 cancellation", abs(i12.mean) <= budget, abs(i12.mean),
        budget, {"i1": res["i1"].mean, "i2": res["i2"].mean,
                 "stderr": i12.stderr})
    return reports


def cmd_verify(args) -> int:
    cfg = parse_config(args.config) if args.config else dict(_DEFAULTS)
    params = params_from_config(cfg)
    corruption = 1e-6 if args.inject_fault else 0.0
    started = time.monotonic()
    if args.suite == "wick":
        reports = _wick_suite(params, corruption)
    else:
        seed = require_seed(cfg)
        reports = _mc_suite(params, cfg["n_samples"], seed)
        if args.inject_fault:
            from . import wick
            reports.append(wick.VerificationReport(
                name="injected fault", passed=False, residual=1.0, scale=1.0))
    for rep in reports:
        _progress(str(rep))
    record = run_record(
        f"verify-{args.suite}", cfg,
        {"n_checks": len(reports),
         "n_passed": sum(r.passed for r in reports)},
        verification=[{
            "name": r.name, "passed": r.passed, "residual": r.residual,
            "scale": r.scale,
        } for r in reports],
        started=started,
    )
    emit(record, cfg, args)
    return 0 if all(r.passed for r in reports) else 1


def cmd_simulate(args) -> int:
    from .channel_sim import SimConfig, split_step_batch

    cfg = parse_config(args.config)
    if args.runs is not None:
        cfg["n_samples"] = args.runs
    if args.seed is not None:
        cfg["seed"] = args.seed
    seed = require_seed(cfg)
    params = params_from_config(cfg)
    simcfg = SimConfig(n_steps=cfg["n_steps"], pad_factor=cfg["pad_factor"],
                       seed=seed)
    started = time.monotonic()
    x = sample_input(params, seed)
    n_runs = cfg["n_samples"]
    _progress(f"simulate: {n_runs} noisy runs on M'={params.grid.m_total}")
    y = split_step_batch(x, params, simcfg, n_runs)
    w = params.grid.omegas()
    b = y * np.exp(-1j * params.beta * w**2 * params.l)[None, :] \
        - x.values[None, :]
    a2 = np.abs(b) ** 2
    ql = params.q * params.l
    ratio = params.grid.delta * a2.mean(axis=0) / ql
    se = params.grid.delta * a2.std(axis=0, ddof=1) / np.sqrt(n_runs) / ql
    kurt = (a2**2).mean(axis=0) / a2.mean(axis=0) ** 2
    cov_ok = bool(np.all(np.abs(ratio - 1.0) <= 3.0 * se)) \
        if params.gamma == 0.0 else None
    record = run_record(
        "simulate", cfg,
        {
            "covariance_ratio": ratio.tolist(),
            "covariance_stderr": se.tolist(),
            "complex_kurtosis": kurt.tolist(),
            "covariance_pass": cov_ok,
            "mean_output_energy": float(params.grid.delta * a2.sum(axis=1).mean()),
        },
        started=started,
    )
    emit(record, cfg, args)
    if params.gamma == 0.0 and not cov_ok:
        return 1
    return 0


def cmd_pdfcheck(args) -> int:
    from .channel_sim import SimConfig, empirical_pdf_check

    cfg = parse_config(args.config)
    seed = require_seed(cfg)
    params = params_from_config(cfg)
    if params.grid.m_total > 2:
        _progress("pdfcheck: config must have m_total <= 2")
        return 2
    simcfg = SimConfig(n_steps=cfg["n_steps"], pad_factor=cfg["pad_factor"],
                       seed=seed)
    started = time.monotonic()
    x = Spectrum(values=np.full(params.grid.m_total,
                                np.sqrt(params.p / params.grid.delta)),
                 grid=params.grid)
    rep = empirical_pdf_check(x, params, simcfg,
                              n_runs=max(cfg["n_samples"], 10**5))
    record = run_record("pdfcheck", cfg, rep, started=started)
    emit(record, cfg, args)
    ok = rep["l1_alpha1"] < rep["l1_p0"] and \
        rep["l1_alpha1"] <= rep["residual_budget"]
    return 0 if ok else 1


def cmd_selftest(args) -> int:
    started = time.monotonic()
    failures = []

    def check(name, fn):
        t0 = time.monotonic()
        try:
            fn()
            _progress(f"[pass] {name} ({time.monotonic() - t0:.2f}s)")
        except Exception as exc:  # noqa: BLE001 - report and continue
            failures.append((name, repr(exc)))
            _progress(f"[FAIL] {name}: {exc!r}")

    check("grid duality", _st_grid)
    check("seed determinism", _st_seeds)
    check("green function", _st_green)
    check("homogeneity ladder", _st_homogeneity)
    check("gamma10 dual path", _st_gamma10)
    check("density normalization", _st_density)
    check("wick four point", _st_wick)
    check("g function", _st_gfun)
    check("zero dispersion limit", _st_zd)
    check("linear channel", _st_linear)
    record = run_record(
        "selftest", dict(_DEFAULTS),
        {"n_checks": 10, "n_failed": len(failures),
         "failures": [n for n, _ in failures]},
        started=started,
    )
    emit(record, dict(_DEFAULTS), args)
    return 1 if failures else 0


def _st_grid():
    g = make_grid(4, 8, 2.0)
    assert abs(g.dw - 2.0 * np.pi * g.delta) < 1e-15
    assert abs(g.w_total - 4.0) < 1e-15


def _st_seeds():
    g = make_grid(4, 4, 2 * np.pi)
    p = ChannelParams(beta=0.1, gamma=0.1, q=0.01, l=1.0, p=1.0, grid=g)
    a = sample_input(p, 7).values
    b = sample_input(p, 7).values
    assert np.array_equal(a, b)


def _st_green():
    from .trajectory import green
    assert green(0.0, 0.3, 1.0) == 0.0 and green(1.0, 0.3, 1.0) == 0.0
    assert abs(green(0.25, 0.75, 1.0) - green(0.75, 0.25, 1.0)) < 1e-15


def _st_homogeneity():
    from .action import s1, s2
    from .domain import sample_b
    g = make_grid(2, 2, 2 * np.pi)
    p1 = ChannelParams(beta=0.2, gamma=0.1, q=0.01, l=1.0, p=1.0, grid=g, n_z=32)
    p2 = ChannelParams(beta=0.2, gamma=0.2, q=0.01, l=1.0, p=1.0, grid=g, n_z=32)
    x = sample_input(p1, 1)
    b = sample_b(p1, 2)
    assert abs(s1(x, b, p2) - 2 * s1(x, b, p1)) < 1e-12 * abs(s1(x, b, p1))
    assert abs(s2(x, b, p2) - 4 * s2(x, b, p1)) < 1e-10 * abs(s2(x, b, p1))


def _st_gamma10():
    from .action import gamma10
    from .domain import sample_b
    g = make_grid(3, 3, 2 * np.pi)
    p = ChannelParams(beta=0.2, gamma=0.1, q=0.01, l=1.0, p=1.0, grid=g, n_z=256)
    x = sample_input(p, 1)
    b = sample_b(p, 2)
    a = gamma10(x, b, p)
    q = gamma10(x, b, p, method="quadrature")
    assert abs(a - q) < 1e-4 * max(abs(a), 1e-12)


def _st_density():
    from .action import p0_conditional, s0
    from .domain import sample_b
    g = make_grid(2, 2, 2 * np.pi)
    p = ChannelParams(beta=0.0, gamma=0.1, q=0.01, l=1.0, p=1.0, grid=g)
    b = sample_b(p, 3)
    d = p0_conditional(b, p)
    lam = g.m_total * np.log(g.delta / (np.pi * p.q * p.l))
    assert abs(d.log_density - (lam - s0(b, p) / p.q)) < 1e-12 * abs(d.log_density)


def _st_wick():
    from . import wick
    cov = wick.diagonal_covariance({"b": [2.0, 3.0]})
    e = wick.expr_from_terms([
        (tuple(sorted((wick.pack(wick.KIND_B, 0), wick.pack(wick.KIND_B, 1),
                       wick.pack(wick.KIND_BBAR, 0), wick.pack(wick.KIND_BBAR, 1)))),
         wick.qs_const(1.0)),
    ])
    val = wick.qs_eval(wick.wick_expectation(e, cov), 1.0)
    assert abs(val - 6.0) < 1e-14


def _st_gfun():
    from .mi_formulas import g_function
    assert abs(g_function(0.0) - 1.5) < 1e-12
    assert g_function(2.0) < 1.5


def _st_zd():
    from .mi_formulas import mi_zero_dispersion, shannon_mi
    assert mi_zero_dispersion(0.01, 0.0, 2) == shannon_mi(0.01, 2)


def _st_linear():
    from .channel_sim import SimConfig, noiseless_propagate
    g = make_grid(4, 4, 2 * np.pi)
    p = ChannelParams(beta=0.3, gamma=0.0, q=0.01, l=1.0, p=1.0, grid=g)
    x = sample_input(p, 5)
    y = noiseless_propagate(x, p, SimConfig(n_steps=16, pad_factor=1))
    w = g.omegas()
    assert np.allclose(y.values, np.exp(1j * p.beta * w**2 * p.l) * x.values,
                       rtol=0, atol=1e-12)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlse-mi",
        description="Mutual-information laboratory for the noisy nonlinear "
                    "Schrodinger channel",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gfun", help="tabulate the dispersion factor G")
    p.add_argument("--beta-min", type=float, required=True)
    p.add_argument("--beta-max", type=float, required=True)
    p.add_argument("--points", type=int, required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--out", default=None)
    p.add_argument("--format", default="json", choices=("json", "csv"))
    p.add_argument("--print", action="store_true")
    p.set_defaults(fn=cmd_gfun)

    p = sub.add_parser("mi", help="closed-form mutual information values")
    p.add_argument("--config", required=True)
    p.add_argument("--print", action="store_true")
    p.set_defaults(fn=cmd_mi)

    p = sub.add_parser("verify", help="run the theorem verification suites")
    p.add_argument("--suite", choices=("wick", "mc"), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--inject-fault", action="store_true",
                   help="corrupt a coefficient to exercise the detectors")
    p.add_argument("--print", action="store_true")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("simulate", help="noisy split-step channel runs")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--print", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("pdfcheck", help="empirical conditional-density check")
    p.add_argument("--config", required=True)
    p.add_argument("--print", action="store_true")
    p.set_defaults(fn=cmd_pdfcheck)

    p = sub.add_parser("selftest", help="fast invariant suite for all modules")
    p.add_argument("--print", action="store_true")
    p.set_defaults(fn=cmd_selftest)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ConfigError as exc:
        _progress(f"config error: {exc}")
        return 2
    except FileNotFoundError as exc:
        _progress(f"config error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
