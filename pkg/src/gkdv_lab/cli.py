"""Command-line front end: profile, spectrum, reduced, pde, verify, compare, run.

Outputs go to a directory given by ``--out``: CSV tables with 17 significant
digits and JSON reports with sorted keys, each written atomically.  Scenario
files (YAML) drive ``run``; flags mirror their keys.  ``GKDV_LAB_THREADS``
caps BLAS/FFT threads (default 1, which keeps outputs bit-reproducible).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _cap_threads() -> None:
    threads = os.environ.get("GKDV_LAB_THREADS", "1")
    for var in THREAD_VARS:
        os.environ.setdefault(var, threads)


class UsageError(ValueError):
    """Invalid command-line or scenario input; the message names the field."""


# -- output ----------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist"):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def write_json(path: Path, payload) -> None:
    _atomic_write(Path(path), json.dumps(_clean(payload), sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format(float(v), ".17g") for v in row])
    _atomic_write(Path(path), buf.getvalue())


def read_csv(path: Path):
    import numpy as np

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader])
    return header, data.reshape(-1, len(header))


# -- scenario configs ------------------------------------------------------------------

# per-scenario keys: name -> (type, default)
COMMON = {"v": (float, 1.0), "seed": (int, 0), "out": (str, "out")}
SCHEMAS = {
    "profile": {"x_max": (float, None), "n": (int, 4096)},
    "spectrum": {"n": (int, 512), "rho": (float, 5.0), "scheme": (str, "fourier")},
    "reduced": {"K": (int, 2), "x0": (list, None), "v0": (list, None), "signs": (list, None),
                "q0": (float, 14.0), "init": (str, "manual"), "tmax": (float, 1e3),
                "tol": (float, 1e-11), "samples": (int, 201), "spacing": (str, "linear"),
                "gradient": (str, "analytic")},
    "pde": {"q0": (float, 12.0), "sigma": (int, 1), "mu_minus": (float, 0.0),
            "mu_plus": (float, 0.0), "length": (float, 160.0), "n": (int, 2048),
            "tmax": (float, 200.0), "sample_dt": (float, 0.5), "dt": (float, None),
            "rho": (float, 5.0), "initializer": (str, "rest")},
}


def _coerce(path: str, kind, value):
    if value is None:
        return None
    try:
        if kind is list:
            if isinstance(value, str):
                value = [s for s in value.split(",") if s.strip()]
            if not isinstance(value, (list, tuple)):
                raise TypeError
            return [float(v) for v in value]
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise TypeError
        return kind(value)
    except (TypeError, ValueError):
        raise UsageError(f"{path}: expected {kind.__name__}, got {value!r}") from None


def validate_config(raw) -> dict:
    """Check a scenario mapping and fill defaults; errors name the offending key path."""
    from .nonlinearity import from_config

    if not raw:
        raise UsageError("empty scenario: required fields are 'scenario' and 'nonlinearity'")
    if not isinstance(raw, dict):
        raise UsageError("scenario file must hold a mapping")
    missing = [k for k in ("scenario", "nonlinearity") if k not in raw]
    if missing:
        raise UsageError(f"missing required field(s): {', '.join(missing)}")
    scenario = raw["scenario"]
    if scenario not in SCHEMAS:
        raise UsageError(f"scenario: unknown value {scenario!r} (known: {', '.join(SCHEMAS)})")
    nl_spec = raw["nonlinearity"]
    if isinstance(nl_spec, (int, float)):
        nl_spec = {"kind": "power", "p": float(nl_spec)}
    try:
        from_config(nl_spec)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc) if "nonlinearity" in str(exc) else f"nonlinearity: {exc}") from None
    schema = {**COMMON, **SCHEMAS[scenario]}
    params = raw.get("params", {}) or {}
    if not isinstance(params, dict):
        raise UsageError("params: expected a mapping")
    unknown = sorted(set(params) - set(schema))
    top_unknown = sorted(set(raw) - {"scenario", "nonlinearity", "params", *COMMON})
    if unknown or top_unknown:
        names = [f"params.{k}" for k in unknown] + top_unknown
        raise UsageError(f"unknown field(s): {', '.join(names)}")
    cfg = {"scenario": scenario, "nonlinearity": nl_spec}
    for key, (kind, default) in schema.items():
        source = raw if key in COMMON else params
        path = key if key in COMMON else f"params.{key}"
        value = source.get(key, default)
        cfg[key] = _coerce(path, kind, value)
    for key in ("tol", "n", "tmax", "sample_dt", "length", "rho"):
        if key in cfg and cfg[key] is not None and cfg[key] <= 0:
            raise UsageError(f"params.{key}: must be positive")
    if cfg["v"] <= 0:
        raise UsageError("v: must be positive")
    return cfg


def load_config(path) -> dict:
    import yaml

    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read scenario {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise UsageError(f"scenario {path} is not valid YAML: {exc}") from None
    return validate_config(raw)


# -- pipelines ---------------------------------------------------------------------------

def _nonlinearity(cfg):
    from .nonlinearity import from_config

    return from_config(cfg["nonlinearity"])


def _check(name, measured, tol, passed, resolution):
    return {"name": name, "measured": measured, "tolerance": tol, "passed": bool(passed),
            "resolution": resolution}


def run_profile(cfg) -> dict:
    from .profile import ode_residual, operator_residual, soliton

    nl = _nonlinearity(cfg)
    sol = soliton(nl, cfg["v"], cfg["x_max"], cfg["n"])
    prof, c = sol.profile, sol.constants
    x, Q, dQ = prof.full_grid()
    out = Path(cfg["out"])
    write_csv(out / "profile.csv", ["x", "Q", "dQ", "Qtilde"],
              zip(x, Q, dQ, sol.qtilde.full_grid()))
    res = {"n": prof.n, "x_max": prof.x_max}
    norm_gap = abs(c.norm_sq - c.norm_sq_formula) / c.norm_sq
    checks = [
        _check("ode-residual", ode_residual(prof), 1e-8, ode_residual(prof) <= 1e-8, res),
        _check("velocity-derivative-residual", operator_residual(sol.qtilde), 1e-6,
               operator_residual(sol.qtilde) <= 1e-6, res),
        _check("norm-formula", norm_gap, 1e-8, norm_gap <= 1e-8, res),
    ]
    return {"constants": c.as_dict(), "checks": checks}


def run_spectrum(cfg) -> dict:
    from .profile import soliton
    from .spectral import spectral_data

    sol = soliton(_nonlinearity(cfg), cfg["v"])
    data = spectral_data(sol, n=cfg["n"], rho=cfg["rho"], scheme=cfg["scheme"])
    res = {"n": cfg["n"], "scheme": cfg["scheme"], "rho": cfg["rho"]}
    checks = []
    for key, value in sorted(data.checks.items()):
        if key == "YLY2":
            checks.append(_check(key, value, 1e-8, abs(value) > 1e-8, res))
        elif key == "ZQp":
            # same sign as -<Q, Q~>, which is positive in the unstable regime
            checks.append(_check(key, value, 0.0, value * sol.constants.qq_tilde < 0, res))
        elif key != "LZp_plus_Q":
            checks.append(_check(key, value, 1e-8, value <= 1e-8, res))
    if data.lambda0_est is not None:
        checks.append(_check("coercivity", data.lambda0_est, 0.0, data.lambda0_est > 0, res))
    # <Z, Q'> tends to -<Q, Q~> as rho grows; the gap is informative, not a check
    zq_gap = data.checks["ZQp"] + sol.constants.qq_tilde
    return {"lambda_neg": data.lambda_neg, "nu": data.nu, "checks": checks,
            "identities": data.checks, "ZQp_minus_limit": zq_gap,
            "lambda0_est": data.lambda0_est}


def run_reduced(cfg) -> dict:
    from . import reduced
    from .profile import interaction_constant, soliton

    nl = _nonlinearity(cfg)
    K, v = cfg["K"], cfg["v"]
    signs = [int(s) for s in (cfg["signs"] or [1] * K)]
    if len(signs) != K or any(s not in (1, -1) for s in signs):
        raise UsageError(f"params.signs: need {K} entries of +1/-1")
    consts = None
    if cfg["init"] in ("stable-manifold", "refined"):
        if K != 2:
            raise UsageError("params.init: the stable-manifold initializer needs K = 2")
        consts = soliton(nl, v).constants
        state = reduced.stable_manifold_state(consts, cfg["q0"], tuple(signs), v)
    elif cfg["init"] == "manual":
        if cfg["x0"] is None:
            raise UsageError("params.x0: required for manual initial data")
        x0 = cfg["x0"]
        v0 = cfg["v0"] or [v] * K
        if len(x0) != K or len(v0) != K:
            raise UsageError(f"params.x0 / params.v0: need {K} entries each")
        state = reduced.ReducedState(x0, v0, tuple(signs))
    else:
        raise UsageError(f"params.init: unknown value {cfg['init']!r}")
    family = reduced.family_for(nl, state.v)
    if cfg["init"] == "refined":
        state = reduced.refine_initial_gap(family, state, consts, cfg["tmax"])
    traj = reduced.integrate_reduced(family, state, (0.0, cfg["tmax"]), rtol=cfg["tol"],
                                     atol=cfg["tol"] * 1e-2, gradient=cfg["gradient"],
                                     samples=cfg["samples"], spacing=cfg["spacing"])
    write_csv(Path(cfg["out"]) / "trajectory.csv", traj.columns(), traj.rows())
    report = {"status": traj.status, "reason": traj.reason, "E_drift": traj.E_drift,
              "M_drift": traj.M_drift, "steps": traj.steps, "kappa_fit": None,
              "kappa_formula": None, "residual": None}
    if K == 2:
        consts = consts or soliton(nl, v).constants
        if consts.qq_tilde * signs[0] * signs[1] < 0:
            report["kappa_formula"] = interaction_constant(consts.k0, consts.qq_tilde, v)
        try:
            fit = reduced.fit_log_law(traj, v)
            report.update(kappa_fit=fit.kappa_fit, residual=fit.residual, window=fit.window)
        except ValueError as exc:
            report["fit_note"] = str(exc)
    res = {"rtol": cfg["tol"], "gradient": cfg["gradient"], "t": [0.0, cfg["tmax"]]}
    drift = max(traj.E_drift, traj.M_drift)
    report["checks"] = [_check("conservation", drift, 1e-8, drift <= 1e-8, res)]
    return report


def run_pde(cfg) -> dict:
    from . import pde

    nl_spec = cfg["nonlinearity"]
    if nl_spec.get("kind") != "power":
        raise UsageError("nonlinearity: tracked runs support power nonlinearities only")
    track = pde.TrackConfig(p=float(nl_spec["p"]), v=cfg["v"], q0=cfg["q0"],
                            sigma=cfg["sigma"], mu_minus=cfg["mu_minus"],
                            mu_plus=cfg["mu_plus"], length=cfg["length"], n=cfg["n"],
                            t_max=cfg["tmax"], sample_dt=cfg["sample_dt"], dt=cfg["dt"],
                            rho=cfg["rho"], initializer=cfg["initializer"])
    run = pde.tracked_run(track)
    write_csv(Path(cfg["out"]) / "series.csv", pde.ModulationRecord.COLUMNS, run.series())
    rep = dict(run.report)
    res = {"length": track.length, "n": track.n, "dt": track.dt, "sample_dt": track.sample_dt}
    checks = [_check("orthogonality", rep["orthogonality_max"], 1e-10,
                     (rep["orthogonality_max"] or 0.0) <= 1e-10, res)]
    for key, tol in (("dtqk_residual_ratio", 0.3), ("dtpk_residual_ratio", 0.3),
                     ("reduced_gap_maxdev", 0.05)):
        if rep.get(key) is not None:
            checks.append(_check(key, rep[key], tol, rep[key] <= tol, res))
    rep["checks"] = checks
    rep["config"] = track.as_dict()
    return rep


PIPELINES = {"profile": run_profile, "spectrum": run_spectrum, "reduced": run_reduced,
             "pde": run_pde}


def run_scenario(cfg: dict) -> dict:
    """Dispatch a validated scenario, write its outputs and report; returns the report."""
    report = PIPELINES[cfg["scenario"]](cfg)
    report["scenario"] = {k: v for k, v in cfg.items()}
    report["passed"] = all(c["passed"] for c in report.get("checks", []))
    report["provenance"] = _provenance()
    name = {"profile": "constants.json"}.get(cfg["scenario"], "report.json")
    write_json(Path(cfg["out"]) / name, report)
    return report


def _provenance() -> dict:
    import numpy
    import scipy

    from . import __version__

    return {"gkdv_lab": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": sys.version.split()[0],
            "threads": os.environ.get("GKDV_LAB_THREADS", "1")}


def compare_series(a, b, columns=None, tolerance: float = 0.0, time_column: str = "t") -> dict:
    """Max deviation per shared column after aligning b onto a's time grid."""
    import numpy as np

    ha, da = read_csv(a)
    hb, db = read_csv(b)
    cols = list(columns) if columns else [c for c in ha if c != time_column]
    for c in cols + [time_column]:
        if c not in ha or c not in hb:
            raise UsageError(f"column {c!r} missing from {'first' if c not in ha else 'second'} file")
    ta, tb = da[:, ha.index(time_column)], db[:, hb.index(time_column)]
    interpolated = ta.shape != tb.shape or not np.array_equal(ta, tb)
    if interpolated:
        inside = (ta >= tb.min()) & (ta <= tb.max())
    else:
        inside = np.ones(ta.size, dtype=bool)
    out = {}
    for c in cols:
        ya = da[:, ha.index(c)][inside]
        yb = db[:, hb.index(c)]
        yb = np.interp(ta[inside], tb, yb) if interpolated else yb
        dev = np.abs(ya - yb)
        scale = np.maximum(np.abs(ya), 1e-300)
        out[c] = {"max_abs": float(dev.max()) if dev.size else 0.0,
                  "max_rel": float((dev / scale).max()) if dev.size else 0.0}
    worst = max((v["max_rel"] for v in out.values()), default=0.0)
    return {"columns": out, "interpolated": bool(interpolated), "samples": int(inside.sum()),
            "tolerance": tolerance, "passed": bool(worst <= tolerance)}


# -- argument parsing ----------------------------------------------------------------------

def _nl_from_args(args):
    if args.nonlinearity:
        return {"kind": args.nonlinearity}
    return {"kind": "power", "p": args.p}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gkdv-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, default_p=7.0, out="out"):
        p.add_argument("--p", type=float, default=default_p, help="power exponent")
        p.add_argument("--nonlinearity", help="built-in nonlinearity name instead of --p")
        p.add_argument("--v", type=float, default=1.0, help="soliton speed")
        p.add_argument("--out", default=out, help="output directory")

    p = sub.add_parser("profile", help="soliton profile, velocity derivative and constants")
    common(p, 3.0)
    p.add_argument("--xmax", type=float)
    p.add_argument("--n", type=int, default=4096)

    p = sub.add_parser("spectrum", help="linearized spectrum and adjoint directions")
    common(p)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--rho", type=float, default=5.0)
    p.add_argument("--scheme", choices=["fourier", "fd4"], default="fourier")

    p = sub.add_parser("reduced", help="reduced soliton-manifold flow")
    common(p)
    p.add_argument("--K", type=int, default=2)
    p.add_argument("--x0", help="comma-separated initial centres")
    p.add_argument("--v0", help="comma-separated initial speeds")
    p.add_argument("--signs", help="comma-separated soliton signs")
    p.add_argument("--init", choices=["manual", "stable-manifold", "refined"], default="manual")
    p.add_argument("--q0", type=float, default=14.0)
    p.add_argument("--tmax", type=float, default=1e3)
    p.add_argument("--tol", type=float, default=1e-11)
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--spacing", choices=["linear", "log"], default="linear")
    p.add_argument("--gradient", choices=["analytic", "fd"], default="analytic")

    p = sub.add_parser("pde", help="tracked pseudo-spectral two-soliton run")
    common(p)
    p.add_argument("--q0", type=float, default=12.0)
    p.add_argument("--sigma", type=int, choices=[1, -1], default=1)
    p.add_argument("--mu-minus", type=float, default=0.0)
    p.add_argument("--mu-plus", type=float, default=0.0)
    p.add_argument("--lambda", dest="length", type=float, default=160.0, help="domain length")
    p.add_argument("--n", type=int, default=2048)
    p.add_argument("--tmax", type=float, default=200.0)
    p.add_argument("--sample-dt", type=float, default=0.5)
    p.add_argument("--dt", type=float)
    p.add_argument("--rho", type=float, default=5.0)
    p.add_argument("--initializer", choices=["rest", "stable-manifold"], default="rest")

    p = sub.add_parser("verify", help="run a named verification suite")
    p.add_argument("--suite", required=True, help="suite name or 'all'")
    p.add_argument("--out", default="out")

    p = sub.add_parser("compare", help="compare two CSV series")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--columns", help="comma-separated columns (default: all shared)")
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--time-column", default="t")
    p.add_argument("--out", help="write the report JSON here")

    p = sub.add_parser("run", help="execute a YAML scenario file")
    p.add_argument("config")
    p.add_argument("--out", help="override the scenario output directory")
    return parser


def _config_from_args(args) -> dict:
    keys = set(SCHEMAS[args.command])
    params = {}
    for key in keys:
        attr = {"x_max": "xmax"}.get(key, key)
        if hasattr(args, attr):
            params[key] = getattr(args, attr)
    raw = {"scenario": args.command, "nonlinearity": _nl_from_args(args), "v": args.v,
           "out": args.out, "params": params}
    return validate_config(raw)


def _run_verify(args) -> int:
    from .suites import SUITES

    names = list(SUITES) if args.suite == "all" else [args.suite]
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise UsageError(f"--suite: unknown suite {unknown[0]!r} (known: {', '.join(SUITES)}, all)")
    ok = True
    for name in names:
        checks = SUITES[name]()
        passed = all(c.passed for c in checks)
        ok &= passed
        for c in checks:
            shown = "n/a" if c.measured is None else f"{c.measured:.4g}"
            print(f"{'PASS' if c.passed else 'FAIL'} {name}/{c.name}: {shown} "
                  f"(tol {c.tolerance:g}) {c.detail}".rstrip())
        write_json(Path(args.out) / f"verify-{name}.json",
                   {"suite": name, "passed": passed, "checks": [c.as_dict() for c in checks],
                    "provenance": _provenance()})
    return 0 if ok else 1


def main(argv=None) -> int:
    _cap_threads()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return _run_verify(args)
        if args.command == "compare":
            cols = args.columns.split(",") if args.columns else None
            report = compare_series(args.a, args.b, cols, args.tol, args.time_column)
            if args.out:
                write_json(Path(args.out), report)
            print(json.dumps(_clean(report), sort_keys=True, indent=2))
            return 0 if report["passed"] else 1
        if args.command == "run":
            cfg = load_config(args.config)
            if args.out:
                cfg["out"] = args.out
        else:
            cfg = _config_from_args(args)
        report = run_scenario(cfg)
        print(json.dumps(_clean({k: v for k, v in report.items() if k != "scenario"}),
                         sort_keys=True, indent=2))
        return 0 if report["passed"] else 1
    except UsageError as exc:
        parser.exit(2, f"gkdv-lab: usage error: {exc}\n")
    except (ArithmeticError, ValueError) as exc:
        print(f"gkdv-lab: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
