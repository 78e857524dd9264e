"""Odd nonlinearities f, their primitives and the admissible speed range."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.optimize import brentq

ADMISSIBILITY_TOL = 1e-10

Evaluator = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Evaluator triple (f, F, f') for an odd nonlinearity.

    ``F`` must be the primitive of ``f`` vanishing at 0; it is not integrated
    automatically because it enters the energy and profile formulas directly.
    """

    name: str
    f: Evaluator
    F: Evaluator
    df: Evaluator
    exponent: float | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, u):
        return self.f(u)

    @cached_property
    def v_star(self) -> float:
        return v_star(self)

    def describe(self) -> dict:
        out = {"kind": self.name}
        out.update(self.params)
        return out


def power(p: float) -> Nonlinearity:
    """f(u) = |u|^(p-1) u."""
    p = float(p)
    if not p > 1.0:
        raise ValueError(f"power exponent must exceed 1, got p={p}")

    def f(u):
        u = np.asarray(u, dtype=float)
        return np.abs(u) ** (p - 1.0) * u

    def F(u):
        u = np.asarray(u, dtype=float)
        return np.abs(u) ** (p + 1.0) / (p + 1.0)

    def df(u):
        u = np.asarray(u, dtype=float)
        return p * np.abs(u) ** (p - 1.0)

    return Nonlinearity("power", f, F, df, exponent=p, params={"p": p})


def saturating_cubic() -> Nonlinearity:
    """f(u) = u^3 / (1 + u^2), bounded speed range v* = 1."""

    def f(u):
        u = np.asarray(u, dtype=float)
        return u**3 / (1.0 + u**2)

    def F(u):
        u = np.asarray(u, dtype=float)
        return 0.5 * u**2 - 0.5 * np.log1p(u**2)

    def df(u):
        u = np.asarray(u, dtype=float)
        u2 = u**2
        return u2 * (3.0 + u2) / (1.0 + u2) ** 2

    return Nonlinearity("saturating-cubic", f, F, df)


def custom(f: Evaluator, F: Evaluator, df: Evaluator, name: str = "custom") -> Nonlinearity:
    return Nonlinearity(name, f, F, df)


BUILTINS: dict[str, Callable[..., Nonlinearity]] = {
    "power": power,
    "saturating-cubic": saturating_cubic,
}


def from_config(spec: dict) -> Nonlinearity:
    """Build a registered nonlinearity from ``{"kind": ..., **params}``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError("nonlinearity.kind is required")
    kind = spec["kind"]
    if kind not in BUILTINS:
        known = ", ".join(sorted(BUILTINS))
        raise ValueError(f"nonlinearity.kind: unknown built-in {kind!r} (known: {known})")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if kind == "power":
        if "p" not in params:
            raise ValueError("nonlinearity.p is required for kind 'power'")
        return power(params["p"])
    if params:
        raise ValueError(f"nonlinearity: {kind!r} takes no parameters, got {sorted(params)}")
    return BUILTINS[kind]()


@dataclass
class AdmissibilityReport:
    passed: bool
    tolerance: float
    violations: list[dict]

    @property
    def first_violation(self) -> dict | None:
        return self.violations[0] if self.violations else None


def _finite_or_raise(name: str, u: np.ndarray, values: np.ndarray) -> None:
    bad = ~np.isfinite(values)
    if np.any(bad):
        where = float(u[np.argmax(bad)])
        raise ValueError(f"non-finite {name} at u={where!r}")


def check_admissible(nl: Nonlinearity, sample_grid, tol: float = ADMISSIBILITY_TOL) -> AdmissibilityReport:
    """Check oddness, f(0) = f'(0) = 0, convexity on u >= 0 and evenness of F."""
    u = np.asarray(sample_grid, dtype=float)
    if u.ndim != 1 or u.size == 0:
        raise ValueError("sample grid must be a nonempty 1-d sequence")
    if np.any(u <= 0) or np.any(np.diff(u) <= 0):
        raise ValueError("sample grid must be positive and strictly increasing")

    with np.errstate(all="ignore"):
        fp, fm = nl.f(u), nl.f(-u)
        Fp, Fm = nl.F(u), nl.F(-u)
        dfp = nl.df(u)
        at_zero = np.array([0.0])
        f0, df0 = nl.f(at_zero)[0], nl.df(at_zero)[0]
    for name, vals in (("f", fp), ("f", fm), ("F", Fp), ("F", Fm), ("f'", dfp)):
        _finite_or_raise(name, u, vals)
    if not (np.isfinite(f0) and np.isfinite(df0)):
        raise ValueError("non-finite evaluation at u=0")

    violations = []
    if abs(f0) > tol:
        violations.append({"check": "f(0)=0", "u": 0.0, "value": float(f0)})
    if abs(df0) > tol:
        violations.append({"check": "f'(0)=0", "u": 0.0, "value": float(df0)})

    def record(check, mask, values):
        idx = np.flatnonzero(mask)
        if idx.size:
            i = idx[0]
            violations.append({"check": check, "u": float(u[i]), "value": float(values[i])})

    odd = fp + fm
    record("f odd", np.abs(odd) > tol, odd)
    slope_jump = np.diff(np.concatenate([[df0], dfp]))
    record("f' nondecreasing", slope_jump < -tol, slope_jump)
    record("F >= 0", Fp < -tol, Fp)
    even = Fp - Fm
    record("F even", np.abs(even) > tol, even)

    violations.sort(key=lambda item: item["u"])
    return AdmissibilityReport(not violations, tol, violations)


def v_star(nl: Nonlinearity) -> float:
    """lim f(u)/u as u -> oo, sampled on u = 2^k; +inf if still growing."""
    u = 2.0 ** np.arange(61)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = nl.f(u) / u
    finite = np.isfinite(ratio)
    if not finite[0]:
        raise ValueError("non-finite f(u)/u at u=1")
    if not np.all(finite):
        # overflow: the ratio outgrew double precision
        return math.inf
    drops = np.diff(ratio) < -ADMISSIBILITY_TOL * np.maximum(1.0, np.abs(ratio[:-1]))
    if np.any(drops):
        k = int(np.argmax(drops)) + 1
        raise ValueError(f"f(u)/u decreases at u=2^{k}; contradicts convexity")
    if ratio[-1] > 1.1 * ratio[-2]:
        return math.inf
    return float(ratio[-1])


def tilde_F(nl: Nonlinearity, s):
    """F~(s) = 2F(s)/s^2 for s > 0."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise ValueError("tilde_F is defined for s > 0 only")
    out = 2.0 * nl.F(s_arr) / s_arr**2
    return float(out) if out.ndim == 0 else out


def s0_of_v(nl: Nonlinearity, v: float) -> float:
    """Positive root of F~(s) = v, i.e. the soliton amplitude at speed v."""
    v = float(v)
    vs = nl.v_star
    if not (0.0 < v < vs):
        raise ValueError(f"speed v={v} outside admissible range (0, {vs})")

    def g(s):
        return tilde_F(nl, s) - v

    lo, hi = 1.0, 1.0
    while g(lo) >= 0:
        lo *= 0.5
        if lo < 1e-300:
            raise ValueError(f"no amplitude found for v={v}")
    while g(hi) <= 0:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError(f"no amplitude found for v={v}")
    s0 = brentq(g, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    if abs(g(s0)) > 1e-12 * v:
        raise ArithmeticError(f"amplitude root residual {g(s0):.3e} exceeds tolerance")
    return float(s0)
