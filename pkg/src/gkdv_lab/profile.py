"""Solitary-wave profiles Q_v, velocity derivatives Q~_v and derived constants."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp

from . import fourier
from .nonlinearity import Nonlinearity, s0_of_v, tilde_F

SWITCH_FRACTION = 0.9
RTOL = 1e-13
ATOL = 1e-15
DEFAULT_N = 4096

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def default_x_max(v: float) -> float:
    return 40.0 / math.sqrt(v)


def _excess_mean(nl: Nonlinearity, v: float, s0: float, tau):
    """Mean of f(s) - v s over [s0 - tau, s0].

    Equals (v s^2 - 2F(s)) / (2 tau) at s = s0 - tau, without the cancellation
    of the direct formula near the double root.
    """
    tau = np.asarray(tau, dtype=float)
    s = s0 - tau[..., None] * _GL_NODES
    vals = nl.f(s) - v * s
    return vals @ _GL_WEIGHTS


def _radicand_slope(nl: Nonlinearity, v: float, q: float) -> float:
    # v - F~(Q) for 0 < Q < s0; positive by strict monotonicity of F~
    return v - 2.0 * nl.F(np.array(q)) / q**2


@dataclass(frozen=True, eq=False)
class _Trajectory:
    """Dense two-phase solution of the first-order profile equation."""

    nl: Nonlinearity
    v: float
    s0: float
    x_switch: float
    inner: object
    outer: object
    x_end: float
    with_psi: bool

    def _split(self, x):
        ax = np.abs(np.asarray(x, dtype=float))
        return ax, ax <= self.x_switch, (ax > self.x_switch) & (ax <= self.x_end), ax > self.x_end

    def state(self, x):
        """Q, Q' (for x >= 0 convention) and, if carried, psi, psi', I at |x|."""
        ax, m_in, m_out, m_far = self._split(x)
        flat = ax.ravel()
        nvar = 5 if self.with_psi else 2
        out = np.empty((nvar, flat.size))
        v, s0 = self.v, self.s0
        mi, mo, mf = m_in.ravel(), m_out.ravel(), m_far.ravel()
        if mi.any():
            y = self.inner(flat[mi])
            P = y[0]
            out[0, mi] = s0 - P**2
            out[1, mi] = -2.0 * P * np.sqrt(0.5 * _excess_mean(self.nl, v, s0, P**2))
            if self.with_psi:
                out[2:, mi] = y[1:]
        if mo.any():
            y = self.outer(flat[mo])
            Q = np.exp(y[0])
            out[0, mo] = Q
            out[1, mo] = -Q * np.sqrt(np.maximum(v - tilde_F(self.nl, Q), 0.0))
            if self.with_psi:
                out[2:, mo] = y[1:]
        if mf.any():
            # beyond the integrated range: pure exponential tails
            y_end = self.outer(self.x_end)
            rate = math.sqrt(v)
            dx = flat[mf] - self.x_end
            Q = np.exp(y_end[0] - rate * dx)
            out[0, mf] = Q
            out[1, mf] = -rate * Q
            if self.with_psi:
                out[2, mf] = y_end[1] * np.exp(rate * dx)
                out[3, mf] = y_end[2] * np.exp(rate * dx)
                out[4, mf] = y_end[3] + y_end[1] * np.exp(y_end[0]) * dx
        return out.reshape((nvar,) + ax.shape)

    def log_q(self, x):
        return np.log(self.state(x)[0])


def _integrate(nl: Nonlinearity, v: float, s0: float, x_end: float, with_psi: bool) -> _Trajectory:
    p_switch = math.sqrt((1.0 - SWITCH_FRACTION) * s0)

    def slope_P(P):
        return math.sqrt(0.5 * float(_excess_mean(nl, v, s0, P * P)))

    def rhs_inner(x, y):
        P = y[0]
        dP = slope_P(P)
        if not with_psi:
            return [dP]
        Q = s0 - P * P
        psi, dpsi = y[1], y[2]
        return [dP, dpsi, (v - float(nl.df(np.array(Q)))) * psi, psi * Q]

    def rhs_outer(x, y):
        Q = math.exp(y[0])
        rad = _radicand_slope(nl, v, Q)
        if rad < -1e-10 * v:
            raise ArithmeticError(f"negative radicand {rad:.3e} at x={x:.6g}, Q={Q:.6g}")
        dy = -math.sqrt(max(rad, 0.0))
        if not with_psi:
            return [dy]
        psi, dpsi = y[1], y[2]
        return [dy, dpsi, (v - float(nl.df(np.array(Q)))) * psi, psi * Q]

    def reach_switch(x, y):
        return y[0] - p_switch

    reach_switch.terminal = True
    reach_switch.direction = 1

    gap = float(nl.f(np.array(s0))) - v * s0
    if not gap > 0:
        raise ArithmeticError(f"f(s0) - v s0 = {gap:.3e} must be positive")
    y0 = [0.0]
    if with_psi:
        y0 += [1.0 / gap, 0.0, 0.0]
    # phase 1 reaches Q = 0.9 s0 well before x = 20/sqrt(v) for any admissible f
    first = solve_ivp(rhs_inner, (0.0, x_end), y0, method="DOP853", rtol=RTOL, atol=ATOL,
                      dense_output=True, events=reach_switch)
    if first.status != 1:
        raise ArithmeticError("profile never dropped below the switch-over amplitude")
    x_switch = float(first.t_events[0][0])
    state_sw = first.y_events[0][0]

    y1 = [math.log(s0 - state_sw[0] ** 2)]
    if with_psi:
        y1 += list(state_sw[1:])
    atol = [ATOL] + ([1e-300, 1e-300, 1e-300] if with_psi else [])
    second = solve_ivp(rhs_outer, (x_switch, x_end), y1, method="DOP853", rtol=RTOL,
                       atol=atol, dense_output=True)
    if not second.success:
        raise ArithmeticError(f"profile integration failed: {second.message}")
    return _Trajectory(nl, v, s0, x_switch, first.sol, second.sol, x_end, with_psi)


@dataclass(frozen=True, eq=False)
class SolitonProfile:
    """Half-line samples of Q_v on x_j = j x_max / n, j = 0..n."""

    nonlinearity: Nonlinearity
    v: float
    s0: float
    x_max: float
    x: np.ndarray
    Q: np.ndarray
    dQ: np.ndarray
    k0: float
    k0_tail: float
    tail_warning: bool
    trajectory: _Trajectory = field(repr=False)

    @property
    def n(self) -> int:
        return self.x.size - 1

    @property
    def h(self) -> float:
        return self.x_max / self.n

    def __call__(self, x):
        return self.trajectory.state(x)[0]

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return np.sign(x) * self.trajectory.state(x)[1]

    def second_derivative(self, x):
        q = self(x)
        return self.v * q - self.nonlinearity.f(q)

    def full_grid(self):
        """Periodic reflection on [-x_max, x_max): (x, Q, dQ)."""
        x = np.concatenate([-self.x[:0:-1], self.x[:-1]])
        Q = np.concatenate([self.Q[:0:-1], self.Q[:-1]])
        dQ = np.concatenate([-self.dQ[:0:-1], self.dQ[:-1]])
        return x, Q, dQ


def line_integral(even_half: np.ndarray, h: float) -> float:
    """Trapezoid rule on the full reflected periodic grid for even integrands."""
    return h * (even_half[0] + 2.0 * even_half[1:-1].sum() + even_half[-1])


def compute_profile(nl: Nonlinearity, v: float, x_max: float | None = None,
                    n: int = DEFAULT_N) -> SolitonProfile:
    v = float(v)
    s0 = s0_of_v(nl, v)
    if x_max is None:
        x_max = default_x_max(v)
    if x_max < 20.0 / math.sqrt(v) - 1e-12:
        raise ValueError(f"x_max={x_max} below 20/sqrt(v)")
    if n < 1024:
        raise ValueError(f"grid size n={n} below 1024")
    traj = _integrate(nl, v, s0, x_max, with_psi=False)
    x = np.linspace(0.0, x_max, n + 1)
    Q, dQ = traj.state(x)
    dQ[0] = 0.0

    if np.any(np.diff(Q) >= 0):
        i = int(np.argmax(np.diff(Q) >= 0))
        raise ArithmeticError(f"profile not strictly decreasing near x={x[i]:.6g}")
    first_integral = 0.5 * dQ**2 + nl.F(Q) - 0.5 * v * Q**2
    worst = float(np.max(np.abs(first_integral)))
    if worst > 1e-10 * s0:
        raise ArithmeticError(f"first-integral residual {worst:.3e} exceeds 1e-10 s0")

    k0 = _k0_quadrature(nl, v, s0)
    outer = x >= 0.5 * x_max
    k0_tail = float(np.exp(np.mean(traj.log_q(x[outer]) + math.sqrt(v) * x[outer])))
    tail_warning = abs(k0_tail - k0) > 1e-4 * k0
    if tail_warning:
        warnings.warn(f"k0 tail fit {k0_tail:.10g} disagrees with quadrature {k0:.10g}")
    return SolitonProfile(nl, v, s0, float(x_max), x, Q, dQ, k0, k0_tail, tail_warning, traj)


def _quad(fun, a, b):
    val, err = quad(fun, a, b, epsabs=1e-15, epsrel=1e-13, limit=400)
    if not np.isfinite(val) or err > 1e-9 * max(abs(val), 1e-12):
        raise ArithmeticError(f"quadrature did not converge on [{a}, {b}]")
    return val


def _k0_quadrature(nl: Nonlinearity, v: float, s0: float) -> float:
    s_mid = 0.5 * s0

    def near_zero(s):
        # (s^2 - 2F/v)^(-1/2) - 1/s written without cancellation
        if s == 0.0:
            return 0.0
        w = tilde_F(nl, s) / v
        return math.expm1(-0.5 * math.log1p(-w)) / s

    def near_top(tau):
        # s = s0 - tau^2 removes the inverse square-root singularity at s0
        return math.sqrt(2.0 * v / float(_excess_mean(nl, v, s0, tau * tau)))

    integral = _quad(near_zero, 0.0, s_mid)
    integral += _quad(near_top, 0.0, math.sqrt(s0 - s_mid)) - math.log(s0 / s_mid)
    return s0 * math.exp(integral)


def compute_k0(profile: SolitonProfile) -> float:
    return profile.k0


def norm_sq_formula(nl: Nonlinearity, v: float) -> float:
    """||Q_v||^2 = 2 int_0^s0 s^2 / sqrt(v s^2 - 2F(s)) ds."""
    s0 = s0_of_v(nl, v)
    s_mid = 0.5 * s0

    def near_zero(s):
        if s == 0.0:
            return 0.0
        return s / math.sqrt(v - tilde_F(nl, s))

    def near_top(tau):
        s = s0 - tau * tau
        return 2.0 * s * s / math.sqrt(2.0 * float(_excess_mean(nl, v, s0, tau * tau)))

    return 2.0 * (_quad(near_zero, 0.0, s_mid) + _quad(near_top, 0.0, math.sqrt(s0 - s_mid)))


@dataclass(frozen=True, eq=False)
class ProfileDerivative:
    base: SolitonProfile
    Qtilde: np.ndarray
    method: str
    _evaluate: object = field(repr=False)

    def __call__(self, x):
        return self._evaluate(np.asarray(x, dtype=float))

    def full_grid(self):
        return np.concatenate([self.Qtilde[:0:-1], self.Qtilde[:-1]])


def compute_Qtilde(profile: SolitonProfile, method: str = "variation-of-parameters") -> ProfileDerivative:
    nl, v = profile.nonlinearity, profile.v
    if method == "variation-of-parameters":
        traj = _integrate(nl, v, profile.s0, profile.x_max, with_psi=True)

        def evaluate(x):
            Q, dQ, psi, _, integral = traj.state(x)
            # dQ here is the x >= 0 branch; the formula is even in x
            return -dQ * integral + 0.5 * psi * Q**2

    elif method == "finite-difference":
        step = 1e-4 * v
        up = compute_profile(nl, v + step, profile.x_max, profile.n)
        down = compute_profile(nl, v - step, profile.x_max, profile.n)

        def evaluate(x):
            return (up(x) - down(x)) / (2.0 * step)

    else:
        raise ValueError(f"unknown Q~ method {method!r}")
    return ProfileDerivative(profile, evaluate(profile.x), method, evaluate)


def operator_residual(qtilde: ProfileDerivative) -> float:
    """||L_v Q~ + Q|| / ||Q|| on the reflected grid, spectral second derivative."""
    prof = qtilde.base
    _, Q, _ = prof.full_grid()
    qt = qtilde.full_grid()
    length = 2.0 * prof.x_max
    lq = -fourier.derivative(qt, length, 2) - prof.nonlinearity.df(Q) * qt + prof.v * qt
    return float(np.linalg.norm(lq + Q) / np.linalg.norm(Q))


def ode_residual(profile: SolitonProfile) -> float:
    """max |-Q'' - f(Q) + vQ| with Q'' by spectral differentiation of samples."""
    _, Q, _ = profile.full_grid()
    d2 = fourier.derivative(Q, 2.0 * profile.x_max, 2)
    return float(np.max(np.abs(-d2 - profile.nonlinearity.f(Q) + profile.v * Q)))


@dataclass(frozen=True)
class ProfileConstants:
    v: float
    s0: float
    k0: float
    norm_sq: float
    norm_sq_formula: float
    qq_tilde: float
    qq_tilde_formula: float
    mass: float
    energy: float
    H: float

    @property
    def kappa(self) -> float | None:
        if self.qq_tilde >= 0:
            return None
        return compute_kappa(self)

    def as_dict(self) -> dict:
        return {
            "v": self.v, "s0": self.s0, "k0": self.k0, "norm_sq": self.norm_sq,
            "qq_tilde": self.qq_tilde, "kappa": self.kappa, "mass": self.mass,
            "energy": self.energy, "H": self.H,
        }


def qq_tilde_formula(nl: Nonlinearity, v: float) -> float:
    """(1/2) d/dv ||Q_v||^2 by Richardson-extrapolated central differences."""
    h = 1e-3 * v

    def central(step):
        return (norm_sq_formula(nl, v + step) - norm_sq_formula(nl, v - step)) / (2.0 * step)

    return 0.5 * (4.0 * central(0.5 * h) - central(h)) / 3.0


def inner_products(profile: SolitonProfile, qtilde: ProfileDerivative,
                   rtol: float = 1e-6) -> ProfileConstants:
    nl, v, h = profile.nonlinearity, profile.v, profile.h
    Q, dQ = profile.Q, profile.dQ
    norm_sq = line_integral(Q**2, h)
    norm_formula = norm_sq_formula(nl, v)
    qq = line_integral(Q * qtilde.Qtilde, h)
    qq_formula = qq_tilde_formula(nl, v)
    if abs(norm_sq - norm_formula) > rtol * norm_formula:
        raise ArithmeticError(f"||Q||^2 grid {norm_sq!r} vs formula {norm_formula!r}")
    # <Q,Q~> vanishes at criticality, so compare on the scale of ||Q||^2
    if abs(qq - qq_formula) > rtol * norm_formula:
        raise ArithmeticError(f"<Q,Q~> grid {qq!r} vs formula {qq_formula!r}")
    mass = norm_sq
    energy = line_integral(0.5 * dQ**2 - nl.F(Q), h)
    return ProfileConstants(v, profile.s0, profile.k0, norm_sq, norm_formula, qq, qq_formula,
                            mass, energy, energy + 0.5 * mass)


def interaction_constant(k0: float, qq_tilde: float, v: float) -> float:
    """k0 sqrt(2 v^(3/2) / |<Q,Q~>|); the attraction strength for either regime."""
    return k0 * math.sqrt(2.0 * v**1.5 / abs(qq_tilde))


def compute_kappa(constants: ProfileConstants, k0: float | None = None, v: float | None = None) -> float:
    if constants.qq_tilde >= 0:
        raise ValueError("stable-or-critical regime: <Q,Q~> >= 0, kappa undefined")
    k0 = constants.k0 if k0 is None else k0
    v = constants.v if v is None else v
    return interaction_constant(k0, constants.qq_tilde, v)


@dataclass(frozen=True, eq=False)
class Soliton:
    """Profile, velocity derivative and constants at one speed."""

    profile: SolitonProfile
    qtilde: ProfileDerivative
    constants: ProfileConstants

    @property
    def nonlinearity(self):
        return self.profile.nonlinearity

    @property
    def v(self):
        return self.profile.v


def soliton(nl: Nonlinearity, v: float = 1.0, x_max: float | None = None,
            n: int = DEFAULT_N) -> Soliton:
    prof = compute_profile(nl, v, x_max, n)
    qt = compute_Qtilde(prof)
    return Soliton(prof, qt, inner_products(prof, qt))
