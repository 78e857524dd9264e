"""Finite-dimensional dynamics on the manifold of K well-separated solitons.

A state is a list of positions x_k, speeds v_k and signs sigma_k standing for
the field sum_k sigma_k Q_{v_k}(. - x_k).  The flow restricts the symplectic
form omega(u, w) = int u d^{-1} w and the energy to this manifold.

Profiles at arbitrary speeds come from a :class:`ProfileFamily`, a Chebyshev
interpolant in v of log Q_v, Q_v'/Q_v and int_0^x Q_v sampled on a fine
reference grid.  Working with log Q keeps the exponentially small tails
relatively accurate, and Q~ = dQ/dv and d^{-1} Q~ are taken as v-derivatives
of the same interpolant so the family is self-consistent.

Energies split into self parts (one per soliton, from scalar interpolants of
profile quadratures) and interaction parts evaluated with the pairwise
identity F(a+b) - F(a) - F(b) = b int_0^1 [f(a+sb) - f(sb)] ds, which never
subtracts O(1) numbers to get an O(e^{-L}) result.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb
from scipy.integrate import solve_ivp

from .nonlinearity import Nonlinearity
from .profile import (ProfileConstants, compute_profile, interaction_constant,
                      line_integral)

FD_STEP = 1e-5
_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W
_STENCIL = np.arange(-4, 6)


class CriticalVelocityError(ArithmeticError):
    """The symplectic matrix is numerically singular."""


# -- pairwise nonlinear excesses ---------------------------------------------

def _ordered(a, b):
    swap = np.abs(b) > np.abs(a)
    return np.where(swap, b, a), np.where(swap, a, b)


def excess_F(nl: Nonlinearity, a, b):
    """F(a+b) - F(a) - F(b), accurate relative to |min(a, b)|."""
    big, small = _ordered(np.asarray(a, float), np.asarray(b, float))
    s = _GL_X[:, None] * small
    return small * (_GL_W @ (nl.f(big + s) - nl.f(s)))


def excess_f(nl: Nonlinearity, a, b):
    """f(a+b) - f(a) - f(b), accurate relative to |min(a, b)|."""
    big, small = _ordered(np.asarray(a, float), np.asarray(b, float))
    s = _GL_X[:, None] * small
    return small * (_GL_W @ (nl.df(big + s) - nl.df(s)))


def _telescoped(pair, nl, terms):
    total = np.zeros_like(terms[0])
    partial = terms[0].copy()
    for w in terms[1:]:
        total += pair(nl, partial, w)
        partial = partial + w
    return total


# -- profile family ------------------------------------------------------------

@dataclass(frozen=True)
class Samples:
    """Profile data of one soliton at uniformly spaced offsets x - x_k."""

    Q: np.ndarray
    dQ: np.ndarray
    Qt: np.ndarray
    A: np.ndarray


@dataclass(eq=False)
class ProfileFamily:
    nonlinearity: Nonlinearity
    v_lo: float
    v_hi: float
    nodes: np.ndarray
    step: float
    stride: int
    reach: float
    tail: float
    _log: np.ndarray = field(repr=False)
    _dlog: np.ndarray = field(repr=False)
    _prim: np.ndarray = field(repr=False)
    _mass: np.ndarray = field(repr=False)
    _energy: np.ndarray = field(repr=False)
    _deriv: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        """Spacing of the quadrature grid used for interaction integrals."""
        return self.step * self.stride

    @property
    def max_span(self) -> float:
        return self.reach - self.tail - 6 * self.step

    def _t(self, v):
        return (2.0 * v - self.v_lo - self.v_hi) / (self.v_hi - self.v_lo)

    def _basis(self, v):
        v = float(v)
        if not (self.v_lo <= v <= self.v_hi):
            raise ValueError(f"speed {v} outside the family window [{self.v_lo}, {self.v_hi}]")
        t = self._t(v)
        n = self.nodes.size
        value = cheb.chebvander(np.array([t]), n - 1)[0]
        slope = cheb.chebvander(np.array([t]), n - 2)[0] @ self._deriv * (2.0 / (self.v_hi - self.v_lo))
        return value, slope

    def mass(self, v) -> float:
        return float(self._basis(v)[0] @ self._mass)

    def energy(self, v) -> float:
        return float(self._basis(v)[0] @ self._energy)

    def energy_slope(self, v) -> float:
        return float(self._basis(v)[1] @ self._energy)

    def qq_tilde(self, v) -> float:
        """<Q_v, Q~_v> = (1/2) d/dv ||Q_v||^2."""
        return 0.5 * float(self._basis(v)[1] @ self._mass)

    def sample(self, v, start: float, count: int) -> Samples:
        """Q, Q', Q~ and d^{-1}Q~ of Q_v at offsets start + j h, j < count."""
        value, slope = self._basis(v)
        n_ref = self._log.shape[1] // 2
        pos = start / self.step + n_ref
        i0 = math.floor(pos)
        frac = pos - i0
        lo = i0 + _STENCIL[0]
        hi = i0 + (count - 1) * self.stride + _STENCIL[-1]
        if lo < 0 or hi >= self._log.shape[1]:
            raise ValueError("grid too small: offsets exceed the profile family reach "
                             f"{self.reach:g}; increase max_gap")
        cols = slice(lo, hi + 1)
        others = _STENCIL[:, None] != _STENCIL[None, :]
        diff = np.where(others, _STENCIL[None, :] - _STENCIL[:, None], 1.0)
        weights = np.prod(np.where(others, (frac - _STENCIL[None, :]) / -diff, 1.0), axis=1)
        idx = (np.arange(count) * self.stride)[:, None] + (_STENCIL - _STENCIL[0])[None, :]

        def interp(coef, basis):
            ref = basis @ coef[:, cols]
            return ref[idx] @ weights

        logq = interp(self._log, value)
        Q = np.exp(logq)
        return Samples(Q, Q * interp(self._dlog, value), Q * interp(self._log, slope),
                       interp(self._prim, slope))


def _node_data(nl: Nonlinearity, v: float, ref: np.ndarray):
    prof = compute_profile(nl, v)
    traj = prof.trajectory
    ay = np.abs(ref)
    Q, dQ = traj.state(ay)
    logq = np.log(Q)
    dlog = np.sign(ref) * dQ / Q
    # int_0^|y| Q by Gauss-Legendre on every reference cell
    half = ref[ref.size // 2:]
    x8, w8 = np.polynomial.legendre.leggauss(8)
    a, b = half[:-1], half[1:]
    mid, rad = 0.5 * (a + b), 0.5 * (b - a)
    cells = (prof(mid[:, None] + rad[:, None] * x8) @ w8) * rad
    prim_half = np.concatenate([[0.0], np.cumsum(cells)])
    prim = np.concatenate([-prim_half[:0:-1], prim_half])
    mass = line_integral(prof.Q**2, prof.h)
    energy = line_integral(0.5 * prof.dQ**2 - nl.F(prof.Q), prof.h)
    return logq, dlog, prim, mass, energy


@functools.lru_cache(maxsize=8)
def _cached_family(nl, v_lo, v_hi, n_nodes, step, stride, max_gap):
    tail = 40.0 / math.sqrt(v_lo)
    reach = max_gap + tail + 8 * step
    n_ref = int(math.ceil(reach / step))
    ref = step * np.arange(-n_ref, n_ref + 1)
    t_nodes = np.cos(np.pi * (np.arange(n_nodes) + 0.5) / n_nodes)
    nodes = 0.5 * (v_lo + v_hi) + 0.5 * (v_hi - v_lo) * t_nodes
    data = [_node_data(nl, float(v), ref) for v in nodes]
    vander = cheb.chebvander(t_nodes, n_nodes - 1)

    def coef(rows):
        return np.linalg.solve(vander, np.asarray(rows))

    logq, dlog, prim, mass, energy = zip(*data)
    deriv = cheb.chebder(np.eye(n_nodes), axis=0)
    return ProfileFamily(nl, v_lo, v_hi, nodes, step, stride, reach, tail,
                         coef(logq), coef(dlog), coef(prim), coef(mass), coef(energy), deriv)


def profile_family(nl: Nonlinearity, v_lo: float, v_hi: float, n_nodes: int = 36,
                   step: float = 0.025, stride: int = 4, max_gap: float = 60.0) -> ProfileFamily:
    """Build (or fetch from cache) the interpolated profile family on [v_lo, v_hi]."""
    if not 0.0 < v_lo < v_hi < nl.v_star:
        raise ValueError(f"family window [{v_lo}, {v_hi}] must lie inside (0, {nl.v_star})")
    return _cached_family(nl, float(v_lo), float(v_hi), int(n_nodes), float(step),
                          int(stride), float(max_gap))


def family_for(nl: Nonlinearity, speeds, guard: float = 0.5, **kwargs) -> ProfileFamily:
    """Family covering the velocity guard window [(1-g) v, (1+g) v] of every speed."""
    speeds = np.asarray(speeds, dtype=float)
    hi = (1.0 + guard) * speeds.max()
    if math.isfinite(nl.v_star):
        hi = min(hi, 0.95 * nl.v_star)
    return profile_family(nl, (1.0 - guard) * speeds.min(), hi, **kwargs)


# -- states and superposition --------------------------------------------------

@dataclass(frozen=True)
class ReducedState:
    x: np.ndarray
    v: np.ndarray
    signs: tuple

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "signs", tuple(int(s) for s in self.signs))
        if not (x.size == v.size == len(self.signs)) or x.size == 0:
            raise ValueError("x, v and signs need one entry per soliton")
        if any(s not in (-1, 1) for s in self.signs):
            raise ValueError(f"signs must be +1 or -1, got {self.signs}")
        if np.any(np.diff(x) <= 0):
            raise ValueError("positions must be strictly increasing")
        if np.any(v <= 0):
            raise ValueError("speeds must be positive")

    @property
    def K(self) -> int:
        return self.x.size

    @property
    def min_gap(self) -> float:
        return float(np.min(np.diff(self.x))) if self.K > 1 else math.inf

    def replace(self, x=None, v=None) -> "ReducedState":
        return ReducedState(self.x if x is None else x, self.v if v is None else v, self.signs)


def _window(family: ProfileFamily, state: ReducedState) -> np.ndarray:
    span = state.x[-1] - state.x[0]
    if span > family.max_span:
        raise ValueError(f"soliton span {span:.6g} exceeds the family reach "
                         f"(max {family.max_span:.6g})")
    mid = 0.5 * (state.x[0] + state.x[-1])
    m = int(math.ceil((0.5 * span + family.tail) / family.h))
    return mid + family.h * np.arange(-m, m + 1)


def _sample_all(family, state, grid):
    return [family.sample(v, grid[0] - x, grid.size) for x, v in zip(state.x, state.v)]


def superpose(family: ProfileFamily, state: ReducedState, grid=None):
    """(grid, field) with field = sum_k sigma_k Q_{v_k}(grid - x_k)."""
    if grid is None:
        grid = _window(family, state)
    grid = np.asarray(grid, dtype=float)
    spacing = np.diff(grid)
    if grid.size < 2 or not np.allclose(spacing, family.h, rtol=0, atol=1e-9 * family.h):
        raise ValueError(f"grid must be uniform with spacing {family.h:g}")
    if grid[0] > state.x[0] - family.tail or grid[-1] < state.x[-1] + family.tail:
        raise ValueError(f"grid too small: need {family.tail:g} of tail room on both sides")
    samples = _sample_all(family, state, grid)
    field_ = sum(s * smp.Q for s, smp in zip(state.signs, samples))
    return grid, field_


def _interaction(nl, signs, samples, h):
    """Interaction parts (E_int, M_int) of the energy and mass."""
    R = [s * smp.Q for s, smp in zip(signs, samples)]
    dR = [s * smp.dQ for s, smp in zip(signs, samples)]
    cross_grad = 0.0
    cross_mass = 0.0
    for j in range(len(R)):
        for k in range(j + 1, len(R)):
            cross_grad += np.sum(dR[j] * dR[k])
            cross_mass += np.sum(R[j] * R[k])
    if len(R) == 1:
        return 0.0, 0.0
    pot = np.sum(_telescoped(excess_F, nl, R))
    return h * (cross_grad - pot), 2.0 * h * cross_mass


def _self_parts(family, state):
    e = sum(family.energy(v) for v in state.v)
    m = sum(family.mass(v) for v in state.v)
    return e, m


def _decoupled(family, state) -> bool:
    return state.K > 1 and state.min_gap >= family.max_span


def reduced_EM(family: ProfileFamily, state: ReducedState):
    """E and M = int u^2 of the superposed field.

    With every gap beyond the family reach the interaction parts are below
    e^{-reach} and are dropped.
    """
    if _decoupled(family, state):
        return _self_parts(family, state)
    grid = _window(family, state)
    e_int, m_int = _interaction(family.nonlinearity, state.signs,
                                _sample_all(family, state, grid), family.h)
    e_self, m_self = _self_parts(family, state)
    return e_self + e_int, m_self + m_int


def reduced_H(family: ProfileFamily, state: ReducedState) -> float:
    E, M = reduced_EM(family, state)
    return E + 0.5 * M


# -- two equal solitons at fixed speed -------------------------------------------

def _pair_grid(profile, q, tail=None):
    v = profile.v
    tail = 40.0 / math.sqrt(v) if tail is None else tail
    h = profile.h
    m = int(math.ceil((0.5 * q + tail) / h))
    return h * np.arange(-m, m + 1), h


def interaction_energy(profile, q: float, sigma: int):
    """(E_int, M_int) of Q(. + q/2) + sigma Q(. - q/2); H excess is E_int + M_int / 2."""
    x, h = _pair_grid(profile, q)
    R1, R2 = profile(x + 0.5 * q), sigma * profile(x - 0.5 * q)
    dR1, dR2 = profile.derivative(x + 0.5 * q), sigma * profile.derivative(x - 0.5 * q)
    nl = profile.nonlinearity
    e_int = h * np.sum(dR1 * dR2 - excess_F(nl, R1, R2))
    return float(e_int), float(2.0 * h * np.sum(R1 * R2))


def interaction_force(profile, q: float, sigma: int, on: int = 1) -> float:
    """<d_x(sigma_k R_k), f(R1 + sigma R2) - f(R1) - sigma f(R2)> for soliton ``on``."""
    if q < 8:
        raise ValueError("separation q must be at least 8")
    if on not in (1, 2):
        raise ValueError("on must be 1 or 2")
    x, h = _pair_grid(profile, q)
    nl = profile.nonlinearity
    R1, R2 = profile(x + 0.5 * q), sigma * profile(x - 0.5 * q)
    excess = excess_f(nl, R1, R2)
    if on == 1:
        weight = profile.derivative(x + 0.5 * q)
    else:
        weight = profile.derivative(x - 0.5 * q)
    return float(h * np.sum(weight * excess))


# -- symplectic structure and vector field ---------------------------------------

@dataclass(frozen=True)
class SymplecticBlocks:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """omega on the basis (d_x1..d_xK, d_v1..d_vK); lower-left block is -C^T."""
        return np.block([[self.A, self.C], [-self.C.T, self.B]])


def _blocks(family, state, samples, h):
    K = state.K
    sg = np.asarray(state.signs, dtype=float)
    A = np.zeros((K, K))
    B = np.zeros((K, K))
    C = np.zeros((K, K))
    for j in range(K):
        C[j, j] = family.qq_tilde(state.v[j])
        for k in range(K):
            if j == k:
                continue
            sjk = sg[j] * sg[k]
            A[j, k] = sjk * h * np.sum(samples[j].dQ * samples[k].Q)
            C[j, k] = sjk * h * np.sum(samples[j].Q * samples[k].Qt)
            B[j, k] = sjk * h * np.sum(samples[j].Qt * samples[k].A)
    return SymplecticBlocks(0.5 * (A - A.T), 0.5 * (B - B.T), C)


def symplectic_blocks(family: ProfileFamily, state: ReducedState,
                      singular_tol: float = 1e-6) -> SymplecticBlocks:
    grid = _window(family, state)
    blocks = _blocks(family, state, _sample_all(family, state, grid), family.h)
    _check_nonsingular(family, state, blocks.matrix, singular_tol)
    return blocks


def _check_nonsingular(family, state, matrix, tol):
    for v in state.v:
        # A(x, v) degenerates as the gaps grow when <Q_v, Q~_v> vanishes
        if abs(family.qq_tilde(v)) <= tol * family.mass(v):
            raise CriticalVelocityError(
                f"<Q,Q~> = {family.qq_tilde(v):.3e} at v={v:g} is numerically zero; "
                "speed in the critical set")
    n = matrix.shape[0]
    scale = np.abs(matrix).max()
    sign, logdet = np.linalg.slogdet(matrix)
    root = 0.0 if sign == 0 else math.exp(logdet / n)
    if root <= tol * scale:
        raise CriticalVelocityError(
            f"symplectic matrix singular (|det|^(1/{n}) = {root:.3e}); "
            "speed in the critical set <Q,Q~> = 0")


def _richardson(fun, h):
    def central(step):
        return (fun(step) - fun(-step)) / (2.0 * step)

    return (4.0 * central(0.5 * h) - central(h)) / 3.0


def _gradient_fd(family, state, grid, samples, fd_step):
    nl, h, K = family.nonlinearity, family.h, state.K
    gx = np.zeros(K)
    gv = np.zeros(K)

    def e_int_with(k, smp):
        trial = list(samples)
        trial[k] = smp
        return _interaction(nl, state.signs, trial, h)[0]

    for k in range(K):
        xk, vk = state.x[k], state.v[k]
        if K > 1:
            gx[k] = _richardson(
                lambda d: e_int_with(k, family.sample(vk, grid[0] - xk - d, grid.size)), fd_step)
            gv_int = _richardson(
                lambda d: e_int_with(k, family.sample(vk + d, grid[0] - xk, grid.size)), fd_step)
        else:
            gv_int = 0.0
        # the self energy depends on v_k alone; its interpolant is differentiated exactly
        gv[k] = gv_int + family.energy_slope(vk)
    return gx, gv


def _gradient_analytic(family, state, samples, h):
    nl, K = family.nonlinearity, state.K
    sg = np.asarray(state.signs, dtype=float)
    R = [s * smp.Q for s, smp in zip(sg, samples)]
    excess = _telescoped(excess_f, nl, R) if K > 1 else 0.0
    gx = np.zeros(K)
    gv = np.zeros(K)
    for k in range(K):
        linear = sum(sg[j] * state.v[j] * samples[j].Q for j in range(K) if j != k)
        dRk = sg[k] * samples[k].dQ
        tRk = sg[k] * samples[k].Qt
        gx[k] = h * np.sum((excess + linear) * dRk)
        gv[k] = -h * np.sum((excess + linear) * tRk) - state.v[k] * family.qq_tilde(state.v[k])
    return gx, gv


def energy_gradient(family: ProfileFamily, state: ReducedState, method: str = "fd",
                    fd_step: float = FD_STEP):
    """(dE/dx, dE/dv) by Richardson-extrapolated differences or by <DE(U), tangent>."""
    grid = _window(family, state)
    samples = _sample_all(family, state, grid)
    if method == "fd":
        return _gradient_fd(family, state, grid, samples, fd_step)
    if method == "analytic":
        return _gradient_analytic(family, state, samples, family.h)
    raise ValueError(f"unknown gradient method {method!r}")


def vector_field(family: ProfileFamily, state: ReducedState, gradient: str = "fd",
                 fd_step: float = FD_STEP, singular_tol: float = 1e-6):
    """(X, V) solving omega (x', v') = (dE/dx, dE/dv)."""
    grid = _window(family, state)
    samples = _sample_all(family, state, grid)
    blocks = _blocks(family, state, samples, family.h)
    matrix = blocks.matrix
    _check_nonsingular(family, state, matrix, singular_tol)
    if gradient == "fd":
        gx, gv = _gradient_fd(family, state, grid, samples, fd_step)
    elif gradient == "analytic":
        gx, gv = _gradient_analytic(family, state, samples, family.h)
    else:
        raise ValueError(f"unknown gradient method {gradient!r}")
    sol = np.linalg.solve(matrix, np.concatenate([gx, gv]))
    return sol[:state.K], sol[state.K:]


# -- integration ------------------------------------------------------------------

@dataclass
class ReducedTrajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    E: np.ndarray
    M: np.ndarray
    steps: np.ndarray
    signs: tuple
    status: str
    reason: str = ""

    @property
    def gap(self) -> np.ndarray:
        return self.x[:, -1] - self.x[:, 0]

    @property
    def E_drift(self) -> float:
        return float(np.max(np.abs(self.E - self.E[0])) / abs(self.E[0]))

    @property
    def M_drift(self) -> float:
        return float(np.max(np.abs(self.M - self.M[0])) / abs(self.M[0]))

    def rows(self):
        return np.column_stack([self.t, self.x, self.v, self.E, self.M])

    def columns(self):
        K = self.x.shape[1]
        return (["t"] + [f"x{k + 1}" for k in range(K)] + [f"v{k + 1}" for k in range(K)]
                + ["E", "M"])


def sample_times(t_span, samples: int, spacing: str = "linear") -> np.ndarray:
    t0, t1 = map(float, t_span)
    if spacing == "linear":
        return np.linspace(t0, t1, samples)
    if spacing == "log":
        first = max(t0, 1e-3 * (t1 - t0)) if t0 <= 0 else t0
        pts = np.geomspace(first, t1, samples - 1)
        return np.concatenate([[t0], pts]) if t0 < first else np.geomspace(t0, t1, samples)
    raise ValueError(f"unknown spacing {spacing!r}")


def integrate_reduced(family: ProfileFamily, state0: ReducedState, t_span, rtol: float = 1e-11,
                      atol: float = 1e-13, gradient: str = "fd", samples: int = 201,
                      spacing: str = "linear", gap_floor: float | None = None,
                      guard: float = 0.5, diagnostics: bool = True) -> ReducedTrajectory:
    """Adaptive DOP853 integration in a frame moving with the mean initial speed.

    The frame removes the O(t) growth of the positions, so the tolerance
    controls the gaps rather than absolute positions.  Integration stops early
    when a gap drops below the floor or a speed leaves the guard window.
    Once every gap exceeds the family reach the solitons move freely.
    """
    K = state0.K
    v_ref = float(np.mean(state0.v))
    if gap_floor is None:
        gap_floor = 8.0 / math.sqrt(float(state0.v.min()))
    lo, hi = (1.0 - guard) * state0.v, (1.0 + guard) * state0.v
    lo = np.maximum(lo, family.v_lo)
    hi = np.minimum(hi, family.v_hi)
    if K > 1 and state0.min_gap < gap_floor:
        raise ValueError(f"initial gap {state0.min_gap:.6g} below floor {gap_floor:.6g}")

    def rhs(t, y):
        if K > 1 and np.min(np.diff(y[:K])) >= family.max_span:
            # interactions below e^{-max_span}: the constrained flow is free motion
            return np.concatenate([y[K:] - v_ref, np.zeros(K)])
        st = ReducedState(y[:K], y[K:], state0.signs)
        X, V = vector_field(family, st, gradient=gradient)
        return np.concatenate([X - v_ref, V])

    events = []
    if K > 1:
        def floor_event(t, y):
            return np.min(np.diff(y[:K])) - gap_floor
        floor_event.terminal = True
        events.append(floor_event)

    def guard_event(t, y):
        return min(np.min(y[K:] - lo), np.min(hi - y[K:]))
    guard_event.terminal = True
    events.append(guard_event)

    y0 = np.concatenate([state0.x, state0.v])
    sol = solve_ivp(rhs, tuple(map(float, t_span)), y0, method="DOP853", rtol=rtol, atol=atol,
                    dense_output=True, events=events)
    if sol.status < 0:
        raise ArithmeticError(f"reduced integration failed: {sol.message}")
    status, reason = "completed", ""
    if sol.status == 1:
        names = (["gap-floor"] if K > 1 else []) + ["velocity-guard"]
        hit = [name for name, te in zip(names, sol.t_events) if te.size]
        status, reason = "terminated", ",".join(hit)
    t_end = sol.t[-1]
    times = sample_times((t_span[0], t_end), samples, spacing)
    ys = sol.sol(times)
    xs = ys[:K].T + v_ref * times[:, None]
    vs = ys[K:].T
    E = np.full(times.size, np.nan)
    M = np.full(times.size, np.nan)
    for i in range(times.size if diagnostics else 0):
        E[i], M[i] = reduced_EM(family, ReducedState(ys[:K, i], vs[i], state0.signs))
    return ReducedTrajectory(times, xs, vs, E, M, np.diff(sol.t), state0.signs, status, reason)


# -- effective two-soliton system and the log law ----------------------------------

@dataclass
class EffectiveTrajectory:
    t: np.ndarray
    q: np.ndarray
    p: np.ndarray
    r: np.ndarray
    kappa: float
    t0: float

    @property
    def gap(self) -> np.ndarray:
        return self.q

    def closed_form(self, t=None) -> np.ndarray:
        t = self.t if t is None else np.asarray(t)
        return 2.0 * np.log(self.kappa * (t + self.t0))


def _k0_qq(constants):
    if isinstance(constants, ProfileConstants):
        return constants.k0, constants.qq_tilde
    k0, qq = constants
    return float(k0), float(qq)


def effective_two_soliton(q0: float, t_span, constants, samples: int = 201,
                          spacing: str = "linear", rtol: float = 1e-12,
                          atol: float = 1e-14) -> EffectiveTrajectory:
    """q' = p / <Q,Q~>, p' = 4 k0^2 e^{-q} from the r = 0 point p(0) = 2 kappa <Q,Q~> e^{-q0/2}."""
    k0, qq = _k0_qq(constants)
    if qq >= 0:
        raise ValueError("effective system requires <Q,Q~> < 0")
    kappa = interaction_constant(k0, qq, 1.0)
    p0 = 2.0 * kappa * qq * math.exp(-0.5 * q0)

    def rhs(t, y):
        return [y[1] / qq, 4.0 * k0**2 * math.exp(-y[0])]

    times = sample_times(t_span, samples, spacing)
    sol = solve_ivp(rhs, tuple(map(float, t_span)), [q0, p0], method="DOP853", rtol=rtol,
                    atol=atol, t_eval=times)
    if not sol.success:
        raise ArithmeticError(f"effective integration failed: {sol.message}")
    q, p = sol.y
    r = p - 2.0 * kappa * qq * np.exp(-0.5 * q)
    return EffectiveTrajectory(sol.t, q, p, r, kappa, math.exp(0.5 * q0) / kappa)


@dataclass(frozen=True)
class LogLawFit:
    kappa_fit: float
    residual: float
    intercept: float
    window: tuple


def fit_log_law(trajectory, v_inf: float = 1.0) -> LogLawFit:
    """Fit gap(t) = (2/sqrt(v)) log t + c on the final decade; kappa = exp(c sqrt(v) / 2).

    ``trajectory`` is anything with ``t`` and ``gap`` attributes, or a (t, gap) pair.
    """
    if hasattr(trajectory, "gap"):
        t, gap = np.asarray(trajectory.t), np.asarray(trajectory.gap)
    else:
        t, gap = (np.asarray(a, dtype=float) for a in trajectory)
    keep = t > 0
    t, gap = t[keep], gap[keep]
    if t.size < 3 or t[-1] < 10.0 * t[0]:
        raise ValueError("log-law fit needs samples spanning at least one decade of t")
    if np.any(np.diff(gap) <= 0):
        raise ValueError("gap is not monotonically increasing; fit refused")
    last = t >= t[-1] / 10.0
    slope = 2.0 / math.sqrt(v_inf)
    offsets = gap[last] - slope * np.log(t[last])
    c = float(np.mean(offsets))
    residual = float(np.sqrt(np.mean((offsets - c) ** 2)))
    return LogLawFit(math.exp(0.5 * c * math.sqrt(v_inf)), residual, c,
                     (float(t[last][0]), float(t[-1])))


# -- initial data and experiments ---------------------------------------------------

def stable_manifold_state(constants, q0: float, signs=(1, 1), v: float = 1.0) -> ReducedState:
    """Equal-mean-speed pair on the r = 0 curve: v2 - v1 = (2 kappa / sqrt v) e^{-sqrt(v) q0 / 2}.

    The mean speed correction needed to match H = 2 H(Q_v) vanishes at leading
    order because d/dv H(Q_v) = 0 at the reference speed.
    """
    k0, qq = _k0_qq(constants)
    kappa = interaction_constant(k0, qq, v)
    dv = 2.0 * kappa / math.sqrt(v) * math.exp(-0.5 * math.sqrt(v) * q0)
    return ReducedState([-0.5 * q0, 0.5 * q0], [v - 0.5 * dv, v + 0.5 * dv], signs)


def _effective_energy(traj: ReducedTrajectory, kappa: float, v: float) -> float:
    """(1/2) q'^2 - (2 kappa^2 / v) e^{-sqrt(v) q} at the last sample; zero on the separatrix."""
    dv = traj.v[-1, 1] - traj.v[-1, 0]
    return 0.5 * dv**2 - 2.0 * kappa**2 / v * math.exp(-math.sqrt(v) * traj.gap[-1])


def refine_initial_gap(family: ProfileFamily, state: ReducedState, constants, horizon: float,
                       gradient: str = "analytic") -> ReducedState:
    """Move v2 - v1 onto the separatrix between falling back and escaping.

    The r = 0 point is on the separatrix of the effective system only; the
    full reduced flow misses it by a small effective energy
    e = (1/2) q'^2 - (2 kappa^2 / v) e^{-sqrt(v) q}, enough to make the pair
    fall back or escape within a few decades.  Since de/d(v2 - v1) = v2 - v1
    to leading order, Newton steps driving e to zero at the end of runs of
    decade-growing length (from 10 t0 up to the horizon, which is run twice)
    place the pair on the separatrix up to ``horizon``.  The mean speed is kept.
    """
    k0, qq = _k0_qq(constants)
    mean = float(np.mean(state.v))
    kappa = interaction_constant(k0, qq, mean)
    dv = float(state.v[1] - state.v[0])

    def trial(gap_speed):
        return state.replace(v=[mean - 0.5 * gap_speed, mean + 0.5 * gap_speed])

    gap0 = float(state.x[1] - state.x[0])
    t_end = min(horizon, 10.0 * math.exp(0.5 * math.sqrt(mean) * gap0) / kappa)
    schedule = []
    while t_end < horizon:
        schedule.append(t_end)
        t_end *= 10.0
    schedule += [horizon, horizon]
    for t_end in schedule:
        traj = integrate_reduced(family, trial(dv), (0.0, t_end), gradient=gradient,
                                 samples=64, diagnostics=False)
        if traj.status != "completed" or np.any(np.diff(traj.gap) < 0):
            raise ArithmeticError(f"pair fell back before t={t_end:g}; no separatrix "
                                  "near the initial velocity gap")
        dv -= _effective_energy(traj, kappa, mean) / dv
    return trial(dv)


@dataclass
class DichotomyReport:
    p: float
    qq_sign: int
    sign_product: int
    verdict: str
    gap_initial: float
    gap_final: float
    dv_initial: float
    dv_final: float
    rate_initial: float
    rate_final: float
    t_end: float
    note: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _classify(traj: ReducedTrajectory, shrink: float = 0.25):
    gap = traj.gap
    dv = traj.v[:, 1] - traj.v[:, 0]
    rate = np.gradient(gap, traj.t)
    grows = traj.status == "completed" and bool(np.all(np.diff(gap) > 0))
    if grows and abs(dv[-1]) <= shrink * abs(dv[0]) and rate[-1] <= shrink * rate[0]:
        return "separating-with-common-speed", dv, rate
    spread = np.abs(dv)
    if bool(np.all(np.diff(spread) >= -1e-12 * spread[0])) and spread[-1] > 1.1 * spread[0]:
        return "diverging-velocities", dv, rate
    return "inconclusive", dv, rate


def sign_dichotomy_experiment(p: float, sign_product: int, t_span=None, q0: float = 14.0,
                              gradient: str = "analytic") -> DichotomyReport:
    """Integrate the pair from the r = 0 point and classify the outcome.

    The r = 0 point uses |<Q,Q~>| in the attraction constant so the same
    initializer serves both stability regimes.
    """
    from .nonlinearity import power
    from .profile import soliton

    if abs(p - 5.0) < 1e-12:
        raise ValueError("p = 5 is the critical case; the reduced system is singular")
    if sign_product not in (-1, 1):
        raise ValueError("sign_product must be +1 or -1")
    nl = power(p)
    consts = soliton(nl, 1.0).constants
    kappa = interaction_constant(consts.k0, consts.qq_tilde, 1.0)
    t0 = math.exp(0.5 * q0) / kappa
    if t_span is None:
        t_span = (0.0, 20.0 * t0)
    state = stable_manifold_state(consts, q0, (1, sign_product))
    family = family_for(nl, state.v)
    qq_sign = int(np.sign(consts.qq_tilde))
    try:
        traj = integrate_reduced(family, state, t_span, gradient=gradient, samples=401)
    except ArithmeticError as exc:
        return DichotomyReport(p, qq_sign, sign_product, "inconclusive", q0, math.nan,
                               float(state.v[1] - state.v[0]), math.nan, math.nan, math.nan,
                               math.nan, note=str(exc))
    verdict, dv, rate = _classify(traj)
    return DichotomyReport(p, qq_sign, sign_product, verdict, float(traj.gap[0]),
                           float(traj.gap[-1]), float(dv[0]), float(dv[-1]), float(rate[0]),
                           float(rate[-1]), float(traj.t[-1]), note=traj.reason)


def expected_pairing(qq_tilde: float) -> int:
    """Sign product admitting separation with a common limit speed."""
    return -1 if qq_tilde > 0 else 1


__all__ = [
    "CriticalVelocityError", "ProfileFamily", "ReducedState", "ReducedTrajectory",
    "SymplecticBlocks", "EffectiveTrajectory", "LogLawFit", "DichotomyReport",
    "profile_family", "family_for", "superpose", "reduced_EM", "reduced_H",
    "interaction_energy", "interaction_force", "symplectic_blocks", "energy_gradient",
    "vector_field", "integrate_reduced", "effective_two_soliton", "fit_log_law",
    "stable_manifold_state", "refine_initial_gap", "sign_dichotomy_experiment",
    "expected_pairing", "excess_F", "excess_f",
]
