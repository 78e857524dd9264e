"""Linearized operator L = -d^2 - f'(Q) + v, its spectrum, the unstable pair of
d/dx L, the adjoint basis, the localized direction Z and coercivity minima."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_simpson

from . import fourier
from .profile import ProfileDerivative, Soliton, SolitonProfile

_FD4_D2 = np.array([-1.0 / 12, 4.0 / 3, -5.0 / 2, 4.0 / 3, -1.0 / 12])
_FD4_D1 = np.array([1.0 / 12, -2.0 / 3, 0.0, 2.0 / 3, -1.0 / 12])

SCHEMES = ("fd4", "fourier")


@dataclass(eq=False)
class DiscreteOperator:
    """Discretized L on a uniform grid.

    ``fd4``: interior nodes of [-x_max, x_max] with homogeneous Dirichlet ends.
    ``fourier``: 2n + 1 periodic nodes x_j = j h, |j| <= n; the odd count
    leaves no Nyquist mode, so d/dx and d^2/dx^2 are exact square pairs.
    """

    scheme: str
    n: int
    h: float
    x: np.ndarray
    x_max: float
    v: float
    Q: np.ndarray
    dQ: np.ndarray
    potential: np.ndarray
    D1: object
    D2: object
    L: object
    period: float

    @property
    def size(self) -> int:
        return self.x.size

    @property
    def sparse(self) -> bool:
        return self.scheme == "fd4"

    def inner(self, u, w) -> float:
        return float(self.h * np.dot(u, w))

    def norm(self, u) -> float:
        return math.sqrt(self.inner(u, u))

    def apply(self, u):
        return self.L @ u

    def dx(self, u):
        return self.D1 @ u

    def dxL(self):
        if self.sparse:
            return (self.D1 @ self.L).tocsc()
        # D1 (-D2 - V + v) with D1 D2 replaced by the exact third-derivative symbol
        d3 = fourier.derivative_matrix(self.size, self.period, 3)
        return -d3 - self.D1 * self.potential[None, :] + self.v * self.D1

    def Ldx(self):
        return self.L @ self.D1

    def dense_L(self):
        return self.L.toarray() if self.sparse else self.L

    def dense_D2(self):
        return self.D2.toarray() if self.sparse else self.D2

    def reflect(self, u):
        """Samples of u(-x) on the same grid."""
        return u[::-1].copy()

    def kernel_residual(self) -> float:
        return self.norm(self.apply(self.dQ)) / self.norm(self.dQ)

    def symmetry_defect(self, probes: int = 8, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(probes):
            a, b = rng.standard_normal((2, self.size))
            worst = max(worst, abs(np.dot(a, self.L @ b) - np.dot(self.L @ a, b)))
        return worst


def _banded(stencil, m, scale):
    offsets = np.arange(-2, 3)
    return sp.diags([np.full(m - abs(o), c * scale) for o, c in zip(offsets, stencil)],
                    offsets, shape=(m, m), format="csr")


def assemble_L(profile: SolitonProfile, scheme: str = "fd4", n: int | None = None,
               x_max: float | None = None) -> DiscreteOperator:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    n = profile.n if n is None else int(n)
    x_max = profile.x_max if x_max is None else float(x_max)
    if x_max > profile.x_max * (1 + 1e-12) or n < 16:
        raise ValueError("operator grid must lie inside the profile's truncation radius")
    h = x_max / n
    nl, v = profile.nonlinearity, profile.v
    if scheme == "fd4":
        x = h * np.arange(-(n - 1), n)
        m = x.size
        period = 2.0 * x_max
        D1 = _banded(_FD4_D1, m, 1.0 / h)
        D2 = _banded(_FD4_D2, m, 1.0 / h**2)
    else:
        x = h * np.arange(-n, n + 1)
        m = x.size
        period = m * h
        D1 = fourier.derivative_matrix(m, period, 1)
        D2 = fourier.derivative_matrix(m, period, 2)
    Q = profile(x)
    dQ = profile.derivative(x)
    potential = nl.df(Q)
    if scheme == "fd4":
        L = (-D2 + sp.diags(v - potential)).tocsr()
    else:
        L = -D2 + np.diag(v - potential)
    return DiscreteOperator(scheme, n, h, x, x_max, v, Q, dQ, potential, D1, D2, L, period)


def _lowest_symmetric(op: DiscreteOperator, k: int):
    if op.sparse:
        shift = float(op.v - op.potential.max() - 1.0)
        vals, vecs = spla.eigsh(op.L.tocsc(), k=k, sigma=shift, which="LM")
    else:
        vals, vecs = sla.eigh(op.L, subset_by_index=[0, k - 1])
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


@dataclass
class NegativeEigen:
    eigenvalue: float
    eigenvector: np.ndarray
    next_eigenvalue: float
    next_eigenvector: np.ndarray
    kernel_cosine: float
    negative_count: int


def negative_eigenvalue(op: DiscreteOperator, tol: float = 1e-6, k: int = 4) -> NegativeEigen:
    vals, vecs = _lowest_symmetric(op, k)
    count = int(np.sum(vals < -tol))
    if count != 1:
        raise ArithmeticError(f"expected one negative eigenvalue, found {count}: {vals}")
    ground = vecs[:, 0] / op.norm(vecs[:, 0])
    nxt = vecs[:, 1] / op.norm(vecs[:, 1])
    cosine = abs(op.inner(nxt, op.dQ)) / op.norm(op.dQ)
    return NegativeEigen(float(vals[0]), ground, float(vals[1]), nxt, float(cosine), count)


@dataclass
class UnstablePair:
    nu: float
    Y_minus: np.ndarray
    Y_plus: np.ndarray
    residual: float
    nu_refined: float | None = None

    @property
    def refinement_change(self) -> float | None:
        if self.nu_refined is None:
            return None
        return abs(self.nu_refined - self.nu) / self.nu


def _real_decaying_eigenvalues(op: DiscreteOperator, lo: float, hi: float, tail_tol: float = 1e-6):
    A = op.dxL()
    A = A.toarray() if sp.issparse(A) else A
    vals, vecs = sla.eig(A)
    outer = np.abs(op.x) >= 0.8 * op.x_max
    found = []
    for lam, vec in zip(vals, vecs.T):
        if abs(lam.imag) > 1e-8 * max(1.0, abs(lam)) or not (lo < abs(lam.real) < hi):
            continue
        vec = vec.real if np.linalg.norm(vec.real) >= np.linalg.norm(vec.imag) else vec.imag
        tail = np.sum(vec[outer] ** 2) / np.sum(vec**2)
        # eigenvectors that are mostly the translation mode come from the
        # perturbed Jordan block at zero, not from a genuine unstable pair
        transl = abs(op.inner(vec, op.dQ)) / (op.norm(vec) * op.norm(op.dQ))
        if tail <= tail_tol and (abs(lam) > 1e-3 * op.v or transl < 0.5):
            found.append(float(lam.real))
    return sorted(found)


def _estimate_rates(profile: SolitonProfile, lo: float, hi: float):
    coarse = assemble_L(profile, "fourier", n=256, x_max=min(profile.x_max, 30.0 / math.sqrt(profile.v)))
    return _real_decaying_eigenvalues(coarse, lo, hi)


def _solve_pair(op: DiscreteOperator, nu_guess: float):
    A = op.dxL()
    vals, vecs = spla.eigs(A, k=1, sigma=-nu_guess, which="LM", tol=1e-14)
    nu = -float(vals[0].real)
    y = vecs[:, 0]
    y = y.real if np.linalg.norm(y.real) >= np.linalg.norm(y.imag) else y.imag
    y = y / op.norm(y)
    # sign convention: positive where |Y| peaks
    y *= np.sign(y[np.argmax(np.abs(y))])
    # one Rayleigh-quotient polish of the eigenvalue
    Ay = A @ y
    nu = -op.inner(y, Ay) / op.inner(y, y)
    return nu, y


def unstable_pair(op: DiscreteOperator, profile: SolitonProfile, qq_tilde: float,
                  refine: bool = True, refine_tol: float = 1e-5):
    """Real pair +-nu of d/dx L with decaying eigenvectors, or None."""
    lo, hi = 1e-6, 10.0 * op.v
    if qq_tilde >= 0:
        rates = _estimate_rates(profile, lo, hi)
        if rates:
            raise ArithmeticError(f"stable regime but real eigenvalues {rates} found")
        return None
    rates = [r for r in _estimate_rates(profile, lo, hi) if r > 0]
    if not rates:
        raise ArithmeticError("no real unstable eigenvalue found in the supercritical regime")
    nu, y_minus = _solve_pair(op, max(rates))
    y_plus = op.reflect(y_minus)
    A = op.dxL()
    residual = max(op.norm(A @ y_minus + nu * y_minus), op.norm(A @ y_plus - nu * y_plus))
    pair = UnstablePair(nu, y_minus, y_plus, residual)
    if refine:
        fine = assemble_L(profile, op.scheme, n=2 * op.n, x_max=op.x_max)
        pair.nu_refined, _ = _solve_pair(fine, nu)
        if pair.refinement_change > refine_tol:
            raise ArithmeticError(f"nu changes by {pair.refinement_change:.2e} under refinement")
    return pair


@dataclass
class AdjointBasis:
    alpha_minus: np.ndarray
    alpha_plus: np.ndarray


def _antiderivative(op: DiscreteOperator, w):
    if op.sparse:
        return cumulative_simpson(w, dx=op.h, initial=0.0)
    # int Y = 0 holds to round-off; dropping that residue keeps the
    # antiderivative periodic, so spectral derivatives see no sawtooth
    return fourier.cumulative_integral(w - w.mean(), op.period, op.x)


def adjoint_basis(op: DiscreteOperator, pair: UnstablePair) -> AdjointBasis:
    raw_minus = _antiderivative(op, pair.Y_plus)
    raw_plus = _antiderivative(op, pair.Y_minus)
    norm_minus = op.inner(raw_minus, pair.Y_minus)
    norm_plus = op.inner(raw_plus, pair.Y_plus)
    if min(abs(norm_minus), abs(norm_plus)) < 1e-10:
        raise ArithmeticError("adjoint normalization degenerate")
    return AdjointBasis(raw_minus / norm_minus, raw_plus / norm_plus)


def _chi(y):
    """Cut-off: 1 on |y| <= 1, 0 on |y| >= 2, quintic smoothstep between."""
    a = np.abs(np.asarray(y, dtype=float))
    tau = np.clip(2.0 - a, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def _chi_derivatives(y):
    """chi', chi'', chi''' in y."""
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    s = np.sign(y)
    tau = np.clip(2.0 - a, 0.0, 1.0)
    inside = (a > 1.0) & (a < 2.0)
    d1 = 30.0 * tau**2 * (1.0 - tau) ** 2
    d2 = 60.0 * tau * (1.0 - tau) * (1.0 - 2.0 * tau)
    d3 = 60.0 * (1.0 - 6.0 * tau + 6.0 * tau**2)
    # dtau/dy = -sign(y)
    return (np.where(inside, -s * d1, 0.0), np.where(inside, d2, 0.0),
            np.where(inside, -s * d3, 0.0))


@dataclass(eq=False)
class LocalizedDirection:
    """Z(x) = chi(x / rho) * int_0^x Q~."""

    qtilde: ProfileDerivative
    rho: float
    _grid: np.ndarray = field(init=False, repr=False)
    _antider: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        prof = self.qtilde.base
        self._grid = prof.x
        # cumulative Gauss-Legendre on each grid cell of the half line
        nodes, weights = np.polynomial.legendre.leggauss(8)
        a, b = prof.x[:-1], prof.x[1:]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        pts = mid[:, None] + half[:, None] * nodes
        cells = (self.qtilde(pts) * weights).sum(axis=1) * half
        self._antider = np.concatenate([[0.0], np.cumsum(cells)])

    @property
    def limit(self) -> float:
        return float(self._antider[-1])

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        ax = np.abs(x)
        grid = self._grid
        inside = ax < grid[-1]
        idx = np.clip(np.searchsorted(grid, ax, side="right") - 1, 0, grid.size - 2)
        left = grid[idx]
        nodes, weights = np.polynomial.legendre.leggauss(8)
        half = 0.5 * (ax - left)
        pts = (left + half)[..., None] + half[..., None] * nodes
        partial = (self.qtilde(pts) * weights).sum(axis=-1) * half
        out = np.where(inside, self._antider[idx] + partial, self._antider[-1])
        return np.sign(x) * out

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return _chi(x / self.rho) * self.antiderivative(x)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        d1, _, _ = _chi_derivatives(x / self.rho)
        return d1 / self.rho * self.antiderivative(x) + _chi(x / self.rho) * self.qtilde(x)

    def support(self) -> float:
        return 2.0 * self.rho


def make_Z(qtilde: ProfileDerivative, rho: float) -> LocalizedDirection:
    prof = qtilde.base
    if rho < 5.0 / math.sqrt(prof.v) - 1e-12:
        raise ValueError(f"rho={rho} below 5/sqrt(v)")
    Z = LocalizedDirection(qtilde, float(rho))
    pairing = Z_pairing(Z)
    qq = _grid_qq(qtilde)
    # the pairing must be nonzero with the sign of -<Q,Q~>
    if pairing * (-qq) <= 0:
        raise ValueError(f"<Z, Q'> = {pairing:.3e} has the wrong sign; increase rho above {2 * rho}")
    return Z


def _grid_qq(qtilde: ProfileDerivative) -> float:
    prof = qtilde.base
    g = prof.Q * qtilde.Qtilde
    return prof.h * (g[0] + 2.0 * g[1:-1].sum() + g[-1])


def Z_pairing(Z: LocalizedDirection) -> float:
    """<Z, Q'> by quadrature on the profile grid (Q' carries the decay)."""
    prof = Z.qtilde.base
    x = prof.x
    g = Z(x) * prof.dQ
    # integrand is even
    return float(prof.h * (g[0] + 2.0 * g[1:-1].sum() + g[-1]))


def Z_operator_defect(Z: LocalizedDirection, h: float = 0.01) -> float:
    """||L(Z') + Q||_{L^2} from the closed-form expansion of L(chi A)'."""
    qt = Z.qtilde
    prof = qt.base
    nl, v, rho = prof.nonlinearity, prof.v, Z.rho
    x = np.arange(0.0, 2.0 * rho + h, h)
    y = x / rho
    chi = _chi(y)
    c1, c2, c3 = _chi_derivatives(y)
    c1, c2, c3 = c1 / rho, c2 / rho**2, c3 / rho**3
    A = Z.antiderivative(x)
    Q = prof(x)
    Qt = qt(x)
    dQt = qtilde_derivative(qt, x)
    r = (1.0 - chi) * Q - 3.0 * c1 * dQt - 3.0 * c2 * Qt - c3 * A + (v - nl.df(Q)) * c1 * A
    g = r**2
    return math.sqrt(2.0 * h * (0.5 * g[0] + g[1:-1].sum() + 0.5 * g[-1]))


def qtilde_derivative(qt: ProfileDerivative, x):
    """d/dx Q~ for x >= 0 by a sixth-order centered difference of the evaluator."""
    x = np.asarray(x, dtype=float)
    d = 1e-3
    c = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
    return sum(ck * qt(x + (k - 3) * d) for k, ck in enumerate(c)) / d


def projected_minimum(L, D2, constraints, h) -> float:
    """min <w, L w> / ||w||_{H^1}^2 over w orthogonal to the constraint columns."""
    L = np.asarray(L)
    G = np.eye(L.shape[0]) - np.asarray(D2)
    if constraints is None or len(constraints) == 0:
        vals = sla.eigh(L, G, subset_by_index=[0, 0], eigvals_only=True)
        return float(vals[0])
    C = np.column_stack(constraints)
    basis, _ = np.linalg.qr(C, mode="complete")
    P = basis[:, C.shape[1]:]
    A = P.T @ L @ P
    B = P.T @ G @ P
    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    vals = sla.eigh(A, B, subset_by_index=[0, 0], eigvals_only=True)
    return float(vals[0])


def coercivity_min(op: DiscreteOperator, alpha_minus, alpha_plus, Z) -> float:
    constraints = [c for c in (alpha_minus, alpha_plus, Z) if c is not None]
    return projected_minimum(op.dense_L(), op.dense_D2(), constraints, op.h)


@dataclass(eq=False)
class SpectralData:
    op: DiscreteOperator
    lambda_neg: float
    pair: UnstablePair | None
    adjoint: AdjointBasis | None
    Z: LocalizedDirection
    Z_samples: np.ndarray
    lambda0_est: float | None
    checks: dict

    @property
    def nu(self):
        return None if self.pair is None else self.pair.nu


def identity_checks(op: DiscreteOperator, pair: UnstablePair, adj: AdjointBasis) -> dict:
    ym, yp = pair.Y_minus, pair.Y_plus
    am, ap = adj.alpha_minus, adj.alpha_plus
    dQ = op.dQ
    dQn = dQ / op.norm(dQ)
    A = op.dxL()
    return {
        "Ynorm": max(abs(op.norm(ym) - 1.0), abs(op.norm(yp) - 1.0)),
        "intY": max(abs(op.h * ym.sum()), abs(op.h * yp.sum())),
        "Yrefl": op.norm(A @ yp - pair.nu * yp),
        "YLY1": max(abs(op.inner(ym, op.apply(ym))), abs(op.inner(yp, op.apply(yp)))),
        "YLY2": op.inner(ym, op.apply(yp)),
        "alY1": max(abs(op.inner(am, ym) - 1.0), abs(op.inner(ap, yp) - 1.0)),
        "alY2": max(abs(op.inner(am, yp)), abs(op.inner(ap, ym))),
        "alQp": max(abs(op.inner(am, dQn)), abs(op.inner(ap, dQn))),
        "Ldxal": max(op.norm(op.apply(op.dx(am)) - pair.nu * am),
                     op.norm(op.apply(op.dx(ap)) + pair.nu * ap)),
    }


def spectral_data(sol: Soliton, n: int = 512, rho: float = 20.0, scheme: str = "fourier",
                  refine: bool = True, coercivity: bool = True) -> SpectralData:
    prof = sol.profile
    op = assemble_L(prof, scheme, n=n)
    neg = negative_eigenvalue(op)
    pair = unstable_pair(op, prof, sol.constants.qq_tilde, refine=refine)
    Z = make_Z(sol.qtilde, rho)
    z = Z(op.x)
    checks = {"ZQp": Z_pairing(Z), "LZp_plus_Q": Z_operator_defect(Z)}
    adj = None
    lam0 = None
    if pair is not None:
        adj = adjoint_basis(op, pair)
        checks.update(identity_checks(op, pair, adj))
        if coercivity:
            lam0 = coercivity_min(op, adj.alpha_minus, adj.alpha_plus, z)
    return SpectralData(op, neg.eigenvalue, pair, adj, Z, z, lam0, checks)


def two_soliton_hessian_min(sol: Soliton, data: SpectralData, q: float, sigma: int,
                            margin: float = 30.0) -> float:
    """Projected minimum of -d^2 - f'(U) + 1 near U = Q(.+q/2) + sigma Q(.-q/2).

    The window extends ``margin`` beyond the outer cut-off support, so with a
    large radius the cut-off directions of the two solitons overlap; the
    result depends on q until q clearly exceeds twice the support.
    """
    if q < 10:
        raise ValueError("separation q must be at least 10")
    op = data.op
    if op.scheme != "fourier" or data.adjoint is None:
        raise ValueError("needs Fourier spectral data in the supercritical regime")
    h = op.h
    reach = max(margin, data.Z.support() + 10.0)
    half = int(math.ceil((0.5 * q + reach) / h))
    m = 2 * half + 1
    length = m * h
    x = h * np.arange(-half, half + 1)
    prof = sol.profile
    centers = (-0.5 * q, 0.5 * q)
    U = prof(x - centers[0]) + sigma * prof(x - centers[1])
    D2 = fourier.derivative_matrix(m, length, 2)
    L = -D2 + np.diag(1.0 - prof.nonlinearity.df(U))

    def embed(samples):
        # centred copy of a decaying function from the operator grid
        out = np.zeros(m)
        k = samples.size // 2
        lo = half - k
        if lo >= 0:
            out[lo:lo + samples.size] = samples
        else:
            out[:] = samples[-lo:-lo + m]
        return out

    constraints = []
    for c in centers:
        for base in (data.adjoint.alpha_minus, data.adjoint.alpha_plus):
            constraints.append(fourier.shift(embed(base), length, c))
        constraints.append(data.Z(x - c))
    return projected_minimum(L, D2, constraints, h)
