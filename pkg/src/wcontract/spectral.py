"""Grid discretisation of L = T Laplacian + b.grad in one and two dimensions.

The generator is a continuous-time Markov chain on the nodes with
nearest-neighbour jumps, so constants are preserved exactly and the
boundary is reflecting (zero flux).  Gradient drifts use the square-root
approximation q_ij = T/h^2 exp(-(U_j - U_i) / 2T), which puts exp(-U/T) in
the kernel of the adjoint by construction; other 2D drifts use exponential
fitting with the drift at the edge midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh, splu

from .models import DimensionError, DriftModel, eval_drift

DENSITY_FLOOR = 1e-300


@dataclass(frozen=True)
class Grid:
    dim: int
    a: tuple
    n: tuple

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise DimensionError("grids are one- or two-dimensional")
        if len(self.a) != self.dim or len(self.n) != self.dim:
            raise ValueError("need one (a, n) pair per axis")
        for n in self.n:
            if n < 3 or n % 2 == 0:
                raise ValueError("node counts must be odd and at least 3")

    @classmethod
    def make(cls, dim, a, n):
        a = tuple(float(v) for v in np.broadcast_to(a, (dim,)))
        n = tuple(int(v) for v in np.broadcast_to(n, (dim,)))
        return cls(dim, a, n)

    @property
    def h(self):
        return tuple(2 * a / (n - 1) for a, n in zip(self.a, self.n))

    @property
    def axes(self):
        return [np.linspace(-a, a, n) for a, n in zip(self.a, self.n)]

    @property
    def size(self):
        return int(np.prod(self.n))

    @property
    def cell(self):
        return float(np.prod(self.h))

    def points(self):
        if self.dim == 1:
            return self.axes[0][:, None]
        X, Y = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    def edges(self):
        """(i, j, axis) for every nearest-neighbour pair with j = i + e_axis."""
        if self.dim == 1:
            i = np.arange(self.n[0] - 1)
            return [(i, i + 1, 0)]
        n0, n1 = self.n
        idx = np.arange(n0 * n1).reshape(n0, n1)
        return [(idx[:-1, :].ravel(), idx[1:, :].ravel(), 0),
                (idx[:, :-1].ravel(), idx[:, 1:].ravel(), 1)]

    def refine(self):
        return Grid(self.dim, self.a, tuple(2 * n - 1 for n in self.n))

    def coarsen(self):
        return Grid(self.dim, self.a, tuple((n + 1) // 2 if ((n + 1) // 2) % 2 else (n + 1) // 2 + 1
                                            for n in self.n))


@dataclass
class GridOperator:
    grid: Grid
    T: float
    Q: sp.csr_matrix            # generator, (Q f)_i = sum_j q_ij (f_j - f_i)
    mu: np.ndarray              # density on nodes, sum(mu) * cell = 1
    log_mu: np.ndarray
    scheme: str
    dirichlet: sp.csr_matrix    # A with f^T A f ~ int |grad f|^2 dmu
    diagnostics: dict = field(default_factory=dict)
    model: Optional[DriftModel] = None

    @property
    def x(self):
        return self.grid.points()

    @property
    def weights(self):
        return np.full(self.grid.size, self.grid.cell)

    @property
    def mass(self):
        """Node probabilities mu_i * cell."""
        return self.mu * self.grid.cell

    def mean(self, f):
        return float(np.sum(self.mass * f))

    def adjoint_residual(self):
        return float(np.max(np.abs(self.Q.T @ self.mass))) / (np.max(np.abs(self.Q.diagonal())) or 1)


def _assemble(grid: Grid, rates):
    """Generator from per-edge forward/backward rates [(i, j, q_ij, q_ji)]."""
    rows, cols, vals = [], [], []
    for i, j, qij, qji in rates:
        rows += [i, j]
        cols += [j, i]
        vals += [qij, qji]
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(grid.size, grid.size))
    diag = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(diag)).tocsr()


def _potential_1d(model, x, T):
    """U(x) = -int_0^x b, Simpson on each cell with the drift at the midpoint."""
    b = eval_drift(model, x[:, None])[:, 0]
    mid = eval_drift(model, (0.5 * (x[1:] + x[:-1]))[:, None])[:, 0]
    h = np.diff(x)
    inc = h / 6 * (b[:-1] + 4 * mid + b[1:])
    U = -np.concatenate([[0.0], np.cumsum(inc)])
    i0 = int(np.argmin(np.abs(x)))
    return U - U[i0]


def _stationary_inverse_iteration(Q, tol=1e-13, max_iter=10_000):
    n = Q.shape[0]
    scale = float(np.max(np.abs(Q.diagonal())))
    A = (Q.T - sp.identity(n) * (1e-10 * scale)).tocsc()
    lu = splu(A)
    v = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        w = lu.solve(v)
        w = np.abs(w)
        w /= w.sum()
        delta = np.max(np.abs(w - v))
        v = w
        if delta < tol * np.max(v):
            return v, it
    raise RuntimeError(f"inverse iteration did not converge in {max_iter} iterations")


def _dirichlet(grid: Grid, mu):
    """f^T A f = sum over edges of mean-mu * (f_j - f_i)^2 / h^2 * cell."""
    rows, cols, vals = [], [], []
    for i, j, ax in grid.edges():
        w = np.sqrt(mu[i] * mu[j]) * grid.cell / grid.h[ax] ** 2
        rows += [i, j, i, j]
        cols += [j, i, i, j]
        vals += [-w, -w, w, w]
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(grid.size, grid.size))


def build_operator(model: DriftModel, T, grid: Grid) -> GridOperator:
    if model.d != grid.dim:
        raise DimensionError(f"model dimension {model.d} does not match grid dimension {grid.dim}")
    if T <= 0:
        raise ValueError("T must be positive")
    diag = {}
    if grid.dim == 1 or model.potential is not None:
        if grid.dim == 1:
            U = _potential_1d(model, grid.axes[0], T)
            scheme = "sqra-1d"
        else:
            U = np.asarray(model.potential(grid.points()), dtype=float)
            scheme = "sqra"
        rates = []
        for i, j, ax in grid.edges():
            s = T / grid.h[ax] ** 2
            dU = (U[j] - U[i]) / (2 * T)
            rates.append((i, j, s * np.exp(-dU), s * np.exp(dU)))
        Q = _assemble(grid, rates)
        logp = -(U - U.min()) / T
        p = np.exp(logp)
        logp -= np.log(p.sum())
        p /= p.sum()
    else:
        pts = grid.points()
        rates = []
        for i, j, ax in grid.edges():
            s = T / grid.h[ax] ** 2
            mid = 0.5 * (pts[i] + pts[j])
            bm = eval_drift(model, mid)[:, ax] * grid.h[ax] / (2 * T)
            rates.append((i, j, s * np.exp(bm), s * np.exp(-bm)))
        Q = _assemble(grid, rates)
        p, its = _stationary_inverse_iteration(Q)
        logp = np.log(np.maximum(p, DENSITY_FLOOR))
        scheme = "exp-fitting"
        diag["inverse_iterations"] = its
    mu = p / grid.cell
    op = GridOperator(grid, float(T), Q, mu, logp - np.log(grid.cell), scheme,
                      _dirichlet(grid, mu), diag)
    rs = np.abs(np.asarray(Q.sum(axis=1)).ravel())
    op.diagnostics["row_sum_max"] = float(rs.max())
    op.diagnostics["adjoint_residual"] = op.adjoint_residual()
    return op


# ---------------------------------------------------------------------------
# Poincare constant

def schrodinger_form(op: GridOperator):
    """B = M^(-1/2) A M^(-1/2) assembled from log mu, which stays finite in
    the far tails where mu itself underflows."""
    g = op.grid
    lm = op.log_mu
    rows, cols, vals = [], [], []
    diag = np.zeros(g.size)
    for i, j, ax in g.edges():
        s = 1.0 / g.h[ax] ** 2
        rows += [i, j]
        cols += [j, i]
        vals += [np.full(i.size, -s)] * 2
        diag[i] += s * np.exp(np.minimum(0.5 * (lm[j] - lm[i]), 700.0))
        diag[j] += s * np.exp(np.minimum(0.5 * (lm[i] - lm[j]), 700.0))
    off = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(g.size, g.size))
    return (off + sp.diags(diag)).tocsc()


def _smallest_nonzero(B):
    """Second smallest eigenvalue of the symmetric form (the smallest is 0)."""
    n = B.shape[0]
    if n <= 400:
        ev = np.linalg.eigvalsh(B.toarray())
        return float(ev[1])
    # diagonally dominant tails can make scale huge; shift relative to the bulk
    shift = -1e-6 * float(np.median(np.abs(B.diagonal())))
    ev = eigsh(B, k=3, sigma=shift, which="LM", return_eigenvectors=False)
    ev = np.sort(ev)
    return float(ev[1])


@dataclass
class PoincareResult:
    C_P: float
    gap: float                  # smallest nonzero eigenvalue of -L in L^2(mu), = T / C_P
    coarse_C_P: Optional[float] = None
    error_estimate: Optional[float] = None
    n_nodes: int = 0


def poincare_constant(op: GridOperator, T=None, refine_check=True, coarse_op=None) -> PoincareResult:
    """C_P = max Var_mu(f) / int |grad f|^2 dmu over grid functions.

    The variational constant depends on mu only, so the same routine serves
    reversible and non-reversible operators.  With refine_check, the value is
    recomputed on a grid with about half as many nodes per axis and the
    Richardson estimate |C_h - C_2h| / 3 is reported.
    """
    T = op.T if T is None else T
    try:
        lam = _smallest_nonzero(schrodinger_form(op))
    except Exception as exc:        # ARPACK failures surface with context
        raise RuntimeError(f"eigensolver failed: {exc}") from exc
    C = 1.0 / lam
    res = PoincareResult(C, T * lam, n_nodes=op.grid.size)
    if refine_check:
        if coarse_op is None:
            coarse = op.grid.coarsen()
            if coarse.size >= 9 and coarse != op.grid:
                coarse_op = _rebuild(op, coarse)
        if coarse_op is not None:
            Cc = poincare_constant(coarse_op, T, refine_check=False).C_P
            res.coarse_C_P = Cc
            res.error_estimate = abs(C - Cc) / 3.0
    return res


def _rebuild(op, grid):
    if op.model is None:
        return None
    return build_operator(op.model, op.T, grid)


def operator_for(model, T, grid):
    """build_operator that remembers the model, so refinement checks can rebuild."""
    op = build_operator(model, T, grid)
    op.model = model
    return op


# ---------------------------------------------------------------------------
# semigroup

class Evolver:
    """Crank-Nicolson stepper for du/dt = L u (or the adjoint, for densities)."""

    def __init__(self, op: GridOperator, dt, adjoint=False):
        self.op = op
        self.dt = float(dt)
        M = op.Q.T.tocsc() if adjoint else op.Q.tocsc()
        I = sp.identity(M.shape[0], format="csc")
        self.rhs = (I + 0.5 * dt * M).tocsr()
        self.lu = splu((I - 0.5 * dt * M).tocsc())       # also one implicit Euler half step
        self.adjoint = adjoint

    def step(self, u):
        return self.lu.solve(self.rhs @ u)

    def start(self, u):
        # two implicit-Euler half steps damp the CN oscillation from rough data
        return self.lu.solve(self.lu.solve(u))


def semigroup_evolve(op: GridOperator, f0, t, dt=None, adjoint=False, rough=False):
    """P_t f0 (or the law of X_t from a node-probability vector when adjoint).

    Crank-Nicolson with step dt (default min(t, 1e-2) scaled to hit t
    exactly).  Raises if a constant is not carried to itself.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    u = np.asarray(f0, dtype=float).copy()
    if t == 0:
        return u
    if dt is None:
        dt = min(t, 1e-2)
    n = max(int(np.ceil(t / dt - 1e-9)), 1)
    ev = Evolver(op, t / n, adjoint)
    k0 = 0
    if rough:
        u = ev.start(u)
        k0 = 1
    for _ in range(k0, n):
        u = ev.step(u)
    # constant preservation diagnostic
    if not adjoint:
        one = np.ones(op.grid.size)
        c = ev.step(one)
        if np.max(np.abs(c - 1)) > 1e-10:
            raise RuntimeError("step size unstable: constants are not preserved")
    return u


def evolve_many(op, f0, times, dt=1e-2, adjoint=False, rough=False):
    """P_t f0 at each of an increasing list of times, sharing one factorisation."""
    times = np.asarray(times, dtype=float)
    out = []
    u = np.asarray(f0, dtype=float).copy()
    ev = Evolver(op, dt, adjoint)
    t_now = 0.0
    started = not rough
    for t in times:
        n = int(round((t - t_now) / dt))
        if abs(n * dt - (t - t_now)) > 1e-9 * max(1.0, t):
            raise ValueError("output times must be multiples of dt")
        for _ in range(n):
            if not started:
                u = ev.start(u)
                started = True
            else:
                u = ev.step(u)
        t_now = t
        out.append(u.copy())
    return out


# ---------------------------------------------------------------------------
# gradient contraction

def grid_gradient_sq(op: GridOperator, u):
    """|grad u|^2 by central differences at every node (one-sided at edges)."""
    g = op.grid
    if g.dim == 1:
        return np.gradient(u, g.h[0]) ** 2
    U = u.reshape(g.n)
    gx, gy = np.gradient(U, g.h[0], g.h[1])
    return (gx * gx + gy * gy).ravel()


def interior_mask(op: GridOperator, margin=0.2):
    """Nodes at least a fraction `margin` of the half-width away from the boundary."""
    pts = op.grid.points()
    a = np.asarray(op.grid.a)
    return np.all(np.abs(pts) <= (1 - margin) * a, axis=1)


@dataclass
class GradientReport:
    times: list
    max_violation: list         # per (f, t): max of lhs - rhs on interior nodes
    tolerance: float
    passed: bool
    ratio_max: list             # per (f, t): max lhs / (e^(-2 lam t) P_t|grad f|^2)


def gradient_contraction_check(op: GridOperator, M2, lam, fs: Sequence, times, dt=1e-2,
                               margin=0.2, tol_scale=10.0) -> GradientReport:
    """|grad P_t f|^2 <= M2 e^(-2 lam t) P_t |grad f|^2 at interior nodes.

    Both sides use the same finite-difference gradient; the tolerance is
    tol_scale * h^2 * max |grad f|^2.
    """
    times = list(times)
    mask = interior_mask(op, margin)
    h2 = max(op.grid.h) ** 2
    viol, ratios = [], []
    tol = 0.0
    for f in fs:
        f = np.asarray(f, dtype=float)
        g0 = grid_gradient_sq(op, f)
        scale = float(np.max(g0[mask]))
        tol_f = tol_scale * h2 * scale
        tol = max(tol, tol_f)
        us = evolve_many(op, f, times, dt)
        gs = evolve_many(op, g0, times, dt)
        for t, u, pg in zip(times, us, gs):
            lhs = grid_gradient_sq(op, u)[mask]
            rhs = M2 * np.exp(-2 * lam * t) * pg[mask]
            viol.append(float(np.max(lhs - rhs)) - tol_f)
            base = np.exp(-2 * lam * t) * pg[mask]
            ratios.append(float(np.max(lhs / np.maximum(base, 1e-300))))
    return GradientReport(times, viol, tol, bool(max(viol) <= 0), ratios)


# ---------------------------------------------------------------------------
# entropy / total variation

def kl_divergence(p, q, w):
    p = np.maximum(p, 0.0)
    lp = np.log(np.maximum(p, DENSITY_FLOOR))
    lq = np.log(np.maximum(q, DENSITY_FLOOR))
    return float(np.sum(np.where(p > 0, p * (lp - lq), 0.0) * w))


def total_variation(p, q, w):
    """sup_A |P(A) - Q(A)| = half the L1 distance."""
    return 0.5 * float(np.sum(np.abs(p - q) * w))


@dataclass
class EntropyReport:
    times: list
    tv: list
    kl: list
    bound: list                 # J(t) / (2T) * W2^2(nu0, mu)
    w2_0: float
    pinsker_ok: bool
    bound_ok: bool
    slack: float


def kl_tv_check(op: GridOperator, nu0, K, lam, M, times, dt=1e-3, slack=1e-6) -> EntropyReport:
    """Evolve the density nu0 and check TV^2 <= KL <= J(t) W2^2(nu0, mu) / (2T)."""
    from .constants import j_t
    from .transport import grid_quantile_w
    if op.grid.dim != 1:
        raise DimensionError("entropy checks use the exact 1D transport")
    nu0 = np.asarray(nu0, dtype=float)
    if np.any(nu0 <= 0):
        raise ValueError("initial density must be strictly positive on the grid")
    w = op.weights
    p0 = nu0 * w
    p0 /= p0.sum()
    x = op.grid.axes[0]
    w2 = grid_quantile_w(x, p0 / w, op.mu)
    ps = evolve_many(op, p0, times, dt, adjoint=True, rough=True)
    tv, kl, bd = [], [], []
    for t, p in zip(times, ps):
        if np.min(p) < -1e-14:
            raise RuntimeError(f"negative density at t={t}; reduce dt")
        nu = p / w
        tv.append(total_variation(nu, op.mu, w))
        kl.append(kl_divergence(nu, op.mu, w))
        bd.append(j_t(K, lam, M, t) / (2 * op.T) * w2 ** 2 if t > 0 else np.inf)
    pins = all(a * a <= b + slack for a, b in zip(tv, kl))
    bnd = all(b <= c + slack for b, c in zip(kl, bd))
    return EntropyReport(list(times), tv, kl, bd, w2, pins, bnd, slack)


def variance_decay(op: GridOperator, f, times, dt=1e-2):
    """||P_t f - mu f||^2_mu at each time."""
    f = np.asarray(f, dtype=float)
    out = []
    for u in evolve_many(op, f, times, dt):
        m = op.mean(u)
        out.append(float(np.sum(op.mass * (u - m) ** 2)))
    return np.array(out)
