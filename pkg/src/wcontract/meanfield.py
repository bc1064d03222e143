"""McKean-Vlasov dynamics on a 1D grid, propagation of chaos experiments and
stationary nonlinear solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np
from scipy.linalg import solve_banded
from scipy.signal import fftconvolve

from . import rng
from .constants import ContractionConstants, particle_constants, particle_r_star
from .transport import grid_quantile_w, sample_grid_w

LIP_INFLATION = 1.05


class AssumptionError(ValueError):
    """A mean-field specification violates a stated structural condition."""


@dataclass
class MeanFieldSpec:
    """Confinement F, pair interaction H and their structural constants.

    F and H act on arrays with a trailing dimension axis and broadcast over
    leading axes.  `Htilde` (optional) marks H(x, y) = Htilde(x - y) and
    enables FFT convolution on grids.  `pair_mean` (optional) is a fast
    x -> (1/N) sum_j H(x_i, x_j) for arrays of shape (n_rep, N).
    """
    F: Callable
    H: Optional[Callable]
    C_F: float
    R: float
    c: float
    a: float
    M_H: float
    L_H: float
    T: float
    d: int = 1
    name: str = "mean-field"
    Htilde: Optional[Callable] = None
    pair_mean: Optional[Callable] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.a >= self.c:
            raise AssumptionError(
                f"interaction monotonicity constant a={self.a} must be below the "
                f"confinement constant c={self.c}")

    @property
    def C_H(self):
        return 1.5 * self.L_H

    @property
    def C_G(self):
        # |G_i(x) - G_i(y)| <= L_H (|x_i - y_i| + mean_j |x_j - y_j|), summed
        return 2.0 * self.L_H

    @property
    def M_G(self):
        return self.M_H

    def H0(self):
        if self.H is None:
            return 0.0
        z = np.zeros((1, self.d))
        return float(np.linalg.norm(self.H(z, z)))

    def F0(self):
        return float(np.linalg.norm(self.F(np.zeros((1, self.d)))))

    def with_T(self, T):
        kw = dict(self.__dict__)
        kw["T"] = T
        return MeanFieldSpec(**kw)


# ---------------------------------------------------------------------------
# probe checks

def probe_lipschitz(H, d=1, n=20000, scale=5.0, seed=0):
    """Largest |H(x,x') - H(y,y')| / |(x,x') - (y,y')| over random nearby pairs."""
    r = np.random.default_rng(seed)
    p = r.uniform(-scale, scale, (n, 2 * d))
    step = 10 ** r.uniform(-4, 0, (n, 1)) * r.standard_normal((n, 2 * d))
    q = p + step
    num = np.linalg.norm(H(p[:, :d], p[:, d:]) - H(q[:, :d], q[:, d:]), axis=1)
    den = np.linalg.norm(p - q, axis=1)
    return float(np.max(num / den))


def check_interaction_monotonicity(H, a, d=1, n=20000, scale=5.0, tol=1e-9, seed=0):
    """Max of (x-y).(H(x,x')-H(y,y')) + (x'-y').(H(x',x)-H(y',y)) - a(|x-y|^2+|x'-y'|^2)
    over random quadruples; nonpositive (up to tol) means the condition holds."""
    r = np.random.default_rng(seed)
    x, y, xp, yp = (r.uniform(-scale, scale, (n, d)) for _ in range(4))
    lhs = (np.sum((x - y) * (H(x, xp) - H(y, yp)), axis=1)
           + np.sum((xp - yp) * (H(xp, x) - H(yp, y)), axis=1))
    rhs = a * (np.sum((x - y) ** 2, axis=1) + np.sum((xp - yp) ** 2, axis=1))
    worst = float(np.max(lhs - rhs))
    return worst, worst <= tol


def check_confinement(F, C_F, c, R, d=1, n=20000, scale=None, tol=1e-9, seed=0):
    """Probe (x-y).(F(x)-F(y)) <= C_F |x-y|^2 everywhere and <= -c |x-y|^2 for |x| >= R."""
    r = np.random.default_rng(seed)
    scale = scale or max(4 * R, 4.0)
    x = r.uniform(-scale, scale, (n, d))
    y = r.uniform(-scale, scale, (n, d))
    q = np.sum((x - y) * (F(x) - F(y)), axis=1) / np.sum((x - y) ** 2, axis=1)
    out = np.linalg.norm(x, axis=1) >= R
    v1 = float(np.max(q - C_F))
    v2 = float(np.max(q[out] + c)) if np.any(out) else -np.inf
    return {"upper": v1, "outer": v2, "ok": v1 <= tol and v2 <= tol}


def validate_spec(spec: MeanFieldSpec, seed=0):
    rep = {"confinement": check_confinement(spec.F, spec.C_F, spec.c, spec.R, spec.d, seed=seed)}
    if spec.H is not None:
        worst, ok = check_interaction_monotonicity(spec.H, spec.a, spec.d, seed=seed)
        lip = probe_lipschitz(spec.H, spec.d, seed=seed)
        rep["interaction"] = {"worst": worst, "ok": ok}
        rep["lipschitz"] = {"probe": lip, "declared": spec.L_H, "ok": lip <= spec.L_H * (1 + 1e-9)}
    rep["ok"] = all(v.get("ok", True) for v in rep.values() if isinstance(v, dict))
    return rep


# ---------------------------------------------------------------------------
# example specifications

@nb.njit(cache=True)
def _pair_mean_tanh(x, gamma):
    n_rep, N = x.shape
    out = np.empty_like(x)
    for r in range(n_rep):
        for i in range(N):
            s = 0.0
            xi = x[r, i]
            for j in range(N):
                s += math.tanh(xi - x[r, j])
            out[r, i] = -gamma * s / N
    return out


def tanh_spec(gamma=0.1, T=None, temperature_factor=2.0):
    """F(x) = -x^3, H(x, y) = -gamma tanh(x - y) in one dimension.

    (x-y)(F(x)-F(y)) = -(x-y)^2 (x^2 + xy + y^2) gives C_F = 0 and, with
    R = 1, c = 3/4.  H is odd in x - y with x H~(x) <= 0, so a = 0.
    """
    F = lambda x: -x ** 3
    H = lambda x, y: -gamma * np.tanh(x - y)
    L_H = gamma * math.sqrt(2) * LIP_INFLATION
    spec = MeanFieldSpec(F, H, 0.0, 1.0, 0.75, 0.0, gamma, L_H, T or 1.0, 1, "tanh",
                         Htilde=lambda z: -gamma * np.tanh(z),
                         pair_mean=lambda x: _pair_mean_tanh(x, gamma),
                         params={"gamma": gamma})
    if T is None:
        T0 = chaos_particle_constants(spec).T0
        spec = spec.with_T(temperature_factor * T0)
    return spec


def linear_spec(kappa0=1.0, T=1.0):
    """F(x) = -x, H(x, y) = -kappa0 (x - y): Gaussian, closed-form moments."""
    F = lambda x: -x
    H = lambda x, y: -kappa0 * (x - y)
    return MeanFieldSpec(F, H, 0.0, 0.0, 1.0, 0.0, 0.0, kappa0 * math.sqrt(2) * LIP_INFLATION, T,
                         1, "linear", Htilde=lambda z: -kappa0 * z,
                         pair_mean=lambda x: -kappa0 * (x - x.mean(axis=1, keepdims=True)),
                         params={"kappa0": kappa0})


def chaos_particle_constants(spec: MeanFieldSpec, T=None) -> ContractionConstants:
    return particle_constants(spec.C_F, spec.C_G, spec.a, spec.c, spec.R, spec.M_G, spec.d,
                              T if T is not None else spec.T, F=spec.F)


# ---------------------------------------------------------------------------
# grid solver

def bernoulli(z):
    """B(z) = z / (e^z - 1), with the removable singularity handled."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    return np.where(small, 1 - z / 2 + z * z / 12, zs / np.expm1(zs))


@dataclass
class MeanFieldState:
    x: np.ndarray
    density: np.ndarray
    t: float
    moments: dict = field(default_factory=dict)

    @property
    def h(self):
        return self.x[1] - self.x[0]

    def moment(self, p):
        return float(np.sum(np.abs(self.x) ** p * self.density) * self.h)

    def mass(self):
        return float(np.sum(self.density) * self.h)


class McKeanVlasov1D:
    """Scharfetter-Gummel finite volumes for
    d nu/dt = d/dx (T d nu/dx - (F + H * nu) nu), zero flux at both ends.

    Cells are centred on the nodes; the interface drift F + H * nu is
    recomputed every step from a linear extrapolation of the density, then
    one BDF2 step of the frozen linear problem is taken (L-stable, so the
    stiff far-tail modes are damped rather than left oscillating).  Columns of
    the operator sum to zero, so mass is conserved to rounding.
    """

    def __init__(self, spec: MeanFieldSpec, x, method="auto"):
        if spec.d != 1:
            raise ValueError("the grid solver is one-dimensional")
        self.spec = spec
        self.x = np.asarray(x, dtype=float)
        self.h = float(self.x[1] - self.x[0])
        self.xf = 0.5 * (self.x[1:] + self.x[:-1])
        self.Ff = spec.F(self.xf[:, None])[:, 0]
        if method == "auto":
            method = "fft" if spec.Htilde is not None else "direct"
        self.method = method
        self.fallbacks = 0
        if spec.H is not None:
            n = self.x.size
            if method == "fft":
                # kernel at offsets (m + 1/2) h for interfaces, m h for nodes
                m = np.arange(-(n - 1), n)
                self._kf = spec.Htilde(((m + 0.5) * self.h)[:, None])[:, 0]
                self._kn = spec.Htilde((m * self.h)[:, None])[:, 0]
            else:
                X, Y = np.meshgrid(self.xf, self.x, indexing="ij")
                self._Kf = spec.H(X[..., None], Y[..., None])[..., 0]
                X, Y = np.meshgrid(self.x, self.x, indexing="ij")
                self._Kn = spec.H(X[..., None], Y[..., None])[..., 0]

    def interaction(self, nu, at="faces"):
        """(H * nu) at interfaces or nodes."""
        n = self.x.size
        if self.spec.H is None:
            return np.zeros(n - 1 if at == "faces" else n)
        if self.method == "fft":
            k = self._kf if at == "faces" else self._kn
            # sum_j k[(i - j) + n - 1] nu_j sits at index i + n - 1 of the full convolution
            full = fftconvolve(nu, k) * self.h
            return full[n - 1: 2 * n - 1] if at == "nodes" else full[n - 1: 2 * n - 2]
        K = self._Kf if at == "faces" else self._Kn
        return K @ nu * self.h

    def _drift_faces(self, nu):
        return self.Ff + self.interaction(nu, "faces")

    def _banded(self, v):
        """Operator A (d nu/dt = A nu) in banded form for solve_banded."""
        T, h = self.spec.T, self.h
        z = v * h / T
        bp = bernoulli(-z) * T / h ** 2      # out of cell i through face i+1/2, to the right
        bm = bernoulli(z) * T / h ** 2       # from cell i+1 through face i+1/2, to the left
        n = self.x.size
        diag = np.zeros(n)
        diag[:-1] -= bp
        diag[1:] -= bm
        upper = bm          # A[i, i+1]
        lower = bp          # A[i+1, i]
        return diag, upper, lower

    def _solve(self, diag, up, lo, c0, rhs):
        """Solve (c0 I - A) u = rhs with A tridiagonal."""
        ab = np.zeros((3, rhs.size))
        ab[0, 1:] = -up
        ab[1] = c0 - diag
        ab[2, :-1] = -lo
        return solve_banded((1, 1), ab, rhs)

    def step_euler(self, nu, dt):
        diag, up, lo = self._banded(self._drift_faces(nu))
        return self._solve(diag * dt, up * dt, lo * dt, 1.0, nu)

    def step(self, nu, dt, nu_prev):
        """BDF2: (3 u - 4 nu + nu_prev) / (2 dt) = A(2 nu - nu_prev) u."""
        star = np.maximum(2 * nu - nu_prev, 0.0)
        diag, up, lo = self._banded(self._drift_faces(star))
        return self._solve(2 * dt * diag, 2 * dt * up, 2 * dt * lo, 3.0, 4 * nu - nu_prev)

    def evolve(self, nu0, dt, t, record=None, keep_drift=False):
        """Integrate to time t; record is a list of times to snapshot.

        Returns the final state and, if requested, a list of snapshots and an
        array of node drifts (H * nu) at the start of every step.
        """
        nu = np.asarray(nu0, dtype=float).copy()
        nu /= np.sum(nu) * self.h
        n_steps = int(round(t / dt))
        if n_steps and abs(n_steps * dt - t) > 1e-9 * max(t, 1):
            raise ValueError("t must be a multiple of dt")
        record = sorted(record or [])
        rec_steps = {int(round(s / dt)): s for s in record}
        snaps = []
        drifts = [] if keep_drift else None
        if 0 in rec_steps:
            snaps.append(MeanFieldState(self.x, nu.copy(), 0.0))
        prev = None
        for k in range(n_steps):
            if keep_drift:
                drifts.append(self.interaction(nu, "nodes"))
            new = None if prev is None else self.step(nu, dt, prev)
            if new is None or new.min() < -1e-13 * new.max():
                # start-up, or BDF2 overshoot where mass is swept out of a
                # stiff tail: two implicit Euler half steps (positivity preserving)
                new = self.step_euler(self.step_euler(nu, 0.5 * dt), 0.5 * dt)
                self.fallbacks += prev is not None
            if new.min() < -1e-10 * new.max():
                raise RuntimeError(f"negative density at step {k + 1}; reduce dt")
            prev, nu = nu, new
            if k + 1 in rec_steps:
                snaps.append(MeanFieldState(self.x, nu.copy(), (k + 1) * dt))
        final = MeanFieldState(self.x, nu, n_steps * dt)
        return final, snaps, (np.array(drifts) if keep_drift else None)


def evolve_mckean_vlasov_1d(spec: MeanFieldSpec, x, nu0, dt, t, method="auto") -> MeanFieldState:
    solver = McKeanVlasov1D(spec, x, method=method)
    return solver.evolve(nu0, dt, t)[0]


def gaussian_density(x, mean, std):
    return np.exp(-0.5 * ((x - mean) / std) ** 2) / (std * math.sqrt(2 * math.pi))


# ---------------------------------------------------------------------------
# constants

def moment_constant(spec: MeanFieldSpec):
    """Q in d/dt m2 <= -(c-a) m2 + Q, from 2 E[Y.(F + H)] + 2 T d."""
    ca = spec.c - spec.a
    return (2 * spec.T * spec.d + 2 * (spec.C_F + spec.c) * spec.R ** 2
            + (spec.H0() + spec.F0()) ** 2 / ca)


def moment_ceiling(spec: MeanFieldSpec, m2_0, t=None):
    """e^(-(c-a) t) m2_0 + Q/(c-a); with t None, the time-uniform max(m2_0, ...) form."""
    ca = spec.c - spec.a
    Q = moment_constant(spec)
    if t is None:
        return m2_0 + Q / ca
    return np.exp(-ca * np.asarray(t)) * m2_0 + Q / ca


@dataclass
class ChaosConstants:
    alpha: float
    beta: float
    A: float
    B: float
    Q: float
    kappa_sup: float
    lam: float
    M: float
    T0: float
    m2_0: float
    rate: float                 # (c - a) / 2
    derived: bool = True

    def bound(self, N, t, k=1):
        return math.sqrt(k / N) * (self.alpha * math.exp(-self.rate * t) * math.sqrt(self.m2_0)
                                   + self.beta)


def derive_chaos_constants(spec: MeanFieldSpec, m2_0, constants: Optional[ContractionConstants] = None):
    """(alpha, beta) of the time-uniform chaos bound, following the proof chain.

    A^2 = 4 L_H^2 (T + 2 ||kappa||)^2 / T * m2_0, B^2 the same factor times
    the second-moment ceiling Q/(c-a); alpha = A / (sqrt(T m2_0) ((c-a)/2 - lam)),
    beta = B / (sqrt(T) lam).
    """
    cc = constants or chaos_particle_constants(spec)
    lam, T = cc.lam, spec.T
    ca = spec.c - spec.a
    if lam >= ca / 2:
        raise AssertionError("lambda must be below (c - a)/2")
    Rs = particle_r_star(spec.C_F, spec.a, spec.c, spec.R, spec.d)
    Ks = spec.C_F + (spec.c + spec.a) / 2
    ksup = Ks * Rs ** 2 / spec.d
    Q = moment_constant(spec)
    factor = 4 * spec.L_H ** 2 * (T + 2 * ksup) ** 2 / T
    A = math.sqrt(factor * m2_0)
    B = math.sqrt(factor * Q / ca)
    alpha = A / (math.sqrt(T) * math.sqrt(m2_0) * (ca / 2 - lam)) if m2_0 > 0 else \
        2 * spec.L_H * (T + 2 * ksup) / T / (ca / 2 - lam)
    beta = B / (math.sqrt(T) * lam)
    return ChaosConstants(alpha, beta, A, B, Q, ksup, lam, cc.M, cc.T0, m2_0, ca / 2)


# ---------------------------------------------------------------------------
# particles coupled to their McKean-Vlasov copies

def _pair_mean(spec: MeanFieldSpec, x):
    """(1/N) sum_j H(x_i, x_j) for x of shape (n_rep, N) (one dimension)."""
    if spec.H is None:
        return np.zeros_like(x)
    if spec.pair_mean is not None:
        return spec.pair_mean(x)
    xi = x[:, :, None, None]
    xj = x[:, None, :, None]
    return spec.H(*np.broadcast_arrays(xi, xj))[..., 0].mean(axis=2)


@dataclass
class CoupledParticles:
    x: np.ndarray               # (n_rep, N) particle system at time t
    y: np.ndarray               # (n_rep, N) McKean-Vlasov copies, same noise
    t: float


def coupled_particles(spec: MeanFieldSpec, N, n_rep, t, dt, seed, nu0_mean, nu0_std,
                      solver: McKeanVlasov1D, drift_table=None):
    """Simulate the N-particle system and N independent nonlinear copies
    driven by the same Brownian increments and started at the same points.

    The copies use the grid interaction H * nu_t interpolated at their
    positions.  Particle i of repetition r uses stream r N + i.
    """
    n_steps = int(round(t / dt))
    if drift_table is None:
        nu0 = gaussian_density(solver.x, nu0_mean, nu0_std)
        _, _, drift_table = solver.evolve(nu0, dt, t, keep_drift=True)
    streams = np.arange(n_rep * N, dtype=np.uint64)
    x = nu0_mean + nu0_std * rng.normals(seed, streams, 0, 1, rng.TAG_INITIAL)[:, 0]
    x = x.reshape(n_rep, N)
    y = x.copy()
    sq = math.sqrt(2 * spec.T * dt)
    xs = solver.x
    for k in range(n_steps):
        xi = rng.normals(seed, streams, k, 1)[:, 0].reshape(n_rep, N)
        gx = _pair_mean(spec, x)
        gy = np.interp(y, xs, drift_table[k])
        x = x + (spec.F(x[..., None])[..., 0] + gx) * dt + sq * xi
        y = y + (spec.F(y[..., None])[..., 0] + gy) * dt + sq * xi
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise RuntimeError(f"divergence at step {k + 1}")
    return CoupledParticles(x, y, n_steps * dt)


@dataclass
class ChaosTable:
    N: np.ndarray
    w2_coupling: np.ndarray     # sqrt(E|X_i - Y_i|^2), an upper bound on W2(nu^{1,N}, nu_bar)
    se_coupling: np.ndarray
    w2_particle1: np.ndarray    # exact 1D W2 between particle-1 samples and the grid law
    w2_particle1_floor: np.ndarray   # same statistic for an i.i.d. sample of nu_bar
    bound: np.ndarray
    slope: float
    slope_ci: tuple
    intercept: float
    constants: ChaosConstants
    t: float
    n_reps: int
    below_bound: bool
    extra: dict = field(default_factory=dict)


def wls_loglog(N, est, se):
    """Weighted least squares fit of log est = a + s log N, weights from se."""
    lx = np.log(np.asarray(N, dtype=float))
    ly = np.log(est)
    var = (np.asarray(se) / np.asarray(est)) ** 2
    w = 1.0 / np.maximum(var, 1e-30)
    W = w.sum()
    mx, my = np.sum(w * lx) / W, np.sum(w * ly) / W
    s = np.sum(w * (lx - mx) * (ly - my)) / np.sum(w * (lx - mx) ** 2)
    return float(s), float(my - s * mx)


def chaos_experiment(spec: MeanFieldSpec, N_list: Sequence[int], t=2.0, n_reps=200, dt=1e-2,
                     seed=0, nu0_mean=1.0, nu0_std=1.0, grid_half_width=None, grid_n=1601,
                     n_boot=200) -> ChaosTable:
    """Distance between one tagged particle and the McKean-Vlasov law versus N."""
    width = grid_half_width or max(8.0, abs(nu0_mean) + 8 * nu0_std)
    x = np.linspace(-width, width, grid_n)
    solver = McKeanVlasov1D(spec, x)
    nu0 = gaussian_density(x, nu0_mean, nu0_std)
    final, _, table = solver.evolve(nu0, dt, t, keep_drift=True)
    m2_0 = nu0_mean ** 2 + nu0_std ** 2
    cst = derive_chaos_constants(spec, m2_0)
    N_list = np.asarray(N_list, dtype=int)
    est, se, lit, floor, per_rep = [], [], [], [], []
    for k, N in enumerate(N_list):
        cp = coupled_particles(spec, int(N), n_reps, t, dt, rng.derive_seed(seed, k), nu0_mean,
                               nu0_std, solver, table)
        r = np.mean((cp.x - cp.y) ** 2, axis=1)          # per repetition
        m = float(r.mean())
        s = float(r.std(ddof=1) / math.sqrt(n_reps))
        est.append(math.sqrt(m))
        se.append(s / (2 * math.sqrt(m)))
        per_rep.append(r)
        lit.append(sample_grid_w(cp.x[:, 0], x, final.density))
        floor.append(sample_grid_w(cp.y[:, 0], x, final.density))
    est, se = np.array(est), np.array(se)
    slope, icpt = wls_loglog(N_list, est, se)
    brng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        e_b = []
        s_b = []
        for r in per_rep:
            rb = r[brng.integers(0, r.size, r.size)]
            e_b.append(math.sqrt(rb.mean()))
            s_b.append(rb.std(ddof=1) / math.sqrt(r.size) / (2 * math.sqrt(rb.mean())))
        boots.append(wls_loglog(N_list, np.array(e_b), np.array(s_b))[0])
    ci = tuple(float(v) for v in np.quantile(boots, [0.025, 0.975]))
    bound = np.array([cst.bound(int(N), t) for N in N_list])
    below = bool(np.all(est <= bound + 3 * se))
    return ChaosTable(N_list, est, se, np.array(lit), np.array(floor), bound, slope, ci, icpt,
                      cst, t, n_reps, below)


@dataclass
class RateReport:
    N: np.ndarray
    mean_sq: np.ndarray         # E W2^2(empirical measure, nu_bar_t)
    se: np.ndarray
    exponent_ms: float          # fitted exponent of E W2^2
    exponent_rms: float         # fitted exponent of sqrt(E W2^2)
    consistent: bool


def empirical_measure_rate(spec: MeanFieldSpec, N_list, t=2.0, n_reps=50, dt=1e-2, seed=0,
                           nu0_mean=1.0, nu0_std=1.0, grid_n=1601) -> RateReport:
    """E W2^2 between the empirical measure of one run and the grid law, versus N."""
    width = max(8.0, abs(nu0_mean) + 8 * nu0_std)
    x = np.linspace(-width, width, grid_n)
    solver = McKeanVlasov1D(spec, x)
    final, _, table = solver.evolve(gaussian_density(x, nu0_mean, nu0_std), dt, t, keep_drift=True)
    ms, se = [], []
    for k, N in enumerate(N_list):
        cp = coupled_particles(spec, int(N), n_reps, t, dt, rng.derive_seed(seed, 100 + k),
                               nu0_mean, nu0_std, solver, table)
        w = np.array([sample_grid_w(cp.x[r], x, final.density) ** 2 for r in range(n_reps)])
        ms.append(w.mean())
        se.append(w.std(ddof=1) / math.sqrt(n_reps))
    ms, se = np.array(ms), np.array(se)
    e_ms, _ = wls_loglog(N_list, ms, se)
    e_rms = e_ms / 2
    return RateReport(np.asarray(N_list), ms, se, e_ms, e_rms, bool(e_ms <= -0.5 + 0.1))


# ---------------------------------------------------------------------------
# stationary solution

@dataclass
class StationaryResult:
    x: np.ndarray
    density: np.ndarray
    increments: list            # W2 between successive iterates
    converged: bool
    t1: float
    t2_residual: float          # W2(Phi_t2(nu*), nu*)
    iterations: int

    def moment(self, p, center=False):
        h = self.x[1] - self.x[0]
        m = np.sum(self.x * self.density) * h if center else 0.0
        return float(np.sum(np.abs(self.x - m) ** p * self.density) * h)


def stationary_meanfield(spec: MeanFieldSpec, x, nu0, t1=None, t2=None, dt=1e-2, tol=1e-7,
                         max_iter=200, lam=None) -> StationaryResult:
    """Fixed point of nu -> Phi_t1(nu) by Picard iteration, checked against Phi_t2."""
    if lam is None:
        lam = chaos_particle_constants(spec).lam
    if t1 is None:
        t1 = max(1.0 / (2 * lam), dt)
        t1 = math.ceil(t1 / dt) * dt
    if t1 < 1.0 / (2 * lam) - 1e-12:
        raise ValueError("t1 must be at least 1/(2 lambda)")
    solver = McKeanVlasov1D(spec, x)
    nu = np.asarray(nu0, dtype=float)
    incs = []
    conv = False
    it = 0
    for it in range(1, max_iter + 1):
        new = solver.evolve(nu, dt, t1)[0].density
        inc = grid_quantile_w(x, nu, new)
        incs.append(inc)
        nu = new
        if inc < tol:
            conv = True
            break
    if t2 is None:
        t2 = 0.37 * t1
        t2 = max(round(t2 / dt), 1) * dt
    res2 = grid_quantile_w(x, nu, solver.evolve(nu, dt, t2)[0].density)
    return StationaryResult(np.asarray(x), nu, incs, conv, t1, res2, it)


def meanfield_contraction(spec: MeanFieldSpec, x, nu0, mu0, times, dt=1e-2):
    """Grid W2 between two solutions at the given times, with the M e^(-lam t) bound."""
    cc = chaos_particle_constants(spec)
    solver = McKeanVlasov1D(spec, x)
    t_end = max(times)
    _, sa, _ = solver.evolve(nu0, dt, t_end, record=times)
    _, sb, _ = solver.evolve(mu0, dt, t_end, record=times)
    w = np.array([grid_quantile_w(x, a.density, b.density) for a, b in zip(sa, sb)])
    bound = cc.M * np.exp(-cc.lam * np.asarray(sorted(times))) * w[0]
    return np.asarray(sorted(times)), w, bound, cc
