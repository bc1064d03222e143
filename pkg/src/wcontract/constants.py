"""Explicit constants, weight functions and bounds for contractive diffusions.

Every public function that produces a number for downstream checks returns
(or carries) a provenance record: a formula id, the inputs, and any grid
resolution involved, so manifests can be audited.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import CubicHermiteSpline

from .models import DriftModel, MissingParameters, eval_drift, jacobian_k_tilde

# safety factor applied on top of grid-searched suprema when picking temperatures
T0_SAFETY = 1.05


def _prov(formula, **inputs):
    clean = {}
    for k, v in inputs.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        clean[k] = v
    return {"formula": formula, "inputs": clean}


# ---------------------------------------------------------------------------
# radii

def r_star(K, c, R, d):
    """Outer radius R (2 + 2K/c)^(1/d) of the region where the weight lives."""
    if c <= 0:
        raise ValueError("c must be positive")
    if K < 0 or R < 0 or d < 1:
        raise ValueError("need K, R >= 0 and d >= 1")
    return R * (2.0 + 2.0 * K / c) ** (1.0 / d)


def k_star(K, c):
    return K / 4.0 + c / 8.0


# ---------------------------------------------------------------------------
# weight function

def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3.0 - 2.0 * s)


class WeightFunction:
    """Radial weight kappa(x) = g(|x|^2) - inf g.

    g solves r g'' + (d/2) g' = h(r) with g(0) = 0, g'(0) = -2K*/d, where the
    source h equals -K* inside the ball of radius R, c/8 on the annulus and 0
    outside.  With eps > 0 both jumps of h are replaced by C^1 ramps (in the
    variable r = |x|^2): the inner one starts at R^2, the outer one has width
    eps and ends at the edge E where g' vanishes, solved from the flux
    condition.  E sits at most about eps beyond R*^2.
    """

    def __init__(self, K, c, R, d, eps=None):
        if c <= 0:
            raise ValueError("c must be positive")
        self.K, self.c, self.R, self.d = float(K), float(c), float(R), int(d)
        self.K_star = k_star(K, c)
        self.R_star = r_star(K, c, R, d)
        self.R2 = self.R ** 2
        self.R_star2 = self.R_star ** 2
        if eps is None:
            eps = 1e-3 * (self.R_star2 - self.R2)
        self.eps = float(eps)
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        self.trivial = self.R == 0.0 or self.K_star == 0.0
        if self.trivial:
            self.E = 0.0
            self.kappa_sup = 0.0
            self.grad_sup = 0.0
            return
        if self.R_star2 - self.R2 < 4 * self.eps:
            raise ValueError("smoothing band does not fit between R^2 and R*^2")
        # inner ramp starts at R^2 so the inequality holds with no band
        # excuse; its width is shrunk so the flux it delays moves the edge
        # by at most eps/2
        self.r_in = self.R2
        ratio = (self.R2 / self.R_star2) ** (0.5 * self.d - 1.0)
        self.eps_in = self.eps * min(1.0, 1.0 / ((1.0 + 8.0 * self.K_star / self.c) * ratio))
        self.E = self._solve_edge()
        self._build_table()

    # source term -----------------------------------------------------------
    def h(self, r):
        r = np.asarray(r, dtype=float)
        Ks, top, eps, E = self.K_star, self.c / 8.0, self.eps, self.E
        r0 = self.r_in if eps > 0 else self.R2
        out = np.where(r <= r0, -Ks, top)
        if eps > 0:
            ein = self.eps_in
            rise = (r > r0) & (r < r0 + ein)
            out = np.where(rise, -Ks + (top + Ks) * _smoothstep((r - r0) / ein), out)
            fall = (r > E - eps) & (r < E)
            out = np.where(fall, top * (1.0 - _smoothstep((r - (E - eps)) / eps)), out)
        return np.where(r >= E, 0.0, out)

    def _flux_to(self, E):
        """F(E) = int_0^E h(s) s^(d/2 - 1) ds for a trial edge E."""
        half = self.d / 2.0
        Ks, top, eps, R2 = self.K_star, self.c / 8.0, self.eps, self.R2
        w = lambda a, b: (b ** half - a ** half) / half
        if eps > 0:
            r0, ein = self.r_in, self.eps_in
            total = -Ks * w(0.0, r0)
            f = lambda s: (-Ks + (top + Ks) * _smoothstep((s - r0) / ein)) * s ** (half - 1)
            total += integrate.quad(f, r0, r0 + ein, epsabs=1e-13, epsrel=1e-12)[0]
            total += top * w(r0 + ein, E - eps)
            f2 = lambda s: top * (1 - _smoothstep((s - (E - eps)) / eps)) * s ** (half - 1)
            total += integrate.quad(f2, E - eps, E, epsabs=1e-13, epsrel=1e-12)[0]
        else:
            total = -Ks * w(0.0, R2) + top * w(R2, E)
        return total

    def _solve_edge(self):
        if self.eps == 0:
            return self.R_star2
        lo = self.R_star2 - self.eps
        hi = self.R_star2 + 2 * self.eps
        while self._flux_to(lo) > 0:
            lo -= self.eps
        while self._flux_to(hi) < 0:
            hi += 2 * self.eps
        return optimize.brentq(self._flux_to, lo, hi, xtol=1e-14, rtol=1e-14)

    # derivatives of g --------------------------------------------------------
    def gprime(self, r):
        r = np.asarray(r, dtype=float)
        shape = r.shape
        r = r.ravel()
        out = np.zeros_like(r)
        if not self.trivial:
            out[r <= self._r0] = -2.0 * self.K_star / self.d
            mid = (r > self._r0) & (r < self.E)
            out[mid] = self._gp_spline(r[mid])
        return out.reshape(shape)

    def gsecond(self, r):
        r = np.asarray(r, dtype=float)
        shape = r.shape
        r = r.ravel()
        out = np.zeros_like(r)
        if not self.trivial:
            mid = (r > self._r0) & (r < self.E)
            rm = r[mid]
            out[mid] = (self.h(rm) - 0.5 * self.d * self.gprime(rm)) / rm
        return out.reshape(shape)

    def g(self, r):
        r = np.asarray(r, dtype=float)
        if self.trivial:
            return np.zeros_like(r)
        inner = -2.0 * self.K_star / self.d * np.minimum(r, self._r0)
        return np.where(r <= self._r0, inner, self._g_spline(np.clip(r, self._r0, self.E)))

    def _build_table(self):
        # integrate F and g on a breakpoint-aware node set, then interpolate
        # with cubic Hermite splines carrying the exact derivatives
        E, eps = self.E, self.eps
        R2 = self._r0 = self.r_in if eps > 0 else self.R2
        pieces = []
        if eps > 0:
            pieces.append(np.linspace(R2, R2 + self.eps_in, 97))
            pieces.append(np.linspace(R2 + self.eps_in, E - eps, 4001))
            pieces.append(np.linspace(E - eps, E, 97))
        else:
            pieces.append(np.linspace(R2, E, 4001))
        nodes = np.unique(np.concatenate(pieces))
        half = self.d / 2.0
        dens = lambda s: float(self.h(s)) * s ** (half - 1)
        F = np.empty(nodes.size)
        F[0] = -self.K_star * R2 ** half / half
        for i in range(1, nodes.size):
            a, b = nodes[i - 1], nodes[i]
            F[i] = F[i - 1] + integrate.quad(dens, a, b, epsabs=1e-14, epsrel=1e-12)[0]
        gp = F / nodes ** half
        gp[-1] = 0.0
        hv = self.h(nodes)
        gpp = (hv - half * gp) / nodes
        self._gp_spline = CubicHermiteSpline(nodes, gp, gpp)
        gvals = np.empty(nodes.size)
        gvals[0] = -2.0 * self.K_star / self.d * R2
        for i in range(1, nodes.size):
            gvals[i] = gvals[i - 1] + self._gp_spline.integrate(nodes[i - 1], nodes[i])
        self._g_spline = CubicHermiteSpline(nodes, gvals, gp)
        self.g_inf = float(gvals[-1])
        self.kappa_sup = -self.g_inf
        rr = np.linspace(0, E, 20001)
        self.grad_sup = float(np.max(2 * np.sqrt(rr) * np.abs(self.gprime(rr))))

    # evaluation on points ----------------------------------------------------
    def kappa(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.sum(x * x, axis=1)
        if self.trivial:
            return np.zeros(r.size)
        return np.maximum(self.g(r) - self.g_inf, 0.0)

    def grad_kappa(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.sum(x * x, axis=1)
        return 2.0 * x * self.gprime(r)[:, None]

    def laplacian_kappa(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.sum(x * x, axis=1)
        return 4.0 * r * self.gsecond(r) + 2.0 * self.d * self.gprime(r)

    def envelope(self, x):
        """Piecewise lower envelope of k: -K inside radius R, c outside."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        nrm = np.sqrt(np.sum(x * x, axis=1))
        return np.where(nrm < self.R, -self.K, self.c)

    @property
    def kappa_bound(self):
        """Closed-form ceiling 2 K* R*^2 / d on sup kappa."""
        return 2.0 * self.K_star * self.R_star2 / self.d

    def band_tolerance(self):
        return 0.0 if self.trivial else 1e-8 * (1 + self.K + self.c)

    def provenance(self):
        return _prov("weight", K=self.K, c=self.c, R=self.R, d=self.d, eps=self.eps,
                     edge=self.E, kappa_sup=self.kappa_sup)


def build_weight(K, c, R, d, eps=None) -> WeightFunction:
    return WeightFunction(K, c, R, d, eps)


# ---------------------------------------------------------------------------
# suprema over balls

@dataclass
class BallSup:
    value: float
    argmax: list
    grid_points: int
    ascent_steps: int


def sup_over_ball(fn: Callable, radius: float, d: int, seed: int = 0,
                  ascent_steps: int = 50, n_starts: int = 8) -> BallSup:
    """Grid search of fn over the closed ball, refined by projected ascent.

    The value returned is attained at a point, hence a lower bound on the
    true supremum.
    """
    if radius == 0:
        x0 = np.zeros((1, d))
        return BallSup(float(fn(x0)[0]), [0.0] * d, 1, 0)
    m = min(d, 3)
    if d <= 3:
        axes = [np.linspace(-radius, radius, 33)] * m
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        pts = pts[np.sum(pts ** 2, axis=1) <= radius ** 2 * (1 + 1e-12)]
        # the sphere itself, where convex-type suprema sit
        if d == 1:
            shell = np.array([[radius], [-radius]])
        else:
            rng = np.random.default_rng(seed)
            dirs = rng.standard_normal((512, d))
            shell = radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = np.vstack([pts, shell])
    else:
        rng = np.random.default_rng(seed)
        dirs = rng.standard_normal((33 ** 3, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        rad = radius * rng.uniform(size=(dirs.shape[0], 1)) ** (1.0 / d)
        pts = np.vstack([dirs * rad, dirs[:512] * radius])
    vals = fn(pts)
    order = np.argsort(vals)[::-1][:n_starts]
    best_val = float(vals[order[0]])
    best_x = pts[order[0]].copy()
    step = 0.05 * radius
    h = 1e-6 * (radius + 1)
    for idx in order:
        x = pts[idx].copy()
        fx = float(vals[idx])
        s = step
        for _ in range(ascent_steps):
            grad = np.empty(d)
            for j in range(d):
                e = np.zeros(d)
                e[j] = h
                grad[j] = (fn((x + e)[None])[0] - fn((x - e)[None])[0]) / (2 * h)
            gn = np.linalg.norm(grad)
            if gn == 0:
                break
            cand = x + s * grad / gn
            nc = np.linalg.norm(cand)
            if nc > radius:
                cand *= radius / nc
            fc = float(fn(cand[None])[0])
            if fc > fx:
                x, fx = cand, fc
            else:
                s *= 0.5
        if fx > best_val:
            best_val, best_x = fx, x
    return BallSup(best_val, best_x.tolist(), int(pts.shape[0]), ascent_steps)


def neg_radial_drift(model: DriftModel):
    """x -> -x . b(x), vectorised."""
    return lambda pts: -np.sum(pts * eval_drift(model, pts), axis=-1)


# ---------------------------------------------------------------------------
# the temperature threshold and contraction constants

@dataclass
class Threshold:
    value: float
    safe_value: float
    sup: float
    R_star: float
    alpha: float
    provenance: dict = field(default_factory=dict)


def _declared(model):
    if model.declared is None:
        raise MissingParameters(f"model {model.name!r} declares no (K, R, c)")
    return model.declared.K, model.declared.R, model.declared.c


def t0_formula(K, c, R, d, alpha, sup_value):
    Rs = r_star(K, c, R, d)
    return (2 * K + c) * (alpha * (K + c / 4) * Rs ** 2 + 2 * sup_value) / (c * d)


def t0_threshold(model: DriftModel, alpha: float = 2.0, seed: int = 0) -> Threshold:
    """Temperature above which the synchronous coupling contracts the
    weighted distance.  ``value`` uses the grid-searched supremum as is;
    ``safe_value`` is inflated by 5% to cover search error."""
    if alpha < 2:
        raise ValueError("alpha must be at least 2")
    K, R, c = _declared(model)
    d = model.d
    Rs = r_star(K, c, R, d)
    if R == 0:
        return Threshold(0.0, 0.0, 0.0, 0.0, alpha, _prov("T0", K=K, c=c, R=R, d=d, alpha=alpha))
    ball = sup_over_ball(neg_radial_drift(model), Rs, d, seed=seed)
    T0 = t0_formula(K, c, R, d, alpha, ball.value)
    return Threshold(T0, T0_SAFETY * T0, ball.value, Rs, alpha,
                     _prov("T0", K=K, c=c, R=R, d=d, alpha=alpha, sup=ball.value,
                           grid_points=ball.grid_points, ascent_steps=ball.ascent_steps))


def power_law_c(beta, r):
    return r ** (beta - 2) / (2 * beta - 2)


def power_law_temperature(beta, d, r=1.0):
    """Closed-form threshold for U = |x|^beta / beta with K = 0, R = r, alpha = 2."""
    c = power_law_c(beta, r)
    return (2 ** (2 / d - 1) * r ** 2 * c + 2 * (2 ** (1 / d) * r) ** beta) / d


def power_law_temperature_ceiling(beta, d, r=1.0):
    return r ** beta / d * (1 + 2 ** (beta / d + 1))


@dataclass
class ContractionConstants:
    alpha: float
    T0: float
    M: float
    lam: float
    source: str
    T: Optional[float] = None
    provenance: dict = field(default_factory=dict)

    def bound(self, t, w0):
        """M e^(-lam t) w0."""
        return self.M * np.exp(-self.lam * np.asarray(t)) * w0

    def as_dict(self):
        return asdict(self)


def contraction_constants(K, c, R, d, T, alpha=2.0, T0=None) -> ContractionConstants:
    """M_alpha = (1 + alpha (2K + c) R*^2 / (4 d T))^(1/alpha), lambda = c/4."""
    if not T > 0:
        raise ValueError("temperature must be positive")
    if T0 is not None and T < T0:
        warnings.warn(f"T = {T} is below the threshold T0 = {T0}; constants are formal only",
                      stacklevel=2)
    Rs = r_star(K, c, R, d)
    M = (1.0 + alpha * (2 * K + c) * Rs ** 2 / (4.0 * d * T)) ** (1.0 / alpha)
    return ContractionConstants(alpha, float(T0 if T0 is not None else np.nan), M, c / 4.0,
                                "single-diffusion", T,
                                _prov("M_alpha,lambda", K=K, c=c, R=R, d=d, T=T, alpha=alpha))


def model_constants(model: DriftModel, T, alpha=2.0) -> ContractionConstants:
    K, R, c = _declared(model)
    thr = t0_threshold(model, alpha)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cc = contraction_constants(K, c, R, model.d, T, alpha, T0=thr.value)
    if T < thr.value:
        warnings.warn(f"T = {T} is below the threshold T0 = {thr.value}", stacklevel=2)
    cc.provenance["T0"] = thr.provenance
    return cc


# ---------------------------------------------------------------------------
# Poincare bounds

def poincare_from_contraction(M, lam, T, reversible=False):
    """C_P <= M^2 T / lambda, or T / lambda for gradient drifts."""
    if M < 1 or lam <= 0 or T <= 0:
        raise ValueError("need M >= 1, lambda > 0, T > 0")
    return T / lam if reversible else M * M * T / lam


@dataclass
class BetaBound:
    bound: float
    window: Optional[tuple]


def cp_beta_bound(beta, d) -> BetaBound:
    """Dimension-aware bound on C_P for mu proportional to exp(-|x|^beta / beta),
    together with the known two-sided window for radial measures (d >= 2)."""
    if beta <= 2:
        raise ValueError("beta must exceed 2")
    e = 1 - 2 / beta
    bound = 8 * (beta - 1) * (1 + 2 ** (beta / d + 1)) ** e / d ** e
    window = None
    if d >= 2:
        window = (d / ((d + 2) * d ** e), (d + 1) / ((d - 1) * d ** e))
    return BetaBound(bound, window)


def holley_stroock_bound(K, c, R, T):
    """Curvature plus bounded-perturbation estimate (reversible case)."""
    if c <= 0 or T <= 0:
        raise ValueError("need c > 0 and T > 0")
    return 2 * T / c * math.exp((2 * K + c) * R ** 2 * (1 + K / c) ** 2 / T)


def j_t(K, lam, M, t):
    """Entropy/W2 regularisation factor J(t): the smaller of the short-time
    bound K / (1 - e^(-2Kt)) and, once t >= ln(1 + K/lam) / (2K), the
    contraction-improved bound.  K = 0 uses the K -> 0 limits."""
    if t <= 0:
        raise ValueError("t must be positive")
    if lam <= 0 or M < 1 or K < 0:
        raise ValueError("need lambda > 0, M >= 1, K >= 0")
    if K == 0:
        first = 1.0 / (2.0 * t)
        switch = 1.0 / (2.0 * lam)
        second = M * M * lam * math.e * math.exp(-2 * lam * t)
    else:
        first = K / (-math.expm1(-2 * K * t))
        switch = math.log1p(K / lam) / (2 * K)
        second = M * M * (K + lam) * (1 + K / lam) ** (lam / K) * math.exp(-2 * lam * t)
    return min(first, second) if t >= switch else first


# ---------------------------------------------------------------------------
# interacting particles

def particle_r_star(C_F, a, c, R, d):
    return R * (2 + 2 * (C_F + a) / (c - a)) ** (1.0 / (2 * d))


def particle_constants(C_F, C_G, a, c, R, M_G, d, T, sup_value=None, F=None,
                       seed=0) -> ContractionConstants:
    """Contraction constants for the N-particle system with confinement F
    and bounded interaction; independent of N.  The supremum of -F(x).x over
    the ball of radius R* is either supplied or grid-searched from F."""
    if a >= c:
        raise ValueError(f"interaction monotonicity constant a={a} must be below c={c}")
    Rs = particle_r_star(C_F, a, c, R, d)
    Ks = C_F + (c + a) / 2
    if sup_value is None:
        if F is None:
            raise ValueError("provide sup_value or F")
        if Rs == 0:
            sup_value = 0.0
        else:
            sup_value = sup_over_ball(lambda p: -np.sum(F(p) * p, axis=-1), Rs, d, seed=seed).value
    T0 = Ks / (d * (c - a)) * (Rs ** 2 * (C_F + C_G) + 2 * sup_value + 4 * M_G * Rs)
    ratio = 2 * Ks * Rs ** 2 / (T * d)
    M = math.sqrt(1 + ratio)
    lam = (c - a) / (4 + 4 * ratio)
    return ContractionConstants(2.0, T0, M, lam, "particle-system", T,
                                _prov("particles", C_F=C_F, C_G=C_G, a=a, c=c, R=R, M_G=M_G,
                                      d=d, T=T, sup=sup_value, R_star=Rs, K_star=Ks))


# ---------------------------------------------------------------------------
# Bakry-Emery weight

@dataclass
class BakryEmeryReport:
    T: float
    lam: float
    min_margin: float           # min over grid of Phi(a) - lam a
    argmin: list
    kappa_sup: float
    Q_tilde: float
    T_tilde0: float
    M_squared: float            # sup a * sup 1/a on the grid
    passed: bool
    tol: float
    n_points: int


def verify_bakry_emery_weight(model: DriftModel, weight: WeightFunction, T, points,
                              tol=1e-8, fd_step=1e-5) -> BakryEmeryReport:
    """Evaluate Phi(a) - (c/4) a for a = T + 2 (sup kappa - kappa) on a point set.

    Phi(a) = L(a)/2 - Gamma(a)/a + a k~ with L = T Delta + b.grad and
    Gamma(a) = T |grad a|^2.  Pass iff the margin is >= -tol everywhere.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("empty grid")
    if T <= 0:
        raise ValueError("T must be positive")
    K, _, c = _declared(model)
    lam = c / 4.0
    kap = weight.kappa(pts)
    gk = weight.grad_kappa(pts)
    lk = weight.laplacian_kappa(pts)
    b = eval_drift(model, pts)
    kt = jacobian_k_tilde(model, pts, fd_step)
    a = T + 2 * (weight.kappa_sup - kap)
    La = -2 * T * lk - 2 * np.sum(b * gk, axis=1)
    Gam = 4 * T * np.sum(gk * gk, axis=1)
    phi = 0.5 * La - Gam / a + a * kt
    margin = phi - lam * a
    i = int(np.argmin(margin))
    Qt = K * weight.kappa_sup + float(np.max(np.sum(b * gk, axis=1) + 4 * np.sum(gk * gk, axis=1)))
    Tt0 = 6 * max(Qt / c, weight.kappa_sup)
    return BakryEmeryReport(T, lam, float(margin[i]), pts[i].tolist(), weight.kappa_sup, Qt, Tt0,
                            float(a.max() / a.min()), bool(margin[i] >= -tol), tol, pts.shape[0])
