"""Drift fields, their declared contractivity parameters, and numerical
estimates of the contractivity profiles k(x) and k~(x).

A drift is always evaluated on batches: ``model.drift(x)`` takes an array of
shape (n, d) and returns (n, d).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


class DimensionError(ValueError):
    pass


class MissingParameters(ValueError):
    pass


@dataclass(frozen=True)
class Declared:
    """Convexity-at-infinity parameters: k >= -K everywhere, k >= c for |x| >= R."""

    K: float
    R: float
    c: float

    def __post_init__(self):
        if self.K < 0 or self.R < 0:
            raise ValueError("K and R must be non-negative")
        if self.c <= 0:
            raise ValueError("c must be positive")


@dataclass(frozen=True)
class DriftModel:
    name: str
    d: int
    drift: Callable[[Array], Array]
    declared: Optional[Declared] = None
    potential: Optional[Callable[[Array], Array]] = None
    density: Optional[Callable[[Array, float], Array]] = None
    params: dict = field(default_factory=dict)

    @property
    def is_gradient(self) -> bool:
        return self.potential is not None

    def __call__(self, x):
        return self.drift(np.asarray(x, dtype=float))

    def with_declared(self, K, R, c):
        return replace(self, declared=Declared(float(K), float(R), float(c)))


def _as_batch(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != model.d:
        raise DimensionError(f"expected points of dimension {model.d}, got {x.shape[-1]}")
    return x, single


def eval_drift(model: DriftModel, x) -> Array:
    """b(x) for a single point or a batch of points."""
    xb, single = _as_batch(model, x)
    out = np.asarray(model.drift(xb), dtype=float)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# model zoo

def ou(d=1, A=None):
    """Ornstein-Uhlenbeck b(x) = -A x (A = identity by default)."""
    if A is None:
        def drift(x):
            return -x

        def potential(x):
            return 0.5 * np.sum(x * x, axis=-1)

        def density(x, T):
            return np.exp(-0.5 * np.sum(x * x, axis=-1) / T) / (2 * np.pi * T) ** (d / 2)

        return DriftModel("ou", d, drift, Declared(0.0, 0.0, 1.0), potential, density,
                          params={"d": d})
    A = np.asarray(A, dtype=float)
    sym = np.allclose(A, A.T)
    lam_min = float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())

    def drift_a(x):
        return -x @ A.T

    pot = (lambda x: 0.5 * np.einsum("ni,ij,nj->n", x, A, x)) if sym else None
    decl = Declared(0.0, 0.0, lam_min) if lam_min > 0 else None
    return DriftModel("linear", A.shape[0], drift_a, decl, pot, params={"A": A.tolist()})


def power_law(beta=4.0, d=1, r=1.0):
    """Gradient of U(x) = |x|^beta / beta, with the declared parameters
    K = 0, R = r, c = r^(beta-2) / (2 beta - 2)."""
    beta = float(beta)
    if beta <= 2:
        raise ValueError("beta must exceed 2")

    def drift(x):
        nrm = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
        return -x * nrm ** (beta - 2)

    def potential(x):
        return np.sum(x * x, axis=-1) ** (beta / 2) / beta

    c = r ** (beta - 2) / (2 * beta - 2)
    return DriftModel("power_law", d, drift, Declared(0.0, float(r), c), potential,
                      params={"beta": beta, "d": d, "r": r})


def double_well(d=1, K=1.0, c=1.0):
    """b(x) = x - |x|^2 x.  k(x) = 3|x|^2/4 - 1 in 1D, so K = 1 and
    R = sqrt(4 (1 + c) / 3) is the smallest admissible radius for a given c."""
    R = float(np.sqrt(4 * (1 + c) / 3))

    def drift(x):
        return x - np.sum(x * x, axis=-1, keepdims=True) * x

    def potential(x):
        s = np.sum(x * x, axis=-1)
        return s * s / 4 - s / 2

    return DriftModel("double_well", d, drift, Declared(float(K), R, float(c)), potential,
                      params={"d": d, "K": K, "c": c})


def skew_gradient(J=None, potential_model=None):
    """b = -(I + J) grad U for a skew-symmetric J; exp(-U/T) stays invariant."""
    base = potential_model if potential_model is not None else ou(2)
    d = base.d
    J = np.array([[0.0, 1.0], [-1.0, 0.0]]) if J is None else np.asarray(J, dtype=float)
    if not np.allclose(J, -J.T):
        raise ValueError("J must be skew-symmetric")
    if J.shape != (d, d):
        raise DimensionError("J shape does not match the potential dimension")
    Mt = (np.eye(d) + J).T

    def drift(x):
        # base drift is -grad U
        return base.drift(x) @ Mt

    def density(x, T):
        if base.density is None:
            raise NotImplementedError
        return base.density(x, T)

    return DriftModel("skew_gradient", d, drift, base.declared, None,
                      density if base.density is not None else None,
                      params={"J": J.tolist(), "base": base.name})


def perturbed(base: DriftModel, eps=0.5, phi=None, name=None):
    """b + eps * phi with |phi| <= 1 (default phi = tanh, componentwise)."""
    phi = np.tanh if phi is None else phi

    def drift(x):
        return base.drift(x) + eps * phi(x)

    return DriftModel(name or f"{base.name}+perturbation", base.d, drift, None, None,
                      params={"base": base.name, "eps": eps})


def exp_tail(d=1):
    """U(x) = sqrt(1 + |x|^2): Poincare holds but no Wasserstein contraction."""

    def drift(x):
        return -x / np.sqrt(1 + np.sum(x * x, axis=-1, keepdims=True))

    def potential(x):
        return np.sqrt(1 + np.sum(x * x, axis=-1))

    return DriftModel("exp_tail", d, drift, None, potential, params={"d": d})


ZOO = {
    "ou": ou,
    "power_law": power_law,
    "double_well": double_well,
    "skew_gradient": lambda **kw: skew_gradient(**kw),
    "exp_tail": exp_tail,
}


def build_model(model_id: str, params: Optional[dict] = None, declared: Optional[dict] = None):
    """Zoo lookup by string identifier, as used by the CLI configs."""
    params = dict(params or {})
    if model_id == "linear":
        model = ou(A=params.pop("A"))
    elif model_id == "perturbed":
        base = build_model(params.pop("base"), params.pop("base_params", None))
        kind = params.pop("phi", "tanh")
        phis = {"tanh": np.tanh, "sin": np.sin}
        if kind not in phis:
            raise ValueError(f"unknown perturbation {kind!r}")
        model = perturbed(base, params.pop("eps", 0.5), phis[kind])
    elif model_id in ZOO:
        model = ZOO[model_id](**params)
        params = {}
    else:
        raise ValueError(f"unknown model id {model_id!r}; known: {sorted(ZOO) + ['linear', 'perturbed']}")
    if params:
        raise TypeError(f"unused model parameters: {sorted(params)}")
    if declared:
        missing = [k for k in ("K", "R", "c") if k not in declared]
        extra = sorted(set(declared) - {"K", "R", "c"})
        if missing:
            raise MissingParameters(f"declared parameters missing: {', '.join(missing)}")
        if extra:
            raise TypeError(f"unknown declared parameters: {extra}")
        model = model.with_declared(declared["K"], declared["R"], declared["c"])
    return model


# ---------------------------------------------------------------------------
# contractivity estimates

@dataclass
class KEstimate:
    value: float
    n_probes: int
    unbounded: bool = False


def monotonicity_quotients(model, x, ys):
    """(x - y).(b(x) - b(y)) / |x - y|^2 for each probe y."""
    x = np.asarray(x, dtype=float)
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    diff = x[None, :] - ys
    n2 = np.sum(diff * diff, axis=1)
    keep = n2 > 0
    if not np.any(keep):
        raise ValueError("probe set is empty once x itself is removed")
    diff, n2, ys = diff[keep], n2[keep], ys[keep]
    bx = eval_drift(model, x)
    by = eval_drift(model, ys)
    return np.sum(diff * (bx[None, :] - by), axis=1) / n2


def default_probes(x, d, fd_step=1e-5, radii=None, n_dirs=16, seed=0):
    """Stratified radial probes around x plus near-x perturbations.

    The supremum defining k is frequently approached as y -> x, hence the
    small-radius shell.
    """
    x = np.asarray(x, dtype=float)
    if radii is None:
        radii = np.logspace(-3, 1.5, 40)
    rng = np.random.default_rng(seed)
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        dirs = rng.standard_normal((n_dirs, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        dirs = np.vstack([dirs, np.eye(d), -np.eye(d)])
    step = fd_step * (np.linalg.norm(x) + 1)
    shells = [x + r * dirs for r in radii]
    around_origin = [r * dirs for r in radii]
    return np.vstack(shells + around_origin + [x + step * dirs])


def estimate_k(model: DriftModel, x, probes=None, ceiling=1e12) -> KEstimate:
    """Upper estimate of k(x) = -sup_y quotient, from a finite probe set.

    Since only finitely many y are tried, the returned value is >= k(x) and
    can only decrease as probes are added.  Quotients above ``ceiling`` mark
    the estimate as unbounded below (drift not one-sided Lipschitz there).
    """
    x, _ = _as_batch(model, x)
    x = x[0]
    if probes is None:
        probes = default_probes(x, model.d)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[0] == 0:
        raise ValueError("empty probe set")
    q = monotonicity_quotients(model, x, probes)
    top = float(np.max(q))
    if not np.isfinite(top) or top > ceiling:
        return KEstimate(-np.inf, q.size, unbounded=True)
    return KEstimate(-top, q.size)


def jacobian(model: DriftModel, x, fd_step=1e-5) -> Array:
    """Central-difference Jacobian(s); x may be a batch (n, d) -> (n, d, d)."""
    xb, single = _as_batch(model, x)
    n, d = xb.shape
    h = fd_step * (np.linalg.norm(xb, axis=1) + 1.0)
    jac = np.empty((n, d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        plus = model.drift(xb + h[:, None] * e)
        minus = model.drift(xb - h[:, None] * e)
        jac[:, :, j] = (plus - minus) / (2 * h[:, None])
    return jac[0] if single else jac


def jacobian_k_tilde(model: DriftModel, x, fd_step=1e-5):
    """k~(x) = -lambda_max(sym grad b(x)); vectorised over a batch of points."""
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    jac = jacobian(model, x, fd_step)
    sym = 0.5 * (jac + np.swapaxes(jac, -1, -2))
    top = np.linalg.eigvalsh(sym)[..., -1]
    return -top if np.ndim(top) else -float(top)


@dataclass
class ContractivityProfile:
    radii: Array
    k_min: Array            # per radius, min of the probed k estimates on that sphere
    K_hat: float            # -min over every probed point
    n_points: Array         # points per radius
    n_probes: int           # probes per point
    tol: float
    passed: Optional[bool] = None
    violations: list = field(default_factory=list)


def _sphere_points(d, radius, n_dirs, rng):
    if d == 1:
        return np.array([[radius], [-radius]])
    dirs = rng.standard_normal((n_dirs, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return radius * dirs


def verify_assumption1(model: DriftModel, radii=None, n_dirs=24, tol=1e-6, seed=0,
                       probe_radii=None) -> ContractivityProfile:
    """Probe k on spheres and compare against the declared (K, R, c).

    A failure is conclusive (estimates over-estimate k); a pass only means no
    violation was found on the probe set.
    """
    if model.declared is None:
        raise MissingParameters(f"model {model.name!r} declares no (K, R, c)")
    K, R, c = model.declared.K, model.declared.R, model.declared.c
    if radii is None:
        top = max(3.0 * R, 3.0)
        radii = np.unique(np.concatenate([[0.0], np.linspace(0, top, 31)[1:], [R]]))
    radii = np.asarray(radii, dtype=float)
    rng = np.random.default_rng(seed)
    k_min = np.empty(radii.size)
    n_pts = np.empty(radii.size, dtype=int)
    violations = []
    n_probes = 0
    for i, r in enumerate(radii):
        pts = _sphere_points(model.d, r, n_dirs, rng) if r > 0 else np.zeros((1, model.d))
        vals = []
        for x in pts:
            est = estimate_k(model, x, default_probes(x, model.d, radii=probe_radii))
            n_probes = est.n_probes
            vals.append(est.value)
            if est.value < -K - tol:
                violations.append(("global lower bound -K", x.tolist(), est.value))
            elif np.linalg.norm(x) >= R and est.value < c - tol:
                violations.append(("outer bound c", x.tolist(), est.value))
        k_min[i] = min(vals)
        n_pts[i] = len(pts)
    return ContractivityProfile(radii, k_min, float(-k_min.min()), n_pts, n_probes, tol,
                                passed=not violations, violations=violations)
