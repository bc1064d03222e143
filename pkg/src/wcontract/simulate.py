"""Euler-Maruyama integration, synchronous couplings and particle systems.

Trajectory i always draws its increments from counter stream i, so every
output is a pure function of (config, seed) whatever the worker count or
block size.  Aggregations run in trajectory-index order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng
from .models import DriftModel, eval_drift

DIVERGENCE_LIMIT = 1e8
BLOCK = 1024


class DivergenceError(RuntimeError):
    """Raised when a trajectory leaves every reasonable bound."""

    def __init__(self, msg, step=None, state=None, stream=None):
        super().__init__(msg)
        self.step = step
        self.state = state
        self.stream = stream


@dataclass
class SimConfig:
    T: float
    dt: float = 1e-3
    t_max: float = 1.0
    n_traj: int = 1000
    seed: int = 0
    output_every: int = 1       # output stride in steps
    workers: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.dt > self.t_max:
            raise ValueError("dt must not exceed t_max")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.output_every < 1:
            raise ValueError("output_every must be a positive integer")

    @property
    def n_steps(self):
        return int(round(self.t_max / self.dt))

    @property
    def out_steps(self):
        s = np.arange(0, self.n_steps + 1, self.output_every)
        if s[-1] != self.n_steps:
            s = np.append(s, self.n_steps)
        return s

    @property
    def times(self):
        return self.out_steps * self.dt

    def as_dict(self):
        return asdict(self)


def default_dt(K):
    return 1e-3 * min(1.0, 1.0 / (1.0 + K))


# ---------------------------------------------------------------------------
# core integrator

def _check(x, step, streams):
    bad = ~np.isfinite(x).all(axis=1) | (np.abs(x).max(axis=1) > DIVERGENCE_LIMIT)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise DivergenceError(f"trajectory {int(streams[i])} diverged at step {step}: {x[i]}",
                              step, x[i].copy(), int(streams[i]))


def _run_block(drifts, states, streams, cfg: SimConfig, d, observe, tag=rng.TAG_INCREMENT):
    """Integrate one block of coupled chains sharing the noise of `streams`.

    drifts[k] advances states[k]; observe(step_index_in_output, states) is
    called at every output step and returns an array that is collected.
    """
    xs = [np.array(s, dtype=float, copy=True) for s in states]
    sq = math.sqrt(2.0 * cfg.T * cfg.dt)
    out_steps = cfg.out_steps
    rec = [observe(xs)]
    oi = 1
    for step in range(cfg.n_steps):
        xi = rng.normals(cfg.seed, streams, step, d, tag) if cfg.T > 0 else 0.0
        for k, f in enumerate(drifts):
            x = xs[k]
            xs[k] = x + f(x) * cfg.dt + sq * xi
        if (step + 1) % 64 == 0 or step + 1 == cfg.n_steps:
            for x in xs:
                _check(x, step + 1, streams)
        if oi < out_steps.size and step + 1 == out_steps[oi]:
            for x in xs:
                _check(x, step + 1, streams)
            rec.append(observe(xs))
            oi += 1
    return rec


def _blocks(n, block=BLOCK):
    return [np.arange(s, min(s + block, n), dtype=np.uint64) for s in range(0, n, block)]


def _map_blocks(fn, n, workers):
    blocks = _blocks(n)
    if workers and workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(fn, blocks))
    else:
        parts = [fn(b) for b in blocks]
    return parts


def _broadcast_init(x0, n, d, streams=None, seed=0):
    if callable(x0):
        return np.asarray(x0(streams, seed), dtype=float).reshape(len(streams), d)
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim <= 1:
        x0 = np.broadcast_to(x0.reshape(1, d), (n, d))
    if not np.all(np.isfinite(x0)):
        raise ValueError("initial state must be finite")
    return x0


def gaussian_init(mean, std):
    """Initial sampler drawing N(mean, std^2) from the counter generator."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))

    def sample(streams, seed):
        z = rng.normals(seed, streams, 0, mean.size, rng.TAG_INITIAL)
        return mean + std * z

    return sample


@dataclass
class Paths:
    times: np.ndarray
    states: np.ndarray          # (n_out, n_traj, d)
    config: SimConfig


def euler_maruyama(model: DriftModel, x0, cfg: SimConfig) -> Paths:
    """X_{k+1} = X_k + b(X_k) dt + sqrt(2 T dt) xi_k, recorded at output times."""
    d = model.d
    f = lambda x: eval_drift(model, x)

    def block(streams):
        init = _broadcast_init(x0, cfg.n_traj, d, streams, cfg.seed)
        if not callable(x0):
            init = init[streams.astype(np.int64)]
        return np.stack(_run_block([f], [init], streams, cfg, d, lambda xs: xs[0].copy()))

    parts = _map_blocks(block, cfg.n_traj, cfg.workers)
    return Paths(cfg.times, np.concatenate(parts, axis=1), cfg)


# ---------------------------------------------------------------------------
# synchronous coupling

def _mean_se(v):
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    m = v.mean(axis=0)
    se = v.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(m)
    return m, se


@dataclass
class CouplingStats:
    times: np.ndarray
    estimate: np.ndarray        # (E|X-Y|^alpha)^(1/alpha)
    stderr: np.ndarray
    ucl: np.ndarray             # (m + z se)^(1/alpha)
    alpha: float
    seed: int
    n_traj: int
    rho_mean: Optional[np.ndarray] = None
    rho_se: Optional[np.ndarray] = None
    mean_diff: Optional[np.ndarray] = None      # |E X - E Y|
    mean_diff_se: Optional[np.ndarray] = None
    z: float = 3.0
    extra: dict = field(default_factory=dict)


def _power_stats(dist_pow, alpha, z):
    m, se = _mean_se(dist_pow)
    est = m ** (1.0 / alpha)
    with np.errstate(divide="ignore", invalid="ignore"):
        sd = np.where(m > 0, se / (alpha * m ** (1 - 1.0 / alpha)), 0.0)
    ucl = np.maximum(m + z * se, 0.0) ** (1.0 / alpha)
    return est, sd, ucl


def coupled_run(drift_x: Callable, drift_y: Callable, x0, y0, cfg: SimConfig, d, observe):
    """Run two chains with shared noise and collect observe(x, y) per block.

    Returns a list, one entry per output time, of arrays concatenated over
    trajectories in index order.
    """
    def block(streams):
        idx = streams.astype(np.int64)
        xi = _broadcast_init(x0, cfg.n_traj, d, streams, cfg.seed)
        yi = _broadcast_init(y0, cfg.n_traj, d, streams, rng.derive_seed(cfg.seed, 1))
        if not callable(x0):
            xi = xi[idx]
        if not callable(y0):
            yi = yi[idx]
        return _run_block([drift_x, drift_y], [xi, yi], streams, cfg, d,
                          lambda xs: observe(xs[0], xs[1]))

    parts = _map_blocks(block, cfg.n_traj, cfg.workers)
    n_out = len(parts[0])
    return [np.concatenate([p[k] for p in parts], axis=0) for k in range(n_out)]


def synchronous_coupling(model: DriftModel, x0, y0, cfg: SimConfig, alpha=2.0, weight=None,
                         z=3.0, model_y: Optional[DriftModel] = None) -> CouplingStats:
    """Both chains see the same Gaussian increments; returns the decay curve
    of (E|X_t - Y_t|^alpha)^(1/alpha) and, when a weight is given, the mean of
    rho = |x - y|^alpha (2T + alpha kappa(x) + alpha kappa(y))."""
    d = model.d
    my = model_y or model
    fx = lambda x: eval_drift(model, x)
    fy = lambda x: eval_drift(my, x)

    def observe(x, y):
        diff = x - y
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        cols = [dist ** alpha, x, y]
        if weight is not None:
            rho = dist ** alpha * (2 * cfg.T + alpha * weight.kappa(x) + alpha * weight.kappa(y))
            cols.append(rho[:, None])
        return np.column_stack([cols[0][:, None]] + cols[1:])

    rec = coupled_run(fx, fy, x0, y0, cfg, d, observe)
    rec = np.stack(rec)                         # (n_out, n_traj, cols)
    est, se, ucl = _power_stats(rec[:, :, 0].T, alpha, z)
    mx = rec[:, :, 1:1 + d] - rec[:, :, 1 + d:1 + 2 * d]
    mdiff = mx.mean(axis=1)
    mdiff_se = mx.std(axis=1, ddof=1) / math.sqrt(cfg.n_traj)
    stats = CouplingStats(cfg.times, est, se, ucl, alpha, cfg.seed, cfg.n_traj,
                          mean_diff=np.linalg.norm(mdiff, axis=1),
                          mean_diff_se=np.linalg.norm(mdiff_se, axis=1), z=z)
    if weight is not None:
        m, s = _mean_se(rec[:, :, -1].T)
        stats.rho_mean, stats.rho_se = m, s
        stats.extra["rho_samples"] = rec[:, :, -1]
    stats.extra["x"] = rec[:, :, 1:1 + d]
    stats.extra["y"] = rec[:, :, 1 + d:1 + 2 * d]
    return stats


@dataclass
class SubmartingaleReport:
    times: np.ndarray
    values: np.ndarray          # E[e^(alpha lam t) rho_t]
    stderr: np.ndarray
    increments: np.ndarray      # mean of per-trajectory increments
    increment_se: np.ndarray
    passed: bool
    worst_step: int
    informational: bool = False


def submartingale_check(model: DriftModel, weight, cfg: SimConfig, x0, y0, alpha=2.0, lam=None,
                        T0=None, n_se=2.0) -> SubmartingaleReport:
    """Check that E[e^(alpha lam t) rho(X_t, Y_t)] is non-increasing in t.

    Consecutive output times are compared through per-trajectory increments;
    the check fails at a step where the mean increment exceeds n_se
    standard errors.
    """
    if lam is None:
        lam = model.declared.c / 4.0
    stats = synchronous_coupling(model, x0, y0, cfg, alpha, weight=weight)
    rho = stats.extra["rho_samples"]            # (n_out, n_traj)
    scaled = np.exp(alpha * lam * cfg.times)[:, None] * rho
    vals, se = _mean_se(scaled.T)
    inc = np.diff(scaled, axis=0)               # (n_out-1, n_traj)
    im, ise = _mean_se(inc.T)
    slack = im - n_se * ise
    worst = int(np.argmax(slack))
    passed = bool(np.all(slack <= 0))
    return SubmartingaleReport(cfg.times, vals, se, im, ise, passed, worst,
                               informational=T0 is not None and cfg.T < T0)


# ---------------------------------------------------------------------------
# perturbation

def drift_gap(model, model_tilde, radius, n=20001, margin=1.05):
    """Grid sup of |b - b~| over a cube of half-width radius, inflated by margin."""
    d = model.d
    if d == 1:
        pts = np.linspace(-radius, radius, n)[:, None]
    else:
        m = max(int(round(n ** (1.0 / d))), 3)
        axes = [np.linspace(-radius, radius, m)] * d
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, d)
    gap = np.linalg.norm(eval_drift(model, pts) - eval_drift(model_tilde, pts), axis=1)
    return float(gap.max() * margin)


@dataclass
class PerturbationReport:
    times: np.ndarray
    w_estimate: np.ndarray      # exact 1D (or assignment) W_alpha between marginal clouds
    coupling_ucl: np.ndarray    # UCL of (E|X-X~|^alpha)^(1/alpha), an upper bound on W_alpha
    bound: np.ndarray
    gap: float
    passed: bool


def perturbation_bound(M, lam, alpha, gap, t, w0=0.0):
    """M e^(-lam t) w0 + M^alpha (1 - e^(-lam t)) / lam * gap."""
    t = np.asarray(t, dtype=float)
    return M * np.exp(-lam * t) * w0 + M ** alpha * (-np.expm1(-lam * t)) / lam * gap


def perturbed_coupling(model, model_tilde, cfg: SimConfig, x0, M, lam, alpha=2.0, gap=None,
                       gap_radius=20.0) -> PerturbationReport:
    """Run b and b~ from the same initial points with shared noise and compare
    the marginal distance to the perturbation bound (w0 = 0)."""
    from .transport import wasserstein
    if gap is None:
        gap = drift_gap(model, model_tilde, gap_radius)
    stats = synchronous_coupling(model, x0, x0, cfg, alpha, model_y=model_tilde)
    xs, ys = stats.extra["x"], stats.extra["y"]
    w = np.array([wasserstein(xs[k], ys[k], alpha).cost for k in range(xs.shape[0])])
    bound = perturbation_bound(M, lam, alpha, gap, cfg.times)
    passed = bool(np.all(stats.ucl <= bound + 1e-12))
    return PerturbationReport(cfg.times, w, stats.ucl, bound, gap, passed)


# ---------------------------------------------------------------------------
# particle systems

@dataclass
class ParticlePaths:
    times: np.ndarray
    states: np.ndarray          # (n_out, n_rep, N, d)
    config: SimConfig


def mean_field_interaction(H, x):
    """(1/N) sum_j H(x_i, x_j) for a batch x of shape (n_rep, N, d)."""
    xi = x[:, :, None, :]
    xj = x[:, None, :, :]
    return H(np.broadcast_to(xi, xj.shape[:1] + (x.shape[1],) * 2 + x.shape[2:]),
             np.broadcast_to(xj, xj.shape[:1] + (x.shape[1],) * 2 + x.shape[2:])).mean(axis=2)


def graph_interaction(H, x, neighbors):
    """(1/D) sum_{j ~ i} H(x_i, x_j) with neighbors an (N, D) index array."""
    xj = x[:, neighbors, :]                      # (n_rep, N, D, d)
    xi = np.broadcast_to(x[:, :, None, :], xj.shape)
    return H(xi, xj).mean(axis=2)


def particle_system(F: Callable, H: Optional[Callable], N: int, cfg: SimConfig, x0, d=1,
                    n_rep=1, neighbors=None, streams=None, interaction=None) -> ParticlePaths:
    """Euler-Maruyama for dX_i = F(X_i) dt + G_i(X) dt + sqrt(2T) dB_i.

    G_i is the mean-field average (1/N) sum_j H(x_i, x_j) unless a neighbour
    table is given.  Particle i of repetition r uses noise stream
    streams[i] + r N (default streams[i] = i).  The integration runs in
    increasing stream order, so permuting particles together with their
    streams permutes the output exactly.  `interaction`, when given, replaces
    the generic pairwise evaluation with a callable x -> G(x).
    """
    if streams is None:
        streams = np.arange(N)
    streams = np.asarray(streams, dtype=np.int64)
    if np.unique(streams).size != N:
        raise ValueError("particle streams must be distinct")
    order = np.argsort(streams, kind="stable")
    inv = np.argsort(order)
    s_sorted = streams[order]
    all_streams = (s_sorted[None, :] + N * np.arange(n_rep)[:, None]).ravel().astype(np.uint64)

    if callable(x0):
        x = np.asarray(x0(all_streams, cfg.seed), dtype=float).reshape(n_rep, N, d)
    else:
        # array in the caller's particle order, broadcastable to (n_rep, N, d)
        x = np.broadcast_to(np.asarray(x0, dtype=float), (n_rep, N, d))[:, order].copy()
    nb = None if neighbors is None else np.argsort(order)[np.asarray(neighbors)[order]]

    def G(x):
        if interaction is not None:
            return interaction(x)
        if H is None:
            return 0.0
        if nb is not None:
            return graph_interaction(H, x, nb)
        return mean_field_interaction(H, x)

    sq = math.sqrt(2.0 * cfg.T * cfg.dt)
    out_steps = cfg.out_steps
    rec = [x.copy()]
    oi = 1
    for step in range(cfg.n_steps):
        xi = rng.normals(cfg.seed, all_streams, step, d).reshape(n_rep, N, d)
        x = x + (F(x) + G(x)) * cfg.dt + sq * xi
        if (step + 1) % 64 == 0 or step + 1 == cfg.n_steps:
            _check(x.reshape(-1, d), step + 1, all_streams)
        if oi < out_steps.size and step + 1 == out_steps[oi]:
            rec.append(x.copy())
            oi += 1
    states = np.stack(rec)[:, :, inv, :]
    return ParticlePaths(cfg.times, states, cfg)


# ---------------------------------------------------------------------------
# moments

@dataclass
class MomentSeries:
    times: np.ndarray
    orders: tuple
    mean: np.ndarray            # (n_out, n_orders)
    stderr: np.ndarray

    def check_dissipation(self, rate, ceiling, z=3.0):
        """E|Y_t|^2 <= e^(-rate t) E|Y_0|^2 + ceiling, tested at m - z se."""
        k = self.orders.index(2)
        m, se = self.mean[:, k], self.stderr[:, k]
        bound = np.exp(-rate * self.times) * m[0] + ceiling
        return bool(np.all(m - z * se <= bound)), bound


def moment_tracker(times, states, orders=(2, 5)) -> MomentSeries:
    """Per-time empirical moments E|X|^p with standard errors.

    states has shape (n_out, n_samples, d) (or (n_out, n_rep, N, d), pooled).
    """
    s = np.asarray(states, dtype=float)
    s = s.reshape(s.shape[0], -1, s.shape[-1])
    r = np.sqrt(np.sum(s * s, axis=-1))
    means, ses = [], []
    for p in orders:
        m, se = _mean_se((r ** p).T)
        means.append(m)
        ses.append(se)
    return MomentSeries(np.asarray(times), tuple(orders), np.column_stack(means), np.column_stack(ses))
