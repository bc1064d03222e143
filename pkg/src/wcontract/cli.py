"""Command-line experiment runner.

Every subcommand builds one experiment record with the same schema as an
entry of a TOML configuration, so `wcontract run manifest.json` replays any
earlier run bit for bit.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import shutil
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from . import constants as C
from . import meanfield as MF
from . import models as Mo
from . import simulate as S
from . import spectral as G
from . import transport as Tr
from .report import Table, atomic_dir, to_jsonable, write_json, write_outputs

try:
    import tomllib
except ModuleNotFoundError:         # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# experiment schemas (strict: unknown keys are errors)

@dataclass
class ModelCfg:
    id: str = "ou"
    params: dict = field(default_factory=dict)
    declared: Optional[dict] = None

    def __post_init__(self):
        if self.declared is not None:
            missing = [k for k in ("K", "R", "c") if k not in self.declared]
            if missing:
                raise ConfigError(f"model {self.id!r}: declared table lacks {', '.join(missing)}")


@dataclass
class ConstantsCfg:
    model: ModelCfg = field(default_factory=ModelCfg)
    T: Optional[float] = None           # default: 2 T0
    alpha: float = 2.0


@dataclass
class CoupleCfg:
    model: ModelCfg = field(default_factory=ModelCfg)
    T: Optional[float] = None
    temperature_factor: float = 2.0
    dt: Optional[float] = None
    t_max: Optional[float] = None
    n_traj: int = 2000
    output_every: int = 100
    x0: list = field(default_factory=lambda: [0.0])
    y0: list = field(default_factory=lambda: [2.0])
    alpha: float = 2.0
    submartingale: bool = False


@dataclass
class PerturbCfg:
    model: ModelCfg = field(default_factory=lambda: ModelCfg("power_law", {"beta": 4, "d": 1}))
    eps: float = 0.5
    T: Optional[float] = None
    temperature_factor: float = 1.0
    dt: float = 2e-3
    t_max: float = 5.0
    n_traj: int = 2000
    output_every: int = 250
    x0: list = field(default_factory=lambda: [0.0])
    grid_a: float = 10.0
    grid_n: int = 4001


@dataclass
class ParticlesCfg:
    interaction: str = "tanh"           # tanh | linear | none
    strength: float = 0.1
    N: int = 64
    n_rep: int = 10
    T: Optional[float] = None
    dt: float = 1e-2
    t_max: float = 2.0
    output_every: int = 20
    x0_mean: float = 1.0
    x0_std: float = 1.0


@dataclass
class PoincareCfg:
    model: ModelCfg = field(default_factory=ModelCfg)
    T: float = 1.0
    a: float = 8.0
    n: int = 2001


@dataclass
class TransportCfg:
    x_file: str = ""
    y_file: str = ""
    alpha: float = 2.0
    method: Optional[str] = None
    eps: float = 0.05
    n_boot: int = 0


@dataclass
class ChaosCfg:
    strength: float = 0.1
    N: list = field(default_factory=lambda: [8, 16, 32, 64])
    t: float = 2.0
    n_reps: int = 50
    dt: float = 1e-2
    T: Optional[float] = None
    x0_mean: float = 1.0
    x0_std: float = 1.0


@dataclass
class MeanfieldCfg:
    interaction: str = "linear"         # linear | tanh
    strength: float = 1.0
    T: Optional[float] = None
    grid_a: float = 8.0
    grid_n: int = 801
    dt: float = 1e-2
    times: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0])
    tol: float = 1e-7


@dataclass
class EntropyCfg:
    model: ModelCfg = field(default_factory=ModelCfg)
    T: float = 1.0
    init_mean: float = 2.0
    init_std: float = 1.0
    times: list = field(default_factory=lambda: [0.1, 0.5, 1.0, 2.0])
    a: float = 12.0
    n: int = 2401
    dt: float = 1e-3


@dataclass
class GradientCfg:
    model: ModelCfg = field(default_factory=lambda: ModelCfg("power_law", {"beta": 4, "d": 1}))
    T: Optional[float] = None
    temperature_factor: float = 2.0
    times: list = field(default_factory=lambda: [0.0, 0.25, 0.5, 1.0, 2.0])
    a: float = 10.0
    n: int = 1001
    dt: float = 1e-3


@dataclass
class ValidateCfg:
    model: Optional[ModelCfg] = None
    meanfield: Optional[dict] = None


SCHEMAS = {
    "constants": ConstantsCfg, "couple": CoupleCfg, "perturb": PerturbCfg,
    "particles": ParticlesCfg, "poincare": PoincareCfg, "transport": TransportCfg,
    "chaos": ChaosCfg, "meanfield": MeanfieldCfg, "entropy": EntropyCfg,
    "gradient": GradientCfg, "validate": ValidateCfg,
}


def _build(cls, data, where):
    if data is None:
        return None
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a table")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kw = {}
    for k, v in data.items():
        if k == "model" and v is not None:
            v = _build(ModelCfg, v, f"{where}.model")
        kw[k] = v
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_experiment(entry, index=0):
    if "kind" not in entry:
        raise ConfigError(f"experiment[{index}]: missing 'kind'")
    kind = entry["kind"]
    if kind not in SCHEMAS:
        raise ConfigError(f"experiment[{index}]: unknown kind {kind!r}")
    body = {k: v for k, v in entry.items() if k not in ("kind", "id")}
    cfg = _build(SCHEMAS[kind], body, f"experiment[{index}] ({kind})")
    return entry.get("id", f"{kind}-{index}"), kind, cfg


TOP_KEYS = {"seed", "workers", "format", "figures", "experiment"}


def load_config(path):
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
        data = data.get("config", data)
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown top-level key(s) {', '.join(unknown)}")
    exps = data.get("experiment", [])
    if isinstance(exps, dict):
        exps = [exps]
    parsed = [parse_experiment(e, i) for i, e in enumerate(exps)]
    ids = [p[0] for p in parsed]
    if len(set(ids)) != len(ids):
        raise ConfigError("experiment ids must be unique")
    return data, parsed


def materialize(exp_id, kind, cfg):
    d = {"id": exp_id, "kind": kind}
    d.update(to_jsonable(dataclasses.asdict(cfg)))
    return d


# ---------------------------------------------------------------------------
# experiment runners; each returns (tables, checks, provenance)

def _model(mc: ModelCfg):
    return Mo.build_model(mc.id, mc.params, mc.declared)


def _temperature(model, T, factor):
    thr = C.t0_threshold(model)
    if T is None:
        # globally contractive drifts have T0 = 0; any T > 0 works
        T = factor * thr.value if thr.value > 0 else 1.0
    return T, thr


def run_constants(cfg: ConstantsCfg, ctx):
    model = _model(cfg.model)
    K, R, c = model.declared.K, model.declared.R, model.declared.c
    thr = C.t0_threshold(model, cfg.alpha)
    T, _ = _temperature(model, cfg.T, 2.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cc = C.contraction_constants(K, c, R, model.d, T, cfg.alpha, thr.value)
    rows = [
        ["K", K], ["R", R], ["c", c], ["d", model.d], ["alpha", cfg.alpha], ["T", T],
        ["R_star", C.r_star(K, c, R, model.d)], ["T0", thr.value], ["T0_safe", thr.safe_value],
        ["sup_neg_x_dot_b", thr.sup], ["M_alpha", cc.M], ["lambda", cc.lam],
        ["C_P_bound", C.poincare_from_contraction(cc.M, cc.lam, T, model.is_gradient)],
        ["holley_stroock", C.holley_stroock_bound(K, c, R, T)],
    ]
    if model.name == "power_law":
        b = C.cp_beta_bound(model.params["beta"], model.d)
        rows.append(["cp_beta_bound", b.bound])
        if b.window:
            rows += [["cp_window_low", b.window[0]], ["cp_window_high", b.window[1]]]
    if R > 0:
        w = C.build_weight(K, c, R, model.d)
        rows += [["kappa_sup", w.kappa_sup], ["kappa_bound", w.kappa_bound]]
    checks = [("T_at_least_T0", T >= thr.value, T, thr.value)]
    return [Table("constants", ["name", "value"], rows)], checks, {"T0": thr.provenance,
                                                                      "M": cc.provenance}


def run_couple(cfg: CoupleCfg, ctx):
    model = _model(cfg.model)
    T, thr = _temperature(model, cfg.T, cfg.temperature_factor)
    K, R, c = model.declared.K, model.declared.R, model.declared.c
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cc = C.contraction_constants(K, c, R, model.d, T, cfg.alpha, thr.value)
    dt = cfg.dt or S.default_dt(K)
    t_max = cfg.t_max or math.log(100) / cc.lam
    sim = S.SimConfig(T, dt, t_max, cfg.n_traj, ctx["seed"], cfg.output_every, ctx["workers"])
    x0, y0 = np.asarray(cfg.x0, float), np.asarray(cfg.y0, float)
    w0 = float(np.linalg.norm(x0 - y0))
    st = S.synchronous_coupling(model, x0, y0, sim, cfg.alpha)
    bound = cc.bound(st.times, w0)
    rows = [[t, e, s, u, b] for t, e, s, u, b in zip(st.times, st.estimate, st.stderr, st.ucl, bound)]
    tables = [Table("coupling", ["time", "estimate", "stderr", "ucl", "bound"], rows,
                    plot={"x": "time", "y": ["estimate", "ucl", "bound"], "logy": True})]
    checks = [("contraction_bound", bool(np.all(st.ucl <= bound)), float(np.max(st.ucl - bound)), 0.0)]
    if cfg.submartingale and R > 0:
        w = C.build_weight(K, c, R, model.d)
        rep = S.submartingale_check(model, w, sim, x0, y0, cfg.alpha, cc.lam, thr.value)
        tables.append(Table("submartingale", ["time", "value", "stderr"],
                            [[t, v, s] for t, v, s in zip(rep.times, rep.values, rep.stderr)],
                            plot={"x": "time", "y": ["value"]}))
        checks.append(("submartingale", rep.passed, float(np.max(rep.increments)), 0.0))
    return tables, checks, {"constants": cc.provenance, "T0": thr.provenance}


def run_perturb(cfg: PerturbCfg, ctx):
    model = _model(cfg.model)
    T, thr = _temperature(model, cfg.T, cfg.temperature_factor)
    K, R, c = model.declared.K, model.declared.R, model.declared.c
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cc = C.contraction_constants(K, c, R, model.d, T, 2.0, thr.value)
    tilde = Mo.perturbed(model, cfg.eps)
    gap = cfg.eps * 1.0
    sim = S.SimConfig(T, cfg.dt, cfg.t_max, cfg.n_traj, ctx["seed"], cfg.output_every, ctx["workers"])
    rep = S.perturbed_coupling(model, tilde, sim, np.asarray(cfg.x0, float), cc.M, cc.lam, 2.0, gap)
    rows = [[t, w, u, b] for t, w, u, b in zip(rep.times, rep.w_estimate, rep.coupling_ucl, rep.bound)]
    tables = [Table("perturbation", ["time", "w2_marginal", "coupling_ucl", "bound"], rows,
                    plot={"x": "time", "y": ["w2_marginal", "coupling_ucl", "bound"]})]
    checks = [("perturbation_curve", rep.passed, float(np.max(rep.coupling_ucl - rep.bound)), 0.0)]
    if model.d == 1:
        stat = stationary_perturbation(model, tilde, T, cfg.grid_a, cfg.grid_n)
        bound = cc.M ** 2 * gap / cc.lam
        tables.append(Table("stationary", ["w2_grid", "bound"], [[stat, bound]]))
        checks.append(("stationary_bound", stat < bound, stat, bound))
    return tables, checks, {"constants": cc.provenance}


def stationary_perturbation(model, tilde, T, a, n):
    """Exact grid W2 between the two 1D stationary densities."""
    grid = G.Grid.make(1, a, n)
    mu = G.build_operator(model, T, grid).mu
    mu_t = G.build_operator(tilde, T, grid).mu
    return Tr.grid_quantile_w(grid.axes[0], mu, mu_t)


def _mf_spec(kind, strength, T):
    if kind == "tanh":
        return MF.tanh_spec(strength, T)
    if kind == "linear":
        return MF.linear_spec(strength, T if T is not None else 1.0)
    if kind == "none":
        return MF.tanh_spec(0.0, T)
    raise ConfigError(f"unknown interaction {kind!r}")


def run_particles(cfg: ParticlesCfg, ctx):
    spec = _mf_spec(cfg.interaction, cfg.strength, cfg.T)
    sim = S.SimConfig(spec.T, cfg.dt, cfg.t_max, 1, ctx["seed"], cfg.output_every)
    x0 = S.gaussian_init([cfg.x0_mean], cfg.x0_std)
    pm = spec.pair_mean
    inter = (lambda x: pm(x[..., 0])[..., None]) if pm is not None else None
    paths = S.particle_system(spec.F, spec.H, cfg.N, sim, x0, 1, cfg.n_rep, interaction=inter)
    mom = S.moment_tracker(paths.times, paths.states)
    ca = spec.c - spec.a
    ok, bound = mom.check_dissipation(ca, MF.moment_constant(spec) / ca)
    rows = [[t, m2, s2, m5, s5, b] for t, (m2, m5), (s2, s5), b in
            zip(paths.times, mom.mean, mom.stderr, bound)]
    cc = MF.chaos_particle_constants(spec)
    tables = [Table("moments", ["time", "m2", "m2_se", "m5", "m5_se", "m2_bound"], rows,
                    plot={"x": "time", "y": ["m2", "m2_bound"]})]
    return tables, [("moment_bound", ok, float(np.max(mom.mean[:, 0] - bound)), 0.0),
                    ("T_at_least_T0", spec.T >= cc.T0, spec.T, cc.T0)], {"constants": cc.provenance}


def run_poincare(cfg: PoincareCfg, ctx):
    model = _model(cfg.model)
    grid = G.Grid.make(model.d, cfg.a, cfg.n)
    op = G.operator_for(model, cfg.T, grid)
    res = G.poincare_constant(op)
    rows = [["C_P", res.C_P], ["gap", res.gap], ["C_P_coarse", res.coarse_C_P],
            ["error_estimate", res.error_estimate], ["nodes", res.n_nodes]]
    checks = []
    decl = model.declared
    if decl is not None:
        K, R, c = decl.K, decl.R, decl.c
        hs = C.holley_stroock_bound(K, c, R, cfg.T)
        rows.append(["holley_stroock", hs])
        checks.append(("below_holley_stroock", res.C_P <= hs, res.C_P, hs))
        thr = C.t0_threshold(model)
        if cfg.T >= thr.value:
            cc = C.contraction_constants(K, c, R, model.d, cfg.T)
            pb = C.poincare_from_contraction(cc.M, cc.lam, cfg.T, model.is_gradient)
            rows.append(["contraction_bound", pb])
            checks.append(("below_contraction_bound", res.C_P <= pb, res.C_P, pb))
    if model.name == "power_law" and cfg.T == 1.0:
        b = C.cp_beta_bound(model.params["beta"], model.d)
        rows.append(["cp_beta_bound", b.bound])
        checks.append(("below_beta_bound", res.C_P <= b.bound, res.C_P, b.bound))
    return [Table("poincare", ["name", "value"], rows)], checks, {"grid": dataclasses.asdict(grid)}


def run_transport(cfg: TransportCfg, ctx):
    X = np.loadtxt(cfg.x_file, delimiter=",", ndmin=2)
    Y = np.loadtxt(cfg.y_file, delimiter=",", ndmin=2)
    if cfg.n_boot:
        res = Tr.bootstrap_ci(X, Y, cfg.alpha, cfg.method, cfg.n_boot, ctx["seed"])
    elif cfg.method == "entropic":
        res = Tr.w2_entropic(X, Y, cfg.alpha, cfg.eps)
    else:
        res = Tr.wasserstein(X, Y, cfg.alpha, cfg.method)
    d = res.as_dict()
    rows = [[k, d[k]] for k in sorted(d)]
    return [Table("transport", ["name", "value"], rows)], [], {"result": d}


def run_chaos(cfg: ChaosCfg, ctx):
    spec = _mf_spec("tanh", cfg.strength, cfg.T)
    tab = MF.chaos_experiment(spec, cfg.N, cfg.t, cfg.n_reps, cfg.dt, ctx["seed"], cfg.x0_mean,
                              cfg.x0_std)
    rows = [[int(n), w, s, l, b] for n, w, s, l, b in
            zip(tab.N, tab.w2_coupling, tab.se_coupling, tab.w2_particle1, tab.bound)]
    tables = [Table("chaos", ["N", "W2", "stderr", "W2_particle1", "bound"], rows,
                    plot={"x": "N", "y": ["W2", "bound"], "logx": True, "logy": True})]
    checks = [("below_bound", tab.below_bound, float(np.max(tab.w2_coupling - tab.bound)), 0.0),
              ("exponent_window", -0.65 <= tab.slope <= -0.35, tab.slope, -0.5)]
    return tables, checks, {"chaos_constants": dataclasses.asdict(tab.constants),
                            "slope_ci": tab.slope_ci}


def run_meanfield(cfg: MeanfieldCfg, ctx):
    spec = _mf_spec(cfg.interaction, cfg.strength, cfg.T)
    x = np.linspace(-cfg.grid_a, cfg.grid_a, cfg.grid_n)
    nu0 = MF.gaussian_density(x, 2.0, 1.0)
    mu0 = MF.gaussian_density(x, -1.0, 0.5)
    times, w, bound, cc = MF.meanfield_contraction(spec, x, nu0, mu0, cfg.times, cfg.dt)
    rows = [[t, a, b] for t, a, b in zip(times, w, bound)]
    tables = [Table("meanfield_contraction", ["time", "w2", "bound"], rows,
                    plot={"x": "time", "y": ["w2", "bound"], "logy": True})]
    checks = [("contraction", bool(np.all(w <= bound + 1e-6)), float(np.max(w - bound)), 0.0)]
    st = MF.stationary_meanfield(spec, x, nu0, dt=cfg.dt, tol=cfg.tol, lam=cc.lam)
    var = st.moment(2, center=True)
    tables.append(Table("stationary", ["x", "density"], [[a, b] for a, b in zip(x, st.density)],
                        plot={"x": "x", "y": ["density"]}))
    summary = [["variance", var], ["iterations", st.iterations], ["t2_residual", st.t2_residual]]
    if cfg.interaction == "linear":
        exact = spec.T / (1 + cfg.strength)
        summary.append(["variance_exact", exact])
        checks.append(("stationary_variance", abs(var - exact) <= 1e-3, var, exact))
    checks.append(("fixed_point_converged", st.converged, st.increments[-1], cfg.tol))
    tables.append(Table("stationary_summary", ["name", "value"], summary))
    return tables, checks, {"constants": cc.provenance}


def run_entropy(cfg: EntropyCfg, ctx):
    model = _model(cfg.model)
    op = G.build_operator(model, cfg.T, G.Grid.make(1, cfg.a, cfg.n))
    K, R, c = model.declared.K, model.declared.R, model.declared.c
    cc = C.contraction_constants(K, c, R, 1, cfg.T)
    x = op.grid.axes[0]
    nu0 = MF.gaussian_density(x, cfg.init_mean, cfg.init_std)
    rep = G.kl_tv_check(op, nu0, K, cc.lam, cc.M, cfg.times, cfg.dt)
    rows = [[t, a, b, d] for t, a, b, d in zip(rep.times, rep.tv, rep.kl, rep.bound)]
    return ([Table("entropy", ["time", "tv", "kl", "bound"], rows,
                   plot={"x": "time", "y": ["kl", "bound"], "logy": True})],
            [("pinsker", rep.pinsker_ok, max(rep.tv), 0.0), ("kl_bound", rep.bound_ok, max(rep.kl), 0.0)],
            {"constants": cc.provenance})


def run_gradient(cfg: GradientCfg, ctx):
    model = _model(cfg.model)
    K, R, c = model.declared.K, model.declared.R, model.declared.c
    w = C.build_weight(K, c, R, model.d)
    pts = np.linspace(-cfg.a, cfg.a, 4001)[:, None]
    be = C.verify_bakry_emery_weight(model, w, 1.0, pts)
    T = cfg.T if cfg.T is not None else cfg.temperature_factor * be.T_tilde0
    be = C.verify_bakry_emery_weight(model, w, T, pts)
    op = G.build_operator(model, T, G.Grid.make(1, cfg.a, cfg.n))
    x = op.grid.axes[0]
    fs = test_functions(x, T)
    rep = G.gradient_contraction_check(op, 4.0 / 3.0, be.lam, fs, cfg.times, cfg.dt)
    rows = []
    k = 0
    for i in range(len(fs)):
        for t in cfg.times:
            rows.append([i, t, rep.max_violation[k], rep.ratio_max[k]])
            k += 1
    return ([Table("gradient", ["function", "time", "max_violation", "ratio_max"], rows)],
            [("bakry_emery_weight", be.passed, be.min_margin, 0.0),
             ("gradient_contraction", rep.passed, max(rep.max_violation), 0.0)],
            {"T_tilde0": be.T_tilde0, "T": T})


def test_functions(x, T):
    s = T ** 0.25
    return [np.tanh(x / s), np.sin(x / s) * np.exp(-x ** 2 / (8 * s * s)), 1 / (1 + np.exp(-4 * x / s))]


def run_validate(cfg: ValidateCfg, ctx):
    rows, checks = [], []
    if cfg.model is not None:
        model = _model(cfg.model)
        prof = Mo.verify_assumption1(model)
        rows.append(["assumption1", prof.passed, len(prof.violations)])
        checks.append(("assumption1", prof.passed, len(prof.violations), 0.0))
    if cfg.meanfield is not None:
        mf = dict(cfg.meanfield)
        unknown = sorted(set(mf) - {"interaction", "strength", "T", "a"})
        if unknown:
            raise ConfigError(f"meanfield: unknown key(s) {', '.join(unknown)}")
        try:
            spec = _mf_spec(mf.get("interaction", "tanh"), mf.get("strength", 0.1), mf.get("T"))
            if "a" in mf:
                spec = dataclasses.replace(spec, a=float(mf["a"]))
            rep = MF.validate_spec(spec)
            ok, detail = bool(rep["ok"]), json.dumps(to_jsonable(rep), sort_keys=True)
        except MF.AssumptionError as exc:
            ok, detail = False, str(exc)
        rows.append(["meanfield", ok, detail])
        checks.append(("meanfield", ok, 0.0, 0.0))
    return [Table("validation", ["check", "ok", "detail"], rows)], checks, {}


RUNNERS = {
    "constants": run_constants, "couple": run_couple, "perturb": run_perturb,
    "particles": run_particles, "poincare": run_poincare, "transport": run_transport,
    "chaos": run_chaos, "meanfield": run_meanfield, "entropy": run_entropy,
    "gradient": run_gradient, "validate": run_validate,
}


# ---------------------------------------------------------------------------
# orchestration

def run_experiments(parsed, out_dir, seed=0, workers=1, fmt="csv", figures=False, force=False,
                    echo=print):
    """Run every experiment into out_dir/<id>; returns the list of summaries."""
    out_dir = Path(out_dir)
    summaries = []
    for exp_id, kind, cfg in parsed:
        target = out_dir / exp_id
        if target.exists() and not force:
            raise ConfigError(f"{target} exists (use --force to replace it)")
        tmp = atomic_dir(target)
        ctx = {"seed": seed, "workers": workers}
        t0 = time.time()
        try:
            tables, checks, prov = RUNNERS[kind](cfg, ctx)
            check_rows = [[n, "pass" if ok else "fail", v, b] for n, ok, v, b in checks]
            tables = tables + [Table("summary", ["check", "status", "value", "reference"], check_rows)]
            digests = write_outputs(tmp, tables, fmt, figures)
            manifest = {
                "experiment": exp_id, "kind": kind, "tool_version": __version__, "seed": seed,
                "workers": workers, "wall_clock_s": time.time() - t0,
                "config": {"seed": seed, "workers": workers, "format": fmt,
                           "experiment": [materialize(exp_id, kind, cfg)]},
                "digests": digests, "provenance": prov,
                "checks": {n: bool(ok) for n, ok, _, _ in checks},
            }
            write_json(tmp / "manifest.json", manifest)
        except BaseException:
            shutil.rmtree(tmp, ignore_errors=True)
            raise
        if target.exists():
            shutil.rmtree(target)
        os.replace(tmp, target)
        status = "pass" if all(ok for _, ok, _, _ in checks) else "fail"
        detail = ", ".join(f"{n}={'pass' if ok else 'fail'}" for n, ok, _, _ in checks)
        echo(f"{exp_id}: {status}  ({detail or 'no checks'})")
        summaries.append({"id": exp_id, "status": status, "dir": str(target), "digests": digests})
    return summaries


def _kv(items):
    out = {}
    for it in items or []:
        if "=" not in it:
            raise ConfigError(f"expected key=value, got {it!r}")
        k, v = it.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def _floats(s):
    return [float(v) for v in s.split(",")] if s else None


def _ints(s):
    return [int(v) for v in s.split(",")] if s else None


def build_parser():
    def common(q, default):
        kw = {} if default else {"default": argparse.SUPPRESS}
        q.add_argument("--seed", type=int, **({"default": 0} if default else kw))
        q.add_argument("--workers", type=int, **({"default": 1} if default else kw))
        q.add_argument("--out-dir", **({"default": "wcontract-out"} if default else kw))
        q.add_argument("--format", choices=["csv", "json"], **({"default": "csv"} if default else kw))
        q.add_argument("--figures", action="store_true", help="also render PNG figures with matplotlib",
                       **({} if default else kw))
        q.add_argument("--force", action="store_true", help="replace existing output directories",
                       **({} if default else kw))

    p = argparse.ArgumentParser(prog="wcontract",
                                description="Wasserstein contraction laboratory for elliptic diffusions.")
    common(p, True)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    shared = argparse.ArgumentParser(add_help=False)
    common(shared, False)
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, **k):
        return sub.add_parser(name, parents=[shared], **k)

    def model_args(q, default="ou"):
        q.add_argument("--model", default=default, help=f"zoo id ({', '.join(sorted(Mo.ZOO))})")
        q.add_argument("--param", action="append", metavar="KEY=VALUE")
        q.add_argument("--declared", action="append", metavar="KEY=VALUE",
                       help="override declared K, R, c")

    q = cmd("constants", help="constants table for a model")
    model_args(q, "power_law")
    q.add_argument("--T", type=float)
    q.add_argument("--alpha", type=float, default=2.0)

    q = cmd("couple", help="synchronous coupling decay curve")
    model_args(q)
    q.add_argument("--T", type=float)
    q.add_argument("--dt", type=float)
    q.add_argument("--t-max", type=float)
    q.add_argument("--n-traj", type=int, default=2000)
    q.add_argument("--x0", default="0")
    q.add_argument("--y0", default="2")
    q.add_argument("--alpha", type=float, default=2.0)
    q.add_argument("--submartingale", action="store_true")

    q = cmd("perturb", help="bounded drift perturbation")
    model_args(q, "power_law")
    q.add_argument("--eps", type=float, default=0.5)
    q.add_argument("--T", type=float)
    q.add_argument("--t-max", type=float, default=5.0)
    q.add_argument("--n-traj", type=int, default=2000)

    q = cmd("particles", help="mean-field particle system and moments")
    q.add_argument("--interaction", choices=["tanh", "linear", "none"], default="tanh")
    q.add_argument("--strength", type=float, default=0.1)
    q.add_argument("--N", type=int, default=64)
    q.add_argument("--n-rep", type=int, default=10)
    q.add_argument("--T", type=float)
    q.add_argument("--t-max", type=float, default=2.0)

    q = cmd("poincare", help="grid Poincare constant")
    model_args(q)
    q.add_argument("--T", type=float, default=1.0)
    q.add_argument("--a", type=float, default=8.0)
    q.add_argument("--n", type=int, default=2001)

    q = cmd("transport", help="Wasserstein distance between two CSV clouds")
    q.add_argument("x_file")
    q.add_argument("y_file")
    q.add_argument("--alpha", type=float, default=2.0)
    q.add_argument("--method", choices=list(Tr.METHODS))
    q.add_argument("--eps", type=float, default=0.05)
    q.add_argument("--n-boot", type=int, default=0)

    q = cmd("chaos", help="propagation of chaos versus N")
    q.add_argument("--strength", type=float, default=0.1)
    q.add_argument("--N", default="8,16,32,64")
    q.add_argument("--t", type=float, default=2.0)
    q.add_argument("--n-reps", type=int, default=50)
    q.add_argument("--T", type=float)

    q = cmd("meanfield", help="grid McKean-Vlasov contraction and fixed point")
    q.add_argument("--interaction", choices=["linear", "tanh"], default="linear")
    q.add_argument("--strength", type=float, default=1.0)
    q.add_argument("--T", type=float)
    q.add_argument("--times", default="0,1,2,4")

    q = cmd("validate", help="check a configuration without running it")
    q.add_argument("config")

    q = cmd("run", help="run every experiment of a TOML config or JSON manifest")
    q.add_argument("config")
    return p


def _model_cfg(a):
    return {"id": a.model, "params": _kv(a.param), "declared": _kv(a.declared) or None}


def experiment_from_args(a):
    c = a.command
    if c == "constants":
        return {"kind": c, "model": _model_cfg(a), "T": a.T, "alpha": a.alpha}
    if c == "couple":
        return {"kind": c, "model": _model_cfg(a), "T": a.T, "dt": a.dt, "t_max": a.t_max,
                "n_traj": a.n_traj, "x0": _floats(a.x0), "y0": _floats(a.y0), "alpha": a.alpha,
                "submartingale": a.submartingale}
    if c == "perturb":
        return {"kind": c, "model": _model_cfg(a), "eps": a.eps, "T": a.T, "t_max": a.t_max,
                "n_traj": a.n_traj}
    if c == "particles":
        return {"kind": c, "interaction": a.interaction, "strength": a.strength, "N": a.N,
                "n_rep": a.n_rep, "T": a.T, "t_max": a.t_max}
    if c == "poincare":
        return {"kind": c, "model": _model_cfg(a), "T": a.T, "a": a.a, "n": a.n}
    if c == "transport":
        return {"kind": c, "x_file": a.x_file, "y_file": a.y_file, "alpha": a.alpha,
                "method": a.method, "eps": a.eps, "n_boot": a.n_boot}
    if c == "chaos":
        return {"kind": c, "strength": a.strength, "N": _ints(a.N), "t": a.t, "n_reps": a.n_reps,
                "T": a.T}
    if c == "meanfield":
        return {"kind": c, "interaction": a.interaction, "strength": a.strength, "T": a.T,
                "times": _floats(a.times)}
    raise ConfigError(f"unknown command {c}")


def validate_config(path, echo=print):
    """Dry run: parse strictly, then probe the structural assumptions."""
    data, parsed = load_config(path)
    problems = []
    for exp_id, kind, cfg in parsed:
        mc = getattr(cfg, "model", None)
        if isinstance(mc, ModelCfg) and kind != "validate":
            try:
                model = _model(mc)
                prof = Mo.verify_assumption1(model)
                if not prof.passed:
                    problems.append(f"{exp_id}: declared (K, R, c) violated at {len(prof.violations)} probe point(s)")
            except (Mo.MissingParameters, ValueError, TypeError) as exc:
                problems.append(f"{exp_id}: {exc}")
        if kind in ("chaos", "particles", "meanfield"):
            try:
                spec = _mf_spec(getattr(cfg, "interaction", "tanh"), cfg.strength, cfg.T)
                rep = MF.validate_spec(spec)
                if not rep["ok"]:
                    problems.append(f"{exp_id}: mean-field assumptions violated: {rep}")
            except MF.AssumptionError as exc:
                problems.append(f"{exp_id}: {exc}")
        if kind == "validate":
            tables, checks, _prov = run_validate(cfg, {})
            detail = {r[0]: r[2] for r in tables[0].rows}
            problems += [f"{exp_id}: {n} violated ({detail.get(n, '')})"
                         for n, ok, _v, _b in checks if not ok]
    for p in problems:
        echo(p)
    echo("clean" if not problems else f"{len(problems)} problem(s)")
    return problems


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            problems = validate_config(args.config)
            return 1 if problems else 0
        if args.command == "run":
            data, parsed = load_config(args.config)
            seed = int(data.get("seed", args.seed))
            workers = int(data.get("workers", args.workers))
            fmt = data.get("format", args.format)
            figures = bool(data.get("figures", args.figures))
        else:
            parsed = [parse_experiment(experiment_from_args(args))]
            seed, workers, fmt, figures = args.seed, args.workers, args.format, args.figures
        summ = run_experiments(parsed, args.out_dir, seed, workers, fmt, figures, args.force)
        return 0 if all(s["status"] == "pass" for s in summ) else 2
    except (ConfigError, Mo.MissingParameters, MF.AssumptionError, Mo.DimensionError,
            TypeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
