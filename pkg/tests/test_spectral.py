import numpy as np
import pytest
from hypothesis import given, strategies as st

from wcontract.constants import cp_beta_bound, holley_stroock_bound
from wcontract.models import DimensionError, double_well, ou, power_law, skew_gradient
from wcontract.spectral import (Grid, build_operator, gradient_contraction_check, kl_tv_check,
                                kl_divergence, operator_for, poincare_constant,
                                semigroup_evolve, total_variation, variance_decay)


@pytest.fixture(scope="module")
def ou_op():
    return build_operator(ou(1), 1.0, Grid.make(1, 8.0, 1601))


def test_grid_requires_odd_nodes():
    with pytest.raises(ValueError):
        Grid.make(1, 1.0, 100)


@pytest.mark.parametrize("T", [0.5, 1.0, 4.0])
def test_ou_stationary_density(T):
    g = Grid.make(1, 6 * np.sqrt(T), 1201)
    op = build_operator(ou(1), T, g)
    x = g.axes[0]
    exact = np.exp(-x ** 2 / (2 * T)) / np.sqrt(2 * np.pi * T)
    assert np.max(np.abs(op.mu - exact)) <= 1e-4
    assert op.diagnostics["row_sum_max"] < 1e-9


def test_skew_model_keeps_gaussian():
    op = build_operator(skew_gradient(), 1.0, Grid.make(2, 5.0, 81))
    assert op.scheme == "exp-fitting"
    P = op.grid.points()
    exact = np.exp(-0.5 * (P ** 2).sum(1)) / (2 * np.pi)
    assert np.max(np.abs(op.mu - exact)) <= 1e-4
    assert op.adjoint_residual() < 1e-12


@pytest.mark.parametrize("model", [ou(1), power_law(4.0, 1), double_well(1)],
                         ids=lambda m: m.name)
def test_generator_structure(model):
    op = build_operator(model, 0.7, Grid.make(1, 4.0, 401))
    Q = op.Q.toarray()
    off = Q - np.diag(np.diag(Q))
    assert np.all(off >= 0)
    assert np.max(np.abs(Q.sum(1))) < 1e-8 * np.max(np.abs(Q))
    assert op.adjoint_residual() < 1e-10
    assert abs(op.mass.sum() - 1) < 1e-12


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        build_operator(ou(2), 1.0, Grid.make(1, 4.0, 101))
    with pytest.raises(ValueError):
        build_operator(ou(1), 0.0, Grid.make(1, 4.0, 101))


@pytest.mark.parametrize("T", [1.0, 4.0])
def test_ou_poincare_constant_equals_T(T):
    op = operator_for(ou(1), T, Grid.make(1, 6 * np.sqrt(T), 1201))
    res = poincare_constant(op)
    assert res.C_P == pytest.approx(T, rel=1e-2)
    assert res.gap == pytest.approx(1.0, rel=1e-2)
    assert res.error_estimate < 1e-3 * T


def test_poincare_second_order_convergence():
    ns = [101, 201, 401, 801]
    errs = [abs(poincare_constant(build_operator(ou(1), 1.0, Grid.make(1, 8.0, n)),
                                  refine_check=False).C_P - 1) for n in ns]
    slope = np.polyfit(np.log([16 / (n - 1) for n in ns]), np.log(errs), 1)[0]
    assert 1.7 <= slope <= 2.3


def test_power_law_poincare_against_bounds():
    m = power_law(4.0, 1)
    small = poincare_constant(operator_for(m, 1.0, Grid.make(1, 6.0, 2401))).C_P
    large = poincare_constant(operator_for(m, 1.0, Grid.make(1, 12.0, 2401))).C_P
    # truncating the domain costs well under half a percent
    assert abs(small - large) / large < 5e-3
    assert small <= cp_beta_bound(4.0, 1).bound
    d = m.declared
    assert small <= holley_stroock_bound(d.K, d.c, d.R, 1.0)


def test_skew_poincare_matches_reversible():
    # C_P depends on mu only, and mu is the standard Gaussian here
    op = build_operator(skew_gradient(), 1.0, Grid.make(2, 5.0, 81))
    assert poincare_constant(op, refine_check=False).C_P == pytest.approx(1.0, rel=1e-2)


def test_constants_preserved(ou_op):
    x = ou_op.grid.axes[0]
    u = semigroup_evolve(ou_op, np.ones_like(x), 2.0)
    assert np.max(np.abs(u - 1)) < 1e-10


def test_ou_semigroup_on_linear_function(ou_op):
    x = ou_op.grid.axes[0]
    u = semigroup_evolve(ou_op, x, 1.0, dt=1e-3)
    inner = np.abs(x) <= 4
    assert np.max(np.abs(u - np.exp(-1.0) * x)[inner]) <= 1e-3


def test_semigroup_time_zero_is_identity(ou_op):
    f = np.sin(ou_op.grid.axes[0])
    assert np.array_equal(semigroup_evolve(ou_op, f, 0.0), f)
    with pytest.raises(ValueError):
        semigroup_evolve(ou_op, f, -1.0)


def test_adjoint_evolution_conserves_mass(ou_op):
    x = ou_op.grid.axes[0]
    p = np.exp(-(x - 2) ** 2) * ou_op.weights
    p /= p.sum()
    q = semigroup_evolve(ou_op, p, 1.0, dt=1e-2, adjoint=True, rough=True)
    assert abs(q.sum() - 1) < 1e-12
    assert np.min(q) > -1e-14


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_variance_decays_at_the_gap(ou_op, coef):
    x = ou_op.grid.axes[0]
    f = coef[0] * np.sin(x) + coef[1] * np.tanh(x) + coef[2] * np.cos(2 * x)
    times = np.array([0.0, 0.5, 1.0])
    v = variance_decay(ou_op, f, times, dt=1e-2)
    assert np.all(v[1:] <= np.exp(-2 * times[1:]) * v[0] * (1 + 1e-6) + 1e-12)


def test_ou_gradient_contraction(ou_op):
    x = ou_op.grid.axes[0]
    rep = gradient_contraction_check(ou_op, 1.0, 1.0, [x, np.sin(x), np.tanh(x)],
                                     [0.1, 0.5, 1.0], dt=1e-3)
    assert rep.passed
    # f = x is the extremal case: equality up to discretisation
    assert max(rep.ratio_max[:3]) == pytest.approx(1.0, abs=1e-3)


def test_gradient_check_detects_wrong_rate(ou_op):
    x = ou_op.grid.axes[0]
    rep = gradient_contraction_check(ou_op, 1.0, 2.0, [x], [0.5, 1.0], dt=1e-3)
    assert not rep.passed


def test_divergences():
    w = np.full(4, 0.25)
    p = np.array([1.0, 1.0, 1.0, 1.0])
    q = np.array([2.0, 0.0, 1.0, 1.0])
    assert total_variation(p, q, w) == pytest.approx(0.25)
    assert kl_divergence(p, p, w) == 0.0
    assert kl_divergence(q, p, w) == pytest.approx(0.5 * np.log(2))


def test_kl_tv_equilibrium_start(ou_op):
    rep = kl_tv_check(ou_op, ou_op.mu, 0.0, 1.0, 1.0, [0.1, 0.5, 1.0])
    assert max(rep.tv) < 1e-10
    assert max(abs(k) for k in rep.kl) < 1e-10


def test_kl_tv_shifted_gaussian(ou_op):
    x = ou_op.grid.axes[0]
    nu = np.exp(-(x - 2) ** 2 / 2) / np.sqrt(2 * np.pi)
    times = [0.1, 0.5, 1.0, 2.0]
    rep = kl_tv_check(ou_op, nu, 0.0, 1.0, 1.0, times)
    assert rep.w2_0 == pytest.approx(2.0, abs=1e-6)
    # the law at time t is N(2 e^-t, 1), so KL = 2 e^(-2t)
    assert np.allclose(rep.kl[1:], 2 * np.exp(-2 * np.array(times[1:])), rtol=1e-3)
    assert rep.pinsker_ok and rep.bound_ok


def test_kl_tv_rejects_bad_input(ou_op):
    with pytest.raises(ValueError):
        kl_tv_check(ou_op, np.zeros(ou_op.grid.size), 0.0, 1.0, 1.0, [1.0])
    op2 = build_operator(ou(2), 1.0, Grid.make(2, 3.0, 21))
    with pytest.raises(DimensionError):
        kl_tv_check(op2, op2.mu, 0.0, 1.0, 1.0, [1.0])
