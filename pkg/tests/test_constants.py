import math

import numpy as np
import pytest
from hypothesis import assume, example, given, settings, strategies as st

from wcontract import constants as C
from wcontract import models as M

pos = st.floats(0.05, 10, allow_nan=False)
nonneg = st.floats(0, 10, allow_nan=False)
dims = st.integers(1, 6)

# independent oracle: -int_0^{R*^2} g'(r) dr of the unsmoothed piecewise
# solution, evaluated with mpmath at 30 digits and frozen here
KAPPA_SUP = {
    (0, 1, 1, 1): 0.5,
    (1, 1, 1, 2): 0.693147180559945,
    (1, 0.5, 2, 3): 1.34903637555269,
    (2, 1, 1.5, 1): 16.875,
}


def test_r_star_examples():
    assert C.r_star(0, 1, 1, 2) == pytest.approx(math.sqrt(2), rel=1e-12)
    assert C.r_star(1, 1, 1, 1) == pytest.approx(4.0, rel=1e-12)
    assert C.r_star(3, 2, 0, 4) == 0.0
    with pytest.raises(ValueError):
        C.r_star(0, 0, 1, 1)


@given(nonneg, pos, pos, dims, st.floats(0.01, 5))
def test_r_star_monotonicity(K, c, R, d, dK):
    base = C.r_star(K, c, R, d)
    assert C.r_star(K + dK, c, R, d) > base
    assert C.r_star(K + dK, c + dK, R, d) < C.r_star(K + dK, c, R, d)
    assert C.r_star(K, c, 2 * R, d) == pytest.approx(2 * base, rel=1e-12)


def test_power_law_threshold():
    thr = C.t0_threshold(M.power_law(4, 1), alpha=2)
    assert thr.value == pytest.approx(97 / 3, rel=1e-6)
    assert thr.value <= 33
    assert C.power_law_temperature(4, 1) == pytest.approx(97 / 3, rel=1e-12)
    assert thr.safe_value == pytest.approx(1.05 * thr.value)
    assert C.t0_threshold(M.ou(1)).value == 0.0


def test_threshold_needs_declaration():
    with pytest.raises(M.MissingParameters):
        C.t0_threshold(M.exp_tail(1))


def test_sup_over_ball_finds_interior_maximum():
    # -x.b for the double well is |x|^4 - |x|^2; on |x| <= 0.5 the max is at 0
    fn = C.neg_radial_drift(M.double_well(2))
    res = C.sup_over_ball(fn, 0.5, 2)
    assert res.value == pytest.approx(0.0, abs=1e-12)
    res = C.sup_over_ball(lambda p: -np.sum((p - 0.3) ** 2, axis=1), 1.0, 3)
    assert res.value == pytest.approx(0.0, abs=1e-6)


def test_contraction_constants_examples():
    cc = C.contraction_constants(0, 1, 1, 1, 10, 2)
    assert cc.M == pytest.approx(math.sqrt(1.2), rel=1e-12)
    assert cc.lam == 0.25
    assert C.contraction_constants(0, 1, 0, 3, 1).M == 1.0
    assert C.contraction_constants(0, 1, 1, 1, 1e12).M == pytest.approx(1.0, abs=1e-10)


def test_contraction_constants_warn_below_threshold():
    with pytest.warns(UserWarning):
        C.contraction_constants(0, 1, 1, 1, 1.0, 2, T0=5.0)


@given(nonneg, pos, pos, dims, st.floats(0.1, 100), st.floats(2, 6))
def test_m_alpha_power_is_affine_in_one_over_T(K, c, R, d, T, alpha):
    m1 = C.contraction_constants(K, c, R, d, T, alpha).M
    m2 = C.contraction_constants(K, c, R, d, 2 * T, alpha).M
    assert m1 >= m2 >= 1
    assert (m1 ** alpha - 1) == pytest.approx(2 * (m2 ** alpha - 1), rel=1e-9)


def test_poincare_from_contraction_examples():
    assert C.poincare_from_contraction(1, 1, 1) == 1
    assert C.poincare_from_contraction(math.sqrt(1.2), 0.25, 10) == pytest.approx(48)
    assert C.poincare_from_contraction(math.sqrt(1.2), 0.25, 10, reversible=True) == pytest.approx(40)


@given(pos, pos)
def test_poincare_m1_is_t_over_lambda(lam, T):
    assert C.poincare_from_contraction(1.0, lam, T) == pytest.approx(T / lam, rel=1e-15)


def test_cp_beta_bound_examples():
    b1 = C.cp_beta_bound(4, 1)
    assert b1.bound == pytest.approx(24 * math.sqrt(33), rel=1e-12)
    assert b1.window is None
    b2 = C.cp_beta_bound(4, 2)
    assert b2.bound == pytest.approx(72 / math.sqrt(2), rel=1e-12)
    assert b2.window[0] == pytest.approx(0.353553390593274, rel=1e-9)
    assert b2.window[1] == pytest.approx(2.12132034355964, rel=1e-9)
    with pytest.raises(ValueError):
        C.cp_beta_bound(2, 1)


def test_holley_stroock_examples():
    assert C.holley_stroock_bound(0, 1, 1, 1) == pytest.approx(2 * math.e, rel=1e-12)
    assert C.holley_stroock_bound(1, 2, 0, 3) == pytest.approx(3.0)
    assert C.holley_stroock_bound(0, 1, 1, 1e9) / 2e9 == pytest.approx(1.0, rel=1e-8)


def test_j_t_examples():
    assert C.j_t(1, 0.1, 1, 1) == pytest.approx(1 / (1 - math.exp(-2)), rel=1e-12)
    expected = 1.21 * 1.25 * 5 ** 0.25 * math.exp(-5)
    assert C.j_t(1, 0.25, 1.1, 10) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.01524, rel=1e-3)
    lam, Mv = 0.3, 1.2
    assert C.j_t(0, lam, Mv, 1) == pytest.approx(min(0.5, Mv * Mv * lam * math.e * math.exp(-2 * lam)))
    with pytest.raises(ValueError):
        C.j_t(1, 0.1, 1, 0)


@given(st.one_of(st.just(0.0), st.floats(1e-6, 10)), st.floats(0.05, 5), st.floats(1, 3),
       st.floats(1e-3, 30))
@example(1e-6, 1.0, 1.0, 0.015625)
def test_j_t_is_min_of_valid_expressions(K, lam, Mv, t):
    val = C.j_t(K, lam, Mv, t)
    if K == 0:
        first, switch = 1 / (2 * t), 1 / (2 * lam)
        second = Mv * Mv * lam * math.e * math.exp(-2 * lam * t)
    else:
        # expm1/log1p: the naive forms lose ~8 digits when K t is tiny
        first = K / -math.expm1(-2 * K * t)
        switch = math.log1p(K / lam) / (2 * K)
        second = Mv * Mv * (K + lam) * (1 + K / lam) ** (lam / K) * math.exp(-2 * lam * t)
    assume(abs(t - switch) > 1e-9 * switch)
    valid = [first] + ([second] if t >= switch else [])
    assert val == pytest.approx(min(valid), rel=1e-9)


def test_particle_constants_examples():
    cc = C.particle_constants(0, 0, 0, 1, 0, 0, 1, 5.0, sup_value=0.0)
    assert (cc.T0, cc.M, cc.lam) == (0.0, 1.0, 0.25)
    assert C.particle_r_star(1, 0, 1, 1, 1) == pytest.approx(2.0)
    cc = C.particle_constants(1, 0, 0, 1, 1, 0, 1, 100.0, sup_value=0.7)
    assert cc.lam == pytest.approx(1 / 4.48, rel=1e-12)
    assert cc.provenance["inputs"]["K_star"] == pytest.approx(1.5)
    with pytest.raises(ValueError):
        C.particle_constants(1, 0, 1.0, 1.0, 1, 0, 1, 10.0, sup_value=0.0)


def test_particle_constants_searches_sup_from_F():
    F = lambda x: -x ** 3
    cc = C.particle_constants(0, 0, 0, 1, 1, 0, 1, 10.0, F=F)
    # -F(x).x = x^4 is maximal on the sphere of radius R* = 2^(1/2)
    assert cc.provenance["inputs"]["sup"] == pytest.approx(4.0, rel=1e-9)


# -- weight function -------------------------------------------------------

def test_weight_example_piecewise_values():
    w = C.build_weight(0, 1, 1, 1)
    assert w.K_star == 0.125 and w.R_star == pytest.approx(2.0)
    assert np.allclose(w.gprime(np.array([0.0, 0.5, 1.0])), -0.25)
    assert abs(float(w.gprime(4.0))) < 5 * w.eps
    assert w.kappa_sup <= w.kappa_bound == pytest.approx(1.0)
    assert C.build_weight(1, 1, 0, 2).trivial
    assert np.all(C.build_weight(1, 1, 0, 2).kappa(np.ones((3, 2))) == 0)


@pytest.mark.parametrize("key", sorted(KAPPA_SUP))
def test_kappa_sup_matches_quadrature_oracle(key):
    w0 = C.build_weight(*key, eps=0.0)
    assert w0.kappa_sup == pytest.approx(KAPPA_SUP[key], rel=1e-6)
    w = C.build_weight(*key)
    assert w.kappa_sup == pytest.approx(KAPPA_SUP[key], rel=2e-3)


def test_weight_band_must_fit():
    with pytest.raises(ValueError):
        C.build_weight(0, 1, 1, 1, eps=1.0)


def test_weight_laplacian_matches_finite_differences():
    w = C.build_weight(1, 1, 1, 2)
    x = np.random.default_rng(0).uniform(-2, 2, size=(200, 2))
    r = np.sum(x * x, 1)
    # stay away from the ramps, where kappa is only C^2 piecewise
    x = x[(np.abs(r - w.R2) > 0.05) & (np.abs(r - w.E) > 0.05)]
    h = 1e-4
    fd = np.zeros(len(x))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd += (w.kappa(x + e) - 2 * w.kappa(x) + w.kappa(x - e)) / h ** 2
    assert np.allclose(fd, w.laplacian_kappa(x), atol=1e-5)


@settings(max_examples=12)
@given(st.floats(0, 4), st.floats(0.2, 4), st.floats(0.3, 3), st.integers(1, 4))
def test_weight_invariants(K, c, R, d):
    w = C.build_weight(K, c, R, d)
    rng = np.random.default_rng(0)
    u = rng.normal(size=(2000, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    x = u * np.linspace(0, 1.3 * math.sqrt(w.E), 2000)[:, None]
    kap = w.kappa(x)
    assert np.all(kap >= 0)
    assert np.max(kap) <= w.kappa_bound
    r = np.sum(x * x, 1)
    assert np.allclose(w.laplacian_kappa(x), 4 * w.h(r), atol=1e-9)
    lhs = w.laplacian_kappa(x)
    assert np.all(lhs <= w.envelope(x) - c / 2 + w.band_tolerance() + 1e-12)
    far = u * (math.sqrt(w.E) + 1e-9)
    assert np.max(w.kappa(far)) < 1e-12
    assert w.E - w.R_star2 <= 1.01 * w.eps


def test_weight_gradient_bound():
    w = C.build_weight(1, 1, 1, 2)
    x = np.random.default_rng(1).uniform(-3, 3, size=(5000, 2))
    assert np.max(np.linalg.norm(w.grad_kappa(x), axis=1)) <= w.grad_sup * (1 + 1e-6)


# -- Bakry-Emery weight ------------------------------------------------------

def test_bakry_emery_ou_trivial_weight():
    w = C.build_weight(0, 1, 0, 1)
    rep = C.verify_bakry_emery_weight(M.ou(1), w, 2.0, np.linspace(-5, 5, 101)[:, None])
    assert rep.passed
    assert rep.min_margin == pytest.approx(2.0 - 0.25 * 2.0)


def test_bakry_emery_power_law():
    model = M.power_law(4, 1)
    w = C.build_weight(0, 1 / 6, 1, 1)
    pts = np.linspace(-6, 6, 2001)[:, None]
    probe = C.verify_bakry_emery_weight(model, w, 1.0, pts)
    assert probe.T_tilde0 == pytest.approx(16 / 3, rel=1e-3)
    rep = C.verify_bakry_emery_weight(model, w, 2 * probe.T_tilde0, pts)
    assert rep.passed and rep.M_squared <= 4 / 3
    # below the threshold the check keeps passing down to T~0/100 for this
    # strongly convex-at-infinity drift; it only fails as T -> 0
    assert C.verify_bakry_emery_weight(model, w, probe.T_tilde0 / 100, pts).passed
    assert not C.verify_bakry_emery_weight(model, w, 1e-6, pts).passed


def test_bakry_emery_errors():
    w = C.build_weight(0, 1, 0, 1)
    with pytest.raises(ValueError):
        C.verify_bakry_emery_weight(M.ou(1), w, 1.0, np.empty((0, 1)))
