import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from wcontract import transport as Tr

coord = st.floats(-10, 10, allow_nan=False)


def brute_force(X, Y, alpha=2.0):
    X, Y = np.atleast_2d(X), np.atleast_2d(Y)
    if X.shape[0] == 1 and X.shape[1] > 1 and Y.shape[1] == 1:
        X = X.T
    best = min(np.mean([np.linalg.norm(X[i] - Y[p[i]]) ** alpha for i in range(len(X))])
               for p in itertools.permutations(range(len(Y))))
    return best ** (1 / alpha)


def test_1d_examples():
    assert Tr.w_alpha_1d([0.0, 2.0], [1.0, 3.0]).cost == pytest.approx(1.0)
    assert Tr.w_alpha_1d([0.0, 0.0, 4.0], [1.0, 2.0, 3.0]).cost == pytest.approx(math.sqrt(2))
    assert brute_force(np.array([[0.0], [0.0], [4.0]]), np.array([[1.0], [2.0], [3.0]])) == pytest.approx(math.sqrt(2))
    x = np.random.default_rng(0).normal(size=17)
    assert Tr.w_alpha_1d(x, x).cost == 0.0
    with pytest.raises(ValueError):
        Tr.w_alpha_1d(np.ones((3, 2)), np.ones((3, 2)))


def test_1d_weighted_quantile_coupling():
    # a point mass at 0 against {-1, 1} with equal weights: W2 = 1
    X = Tr.EmpiricalMeasure([0.0])
    Y = Tr.EmpiricalMeasure([-1.0, 1.0], [0.5, 0.5])
    assert Tr.w_alpha_1d(X, Y).cost == pytest.approx(1.0)
    # weighted against its expanded uniform version gives 0
    Xw = Tr.EmpiricalMeasure([0.0, 1.0], [0.25, 0.75])
    Xu = Tr.EmpiricalMeasure([0.0, 1.0, 1.0, 1.0])
    assert Tr.w_alpha_1d(Xw, Xu).cost == pytest.approx(0.0, abs=1e-15)


def test_measure_validation():
    with pytest.raises(ValueError):
        Tr.EmpiricalMeasure(np.empty((0, 2)))
    with pytest.raises(ValueError):
        Tr.EmpiricalMeasure([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        Tr.EmpiricalMeasure([1.0, 2.0], [1.5, -0.5])


def test_assignment_examples():
    X = np.array([[0.0, 0.0], [2.0, 0.0]])
    Y = np.array([[1.0, 0.0], [1.0, 1.0]])
    assert Tr.w2_assignment(X, Y).cost == pytest.approx(math.sqrt(1.5))
    assert Tr.w2_assignment(X, X).cost == 0.0
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=64), rng.normal(1, 2, size=64)
    assert Tr.w2_assignment(a, b).cost == pytest.approx(Tr.w_alpha_1d(a, b).cost, abs=1e-9)


def test_assignment_errors():
    with pytest.raises(ValueError):
        Tr.w2_assignment(np.zeros((3, 1)), np.zeros((4, 1)))
    with pytest.raises(ValueError):
        Tr.w2_assignment(np.zeros((5, 1)), np.zeros((5, 1)), cap=4)


@given(arrays(float, (5, 2), elements=coord), arrays(float, (5, 2), elements=coord))
def test_assignment_matches_brute_force(X, Y):
    assert Tr.w2_assignment(X, Y).cost == pytest.approx(brute_force(X, Y), rel=1e-9, abs=1e-9)


def test_entropic_examples():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(150, 1))
    assert Tr.w2_entropic(X, X, debias=True).cost < 1e-3 * 2
    # Gaussian oracle: W2(N(0,1), N(3,1)) = 3; reduced n keeps the run short
    a, b = rng.normal(size=(800, 1)), rng.normal(3, 1, size=(800, 1))
    res = Tr.w2_entropic(a, b, eps=0.01)
    assert res.converged
    assert res.cost == pytest.approx(3.0, rel=0.03)
    exact = Tr.w2_assignment(X[:60], X[60:120]).cost
    assert Tr.w2_entropic(X[:60], X[60:120], eps=10.0, scale=False).cost > exact


def test_entropic_flags_non_convergence():
    rng = np.random.default_rng(5)
    res = Tr.w2_entropic(rng.normal(size=(50, 2)), rng.normal(size=(50, 2)), eps=1e-3,
                         max_iter=10)
    assert not res.converged
    with pytest.raises(ValueError):
        Tr.w2_entropic(np.zeros((2, 1)), np.ones((2, 1)), eps=0)


def test_bootstrap_examples():
    rng = np.random.default_rng(6)
    X = rng.normal(size=200)
    same = Tr.bootstrap_ci(X, X, n_boot=100, seed=1)
    assert same.ci[0] == 0.0
    shifted = Tr.bootstrap_ci(X, X + 1.0, n_boot=100, seed=2)
    assert shifted.ci[0] == pytest.approx(1.0) and shifted.ci[1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        Tr.bootstrap_ci(X, X, n_boot=10)


def test_bootstrap_deterministic_given_seed():
    rng = np.random.default_rng(7)
    X, Y = rng.normal(size=300), rng.normal(1, 1, size=300)
    a = Tr.bootstrap_ci(X, Y, n_boot=100, seed=3)
    b = Tr.bootstrap_ci(X, Y, n_boot=100, seed=3)
    assert a.ci == b.ci


def test_bootstrap_coverage_for_shifted_clouds():
    # repetition study: clouds N(0,1) and N(1,1), n = 1000; the true W2 is 1
    hits = 0
    reps = 20
    for k in range(reps):
        rng = np.random.default_rng(100 + k)
        X, Y = rng.normal(size=1000), rng.normal(1, 1, size=1000)
        lo, hi = Tr.bootstrap_ci(X, Y, n_boot=100, seed=k).ci
        hits += lo <= 1.0 <= hi
    assert hits >= 15


@given(arrays(float, (6, 2), elements=coord), arrays(float, (6, 2), elements=coord),
       arrays(float, (6, 2), elements=coord))
def test_triangle_and_symmetry(X, Y, Z):
    w = lambda a, b: Tr.w2_assignment(a, b).cost
    assert w(X, Y) == w(Y, X)
    assert w(X, Z) <= w(X, Y) + w(Y, Z) + 1e-9


@given(arrays(float, 8, elements=coord), arrays(float, 8, elements=coord))
def test_w1_below_w2(x, y):
    assert Tr.w_alpha_1d(x, y, 1.0).cost <= Tr.w_alpha_1d(x, y, 2.0).cost + 1e-12


@given(arrays(float, (6, 2), elements=coord), arrays(float, (6, 2), elements=coord),
       arrays(float, 2, elements=coord))
def test_translation(X, Y, v):
    base = Tr.w2_assignment(X, Y).cost
    assert Tr.w2_assignment(X + v, Y + v).cost == pytest.approx(base, abs=1e-9)
    shift = Tr.w2_assignment(X[:1], X[:1] + v).cost
    assert shift == pytest.approx(np.linalg.norm(v), rel=1e-12, abs=1e-12)


def test_grid_quantile_w_gaussians():
    x = np.linspace(-12, 12, 4001)
    p = np.exp(-0.5 * x ** 2)
    q = np.exp(-0.5 * (x - 2) ** 2 / 4)
    # W2 between N(0,1) and N(2,4) = sqrt(2^2 + (2-1)^2)
    assert Tr.grid_quantile_w(x, p, q) == pytest.approx(math.sqrt(5), rel=1e-5)


def test_wasserstein_dispatch():
    assert Tr.wasserstein(np.zeros(3), np.ones(3)).method == "1d-exact"
    assert Tr.wasserstein(np.zeros((3, 2)), np.ones((3, 2))).method == "assignment"
