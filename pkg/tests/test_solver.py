import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from martlab.prob import InvalidInput
from martlab.solver import GroupNorm, split_minimize, split_subgradient


def weighted_l1(w):
    w = np.asarray(w, dtype=float)
    idx = np.arange(w.size)
    return GroupNorm(w, idx, idx, np.ones(w.size), w.size)


def euclid(d, scale=1.0):
    return GroupNorm([scale], np.zeros(d, dtype=np.int64), np.arange(d), np.ones(d), d)


def random_group_norm(rng, d, n_rows=None):
    n_rows = n_rows or 2 * d
    group = rng.integers(0, max(1, d // 2) + 1, n_rows)
    group = np.unique(group, return_inverse=True)[1]
    return GroupNorm(rng.random(group.max() + 1) + 0.1, group, rng.integers(0, d, n_rows),
                     rng.normal(size=n_rows), d)


def test_group_norm_value():
    N = GroupNorm([2.0, 1.0], [0, 0, 1], [0, 1, 2], [1.0, 1.0, 3.0], 3)
    assert N([3.0, 4.0, -1.0]) == pytest.approx(2 * 5 + 3)
    batch = N(np.array([[3.0, 4.0, -1.0], [0.0, 0.0, 1.0]]))
    np.testing.assert_allclose(batch, [13.0, 3.0])
    with pytest.raises(InvalidInput):
        GroupNorm([1.0], [0, 0], [0], [1.0], 1)
    with pytest.raises(InvalidInput):
        GroupNorm([-1.0], [0], [0], [1.0], 1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 6), st.integers(1, 4))
def test_compose_and_fuse_are_exact(seed, d, k):
    rng = np.random.default_rng(seed)
    N = random_group_norm(rng, d)
    coord_of = rng.integers(0, k, d)
    coord_of = np.unique(coord_of, return_inverse=True)[1]
    dim = int(coord_of.max()) + 1
    z = rng.normal(size=dim)
    assert N.compose(coord_of, dim)(z) == pytest.approx(N(z[coord_of]), rel=1e-12, abs=1e-14)
    x = rng.normal(size=d)
    assert N.fused()(x) == pytest.approx(N(x), rel=1e-12, abs=1e-14)


def test_fused_merges_duplicates():
    N = GroupNorm([1.0, 2.0], [0, 1], [0, 0], [1.0, 1.0], 1)
    F = N.fused()
    assert F.n_groups == 1 and F.weights.tolist() == [3.0]


def test_single_norm_and_errors():
    res = split_minimize([euclid(2)], [3.0, 4.0])
    assert res.objective == 5.0 and res.converged
    with pytest.raises(InvalidInput):
        split_minimize([], [1.0])
    with pytest.raises(InvalidInput):
        split_minimize([euclid(2), euclid(3)], [1.0, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6), st.integers(2, 4))
def test_separable_closed_form(seed, d, m):
    # weighted l1 norms split coordinate-wise onto the cheapest norm
    rng = np.random.default_rng(seed)
    W = rng.random((m, d)) + 0.05
    t = rng.normal(size=d)
    res = split_minimize([weighted_l1(w) for w in W], t, tol=1e-9)
    exact = float(np.sum(W.min(axis=0) * np.abs(t)))
    assert res.converged
    assert res.objective == pytest.approx(exact, rel=1e-7, abs=1e-12)
    assert res.lower_bound <= exact * (1 + 1e-12) + 1e-14
    np.testing.assert_allclose(res.parts.sum(axis=0), t, atol=1e-12)


def ball_box_dual(t, w):
    """max t.v over ||v||_2 <= 1, |v_j| <= w_j via SLSQP from several starts."""
    best = -np.inf
    rng = np.random.default_rng(0)
    cons = [{"type": "ineq", "fun": lambda v: 1.0 - v @ v, "jac": lambda v: -2 * v}]
    for _ in range(5):
        v0 = np.clip(rng.normal(size=t.size) * 0.3, -w, w)
        r = minimize(lambda v: -t @ v, v0, jac=lambda v: -t, bounds=list(zip(-w, w)),
                     constraints=cons, method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
        if r.success and r.x @ r.x <= 1 + 1e-9:
            best = max(best, -r.fun)
    return best


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 5))
def test_l2_plus_weighted_l1_against_dual_oracle(seed, d):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=d)
    w = rng.random(d) * 0.8 + 0.1
    oracle = ball_box_dual(t, w)
    res = split_minimize([euclid(d), weighted_l1(w)], t, tol=1e-8)
    assert res.converged
    assert res.objective == pytest.approx(oracle, rel=1e-6, abs=1e-10)
    assert res.lower_bound <= res.objective * (1 + 1e-14) + 1e-14


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 5), st.integers(2, 3))
def test_lower_bound_is_certified(seed, d, m):
    rng = np.random.default_rng(seed)
    norms = [random_group_norm(rng, d) for _ in range(m - 1)] + [euclid(d)]
    t = rng.normal(size=d)
    res = split_minimize(norms, t, tol=1e-7, max_iter=5000)
    sub = split_subgradient(norms, t, max_iter=3000)
    assert res.lower_bound is not None
    assert res.lower_bound <= res.objective + 1e-12
    # any feasible split is an upper bound for the certified lower bound
    assert res.lower_bound <= sub.objective * (1 + 1e-9) + 1e-12
    assert res.lower_bound <= norms[-1](t) + 1e-12
    vals = sum(N(p) for N, p in zip(norms, res.parts))
    assert vals == pytest.approx(res.objective, rel=1e-12, abs=1e-14)
    np.testing.assert_allclose(res.parts.sum(axis=0), t, atol=1e-10)


def test_subgradient_is_slower_but_feasible():
    t = np.array([1.0, -2.0, 0.5])
    w = np.array([0.3, 0.9, 0.2])
    pd = split_minimize([euclid(3), weighted_l1(w)], t, tol=1e-9)
    sg = split_subgradient([euclid(3), weighted_l1(w)], t, max_iter=4000)
    assert sg.objective >= pd.objective - 1e-9
    assert sg.objective <= pd.objective * 1.05
    assert sg.lower_bound is None


def test_zero_target():
    res = split_minimize([euclid(2), weighted_l1([1.0, 1.0])], np.zeros(2))
    assert res.converged and res.objective == 0.0 and res.iterations == 0


def test_init_is_respected():
    t = np.array([2.0, 2.0])
    init = t[None, :].copy()
    res = split_minimize([weighted_l1([0.1, 0.1]), weighted_l1([1.0, 1.0])], t, init, tol=1e-12)
    assert res.objective == pytest.approx(0.4)
    np.testing.assert_allclose(res.parts[0], t)


def test_rank_deficient_split_still_certified():
    # coordinate 2 is free in both leading parts, so their columns coincide
    w1, w2 = np.array([0.5, 2.0, 0.0]), np.array([2.0, 0.4, 0.0])
    idx = np.arange(2)
    n1 = GroupNorm(w1[:2], idx, idx, np.ones(2), 3)
    n2 = GroupNorm(w2[:2], idx, idx, np.ones(2), 3)
    t = np.array([1.0, -1.0, 3.0])
    res = split_minimize([n1, n2, euclid(3)], t, tol=1e-9)
    assert res.converged and res.lower_bound is not None
    # optimum: coordinates 0 and 1 go to their cheapest l1 part, coordinate 2 is free
    assert res.objective == pytest.approx(0.5 + 0.4, rel=1e-8)
    assert res.lower_bound <= res.objective + 1e-12
