import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from martlab.decomposition import (FourTermDecomp, a_term, adapted_coordinates, assemble_davis,
                                   b_term, c_term, d_term, delta_project, iter_br_rhs, lhs_norm,
                                   rhs_objective, rhs_objective_convexified, rhs_terms,
                                   solve_decomposition, term_evaluators, verify_corollary_chain)
from martlab.filtration import FiltrationGrid, random_grid
from martlab.martingale import delta_2d, deltas_2d
from martlab.prob import FiniteProbSpace, InvalidInput, Partition, join


def single(G, i, j, g):
    X = np.zeros(G.shape + (G.space.n,))
    X[i, j] = g
    return X


def only(G, which, P):
    zero = np.zeros_like(P)
    parts = [zero] * 4
    parts[which] = P
    return FourTermDecomp(*parts)


def random_adapted(G, rng, density=1.0):
    X = G.adapt(rng.normal(size=G.shape + (G.space.n,)))
    return X * (rng.random(G.shape)[..., None] < density)


def test_rhs_b_example(rademacher_grid):
    sp, G, eps, delta = rademacher_grid
    d = only(G, 1, single(G, 1, 1, eps * delta))
    assert rhs_objective(d, G) == pytest.approx(1.0, abs=1e-15)
    zero = np.zeros((2, 2, 4))
    assert rhs_objective(FourTermDecomp(zero, zero, zero, zero), G) == 0.0


def test_rhs_a_only_is_sum_of_means():
    sp, G = random_grid(3, [2], [3])
    A = random_adapted(G, np.random.default_rng(1))
    assert rhs_objective(only(G, 0, A), G) == pytest.approx(
        sum(sp.expect(np.abs(A[i, j])) for i, j in G.indices()), rel=1e-13)


def test_rhs_rejects_non_adapted_and_uncertified(rademacher_grid):
    sp, G, eps, delta = rademacher_grid
    bad = single(G, 0, 0, eps)
    with pytest.raises(InvalidInput):
        rhs_objective(only(G, 0, bad), G)
    rows, cols = Partition([0, 0, 1, 1]), Partition([0, 1, 1, 0])
    H = FiltrationGrid(FiniteProbSpace([0.4, 0.2, 0.1, 0.3]),
                       [[Partition.trivial(4), cols], [rows, join(rows, cols)]])
    with pytest.raises(InvalidInput):
        rhs_objective(only(H, 0, np.zeros((2, 2, 4))), H)
    with pytest.raises(InvalidInput):
        solve_decomposition(np.zeros((2, 2, 4)), H)


def test_lhs_examples(rademacher_grid):
    sp, G, eps, delta = rademacher_grid
    X = np.zeros((2, 2, 4))
    assert lhs_norm(G, X) == 0.0
    X[1, 0], X[0, 1] = eps, delta
    assert lhs_norm(G, X) == pytest.approx(np.sqrt(2), abs=1e-15)
    g = np.array([1.0, -3.0, 0.5, 2.0])
    assert lhs_norm(G, single(G, 1, 1, g)) == pytest.approx(sp.expect(np.abs(g)))


def test_term_functions_match_group_norms():
    rng = np.random.default_rng(7)
    for seed in range(5):
        sp, G = random_grid(seed, [2, 2], [3])
        evals = term_evaluators(G)
        for term, N in zip((a_term, b_term, c_term, d_term), evals):
            P = random_adapted(G, rng)
            assert N(P.ravel()) == pytest.approx(term(G, P), rel=1e-12)


def test_terms_batch():
    sp, G = random_grid(0, [2], [2])
    rng = np.random.default_rng(0)
    P = np.stack([random_adapted(G, rng) for _ in range(3)])
    for term in (a_term, b_term, c_term, d_term):
        batch = term(G, P)
        np.testing.assert_allclose(batch, [term(G, p) for p in P], rtol=1e-13)


def test_convexified_examples():
    sp, G = random_grid(2, [2], [2])
    A = random_adapted(G, np.random.default_rng(3))
    got = rhs_objective_convexified(only(G, 0, A), G)
    assert got == pytest.approx(np.sqrt(sum(sp.expect(A[i, j] ** 2) for i, j in G.indices())))
    assert rhs_objective_convexified(only(G, 0, np.zeros_like(A)), G) == 0.0


def test_iter_br_rhs_examples(rademacher_grid):
    sp, G, _, _ = rademacher_grid
    assert iter_br_rhs(np.zeros((2, 2, 4)), G, 1.5) == 0.0
    assert iter_br_rhs(single(G, 1, 1, np.ones(4)), G, 1.0) == pytest.approx(4.0)
    with pytest.raises(InvalidInput):
        iter_br_rhs(single(G, 1, 1, -np.ones(4)), G, 1.0)
    with pytest.raises(InvalidInput):
        iter_br_rhs(np.zeros((2, 2, 4)), G, 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_iter_br_rhs_linear_at_q1(seed):
    sp, G = random_grid(seed, [2], [2, 2])
    Z = np.abs(random_adapted(G, np.random.default_rng(seed)))
    assert iter_br_rhs(Z, G, 1.0) == pytest.approx(4 * sp.expect(Z.sum(axis=(0, 1))), rel=1e-12)


def test_solve_zero_and_single_cell(rademacher_grid):
    sp, G, eps, delta = rademacher_grid
    d, rep = solve_decomposition(np.zeros((2, 2, 4)), G)
    assert rep.objective == 0.0 and rep.converged and not np.any(d.total())
    # every term dominates E|part| here, so the infimum is exactly E|X| = 1
    X = single(G, 1, 1, eps * delta)
    d, rep = solve_decomposition(X, G)
    assert rep.converged
    assert rep.objective == pytest.approx(1.0, rel=1e-6)
    assert rep.lower_bound <= 1.0 + 1e-12


def test_constant_at_origin():
    sp, G = random_grid(4, [2], [3])
    X = single(G, 0, 0, np.full(sp.n, -2.5))
    d, rep = solve_decomposition(X, G)
    assert rep.objective == pytest.approx(2.5, rel=1e-6)


@pytest.mark.parametrize("seed", range(6))
def test_solver_feasible_and_below_single_terms(seed):
    sp, G = random_grid(seed, [2, 2], [2])
    X = random_adapted(G, np.random.default_rng(seed), density=0.7)
    d, rep = solve_decomposition(X, G, tol=1e-6)
    assert rep.converged and rep.residual <= 1e-9
    for P in d.parts():
        G.check_adapted(P, tol=1e-12)
    np.testing.assert_allclose(d.total(), X, atol=1e-9)
    assert rep.objective == pytest.approx(rhs_objective(d, G), rel=1e-12)
    assert rep.objective == pytest.approx(sum(rep.term_values), rel=1e-12)
    assert rep.lower_bound <= rep.objective * (1 + 1e-14)
    assert rep.objective - rep.lower_bound <= 1e-6 * rep.objective
    for k in range(4):
        assert rep.objective <= rhs_objective(only(G, k, X), G) * (1 + 1e-6)
    assert lhs_norm(G, X) <= 32 * rep.objective and rep.objective <= 32 * lhs_norm(G, X)


def test_solver_deterministic():
    sp, G = random_grid(9, [2], [2, 2])
    X = random_adapted(G, np.random.default_rng(9))
    a, ra = solve_decomposition(X, G, seed=1)
    b, rb = solve_decomposition(X, G, seed=2)
    assert ra.objective == rb.objective
    for P, Q in zip(a.parts(), b.parts()):
        np.testing.assert_array_equal(P, Q)


def test_subgradient_method_is_an_upper_bound():
    sp, G = random_grid(1, [3, 2], [2, 2])
    X = random_adapted(G, np.random.default_rng(1), density=0.5)
    _, pd = solve_decomposition(X, G)
    _, sg = solve_decomposition(X, G, method="subgradient", max_iter=3000)
    assert sg.objective >= pd.lower_bound - 1e-12
    assert sg.residual <= 1e-9


def test_adapted_coordinates():
    sp, G = random_grid(0, [2], [3])
    coord, dim = adapted_coordinates(G)
    assert dim == sum(G.parts[i][j].block_count for i, j in G.indices())
    z = np.random.default_rng(0).normal(size=dim)
    assert G.is_adapted(z[coord].reshape(G.shape + (sp.n,)))


def test_delta_project_fixed_point_and_constants(rademacher_grid):
    sp, G, eps, delta = rademacher_grid
    rng = np.random.default_rng(2)
    X = random_adapted(G, rng)
    d = FourTermDecomp(X, 2 * X, -X, X / 3)
    once = delta_project(d, G)
    twice = delta_project(once, G)
    for P, Q in zip(once.parts(), twice.parts()):
        np.testing.assert_allclose(P, Q, atol=1e-13)
    const = only(G, 0, single(G, 1, 1, np.full(4, 3.0)))
    assert not np.any(np.abs(delta_project(const, G).A) > 1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_delta_project_term_growth(seed):
    # B never grows; A grows at most 4x (four contractions); C and D at most 2x
    sp, G = random_grid(seed, [2, 2], [2])
    rng = np.random.default_rng(seed)
    d = FourTermDecomp(*(random_adapted(G, rng) for _ in range(4)))
    before, after = rhs_terms(d, G), rhs_terms(delta_project(d, G), G)
    assert after[1] <= before[1] + 1e-10
    assert after[0] <= 4 * before[0] + 1e-10
    assert after[2] <= 2 * before[2] + 1e-10
    assert after[3] <= 2 * before[3] + 1e-10


def test_c_term_can_grow_under_projection():
    # one coin with P(+) = e and a = indicator of +: the row difference of a
    # has E|a - Ea| = 2e(1 - e) > e = E|a|
    e = 0.1
    coin = FiniteProbSpace([e, 1 - e])
    sp = coin
    G = FiltrationGrid(sp, [[Partition.trivial(2)], [Partition.singletons(2)]], certify=True)
    C = np.zeros((2, 1, 2))
    C[1, 0] = [1.0, 0.0]
    d = only(G, 2, C)
    before = c_term(G, d.C)
    after = c_term(G, delta_project(d, G).C)
    assert before == pytest.approx(e)
    assert after == pytest.approx(2 * e * (1 - e))
    assert after > before


def test_assemble_davis_rademacher(rademacher_grid):
    sp, G, eps, delta = rademacher_grid
    res = assemble_davis(eps * delta, G)
    assert res.reconstruction_residual <= 1e-12
    assert sum(res.terms_before) <= lhs_norm(G, deltas_2d(G, eps * delta)) * (1 + 1e-6)
    chain = verify_corollary_chain(eps * delta, G, res)
    assert chain.ratio == pytest.approx(1.0)
    assert chain.exact_slack() >= -1e-10


def test_assemble_davis_constant():
    sp, G = random_grid(5, [2], [2])
    res = assemble_davis(np.full(sp.n, 1.5), G)
    np.testing.assert_allclose(sum(res.pieces()), 1.5, atol=1e-9)
    for P in res.pieces():
        assert np.ptp(P) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_davis_pipeline_and_chain(seed):
    sp, G = random_grid(seed, [2, 2], [2])
    f = np.random.default_rng(seed).normal(size=sp.n)
    res = assemble_davis(f, G)
    assert res.reconstruction_residual <= 1e-9
    assert res.report.converged
    # projected pieces are the grid sums of the projected parts
    for P, Q in zip(res.pieces(), res.projected.parts()):
        np.testing.assert_allclose(P, Q.sum(axis=(0, 1)), atol=1e-14)
        for i, j in G.indices():
            np.testing.assert_allclose(delta_2d(G, i, j, Q[i, j]), Q[i, j], atol=1e-12)
    chain = verify_corollary_chain(f, G, res)
    assert chain.exact_slack() >= -1e-10
    assert 0 < chain.ratio <= 50
    names = [s.name for s in chain.steps]
    assert any(n.startswith("A:") for n in names) and any(n.startswith("B:") for n in names)
    assert set(chain.empirical()) == {"B: H1_s >~ H1_M", "C: 1D H1_s >~ H1_M",
                                      "D: 1D H1_s >~ H1_M"}
