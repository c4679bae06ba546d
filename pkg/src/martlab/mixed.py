"""Mixed norms ``L^q(V, l^p | U)``, convexification, interpolation sums and
the explicit duality witness for the mixed-norm pairing.

An :class:`AdaptedFamily` is a finite list of random variables ``X_k`` with
two partition families ``U_k`` (conditioning) and ``V_k`` (measurability).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prob import Conditioner, FiniteProbSpace, InvalidInput, Partition, refines
from .solver import GroupNorm, SolverReport, generic_split, split_minimize, split_subgradient


@dataclass(frozen=True)
class ExponentPair:
    p: float
    q: float

    def __post_init__(self):
        if not (1 < self.p < np.inf and 1 < self.q < np.inf):
            raise InvalidInput(f"exponents must lie in (1, inf), got ({self.p}, {self.q})")

    @property
    def p_conj(self) -> float:
        return self.p / (self.p - 1)

    @property
    def q_conj(self) -> float:
        return self.q / (self.q - 1)

    def dual(self) -> "ExponentPair":
        return ExponentPair(self.p_conj, self.q_conj)


class AdaptedFamily:
    """Random variables ``X[k]`` with conditioning partitions ``U[k]`` and
    measurability partitions ``V[k]``."""

    def __init__(self, space: FiniteProbSpace, X, U, V=None, *, nested: bool = False,
                 tol: float = 1e-9):
        X = space.check(np.atleast_2d(np.asarray(X, dtype=float)))
        U = list(U)
        V = list(V) if V is not None else [Partition.singletons(space.n)] * len(U)
        if not (len(X) == len(U) == len(V)):
            raise InvalidInput("X, U and V must have the same length")
        for k, Vk in enumerate(V):
            if not Vk.is_measurable(X[k], tol):
                raise InvalidInput(f"X[{k}] is not V[{k}]-measurable")
        if nested:
            for k, (Uk, Vk) in enumerate(zip(U, V)):
                if not refines(Vk, Uk):
                    raise InvalidInput(f"U[{k}] is not contained in V[{k}]")
        # snap roundoff so that nonlinear maps of X stay exactly measurable
        X = np.stack([Conditioner(space, Vk)(X[k]) if Vk.block_count < space.n else X[k]
                      for k, Vk in enumerate(V)])
        self.space, self.X, self.U, self.V = space, X, tuple(U), tuple(V)

    def __len__(self):
        return len(self.X)

    def with_values(self, Y) -> "AdaptedFamily":
        return AdaptedFamily(self.space, Y, self.U, self.V)

    def conditioned(self, Y) -> np.ndarray:
        """``E_{U_k} Y_k`` for every ``k``."""
        return np.stack([Conditioner(self.space, Uk)(Y[k]) for k, Uk in enumerate(self.U)])


def inner_function(F: AdaptedFamily, p: float, X=None) -> np.ndarray:
    """``s = (sum_k E_{U_k} |X_k|^p)^(1/p)``; ``p = inf`` gives the sup of
    blockwise maxima."""
    X = F.X if X is None else X
    if np.isinf(p):
        out = np.zeros(F.space.n)
        for k, Uk in enumerate(F.U):
            block_max = np.zeros(Uk.block_count)
            np.maximum.at(block_max, Uk.labels, np.abs(X[k]))
            out = np.maximum(out, block_max[Uk.labels])
        return out
    return F.conditioned(np.abs(X) ** p).sum(axis=0) ** (1.0 / p)


def mixed_norm(F: AdaptedFamily, p: float, q: float) -> float:
    """``(E (sum_k E_{U_k} |X_k|^p)^(q/p))^(1/q)`` for ``p, q`` in ``[1, inf]``."""
    if not (p >= 1 and q >= 1):
        raise InvalidInput(f"mixed norm needs p, q >= 1, got ({p}, {q})")
    s = inner_function(F, p)
    if np.isinf(q):
        return float(s.max())
    return float((s ** q @ F.space.probs) ** (1.0 / q))


def lq_lp_norm(space: FiniteProbSpace, X, p: float, q: float) -> float:
    """``(E (sum_k |X_k|^p)^(q/p))^(1/q)``, the unconditioned ``L^q(l^p)`` norm."""
    X = np.abs(space.check(np.atleast_2d(X)))
    s = (X ** p).sum(axis=0) ** (1.0 / p)
    return float((s ** q @ space.probs) ** (1.0 / q))


def pairing(X, Y) -> float:
    """``<X, Y> = sum_k E X_k Y_k`` for two families on the same space."""
    Xv = X.X if isinstance(X, AdaptedFamily) else np.asarray(X, dtype=float)
    Yv = Y.X if isinstance(Y, AdaptedFamily) else np.asarray(Y, dtype=float)
    if Xv.shape != Yv.shape:
        raise InvalidInput(f"pairing of shapes {Xv.shape} and {Yv.shape}")
    space = X.space if isinstance(X, AdaptedFamily) else Y.space
    return float(np.sum((Xv * Yv) @ space.probs))


def holder_exponents(p: float, q: float) -> tuple[float, float]:
    """Conjugate Hoelder exponents ``(alpha, beta)`` used to bound the witness norm.

    ``1/alpha = q' p / (q p')`` and ``1/beta = (q - p) q' / q``.

    >>> holder_exponents(2, 4)
    (3.0, 1.5)
    """
    if not 1 < p < q < np.inf:
        raise InvalidInput(f"need 1 < p < q < inf, got ({p}, {q})")
    e = ExponentPair(p, q)
    inv_alpha = e.q_conj * p / (q * e.p_conj)
    inv_beta = (q - p) * e.q_conj / q
    if abs(inv_alpha + inv_beta - 1) > 1e-12:
        raise ArithmeticError("Hoelder exponents are not conjugate")
    return 1.0 / inv_alpha, 1.0 / inv_beta


def dual_witness(F: AdaptedFamily, p: float, q: float) -> AdaptedFamily:
    """``Y_k = |X_k|^(p-1) E_{U_k}[s^(q-p)] sgn X_k`` with ``s`` the inner function.

    Pairs with ``X`` to exactly ``E s^q``.  Where ``s = 0`` the variable
    ``X_k`` vanishes on the whole ``U_k``-block, so ``s^(q-p)`` is set to 0
    there even when ``q < p``.
    """
    if not np.any(F.X):
        raise InvalidInput("dual witness of the zero family")
    s = inner_function(F, p)
    with np.errstate(divide="ignore"):
        spow = np.where(s > 0, s ** (q - p), 0.0)
    weight = np.stack([Conditioner(F.space, Uk)(spow) for Uk in F.U])
    Y = np.abs(F.X) ** (p - 1) * weight * np.sign(F.X)
    return F.with_values(Y)


@dataclass(frozen=True)
class DualityReport:
    ratio: float
    pairing: float
    norm_x: float
    norm_witness: float
    expected_pairing: float

    @property
    def lower(self) -> float:
        return self.ratio

    @property
    def upper(self) -> float:
        return 1.0


def duality_defect(F: AdaptedFamily, p: float, q: float) -> DualityReport:
    """How close the canonical witness comes to norming ``X``:
    ``<X, Y> / (||X||_{L^q(l^p|U)} ||Y||_{L^q'(l^p'|U)})``."""
    e = ExponentPair(p, q)
    Y = dual_witness(F, p, q)
    pair = pairing(F, Y)
    nx = mixed_norm(F, p, q)
    ny = mixed_norm(Y, e.p_conj, e.q_conj)
    expected = float(inner_function(F, p) ** q @ F.space.probs)
    return DualityReport(pair / (nx * ny), pair, nx, ny, expected)


# evaluators and interpolation


def convexify(norm, alpha: float):
    """``X -> norm(|X|^alpha)^(1/alpha)``."""
    if not alpha > 0:
        raise InvalidInput(f"convexification exponent must be > 0, got {alpha}")
    if alpha == 1:
        return norm

    def convexified(X):
        return norm(np.abs(X) ** alpha) ** (1.0 / alpha)

    return convexified


def intersection_norm(evaluators, X) -> float:
    return float(sum(N(X) for N in evaluators))


def l1_norm_evaluator(space: FiniteProbSpace, count: int = 1) -> GroupNorm:
    """``sum_k E|X_k|`` on flattened ``(count, n)`` arrays."""
    dim = count * space.n
    idx = np.arange(dim)
    return GroupNorm(np.tile(space.probs, count), idx, idx, np.ones(dim), dim)


def l2_norm_evaluator(space: FiniteProbSpace, count: int = 1) -> GroupNorm:
    """``(sum_k E X_k^2)^(1/2)`` on flattened ``(count, n)`` arrays."""
    dim = count * space.n
    return GroupNorm([1.0], np.zeros(dim, dtype=np.int64), np.arange(dim),
                     np.sqrt(np.tile(space.probs, count)), dim)


def square_function_evaluator(space: FiniteProbSpace, U, offsets=None,
                              dim: int | None = None) -> GroupNorm:
    """``E (sum_k E_{U_k} X_k^2)^(1/2)``, i.e. ``L^1(l^2 | U)``.

    ``X_k`` is read from ``x[offsets[k] : offsets[k] + n]`` of a flat vector
    of length ``dim`` (default: consecutive blocks).
    """
    n, p = space.n, space.probs
    U = list(U)
    offsets = np.arange(len(U)) * n if offsets is None else np.asarray(offsets)
    dim = len(U) * n if dim is None else dim
    group, col, coef = [], [], []
    for off, Uk in zip(offsets, U):
        mass = np.bincount(Uk.labels, p)
        for block in Uk.blocks():
            block = np.asarray(block)
            # every atom of the block sees every atom of the block
            group.append(np.repeat(block, block.size))
            col.append(off + np.tile(block, block.size))
            coef.append(np.tile(np.sqrt(p[block] / mass[Uk.labels[block[0]]]), block.size))
    return GroupNorm(p, np.concatenate(group), np.concatenate(col),
                     np.concatenate(coef), dim).fused()


def sum_evaluators(norms, dim: int) -> GroupNorm:
    """Sum of group norms on the same flat space, as one group norm."""
    weights, group, col, coef = [], [], [], []
    g0 = 0
    for N in norms:
        weights.append(N.weights)
        group.append(g0 + N.group)
        col.append(N.col)
        coef.append(N.coef)
        g0 += N.n_groups
    return GroupNorm(np.concatenate(weights), np.concatenate(group),
                     np.concatenate(col), np.concatenate(coef), dim)


@dataclass
class InterpolationResult:
    value: float
    parts: list
    report: SolverReport


def interpolation_sum_norm(evaluators, X, *, coord_of=None, project=None,
                           method: str = "auto", tol: float = 1e-6,
                           max_iter: int = 20000, start: int | None = None) -> InterpolationResult:
    """``inf { sum_k N_k(a_k) : sum_k a_k = X }``.

    With :class:`GroupNorm` evaluators the problem is solved by the
    certified primal-dual method (``method="pdhg"``, the default) or by
    projected subgradient (``method="subgradient"``).  ``coord_of`` restricts
    every part to the block-expansion subspace ``x = z[coord_of]``, which
    must contain ``X``.  Arbitrary callables fall back to the generic
    subgradient path, with ``project`` mapping parts back to the subspace.
    ``start`` is the index of the part that initially carries all of ``X``
    (default: the last one).
    """
    evaluators = list(evaluators)
    if not evaluators:
        raise InvalidInput("interpolation sum of no norms")
    X = np.asarray(X, dtype=float)
    structured = all(isinstance(N, GroupNorm) for N in evaluators)
    if not structured:
        res = generic_split(evaluators, X, project, tol=tol, max_iter=min(max_iter, 2000))
        parts = [p.reshape(X.shape) for p in res.parts]
        rep = SolverReport(res.objective, None, res.iterations, res.converged,
                           "generic-subgradient", [float(N(a)) for N, a in zip(evaluators, parts)])
        return InterpolationResult(res.objective, parts, rep)

    flat = X.ravel()
    if coord_of is not None:
        coord_of = np.asarray(coord_of)
        dim = int(coord_of.max()) + 1
        z = np.zeros(dim)
        z[coord_of] = flat
        if not np.allclose(z[coord_of], flat, atol=1e-12, rtol=1e-9):
            raise InvalidInput("target is not in the admissible subspace")
        norms = [N.compose(coord_of, dim) for N in evaluators]
    else:
        z, norms = flat, evaluators
    init = None
    if start is not None and start % len(norms) != len(norms) - 1:
        init = np.zeros((len(norms) - 1, z.size))
        init[start % len(norms)] = z
    if method in ("auto", "pdhg"):
        res = split_minimize(norms, z, init, tol=tol, max_iter=max_iter)
        name = "pdhg"
    elif method == "subgradient":
        res = split_subgradient(norms, z, init, tol=tol, max_iter=max_iter)
        name = "subgradient"
    else:
        raise InvalidInput(f"unknown method {method!r}")
    parts = [(p[coord_of] if coord_of is not None else p).reshape(X.shape) for p in res.parts]
    terms = [float(N(a.ravel())) for N, a in zip(evaluators, parts)]
    rep = SolverReport(float(sum(terms)), res.lower_bound, res.iterations, res.converged,
                       name, terms, float(np.max(np.abs(sum(parts) - X))) if parts else 0.0)
    return InterpolationResult(rep.objective, parts, rep)
