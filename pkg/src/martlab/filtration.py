"""One- and two-parameter filtrations on a finite space.

A :class:`FiltrationGrid` with ``rows = N1`` and ``cols = N2`` holds the
``(N1 + 1) x (N2 + 1)`` partitions ``F[i][j]``.  Adapted sequences on a grid
are arrays of shape ``(N1 + 1, N2 + 1, n_atoms)`` whose ``[i, j]`` slice is
``F[i][j]``-measurable.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .prob import (Conditioner, FiniteProbSpace, InvalidInput, Partition,
                   join_all, meet, refines)

DEFAULT_ATOM_CAP = 4096
F4_TOL = 1e-12


def prev(k: int) -> int:
    """Index shift with clamping at zero, ``max(k - 1, 0)``."""
    return max(k - 1, 0)


class Filtration1D:
    """A nondecreasing sequence of partitions starting from the trivial one."""

    def __init__(self, space: FiniteProbSpace, parts):
        parts = list(parts)
        if not parts:
            raise InvalidInput("a filtration needs at least one sigma-algebra")
        for P in parts:
            if P.n != space.n:
                raise InvalidInput("partition and space disagree on the atom count")
        if parts[0].block_count != 1:
            raise InvalidInput("the first sigma-algebra of a filtration must be trivial")
        for k in range(len(parts) - 1):
            if not refines(parts[k + 1], parts[k]):
                raise InvalidInput(f"filtration decreases between levels {k} and {k + 1}")
        self.space = space
        self.parts = tuple(parts)

    @property
    def N(self) -> int:
        return len(self.parts) - 1

    @cached_property
    def _cond(self):
        return [Conditioner(self.space, P) for P in self.parts]

    def E(self, k: int, X) -> np.ndarray:
        if not 0 <= k <= self.N:
            raise IndexError(f"level {k} outside 0..{self.N}")
        return self._cond[k](X)

    def is_adapted(self, Y, tol: float = 1e-12) -> bool:
        Y = np.asarray(Y, dtype=float)
        return len(Y) == self.N + 1 and all(
            P.is_measurable(Y[k], tol) for k, P in enumerate(self.parts))

    def __eq__(self, other):
        return (isinstance(other, Filtration1D) and self.space == other.space
                and self.parts == other.parts)

    def __repr__(self):
        return f"Filtration1D(N={self.N}, atoms={self.space.n})"


def prev_shift_1d(F: Filtration1D) -> Filtration1D:
    return Filtration1D(F.space, [F.parts[prev(k)] for k in range(F.N + 1)])


@dataclass(frozen=True)
class F4Report:
    passed: bool
    worst_defect: float
    witness: tuple[int, int, int, int]
    method: str
    tolerance: float


class FiltrationGrid:
    """Doubly indexed filtration ``F[i][j]``, ``0 <= i <= rows``, ``0 <= j <= cols``.

    Monotonicity in both indices is validated on construction.  With
    ``certify=True`` the (F4) commutation condition is checked as well and
    a failure raises :class:`~martlab.prob.InvalidInput`.
    """

    def __init__(self, space: FiniteProbSpace, parts, *, certify: bool = False,
                 f4_tolerance: float = F4_TOL):
        parts = tuple(tuple(row) for row in parts)
        if not parts or not parts[0]:
            raise InvalidInput("a grid needs at least one sigma-algebra")
        width = len(parts[0])
        if any(len(row) != width for row in parts):
            raise InvalidInput("grid rows have different lengths")
        for row in parts:
            for P in row:
                if P.n != space.n:
                    raise InvalidInput("partition and space disagree on the atom count")
        for i, j in itertools.product(range(len(parts)), range(width)):
            if i + 1 < len(parts) and not refines(parts[i + 1][j], parts[i][j]):
                raise InvalidInput(f"grid not monotone between ({i},{j}) and ({i + 1},{j})")
            if j + 1 < width and not refines(parts[i][j + 1], parts[i][j]):
                raise InvalidInput(f"grid not monotone between ({i},{j}) and ({i},{j + 1})")
        self.space = space
        self.parts = parts
        self.f4_tolerance = float(f4_tolerance)
        self.certified_f4 = False
        if certify:
            report = check_f4(self, f4_tolerance)
            if not report.passed:
                raise InvalidInput(
                    f"(F4) fails: defect {report.worst_defect:.3g} at {report.witness}")
            self.certified_f4 = True

    @property
    def rows(self) -> int:
        return len(self.parts) - 1

    @property
    def cols(self) -> int:
        return len(self.parts[0]) - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows + 1, self.cols + 1

    def indices(self):
        return itertools.product(range(self.rows + 1), range(self.cols + 1))

    @cached_property
    def _cond(self):
        return [[Conditioner(self.space, P) for P in row] for row in self.parts]

    @cached_property
    def _row_cond(self):
        return [Conditioner(self.space, row_sigma(self, i)) for i in range(self.rows + 1)]

    @cached_property
    def _col_cond(self):
        return [Conditioner(self.space, col_sigma(self, j)) for j in range(self.cols + 1)]

    def conditioner(self, i: int, j: int) -> Conditioner:
        """Conditioner for ``F[i][j]``; ``None`` for an index means infinity."""
        if i is None and j is None:
            raise InvalidInput("F_{inf,inf} is the ambient sigma-algebra")
        if i is None:
            return self._col_cond[j]
        if j is None:
            return self._row_cond[i]
        return self._cond[i][j]

    def E(self, i, j, X) -> np.ndarray:
        return self.conditioner(i, j)(X)

    def __eq__(self, other):
        return (isinstance(other, FiltrationGrid) and self.space == other.space
                and self.parts == other.parts
                and self.certified_f4 == other.certified_f4)

    def __repr__(self):
        return (f"FiltrationGrid(rows={self.rows}, cols={self.cols}, "
                f"atoms={self.space.n}, certified_f4={self.certified_f4})")

    # adapted sequences

    def is_adapted(self, X, tol: float = 1e-12) -> bool:
        X = np.asarray(X, dtype=float)
        if X.shape[:2] != self.shape:
            return False
        return all(self.parts[i][j].is_measurable(X[i, j], tol) for i, j in self.indices())

    def check_adapted(self, X, tol: float = 1e-9) -> np.ndarray:
        X = self.space.check(X)
        if X.shape[-3:-1] != self.shape:
            raise InvalidInput(f"sequence of shape {X.shape} does not fit grid {self.shape}")
        for i, j in self.indices():
            if not self.parts[i][j].is_measurable(X[..., i, j, :], tol):
                raise InvalidInput(f"entry ({i},{j}) is not F_{{{i},{j}}}-measurable")
        return X

    def adapt(self, X) -> np.ndarray:
        """Project every entry onto its own sigma-algebra."""
        X = self.space.check(X)
        out = np.empty_like(X)
        for i, j in self.indices():
            out[..., i, j, :] = self.E(i, j, X[..., i, j, :])
        return out

    def lift(self, f) -> np.ndarray:
        """The martingale ``(E_{i,j} f)``, shape ``(rows + 1, cols + 1, ...)``."""
        f = self.space.check(f)
        return np.stack([np.stack([self.E(i, j, f) for j in range(self.cols + 1)])
                         for i in range(self.rows + 1)])


def row_sigma(G: FiltrationGrid, i: int) -> Partition:
    """``F_{i,inf}``: the join of row ``i``."""
    if not 0 <= i <= G.rows:
        raise IndexError(f"row {i} outside 0..{G.rows}")
    return join_all(G.parts[i])


def col_sigma(G: FiltrationGrid, j: int) -> Partition:
    """``F_{inf,j}``: the join of column ``j``."""
    if not 0 <= j <= G.cols:
        raise IndexError(f"column {j} outside 0..{G.cols}")
    return join_all(row[j] for row in G.parts)


def marginals(G: FiltrationGrid) -> tuple[Filtration1D, Filtration1D]:
    """The two one-parameter marginal filtrations ``(F_{i,inf})_i``, ``(F_{inf,j})_j``.

    A trivial level is prepended so each starts from the trivial sigma-algebra.
    """
    trivial = Partition.trivial(G.space.n)
    rows = [trivial] + [row_sigma(G, i) for i in range(G.rows + 1)]
    cols = [trivial] + [col_sigma(G, j) for j in range(G.cols + 1)]
    return Filtration1D(G.space, rows), Filtration1D(G.space, cols)


def prev_shift(G: FiltrationGrid) -> FiltrationGrid:
    shifted = [[G.parts[prev(i)][prev(j)] for j in range(G.cols + 1)]
               for i in range(G.rows + 1)]
    out = FiltrationGrid(G.space, shifted, f4_tolerance=G.f4_tolerance)
    # index pairs of the shift are closed under coordinatewise min
    out.certified_f4 = G.certified_f4
    return out


# (F4) verification


def _product_defect(space, P: Partition, Q: Partition, R: Partition, chunk=512):
    """max_{a,b} |(E_P E_Q)[a,b] - E_R[a,b]| without forming n x n matrices.

    (E_P E_Q)[a, b] = p_b P(P(a) & Q(b)) / (P(P(a)) P(Q(b))) and
    E_R[a, b] = 1{R(a) = R(b)} p_b / P(R(a)).
    """
    p = space.probs
    mP = np.bincount(P.labels, p, P.block_count)
    mQ = np.bincount(Q.labels, p, Q.block_count)
    mR = np.bincount(R.labels, p, R.block_count)
    joint = np.zeros((P.block_count, Q.block_count))
    np.add.at(joint, (P.labels, Q.labels), p)
    # rows depend on a only through (P(a), R(a)); columns on b through (Q(b), R(b))
    left = np.unique(np.stack([P.labels, R.labels], 1), axis=0)
    right_keys, right_inv = np.unique(np.stack([Q.labels, R.labels], 1), axis=0,
                                      return_inverse=True)
    right_p = np.zeros(len(right_keys))
    np.maximum.at(right_p, right_inv.ravel(), p)
    worst = 0.0
    for start in range(0, len(left), chunk):
        lp, lr = left[start:start + chunk].T
        prod = joint[lp][:, right_keys[:, 0]] / (mP[lp, None] * mQ[right_keys[:, 0]])
        target = (lr[:, None] == right_keys[:, 1]) / mR[lr, None]
        worst = max(worst, float(np.max(right_p * np.abs(prod - target))))
    return worst


def _dense_operator(space, P: Partition) -> np.ndarray:
    same = P.labels[:, None] == P.labels[None, :]
    mass = np.bincount(P.labels, space.probs)[P.labels]
    return same * space.probs[None, :] / mass[:, None]


def check_f4(G: FiltrationGrid, tol: float = F4_TOL, method: str = "marginal") -> F4Report:
    """Check ``E_{i,j} E_{k,l} = E_{min(i,k),min(j,l)} = E_{k,l} E_{i,j}``.

    ``method="marginal"`` verifies ``E_{i,inf} E_{inf,j} = E_{i,j} =
    E_{inf,j} E_{i,inf}`` for every ``(i, j)``, which implies the general
    identity on a monotone grid; the witness is reported as
    ``(i, cols, rows, j)`` since ``F_{i,inf} = F_{i,cols}``.
    ``method="all-pairs"`` multiplies the dense averaging matrices for every
    pair of grid points.
    """
    worst, witness = 0.0, (0, 0, 0, 0)
    if method == "marginal":
        for i, j in G.indices():
            Pi, Qj, R = row_sigma(G, i), col_sigma(G, j), G.parts[i][j]
            d = max(_product_defect(G.space, Pi, Qj, R),
                    _product_defect(G.space, Qj, Pi, R))
            if d > worst:
                worst, witness = d, (i, G.cols, G.rows, j)
    elif method == "all-pairs":
        ops = {(i, j): _dense_operator(G.space, G.parts[i][j]) for i, j in G.indices()}
        for (i, j), (k, l) in itertools.product(ops, ops):
            if (k, l) < (i, j):
                continue
            target = ops[min(i, k), min(j, l)]
            d = max(np.max(np.abs(ops[i, j] @ ops[k, l] - target)),
                    np.max(np.abs(ops[k, l] @ ops[i, j] - target)))
            if d > worst:
                worst, witness = float(d), (i, j, k, l)
    else:
        raise InvalidInput(f"unknown (F4) check method {method!r}")
    return F4Report(worst <= tol, worst, witness, method, tol)


def conditionally_independent(space: FiniteProbSpace, P: Partition, Q: Partition,
                              tol: float = F4_TOL) -> bool:
    """``E_P E_Q = E_{P ^ Q} = E_Q E_P`` up to ``tol``."""
    R = meet(P, Q)
    return max(_product_defect(space, P, Q, R), _product_defect(space, Q, P, R)) <= tol


# constructions


def product_space(factors, cap: int = DEFAULT_ATOM_CAP) -> FiniteProbSpace:
    sizes = [f.n for f in factors]
    if int(np.prod(sizes, dtype=np.int64)) > cap:
        raise InvalidInput(f"product of {sizes} atoms exceeds the cap {cap}")
    probs = np.ones(1)
    for f in factors:
        probs = np.multiply.outer(probs, f.probs).ravel()
    return FiniteProbSpace(probs / probs.sum())


def build_product_grid(row_factors, col_factors, cap: int = DEFAULT_ATOM_CAP):
    """Product space with ``F[i][j]`` generated by the first ``i`` row
    coordinates and the first ``j`` column coordinates.

    Returns ``(space, grid)``; the grid is (F4)-certified.
    """
    factors = list(row_factors) + list(col_factors)
    space = product_space(factors, cap)
    sizes = [f.n for f in factors] or [1]
    coords = np.indices(sizes).reshape(len(sizes), -1) if factors else np.zeros((0, 1), int)
    a = len(row_factors)

    def generated(idx):
        if not idx:
            return Partition.trivial(space.n)
        return Partition(np.ravel_multi_index(coords[idx], [sizes[k] for k in idx]))

    parts = [[generated(list(range(i)) + list(range(a, a + j)))
              for j in range(len(col_factors) + 1)]
             for i in range(a + 1)]
    return space, FiltrationGrid(space, parts, certify=True)


def dirichlet_factor(rng: np.random.Generator, size: int, alpha: float = 1.0,
                     floor: float = 1e-3) -> FiniteProbSpace:
    if size < 1:
        raise InvalidInput("factor sizes must be >= 1")
    if size == 1:
        return FiniteProbSpace([1.0])
    w = np.maximum(rng.dirichlet(np.full(size, float(alpha))), floor)
    return FiniteProbSpace(w / w.sum())


def random_grid(seed, row_factor_sizes, col_factor_sizes, alpha: float = 1.0,
                cap: int = DEFAULT_ATOM_CAP):
    """Random product grid; factor laws are floored symmetric Dirichlet draws."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rows = [dirichlet_factor(rng, s, alpha) for s in row_factor_sizes]
    cols = [dirichlet_factor(rng, s, alpha) for s in col_factor_sizes]
    return build_product_grid(rows, cols, cap)


def warn_uncertified(G: FiltrationGrid) -> None:
    if not G.certified_f4:
        warnings.warn("grid is not (F4)-certified; using the product formula for "
                      "two-parameter differences", NotF4Warning, stacklevel=3)


class NotF4Warning(UserWarning):
    pass
