"""Martingale differences, square and maximal functions, Hardy norms.

One-parameter conventions: ``delta_0 = E_0`` and ``E_{-1} = E_0``.  In two
parameters the difference at ``(i, j)`` is the composition of the
one-parameter differences of the marginal filtrations ``(F_{i,inf})_i`` and
``(F_{inf,j})_j``, with the same ``index 0`` convention in each parameter.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .filtration import (Filtration1D, FiltrationGrid, conditionally_independent,
                         prev, warn_uncertified)
from .prob import Conditioner, FiniteProbSpace, InvalidInput, Partition, lp_norm


class UncertifiedPairWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HardyNorms:
    h1S: float
    h1s: float
    h1M: float


# one parameter


def delta_1d(F: Filtration1D, k: int, f) -> np.ndarray:
    if not 0 <= k <= F.N:
        raise IndexError(f"level {k} outside 0..{F.N}")
    if k == 0:
        return F.E(0, f)
    return F.E(k, f) - F.E(k - 1, f)


def deltas_1d(F: Filtration1D, f) -> np.ndarray:
    """All differences stacked, shape ``(N + 1, n)``."""
    levels = np.stack([F.E(k, f) for k in range(F.N + 1)])
    return np.diff(levels, axis=0, prepend=0.0)


def square_fn_1d(F: Filtration1D, f) -> np.ndarray:
    return np.sqrt(np.sum(deltas_1d(F, f) ** 2, axis=0))


def cond_square_fn_1d(F: Filtration1D, f) -> np.ndarray:
    d2 = deltas_1d(F, f) ** 2
    return np.sqrt(sum(F.E(prev(k), d2[k]) for k in range(F.N + 1)))


def maximal_fn(space: FiniteProbSpace, family, f) -> np.ndarray:
    """``sup_k |E_{G_k} f|`` over an arbitrary (unordered) family of partitions."""
    family = list(family)
    if not family:
        raise InvalidInput("maximal function of an empty family")
    return np.max([np.abs(Conditioner(space, P)(f)) for P in family], axis=0)


def hardy_norms_1d(F: Filtration1D, f) -> HardyNorms:
    sp = F.space
    return HardyNorms(sp.expect(square_fn_1d(F, f)),
                      sp.expect(cond_square_fn_1d(F, f)),
                      sp.expect(maximal_fn(sp, F.parts, f)))


# two parameters


def _row_deltas(G: FiltrationGrid, f) -> np.ndarray:
    # (E_{i,inf} - E_{i-1,inf}) f with E_{-1,inf} := 0
    levels = np.stack([G.E(i, None, f) for i in range(G.rows + 1)])
    return np.diff(levels, axis=0, prepend=0.0)


def _col_deltas(G: FiltrationGrid, g) -> np.ndarray:
    levels = np.stack([G.E(None, j, g) for j in range(G.cols + 1)])
    return np.diff(levels, axis=0, prepend=0.0)


def delta_2d(G: FiltrationGrid, i: int, j: int, f) -> np.ndarray:
    if not (0 <= i <= G.rows and 0 <= j <= G.cols):
        raise IndexError(f"({i},{j}) outside the grid {G.shape}")
    warn_uncertified(G)
    g = G.E(i, None, f) - (G.E(i - 1, None, f) if i else 0.0)
    return G.E(None, j, g) - (G.E(None, j - 1, g) if j else 0.0)


def deltas_2d(G: FiltrationGrid, f) -> np.ndarray:
    """All two-parameter differences, shape ``(rows + 1, cols + 1, n)``."""
    warn_uncertified(G)
    rows = _row_deltas(G, G.space.check(f))
    return np.stack([_col_deltas(G, g) for g in rows])


def square_fn_2d(G: FiltrationGrid, f) -> np.ndarray:
    return np.sqrt(np.sum(deltas_2d(G, f) ** 2, axis=(0, 1)))


def cond_square_fn_2d(G: FiltrationGrid, f) -> np.ndarray:
    d2 = deltas_2d(G, f) ** 2
    return np.sqrt(sum(G.E(prev(i), prev(j), d2[i, j]) for i, j in G.indices()))


def grid_maximal_fn(G: FiltrationGrid, f) -> np.ndarray:
    """``sup_{i,j} |E_{i,j} f|`` over every grid point."""
    return np.max(np.abs(G.lift(f)), axis=(0, 1))


def hardy_norms(G: FiltrationGrid, f) -> HardyNorms:
    sp = G.space
    return HardyNorms(sp.expect(square_fn_2d(G, f)),
                      sp.expect(cond_square_fn_2d(G, f)),
                      sp.expect(grid_maximal_fn(G, f)))


# conditional-independence and maximal-function checks


def fveeg_sides(space: FiniteProbSpace, F: Partition, Gp: Partition, X):
    """Both sides of ``E_F (E_G X^2)^(1/2) >= (E_G (E_F X)^2)^(1/2)``."""
    EF, EG = Conditioner(space, F), Conditioner(space, Gp)
    X = space.check(X)
    lhs = EF(np.sqrt(EG(X ** 2)))
    rhs = np.sqrt(EG(EF(X) ** 2))
    return lhs, rhs


def fveeg_gap(space: FiniteProbSpace, F: Partition, Gp: Partition, X) -> float:
    """Smallest pointwise slack in the conditional-independence square-root inequality.

    The inequality is only claimed for conditionally independent ``F`` and
    ``Gp``; other pairs still get a value, with an :class:`UncertifiedPairWarning`.
    """
    if F.n != Gp.n:
        raise InvalidInput("partitions live on different spaces")
    if not conditionally_independent(space, F, Gp):
        warnings.warn("pair is not conditionally independent", UncertifiedPairWarning,
                      stacklevel=2)
    lhs, rhs = fveeg_sides(space, F, Gp, X)
    return float(np.min(lhs - rhs))


def doob_ratio(space: FiniteProbSpace, family, X, p: float) -> float:
    """``||M X||_p / ||X||_p`` for the maximal function of ``family``."""
    if not 1 < p < np.inf:
        raise InvalidInput(f"Doob ratio needs 1 < p < inf, got {p}")
    norm = lp_norm(space, X, p)
    if norm == 0:
        raise InvalidInput("Doob ratio of the zero variable")
    return lp_norm(space, maximal_fn(space, family, X), p) / norm
