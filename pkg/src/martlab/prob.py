"""Finite probability spaces, partitions and conditional expectation.

Every sigma-algebra on a finite space is generated by a partition of the
atoms, so a :class:`Partition` is stored as one block label per atom.
Conditional expectation onto a partition is the probability-weighted block
average.  Random variables are plain ``numpy`` arrays whose last axis runs
over atoms; leading axes are treated as a batch.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

PROB_TOL = 1e-12


class InvalidInput(ValueError):
    """Raised on malformed spaces, partitions or random variables."""


class FiniteProbSpace:
    """A finite set of atoms with strictly positive probabilities.

    >>> FiniteProbSpace([0.25, 0.75]).n
    2
    """

    def __init__(self, probs):
        probs = np.array(probs, dtype=float).ravel()
        if probs.size < 1:
            raise InvalidInput("a probability space needs at least one atom")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
            raise InvalidInput("atom probabilities must be finite and > 0")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise InvalidInput(f"probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        self.probs = probs

    @classmethod
    def uniform(cls, n: int) -> "FiniteProbSpace":
        return cls(np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.probs.size

    def expect(self, X) -> np.ndarray | float:
        """Expectation along the atom axis."""
        X = self.check(X)
        out = X @ self.probs
        return float(out) if np.ndim(out) == 0 else out

    def check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 0 or X.shape[-1] != self.n:
            raise InvalidInput(
                f"random variable of shape {X.shape} does not live on {self.n} atoms")
        return X

    def __eq__(self, other):
        return (isinstance(other, FiniteProbSpace)
                and np.array_equal(self.probs, other.probs))

    def __hash__(self):
        return hash(self.probs.tobytes())

    def __repr__(self):
        return f"FiniteProbSpace({self.probs.tolist()})"


def _canonical(labels: np.ndarray) -> np.ndarray:
    # Relabel blocks 0, 1, 2, ... in order of first occurrence.
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse.ravel()]


class Partition:
    """A partition of ``n`` atoms, i.e. a finite sigma-algebra.

    Labels are canonicalised on construction, so two partitions are equal
    exactly when their label arrays are.

    >>> Partition([5, 5, 2, 2]).labels.tolist()
    [0, 0, 1, 1]
    """

    def __init__(self, labels):
        labels = np.asarray(labels)
        if labels.ndim != 1 or labels.size < 1:
            raise InvalidInput("partition labels must be a nonempty 1-d sequence")
        if labels.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise InvalidInput("partition labels must be integers")
        labels = _canonical(labels.astype(np.int64))
        labels.setflags(write=False)
        self.labels = labels

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls(np.zeros(n, dtype=np.int64))

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(np.arange(n))

    @classmethod
    def from_blocks(cls, blocks, n: int | None = None) -> "Partition":
        """Build from a list of atom-index blocks covering ``range(n)``."""
        blocks = [list(b) for b in blocks]
        n = sum(len(b) for b in blocks) if n is None else n
        labels = np.full(n, -1, dtype=np.int64)
        for k, block in enumerate(blocks):
            if np.any(labels[block] >= 0):
                raise InvalidInput("blocks overlap")
            labels[block] = k
        if np.any(labels < 0):
            raise InvalidInput("blocks do not cover every atom")
        return cls(labels)

    @property
    def n(self) -> int:
        return self.labels.size

    @cached_property
    def block_count(self) -> int:
        return int(self.labels.max()) + 1

    def blocks(self) -> list[list[int]]:
        out = [[] for _ in range(self.block_count)]
        for atom, b in enumerate(self.labels.tolist()):
            out[b].append(atom)
        return out

    def is_measurable(self, X, tol: float = 1e-12) -> bool:
        """True if ``X`` is constant on every block (along the atom axis)."""
        X = np.asarray(X, dtype=float)
        _, first = np.unique(self.labels, return_index=True)
        rep = X[..., first][..., self.labels]
        return bool(np.all(np.abs(X - rep) <= tol * np.maximum(1.0, np.abs(rep))))

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.labels.tobytes())

    def __repr__(self):
        return f"Partition({self.labels.tolist()})"


def _same_space(P: Partition, Q: Partition) -> None:
    if P.n != Q.n:
        raise InvalidInput(f"partitions live on {P.n} and {Q.n} atoms")


class Conditioner:
    """Cached conditional expectation onto one partition.

    Applying it is the probability-weighted block average along the last
    axis; leading axes are a batch.
    """

    def __init__(self, space: FiniteProbSpace, P: Partition):
        if P.n != space.n:
            raise InvalidInput(f"partition on {P.n} atoms, space has {space.n}")
        self.space = space
        self.partition = P
        self.mass = np.bincount(P.labels, weights=space.probs, minlength=P.block_count)
        self._sum = sparse.csr_matrix(
            (space.probs, (np.arange(space.n), P.labels)),
            shape=(space.n, P.block_count))
        self._sum_t = self._sum.T.tocsr()

    def block_means(self, X) -> np.ndarray:
        """Block averages, shape ``(..., block_count)``."""
        X = self.space.check(X)
        flat = X.reshape(-1, X.shape[-1])
        sums = np.asarray(self._sum_t @ flat.T).T
        return (sums / self.mass).reshape(X.shape[:-1] + (self.partition.block_count,))

    def __call__(self, X) -> np.ndarray:
        return self.block_means(X)[..., self.partition.labels]


def cond_expect(space: FiniteProbSpace, P: Partition, X) -> np.ndarray:
    """Conditional expectation of ``X`` given the sigma-algebra of ``P``.

    >>> sp = FiniteProbSpace.uniform(4)
    >>> cond_expect(sp, Partition([0, 0, 1, 1]), [1, 3, 5, 7]).tolist()
    [2.0, 2.0, 6.0, 6.0]
    """
    return Conditioner(space, P)(X)


def refines(P: Partition, Q: Partition) -> bool:
    """True iff ``P`` is finer than or equal to ``Q`` (sigma(Q) is inside sigma(P))."""
    _same_space(P, Q)
    q_of_block = np.empty(P.block_count, dtype=np.int64)
    q_of_block[P.labels] = Q.labels
    return bool(np.array_equal(q_of_block[P.labels], Q.labels))


def join(P: Partition, Q: Partition) -> Partition:
    """Coarsest common refinement (sigma(P) v sigma(Q))."""
    _same_space(P, Q)
    return Partition(P.labels * Q.block_count + Q.labels)


def meet(P: Partition, Q: Partition) -> Partition:
    """Finest common coarsening (sigma(P) ^ sigma(Q)).

    Blocks are the connected components of the relation "same P-block or
    same Q-block".
    """
    _same_space(P, Q)
    n, kp = P.n, P.block_count
    # bipartite graph: P-block nodes 0..kp-1, Q-block nodes kp..kp+kq-1
    graph = sparse.coo_matrix(
        (np.ones(n), (P.labels, kp + Q.labels)),
        shape=(kp + Q.block_count,) * 2)
    _, comp = connected_components(graph, directed=False)
    return Partition(comp[P.labels])


def join_all(parts) -> Partition:
    parts = list(parts)
    if not parts:
        raise InvalidInput("join of an empty family")
    out = parts[0]
    for P in parts[1:]:
        out = join(out, P)
    return out


def lp_norm(space: FiniteProbSpace, X, p: float) -> float:
    """``(E|X|^p)^(1/p)``; ``p = inf`` gives ``max |X|``."""
    if not p >= 1:
        raise InvalidInput(f"L^p norm needs p >= 1, got {p}")
    X = np.abs(space.check(X))
    if X.ndim != 1:
        raise InvalidInput("lp_norm takes a single random variable")
    if np.isinf(p):
        return float(X.max())
    top = X.max()
    if top == 0:
        return 0.0
    return float(top * ((X / top) ** p @ space.probs) ** (1.0 / p))
