"""Brute-force minimisation of the four-term objective on tiny instances.

Independent of the group-norm solver: candidates are built as explicit
adapted arrays and scored with :func:`rhs_objective`.  Parts vanish where
``X`` vanishes (every term is monotone in ``|P|`` pointwise, and zeroing a
block keeps adaptedness), so the free coordinates are the values of ``A``,
``B`` and ``C`` on the blocks where ``X`` is nonzero; ``D`` is whatever
remains.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .decomposition import FourTermDecomp, rhs_objective
from .filtration import FiltrationGrid
from .prob import InvalidInput

MAX_FREE_DIMS = 6


@dataclass
class OracleResult:
    value: float
    decomposition: FourTermDecomp
    dims: int
    evaluations: int


def support_blocks(G: FiltrationGrid, X) -> list[tuple[int, int, np.ndarray]]:
    """``(i, j, atom mask)`` for every block of ``F_ij`` on which ``X_ij != 0``."""
    out = []
    for i, j in G.indices():
        P = G.parts[i][j]
        for block in P.blocks():
            block = np.asarray(block)
            if np.any(X[i, j, block] != 0):
                mask = np.zeros(G.space.n, dtype=bool)
                mask[block] = True
                out.append((i, j, mask))
    return out


def _assemble(G, X, blocks, coords):
    # coords: (batch, 3 * len(blocks)) -> parts of shape (batch, R, C, n)
    batch = coords.shape[0]
    shape = (batch,) + X.shape
    parts = [np.zeros(shape) for _ in range(3)]
    for b, (i, j, mask) in enumerate(blocks):
        for t in range(3):
            parts[t][:, i, j, mask] = coords[:, 3 * b + t][:, None]
    rest = X[None] - parts[0] - parts[1] - parts[2]
    return FourTermDecomp(parts[0], parts[1], parts[2], rest)


def brute_force_decomposition(X, G: FiltrationGrid, *, points: int = 7, shrink: float = 0.6,
                              rounds: int = 60, rtol: float = 1e-9,
                              max_dims: int = MAX_FREE_DIMS) -> OracleResult:
    """Grid refinement: evaluate a ``points^dims`` lattice around the incumbent,
    recentre on the best point and shrink the box, until it is below ``rtol``
    relative to the scale of ``X``."""
    X = G.check_adapted(np.asarray(X, dtype=float))
    blocks = support_blocks(G, X)
    dims = 3 * len(blocks)
    if dims > max_dims:
        raise InvalidInput(f"{dims} free dimensions exceed the oracle cap {max_dims}")
    if dims == 0:
        zero = np.zeros_like(X)
        return OracleResult(0.0, FourTermDecomp(zero, zero, zero, zero), 0, 0)
    # start from B = X
    vals = np.array([X[i, j, mask][0] for i, j, mask in blocks])
    centre = np.zeros(dims)
    centre[1::3] = vals
    scale = float(np.abs(vals).max())
    half = np.full(dims, 2.0 * scale)
    offsets = np.linspace(-1.0, 1.0, points)
    lattice = np.array(list(itertools.product(offsets, repeat=dims)))
    best = float(rhs_objective(_assemble(G, X, blocks, centre[None]), G, check=False)[0])
    evals = 1
    for _ in range(rounds):
        cand = centre + lattice * half
        vals_c = rhs_objective(_assemble(G, X, blocks, cand), G, check=False)
        evals += len(cand)
        k = int(np.argmin(vals_c))
        if vals_c[k] < best:
            best, centre = float(vals_c[k]), cand[k]
        half *= shrink
        if half.max() < rtol * scale:
            break
    d = _assemble(G, X, blocks, centre[None])
    d = d.map(lambda P: P[0])
    return OracleResult(best, d, dims, evals)


def tiny_instance(seed: int, G: FiltrationGrid, max_blocks: int = 2):
    """Random adapted ``X`` supported on at most ``max_blocks`` blocks."""
    rng = np.random.default_rng(seed)
    cells = [(i, j, b) for i, j in G.indices() for b in range(G.parts[i][j].block_count)]
    k = int(rng.integers(1, max_blocks + 1))
    chosen = rng.choice(len(cells), size=min(k, len(cells)), replace=False)
    X = np.zeros(G.shape + (G.space.n,))
    for c in chosen:
        i, j, b = cells[c]
        X[i, j, G.parts[i][j].labels == b] = rng.normal()
    return X
