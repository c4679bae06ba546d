"""Seeded corpora and empirical constants.

Every instance is rebuilt from ``(corpus seed, instance id)`` alone, so
results do not depend on how instances are spread over worker processes.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decomposition import (assemble_davis, iter_br_rhs, lhs_norm, rhs_objective,
                            rhs_objective_convexified, verify_corollary_chain)
from .filtration import Filtration1D, FiltrationGrid, marginals, prev, random_grid
from .io import csv_text, instance_to_json
from .martingale import (delta_2d, deltas_1d, deltas_2d, doob_ratio, grid_maximal_fn,
                         hardy_norms, hardy_norms_1d, square_fn_2d)
from .mixed import AdaptedFamily, duality_defect, lq_lp_norm, mixed_norm
from .prob import FiniteProbSpace, InvalidInput, Partition, join, lp_norm

DEFAULT_SEED = 1
DEFAULT_SIZE = 1000
SAMPLERS = ("gaussian", "sparse", "adversarial")
# acceptance envelopes; configuration, not constants of the theory
ENVELOPE = 32.0
DAVIS_ENVELOPE = 50.0
DOOB_P2_ENVELOPE = 4.0


# Burkholder-Rosenthal type checks


def br_check(F: Filtration1D, f, p: float) -> dict:
    """``||f||_p`` against the diagonal and conditional square-function terms."""
    if p < 2:
        raise InvalidInput(f"Burkholder-Rosenthal check needs p >= 2, got {p}")
    sp = F.space
    d = deltas_1d(F, f)
    diag = sp.expect(np.sum(np.abs(d) ** p, axis=0)) ** (1 / p)
    cond = sum(F.E(prev(k), d[k] ** 2) for k in range(F.N + 1))
    cond = sp.expect(cond ** (p / 2)) ** (1 / p)
    lhs = lp_norm(sp, f, p)
    return {"lhs": lhs, "rhsDiag": float(diag), "rhsCond": float(cond),
            "ratio": _ratio(lhs, diag + cond)}


def br_adapted_check(F: Filtration1D, Y, q: float) -> dict:
    """``E(sum Y_k)^q`` against ``E sum Y_k^q + E(sum E_{k-1} Y_k)^q``.

    ``Y`` has one row per level ``0..N``.
    """
    if q < 1:
        raise InvalidInput(f"q must be >= 1, got {q}")
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (F.N + 1, F.space.n):
        raise InvalidInput(f"Y must have shape {(F.N + 1, F.space.n)}")
    if np.any(Y < 0):
        raise InvalidInput("Y must be nonnegative")
    if not F.is_adapted(Y, 1e-9):
        raise InvalidInput("Y is not adapted")
    E = F.space.expect
    lhs = E(Y.sum(axis=0) ** q)
    diag = E(np.sum(Y ** q, axis=0))
    cond = E(sum(F.E(prev(k), Y[k]) for k in range(F.N + 1)) ** q)
    return {"lhs": float(lhs), "rhsDiag": float(diag), "rhsCond": float(cond),
            "ratio": _ratio(lhs, diag + cond)}


def iter_br_check(G: FiltrationGrid, Z, q: float) -> dict:
    Z = G.check_adapted(np.asarray(Z, dtype=float))
    lhs = float(G.space.expect(Z.sum(axis=(0, 1)) ** q))
    rhs = float(iter_br_rhs(Z, G, q))
    return {"lhs": lhs, "rhs": rhs, "ratio": _ratio(lhs, rhs)}


def _ratio(a, b) -> float:
    a, b = float(a), float(b)
    if b == 0:
        return 1.0 if a == 0 else np.inf
    return a / b


def rademacher_tensor(space: FiniteProbSpace, Y, F: Filtration1D | None = None,
                      cap: int = 4096):
    """Randomise ``Y_1..Y_m`` by independent signs: ``f = sum_k Y_k^(1/2) r_k``
    on ``space x {-1, 1}^m``.

    Level ``k`` of the returned filtration is ``F_k`` tensored with the
    first ``k`` signs; ``F`` defaults to ``F_k = sigma(Y_1, ..., Y_k)``.
    Atom ``(w, s)`` has index ``w * 2^m + s`` and ``r_k = -1`` iff bit
    ``k - 1`` of ``s`` is set.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m, n = Y.shape
    if n != space.n:
        raise InvalidInput("Y does not live on the given space")
    if np.any(Y < 0):
        raise InvalidInput("Y must be nonnegative")
    if space.n * 2 ** m > cap:
        raise InvalidInput(f"tensor space of {space.n * 2 ** m} atoms exceeds the cap {cap}")
    if F is None:
        parts = [Partition.trivial(n)]
        for k in range(m):
            parts.append(join(parts[-1], Partition(np.unique(Y[k], return_inverse=True)[1])))
        F = Filtration1D(space, parts)
    if F.N != m or F.space != space:
        raise InvalidInput("base filtration must have one level per Y_k on the same space")
    for k in range(m):
        if not F.parts[k + 1].is_measurable(Y[k], 1e-12):
            raise InvalidInput(f"Y_{k + 1} is not measurable for level {k + 1}")
    S = 2 ** m
    tspace = FiniteProbSpace(np.repeat(space.probs, S) / S)
    omega = np.repeat(np.arange(n), S)
    s = np.tile(np.arange(S), n)
    signs = np.stack([1 - 2 * ((s >> k) & 1) for k in range(m)])
    f = np.sum(np.sqrt(Y[:, omega]) * signs, axis=0)
    levels = [Partition(F.parts[k].labels[omega] * S + (s & (2 ** k - 1)))
              for k in range(m + 1)]
    return tspace, Filtration1D(tspace, levels), f


def tensor_check(space: FiniteProbSpace, Y, F=None, q: float = 1.5) -> dict:
    """Differences of the tensor martingale against ``Y^(1/2)`` and the
    square-function identity at ``p = 2q``."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    tspace, TF, f = rademacher_tensor(space, Y, F)
    m = Y.shape[0]
    S = 2 ** m
    d = deltas_1d(TF, f)
    lifted = np.sqrt(np.repeat(Y, S, axis=1))
    err = float(np.max(np.abs(np.abs(d[1:]) - lifted))) if m else 0.0
    p = 2 * q
    a = tspace.expect(np.repeat(Y, S, axis=1).sum(axis=0) ** (p / 2)) if m else 0.0
    b = tspace.expect(np.sum(d ** 2, axis=0) ** (p / 2))
    return {"deltaError": err, "identityLhs": float(a), "identityRhs": float(b),
            "br": br_check(TF, f, p)}


# corpus


@dataclass
class Instance:
    idx: int
    sampler: str
    space: FiniteProbSpace
    grid: FiltrationGrid
    f: np.ndarray

    def to_json(self, **extra) -> dict:
        return instance_to_json(self.grid, self.f, id=self.idx, sampler=self.sampler, **extra)


@dataclass(frozen=True)
class Corpus:
    seed: int = DEFAULT_SEED
    size: int = DEFAULT_SIZE
    max_atoms: int = 64
    factor_sizes: tuple = (2, 3)
    max_factors: int = 2
    alpha: float = 1.0
    samplers: tuple = SAMPLERS
    adversarial_steps: int = 50

    def __post_init__(self):
        if self.size < 1:
            raise InvalidInput("corpus size must be >= 1")

    def rng(self, idx: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, idx])

    def instance(self, idx: int) -> Instance:
        if not 0 <= idx < self.size:
            raise IndexError(f"instance {idx} outside the corpus")
        rng = self.rng(idx)
        nr = int(rng.integers(1, self.max_factors + 1))
        nc = int(rng.integers(1, self.max_factors + 1))
        sizes = [int(s) for s in rng.choice(self.factor_sizes, size=nr + nc)]
        while np.prod(sizes) > self.max_atoms:
            sizes[int(np.argmax(sizes))] -= 1
        space, G = random_grid(rng, sizes[:nr], sizes[nr:], self.alpha, self.max_atoms)
        sampler = self.samplers[idx % len(self.samplers)]
        f = SAMPLER_FUNCS[sampler](rng, G, self)
        return Instance(idx, sampler, space, G, f)

    def __iter__(self):
        return (self.instance(k) for k in range(self.size))

    def __len__(self):
        return self.size


def sample_gaussian(rng, G: FiltrationGrid, corpus=None) -> np.ndarray:
    f = rng.standard_normal(G.space.n)
    return f - G.space.expect(f)


def sample_sparse(rng, G: FiltrationGrid, corpus=None) -> np.ndarray:
    """Sum of at most three single-difference bumps ``Delta_ij g``."""
    f = np.zeros(G.space.n)
    cells = list(G.indices())
    for _ in range(int(rng.integers(1, 4))):
        i, j = cells[int(rng.integers(len(cells)))]
        f += delta_2d(G, i, j, rng.standard_normal(G.space.n))
    return f


def davis_ratio(G: FiltrationGrid, f) -> np.ndarray | float:
    """``H1_M / H1_S`` (0 for the zero variable); batched over leading axes."""
    s = G.space.expect(square_fn_2d(G, f))
    m = G.space.expect(grid_maximal_fn(G, f))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, m / s, 0.0) if np.ndim(s) else (m / s if s > 0 else 0.0)


def sample_adversarial(rng, G: FiltrationGrid, corpus=None, steps: int | None = None):
    """Coordinate ascent on ``H1_M / H1_S`` with random restarts."""
    if steps is None:
        steps = corpus.adversarial_steps if corpus is not None else 50
    restarts = 5
    per = max(1, steps // restarts)
    moves = np.array([-1.0, -0.3, 0.3, 1.0])
    best_f, best = None, -np.inf
    for _ in range(restarts):
        f = sample_gaussian(rng, G)
        val = davis_ratio(G, f)
        for _ in range(per):
            k = int(rng.integers(G.space.n))
            trials = np.repeat(f[None], moves.size, axis=0)
            trials[:, k] += moves * (float(np.abs(f).max()) or 1.0)
            vals = davis_ratio(G, trials)
            t = int(np.argmax(vals))
            if vals[t] > val:
                val, f = float(vals[t]), trials[t]
        if val > best:
            best, best_f = val, f
    return best_f


SAMPLER_FUNCS = {"gaussian": sample_gaussian, "sparse": sample_sparse,
                 "adversarial": sample_adversarial}


# parallel map


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("MARTLAB_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise InvalidInput("thread count must be >= 1")
    return threads


def parallel_map(fn, items, threads: int | None = None) -> list:
    """Order-preserving map over worker processes (inline for one thread)."""
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * threads))
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


# reports


@dataclass
class RatioReport:
    columns: list[str]
    rows: list[dict]
    ratio_names: list[str]
    skipped: int = 0
    worst: dict = field(default_factory=dict)

    def values(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows if name in r], dtype=float)

    def summary(self) -> dict:
        out = {}
        for name in self.ratio_names:
            v = self.values(name)
            if v.size:
                out[name] = {"max": float(v.max()), "min": float(v.min()),
                             "q50": float(np.quantile(v, 0.5)),
                             "q90": float(np.quantile(v, 0.9)),
                             "q99": float(np.quantile(v, 0.99))}
        return out

    def csv(self) -> str:
        return csv_text(self.columns, [[r.get(c, "") for c in self.columns] for r in self.rows])


def _worst(corpus: Corpus, rows, names) -> dict:
    worst = {}
    for name in names:
        cand = [r for r in rows if name in r]
        if cand:
            r = max(cand, key=lambda r: r[name])
            worst[name] = corpus.instance(r["id"]).to_json(ratio=name, value=r[name])
    return worst


DAVIS_RATIOS = ["h1M/h1S", "h1S/h1s", "h1M/h1s", "davis1d_row", "davis1d_col"]


def _davis_row(args) -> dict | None:
    corpus, idx = args
    inst = corpus.instance(idx)
    G, f = inst.grid, inst.f
    row = _davis_ratios(G, f)
    if row is None:
        return None
    twice = _davis_ratios(G, 2.0 * f)
    row["scaleInvariant"] = all(twice[k] == row[k] for k in DAVIS_RATIOS)
    row.update(id=idx, sampler=inst.sampler, atoms=G.space.n, rows=G.rows, cols=G.cols)
    return row


def _davis_ratios(G, f) -> dict | None:
    h = hardy_norms(G, f)
    if h.h1S == 0:
        return None
    F1, F2 = marginals(G)
    h1, h2 = hardy_norms_1d(F1, f), hardy_norms_1d(F2, f)
    return {"h1S": h.h1S, "h1s": h.h1s, "h1M": h.h1M,
            "h1M/h1S": h.h1M / h.h1S, "h1S/h1s": h.h1S / h.h1s, "h1M/h1s": h.h1M / h.h1s,
            "davis1d_row": h1.h1M / h1.h1S, "davis1d_col": h2.h1M / h2.h1S}


def davis_ratio_search(corpus: Corpus, threads: int | None = None) -> RatioReport:
    """Two-parameter Hardy-norm ratios and one-parameter Davis ratios on
    the marginal filtrations.  Zero instances are skipped and counted."""
    rows = parallel_map(_davis_row, [(corpus, k) for k in range(corpus.size)], threads)
    kept = [r for r in rows if r is not None]
    cols = ["id", "sampler", "atoms", "rows", "cols", "h1S", "h1s", "h1M"] + DAVIS_RATIOS
    rep = RatioReport(cols, kept, DAVIS_RATIOS, skipped=len(rows) - len(kept))
    rep.worst = _worst(corpus, kept, DAVIS_RATIOS)
    return rep


ENVELOPE_RATIOS = ["C1", "C2", "C3", "davis1d_row", "davis1d_col", "iterBR", "iterBR_inv",
                   "brAdapted", "brAdapted_inv", "doob2", "convexified", "embedding2",
                   "dualityLower_inv", "terms_C_growth", "terms_D_growth", "terms_A_growth"]


def _envelope_row(args) -> dict | None:
    corpus, idx, tol, max_iter = args
    inst = corpus.instance(idx)
    G, f = inst.grid, inst.f
    base = _davis_ratios(G, f)
    if base is None:
        return None
    sp = G.space
    X = deltas_2d(G, f)
    davis = assemble_davis(f, G, tol=tol, max_iter=max_iter)
    rep = davis.report
    lhs = lhs_norm(G, X)
    chain = verify_corollary_chain(f, G, davis)
    before, after = davis.terms_before, davis.terms_after

    def growth(k):
        return after[k] / before[k] if before[k] > 1e-14 else 1.0

    q = 1.5
    Z = np.abs(X) ** (4.0 / 3.0)
    ib = iter_br_check(G, Z, q)
    F1, _ = marginals(G)
    Y = np.abs(deltas_1d(F1, f)) ** (4.0 / 3.0)
    ba = br_adapted_check(F1, Y, q)
    family = [P for row in G.parts for P in row]
    doob = doob_ratio(sp, family, f, 2.0)
    conv = rhs_objective_convexified(davis.decomposition, G, check=False)
    sq = rhs_objective(davis.decomposition.map(np.square), G, check=False)
    flatX = X.reshape(-1, sp.n)
    U = [G.parts[prev(i)][prev(j)] for i, j in G.indices()]
    V = [G.parts[i][j] for i, j in G.indices()]
    fam = AdaptedFamily(sp, flatX, U, V, nested=True)
    emb = mixed_norm(fam, 4 / 3, 1.5) / lq_lp_norm(sp, flatX, 4 / 3, 1.5)
    dual = duality_defect(fam, 4 / 3, 1.5)
    row = dict(base)
    row.update(
        id=idx, sampler=inst.sampler, atoms=sp.n, rows=G.rows, cols=G.cols,
        lhs=lhs, objective=rep.objective, lowerBound=rep.lower_bound,
        converged=rep.converged, iterations=rep.iterations,
        C1=lhs / rep.lower_bound, C2=rep.objective / lhs, C3=base["h1M/h1S"],
        iterBR=ib["ratio"], iterBR_inv=1 / ib["ratio"],
        brAdapted=ba["ratio"], brAdapted_inv=1 / ba["ratio"], doob2=doob,
        convexified=conv / np.sqrt(sq), embedding2=emb, dualityLower_inv=1 / dual.ratio,
        terms_A_growth=growth(0), terms_B_change=after[1] - before[1],
        terms_C_growth=growth(2), terms_D_growth=growth(3),
        reconstruction=davis.reconstruction_residual, chainSlack=chain.exact_slack(),
        chainB=chain.empirical()["B: H1_s >~ H1_M"])
    return row


def envelope_suite(corpus: Corpus, threads: int | None = None, tol: float = 1e-6,
                   max_iter: int = 20000) -> RatioReport:
    """Decomposition, Davis, Burkholder-Rosenthal and Doob constants per instance."""
    args = [(corpus, k, tol, max_iter) for k in range(corpus.size)]
    rows = parallel_map(_envelope_row, args, threads)
    kept = [r for r in rows if r is not None]
    cols = ["id", "sampler", "atoms", "rows", "cols", "h1S", "h1s", "h1M", "lhs",
            "objective", "lowerBound", "converged", "iterations"] + ENVELOPE_RATIOS + [
            "terms_B_change", "reconstruction", "chainSlack", "chainB"]
    rep = RatioReport(cols, kept, ENVELOPE_RATIOS, skipped=len(rows) - len(kept))
    rep.worst = _worst(corpus, kept, ENVELOPE_RATIOS)
    return rep


def br_suite_row(args) -> dict:
    corpus, idx, p, q = args
    inst = corpus.instance(idx)
    G, f = inst.grid, inst.f
    F1, _ = marginals(G)
    br = br_check(F1, f, p)
    Y = np.abs(deltas_1d(F1, f)) ** 2
    ba = br_adapted_check(F1, Y, q)
    ib = iter_br_check(G, np.abs(deltas_2d(G, f)) ** (4.0 / 3.0), q)
    tc = tensor_check(G.space, Y[1:], None, q)
    return {"id": idx, "sampler": inst.sampler, "atoms": G.space.n,
            "br": br["ratio"], "brAdapted": ba["ratio"], "iterBR": ib["ratio"],
            "tensorDeltaError": tc["deltaError"],
            "tensorIdentityGap": abs(tc["identityLhs"] - tc["identityRhs"]),
            "tensorBR": tc["br"]["ratio"]}


BR_COLUMNS = ["id", "sampler", "atoms", "br", "brAdapted", "iterBR", "tensorDeltaError",
              "tensorIdentityGap", "tensorBR"]


def br_suite(corpus: Corpus, p: float = 3.0, q: float = 1.5,
             threads: int | None = None) -> RatioReport:
    rows = parallel_map(br_suite_row, [(corpus, k, p, q) for k in range(corpus.size)],
                        threads)
    return RatioReport(BR_COLUMNS, rows, ["br", "brAdapted", "iterBR", "tensorBR"])
