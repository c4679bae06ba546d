"""Convex split problems ``min sum_k N_k(a_k)`` subject to ``sum_k a_k = target``.

Norms of the form ``x -> sum_g w_g * sqrt(sum_{r in g} (c_r x[col_r])^2)``
(:class:`GroupNorm`) cover L^1, L^2 and conditional square-function norms.
For those the split problem is solved by a diagonally preconditioned
primal-dual hybrid gradient method; every dual iterate is repaired into a
feasible dual point, so the solver reports a certified lower bound next to
the best objective.  Generic callables go through a projected subgradient
method instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .prob import InvalidInput

SQRT_EPS = 1e-12


class GroupNorm:
    """``x -> sum_g weights[g] * ||(coef * x[col])[rows of g]||_2``.

    Each row carries a single coefficient on a single coordinate of ``x``.
    """

    def __init__(self, weights, group, col, coef, dim: int):
        self.weights = np.asarray(weights, dtype=float)
        self.group = np.asarray(group, dtype=np.int64)
        self.col = np.asarray(col, dtype=np.int64)
        self.coef = np.asarray(coef, dtype=float)
        self.dim = int(dim)
        if not (self.group.shape == self.col.shape == self.coef.shape):
            raise InvalidInput("group, col and coef must have equal length")
        if np.any(self.weights < 0):
            raise InvalidInput("group weights must be nonnegative")

    @property
    def n_groups(self) -> int:
        return self.weights.size

    def group_norms(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        sq = (self.coef * x[..., self.col]) ** 2
        flat = sq.reshape(-1, sq.shape[-1])
        out = np.stack([np.bincount(self.group, r, self.n_groups) for r in flat])
        return np.sqrt(out).reshape(sq.shape[:-1] + (self.n_groups,))

    def __call__(self, x) -> float | np.ndarray:
        """Value on a flat vector (or a batch of them along leading axes)."""
        out = self.group_norms(x) @ self.weights
        return float(out) if np.ndim(out) == 0 else out

    def compose(self, coord_of: np.ndarray, dim: int) -> "GroupNorm":
        """Restrict to a block-expansion subspace ``x = z[coord_of]``.

        Rows of one group that land on the same coordinate are merged and
        groups with identical rows are fused, which keeps the value exact.
        """
        col = np.asarray(coord_of)[self.col]
        # merge rows sharing (group, coordinate)
        key = self.group * dim + col
        uk, inv = np.unique(key, return_inverse=True)
        coef = np.sqrt(np.bincount(inv, self.coef ** 2))
        group, col = uk // dim, uk % dim
        return GroupNorm(self.weights, group, col, coef, dim).fused()

    def fused(self) -> "GroupNorm":
        order = np.lexsort((self.col, self.group))
        g, c, v = self.group[order], self.col[order], self.coef[order]
        starts = np.flatnonzero(np.r_[True, g[1:] != g[:-1]])
        ends = np.r_[starts[1:], g.size]
        signature = {}
        new_group = np.empty(self.n_groups, dtype=np.int64)
        weights = []
        keep = np.zeros(g.size, dtype=bool)
        for s, e in zip(starts, ends):
            key = (c[s:e].tobytes(), np.round(v[s:e], 13).tobytes())
            if key not in signature:
                signature[key] = len(weights)
                weights.append(0.0)
                keep[s:e] = True
            new_group[g[s]] = signature[key]
            weights[signature[key]] += self.weights[g[s]]
        # groups without rows contribute nothing
        return GroupNorm(weights, new_group[g[keep]], c[keep], v[keep], self.dim)


@dataclass
class SolverReport:
    objective: float
    lower_bound: float | None
    iterations: int
    converged: bool
    method: str
    term_values: list[float] = field(default_factory=list)
    residual: float = 0.0
    oracle_gap: float | None = None

    @property
    def gap(self) -> float | None:
        if self.lower_bound is None:
            return None
        return self.objective - self.lower_bound

    def as_dict(self) -> dict:
        return {"objective": self.objective, "lowerBound": self.lower_bound,
                "gap": self.gap, "iterations": self.iterations,
                "converged": self.converged, "method": self.method,
                "termValues": list(self.term_values), "residual": self.residual,
                "oracleGap": self.oracle_gap}


@dataclass
class SplitResult:
    parts: np.ndarray          # shape (m, dim)
    objective: float
    lower_bound: float | None
    iterations: int
    converged: bool


class _SplitProblem:
    """``min_u sum_g w_g ||K_g u + b_g||`` for ``u = (z_1, ..., z_{m-1})``,
    with the last part eliminated as ``target - sum z_k``."""

    def __init__(self, norms: list[GroupNorm], target: np.ndarray):
        m = len(norms)
        d = target.size
        rows, cols, vals, b, groups, weights = [], [], [], [], [], []
        r0 = g0 = 0
        for k, N in enumerate(norms):
            nr = N.col.size
            r = r0 + np.arange(nr)
            if k < m - 1:
                rows.append(r)
                cols.append(k * d + N.col)
                vals.append(N.coef)
                b.append(np.zeros(nr))
            else:
                for kk in range(m - 1):
                    rows.append(r)
                    cols.append(kk * d + N.col)
                    vals.append(-N.coef)
                b.append(N.coef * target[N.col])
            groups.append(g0 + N.group)
            weights.append(N.weights)
            r0 += nr
            g0 += N.n_groups
        self.m, self.d = m, d
        self.K = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(r0, (m - 1) * d))
        self.Kt = self.K.T.tocsr()
        self.b = np.concatenate(b)
        self.group = np.concatenate(groups)
        self.w = np.concatenate(weights)
        self.n_groups = g0
        self._lu = None

    def residual(self, u):
        return self.K @ u + self.b

    def group_norms(self, y):
        return np.sqrt(np.bincount(self.group, y * y, self.n_groups))

    def objective(self, u) -> float:
        return float(self.w @ self.group_norms(self.residual(u)))

    def subgradient(self, u):
        y = self.residual(u)
        nrm = self.group_norms(y)
        scale = self.w / np.sqrt(nrm ** 2 + SQRT_EPS ** 2)
        return self.Kt @ (y * scale[self.group])

    def lower_bound(self, v) -> float | None:
        """Dual value of ``v`` after repair onto ``{K^T v = 0, ||v_g|| <= w_g}``."""
        if self._lu is None:
            self._lu = self._null_projector()
        if self._lu is False:
            return None
        v = v - self.K @ self._lu(self.Kt @ v)
        nrm = self.group_norms(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(nrm > 0, self.w / nrm, np.inf)
        theta = min(1.0, float(ratio.min())) if ratio.size else 1.0
        return theta * float(v @ self.b)

    def _null_projector(self):
        # solves K^T K x = r for r in range(K^T); a rank-deficient K (parts
        # that only meet in the last norm) falls back to a ridge factorisation
        # with iterative refinement, which converges on range(K^T)
        M = (self.Kt @ self.K).tocsc()
        try:
            return splu(M).solve
        except RuntimeError:
            pass
        lam = 1e-10 * max(float(M.diagonal().max(initial=0.0)), 1e-300)
        try:
            lu = splu((M + lam * sparse.identity(M.shape[0], format="csc")).tocsc())
        except RuntimeError:
            return False

        def solve(r):
            x = lu.solve(r)
            for _ in range(4):
                x += lu.solve(r - M @ x)
            return x
        return solve

    def _gram_solver(self, rows):
        # regularised normal equations of K restricted to `rows`; solves for
        # both the least-norm primal correction and the dual completion
        KS = self.K[rows]
        M = (KS.T @ KS).tocsc()
        lam = 1e-12 * max(float(M.diagonal().max(initial=0.0)), 1e-300)
        try:
            lu = splu((M + lam * sparse.identity(M.shape[0], format="csc")).tocsc())
        except RuntimeError:
            return None, KS
        return lu, KS

    def snap(self, u, ladder=10.0 ** -np.arange(1, 9), v=None):
        """Zero out groups with tiny residual by a least-norm correction.

        Optima sit on kinks where many groups vanish, and first-order
        iterates only approach them.  Each threshold of ``ladder`` (relative
        to the largest group) picks a candidate active set; the best
        candidate is returned with its objective.  With a dual point ``v``,
        groups strictly inside their dual ball (which carry no residual at
        an optimum) give further candidate sets.
        """
        y = self.residual(u)
        nrm = self.group_norms(y)
        best_u, best = u, float(self.w @ nrm)
        top = nrm.max() if nrm.size else 0.0
        masks = [nrm <= t * top for t in ladder]
        if v is not None:
            slack = 1.0 - self.group_norms(v) / np.maximum(self.w, 1e-300)
            masks += [slack >= t for t in ladder[:4]]
        seen = set()
        for mask in masks:
            rows = np.flatnonzero(mask[self.group])
            key = rows.tobytes()
            if rows.size == 0 or key in seen:
                continue
            seen.add(key)
            lu, KS = self._gram_solver(rows)
            if lu is None:
                continue
            cand = u - lu.solve(KS.T @ y[rows])
            val = self.objective(cand)
            if val < best:
                best_u, best = cand, val
        return best_u, best

    def dual_from_primal(self, u, t: float = 1e-7) -> float | None:
        """Lower bound from a dual point aligned with the primal residual.

        Groups with a nonzero residual get ``w_g y_g / ||y_g||``; the rest
        are chosen (least norm) to make ``K^T v`` vanish.
        """
        y = self.residual(u)
        nrm = self.group_norms(y)
        small = (nrm <= t * max(nrm.max(), 1e-300))[self.group]
        v = np.where(small, 0.0, y * (self.w / np.maximum(nrm, 1e-300))[self.group])
        if small.any():
            rows = np.flatnonzero(small)
            lu, KS = self._gram_solver(rows)
            if lu is not None:
                v[rows] = KS @ lu.solve(-(self.Kt @ v))
        return self.lower_bound(v)

    def parts(self, u, target):
        z = u.reshape(self.m - 1, self.d)
        return np.vstack([z, target - z.sum(axis=0)])


def split_minimize(norms: list[GroupNorm], target, init=None, *, tol: float = 1e-6,
                   max_iter: int = 20000, check_every: int = 25,
                   reweight_every: int = 100, polish_every: int = 100,
                   damping: float = 1.2) -> SplitResult:
    """Primal-dual solve of the split problem with a certified stopping rule.

    Every ``reweight_every`` steps the averaged iterate since the last
    restart is scored, and the method restarts from it when its duality
    gap beats the current one.  The primal weight follows the ratio of
    primal to dual movement, changing by at most a factor ``damping`` per
    update.  Stops once
    ``best_objective - best_lower_bound <= tol * best_objective``.
    ``init`` holds the first ``m - 1`` parts (default all zero, i.e. the
    whole target on the last norm).
    """
    target = np.asarray(target, dtype=float).ravel()
    m = len(norms)
    if m == 0:
        raise InvalidInput("need at least one norm")
    if any(N.dim != target.size for N in norms):
        raise InvalidInput("norm dimensions disagree with the target")
    if m == 1:
        val = norms[0](target)
        return SplitResult(target[None, :].copy(), val, val, 0, True)
    prob = _SplitProblem(norms, target)
    u = (np.zeros((m - 1) * target.size) if init is None
         else np.asarray(init, dtype=float).ravel().copy())
    v = np.zeros(prob.K.shape[0])
    absK = abs(prob.K)
    col_sum = np.maximum(np.asarray(absK.sum(axis=0)).ravel(), 1e-300)
    row_sum = np.maximum(np.asarray(absK.sum(axis=1)).ravel(), 1e-300)
    sig_group = np.full(prob.n_groups, np.inf)
    np.minimum.at(sig_group, prob.group, 1.0 / row_sum)
    sigma0 = sig_group[prob.group]
    # primal weight, rebalanced every `reweight_every` steps from the
    # relative primal and dual movement
    omega = 1.0
    u_mark, v_mark = u.copy(), v.copy()
    u_sum, v_sum, n_sum = np.zeros_like(u), np.zeros_like(v), 0

    best_u, best = u.copy(), prob.objective(u)
    lower = -np.inf
    converged = best <= 1e-300
    it = 0
    while not converged and it < max_iter:
        u_new = u - (omega / col_sum) * (prob.Kt @ v)
        y = v + (sigma0 / omega) * (prob.K @ (2 * u_new - u) + prob.b)
        nrm = prob.group_norms(y)
        scale = np.minimum(1.0, prob.w / np.maximum(nrm, 1e-300))
        v = y * scale[prob.group]
        u = u_new
        u_sum += u
        v_sum += v
        n_sum += 1
        it += 1
        if it % check_every == 0 or it == max_iter:
            val = prob.objective(u)
            if val < best:
                best, best_u = val, u.copy()
            lb = prob.lower_bound(v)
            if lb is not None:
                lower = max(lower, lb)
                converged = best - lower <= tol * max(best, 1e-300)
            if not converged and it % polish_every == 0:
                snapped, val = prob.snap(best_u, v=v)
                if val < best:
                    best, best_u = val, snapped
                lb = prob.dual_from_primal(best_u)
                if lb is not None:
                    lower = max(lower, lb)
                    converged = best - lower <= tol * max(best, 1e-300)
        if it % reweight_every == 0 and not converged:
            u_avg, v_avg = u_sum / n_sum, v_sum / n_sum
            val_avg, lb_avg = prob.objective(u_avg), prob.lower_bound(v_avg)
            if val_avg < best:
                best, best_u = val_avg, u_avg.copy()
            if lb_avg is not None:
                lower = max(lower, lb_avg)
                converged = best - lower <= tol * max(best, 1e-300)
                lb_cur = prob.lower_bound(v)
                if lb_cur is not None and val_avg - lb_avg < prob.objective(u) - lb_cur:
                    u, v = u_avg, v_avg
            u_sum[:] = 0.0
            v_sum[:] = 0.0
            n_sum = 0
            dx = np.sqrt(np.sum((u - u_mark) ** 2 * col_sum))
            dy = np.sqrt(np.sum((v - v_mark) ** 2 / sigma0))
            if dx > 1e-14 and dy > 1e-14:
                omega = float(np.clip(np.sqrt(omega * dx / dy), omega / damping,
                                      omega * damping))
            u_mark, v_mark = u.copy(), v.copy()
    return SplitResult(prob.parts(best_u, target), best,
                       None if lower == -np.inf else lower, it, converged)


def split_subgradient(norms, target, init=None, *, tol: float = 1e-6,
                      max_iter: int = 20000, window: int = 500) -> SplitResult:
    """Projected subgradient on the same problem, step ``h / sqrt(k)``.

    Stops when the best value improved by less than ``tol`` (relative)
    over the last ``window`` iterations.
    """
    target = np.asarray(target, dtype=float).ravel()
    prob = _SplitProblem(norms, target)
    u = (np.zeros((len(norms) - 1) * target.size) if init is None
         else np.asarray(init, dtype=float).ravel().copy())
    h = max(np.abs(target).max(), 1e-12)
    best_u, best = u.copy(), prob.objective(u)
    history = [best]
    converged = best <= 1e-300
    it = 0
    while not converged and it < max_iter:
        it += 1
        g = prob.subgradient(u)
        gn = np.linalg.norm(g)
        if gn == 0:
            converged = True
            break
        u = u - (h / np.sqrt(it)) * g / gn
        val = prob.objective(u)
        if val < best:
            best, best_u = val, u.copy()
        history.append(best)
        if it >= window:
            old = history[-window - 1]
            converged = old - best <= tol * max(best, 1e-300)
    return SplitResult(prob.parts(best_u, target), best, None, it, converged)


def numeric_gradient(fun, x, h: float = 1e-7) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        e = np.zeros_like(flat)
        e[k] = h * max(1.0, abs(flat[k]))
        gf[k] = (fun((flat + e).reshape(x.shape)) - fun((flat - e).reshape(x.shape))) / (2 * e[k])
    return g


def generic_split(evaluators, target, project=None, *, tol: float = 1e-6,
                  max_iter: int = 2000, window: int = 200, polyak_lower=None) -> SplitResult:
    """Subgradient split for arbitrary convex callables.

    Subgradients come from central differences; ``project`` maps a part
    back onto the admissible subspace.  If ``polyak_lower`` is given the
    Polyak step ``(f - f_lower) / ||g||^2`` is used instead of ``h / sqrt(k)``.
    """
    target = np.asarray(target, dtype=float)
    m = len(evaluators)
    project = project or (lambda a: a)
    parts = [np.zeros_like(target) for _ in range(m - 1)]

    def total(ps):
        last = target - sum(ps) if ps else target
        return sum(N(a) for N, a in zip(evaluators, list(ps) + [last]))

    best_parts, best = [p.copy() for p in parts], total(parts)
    history = [best]
    h = max(float(np.abs(target).max()), 1e-12)
    it, converged = 0, m == 1 or best <= 1e-300
    while not converged and it < max_iter:
        it += 1
        flat = np.concatenate([p.ravel() for p in parts])

        def fun(x):
            return total([x[k * target.size:(k + 1) * target.size].reshape(target.shape)
                          for k in range(m - 1)])

        g = numeric_gradient(fun, flat)
        gn2 = float(g @ g)
        if gn2 == 0:
            break
        step = ((fun(flat) - polyak_lower) / gn2 if polyak_lower is not None
                else h / np.sqrt(it) / np.sqrt(gn2))
        flat = flat - step * g
        parts = [project(flat[k * target.size:(k + 1) * target.size].reshape(target.shape))
                 for k in range(m - 1)]
        val = total(parts)
        if val < best:
            best, best_parts = val, [p.copy() for p in parts]
        history.append(best)
        if it >= window:
            converged = history[-window - 1] - best <= tol * max(best, 1e-300)
    last = target - sum(best_parts) if best_parts else target
    return SplitResult(np.stack([p.ravel() for p in best_parts] + [last.ravel()]),
                       best, None, it, converged)
