"""Numerical search for small Følner defects at fixed rank.

The objective for an orthonormal frame ``V`` (columns on an ambient window W)
is the defect of ``P = V V*``.  Writing ``H = (T*T + TT*)`` compressed to W
and ``K`` for the compression of T to W,

    rank * φ(T, P)^2 = tr(V* H V) - 2 ||V* K V||_F^2,

which is exact because ``H`` is assembled from the full columns and rows of
the window.  Two searches run per rank: greedy coordinate swaps (the same
formula restricted to coordinate frames is a graph cut) and projected
gradient descent over frames with QR retraction and seeded random restarts.
Both only ever produce upper bounds for the infimum over projections.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from . import opmodel
from .defect import hs_defect
from .errors import ValidationError
from .projlib import Coordinate, Frame, Projection

OBJECTIVES = ("max", "sumsq")
ARMIJO = 1e-4
MAX_HALVINGS = 30
REL_STOP = 1e-10
CAVEAT = ("numerical evidence inside a finite ambient window; "
          "not a proof of membership in any class")


def max_workers() -> int:
    try:
        return max(1, int(os.environ.get("FOELNER_LAB_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ProbeResult:
    rank: int
    best_value: float
    best_projection: Projection
    restarts: int
    seed: int
    converged: bool
    coordinate_value: float
    method: str
    objective: str = "max"
    envelope: float | None = None


class Problem:
    """Quadratic data of φ² for a family of operators on a fixed window."""

    def __init__(self, ops, win: Sequence, objective: str = "max"):
        if objective not in OBJECTIVES:
            raise ValidationError("objective", f"must be one of {OBJECTIVES}")
        self.ops = list(ops)
        self.win = list(win)
        self.objective = objective
        self.m = m = len(self.win)
        if m > opmodel.DEFAULT_WINDOW_LIMIT:
            from .errors import ResourceError
            raise ResourceError(f"ambient window of size {m} exceeds limit {opmodel.DEFAULT_WINDOW_LIMIT}")
        for n, idx in enumerate(self.win):
            opmodel.check_index(self.ops[0].sort, idx, f"window[{n}]")
        self.pos = {idx: a for a, idx in enumerate(self.win)}
        self.H, self.K, self.deg, self.G = [], [], [], []
        scale = 0.0
        for op in self.ops:
            ext = opmodel.expand_window(op, self.win)
            tw = opmodel.sparse_compression(op, ext, self.win)
            rw = opmodel.sparse_compression(op, self.win, ext)
            h = (tw.conj().T @ tw + rw @ rw.conj().T).tocsr()
            k = opmodel.sparse_compression(op, self.win, self.win)
            self.H.append(h)
            self.K.append(k)
            self.deg.append(np.real(h.diagonal()))
            a2 = np.abs(k.toarray()) ** 2
            self.G.append(a2 + a2.T)
            # distance of each column to its diagonal part; scales like |λ| under λT + μ
            col2 = np.asarray(abs(tw).power(2).sum(axis=0)).ravel()
            diag2 = np.abs(k.diagonal()) ** 2
            scale = max(scale, float(np.sqrt(np.max(np.maximum(col2 - diag2, 0.0)))))
        self.real = all(op.is_real() for op in self.ops)
        if self.real:
            self.H = [h.real.tocsr() for h in self.H]
            self.K = [k.real.tocsr() for k in self.K]
        self.KH = [k.conj().T.tocsr() for k in self.K]
        self.scale = scale if scale > 0 else 1.0
        self._inv = 1.0 / self.scale ** 2

    # --- coordinate sets ---------------------------------------------------

    def cuts(self, positions) -> np.ndarray:
        s = np.asarray(positions)
        return np.array([d[s].sum() - g[np.ix_(s, s)].sum() for d, g in zip(self.deg, self.G)])

    def combine(self, per_op: np.ndarray) -> np.ndarray:
        """Reduce per-operator φ² values (first axis) to the objective."""
        return per_op.max(axis=0) if self.objective == "max" else per_op.sum(axis=0)

    def coordinate_value(self, positions) -> float:
        return float(self.combine(self.cuts(positions) / len(positions)))

    def coordinate_search(self, rank: int, iters: int, forced=(), allowed=None):
        """Greedy best-swap local search from the first allowed positions.

        Ties go to the lexicographically smallest resulting position set.
        Returns ``(value, positions, reached_local_optimum)``.
        """
        forced = list(forced)
        allowed = [p for p in (range(self.m) if allowed is None else allowed) if p not in set(forced)]
        if rank > len(allowed):
            raise ValidationError("rank", "ambient window too small for the requested rank")
        free = allowed[:rank]
        cur = sorted(forced + free)
        size = len(cur)
        value = self.coordinate_value(cur)
        if rank == 0 or rank == len(allowed):
            return value, cur, True
        allowed_arr = np.array(allowed)
        for _ in range(iters):
            in_set = np.zeros(self.m, bool)
            in_set[cur] = True
            u = np.array([p for p in cur if p not in set(forced)])
            v = allowed_arr[~in_set[allowed_arr]]
            per_op = []
            for d, g, c in zip(self.deg, self.G, self.cuts(cur)):
                s = g[:, cur].sum(axis=1)
                new = (c - d[u][:, None] + d[v][None, :] + 2 * s[u][:, None] - np.diag(g)[u][:, None]
                       - 2 * (s[v][None, :] - g[np.ix_(u, v)]) - np.diag(g)[v][None, :])
                per_op.append(new / size)
            vals = self.combine(np.array(per_op))
            best = vals.min()
            if not best < value - 1e-12 * max(1.0, value):
                return value, cur, True
            ties = np.argwhere(vals == best)
            cands = []
            for a, b in ties[:4096]:
                nxt = sorted(set(cur) - {int(u[a])} | {int(v[b])})
                cands.append(nxt)
            cur = min(cands)
            value = float(best)
        return value, cur, False

    # --- frames --------------------------------------------------------------

    def _spmm(self, s, v):
        r, m, k = v.shape
        flat = v.transpose(1, 0, 2).reshape(m, r * k)
        out = s @ flat
        return np.asarray(out).reshape(s.shape[0], r, k).transpose(1, 0, 2)

    def evaluate(self, v: np.ndarray, free_slice=None, grad: bool = True):
        """Objective (normalized φ² scale) and Riemannian-ready gradient.

        ``v`` has shape (restarts, m, rank).  The gradient is returned for the
        columns in ``free_slice`` only.
        """
        rank = v.shape[2]
        vals, grads = [], []
        cplx = np.iscomplexobj(v)
        vc = v.conj() if cplx else v
        for h, k, kh in zip(self.H, self.K, self.KH):
            hv = self._spmm(h, v)
            kv = self._spmm(k, v)
            b = vc.transpose(0, 2, 1) @ kv
            bh = (b.conj() if np.iscomplexobj(b) else b).transpose(0, 2, 1)
            tr = np.real(np.einsum("rmk,rmk->r", vc, hv))
            f = (tr - 2 * np.sum(np.abs(b) ** 2, axis=(1, 2))) / rank * self._inv
            vals.append(f)
            if grad:
                khv = self._spmm(kh, v)
                g = (2 * hv - 4 * (kv @ bh + khv @ b)) / rank * self._inv
                grads.append(g if free_slice is None else g[:, :, free_slice])
        vals = np.array(vals)
        f = self.combine(vals)
        if not grad:
            return f, None
        if self.objective == "max":
            arg = np.argmax(vals, axis=0)
            gsel = np.stack(grads)[arg, np.arange(v.shape[0])]
        else:
            gsel = np.sum(grads, axis=0)
        return f, gsel


def _complement(w, c):
    return w if c is None else w - c @ (c.conj().T @ w)


def _retract(w, c):
    q, _ = np.linalg.qr(_complement(w, c))
    return q


def frame_descent(problem: Problem, rank: int, restarts: int, iters: int, rng,
                  fixed: np.ndarray | None = None, exclude: np.ndarray | None = None,
                  warm: np.ndarray | None = None, trace: list | None = None):
    """Batched projected gradient descent on frames of ``rank`` free columns.

    ``fixed`` columns are always part of the frame; free columns are kept
    orthogonal to ``fixed`` and ``exclude``.  ``warm`` (m x rank) replaces
    the first random start.  Returns ``(values, frames, converged)`` over
    restarts; ``trace`` collects per-iteration objective arrays when given.
    """
    m = problem.m
    blocks = [x for x in (fixed, exclude) if x is not None and x.shape[1]]
    c = np.hstack(blocks) if blocks else None
    nf = 0 if fixed is None else fixed.shape[1]
    if rank + (0 if c is None else c.shape[1]) > m:
        raise ValidationError("rank", "ambient window too small")
    real = problem.real and (c is None or not np.any(c.imag))
    if real:
        c = None if c is None else c.real
        fixed = None if fixed is None else fixed.real
    w = rng.standard_normal((restarts, m, rank))
    if not real:
        w = w + 1j * rng.standard_normal((restarts, m, rank))
    if warm is not None:
        w[0] = (warm.real if real else warm) + 1e-3 * w[0]
    w = _retract(w, c)

    def full(wb):
        if not nf:
            return wb
        return np.concatenate([np.broadcast_to(fixed, (wb.shape[0], m, nf)), wb], axis=2)

    sl = slice(nf, nf + rank)
    f, g = problem.evaluate(full(w), sl)
    active = np.ones(restarts, bool)
    converged = np.zeros(restarts, bool)
    step = np.ones(restarts)
    for _ in range(iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        wi, gi = w[idx], g[idx]
        herm = wi.conj().transpose(0, 2, 1) @ gi
        herm = (herm + herm.conj().transpose(0, 2, 1)) / 2
        gt = _complement(gi - wi @ herm, c)
        gn2 = np.sum(np.abs(gt) ** 2, axis=(1, 2))
        # trial step: twice the last accepted one, never above 1.0
        t = np.minimum(1.0, 2 * step[idx])
        pending = np.ones(idx.size, bool)
        for _h in range(MAX_HALVINGS):
            p = np.flatnonzero(pending)
            if p.size == 0:
                break
            cand = _retract(wi[p] - t[p, None, None] * gt[p], c)
            fc, _ = problem.evaluate(full(cand), sl, grad=False)
            ok = fc <= f[idx[p]] - ARMIJO * t[p] * gn2[p]
            acc = p[ok]
            old = f[idx[acc]]
            w[idx[acc]] = cand[ok]
            step[idx[acc]] = t[acc]
            f[idx[acc]] = fc[ok]
            small = (old - fc[ok]) <= REL_STOP * np.maximum(np.abs(old), 1e-300)
            converged[idx[acc[small]]] = True
            active[idx[acc[small]]] = False
            pending[acc] = False
            t[p[~ok]] *= 0.5
        stuck = idx[pending]
        converged[stuck] = True
        active[stuck] = False
        if trace is not None:
            trace.append(f.copy())
        live = np.flatnonzero(active)
        if live.size:
            _, g_live = problem.evaluate(full(w[live]), sl)
            g[live] = g_live
    return f, full(w), converged


def _frame_from(problem, v, tol=1e-12):
    rows = np.flatnonzero(np.any(np.abs(v) > tol, axis=1))
    win = tuple(problem.win[r] for r in rows)
    q, _ = np.linalg.qr(v[rows])
    return Frame(win, q)


def _verified_value(problem: Problem, P: Projection) -> float:
    vals = np.array([hs_defect(op, P).value ** 2 for op in problem.ops])
    return math.sqrt(float(vals.max() if problem.objective == "max" else vals.sum()))


def _positions_of(problem, P: Projection | None):
    if P is None:
        return []
    return [problem.pos[i] for i in P.support()]


def _minimize(problem: Problem, rank: int, restarts: int, iters: int, seed: int,
              fixed: Projection | None = None, exclude: Projection | None = None) -> ProbeResult:
    if rank < 1:
        raise ValidationError("rank", "must be at least 1")
    if restarts < 1 or iters < 1:
        raise ValidationError("budget", "restarts and iters must be positive")
    rng = np.random.default_rng([seed, rank])
    forced = _positions_of(problem, fixed) if isinstance(fixed, Coordinate) else []
    if exclude is None:
        allowed = None
    elif isinstance(exclude, Coordinate):
        banned = set(_positions_of(problem, exclude))
        allowed = [p for p in range(problem.m) if p not in banned]
    else:
        fe = exclude.frame_on(problem.win)
        allowed = [p for p in range(problem.m) if not np.any(fe[p])]
    coordinate_ok = fixed is None or isinstance(fixed, Coordinate)
    cval, cpos, cconv = math.inf, None, False
    if coordinate_ok and rank <= len(allowed if allowed is not None else range(problem.m)) - len(forced):
        cval, cpos, cconv = problem.coordinate_search(rank, iters, forced, allowed)
    fixed_v = fixed.frame_on(problem.win) if fixed is not None else None
    excl_v = exclude.frame_on(problem.win) if exclude is not None else None
    warm = None
    if cpos is not None:
        free = [p for p in cpos if p not in set(forced)]
        warm = np.zeros((problem.m, rank), dtype=complex)
        warm[free, np.arange(rank)] = 1.0
    fvals, frames, conv = frame_descent(problem, rank, restarts, iters, rng, fixed_v, excl_v, warm)
    best = int(np.argmin(fvals))
    if cpos is not None and cval <= fvals[best]:
        P = Coordinate(tuple(problem.win[p] for p in cpos))
        method, converged = "coordinate", cconv
    else:
        P = _frame_from(problem, frames[best])
        method, converged = "frame", bool(conv[best])
    value = _verified_value(problem, P)
    coord_phi = _verified_value(problem, Coordinate(tuple(problem.win[p] for p in cpos))) if cpos else math.inf
    if method == "frame" and value > coord_phi:
        # rounding in the quadratic objective can only matter at ties
        P, value, method, converged = Coordinate(tuple(problem.win[p] for p in cpos)), coord_phi, "coordinate", cconv
    return ProbeResult(rank, value, P, restarts, seed, converged, coord_phi, method, problem.objective)


def ambient_window(ops, ambient) -> list:
    if isinstance(ambient, int):
        return opmodel.window(ops[0].sort, ambient)
    return list(ambient)


def minimize_defect(ops, rank: int, ambient, restarts: int = 20, iters: int = 200, seed: int = 0,
                    objective: str = "max", fixed: Projection | None = None,
                    exclude: Projection | None = None) -> ProbeResult:
    """Upper bound for the smallest defect of a rank-``rank`` projection.

    ``ambient`` is a window size (canonical window of the operators' sort) or
    an explicit window.  The objective for a family is the max over members
    (``objective="sumsq"`` uses the sum of squares instead);
    ``best_value`` is its square root, verified by the exact defect code.
    """
    ops = [opmodel.build_operator(op) for op in (ops if isinstance(ops, (list, tuple)) else [ops])]
    win = ambient_window(ops, ambient)
    extra = 0 if fixed is None else fixed.rank
    if len(win) < 4 * (rank + extra) and fixed is None:
        raise ValidationError("ambient", f"ambient window of size {len(win)} is smaller than 4*rank")
    if fixed is not None:
        win = list(dict.fromkeys(list(fixed.support()) + list(win)))
    problem = Problem(ops, win, objective)
    return _minimize(problem, rank, restarts, iters, seed, fixed, exclude)


def running_min(results: Sequence[ProbeResult]) -> list[float]:
    out, cur = [], math.inf
    for r in results:
        cur = min(cur, r.best_value)
        out.append(cur)
    return out


def epsilon_curve(ops, ranks: Sequence[int], ambient, restarts: int = 20, iters: int = 200,
                  seed: int = 0, objective: str = "max",
                  exclude: Projection | None = None) -> list[ProbeResult]:
    """minimize_defect over several ranks, with the running-min envelope filled in.

    Ranks run in parallel up to ``FOELNER_LAB_THREADS`` workers; every rank
    has its own seeded generator so results do not depend on the worker count.
    """
    ops = [opmodel.build_operator(op) for op in (ops if isinstance(ops, (list, tuple)) else [ops])]
    win = ambient_window(ops, ambient)
    ranks = sorted(set(int(r) for r in ranks))
    if not ranks:
        raise ValidationError("ranks", "empty rank list")
    if len(win) < 4 * ranks[-1]:
        raise ValidationError("ambient", f"ambient window of size {len(win)} is smaller than 4*rank")
    problem = Problem(ops, win, objective)

    def one(r):
        return _minimize(problem, r, restarts, iters, seed, None, exclude)

    workers = max_workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, ranks))
    else:
        results = [one(r) for r in ranks]
    for r, env in zip(results, running_min(results)):
        r.envelope = env
    return results


# --- reducing subspaces and classification ----------------------------------


def coordinate_blocks(problem: Problem, tol: float = 1e-8) -> list[list[int]]:
    """Connected components of the window graph that no entry leaves.

    Returned as position lists sorted by (size, first position).
    """
    adj = sum((abs(k) + abs(k).T for k in problem.K), sp.csr_matrix((problem.m, problem.m)))
    _, labels = connected_components(adj, directed=False)
    comps = {}
    for p, lab in enumerate(labels):
        comps.setdefault(lab, []).append(p)
    out = []
    for comp in comps.values():
        if math.sqrt(problem.coordinate_value(comp)) * problem.scale < tol:
            out.append(comp)
    return sorted(out, key=lambda c: (len(c), c[0]))


def find_reducing_subspace(ops, max_rank: int = 16, tol: float = 1e-8, ambient=256,
                           restarts: int = 10, iters: int = 200, seed: int = 0):
    """Search for a projection of rank <= max_rank with defect below ``tol``.

    Exact coordinate blocks are tried first (smallest first), then frame
    descent rank by rank.  Returns ``(projection, residual)`` or None.
    """
    ops = [opmodel.build_operator(op) for op in (ops if isinstance(ops, (list, tuple)) else [ops])]
    if not tol > 0:
        raise ValidationError("tol", "must be positive")
    problem = Problem(ops, ambient_window(ops, ambient))
    for comp in coordinate_blocks(problem, tol):
        if len(comp) <= max_rank:
            P = Coordinate(tuple(problem.win[p] for p in comp))
            res = _verified_value(problem, P)
            if res < tol:
                return P, res
    for r in range(1, min(max_rank, problem.m // 4) + 1):
        res = _minimize(problem, r, restarts, iters, seed)
        if res.best_value < tol:
            return res.best_projection, res.best_value
    return None


@dataclass
class ClassificationReport:
    ell_estimate: int
    epsilon_curve: list
    cell: str
    evidence: str
    block: Projection | None = None
    scale: float = 1.0
    details: dict = field(default_factory=dict)


@dataclass
class ClassifyParams:
    max_rank: int = 16
    ambient: object = 256
    tol: float = 1e-8
    restarts: int = 10
    iters: int = 200
    seed: int = 1
    ranks: Sequence[int] | None = None
    floor: float = 0.5
    vanish: float = 0.3


def classify(ops, params: ClassifyParams | None = None) -> ClassificationReport:
    """Assign the classification cell (W0plus, W0minus, W1plus, S) from numerical evidence.

    A reducing block is searched first.  The ε-curve is then computed on the
    complement of the block (or on the whole window).  Defects are compared
    after dividing by the operator scale ``max_j ||(T - T_jj) e_j||`` so that
    ``λT + μI`` lands in the same cell as ``T``: the curve tends to 0 when its
    envelope at the largest rank is <= ``vanish``, and is bounded away from 0
    when its minimum is >= ``floor``.
    """
    p = params or ClassifyParams()
    ops = [opmodel.build_operator(op) for op in (ops if isinstance(ops, (list, tuple)) else [ops])]
    win = ambient_window(ops, p.ambient)
    problem = Problem(ops, win)
    hit = find_reducing_subspace(ops, p.max_rank, p.tol, win, p.restarts, p.iters, p.seed)
    blocks = [b for b in coordinate_blocks(problem, p.tol) if len(b) <= p.max_rank]
    ell = sum(len(b) for b in blocks)
    exclude = None
    sub = win
    if hit is not None:
        ell = max(ell, hit[0].rank)
        if isinstance(hit[0], Coordinate):
            gone = hit[0].index_set
            sub = [i for i in win if i not in gone]
        else:
            exclude = hit[0]
    ranks = list(p.ranks) if p.ranks is not None else _default_ranks(p.max_rank)
    ranks = [r for r in ranks if 4 * r <= len(sub)]
    if not ranks:
        raise ValidationError("ambient", "ambient window too small for the epsilon curve")
    curve = epsilon_curve(ops, ranks, sub, p.restarts, p.iters, p.seed, exclude=exclude)
    scale = problem.scale
    normalized = [r.best_value / scale for r in curve]
    final = min(normalized)
    tends0 = curve[-1].envelope / scale <= p.vanish
    bounded = final >= p.floor
    if hit is None:
        cell = "W1plus" if tends0 else ("S" if bounded else "undetermined")
    else:
        cell = "W0plus" if tends0 else ("W0minus" if bounded else "undetermined")
    pts = ", ".join(f"r={r.rank}: {r.best_value:.4g}" for r in curve)
    block_txt = (f"reducing block of rank {hit[0].rank} (residual {hit[1]:.2e})" if hit is not None
                 else f"no reducing block up to rank {p.max_rank} (tol {p.tol:g})")
    evidence = (f"{block_txt}; epsilon curve on the complement [{pts}] with operator scale {scale:.4g}; "
                f"vanish<={p.vanish}, floor>={p.floor}; {CAVEAT}")
    return ClassificationReport(ell, [(r.rank, r.best_value) for r in curve], cell, evidence,
                                None if hit is None else hit[0], scale,
                                {"ambient": len(win), "complement": len(sub)})


def _default_ranks(max_rank: int) -> list[int]:
    out, r = [], 1
    while r < max_rank:
        out.append(r)
        r *= 2
    out.append(max_rank)
    return out


class OptimizerExtender:
    """Extension oracle backed by the probe: R = Q ∨ (searched free frame)."""

    name = "optimizer"

    def __init__(self, ambient=256, restarts: int = 10, iters: int = 200, seed: int = 0,
                 extra_ranks: Sequence[int] | None = None):
        self.ambient = ambient
        self.restarts, self.iters, self.seed = restarts, iters, seed
        self.extra_ranks = extra_ranks
        self.calls = 0

    def __call__(self, ops, Q: Projection, eps: float):
        self.calls += 1
        if _max_phi(ops, Q) <= eps:
            return Q
        win = list(dict.fromkeys(list(Q.support()) + ambient_window(ops, self.ambient)))
        problem = Problem(ops, win)
        extra = self.extra_ranks or [Q.rank, 2 * Q.rank, 4 * Q.rank]
        for r in extra:
            if Q.rank + r > problem.m:
                break
            res = _minimize(problem, r, self.restarts, self.iters, self.seed, fixed=Q)
            if res.best_value <= eps:
                return res.best_projection
        return None


def _max_phi(ops, P):
    return max(hs_defect(op, P).value for op in ops)
