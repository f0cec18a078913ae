"""Randomized checks of the projection and defect inequalities, and
numerical-range diagnostics for finite windows."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import opmodel, projlib
from .defect import hs_defect, trace_defect
from .errors import ValidationError
from .projlib import Coordinate, Frame

TOL = 1e-9


@dataclass
class SuiteReport:
    suite: str
    trials: int
    violations: int
    worst_margin: float
    seed: int
    attempts: int = 0
    starved: bool = False
    rows: list = field(default_factory=list)

    def to_json(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "rows"}
        if not math.isfinite(out["worst_margin"]):
            out["worst_margin"] = None
        if self.rows:
            out["rows"] = self.rows
        return out


def random_frame(rng, dim: int, rank: int, real: bool = False) -> np.ndarray:
    g = rng.standard_normal((dim, rank))
    if not real:
        g = g + 1j * rng.standard_normal((dim, rank))
    q, _ = np.linalg.qr(g)
    return q


def random_matrix(rng, dim: int) -> np.ndarray:
    return rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))


def sum_projections_margin(projections) -> tuple[float, int, int]:
    """Smallest eigenvalue of ``P_1 + ... + P_s`` on the range of their join.

    Returns ``(min_eig, rank of the join, sum of ranks)``.
    """
    win = projlib.covering_window(*projections)
    frames = [P.frame_on(win) for P in projections]
    joined = projlib.join_all(list(projections))
    u = joined.frame_on(win)
    s = sum(f @ f.conj().T for f in frames)
    eig = np.linalg.eigvalsh(u.conj().T @ s @ u)
    return float(eig[0]), joined.rank, sum(P.rank for P in projections)


def check_sum_projections(trials: int, dim: int, s: int, seed: int, max_rank: int | None = None,
                          max_attempts: int | None = None) -> SuiteReport:
    """Almost-orthogonal families: ΣP_j >= ½ (P_1 ∨ ... ∨ P_s) and ranks add.

    Samples are exactly orthogonal frames perturbed by a random amount; a
    sample is kept only if every pairwise ``||P_j P_k||`` is <= 1/(3 s^3).
    """
    if s < 1:
        raise ValidationError("s", "must be positive")
    max_rank = max_rank or max(1, dim // (2 * s))
    if dim < s * max_rank:
        raise ValidationError("dim", "need dim >= s * max_rank")
    max_attempts = max_attempts or 20 * trials
    delta = 1.0 / (3 * s ** 3)
    rng = np.random.default_rng(seed)
    win = tuple(range(dim))
    accepted = attempts = violations = 0
    worst = math.inf
    while accepted < trials and attempts < max_attempts:
        attempts += 1
        ranks = rng.integers(1, max_rank + 1, size=s)
        base = random_frame(rng, dim, int(ranks.sum()))
        eta = rng.uniform(0, 2 * delta)
        frames, start = [], 0
        for r in ranks:
            blk = base[:, start:start + r] + eta * (rng.standard_normal((dim, r)) + 1j * rng.standard_normal((dim, r))) / math.sqrt(2 * dim)
            frames.append(Frame(win, np.linalg.qr(blk)[0]))
            start += r
        if any(projlib.overlap_norm(frames[j], frames[k]) > delta
               for j in range(s) for k in range(j + 1, s)):
            continue
        accepted += 1
        min_eig, jrank, rsum = sum_projections_margin(frames)
        margin = min_eig - 0.5
        worst = min(worst, margin)
        if margin < -TOL or jrank != rsum:
            violations += 1
    return SuiteReport("sum_projections", accepted, violations, worst, seed, attempts, accepted < trials)


def check_perturbation_bound(trials: int, dim: int, seed: int) -> SuiteReport:
    """|φ(L,P) - φ(L,Q)| <= 4 ||L|| ||P - Q||_2 / max(||P||_2, ||Q||_2)."""
    if dim < 4:
        raise ValidationError("dim", "must be at least 4")
    rng = np.random.default_rng(seed)
    win = tuple(range(dim))
    violations, worst = 0, math.inf
    for _ in range(trials):
        m = random_matrix(rng, dim)
        L = opmodel.DenseMatrix(m / np.linalg.norm(m, 2))
        rp = int(rng.integers(1, dim // 2 + 1))
        vp = random_frame(rng, dim, rp)
        if rng.random() < 0.5:
            # nearby projection of the same or a neighbouring rank
            rq = max(1, min(dim // 2, rp + int(rng.integers(-1, 2))))
            noise = rng.uniform(0, 0.3)
            seed_cols = np.hstack([vp, random_frame(rng, dim, max(rq - rp, 0))])[:, :rq]
            vq = np.linalg.qr(seed_cols + noise * random_frame(rng, dim, rq))[0]
        else:
            vq = random_frame(rng, dim, int(rng.integers(1, dim // 2 + 1)))
        P, Q = Frame(win, vp), Frame(win, vq)
        lhs = abs(hs_defect(L, P).value - hs_defect(L, Q).value)
        rhs = 4 * L.norm_bound() * projlib.hs_distance(P, Q) / max(P.hs_norm, Q.hs_norm)
        margin = rhs - lhs
        worst = min(worst, margin)
        if margin < -TOL:
            violations += 1
    return SuiteReport("perturbation", trials, violations, worst, seed, trials)


def check_tensor_bound(trials: int, dims=(8, 8), seed: int = 0) -> SuiteReport:
    """φ(A⊗B, P⊗Q) <= φ(A,P) ||B|| + ||A|| φ(B,Q) on random dense factors."""
    d1, d2 = dims
    rng = np.random.default_rng(seed)
    violations, worst = 0, math.inf
    for _ in range(trials):
        A = opmodel.DenseMatrix(random_matrix(rng, d1) * rng.uniform(0.1, 2))
        B = opmodel.DenseMatrix(random_matrix(rng, d2) * rng.uniform(0.1, 2))
        P = Frame(tuple(range(d1)), random_frame(rng, d1, int(rng.integers(1, d1))))
        Q = Frame(tuple(range(d2)), random_frame(rng, d2, int(rng.integers(1, d2))))
        lhs = hs_defect(opmodel.TensorProduct(A, B), projlib.tensor(P, Q)).value
        rhs = hs_defect(A, P).value * B.norm_bound() + A.norm_bound() * hs_defect(B, Q).value
        margin = rhs - lhs
        worst = min(worst, margin)
        if margin < -TOL:
            violations += 1
    return SuiteReport("tensor", trials, violations, worst, seed, trials)


def check_trace_hs_equivalence(op, ranks, small: float = 0.01, big: float = 0.05) -> SuiteReport:
    """HS and trace-norm defects along canonical blocks vanish together.

    At the largest rank, whenever one defect is below ``small`` the other must
    be below ``big``.  ``rows`` holds ``(N, rank, hs, trace)`` per step.
    """
    ranks = sorted(ranks)
    if not ranks:
        raise ValidationError("ranks", "empty")
    rows = []
    for n in ranks:
        P = Coordinate(tuple(opmodel.block(op.sort, n)))
        rows.append((n, P.rank, hs_defect(op, P).value, trace_defect(op, P).value))
    _, _, hs, tr = rows[-1]
    violations = 0
    if min(hs, tr) < small:
        margin = big - max(hs, tr)
        violations = int(margin < 0)
    else:
        margin = math.nan
    return SuiteReport("trace_hs", len(ranks), violations, margin, 0, len(ranks), rows=rows)


def strong_to_norm_decay(offsets, width: int = 8, ratio: float = 0.5, support: int = 400) -> list[float]:
    """``||P̂ P_n||`` for P̂ = f f* against translated intervals [a, a + width).

    ``f_i ∝ ratio**i``; the intervals move to infinity, hence converge
    strongly to 0, and the norms must decay.
    """
    f = ratio ** np.arange(support, dtype=float)
    f /= np.linalg.norm(f)
    return [float(np.linalg.norm(f[a:a + width])) for a in offsets]


# --- numerical range -------------------------------------------------------


def _as_matrix(M) -> np.ndarray:
    m = M.matrix if isinstance(M, opmodel.DenseWindow) else np.asarray(M, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError("M", f"expected a square matrix, got shape {m.shape}")
    return m.astype(complex)


def support_function(M, angles: int = 360):
    """``(thetas, h, points)``: ``h(θ) = max Re(e^{-iθ} z)`` over W(M) and the
    boundary point attaining it."""
    m = _as_matrix(M)
    thetas = 2 * np.pi * np.arange(angles) / angles
    h, pts = np.empty(angles), np.empty(angles, dtype=complex)
    for n, t in enumerate(thetas):
        rot = np.exp(-1j * t) * m
        w, x = np.linalg.eigh((rot + rot.conj().T) / 2)
        v = x[:, -1]
        h[n] = w[-1]
        pts[n] = v.conj() @ m @ v
    return thetas, h, pts


def numerical_range(M, angles: int = 360, tol: float = 1e-12) -> np.ndarray:
    """Counter-clockwise boundary polygon of the numerical range W(M)."""
    if angles < 8:
        raise ValidationError("angles", "need at least 8 angles")
    _, _, pts = support_function(M, angles)
    out = []
    for z in pts:
        if not out or abs(z - out[-1]) > tol:
            out.append(z)
    while len(out) > 1 and abs(out[0] - out[-1]) <= tol:
        out.pop()
    # a degenerate range may revisit points (e.g. a segment); keep distinct ones
    if len(out) > 2 and polygon_area(np.array(out)) <= tol:
        uniq = []
        for z in out:
            if all(abs(z - u) > tol for u in uniq):
                uniq.append(z)
        out = uniq
    return np.array(out, dtype=complex)


def polygon_area(pts: np.ndarray) -> float:
    x, y = pts.real, pts.imag
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def is_convex(pts: np.ndarray, tol: float = 1e-9) -> bool:
    """Consecutive edges of a counter-clockwise polygon never turn clockwise."""
    if len(pts) < 3:
        return True
    e = np.roll(pts, -1) - pts
    cross = (e.real * np.roll(e, -1).imag - e.imag * np.roll(e, -1).real)
    return bool(np.all(cross >= -tol * max(1.0, float(np.max(np.abs(pts))) ** 2)))


def in_range(M, z: complex, angles: int = 360, tol: float = 1e-9) -> bool:
    """Whether ``z`` lies in every supporting half-plane of W(M)."""
    thetas, h, _ = support_function(M, angles)
    return bool(np.all(np.real(np.exp(-1j * thetas) * z) <= h + tol))


def commutator_range_distance(M, X, angles: int = 360) -> float:
    """Distance from 0 to W([M, X]), via the support function.

    For a convex set K, dist(0, K) = max(0, max_θ -h_K(θ)).  On a finite window
    the trace of a commutator vanishes, so 0 = tr/n lies in W and the answer
    is 0 up to rounding: truncations can never refute finiteness.
    """
    m, x = _as_matrix(M), _as_matrix(X)
    if m.shape != x.shape:
        raise ValidationError("X", f"shape {x.shape} does not match {m.shape}")
    c = m @ x - x @ m
    _, h, _ = support_function(c, angles)
    return float(max(0.0, np.max(-h)))
