"""Constructions of (proper) Følner sequences.

Each constructor returns a list of :class:`SequenceRecord` carrying the
measured defects and, where the construction comes with one, an analytic
bound that the measured value is checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import opmodel, projlib
from .defect import hs_defect, opnorm_defect
from .errors import CertificationError, PreconditionError, ValidationError
from .projlib import Coordinate, Projection

CERT_SLACK = 1e-9


@dataclass
class SequenceRecord:
    step: int
    projection: Projection
    rank: int
    hs_defect: float
    op_defect: float | None
    scheme: str
    certified_bound: float | None = None
    extras: dict = field(default_factory=dict)
    failed: bool = False


def as_ops(ops) -> list:
    return list(ops) if isinstance(ops, (list, tuple)) else [ops]


def max_defect(ops, P: Projection) -> float:
    return max(hs_defect(op, P).value for op in as_ops(ops))


# --- analytic bounds -----------------------------------------------------


def interval_constant(op) -> float | None:
    """Constant C with φ(T, [0, N)) <= C / sqrt(N) for shift-like operators.

    For a finite symbol, ``C = sqrt(2) * sum_k |k|^(1/2) |a_k|``.  Returns None
    when no such closed form is known for ``op``.
    """
    if isinstance(op, (opmodel.UnilateralShift, opmodel.BilateralShift)):
        return math.sqrt(2)
    if isinstance(op, opmodel.WeightedShift):
        return math.sqrt(2) * op.norm_bound()
    if isinstance(op, opmodel.Toeplitz) and op.dim == 1:
        return math.sqrt(2) * sum(math.sqrt(abs(k)) * abs(a) for k, a in op.coeffs)
    if isinstance(op, opmodel.AffineMap):
        c = interval_constant(op.inner)
        return None if c is None else abs(op.lam) * c
    if isinstance(op, opmodel.Adjoint):
        return interval_constant(op.inner)
    return None


def ceil_sqrt(n: int) -> int:
    b = math.isqrt(n)
    return b if b * b == n else b + 1


def toeplitz2_bound(op: opmodel.Toeplitz, n: int) -> dict:
    """Box bound for a Toeplitz operator on the 2-torus.

    With ``b = ceil(sqrt(n))`` and ``||F||^2 = sum |a_k|^2`` the part leaving
    the n x n box satisfies ``||(1-P)TP||_2^2 / n^2 <= A1 + A2`` where
    ``A1 = sum_{s1 > b} |a_s|^2 + (b/n) ||F||^2`` and ``A2`` is the same in the
    second coordinate.  ``A1_adj``, ``A2_adj`` mirror these for the part
    entering the box (negative frequencies).  A term is zero when no
    coefficient has the corresponding frequency sign.
    """
    if n < 1:
        raise ValidationError("n", "box side must be positive")
    b = ceil_sqrt(n)
    coeffs = op.coeffs
    f2 = sum(abs(a) ** 2 for _, a in coeffs)

    def term(axis, sign):
        if not any(sign * k[axis] >= 1 for k, _ in coeffs):
            return 0.0
        tail = sum(abs(a) ** 2 for k, a in coeffs if sign * k[axis] > b)
        return tail + b / n * f2

    out = {"b_N": b, "A1": term(0, 1), "A2": term(1, 1), "A1_adj": term(0, -1), "A2_adj": term(1, -1)}
    out["total"] = out["A1"] + out["A2"] + out["A1_adj"] + out["A2_adj"]
    return out


# --- sequences -----------------------------------------------------------


def interval_sequence(op, sizes: Sequence[int], with_op: bool = True) -> list[SequenceRecord]:
    """Nested canonical blocks (intervals, boxes, word balls) and their defects.

    ``sizes`` are block parameters: interval length, box side, or word depth.
    Shift-like operators get ``certified_bound = C / sqrt(N)``; Toeplitz
    operators on the 2-torus get ``sqrt(A1 + A2 + A1_adj + A2_adj)`` with the
    individual terms in ``extras``.
    """
    sizes = list(sizes)
    if any(n < 1 for n in sizes):
        raise ValidationError("sizes", "block sizes must be positive")
    if sizes != sorted(sizes):
        raise ValidationError("sizes", "block sizes must be nondecreasing for a nested sequence")
    const = interval_constant(op)
    records = []
    for step, n in enumerate(sizes):
        P = Coordinate(tuple(opmodel.block(op.sort, n)))
        rep = hs_defect(op, P)
        rec = SequenceRecord(step, P, P.rank, rep.value,
                             opnorm_defect(op, P).value if with_op else None, "interval")
        if isinstance(op, opmodel.Toeplitz) and op.dim == 2:
            terms = toeplitz2_bound(op, n)
            rec.extras.update(terms)
            rec.certified_bound = math.sqrt(terms["total"])
        elif const is not None and op.sort in (opmodel.NAT, opmodel.INT):
            rec.certified_bound = const / math.sqrt(n)
        if rec.certified_bound is not None and rep.value > rec.certified_bound * (1 + 1e-12) + 1e-15:
            raise CertificationError(f"step {step}: defect {rep.value} exceeds bound {rec.certified_bound}")
        records.append(rec)
    return records


def tensor_sequence(op, seq_left: Sequence[SequenceRecord], seq_right: Sequence[SequenceRecord],
                    with_op: bool = False) -> list[SequenceRecord]:
    """Records for ``P_n ⊗ Q_n`` with the majorant φ(A,P)||B|| + ||A||φ(B,Q)."""
    if not isinstance(op, opmodel.TensorProduct):
        raise ValidationError("operator", "tensor_sequence needs a tensor product")
    if not seq_left or not seq_right:
        raise ValidationError("sequences", "factor sequences must be nonempty")
    na, nb = op.left.norm_bound(), op.right.norm_bound()
    records = []
    for step, (ra, rb) in enumerate(zip(seq_left, seq_right)):
        projlib.check_sort(ra.projection, op.left.sort)
        projlib.check_sort(rb.projection, op.right.sort)
        P = projlib.tensor(ra.projection, rb.projection)
        measured = hs_defect(op, P).value
        majorant = ra.hs_defect * nb + na * rb.hs_defect
        if measured > majorant + CERT_SLACK:
            raise CertificationError(f"step {step}: tensor defect {measured} exceeds majorant {majorant}")
        records.append(SequenceRecord(step, P, P.rank, measured,
                                      opnorm_defect(op, P).value if with_op else None,
                                      "tensor", majorant))
    return records


def lift_direct_sum(op, seq: Sequence[SequenceRecord], side: str = "left",
                    with_op: bool = False) -> list[SequenceRecord]:
    """Embed each ``P`` as ``P ⊕ 0`` (or ``0 ⊕ P``); the defect is unchanged."""
    if not isinstance(op, opmodel.DirectSum):
        raise ValidationError("operator", "lift_direct_sum needs a direct sum")
    if side not in ("left", "right"):
        raise ValidationError("side", "must be 'left' or 'right'")
    tag = 0 if side == "left" else 1
    part = op.left if tag == 0 else op.right
    records = []
    for rec in seq:
        projlib.check_sort(rec.projection, part.sort)
        P = projlib.embed_sum(rec.projection, tag)
        measured = hs_defect(op, P).value
        if abs(measured - rec.hs_defect) > 1e-12:
            raise CertificationError(f"step {rec.step}: lifted defect {measured} != {rec.hs_defect}")
        records.append(SequenceRecord(rec.step, P, P.rank, measured,
                                      opnorm_defect(op, P).value if with_op else None,
                                      f"lift-{side}", rec.certified_bound))
    return records


# --- greedy construction -------------------------------------------------

ExtensionOracle = Callable[[list, Projection, float], "Projection | None"]


def _contains(R: Projection, Q: Projection, tol: float = 1e-9) -> bool:
    if isinstance(R, Coordinate) and isinstance(Q, Coordinate):
        return Q.index_set <= R.index_set
    win = projlib.covering_window(R, Q)
    vr, vq = R.frame_on(win), Q.frame_on(win)
    resid = vq - vr @ (vr.conj().T @ vq)
    return float(np.linalg.norm(resid)) <= tol * max(1.0, math.sqrt(Q.rank))


class IntervalExtender:
    """Enlarge to the smallest canonical block containing Q with small defect.

    The block parameter is found by doubling followed by bisection, and the
    returned block is always verified.
    """

    name = "interval"

    def __init__(self, max_block: int = 1 << 16):
        self.max_block = max_block
        self.calls = 0

    def _block(self, sort, n):
        return Coordinate(tuple(opmodel.block(sort, n)))

    def __call__(self, ops, Q: Projection, eps: float):
        self.calls += 1
        sort = ops[0].sort
        need = set(Q.support())

        def ok_contains(n):
            return need <= set(opmodel.block(sort, n))

        def ok_defect(n):
            return max_defect(ops, self._block(sort, n)) <= eps

        def exhausted(n):
            d = opmodel.dimension(sort)
            if d is not None:
                return n > 2 * d
            return len(opmodel.block(sort, n)) > self.max_block

        lo = 1
        while not ok_contains(lo):
            lo *= 2
            if exhausted(lo):
                return None
        # smallest containing block
        a, b = lo // 2, lo
        while b - a > 1:
            m = (a + b) // 2
            a, b = (a, m) if ok_contains(m) else (m, b)
        lo = b
        hi = lo
        while not ok_defect(hi):
            prev, hi = hi, hi * 2
            if exhausted(hi):
                return None
            lo = prev
        if hi == lo:
            return self._block(sort, hi)
        a, b = lo, hi
        while b - a > 1:
            m = (a + b) // 2
            a, b = (a, m) if ok_defect(m) else (m, b)
        return self._block(sort, b)


class TrivialExtender:
    """Return Q itself when it already satisfies the defect target."""

    name = "trivial"

    def __init__(self):
        self.calls = 0

    def __call__(self, ops, Q, eps):
        self.calls += 1
        return Q if max_defect(ops, Q) <= eps else None


def greedy_proper_sequence(ops, extender: ExtensionOracle, epsilons: Sequence[float] | None = None,
                           anchors: Sequence[Projection] | None = None,
                           steps: int | None = None) -> list[SequenceRecord]:
    """Greedy nested sequence with ``P_{n+1} >= P_n ∨ L_n`` and φ <= ε_{n+1}.

    Defaults: ``ε_n = 1/(n+1)`` and canonical blocks ``L_n = block(n)``.  If
    the extender fails, the partial sequence is returned with a final record
    whose ``failed`` flag is set.
    """
    ops = as_ops(ops)
    sort = ops[0].sort
    if steps is None:
        steps = len(epsilons) if epsilons is not None else (len(anchors) if anchors is not None else None)
    if steps is None:
        raise ValidationError("steps", "give steps, epsilons or anchors")
    if epsilons is None:
        epsilons = [1.0 / (n + 1) for n in range(1, steps + 1)]
    if anchors is None:
        anchors = [Coordinate(tuple(opmodel.block(sort, n))) for n in range(1, steps + 1)]
    if len(epsilons) < steps or len(anchors) < steps:
        raise ValidationError("epsilons", "need one epsilon and one anchor per step")
    name = getattr(extender, "name", type(extender).__name__)
    records, P = [], None
    for step in range(steps):
        eps, anchor = epsilons[step], anchors[step]
        projlib.check_sort(anchor, sort)
        Q = anchor if P is None else projlib.join(P, anchor)
        R = extender(ops, Q, eps)
        extras = {"epsilon": eps, "extender": name, "extender_calls": getattr(extender, "calls", None)}
        if R is None:
            records.append(SequenceRecord(step, Q, Q.rank, max_defect(ops, Q), None,
                                          f"greedy:{name}", eps, extras, failed=True))
            break
        if not _contains(R, Q):
            raise CertificationError(f"step {step}: extender returned a projection not containing P_n ∨ L_n")
        value = max_defect(ops, R)
        if value > eps * (1 + 1e-12):
            raise CertificationError(f"step {step}: extender result has defect {value} > {eps}")
        op_def = max(opnorm_defect(op, R).value for op in ops)
        records.append(SequenceRecord(step, R, R.rank, value, op_def, f"greedy:{name}", eps, extras))
        P = R
    return records


# --- constant-rank merge -------------------------------------------------


@dataclass
class MergeResult:
    projection: Projection
    certified_bound: float
    measured: float


def merge_constant_rank(ops, family: Sequence[Projection], delta: float,
                        strict: bool = True) -> MergeResult:
    """Merge almost-orthogonal, almost-invariant projections of equal rank.

    Hypotheses: every member has defect < δ, every pair has ``||P_j P_k|| < δ``
    and ``||P_j P_k|| <= 1/(3N^3)``.  With ``strict`` (the default) δ itself
    must not exceed ``1/(3N^3)``.  The join then has rank ``N * rank`` and
    defect below ``4 N δ``, which is checked.
    """
    ops = as_ops(ops)
    family = list(family)
    if not family:
        raise PreconditionError("family: empty")
    n = len(family)
    ceiling = 1.0 / (3 * n ** 3)
    if not delta > 0:
        raise PreconditionError("delta: must be positive")
    if strict and delta > ceiling:
        raise PreconditionError(f"delta: {delta} exceeds 1/(3N^3) = {ceiling} for N = {n}")
    m = family[0].rank
    for j, P in enumerate(family):
        if P.rank != m:
            raise PreconditionError(f"family[{j}]: rank {P.rank} differs from rank {m} of family[0]")
        value = max_defect(ops, P)
        if not value < delta:
            raise PreconditionError(f"family[{j}]: defect {value} is not below delta {delta}")
    for j in range(n):
        for k in range(j + 1, n):
            ov = projlib.overlap_norm(family[j], family[k])
            if not ov < delta or ov > ceiling:
                raise PreconditionError(
                    f"family[{j}], family[{k}]: overlap {ov} violates < {delta} and <= {ceiling}")
    P = projlib.join_all(family)
    if P.rank != n * m:
        raise CertificationError(f"join has rank {P.rank}, expected {n * m}")
    measured = max_defect(ops, P)
    bound = 4 * n * delta
    if not measured < bound:
        raise CertificationError(f"merged defect {measured} not below 4N delta = {bound}")
    return MergeResult(P, bound, measured)
