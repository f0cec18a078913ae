"""The Følner defect φ(T, P) = ||TP - PT||_2 / ||P||_2 and its variants.

For a coordinate projection onto an index set ``W`` the commutator has the
entries ``T_ij`` for ``i ∉ W, j ∈ W`` and ``-T_ij`` for ``i ∈ W, j ∉ W`` and
nothing else, so the defect is read off the columns and rows of ``W`` without
forming a dense window.  Frame projections are handled densely on the frame's
window inflated by every index its columns and rows reach, which contains the
whole support of the commutator.  Both paths are exact for every operator in
:mod:`foelner_lab.opmodel`; ``error_bound`` is therefore always zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import opmodel
from .errors import ResourceError, ValidationError
from .projlib import Coordinate, Projection, check_sort

# singular values below this fraction of the largest are dropped from trace norms
SV_CUTOFF = 1e-12


@dataclass(frozen=True)
class DefectReport:
    value: float
    error_bound: float
    exact: bool
    norm_kind: str
    rank: int
    ambient_size: int


def _coordinate_entries(op, P: Coordinate):
    inside = P.index_set
    for j in P.indices:
        for i, v in op.column(j).items():
            if i not in inside:
                yield i, j, v
    for i in P.indices:
        for j, v in op.row(i).items():
            if j not in inside:
                yield i, j, -v


def _check(op, P: Projection):
    if P.rank == 0:
        raise ValidationError("projection", "the defect is undefined for the zero projection")
    check_sort(P, op.sort)


def commutator_block(op, P: Projection, limit: int = opmodel.DEFAULT_WINDOW_LIMIT):
    """Rows, columns and dense values of the nonzero part of ``[T, P]``.

    Returns ``(rows, cols, C, ambient_size)``; the singular values of ``C``
    are exactly the nonzero singular values of the commutator.
    """
    _check(op, P)
    if isinstance(P, Coordinate):
        rows, cols, vals = {}, {}, []
        for i, j, v in _coordinate_entries(op, P):
            vals.append((rows.setdefault(i, len(rows)), cols.setdefault(j, len(cols)), v))
        if len(rows) > limit or len(cols) > limit:
            raise ResourceError(f"commutator block {len(rows)}x{len(cols)} exceeds limit {limit}")
        c = np.zeros((len(rows), len(cols)), dtype=complex)
        for a, b, v in vals:
            c[a, b] = v
        outside = set(rows) | set(cols)
        ambient = P.rank + len(outside - P.index_set)
        return list(rows), list(cols), c, ambient
    win = opmodel.expand_window(op, P.window)
    if len(win) > limit:
        raise ResourceError(f"inflated window of size {len(win)} exceeds limit {limit}")
    t = opmodel.truncate(op, win, limit).matrix
    v = P.frame_on(win)
    pm = v @ v.conj().T
    return win, win, t @ pm - pm @ t, len(win)


def commutator_hs_squared(op, P: Projection) -> float:
    """``||[T, P]||_2^2``; streaming for coordinate projections."""
    _check(op, P)
    if isinstance(P, Coordinate):
        return float(sum(abs(v) ** 2 for _, _, v in _coordinate_entries(op, P)))
    _, _, c, _ = commutator_block(op, P)
    return float(np.sum(np.abs(c) ** 2))


def _ambient_size(op, P):
    if isinstance(P, Coordinate):
        outside = set()
        for i, j, _ in _coordinate_entries(op, P):
            outside.add(j if i in P.index_set else i)
        return P.rank + len(outside)
    return len(opmodel.expand_window(op, P.window))


def hs_defect(op, P: Projection) -> DefectReport:
    """φ(T, P) in the Hilbert-Schmidt norm."""
    num = commutator_hs_squared(op, P)
    return DefectReport(math.sqrt(num) / P.hs_norm, 0.0, True, "hs", P.rank, _ambient_size(op, P))


def _singular_values(c):
    if c.size == 0:
        return np.zeros(0)
    return np.linalg.svd(c, compute_uv=False)


def trace_defect(op, P: Projection) -> DefectReport:
    """Trace-norm defect ``||[T, P]||_1 / rank P``."""
    _, _, c, amb = commutator_block(op, P)
    s = _singular_values(c)
    if s.size:
        s = s[s > SV_CUTOFF * s[0]]
    return DefectReport(float(np.sum(s)) / P.rank, 0.0, True, "trace", P.rank, amb)


def opnorm_defect(op, P: Projection) -> DefectReport:
    """Operator norm ``||[T, P]||``, not normalized by the projection."""
    _, _, c, amb = commutator_block(op, P)
    s = _singular_values(c)
    return DefectReport(float(s[0]) if s.size else 0.0, 0.0, True, "op", P.rank, amb)


DEFECTS = {"hs": hs_defect, "trace": trace_defect, "op": opnorm_defect}


def phi(op, P: Projection) -> float:
    return hs_defect(op, P).value
