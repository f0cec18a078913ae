"""Finite-rank orthogonal projections.

Two representations are used.  :class:`Coordinate` projections are kept as
index sets and never materialized, so interval and box projections of rank
10^4 cost nothing.  :class:`Frame` projections carry an orthonormal column
matrix ``V`` inside an ordered window and stand for ``P = V V*``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import opmodel
from .errors import ValidationError

ORTHO_TOL = 1e-10
JOIN_TOL = 1e-10
# singular values within this factor of the join cutoff are flagged ambiguous
AMBIGUITY_FACTOR = 1e3


class Projection:
    rank: int

    @property
    def hs_norm(self) -> float:
        return math.sqrt(self.rank)

    def support(self) -> tuple:
        raise NotImplementedError

    def frame_on(self, win: Sequence) -> np.ndarray:
        """Orthonormal columns of this projection expressed on ``win``."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Coordinate(Projection):
    """Projection onto ``span{e_i : i in indices}``."""

    indices: tuple

    def __post_init__(self):
        idx = tuple(self.indices)
        if len(set(idx)) != len(idx):
            idx = tuple(dict.fromkeys(idx))
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "_set", frozenset(idx))

    @property
    def rank(self) -> int:
        return len(self.indices)

    @property
    def index_set(self) -> frozenset:
        return self._set

    def __contains__(self, idx) -> bool:
        return idx in self._set

    def support(self):
        return self.indices

    def frame_on(self, win):
        pos = {idx: a for a, idx in enumerate(win)}
        v = np.zeros((len(win), self.rank), dtype=complex)
        for c, idx in enumerate(self.indices):
            v[pos[idx], c] = 1.0
        return v

    def __eq__(self, other):
        return isinstance(other, Coordinate) and self._set == other._set

    def __hash__(self):
        return hash(self._set)

    def __repr__(self):
        if self.rank > 6:
            return f"Coordinate(<{self.rank} indices: {self.indices[0]!r}..{self.indices[-1]!r}>)"
        return f"Coordinate({self.indices!r})"


@dataclass(frozen=True, eq=False)
class Frame(Projection):
    """Projection ``V V*`` for orthonormal columns ``V`` on an ordered window.

    ``flags`` records numerical caveats, e.g. an ambiguous rank cut in a join.
    """

    window: tuple
    columns: np.ndarray
    flags: tuple = field(default=())

    def __post_init__(self):
        win = tuple(self.window)
        v = np.array(self.columns, dtype=complex)
        if v.ndim != 2 or v.shape[0] != len(win):
            raise ValidationError("columns", f"shape {v.shape} does not match window of size {len(win)}")
        if len(set(win)) != len(win):
            raise ValidationError("window", "duplicate indices")
        gram = v.conj().T @ v
        if v.shape[1] and np.max(np.abs(gram - np.eye(v.shape[1]))) > ORTHO_TOL:
            raise ValidationError("columns", "columns are not orthonormal")
        v.setflags(write=False)
        object.__setattr__(self, "window", win)
        object.__setattr__(self, "columns", v)

    @classmethod
    def from_vectors(cls, window, vectors, tol: float = JOIN_TOL) -> "Frame":
        """Orthonormalize arbitrary spanning vectors (columns) via SVD."""
        u, s, _ = np.linalg.svd(np.asarray(vectors, dtype=complex), full_matrices=False)
        return cls(tuple(window), u[:, s > tol])

    @property
    def rank(self) -> int:
        return self.columns.shape[1]

    def support(self):
        rows = np.flatnonzero(np.any(self.columns != 0, axis=1))
        return tuple(self.window[r] for r in rows)

    def frame_on(self, win):
        pos = {idx: a for a, idx in enumerate(win)}
        v = np.zeros((len(win), self.rank), dtype=complex)
        for r, idx in enumerate(self.window):
            if idx in pos:
                v[pos[idx]] = self.columns[r]
            elif np.any(self.columns[r] != 0):
                raise ValidationError("window", f"frame has weight on {idx!r} outside the target window")
        return v

    def matrix(self) -> np.ndarray:
        return self.columns @ self.columns.conj().T


def coordinate_projection(indices, allow_zero: bool = False) -> Coordinate:
    idx = tuple(indices)
    if not idx and not allow_zero:
        raise ValidationError("indices", "empty index set gives the zero projection")
    return Coordinate(idx)


def interval(start: int, stop: int) -> Coordinate:
    """Coordinate projection onto span{e_start, ..., e_(stop-1)}."""
    return coordinate_projection(range(start, stop))


def box(n: int) -> Coordinate:
    """Row-major n x n box {(k1, k2) : 0 <= k1, k2 < n}."""
    return coordinate_projection(opmodel.block(opmodel.NAT2, n))


def words(n: int, depth: int) -> Coordinate:
    return coordinate_projection(opmodel.word_window(n, depth))


def check_sort(P: Projection, sort):
    for idx in (P.indices if isinstance(P, Coordinate) else P.window):
        opmodel.check_index(sort, idx, "projection index")


def covering_window(*projections: Projection) -> list:
    seen, out = set(), []
    for P in projections:
        for idx in (P.indices if isinstance(P, Coordinate) else P.window):
            if idx not in seen:
                seen.add(idx)
                out.append(idx)
    return out


def as_frame(P: Projection) -> Frame:
    if isinstance(P, Frame):
        return P
    return Frame(P.indices, np.eye(P.rank, dtype=complex))


def join(P: Projection, Q: Projection, tol: float = JOIN_TOL) -> Projection:
    """Projection onto the closed span of Ran P + Ran Q."""
    if isinstance(P, Coordinate) and isinstance(Q, Coordinate):
        return Coordinate(P.indices + tuple(i for i in Q.indices if i not in P.index_set))
    win = covering_window(P, Q)
    stacked = np.hstack([P.frame_on(win), Q.frame_on(win)])
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    keep = s > tol
    flags = ()
    if np.any((s > tol / AMBIGUITY_FACTOR) & (s < tol * AMBIGUITY_FACTOR)):
        flags = ("ambiguous-rank",)
    return Frame(tuple(win), u[:, keep], flags)


def join_all(projections: Sequence[Projection], tol: float = JOIN_TOL) -> Projection:
    out = projections[0]
    for Q in projections[1:]:
        out = join(out, Q, tol)
    return out


def overlap_norm(P: Projection, Q: Projection) -> float:
    """Operator norm ``||P Q||``."""
    if isinstance(P, Coordinate) and isinstance(Q, Coordinate):
        return 1.0 if P.index_set & Q.index_set else 0.0
    win = covering_window(P, Q)
    return float(np.linalg.norm(P.frame_on(win).conj().T @ Q.frame_on(win), 2))


def hs_distance(P: Projection, Q: Projection) -> float:
    """Hilbert-Schmidt norm ``||P - Q||_2``."""
    if isinstance(P, Coordinate) and isinstance(Q, Coordinate):
        return math.sqrt(len(P.index_set ^ Q.index_set))
    win = covering_window(P, Q)
    cross = P.frame_on(win).conj().T @ Q.frame_on(win)
    sq = P.rank + Q.rank - 2 * float(np.sum(np.abs(cross) ** 2))
    return math.sqrt(max(sq, 0.0))


def tensor(P: Projection, Q: Projection) -> Projection:
    """``P ⊗ Q`` on the tensor sort."""
    if isinstance(P, Coordinate) and isinstance(Q, Coordinate):
        return Coordinate(tuple((a, b) for a in P.indices for b in Q.indices))
    fp, fq = as_frame(P), as_frame(Q)
    win = tuple((a, b) for a in fp.window for b in fq.window)
    return Frame(win, np.kron(fp.columns, fq.columns))


def embed_sum(P: Projection, side: int) -> Projection:
    """``P ⊕ 0`` (side 0) or ``0 ⊕ P`` (side 1) on the direct-sum sort."""
    if isinstance(P, Coordinate):
        return Coordinate(tuple((side, i) for i in P.indices))
    return Frame(tuple((side, i) for i in P.window), P.columns, P.flags)


def _index_from_json(x):
    return tuple(_index_from_json(y) for y in x) if isinstance(x, list) else x


def projection_from_json(doc) -> Projection:
    if not isinstance(doc, dict):
        raise ValidationError("projection", "expected an object")
    kind = doc.get("type")
    if kind == "coordinate":
        return coordinate_projection(_index_from_json(i) for i in doc.get("indices", []))
    if kind == "interval":
        try:
            lo, hi = int(doc["from"]), int(doc["to"])
        except (KeyError, TypeError, ValueError):
            raise ValidationError("projection", "interval needs integer from/to") from None
        if hi < lo:
            raise ValidationError("projection.to", "must be >= from")
        return interval(lo, hi + 1)
    if kind == "box":
        n = doc.get("n")
        if not isinstance(n, int) or n < 1:
            raise ValidationError("projection.n", "must be a positive integer")
        return box(n)
    if kind == "words":
        return words(int(doc["n"]), int(doc["depth"]))
    if kind == "frame":
        win = tuple(_index_from_json(i) for i in doc.get("window", []))
        cols = np.array([[opmodel.parse_complex(x, "projection.columns") for x in row]
                         for row in doc.get("columns", [])], dtype=complex)
        if cols.size == 0:
            raise ValidationError("projection.columns", "empty frame")
        return Frame(win, cols)
    raise ValidationError("projection.type", f"unknown projection type {kind!r}")


def _index_to_json(x):
    return [_index_to_json(y) for y in x] if isinstance(x, tuple) else x


def projection_to_json(P: Projection) -> dict:
    if isinstance(P, Coordinate):
        return {"type": "coordinate", "indices": [_index_to_json(i) for i in P.indices]}
    return {
        "type": "frame",
        "window": [_index_to_json(i) for i in P.window],
        "columns": [[{"re": float(z.real), "im": float(z.imag)} for z in row] for row in P.columns],
    }
