"""Structured bounded operators on countable orthonormal bases.

Every operator is described by its sparse matrix columns and rows with respect
to a fixed basis ``{e_i}``.  ``column(j)`` returns the nonzero coordinates of
``T e_j`` and ``row(i)`` the nonzero entries ``<T e_j, e_i>`` over ``j``.  All
variants here have finitely supported columns and rows, so every commutator
with a finite-rank projection is computed exactly from finitely many entries.

Index sorts
-----------
``"nat"``         natural numbers 0, 1, 2, ...
``"int"``         integers
``"nat2"``        pairs of naturals (Hardy space of the 2-torus)
``("word", n)``   tuples over the alphabet 1..n (Fock space of the Cuntz isometries)
``("fin", n)``    0..n-1 (finite dense matrices)
``("tensor", a, b)``  pairs ``(i, j)`` with ``i`` of sort ``a``, ``j`` of sort ``b``
``("sum", a, b)``     tagged pairs ``(0, i)`` / ``(1, j)``
"""

from __future__ import annotations

import contextlib
import itertools
import math
import numbers
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ResourceError, SortMismatchError, ValidationError

NAT = "nat"
INT = "int"
NAT2 = "nat2"

DEFAULT_WINDOW_LIMIT = 4096


def word_sort(n: int):
    return ("word", n)


def fin_sort(n: int):
    return ("fin", n)


def sort_name(sort) -> str:
    if isinstance(sort, str):
        return sort
    kind = sort[0]
    if kind in ("word", "fin"):
        return f"{kind}{sort[1]}"
    return f"{kind}({sort_name(sort[1])},{sort_name(sort[2])})"


def _is_int(x) -> bool:
    return isinstance(x, numbers.Integral) and not isinstance(x, bool)


def is_index(sort, idx) -> bool:
    if sort == NAT:
        return _is_int(idx) and idx >= 0
    if sort == INT:
        return _is_int(idx)
    if sort == NAT2:
        return (isinstance(idx, tuple) and len(idx) == 2
                and all(_is_int(x) and x >= 0 for x in idx))
    kind = sort[0]
    if kind == "word":
        return isinstance(idx, tuple) and all(_is_int(x) and 1 <= x <= sort[1] for x in idx)
    if kind == "fin":
        return _is_int(idx) and 0 <= idx < sort[1]
    if kind == "tensor":
        return (isinstance(idx, tuple) and len(idx) == 2
                and is_index(sort[1], idx[0]) and is_index(sort[2], idx[1]))
    if kind == "sum":
        return (isinstance(idx, tuple) and len(idx) == 2 and idx[0] in (0, 1)
                and is_index(sort[1 + idx[0]], idx[1]))
    raise ValueError(f"unknown sort {sort!r}")


def check_index(sort, idx, what="index"):
    if not is_index(sort, idx):
        raise SortMismatchError(what, f"{idx!r} is not an index of sort {sort_name(sort)}")


def distance(sort, i, j) -> float:
    """Basis distance used by band profiles."""
    if sort in (NAT, INT):
        return abs(i - j)
    if sort == NAT2:
        return max(abs(i[0] - j[0]), abs(i[1] - j[1]))
    kind = sort[0]
    if kind == "fin":
        return abs(i - j)
    if kind == "word":
        common = 0
        for a, b in zip(reversed(i), reversed(j)):
            if a != b:
                break
            common += 1
        return len(i) + len(j) - 2 * common
    if kind == "tensor":
        return max(distance(sort[1], i[0], j[0]), distance(sort[2], i[1], j[1]))
    if kind == "sum":
        if i[0] != j[0]:
            return math.inf
        return distance(sort[1 + i[0]], i[1], j[1])
    raise ValueError(f"unknown sort {sort!r}")


def dimension(sort):
    """Dimension of the space indexed by ``sort``, or None if infinite."""
    if isinstance(sort, str) or sort[0] == "word":
        return None
    if sort[0] == "fin":
        return sort[1]
    a, b = dimension(sort[1]), dimension(sort[2])
    if a is None or b is None:
        return None
    return a * b if sort[0] == "tensor" else a + b


def word_window(n: int, depth: int) -> list:
    """All words of length <= depth over 1..n in shortlex order."""
    out = []
    for length in range(depth + 1):
        out.extend(itertools.product(range(1, n + 1), repeat=length))
    return out


def block(sort, n: int) -> list:
    """The canonical nested block of parameter ``n``.

    Intervals [0, n) on the naturals, [-(n//2), n - n//2) on the integers,
    row-major n x n boxes on pairs, words of depth <= n, products of blocks for
    tensor sorts and unions of blocks for direct sums.
    """
    if n < 0:
        raise ValidationError("n", "block parameter must be nonnegative")
    if sort == NAT:
        return list(range(n))
    if sort == INT:
        lo = -(n // 2)
        return list(range(lo, lo + n))
    if sort == NAT2:
        return [(a, b) for a in range(n) for b in range(n)]
    kind = sort[0]
    if kind == "word":
        return word_window(sort[1], n)
    if kind == "fin":
        return list(range(min(n, sort[1])))
    if kind == "tensor":
        return [(a, b) for a in block(sort[1], n) for b in block(sort[2], n)]
    if kind == "sum":
        return [(0, a) for a in block(sort[1], n)] + [(1, b) for b in block(sort[2], n)]
    raise ValueError(f"unknown sort {sort!r}")


def window(sort, size: int) -> list:
    """Canonical ambient window with at most ``size`` elements."""
    if size < 1:
        raise ValidationError("size", "window size must be positive")
    if sort in (NAT, INT):
        return block(sort, size)
    if sort == NAT2:
        return block(sort, math.isqrt(size))
    kind = sort[0]
    if kind == "word":
        n, depth, count = sort[1], 0, 1
        while count + n ** (depth + 1) <= size:
            depth += 1
            count += n ** depth
        return word_window(n, depth)
    if kind == "fin":
        return block(sort, size)
    if kind == "tensor":
        s = math.isqrt(size)
        return [(a, b) for a in window(sort[1], s) for b in window(sort[2], s)]
    if kind == "sum":
        dl, dr = dimension(sort[1]), dimension(sort[2])
        if dl is not None and dl < size:
            nl = dl
        elif dr is not None and dr < size:
            nl = size - dr
        else:
            nl = (size + 1) // 2
        left = window(sort[1], nl) if nl > 0 else []
        right = window(sort[2], size - nl) if size - nl > 0 else []
        return [(0, a) for a in left] + [(1, b) for b in right]
    raise ValueError(f"unknown sort {sort!r}")


@dataclass(frozen=True)
class BandProfile:
    """Largest basis distance carrying a nonzero entry.

    ``exact`` means ``entry(i, j) == 0`` whenever ``distance(i, j) > reach``.
    """

    reach: float
    exact: bool = True


class Operator:
    """Base class of operator handles.  Subclasses are immutable."""

    sort: Any = NAT

    def column(self, j) -> dict:
        raise NotImplementedError

    def row(self, i) -> dict:
        raise NotImplementedError

    def entry(self, i, j) -> complex:
        """Matrix element ``<T e_j, e_i>``."""
        check_index(self.sort, i, "i")
        check_index(self.sort, j, "j")
        return complex(self.column(j).get(i, 0.0))

    def norm_bound(self) -> float:
        raise NotImplementedError

    def band(self) -> BandProfile:
        raise NotImplementedError

    def adjoint(self) -> "Operator":
        return Adjoint(self)

    def is_real(self) -> bool:
        return False


def _clean(d: dict) -> dict:
    return {k: v for k, v in d.items() if v != 0}


@dataclass(frozen=True)
class Identity(Operator):
    sort: Any = NAT

    def column(self, j):
        return {j: 1.0}

    def row(self, i):
        return {i: 1.0}

    def norm_bound(self):
        return 1.0

    def band(self):
        return BandProfile(0)

    def is_real(self):
        return True


@dataclass(frozen=True)
class UnilateralShift(Operator):
    """``S e_i = e_{i+1}`` on the naturals."""

    sort: Any = field(default=NAT, init=False)

    def column(self, j):
        return {j + 1: 1.0}

    def row(self, i):
        return {i - 1: 1.0} if i > 0 else {}

    def norm_bound(self):
        return 1.0

    def band(self):
        return BandProfile(1)

    def is_real(self):
        return True


@dataclass(frozen=True)
class BilateralShift(Operator):
    sort: Any = field(default=INT, init=False)

    def column(self, j):
        return {j + 1: 1.0}

    def row(self, i):
        return {i - 1: 1.0}

    def norm_bound(self):
        return 1.0

    def band(self):
        return BandProfile(1)

    def is_real(self):
        return True


@dataclass(frozen=True)
class WeightedShift(Operator):
    """``W e_n = w_n e_{n+1}``.

    Weights come from a finite table, extended periodically or by the constant
    ``tail``; alternatively ``decay=(scale, power)`` gives
    ``w_n = scale * (n + 1) ** -power``.
    """

    weights: tuple = ()
    periodic: bool = False
    tail: complex = 1.0
    decay: tuple | None = None
    sort: Any = field(default=NAT, init=False)

    def weight(self, n: int) -> complex:
        if self.decay is not None:
            scale, power = self.decay
            return scale * (n + 1) ** (-power)
        if n < len(self.weights):
            return self.weights[n]
        if self.periodic:
            return self.weights[n % len(self.weights)]
        return self.tail

    def column(self, j):
        return _clean({j + 1: self.weight(j)})

    def row(self, i):
        return _clean({i - 1: self.weight(i - 1)}) if i > 0 else {}

    def norm_bound(self):
        if self.decay is not None:
            return float(abs(self.decay[0]))
        sup = max((abs(w) for w in self.weights), default=0.0)
        return float(sup if self.periodic else max(sup, abs(self.tail)))

    def band(self):
        return BandProfile(1)

    def is_real(self):
        vals = list(self.weights) + [self.tail] + (list(self.decay) if self.decay else [])
        return all(complex(v).imag == 0 for v in vals)


@dataclass(frozen=True)
class Toeplitz(Operator):
    """Toeplitz operator on the Hardy space of the d-torus, d in {1, 2}.

    ``coeffs`` holds the finitely many nonzero Fourier coefficients ``a_k`` of
    the symbol as ``(k, a_k)`` pairs; ``k`` is an int for d=1 and a pair for
    d=2.  In the monomial basis ``entry(i, j) = a_{i-j}``.
    """

    dim: int = 1
    coeffs: tuple = ()

    @property
    def sort(self):
        return NAT if self.dim == 1 else NAT2

    def coefficient_map(self) -> dict:
        return dict(self.coeffs)

    def column(self, j):
        out = {}
        if self.dim == 1:
            for k, a in self.coeffs:
                if j + k >= 0:
                    out[j + k] = a
        else:
            for (k1, k2), a in self.coeffs:
                i = (j[0] + k1, j[1] + k2)
                if i[0] >= 0 and i[1] >= 0:
                    out[i] = a
        return out

    def row(self, i):
        out = {}
        if self.dim == 1:
            for k, a in self.coeffs:
                if i - k >= 0:
                    out[i - k] = a
        else:
            for (k1, k2), a in self.coeffs:
                j = (i[0] - k1, i[1] - k2)
                if j[0] >= 0 and j[1] >= 0:
                    out[j] = a
        return out

    def norm_bound(self):
        return float(sum(abs(a) for _, a in self.coeffs))

    def band(self):
        if self.dim == 1:
            return BandProfile(max((abs(k) for k, _ in self.coeffs), default=0))
        return BandProfile(max((max(abs(k[0]), abs(k[1])) for k, _ in self.coeffs), default=0))

    def is_real(self):
        return all(complex(a).imag == 0 for _, a in self.coeffs)


class _SparseTable(Operator):
    """Shared storage for operators given by a finite table of entries."""

    def _index(self):
        cols, rows = {}, {}
        for i, j, v in self.entries:
            if v == 0:
                continue
            cols.setdefault(j, {})[i] = v
            rows.setdefault(i, {})[j] = v
        object.__setattr__(self, "_cols", cols)
        object.__setattr__(self, "_rows", rows)

    def column(self, j):
        return dict(self._cols.get(j, {}))

    def row(self, i):
        return dict(self._rows.get(i, {}))

    def schur_bound(self) -> float:
        if not self._cols:
            return 0.0
        col = max(sum(abs(v) for v in c.values()) for c in self._cols.values())
        row = max(sum(abs(v) for v in r.values()) for r in self._rows.values())
        return math.sqrt(col * row)

    def table_reach(self) -> int:
        return max((abs(i - j) for i, j, v in self.entries if v != 0), default=0)

    def norm_bound(self):
        sup = max((abs(v) for *_, v in self.entries), default=0.0)
        return float(min(self.schur_bound(), (2 * self.table_reach() + 1) * sup))

    def band(self):
        return BandProfile(self.table_reach())

    def is_real(self):
        return all(complex(v).imag == 0 for *_, v in self.entries)


@dataclass(frozen=True, eq=False)
class BandLimited(_SparseTable):
    """Finite entry table ``(i, j, value)`` with ``|i - j| <= band``."""

    band_width: int = 0
    entries: tuple = ()
    sort: Any = NAT

    def __post_init__(self):
        for n, (i, j, _) in enumerate(self.entries):
            check_index(self.sort, i, f"entries[{n}].i")
            check_index(self.sort, j, f"entries[{n}].j")
            if abs(i - j) > self.band_width:
                raise ValidationError(f"entries[{n}]", f"|i-j| = {abs(i - j)} exceeds band {self.band_width}")
        self._index()

    def band(self):
        return BandProfile(self.band_width)


@dataclass(frozen=True, eq=False)
class AcuteWedge(_SparseTable):
    """Finite entry table supported in the wedge ``|i - j| <= g(j)``.

    ``profile`` is either a tuple of tabulated values ``g(0), g(1), ...``
    (extended by its last value) or ``("power", scale, exponent)`` meaning
    ``g(n) = floor(scale * n ** exponent)`` with exponent < 1/2.
    """

    profile: tuple = (0,)
    entries: tuple = ()
    sort: Any = field(default=NAT, init=False)

    def g(self, n: int) -> int:
        p = self.profile
        if p and p[0] == "power":
            return math.floor(p[1] * abs(n) ** p[2])
        return p[n] if n < len(p) else p[-1]

    def __post_init__(self):
        for n, (i, j, _) in enumerate(self.entries):
            check_index(self.sort, i, f"entries[{n}].i")
            check_index(self.sort, j, f"entries[{n}].j")
            if abs(i - j) > self.g(j):
                raise ValidationError(f"entries[{n}]", f"|i-j| = {abs(i - j)} exceeds g({j}) = {self.g(j)}")
        self._index()


@dataclass(frozen=True)
class CuntzIsometry(Operator):
    """Prepend isometry ``S_k e_w = e_{kw}`` on the full Fock space over 1..n.

    ``depth`` is the default word depth for finite computations.
    """

    n: int = 2
    k: int = 1
    depth: int = 8

    @property
    def sort(self):
        return ("word", self.n)

    def column(self, j):
        return {(self.k,) + j: 1.0}

    def row(self, i):
        return {i[1:]: 1.0} if i and i[0] == self.k else {}

    def norm_bound(self):
        return 1.0

    def band(self):
        return BandProfile(1)

    def is_real(self):
        return True


@dataclass(frozen=True)
class TensorProduct(Operator):
    left: Operator = None
    right: Operator = None

    @property
    def sort(self):
        return ("tensor", self.left.sort, self.right.sort)

    def column(self, j):
        a, b = self.left.column(j[0]), self.right.column(j[1])
        return _clean({(i1, i2): x * y for i1, x in a.items() for i2, y in b.items()})

    def row(self, i):
        a, b = self.left.row(i[0]), self.right.row(i[1])
        return _clean({(j1, j2): x * y for j1, x in a.items() for j2, y in b.items()})

    def norm_bound(self):
        return self.left.norm_bound() * self.right.norm_bound()

    def band(self):
        bl, br = self.left.band(), self.right.band()
        return BandProfile(max(bl.reach, br.reach), bl.exact and br.exact)

    def is_real(self):
        return self.left.is_real() and self.right.is_real()


@dataclass(frozen=True)
class DirectSum(Operator):
    left: Operator = None
    right: Operator = None

    @property
    def sort(self):
        return ("sum", self.left.sort, self.right.sort)

    def _part(self, tag):
        return self.left if tag == 0 else self.right

    def column(self, j):
        return {(j[0], i): v for i, v in self._part(j[0]).column(j[1]).items()}

    def row(self, i):
        return {(i[0], j): v for j, v in self._part(i[0]).row(i[1]).items()}

    def norm_bound(self):
        return max(self.left.norm_bound(), self.right.norm_bound())

    def band(self):
        bl, br = self.left.band(), self.right.band()
        return BandProfile(max(bl.reach, br.reach), bl.exact and br.exact)

    def is_real(self):
        return self.left.is_real() and self.right.is_real()


@dataclass(frozen=True)
class AffineMap(Operator):
    """``lam * inner + mu * I``."""

    lam: complex = 1.0
    mu: complex = 0.0
    inner: Operator = None

    @property
    def sort(self):
        return self.inner.sort

    def column(self, j):
        out = {i: self.lam * v for i, v in self.inner.column(j).items()} if self.lam != 0 else {}
        if self.mu != 0:
            out[j] = out.get(j, 0.0) + self.mu
        return _clean(out)

    def row(self, i):
        out = {j: self.lam * v for j, v in self.inner.row(i).items()} if self.lam != 0 else {}
        if self.mu != 0:
            out[i] = out.get(i, 0.0) + self.mu
        return _clean(out)

    def norm_bound(self):
        return abs(self.lam) * self.inner.norm_bound() + abs(self.mu)

    def band(self):
        if self.lam == 0:
            return BandProfile(0)
        return self.inner.band()

    def is_real(self):
        return complex(self.lam).imag == 0 and complex(self.mu).imag == 0 and self.inner.is_real()


@dataclass(frozen=True)
class Adjoint(Operator):
    inner: Operator = None

    @property
    def sort(self):
        return self.inner.sort

    def column(self, j):
        return {i: np.conj(v) for i, v in self.inner.row(j).items()}

    def row(self, i):
        return {j: np.conj(v) for j, v in self.inner.column(i).items()}

    def norm_bound(self):
        return self.inner.norm_bound()

    def band(self):
        return self.inner.band()

    def adjoint(self):
        return self.inner

    def is_real(self):
        return self.inner.is_real()


@dataclass(frozen=True, eq=False)
class DenseMatrix(Operator):
    """An explicit n x n matrix acting on ``("fin", n)``."""

    matrix: np.ndarray = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValidationError("matrix", f"expected a nonempty square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValidationError("matrix", "entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def sort(self):
        return ("fin", self.matrix.shape[0])

    def column(self, j):
        col = self.matrix[:, j]
        return {int(i): col[i] for i in np.flatnonzero(col)}

    def row(self, i):
        r = self.matrix[i, :]
        return {int(j): r[j] for j in np.flatnonzero(r)}

    def norm_bound(self):
        # relative slack covers the rounding of the SVD
        return float(np.linalg.norm(self.matrix, 2) * (1 + 1e-12))

    def band(self):
        nz = np.argwhere(self.matrix != 0)
        return BandProfile(int(np.max(np.abs(nz[:, 0] - nz[:, 1]))) if len(nz) else 0)

    def is_real(self):
        return not np.any(self.matrix.imag)


# --- spec documents ------------------------------------------------------


def parse_complex(value, where: str) -> complex:
    if isinstance(value, dict):
        try:
            z = complex(float(value.get("re", 0.0)), float(value.get("im", 0.0)))
        except (TypeError, ValueError):
            raise ValidationError(where, f"not a complex number: {value!r}") from None
    elif isinstance(value, numbers.Number) and not isinstance(value, bool):
        z = complex(value)
    else:
        raise ValidationError(where, f"not a complex number: {value!r}")
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ValidationError(where, "must be finite (bounded)")
    return z


def _simplify(z: complex):
    return z.real if z.imag == 0 else z


def _parse_sort(doc, where):
    s = doc.get("sort", NAT)
    if s in (NAT, INT, NAT2):
        return s
    raise ValidationError(where + ".sort", f"unsupported sort {s!r}")


def _parse_entries(doc, where, sort):
    out = []
    for n, e in enumerate(doc.get("entries", [])):
        try:
            i, j = e["i"], e["j"]
        except (KeyError, TypeError):
            raise ValidationError(f"{where}.entries[{n}]", "needs fields i and j") from None
        if isinstance(i, list):
            i = tuple(i)
        if isinstance(j, list):
            j = tuple(j)
        v = parse_complex(e, f"{where}.entries[{n}]")
        out.append((i, j, _simplify(v)))
    return tuple(out)


def _require(doc, key, where):
    if key not in doc:
        raise ValidationError(f"{where}.{key}", "missing required field")
    return doc[key]


@contextlib.contextmanager
def _prefixed(where: str):
    try:
        yield
    except ValidationError as exc:
        raise type(exc)(f"{where}.{exc.field}", exc.message) from None


def build_operator(doc, _where: str = "operator", _stack: tuple = ()) -> Operator:
    """Build an operator handle from a JSON-style spec document.

    An :class:`Operator` instance is returned unchanged.
    """
    if isinstance(doc, Operator):
        return doc
    if not isinstance(doc, dict):
        raise ValidationError(_where, f"expected an object, got {type(doc).__name__}")
    if id(doc) in _stack:
        raise ValidationError(_where, "cyclic nesting")
    stack = _stack + (id(doc),)
    kind = doc.get("type")
    w = _where

    def sub(key):
        return build_operator(_require(doc, key, w), f"{w}.{key}", stack)

    if kind == "identity":
        if "dim" in doc:
            n = doc["dim"]
            if not _is_int(n) or n < 1:
                raise ValidationError(w + ".dim", "must be a positive integer")
            return Identity(("fin", n))
        return Identity(_parse_sort(doc, w))
    if kind == "unilateral_shift":
        return UnilateralShift()
    if kind == "bilateral_shift":
        return BilateralShift()
    if kind == "weighted_shift":
        periodic = bool(doc.get("periodic", False))
        if "decay" in doc:
            d = doc["decay"]
            try:
                scale, power = float(d.get("scale", 1.0)), float(d["power"])
            except (KeyError, TypeError, ValueError, AttributeError):
                raise ValidationError(w + ".decay", "needs numeric scale and power") from None
            if not math.isfinite(scale):
                raise ValidationError(w + ".decay.scale", "must be finite")
            if not power >= 0:
                raise ValidationError(w + ".decay.power", "negative power gives unbounded weights")
            return WeightedShift(decay=(scale, power))
        weights = tuple(_simplify(parse_complex(x, f"{w}.weights[{n}]"))
                        for n, x in enumerate(_require(doc, "weights", w)))
        if periodic and not weights:
            raise ValidationError(w + ".weights", "periodic weights need at least one value")
        tail = _simplify(parse_complex(doc.get("tail", 1.0), w + ".tail"))
        return WeightedShift(weights=weights, periodic=periodic, tail=tail)
    if kind == "toeplitz":
        dim = doc.get("dim", 1)
        if dim not in (1, 2):
            raise ValidationError(w + ".dim", "must be 1 or 2")
        coeffs = {}
        for n, c in enumerate(_require(doc, "coeffs", w)):
            k = c.get("k") if isinstance(c, dict) else None
            if not isinstance(k, list) or len(k) != dim or not all(_is_int(x) for x in k):
                raise ValidationError(f"{w}.coeffs[{n}].k", f"expected a list of {dim} integers")
            key = k[0] if dim == 1 else tuple(k)
            if key in coeffs:
                raise ValidationError(f"{w}.coeffs[{n}].k", f"duplicate coefficient {k}")
            a = parse_complex(c, f"{w}.coeffs[{n}]")
            if a != 0:
                coeffs[key] = _simplify(a)
        return Toeplitz(dim=dim, coeffs=tuple(sorted(coeffs.items())))
    if kind == "band_limited":
        band = _require(doc, "band", w)
        if not _is_int(band) or band < 0:
            raise ValidationError(w + ".band", "must be a nonnegative integer")
        sort = _parse_sort(doc, w)
        if sort == NAT2:
            raise ValidationError(w + ".sort", "band-limited tables live on nat or int")
        entries = _parse_entries(doc, w, sort)
        with _prefixed(w):
            return BandLimited(band_width=band, entries=entries, sort=sort)
    if kind == "acute_wedge":
        prof = _require(doc, "profile", w)
        if isinstance(prof, dict):
            try:
                scale, power = float(prof.get("scale", 1.0)), float(prof["power"])
            except (KeyError, TypeError, ValueError):
                raise ValidationError(w + ".profile", "needs numeric scale and power") from None
            if not 0 <= power < 0.5:
                raise ValidationError(w + ".profile.power", "wedge exponent must lie in [0, 1/2)")
            profile = ("power", scale, power)
        else:
            if not prof or not all(_is_int(g) and g >= 0 for g in prof):
                raise ValidationError(w + ".profile", "expected a nonempty list of nonnegative integers")
            profile = tuple(prof)
        entries = _parse_entries(doc, w, NAT)
        with _prefixed(w):
            return AcuteWedge(profile=profile, entries=entries)
    if kind == "cuntz":
        n = _require(doc, "n", w)
        if not _is_int(n) or n < 2:
            raise ValidationError(w + ".n", "Cuntz isometries need n >= 2")
        depth = doc.get("depth", 8)
        if not _is_int(depth) or depth < 1:
            raise ValidationError(w + ".depth", "must be a positive integer")
        k = _require(doc, "k", w)
        if not _is_int(k) or not 1 <= k <= n:
            raise ValidationError(w + ".k", f"must lie in 1..{n}")
        return CuntzIsometry(n=n, k=k, depth=depth)
    if kind == "tensor":
        return TensorProduct(sub("left"), sub("right"))
    if kind == "direct_sum":
        return DirectSum(sub("left"), sub("right"))
    if kind == "affine":
        lam = _simplify(parse_complex(doc.get("lambda", 1.0), w + ".lambda"))
        mu = _simplify(parse_complex(doc.get("mu", 0.0), w + ".mu"))
        return AffineMap(lam, mu, sub("inner"))
    if kind == "adjoint":
        return Adjoint(sub("inner"))
    if kind == "dense":
        rows = _require(doc, "matrix", w)
        try:
            m = np.array([[parse_complex(x, f"{w}.matrix[{r}][{c}]") for c, x in enumerate(row)]
                          for r, row in enumerate(rows)], dtype=complex)
        except TypeError:
            raise ValidationError(w + ".matrix", "expected a list of rows") from None
        return DenseMatrix(m)
    raise ValidationError(w + ".type", f"unknown operator type {kind!r}")


def build_family(doc) -> list[Operator]:
    """Build a list of operators sharing one index sort.

    Accepts a JSON list of specs, ``{"operators": [...]}``, a single spec, or a
    ``cuntz`` spec without ``k`` which expands to all n isometries.
    """
    if isinstance(doc, Operator):
        return [doc]
    if isinstance(doc, dict) and "operators" in doc:
        doc = doc["operators"]
    if isinstance(doc, dict) and doc.get("type") == "cuntz" and "k" not in doc:
        ops = [build_operator({**doc, "k": k}) for k in range(1, int(doc.get("n", 0)) + 1)]
        if not ops:
            raise ValidationError("operator.n", "Cuntz isometries need n >= 2")
        return ops
    if isinstance(doc, list):
        if not doc:
            raise ValidationError("operators", "empty operator list")
        ops = []
        for n, d in enumerate(doc):
            ops.extend(build_family(d) if isinstance(d, dict) and d.get("type") == "cuntz" and "k" not in d
                       else [build_operator(d, f"operators[{n}]")])
    else:
        ops = [build_operator(doc)]
    sorts = {repr(op.sort) for op in ops}
    if len(sorts) > 1:
        raise ValidationError("operators", f"operators mix index sorts {sorted(sorts)}")
    return ops


# --- dense windows -------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DenseWindow:
    """Compression of an operator to an ordered finite window."""

    window: tuple
    matrix: np.ndarray


def _check_window(sort, win, limit):
    if not win:
        raise ValidationError("window", "window must be nonempty")
    if len(win) > limit:
        raise ResourceError(f"window of size {len(win)} exceeds limit {limit}")
    if len(set(win)) != len(win):
        raise ValidationError("window", "duplicate indices")
    for n, idx in enumerate(win):
        check_index(sort, idx, f"window[{n}]")


def truncate(op: Operator, win: Sequence, limit: int = DEFAULT_WINDOW_LIMIT) -> DenseWindow:
    """Dense compression ``matrix[a, b] = entry(win[a], win[b])``."""
    win = tuple(win)
    _check_window(op.sort, win, limit)
    pos = {idx: a for a, idx in enumerate(win)}
    m = np.zeros((len(win), len(win)), dtype=complex)
    for b, j in enumerate(win):
        for i, v in op.column(j).items():
            a = pos.get(i)
            if a is not None:
                m[a, b] = v
    return DenseWindow(win, m)


def expand_window(op: Operator, win: Sequence) -> list:
    """``win`` followed by every index reached by a column or row of ``win``.

    Every nonzero entry of ``[T, P]`` for a projection supported on ``win``
    lies inside the expanded window.
    """
    out = list(win)
    seen = set(out)
    for j in win:
        for i in itertools.chain(op.column(j), op.row(j)):
            if i not in seen:
                seen.add(i)
                out.append(i)
    return out


def sparse_compression(op: Operator, rows: Sequence, cols: Sequence) -> sp.csr_matrix:
    """Sparse matrix of entries ``<T e_c, e_r>`` for ``r`` in rows, ``c`` in cols."""
    pos = {idx: a for a, idx in enumerate(rows)}
    data, ri, ci = [], [], []
    for b, j in enumerate(cols):
        for i, v in op.column(j).items():
            a = pos.get(i)
            if a is not None:
                data.append(v)
                ri.append(a)
                ci.append(b)
    return sp.csr_matrix((np.array(data, dtype=complex), (ri, ci)), shape=(len(rows), len(cols)))


def entry(op: Operator, i, j) -> complex:
    return op.entry(i, j)


def norm_bound(op: Operator) -> float:
    return op.norm_bound()
