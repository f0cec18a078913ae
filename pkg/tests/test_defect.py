import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foelner_lab import defect, opmodel, projlib
from foelner_lab.errors import ValidationError
from foelner_lab.projlib import Coordinate, Frame
from oracles import dense_defects, frame_dense_defect

SHIFT = opmodel.UnilateralShift()
TOEP = opmodel.build_operator({"type": "toeplitz", "dim": 1,
                               "coeffs": [{"k": [1], "re": 1.0}, {"k": [-1], "re": 1.0}]})


@pytest.mark.parametrize("n", [1, 2, 4, 7, 16])
def test_shift_interval_matches_dense_oracle(n):
    hs, tr, op = dense_defects(SHIFT, list(range(2 * n + 2)), range(n))
    P = projlib.interval(0, n)
    assert defect.hs_defect(SHIFT, P).value == pytest.approx(hs, abs=1e-14) == pytest.approx(1 / math.sqrt(n))
    assert defect.trace_defect(SHIFT, P).value == pytest.approx(tr, abs=1e-14) == pytest.approx(1 / n)
    assert defect.opnorm_defect(SHIFT, P).value == pytest.approx(op) == pytest.approx(1.0)


def test_shift_n4_is_half():
    rep = defect.hs_defect(SHIFT, projlib.interval(0, 4))
    assert rep.value == 0.5 and rep.exact and rep.error_bound == 0 and rep.rank == 4


def test_toeplitz_closed_forms():
    for n in (2, 8, 32):
        P = projlib.interval(0, n)
        assert defect.hs_defect(TOEP, P).value == pytest.approx(math.sqrt(2 / n), abs=1e-14)
        assert defect.trace_defect(TOEP, P).value == pytest.approx(2 / n, abs=1e-14)
        assert defect.opnorm_defect(TOEP, P).value == pytest.approx(1.0)
    assert defect.hs_defect(TOEP, projlib.interval(0, 8)).value == pytest.approx(0.5)


def test_identity_is_zero():
    ident = opmodel.build_operator({"type": "identity"})
    P = Coordinate((0, 3, 9))
    for fn in defect.DEFECTS.values():
        assert fn(ident, P).value == 0


def test_direct_sum_left_projection():
    rng = np.random.default_rng(0)
    x = opmodel.DenseMatrix(rng.standard_normal((5, 5)))
    ds = opmodel.DirectSum(SHIFT, x)
    P = projlib.interval(0, 9)
    assert defect.hs_defect(ds, projlib.embed_sum(P, 0)).value == pytest.approx(
        defect.hs_defect(SHIFT, P).value, abs=1e-15)


def test_zero_projection_rejected():
    with pytest.raises(ValidationError):
        defect.hs_defect(SHIFT, Coordinate(()))
    with pytest.raises(ValidationError):
        defect.hs_defect(SHIFT, Coordinate(((1, 2),)))


def test_large_interval_is_fast():
    t = time.perf_counter()
    assert defect.hs_defect(SHIFT, projlib.interval(0, 10_000)).value == pytest.approx(0.01)
    assert time.perf_counter() - t < 1.0


def test_frame_on_cuntz_uses_exact_window():
    s1 = opmodel.CuntzIsometry(2, 1)
    win = opmodel.word_window(2, 3)
    rng = np.random.default_rng(1)
    v = np.linalg.qr(rng.standard_normal((len(win), 3)))[0]
    F = Frame(tuple(win), v)
    amb = opmodel.word_window(2, 4)
    t = opmodel.truncate(s1, amb).matrix
    assert defect.hs_defect(s1, F).value == pytest.approx(frame_dense_defect(t, F.frame_on(amb)), abs=1e-12)


# --- properties -------------------------------------------------------------

@st.composite
def op_and_frame(draw):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    dim = draw(st.integers(2, 9))
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    r = draw(st.integers(1, dim))
    v = np.linalg.qr(rng.standard_normal((dim, r)) + 1j * rng.standard_normal((dim, r)))[0]
    return opmodel.DenseMatrix(m), Frame(tuple(range(dim)), v), rng


@settings(max_examples=80, deadline=None)
@given(op_and_frame())
def test_frame_defect_matches_dense(case):
    op, F, _ = case
    assert defect.hs_defect(op, F).value == pytest.approx(frame_dense_defect(op.matrix, F.columns), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(op_and_frame())
def test_adjoint_symmetry_and_uniform_bound(case):
    op, F, _ = case
    v = defect.hs_defect(op, F).value
    assert defect.hs_defect(op.adjoint(), F).value == pytest.approx(v, abs=1e-12)
    assert v <= 2 * op.norm_bound() + 1e-12


@settings(max_examples=80, deadline=None)
@given(op_and_frame(), st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False),
       st.complex_numbers(max_magnitude=5, allow_nan=False, allow_infinity=False))
def test_affine_covariance(case, lam, mu):
    op, F, _ = case
    a = opmodel.AffineMap(lam, mu, op)
    assert defect.hs_defect(a, F).value == pytest.approx(abs(lam) * defect.hs_defect(op, F).value, abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(op_and_frame())
def test_permutation_invariance(case):
    op, F, rng = case
    n = op.matrix.shape[0]
    perm = rng.permutation(n)
    pm = np.eye(n)[perm]
    op2 = opmodel.DenseMatrix(pm @ op.matrix @ pm.T)
    F2 = Frame(F.window, pm @ F.columns)
    assert defect.hs_defect(op2, F2).value == pytest.approx(defect.hs_defect(op, F).value, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(op_and_frame())
def test_operator_distance_bound(case):
    op, F, rng = case
    n = op.matrix.shape[0]
    e = opmodel.DenseMatrix(op.matrix + 0.3 * rng.standard_normal((n, n)))
    gap = np.linalg.norm(op.matrix - e.matrix, 2)
    assert abs(defect.hs_defect(op, F).value - defect.hs_defect(e, F).value) <= 2 * gap + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.sets(st.integers(0, 25), min_size=1), st.lists(st.integers(-3, 3), min_size=1, max_size=4, unique=True))
def test_coordinate_defects_match_dense(support, ks):
    op = opmodel.Toeplitz(1, tuple((k, 1.0 + 0.5j * k) for k in sorted(ks)))
    P = Coordinate(tuple(sorted(support)))
    hs, tr, on = dense_defects(op, list(range(30)), sorted(support))
    assert defect.hs_defect(op, P).value == pytest.approx(hs, abs=1e-12)
    assert defect.trace_defect(op, P).value == pytest.approx(tr, abs=1e-12)
    assert defect.opnorm_defect(op, P).value == pytest.approx(on, abs=1e-12)
    # ||.||_2 <= ||.||_1 on the numerators
    assert hs * math.sqrt(P.rank) <= tr * P.rank + 1e-12
