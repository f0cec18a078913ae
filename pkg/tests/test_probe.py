import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foelner_lab import opmodel, probe
from foelner_lab.defect import hs_defect
from foelner_lab.errors import ValidationError
from foelner_lab.projlib import Coordinate, Frame
from oracles import cuntz_counting

SHIFT = {"type": "unilateral_shift"}
DENSE3_SHIFT = {"type": "direct_sum", "left": {"type": "dense", "matrix": [[1, 2, 0], [0, 1, 3], [1, 0, 2]]},
                "right": SHIFT}


def cuntz(n, depth=8):
    return opmodel.build_family({"type": "cuntz", "n": n, "depth": depth})


def test_shift_rank16_beats_interval():
    res = probe.minimize_defect([SHIFT], 16, 256, restarts=4, iters=60, seed=0)
    assert res.best_value <= 0.25 + 1e-12
    assert res.best_value <= res.coordinate_value + 1e-12
    assert res.best_value == pytest.approx(max(hs_defect(opmodel.UnilateralShift(), res.best_projection).value, 0))


def test_identity_is_zero():
    res = probe.minimize_defect([{"type": "identity"}], 3, 40, restarts=2, iters=10)
    assert res.best_value == 0


def test_preconditions():
    with pytest.raises(ValidationError):
        probe.minimize_defect([SHIFT], 10, 30)
    with pytest.raises(ValidationError):
        probe.minimize_defect([SHIFT], 2, 30, restarts=0)
    with pytest.raises(ValidationError):
        probe.minimize_defect([SHIFT], 2, 30, objective="median")


def test_determinism_and_thread_independence(monkeypatch):
    ops = cuntz(2)
    win = opmodel.word_window(2, 5)
    kw = dict(restarts=3, iters=15, seed=4)
    monkeypatch.setenv("FOELNER_LAB_THREADS", "1")
    a = probe.epsilon_curve(ops, [1, 2, 3, 5], win, **kw)
    monkeypatch.setenv("FOELNER_LAB_THREADS", "3")
    b = probe.epsilon_curve(ops, [1, 2, 3, 5], win, **kw)
    assert [r.best_value for r in a] == [r.best_value for r in b]
    assert [r.envelope for r in a] == probe.running_min(a)


def test_cuntz_counting_oracle_random_supports():
    rng = np.random.default_rng(11)
    for n in (2, 3):
        ops = cuntz(n)
        words = opmodel.word_window(n, 5)
        for _ in range(200):
            size = int(rng.integers(1, 40))
            pick = rng.choice(len(words), size, replace=False)
            P = Coordinate(tuple(words[p] for p in sorted(pick)))
            sq = [hs_defect(op, P).value ** 2 for op in ops]
            assert sum(sq) * P.rank == pytest.approx(cuntz_counting(n, P.indices), abs=1e-9)
            assert sum(sq) >= n - 1 - 1e-9
            assert max(sq) >= (n - 1) / n - 1e-9


@st.composite
def cuntz_frames(draw):
    n = draw(st.sampled_from([2, 3]))
    win = opmodel.word_window(n, 3)
    r = draw(st.integers(1, 6))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    v = np.linalg.qr(rng.standard_normal((len(win), r)) + 1j * rng.standard_normal((len(win), r)))[0]
    return n, Frame(tuple(win), v)


@settings(max_examples=50, deadline=None)
@given(cuntz_frames())
def test_frame_floor_for_cuntz(case):
    # Σ_k φ(S_k, P)^2 >= n - 1 holds for every projection, not only coordinate ones
    n, F = case
    total = sum(hs_defect(op, F).value ** 2 for op in cuntz(n))
    assert total >= n - 1 - 1e-9


def test_cuntz_probe_respects_floor():
    ops = cuntz(2)
    curve = probe.epsilon_curve(ops, [1, 2, 4, 8], opmodel.word_window(2, 6), restarts=8, iters=40, seed=1)
    assert min(r.best_value for r in curve) >= math.sqrt(0.5) - 1e-9


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    m = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    ops = [opmodel.DenseMatrix(m), opmodel.DenseMatrix(m.T)]
    for objective in ("sumsq", "max"):
        pb = probe.Problem(ops, list(range(12)), objective)
        v = rng.standard_normal((1, 12, 3)) + 1j * rng.standard_normal((1, 12, 3))
        e = rng.standard_normal((1, 12, 3)) + 1j * rng.standard_normal((1, 12, 3))
        _, g = pb.evaluate(v)
        h = 1e-6
        fp, _ = pb.evaluate(v + h * e, grad=False)
        fm, _ = pb.evaluate(v - h * e, grad=False)
        fd = (fp[0] - fm[0]) / (2 * h)
        assert fd == pytest.approx(np.real(np.vdot(g, e)), rel=1e-5)


def test_objective_equals_defect_on_frames():
    rng = np.random.default_rng(4)
    ops = cuntz(2)
    win = opmodel.word_window(2, 4)
    pb = probe.Problem(ops, win)
    v = np.linalg.qr(rng.standard_normal((len(win), 4)))[0]
    f, _ = pb.evaluate(v[None], grad=False)
    exact = max(hs_defect(op, Frame(tuple(win), v)).value ** 2 for op in ops)
    assert f[0] * pb.scale ** 2 == pytest.approx(exact, rel=1e-10)


def test_descent_is_monotone():
    ops = cuntz(2)
    pb = probe.Problem(ops, opmodel.word_window(2, 5))
    trace = []
    probe.frame_descent(pb, 4, 6, 40, np.random.default_rng(0), trace=trace)
    hist = np.array(trace)
    assert np.all(np.diff(hist, axis=0) <= 1e-15)


def test_coordinate_search_tie_break_is_lexicographic():
    pb = probe.Problem([opmodel.build_operator({"type": "identity"})], list(range(10)))
    _, pos, done = pb.coordinate_search(3, 10)
    assert pos == [0, 1, 2] and done


def test_find_reducing_subspace_examples():
    hit = probe.find_reducing_subspace([DENSE3_SHIFT], max_rank=4, ambient=64, restarts=2, iters=20)
    assert hit is not None
    P, res = hit
    assert isinstance(P, Coordinate) and P.rank == 3 and res < 1e-12
    P, res = probe.find_reducing_subspace([{"type": "identity"}], ambient=16)
    assert P.rank == 1 and res == 0
    assert probe.find_reducing_subspace([SHIFT], max_rank=4, ambient=64, restarts=3, iters=40) is None


def test_classify_is_affine_invariant():
    params = probe.ClassifyParams(max_rank=8, ambient=128, restarts=4, iters=60)
    base = probe.classify([SHIFT], params)
    moved = probe.classify([{"type": "affine", "lambda": {"re": 2, "im": -1}, "mu": 3, "inner": SHIFT}], params)
    assert base.cell == moved.cell == "W1plus"
    assert "not a proof" in base.evidence
    ident = probe.classify([{"type": "identity"}], params)
    assert ident.cell == "W0plus" and ident.ell_estimate >= 1
