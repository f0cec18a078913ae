import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from foelner_lab import opmodel
from foelner_lab.errors import ResourceError, SortMismatchError, ValidationError
from oracles import dense

SHIFT = {"type": "unilateral_shift"}
TOEP = {"type": "toeplitz", "dim": 1, "coeffs": [{"k": [1], "re": 1.0}, {"k": [-1], "re": 1.0}]}


def test_shift_band_and_entries():
    s = opmodel.build_operator(SHIFT)
    assert s.band() == opmodel.BandProfile(1, True)
    assert s.entry(5, 4) == 1 and s.entry(4, 5) == 0
    assert s.norm_bound() == 1


def test_toeplitz_entries_match_fourier_oracle():
    t = opmodel.build_operator({"type": "toeplitz", "dim": 1, "coeffs": [{"k": [2], "re": 3.0}]})
    # multiply z^k by 3 z^2 and read coefficients
    for k in range(6):
        for i in range(10):
            assert t.entry(i, k) == (3.0 if i == k + 2 else 0.0)
    two = opmodel.build_operator(TOEP)
    assert two.band().reach == 1
    assert two.norm_bound() == 2


def test_toeplitz_norm_bound_attained():
    t = opmodel.build_operator(TOEP)
    s = np.linalg.svd(opmodel.truncate(t, list(range(512))).matrix, compute_uv=False)
    assert s[0] <= t.norm_bound()
    assert s[0] > 1.999


def test_affine_entries_and_norm():
    a = opmodel.build_operator({"type": "affine", "lambda": 2, "mu": {"re": 0, "im": 1}, "inner": SHIFT})
    assert a.entry(0, 0) == 1j
    assert a.entry(1, 0) == 2
    b = opmodel.build_operator({"type": "affine", "lambda": 3, "mu": 0, "inner": SHIFT})
    assert b.norm_bound() == 3


def test_truncate_shift_and_sum():
    m = opmodel.truncate(opmodel.build_operator(SHIFT), [0, 1, 2]).matrix
    np.testing.assert_array_equal(m, np.eye(3, k=-1))
    x = np.arange(9.0).reshape(3, 3)
    ds = opmodel.build_operator({"type": "direct_sum", "left": {"type": "dense", "matrix": x.tolist()},
                                 "right": SHIFT})
    m = opmodel.truncate(ds, [(0, 0), (0, 1), (0, 2)]).matrix
    np.testing.assert_array_equal(m, x)


def test_tensor_truncation_is_compression_of_larger_window():
    s = opmodel.build_operator(SHIFT)
    t = opmodel.TensorProduct(s, s)
    small = [(i, j) for i in range(2) for j in range(2)]
    big = [(i, j) for i in range(3) for j in range(3)]
    mb = opmodel.truncate(t, big).matrix
    pos = [big.index(w) for w in small]
    np.testing.assert_array_equal(opmodel.truncate(t, small).matrix, mb[np.ix_(pos, pos)])
    s2 = np.eye(2, k=-1)
    np.testing.assert_array_equal(opmodel.truncate(t, small).matrix, np.kron(s2, s2))


def test_cuntz_relations_on_windows():
    L = 4
    ops = opmodel.build_family({"type": "cuntz", "n": 2, "depth": L})
    amb = opmodel.word_window(2, L + 1)
    inner = opmodel.word_window(2, L)
    pos = [amb.index(w) for w in inner]
    mats = [dense(op, amb) for op in ops]
    for a, sa in enumerate(mats):
        for b, sb in enumerate(mats):
            prod = (sa.conj().T @ sb)[np.ix_(pos, pos)]
            np.testing.assert_allclose(prod, np.eye(len(pos)) * (a == b), atol=0)
    total = sum(s @ s.conj().T for s in mats)
    nonempty = [amb.index(w) for w in opmodel.word_window(2, L) if w]
    np.testing.assert_allclose(total[np.ix_(nonempty, nonempty)], np.eye(len(nonempty)))
    assert ops[0].column((2, 1)) == {(1, 2, 1): 1.0}


@pytest.mark.parametrize("doc,field", [
    ({"type": "cuntz", "n": 1, "k": 1}, "operator.n"),
    ({"type": "weighted_shift", "weights": [1, float("inf")]}, "operator.weights[1]"),
    ({"type": "tensor", "left": SHIFT}, "operator.right"),
    ({"type": "affine", "inner": {"type": "cuntz", "n": 2, "k": 3}}, "operator.inner.k"),
    ({"type": "band_limited", "band": 1, "entries": [{"i": 0, "j": 3, "re": 1}]}, "operator.entries[0]"),
    ({"type": "mystery"}, "operator.type"),
])
def test_validation_names_field(doc, field):
    with pytest.raises(ValidationError) as exc:
        opmodel.build_operator(doc)
    assert exc.value.field == field


def test_cyclic_nesting_rejected():
    doc = {"type": "adjoint"}
    doc["inner"] = doc
    with pytest.raises(ValidationError, match="cyclic"):
        opmodel.build_operator(doc)


def test_sort_mismatch_and_resource_limit():
    s = opmodel.build_operator(SHIFT)
    with pytest.raises(SortMismatchError):
        s.entry((1, 2), 0)
    with pytest.raises(ResourceError):
        opmodel.truncate(s, list(range(50)), limit=10)
    with pytest.raises(ValidationError):
        opmodel.truncate(s, [0, 0])


def test_family_mixed_sorts_rejected():
    with pytest.raises(ValidationError):
        opmodel.build_family([SHIFT, {"type": "cuntz", "n": 2, "k": 1}])
    assert len(opmodel.build_family({"type": "cuntz", "n": 3})) == 3


def test_word_window_counts():
    assert len(opmodel.word_window(2, 2)) == 7
    assert opmodel.word_window(2, 1) == [(), (1,), (2,)]


# --- properties -----------------------------------------------------------

complexes = st.builds(complex, st.floats(-3, 3), st.floats(-3, 3))


@st.composite
def structured_ops(draw):
    kind = draw(st.sampled_from(["shift", "toeplitz", "weighted", "band", "wedge", "affine", "adjoint"]))
    if kind == "shift":
        return opmodel.build_operator(SHIFT)
    if kind == "toeplitz":
        ks = draw(st.lists(st.integers(-3, 3), min_size=1, max_size=4, unique=True))
        return opmodel.build_operator({"type": "toeplitz", "dim": 1, "coeffs": [
            {"k": [k], "re": draw(st.floats(-2, 2)), "im": draw(st.floats(-2, 2))} for k in ks]})
    if kind == "weighted":
        w = draw(st.lists(st.floats(-2, 2), min_size=1, max_size=5))
        return opmodel.build_operator({"type": "weighted_shift", "weights": w,
                                       "periodic": draw(st.booleans())})
    if kind == "band":
        b = draw(st.integers(0, 3))
        ents = draw(st.lists(st.tuples(st.integers(0, 15), st.integers(-b, b), st.floats(-2, 2)), max_size=12))
        return opmodel.build_operator({"type": "band_limited", "band": b, "entries": [
            {"i": i, "j": i + d, "re": v} for i, d, v in ents if i + d >= 0]})
    if kind == "wedge":
        ents = draw(st.lists(st.tuples(st.integers(0, 15), st.integers(-2, 2), st.floats(-1, 1)), max_size=12))
        prof = [0, 1, 1, 1, 2]
        return opmodel.build_operator({"type": "acute_wedge", "profile": prof, "entries": [
            {"i": j + d, "j": j, "re": v} for j, d, v in ents
            if j + d >= 0 and abs(d) <= (prof[j] if j < len(prof) else prof[-1])]})
    inner = opmodel.build_operator(TOEP)
    if kind == "affine":
        z = draw(complexes)
        return opmodel.AffineMap(z, draw(complexes), inner)
    return opmodel.Adjoint(opmodel.AffineMap(draw(complexes), 0, inner))


@settings(max_examples=60, deadline=None)
@given(structured_ops())
def test_adjoint_consistency(op):
    win = list(range(12))
    adj = op.adjoint()
    for i in win:
        for j in win:
            assert adj.entry(i, j) == np.conj(op.entry(j, i))


@settings(max_examples=60, deadline=None)
@given(structured_ops())
def test_band_exactness(op):
    band = op.band()
    assert band.exact
    for i in range(20):
        for j in range(20):
            if abs(i - j) > band.reach:
                assert op.entry(i, j) == 0


@settings(max_examples=60, deadline=None)
@given(structured_ops(), st.integers(1, 40))
def test_norm_bound_dominates_truncations(op, n):
    s = np.linalg.svd(opmodel.truncate(op, list(range(n))).matrix, compute_uv=False)
    assert s[0] <= op.norm_bound() * (1 + 1e-12) + 1e-12


@settings(max_examples=40, deadline=None)
@given(structured_ops(), st.integers(1, 30))
def test_truncate_matches_entry_oracle(op, n):
    win = list(range(n))
    np.testing.assert_array_equal(opmodel.truncate(op, win).matrix, dense(op, win))
