import math
from fractions import Fraction
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmel.classical import (
    apply_map,
    bernoulli_measure,
    build_map,
    classical_entropy,
    classical_pressure,
    cylinder_interval,
    decompose,
    ks_entropy_estimate,
    lebesgue_measure,
    transfer_matrix,
    CylinderTable,
    FunctionMeasure,
)
from qmel.errors import (
    DigitRangeError,
    InconsistentMeasureError,
    NegativeWeightError,
    NotDecomposableError,
    NotTpError,
    PartitionAlignmentError,
    SlopeRangeError,
    SlopeSumError,
)

F = Fraction


def overlap_oracle(m, N):
    """B(i, j) = N |E_i ∩ T^{-1} E_j| by intersecting exact preimage intervals."""
    B = [[F(0)] * N for _ in range(N)]
    for (a, b), lam, off in zip(m.branches, m.slopes, m.offsets):
        for j in range(N):
            # preimage of E_j inside the branch
            lo = (F(j, N) - off) / lam
            hi = (F(j + 1, N) - off) / lam
            lo, hi = max(lo, a), min(hi, b)
            if hi <= lo:
                continue
            for i in range(N):
                x0, x1 = max(lo, F(i, N)), min(hi, F(i + 1, N))
                if x1 > x0:
                    B[i][j] += (x1 - x0) * N
    return B


# slope lists with Σ 1/Λ = 1, grown by splitting a branch of slope s into two of slope 2s
slope_lists = st.recursive(
    st.just([2, 2]),
    lambda inner: st.tuples(inner, st.integers(0, 10)).map(
        lambda t: t[0][: t[1] % len(t[0])] + [2 * t[0][t[1] % len(t[0])]] * 2 + t[0][t[1] % len(t[0]) + 1:]
    ),
    max_leaves=4,
)


def test_build_map_examples():
    m = build_map([2, 2])
    assert m.branches == ((F(0), F(1, 2)), (F(1, 2), F(1)))
    assert m.offsets == (0, -1)
    m = build_map([2, 4, 4])
    assert m.branches == ((0, F(1, 2)), (F(1, 2), F(3, 4)), (F(3, 4), 1))
    assert m.offsets == (0, -2, -3)
    assert m.uniform_base == 2 and m.exponents == (1, 2, 2)
    assert m.codes == ((0,), (1, 0), (1, 1))


def test_build_map_errors():
    with pytest.raises(SlopeSumError):
        build_map([3, 3, 2])
    with pytest.raises(SlopeRangeError):
        build_map([1])
    with pytest.raises(SlopeSumError):
        build_map([3, 3])


def test_uniform_base_smallest():
    assert build_map([4, 4, 4, 4]).uniform_base == 2
    assert build_map([3, 9, 9, 9, 9, 9, 9]).uniform_base == 3
    assert build_map([6, 6, 6, 4, 4]).uniform_base is None


def test_not_tp_when_branch_not_cylinder():
    # slopes 4,2,4: the slope-2 branch is [1/4, 3/4], not a dyadic cylinder
    m = build_map([4, 2, 4])
    assert m.uniform_base == 2
    with pytest.raises(NotTpError):
        m.codes
    assert not m.is_tp


def test_apply_map_examples():
    assert apply_map(build_map([2, 2]), F(1, 3)) == F(2, 3)
    assert apply_map(build_map([2, 4, 4]), F(5, 8)) == F(1, 2)
    for n in range(6):
        assert apply_map(build_map([2, 4, 4]), F(0), n) == 0


def test_transfer_matrix_examples():
    half = F(1, 2)
    assert transfer_matrix(build_map([2, 2]), 2).to_fractions() == [[half, half], [half, half]]
    B4 = transfer_matrix(build_map([2, 2]), 4).to_fractions()
    assert B4 == [[half, half, 0, 0], [0, 0, half, half], [half, half, 0, 0], [0, 0, half, half]]
    q = F(1, 4)
    B = transfer_matrix(build_map([2, 4, 4]), 4).to_fractions()
    assert B == [[half, half, 0, 0], [0, 0, half, half], [q] * 4, [q] * 4]


def test_transfer_matrix_alignment():
    with pytest.raises(PartitionAlignmentError):
        transfer_matrix(build_map([2, 4, 4]), 2)
    with pytest.raises(PartitionAlignmentError):
        transfer_matrix(build_map([3, 3, 3]), 6 * 2 + 1)


@pytest.mark.parametrize("slopes,N", [([2, 4, 4], 8), ([6, 6, 6, 4, 4], 12), ([3, 3, 3], 9), ([2, 8, 8, 8, 8], 16)])
def test_transfer_matrix_matches_overlap_oracle(slopes, N):
    m = build_map(slopes)
    assert transfer_matrix(m, N).to_fractions() == overlap_oracle(m, N)


@settings(max_examples=30, deadline=None)
@given(slope_lists, st.integers(0, 3))
def test_transfer_matrix_doubly_stochastic(slopes, extra):
    m = build_map(slopes)
    N = m.lam_max * 2**extra
    B = transfer_matrix(m, N)
    assert B.is_doubly_stochastic()
    assert B.to_fractions() == overlap_oracle(m, N) if N <= 64 else True


def test_decompose_six_four():
    dec = decompose(build_map([6, 6, 6, 4, 4]))
    assert dec.p == 2
    assert dec.blocks == ((0, F(1, 2)), (F(1, 2), 1))
    assert dec.lambda_bar == (3, 2)
    assert dec.n0 == 12


@pytest.mark.parametrize("N", [12, 144])
def test_decompose_product_identity_exact(N):
    m = build_map([6, 6, 6, 4, 4])
    dec = decompose(m)
    B = transfer_matrix(m, N)
    assert B.exact_product_equals(dec.block_transfer(N), dec.uniform_transfer(N))


def test_decompose_uniform_and_two_four_four():
    dec = decompose(build_map([2, 2]))
    assert dec.p == 2 and dec.lambda_bar == (1,)
    # slopes 2,4,4: reduced slopes {1, 2} on the halves [0,1/2], [1/2,1] are coprime
    m = build_map([2, 4, 4])
    dec = decompose(m)
    assert dec.lambda_bar == (1, 2) and dec.n0 == 4
    for N in (4, 16, 64):
        assert transfer_matrix(m, N).exact_product_equals(dec.block_transfer(N), dec.uniform_transfer(N))


def test_decompose_rejects_non_coprime():
    with pytest.raises(NotDecomposableError):
        decompose(build_map([6] * 3 + [10] * 3 + [15] * 3))  # pairwise common factors, gcd 1
    with pytest.raises(NotDecomposableError):
        decompose(build_map([4, 2, 4]))  # slope-4 runs do not fill whole quarters


def test_cylinder_interval():
    assert cylinder_interval(2, "1") == (F(1, 2), F(1))
    assert cylinder_interval(2, "10") == (F(1, 2), F(3, 4))
    assert cylinder_interval(3, "21") == (F(7, 9), F(8, 9))
    with pytest.raises(DigitRangeError):
        cylinder_interval(2, "12")


def test_cylinder_shift_property():
    # one step of T_p on ⟦x⟧ ⊆ I_j is the cylinder with the code of I_j dropped
    m = build_map([2, 4, 4])
    for L in range(1, 11):
        for x in product((0, 1), repeat=L):
            j = 0 if x[0] == 0 else (1 if (L > 1 and x[1] == 0) else 2)
            n = m.exponents[j]
            if L < n:
                continue
            a, b = cylinder_interval(2, x)
            img = (apply_map(m, a), m.slopes[j] * b + m.offsets[j])
            assert img == cylinder_interval(2, x[n:])


def test_entropy_and_pressure_examples():
    n = 5
    assert math.isclose(classical_entropy(np.full(2**n, 2.0**-n)), n * math.log(2))
    assert classical_entropy([1.0, 0.0, 0.0]) == 0.0
    assert math.isclose(classical_entropy([0.5, 0.25, 0.25]), 1.5 * math.log(2))
    assert math.isclose(classical_pressure([0.5, 0.25, 0.25], 1.0), 1.5 * math.log(2))
    with pytest.raises(NegativeWeightError):
        classical_entropy([1.1, -0.1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.lists(st.floats(0.1, 3.0), min_size=6, max_size=6))
def test_pressure_identity(raw, vs):
    w = np.array(raw) / np.sum(raw)
    v = np.array(vs[: w.size])
    assert math.isclose(classical_pressure(w, v), classical_entropy(w) - np.sum(w * np.log(v**2)), abs_tol=1e-12)


def test_ks_examples():
    est = ks_entropy_estimate(bernoulli_measure([0.5, 0.5]), 8)
    assert np.allclose(est.rates, math.log(2))
    # alternating deterministic / uniform digits, stationary mixture of the two phases
    from qmel.families import example1_state
    meas = example1_state(2).measure
    rates = ks_entropy_estimate(meas, 14).rates
    assert abs(rates[-1] - 0.5 * math.log(2)) < math.log(2) / 14 + 1e-12


def test_ks_inconsistent_oracle():
    with pytest.raises(InconsistentMeasureError):
        ks_entropy_estimate(lambda s: 0.5 ** len(s) * (1.2 if len(s) == 2 else 1.0), 3, p=2)


def test_ks_callable_oracle_matches_measure():
    fm = FunctionMeasure(lambda s: 0.5 ** len(s), 2)
    assert np.allclose(ks_entropy_estimate(fm, 6).rates, math.log(2))


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=3), st.integers(1, 6), st.integers(1, 6))
def test_entropy_subadditive_on_products(raw, n, m):
    probs = np.array(raw) / np.sum(raw)
    mu = bernoulli_measure(probs)
    h = lambda k: classical_entropy(mu.weights(k))
    assert h(n + m) <= h(n) + h(m) + 1e-12


def test_branch_coded_weights_lebesgue():
    m = build_map([2, 4, 4])
    w = lebesgue_measure(2).weights(2, codes=m.codes)
    lw = m.lebesgue_branch_weights()
    assert np.allclose(w, np.outer(lw, lw).ravel())


def test_cylinder_table_roundtrip():
    t = CylinderTable(("0", "1"), 2, np.array([0.1, 0.2, 0.3, 0.4]))
    assert t["10"] == 0.3
    assert np.allclose(t.marginal().weights, [0.3, 0.7])
    assert t.to_csv().splitlines()[0] == "00,0.10000000000000001"
