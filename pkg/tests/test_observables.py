import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from qmel.classical import apply_map, build_map
from qmel.errors import AlignmentError, DeltaTooLargeError
from qmel.observables import (
    commutator_defect,
    constant,
    egorov_defect,
    exact_egorov_check,
    hat,
    identity,
    indicator,
    op_quantize,
    operator_norm,
    parse_observable,
    sine,
    smooth_partition,
)
from qmel.quantizer import dft, tensorial_nonuniform

T244 = build_map([2, 4, 4])


def U244(k):
    return tensorial_nonuniform(T244, dft(2), k)


def t_float(m, x, n):
    for _ in range(n):
        j = _branch(m, x)
        x = m.slopes[j] * x + float(m.offsets[j])
    return x


def _branch(m, x):
    for j, (a, b) in enumerate(m.branches):
        if float(a) <= x < float(b):
            return j
    return m.n_branches - 1


def test_op_examples():
    assert np.allclose(op_quantize(constant(1.0), 16).diagonal, 1.0)
    assert np.allclose(op_quantize(identity(), 4).diagonal, [1 / 8, 3 / 8, 5 / 8, 7 / 8], atol=1e-15)
    assert np.array_equal(op_quantize(indicator(Fraction(1, 2), 1), 4).diagonal, [0, 0, 1, 1])


def test_op_sine_closed_form():
    N = 32
    i = np.arange(N)
    exact = N / (2 * np.pi) * (np.cos(2 * np.pi * i / N) - np.cos(2 * np.pi * (i + 1) / N))
    assert np.max(np.abs(op_quantize(sine(), N).diagonal - exact)) < 1e-14


@pytest.mark.parametrize("n", [1, 2, 3])
def test_op_composed_against_quad(n):
    N = 16
    f = sine()
    d = op_quantize(f, N, T244, n).diagonal
    for i in (0, 5, 11, 15):
        pts = [i / N + t / (N * 64) for t in range(65)]
        val = sum(quad(lambda x: math.sin(2 * math.pi * t_float(T244, x, n)), a, b, epsabs=1e-13)[0]
                  for a, b in zip(pts, pts[1:]))
        assert abs(d[i] - N * val) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2), st.sampled_from([4, 8, 32]))
def test_op_linear_positive(a, b, N):
    f, g = sine(), hat()
    lin = op_quantize(f, N).diagonal * a + op_quantize(g, N).diagonal * b
    from qmel.observables import Observable
    h = Observable(lambda x: a * np.sin(2 * np.pi * x) + b * hat().fn(x), hat().breakpoints)
    assert np.allclose(op_quantize(h, N).diagonal, lin, atol=1e-13)
    sq = op_quantize(Observable(lambda x: (np.sin(2 * np.pi * x)) ** 2), N).diagonal
    assert np.all(sq >= 0) and np.all(np.abs(op_quantize(f, N).diagonal) <= 1 + 1e-15)


def test_parse_observable():
    assert parse_observable("const 2").fn(0.3) == 2
    assert parse_observable("x").fn(0.25) == 0.25
    assert parse_observable("indicator 1/4 1/2").fn(0.3) == 1
    with pytest.raises(ValueError):
        parse_observable("cosh")


def test_smooth_partition_examples():
    sp = smooth_partition([(0, Fraction(1, 2)), (Fraction(1, 2), 1)], 1 / 16)
    c1, c2 = sp.functions
    assert math.isclose(c1.fn(0.5), 1 / math.sqrt(2)) and math.isclose(c2.fn(0.5), 1 / math.sqrt(2))
    x = np.linspace(0, 1, 100001)
    sp3 = smooth_partition(T244.branches, 1 / 32)
    tot = sum(np.asarray(c.fn(x)) ** 2 for c in sp3.functions)
    assert np.max(np.abs(tot - 1)) < 1e-12
    for c in sp3.functions:
        v = np.asarray(c.fn(x))
        assert v.min() >= 0 and v.max() <= 1
        slope = np.max(np.abs(np.diff(v))) / (x[1] - x[0])
        assert slope <= (math.pi / 2) / (1 / 32) + 1
    with pytest.raises(DeltaTooLargeError):
        smooth_partition(T244.branches, 0.3)


def test_smooth_partition_quantized_resolves_unity():
    sp = smooth_partition(T244.branches, 1 / 64)
    for N in (64, 256):
        tot = sum(q.diagonal**2 for q in sp.quantize(N))
        assert np.max(np.abs(tot - 1)) < 1e-12


def test_operator_norm_matches_svd():
    rng = np.random.default_rng(1)
    for n in (5, 40):
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        ref = np.linalg.svd(a, compute_uv=False)[0]
        got = operator_norm(lambda v: a @ v, n, adjoint=lambda v: a.conj().T @ v)
        assert abs(got - ref) < 1e-9 * ref


def test_egorov_defect_constant_is_zero():
    assert egorov_defect(U244(6), T244, constant(1.0), 1) < 1e-13


def test_egorov_defect_matches_dense():
    k, n = 7, 2
    U = U244(k).to_dense()
    N = U.shape[0]
    un = np.linalg.matrix_power(U, n)
    A = un.conj().T @ np.diag(op_quantize(sine(), N).diagonal) @ un - np.diag(op_quantize(sine(), N, T244, n).diagonal)
    ref = np.linalg.svd(A, compute_uv=False)[0]
    assert abs(egorov_defect(U244(k), T244, sine(), n) - ref) < 1e-8


def test_egorov_scaling_k8_k10():
    d8 = egorov_defect(U244(8), T244, sine(), 1)
    d10 = egorov_defect(U244(10), T244, sine(), 1)
    assert 0.125 <= d10 / d8 <= 0.5


def test_commutator_defect():
    U = U244(8)
    assert commutator_defect(U, sine(), constant(1.0), 1) < 1e-13
    c = commutator_defect(U, sine(), sine(), 1)
    assert c <= 2 * egorov_defect(U, T244, sine(), 1) * 1.0 + 1e-12
    c10 = commutator_defect(U244(10), sine(), sine(), 1)
    assert c10 < c


def test_exact_egorov_examples():
    U = U244(8)
    assert exact_egorov_check(U, T244, "1", 1) < 1e-13
    assert exact_egorov_check(U, T244, (0, 1), 3) < 1e-13
    # cylinders whose preimages stay on the grid: |x| + 2n ≤ k for slopes (2, 4, 4)
    worst = 0.0
    for x in ("0", "1", "01", "110", "1011"):
        for n in range(1, (8 - len(x)) // 2 + 1):
            worst = max(worst, exact_egorov_check(U, T244, x, n))
    assert worst < 1e-12
    with pytest.raises(AlignmentError):
        exact_egorov_check(U, T244, "1", 6)


def test_exact_egorov_fails_off_grid():
    # beyond the grid the sharp identity is genuinely false
    r = exact_egorov_check(U244(8), T244, "1", 6, strict=False)
    assert r > 0.1


def test_invariance_from_egorov():
    from qmel.entropy import eigensolve
    k = 8
    U = U244(k)
    N = 2**k
    f = op_quantize(sine(), N).diagonal
    ft = op_quantize(sine(), N, T244, 1).diagonal
    bound = egorov_defect(U, T244, sine(), 1)
    for st_ in eigensolve(U)[::16]:
        p = np.abs(st_.vector) ** 2
        assert abs(p @ f - p @ ft) <= bound + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.fractions(0, 1, max_denominator=97), min_size=2, max_size=8, unique=True),
       st.sampled_from([8, 12, 64]))
def test_cell_overlap_matches_quadrature(cuts, N):
    from qmel.observables import _cell_overlap
    cuts = sorted(cuts)
    pieces = list(zip(cuts[::2], cuts[1::2]))
    ref = sum(op_quantize(indicator(a, b), N).diagonal for a, b in pieces)
    assert np.max(np.abs(_cell_overlap(pieces, N) - ref)) < 1e-12
