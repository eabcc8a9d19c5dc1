import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmel.errors import NotEigenstateError, NotEigenvectorError, PrecondError
from qmel.families import (
    Q_INTERVAL,
    T244,
    cycle_family,
    example1_site,
    example1_state,
    example2_state,
    example3_site,
    example3_state,
    fig4_scan,
    fig4_symmetry_gap,
    flat_unitary_with_q,
    product_eigenstate,
)
from qmel.quantizer import dft, tensorial_nonuniform

LOG2 = math.log(2)


def prefix_oracle(psi, x):
    """‖P_x ψ‖² from the leading binary digits of the basis index."""
    pr = np.abs(psi) ** 2
    return float(pr.reshape(2 ** len(x), -1)[int(x, 2)].sum())


def branch_oracle(psi):
    return [prefix_oracle(psi, "0"), prefix_oracle(psi, "10"), prefix_oracle(psi, "11")]


def entropy_from_probs(probs):
    probs = np.asarray(probs)
    probs = probs[probs > 0]
    return float(-np.sum(probs * np.log(probs)))


def test_example1():
    fam = example1_state(8)
    U = tensorial_nonuniform(T244, [example1_site()] * 2, 8)
    assert np.linalg.norm(U.apply(fam.vector) - fam.state.eigenvalue * fam.vector) < 1e-12
    assert math.isclose(fam.measure.gamma(), 2.0)
    assert math.isclose(fam.measure.entropy(), LOG2)
    assert math.isclose(fam.measure.bound(), LOG2)
    assert np.allclose(fam.measure.branch_weights(), [0, 0.5, 0.5])
    assert np.allclose(branch_oracle(fam.vector), [0, 0.5, 0.5])
    with pytest.raises(PrecondError):
        example1_state(7)
    with pytest.raises(PrecondError):
        example1_state(8, dft(2))


def test_example1_shift_entropy_readings():
    m = example1_state(4).measure
    # |1⟩ is deterministic, 𝐔|1⟩ is uniform: p^d reading log 2, p reading ½ log 2
    assert math.isclose(m.shift_entropy_pd(), LOG2)
    assert math.isclose(m.shift_entropy_p(), LOG2 / 2)


@pytest.mark.parametrize("q", [Q_INTERVAL[0], 0.2, 0.35, 0.5, 0.6, Q_INTERVAL[1]])
def test_example2_closed_form(q):
    site = flat_unitary_with_q(q)
    assert site.flat and site.unitarity_residual < 1e-14
    fam = next(f for f in (example2_state(site, 8, w) for w in (0, 1)) if abs(f.info["q"] - q) < 1e-9)
    p = 1 - q
    closed = entropy_from_probs([p, p * q, q * q])
    assert abs(fam.info["entropy"] - closed) < 1e-12
    assert abs(fam.measure.entropy() - closed) < 1e-12
    assert math.isclose(fam.measure.gamma(), 1 + q)
    assert np.allclose(branch_oracle(fam.vector), [p, p * q, q * q], atol=1e-12)
    assert fam.info["entropy"] >= fam.info["bound"] - 1e-12


def test_flat_unitary_q_out_of_range():
    with pytest.raises(PrecondError):
        flat_unitary_with_q(0.1)
    with pytest.raises(PrecondError):
        flat_unitary_with_q(0.9)


def test_example3_special_points():
    f = example3_state(math.sqrt(2), 0.0, 8)
    assert math.isclose(f.info["entropy"], 2 / 3 * LOG2, rel_tol=1e-12)
    assert math.isclose(f.info["bound"], 2 / 3 * LOG2, rel_tol=1e-12)
    f0 = example3_state(0.0, 0.0, 8)
    assert math.isclose(f0.info["entropy"], LOG2) and math.isclose(f0.info["bound"], LOG2)


def test_example3_z1_matches_example2_at_qmin():
    e3 = example3_state(1.0, 0.0, 8)
    site = flat_unitary_with_q(Q_INTERVAL[0])
    e2 = next(f for f in (example2_state(site, 8, w) for w in (0, 1)) if abs(f.info["q"] - Q_INTERVAL[0]) < 1e-9)
    assert abs(e3.info["entropy"] - e2.info["entropy"]) < 1e-12
    assert abs(e3.info["bound"] - e2.info["bound"]) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-1, 1), st.floats(0, 2 * math.pi))
def test_example3_is_eigenstate(re, im, alpha):
    z = complex(re, im)
    if abs(z + 1) < 1e-3:
        return
    fam = example3_state(z, alpha, 6)
    U = tensorial_nonuniform(T244, [example3_site(alpha)] * 2, 6)
    assert np.linalg.norm(U.apply(fam.vector) - fam.state.eigenvalue * fam.vector) < 1e-10
    assert fam.info["entropy"] >= fam.info["bound"] - 1e-12
    assert abs(fam.info["entropy"] - fam.measure.entropy()) < 1e-12


def test_example3_degenerate_point():
    with pytest.raises(PrecondError):
        example3_state(-1.0, 0.0, 8)


@pytest.mark.parametrize("z", [0.7, -2.0, 1.5 + 0.5j])
def test_finite_measure_matches_projectors(z):
    fam = example3_state(z, 0.3, 10)
    for x in ("0", "1", "10", "011", "1101", "0110101"):
        assert abs(fam.finite_measure.weight(x) - prefix_oracle(fam.vector, x)) < 1e-13


def test_finite_measure_approaches_limit():
    z = 0.7
    gaps = []
    for k in (4, 8, 12):
        fam = example3_state(z, 0.0, k)
        gaps.append(max(abs(fam.finite_measure.weight(x) - fam.measure.weight(x)) for x in ("0", "10", "11")))
    assert gaps[-1] < gaps[0] and gaps[-1] < 1e-2


def test_cycle_family_errors():
    f = dft(2)
    w = np.array([1, 0])
    with pytest.raises(PrecondError):
        cycle_family([w, w], [1, 1], T244, 5, [f, f])
    with pytest.raises(NotEigenstateError):
        cycle_family([w], [1], T244, 4, [f, f])


def test_product_eigenstate():
    s = dft(2)
    vals, vecs = np.linalg.eig(s.matrix)
    fam = product_eigenstate(s, vecs[:, 0], 6)
    assert fam.state.residual < 1e-12
    with pytest.raises(NotEigenvectorError):
        product_eigenstate(s, [1, 0], 6)


def test_fig4_scan_properties():
    rows = fig4_scan(steps=61, n=6)
    z, h, b, hn, margin = map(np.array, zip(*rows))
    assert z[0] == -3 and z[-1] == 3 and len(rows) == 61
    assert np.all(margin >= -1e-12)
    assert np.allclose(margin, h - b)
    # block entropy rates approach the entropy from above
    assert np.all(hn >= h - 1e-9)
    # equality at z = 0 (on the grid) and a near-touch at the grid point closest to √2
    assert abs(margin[np.argmin(np.abs(z))]) < 1e-12
    assert margin[np.argmin(np.abs(z - math.sqrt(2)))] < 1e-3


def test_fig4_margin_minimum_at_sqrt2():
    rows = fig4_scan(1.3, 1.5, steps=201, n=4)
    z = np.array([r[0] for r in rows])
    m = np.array([r[4] for r in rows])
    assert abs(z[np.argmin(m)] - math.sqrt(2)) < 2e-3
    assert m.min() < 1e-5


def test_fig4_symmetry():
    assert fig4_symmetry_gap([0.3, 0.5, 2.0, 3.0, -2.0, -0.25]) < 1e-12


def test_fig4_threads_deterministic():
    a = fig4_scan(steps=31, n=5, threads=1)
    b = fig4_scan(steps=31, n=5, threads=4)
    assert a == b
