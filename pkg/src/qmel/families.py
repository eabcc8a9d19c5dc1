"""Closed-form eigenstate families of tensorial quantizations.

A d-cycle state is ``Σ_i C_i w^{(i)} ⊗ w^{(i+1)} ⊗ … ⊗ w^{(i+k-1)}`` (upper
indices mod d).  When it is an eigenstate, its cylinder measure tends to the
mixture ``Σ_i |C_i|² Π_j |w^{(i+j-1)}_{x_j}|²`` and the entropy of the map
equals ``Γ/d`` times the entropy of that mixture under the p^d-adic shift,
where ``Γ = Σ_j n_j μ(I_j)`` is the mean return time.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import xlogy

from .classical import (
    AutomatonMeasure,
    CylinderMeasure,
    PiecewiseLinearMap,
    build_map,
    ks_entropy_estimate,
)
from .entropy import EigenState, bound_thm3
from .errors import NotEigenstateError, NotEigenvectorError, PrecondError
from .quantizer import SiteUnitary, dft, tensorial_nonuniform

__all__ = [
    "FamilyMeasure",
    "FiniteCycleMeasure",
    "FamilyState",
    "T244",
    "product_eigenstate",
    "cycle_family",
    "example1_site",
    "example1_state",
    "example2_state",
    "example3_site",
    "example3_vectors",
    "example3_state",
    "flat_unitary_with_q",
    "Q_INTERVAL",
    "fig4_scan",
    "fig4_symmetry_gap",
]

T244 = build_map([2, 4, 4])
Q_INTERVAL = ((2 - math.sqrt(2)) / 4, (2 + math.sqrt(2)) / 4)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    return v / np.linalg.norm(v)


class FamilyMeasure(AutomatonMeasure):
    """Limit measure of a d-cycle family, with its closed-form entropy."""

    def __init__(self, vectors: Sequence[np.ndarray], weights: Sequence[float],
                 m: PiecewiseLinearMap | None = None):
        self.vectors = [_unit(w) for w in vectors]
        self.d = len(self.vectors)
        self.p = self.vectors[0].size
        self.coeff_weights = np.asarray(weights, dtype=float) / np.sum(weights)
        self.map = m
        probs = np.array([np.abs(w) ** 2 for w in self.vectors])  # (d, p)
        mats = np.zeros((self.p, self.d, self.d))
        for s in range(self.p):
            for i in range(self.d):
                mats[s, i, (i + 1) % self.d] = probs[i, s]
        self.probs = probs
        super().__init__(self.coeff_weights, mats, np.ones(self.d))

    def branch_weights(self) -> np.ndarray:
        return np.array([self.weight(c) for c in self.map.codes])

    def gamma(self) -> float:
        return float(np.dot(self.map.exponents, self.branch_weights()))

    def shift_entropy_pd(self) -> float:
        """Entropy under the p^d-adic shift: -Σ_i Σ_j |w^{(i)}_j|² log |w^{(i)}_j|²."""
        return float(-np.sum(xlogy(self.probs, self.probs)))

    def shift_entropy_p(self) -> float:
        """Entropy under the p-adic shift, i.e. the p^d reading divided by d."""
        return self.shift_entropy_pd() / self.d

    def entropy(self) -> float:
        """Entropy of the map: Γ/d times the p^d-adic shift entropy."""
        return self.gamma() / self.d * self.shift_entropy_pd()

    def bound(self) -> float:
        return bound_thm3(self.branch_weights(), self.map)

    def numeric_entropy(self, n: int) -> float:
        """h_n/n of the branch-coded measure."""
        return ks_entropy_estimate(self, n, codes=self.map.codes).rates[-1]


class FiniteCycleMeasure(CylinderMeasure):
    """Exact cylinder measure ``‖P_x ψ‖²`` of a finite-k cycle state, cross terms included."""

    def __init__(self, vectors, coefficients, k: int):
        self.vectors = [np.asarray(w, dtype=complex) for w in vectors]
        self.d = len(self.vectors)
        self.p = self.vectors[0].size
        self.k = k
        self.symbols = tuple(str(s) for s in range(self.p))
        c = np.asarray(coefficients, dtype=complex)
        gram = np.array([[np.vdot(u, w) for w in self.vectors] for u in self.vectors])
        # tail[L][i, i'] = Π_{j > L} ⟨w^{(i+j-1)}, w^{(i'+j-1)}⟩
        tail = [None] * (k + 1)
        t = np.ones((self.d, self.d), dtype=complex)
        tail[k] = t.copy()
        for L in range(k - 1, -1, -1):
            idx = (np.arange(self.d) + L) % self.d
            t = t * gram[np.ix_(idx, idx)]
            tail[L] = t.copy()
        norm = np.real(np.conj(c) @ tail[0] @ c)
        self.coefficients = c / math.sqrt(norm)
        self._tail = tail

    def _root(self):
        return (np.ones((1, self.d, self.d), dtype=complex), np.zeros(1, dtype=np.int64))

    def _extend(self, states, code):
        m, L = states
        m = m.copy()
        L = L.copy()
        for s in code:
            if np.any(L >= self.k):
                raise ValueError(f"cylinder longer than k={self.k}")
            idx = (np.arange(self.d)[None, :] + L[:, None]) % self.d
            amp = np.stack([w[s] for w in self.vectors])[idx]  # (B, d)
            m = m * np.conj(amp)[:, :, None] * amp[:, None, :]
            L = L + 1
        return m, L

    def _weight(self, states):
        m, L = states
        c = self.coefficients
        tails = np.stack([self._tail[int(x)] for x in L])
        return np.real(np.einsum("i,bij,j->b", np.conj(c), m * tails, c))


@dataclass
class FamilyState:
    state: EigenState
    sites: list
    map: PiecewiseLinearMap
    measure: FamilyMeasure
    finite_measure: FiniteCycleMeasure
    info: dict = field(default_factory=dict)

    @property
    def vector(self) -> np.ndarray:
        return self.state.vector


def _tensor_chain(vectors, start: int, k: int) -> np.ndarray:
    out = np.ones(1, dtype=complex)
    d = len(vectors)
    for j in range(k):
        out = np.kron(out, vectors[(start + j) % d])
    return out


def _eigen_check(U, psi: np.ndarray, tol: float) -> EigenState:
    upsi = U.apply(psi)
    lam = np.vdot(psi, upsi)
    if abs(lam) < 1e-12:
        raise NotEigenstateError("state is annihilated in the eigen check")
    lam /= abs(lam)
    res = float(np.linalg.norm(upsi - lam * psi))
    if res > tol:
        raise NotEigenstateError(f"eigen residual {res:.3g} exceeds {tol}")
    return EigenState(psi, float(np.angle(lam)), res)


def cycle_family(vectors, coefficients, m: PiecewiseLinearMap, k: int,
                 sites: Sequence[SiteUnitary], tol: float = 1e-9) -> FamilyState:
    """Build a d-cycle state on the tensorial quantization and its closed-form measure."""
    vectors = [_unit(w) for w in vectors]
    d = len(vectors)
    if k % d:
        raise PrecondError(f"k={k} is not a multiple of the cycle length {d}")
    c = np.asarray(coefficients, dtype=complex)
    psi = sum(c[i] * _tensor_chain(vectors, i, k) for i in range(d) if c[i] != 0)
    nrm = np.linalg.norm(psi) if np.ndim(psi) else 0.0
    if nrm < 1e-12:
        raise PrecondError("the cycle terms cancel; the state vanishes")
    psi = psi / nrm
    U = tensorial_nonuniform(m, list(sites), k)
    st = _eigen_check(U, psi, tol)
    limit = FamilyMeasure(vectors, np.abs(c) ** 2, m)
    finite = FiniteCycleMeasure(vectors, c, k)
    return FamilyState(st, list(sites), m, limit, finite)


def product_eigenstate(site: SiteUnitary, w, k: int, tol: float = 1e-12) -> FamilyState:
    """``w^{⊗k}`` for an eigenvector w of the site unitary, on the shift quantization."""
    w = _unit(w)
    uw = site.matrix @ w
    lam = np.vdot(w, uw)
    if np.linalg.norm(uw - lam * w) > tol or abs(abs(lam) - 1) > tol:
        raise NotEigenvectorError("w is not an eigenvector of the site unitary")
    m = build_map([site.p] * site.p)
    return cycle_family([w], [1.0], m, k, [site])


def example1_site() -> SiteUnitary:
    """``i · DFT_2``, a flat unitary squaring to -1."""
    return SiteUnitary(1j * dft(2).matrix)


def example1_state(k: int, site: SiteUnitary | None = None) -> FamilyState:
    """``(|1⟩ ⊗ 𝐔|1⟩)^{⊗k/2}`` on the tensorial quantization of T_{2,4,4}."""
    site = site or example1_site()
    if k % 2:
        raise PrecondError("k must be even")
    if not site.flat or not np.allclose(site.matrix @ site.matrix, -np.eye(2), atol=1e-12):
        raise PrecondError("site unitary must be flat with square -1")
    one = np.array([0, 1], dtype=complex)
    fam = cycle_family([one, site.matrix @ one], [1.0, 0.0], T244, k, [site, site])
    fam.info.update(gamma=fam.measure.gamma(), entropy=fam.measure.entropy())
    return fam


def example2_state(site: SiteUnitary, k: int, which: int = 0) -> FamilyState:
    """Product state of an eigenvector w of a flat 𝐔, with 𝐔_1 = 𝐔 and 𝐔_2 = e^{-iγ}𝐔."""
    if not site.flat or site.p != 2:
        raise PrecondError("example 2 needs a flat 2x2 site unitary")
    vals, vecs = np.linalg.eig(site.matrix)
    lam, w = vals[which], _unit(vecs[:, which])
    if np.linalg.norm(site.matrix @ w - lam * w) > 1e-12:
        raise NotEigenvectorError("eigenvector residual too large")
    gamma_phase = float(np.angle(lam))
    u2 = SiteUnitary(np.exp(-1j * gamma_phase) * site.matrix)
    fam = cycle_family([w], [1.0], T244, k, [site, u2])
    p, q = float(abs(w[0]) ** 2), float(abs(w[1]) ** 2)
    lo, hi = Q_INTERVAL
    if not (lo - 1e-12 <= q <= hi + 1e-12):
        raise PrecondError(f"q={q} outside the admissible interval")
    closed = -(xlogy(p, p) + xlogy(p * q, p * q) + xlogy(q * q, q * q))
    fam.info.update(p=p, q=q, gamma_phase=gamma_phase, branch=(p, p * q, q * q),
                    entropy=float(closed), bound=fam.measure.bound())
    return fam


def flat_unitary_with_q(q: float) -> SiteUnitary:
    """A flat 2x2 unitary having an eigenvector with ``|w_1|² = q``.

    Uses the family ``(1/√2)[[e^{ia}, 1], [-1, e^{-ia}]]``, a ∈ [0, π/2], whose
    eigenvectors sweep q from 1/2 out to the ends of the admissible interval.
    """
    lo, hi = Q_INTERVAL
    if not (lo - 1e-15 <= q <= hi + 1e-15):
        raise PrecondError(f"q={q} is not attainable by a flat unitary")

    def site(a):
        return np.array([[np.exp(1j * a), 1], [-1, np.exp(-1j * a)]]) / math.sqrt(2)

    def qs(a):
        _, vecs = np.linalg.eig(site(a))
        return sorted(abs(vecs[1, i]) ** 2 / np.sum(np.abs(vecs[:, i]) ** 2) for i in range(2))

    pick = 0 if q < 0.5 else 1
    if abs(q - 0.5) < 1e-15:
        a = 0.0
    elif abs(q - (lo if pick == 0 else hi)) < 1e-15:
        a = math.pi / 2
    else:
        a = brentq(lambda t: qs(t)[pick] - q, 0.0, math.pi / 2, xtol=1e-15)
    return SiteUnitary(site(a))


def example3_site(alpha: float) -> SiteUnitary:
    return SiteUnitary(np.array([[1, np.exp(1j * alpha)], [np.exp(-1j * alpha), -1]]) / math.sqrt(2))


def example3_vectors(z: complex, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    r2 = math.sqrt(2)
    ph = np.exp(-1j * alpha)
    c = 1 + abs(z * r2 - 1) ** 2
    w1 = np.array([1, ph * (z * r2 - 1)], dtype=complex) / math.sqrt(c)
    w2 = np.array([z, ph * (r2 - z)], dtype=complex) / math.sqrt(c)
    return w1, w2


def example3_state(z: complex, alpha: float, k: int) -> FamilyState:
    """Two-cycle state ``C_1 (w1⊗w2)^{k/2} + C_2 (w2⊗w1)^{k/2}`` with C_1 = z C_2."""
    if k % 2:
        raise PrecondError("k must be even")
    site = example3_site(alpha)
    w1, w2 = example3_vectors(z, alpha)
    fam = cycle_family([w1, w2], [z, 1.0], T244, k, [site, site])
    probs = fam.measure.probs  # rows w1, w2 normalized; columns |0>, |1>
    p = probs[:, 1]
    q = probs[:, 0]
    g = fam.measure.gamma()
    closed = -(g / 2) * float(np.sum(xlogy(p, p) + xlogy(q, q)))
    fam.info.update(p=tuple(p), q=tuple(q), gamma=g, entropy=closed, bound=fam.measure.bound())
    return fam


def _example3_limit(z: complex, alpha: float) -> FamilyMeasure:
    w1, w2 = example3_vectors(z, alpha)
    return FamilyMeasure([w1, w2], [abs(z) ** 2, 1.0], T244)


def _fig4_row(z: float, alpha: float, n: int, imag: float = 0.0) -> tuple:
    meas = _example3_limit(complex(z, imag), alpha)
    h = meas.entropy()
    b = meas.bound()
    hn = meas.numeric_entropy(n)
    return (z, h, b, hn, h - b)


def fig4_scan(z_min: float = -3.0, z_max: float = 3.0, steps: int = 241, alpha: float = 0.0,
              n: int = 8, threads: int = 1, imag: float = 0.0) -> list[tuple]:
    """Rows (Re z, closed-form entropy, bound, h_n/n numeric, margin) along Re z, Im z fixed."""
    zs = np.linspace(z_min, z_max, steps)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as ex:
        return list(ex.map(lambda z: _fig4_row(float(z), alpha, n, imag), zs))


def fig4_symmetry_gap(zs: Sequence[float], alpha: float = 0.0) -> float:
    """Largest difference in closed-form entropy between z and 1/z."""
    gap = 0.0
    for z in zs:
        if z == 0:
            continue
        a = _example3_limit(complex(z), alpha).entropy()
        b = _example3_limit(complex(1 / z), alpha).entropy()
        gap = max(gap, abs(a - b))
    return gap
