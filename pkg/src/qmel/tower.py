"""Towers over T_p maps, classical and quantum.

A map whose branch I_j is the p-adic cylinder of a digit code c_j of length
n_j is the first-return map to level 0 of a tower over ``T̄_p(x) = p x mod 1``:
a point climbs one level per step and drops back to level 0 once the digits
read so far complete a branch code.

The quantum tower lives on ``H̃ = H ⊕ P'_{⟦1⟧}H`` for the map with slopes
(2, 4, 4), where ``P'_{⟦1⟧} = Ū P_{⟦1⟧} Ū*`` projects on states whose last
site is 𝐔|1⟩.  Level-1 vectors are stored by their coordinates ``a`` with
``φ_1 = V a = Σ_x a_x |x⟩ ⊗ 𝐔|1⟩``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Sequence

import numpy as np
from scipy import sparse

from .classical import (
    CylinderMeasure,
    CylinderTable,
    PiecewiseLinearMap,
    build_map,
    classical_entropy,
)
from .entropy import EigenState
from .errors import DepthError, DimensionError, NotTpError, ResidualError
from .quantizer import SiteUnitary, dft, tensorial_nonuniform, tensorial_uniform

__all__ = [
    "TowerMap",
    "TowerTable",
    "build_classical_tower",
    "lift_classical_measure",
    "project_measure",
    "AbramovReport",
    "abramov_audit",
    "TowerSpace",
    "build_tower_space",
    "TowerEvolution",
    "tower_evolution",
    "TowerState",
    "lift_eigenstate",
    "tower_measures",
    "tower_invariance_residual",
    "TowerAudit",
    "tower_entropy_bound_audit",
]


# ---------------------------------------------------------------- classical


@dataclass(frozen=True)
class TowerMap:
    base_map: PiecewiseLinearMap
    p: int
    levels: int
    jump_digits: tuple[frozenset, ...]  # D_η as digit sets read at level η
    prefixes: tuple[tuple[tuple[int, ...], ...], ...]  # digits consumed before reaching level η
    uniform_map: PiecewiseLinearMap

    def jumping_sets(self) -> list[list[tuple[Fraction, Fraction]]]:
        """D_η as unions of branch intervals of the base map."""
        out = []
        for eta in range(self.levels):
            ivs = [self.base_map.branches[j] for j, c in enumerate(self.base_map.codes)
                   if len(c) == eta + 1]
            out.append(ivs)
        return out

    def step(self, x: Fraction, level: int) -> tuple[Fraction, int]:
        x = Fraction(x)
        d = min(int(x * self.p), self.p - 1)
        y = x * self.p - d
        return (y, 0) if d in self.jump_digits[level] else (y, level + 1)

    def first_return(self, x: Fraction, max_steps: int | None = None) -> tuple[Fraction, int]:
        """Follow the tower from (x, 0) until it is back at level 0."""
        y, lvl = self.step(x, 0)
        t = 1
        while lvl:
            y, lvl = self.step(y, lvl)
            t += 1
            if max_steps and t > max_steps:
                raise RuntimeError("no return within max_steps")
        return y, t

    def return_time(self, digits: Sequence[int]) -> int | None:
        """Symbolic return time of the cylinder ⟦digits⟧, None if not yet decided."""
        lvl = 0
        for t, d in enumerate(digits):
            if d in self.jump_digits[lvl]:
                return t + 1
            lvl += 1
            if lvl >= self.levels:
                raise NotTpError("tower climbed past its top level")
        return None

    def first_return_check(self, max_len: int = 12) -> bool:
        """Symbolic check that the first return map equals the base map on every cylinder.

        On ⟦x⟧ the base map drops the branch code, the tower drops one digit per
        step; they agree iff the return time equals the code length.
        """
        codes = self.base_map.codes
        for L in range(1, max_len + 1):
            for digits in product(range(self.p), repeat=L):
                r = self.return_time(digits)
                j = next((i for i, c in enumerate(codes) if tuple(digits[:len(c)]) == tuple(c)), None)
                if j is None:
                    if r is not None:
                        return False
                elif r != len(codes[j]):
                    return False
        return True


def build_classical_tower(m: PiecewiseLinearMap) -> TowerMap:
    """Tower over T̄_p whose first-return map is ``m``.

    The digit read at level η must decide on its own whether the point drops
    back, otherwise the tower is not a Markov extension and NotTpError is raised.
    """
    codes = [tuple(c) for c in m.codes]  # raises NotTpError if not a T_p map
    p = m.uniform_base
    levels = max(len(c) for c in codes)
    jumps, prefixes = [], []
    for eta in range(levels):
        stop = {c[eta] for c in codes if len(c) == eta + 1}
        go = {c[eta] for c in codes if len(c) > eta + 1}
        if stop & go:
            raise NotTpError(f"level {eta}: digits {sorted(stop & go)} both return and climb")
        jumps.append(frozenset(stop))
        prefixes.append(tuple(sorted({c[:eta] for c in codes if len(c) > eta})))
    return TowerMap(m, p, levels, tuple(jumps), tuple(prefixes), build_map([p] * p))


@dataclass(frozen=True)
class TowerTable:
    """Weights μ̃(⟦x⟧ × {η}) for strings of length n, shape (levels, p^n)."""

    p: int
    n: int
    weights: np.ndarray

    @property
    def levels(self) -> int:
        return self.weights.shape[0]

    def total(self) -> float:
        return float(self.weights.sum())

    def level_mass(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def entropy(self) -> float:
        return classical_entropy(self.weights.ravel())

    def to_csv(self) -> str:
        keys = [""]
        for _ in range(self.n):
            keys = [k + str(s) for k in keys for s in range(self.p)]
        lines = ["string,level,weight"]
        for eta in range(self.levels):
            lines += [f"{k},{eta},{w:.17g}" for k, w in zip(keys, self.weights[eta].tolist())]
        return "\n".join(lines) + "\n"


def _prefixed_weights(mu, prefix, n: int) -> np.ndarray:
    if isinstance(mu, CylinderMeasure):
        return mu.weights(n, prefix=prefix)
    if isinstance(mu, CylinderTable):
        L = len(prefix) + n
        if mu.n < L:
            raise DimensionError(f"table of length {mu.n} too short for length {L}")
        w = mu.weights.reshape(mu.size ** L, -1).sum(axis=1)
        idx = 0
        for d in prefix:
            idx = idx * mu.size + d
        span = mu.size ** n
        return w[idx * span:(idx + 1) * span]
    raise TypeError("expected a CylinderMeasure or CylinderTable")


def lift_classical_measure(mu, tower: TowerMap, n: int) -> tuple[TowerTable, float]:
    """Tower measure ``μ̃(⟦x⟧×{η}) = Γ^{-1} Σ_s μ(⟦s x⟧)``, s over prefixes reaching level η.

    Returns the table and ``Γ = Σ_j n_j μ(I_j)``.
    """
    rows = []
    for eta in range(tower.levels):
        rows.append(sum(_prefixed_weights(mu, s, n) for s in tower.prefixes[eta]))
    w = np.array(rows)
    gamma = float(w.sum())
    return TowerTable(tower.p, n, w / gamma), gamma


def project_measure(mu_tilde: TowerTable) -> CylinderTable:
    """Marginal μ̄ on strings, summing out the level."""
    return CylinderTable(tuple(str(s) for s in range(mu_tilde.p)), mu_tilde.n,
                         mu_tilde.weights.sum(axis=0))


@dataclass
class AbramovReport:
    gamma: float
    n: list
    map_rates: list  # h_n(T, μ)/n over the branch partition
    bar_rates: list  # h_n(T̄, μ̄)/n
    gaps: list  # |h_n(T,μ)/n − Γ h_n(T̄,μ̄)/n|
    sandwich: list  # h_n(μ̃) − h_n(μ̄)
    levels: int

    @property
    def final_gap(self) -> float:
        return self.gaps[-1]

    def trend_ok(self, slack: float = 1e-12) -> bool:
        """Gap sequence non-increasing in n."""
        return all(b <= a + slack for a, b in zip(self.gaps, self.gaps[1:]))

    def sandwich_ok(self, tol: float = 1e-12) -> bool:
        cap = math.log(self.levels)
        return all(-tol <= s <= cap + tol for s in self.sandwich)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "n": self.n, "map_rates": self.map_rates,
                "bar_rates": self.bar_rates, "gaps": self.gaps, "sandwich": self.sandwich,
                "final_gap": self.final_gap, "trend_ok": self.trend_ok(),
                "sandwich_ok": self.sandwich_ok()}


def abramov_audit(mu: CylinderMeasure, m: PiecewiseLinearMap, n_max: int = 12) -> AbramovReport:
    """Compare H(T, μ) with Γ·H(T̄, μ̄) at matched finite n."""
    tower = build_classical_tower(m)
    codes = m.codes
    ns, mr, br, gaps, sand = [], [], [], [], []
    gamma = None
    for n in range(1, n_max + 1):
        hT = classical_entropy(mu.weights(n, codes=codes))
        mt, gamma = lift_classical_measure(mu, tower, n)
        hbar = classical_entropy(project_measure(mt))
        ns.append(n)
        mr.append(hT / n)
        br.append(hbar / n)
        gaps.append(abs(hT / n - gamma * hbar / n))
        sand.append(mt.entropy() - hbar)
    return AbramovReport(gamma, ns, mr, br, gaps, sand, tower.levels)


# ---------------------------------------------------------------- quantum

T244 = build_map([2, 4, 4])


def _level1_embedding(site: SiteUnitary, k: int) -> sparse.csr_matrix:
    """V: coordinates a ∈ C^{2^{k-1}} ↦ Σ_x a_x |x⟩ ⊗ 𝐔|1⟩ in H."""
    half = 2 ** (k - 1)
    z = np.arange(half)
    rows = np.concatenate([2 * z, 2 * z + 1])
    cols = np.concatenate([z, z])
    data = np.concatenate([np.full(half, site.matrix[0, 1]), np.full(half, site.matrix[1, 1])])
    return sparse.csr_matrix((data, (rows, cols)), shape=(2**k, half))


def _swap_last_two(k: int) -> sparse.csr_matrix:
    i = np.arange(2**k)
    hi, a, b = i // 4, (i // 2) % 2, i % 2
    j = hi * 4 + b * 2 + a
    return sparse.csr_matrix((np.ones(i.size), (j, i)), shape=(2**k, 2**k))


def _prefix_projector(x: Sequence[int], k: int, shift: int = 0) -> np.ndarray:
    """Diagonal of the projector on strings with digits ``x`` starting at position ``shift``."""
    idx = np.arange(2**k)
    keep = np.ones(2**k, dtype=bool)
    for t, d in enumerate(x):
        keep &= ((idx >> (k - 1 - shift - t)) & 1) == d
    return keep.astype(float)


@dataclass(frozen=True)
class TowerSpace:
    k: int
    site: SiteUnitary
    embedding: sparse.csr_matrix  # columns are the basis vectors in H ⊕ H

    @property
    def dim(self) -> int:
        return self.embedding.shape[1]

    def gram_residual(self) -> float:
        g = (self.embedding.conj().T @ self.embedding).toarray()
        return float(np.max(np.abs(g - np.eye(self.dim))))


def build_tower_space(k: int, site: SiteUnitary | None = None) -> TowerSpace:
    """Orthonormal basis ℰ_{(x,0)} = (|x⟩, 0), ℰ_{(x,1)} = (0, |x_1 … x_{k-1}⟩ ⊗ 𝐔|1⟩)."""
    if k < 1:
        raise DepthError("k must be positive")
    site = site or dft(2)
    N = 2**k
    V = _level1_embedding(site, k)
    emb = sparse.block_diag([sparse.identity(N, format="csr"), V], format="csr")
    return TowerSpace(k, site, emb)


@dataclass
class TowerEvolution:
    k: int
    theta: float
    sites: tuple
    ubar: sparse.csr_matrix
    ubar1: sparse.csr_matrix
    V: sparse.csr_matrix
    matrix: sparse.csr_matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        return self.matrix.conj().T @ v

    def unitarity_residual(self) -> float:
        eye = sparse.identity(self.dim, format="csr")
        m = self.matrix
        r1 = m.conj().T @ m - eye
        r2 = m @ m.conj().T - eye
        return float(max(abs(r1).max(), abs(r2).max()))

    def explicit_adjoint(self) -> sparse.csr_matrix:
        """Ũ*(φ_0, a) = (P_0 Ū*φ_0 + e^{-iθ} P_1 Ū* V a, V* Ū_1* φ_0)."""
        N = 2**self.k
        p0 = sparse.diags(_prefix_projector([0], self.k))
        p1 = sparse.diags(_prefix_projector([1], self.k))
        ubh = self.ubar.conj().T
        top = sparse.hstack([p0 @ ubh, np.exp(-1j * self.theta) * (p1 @ ubh @ self.V)])
        bottom = sparse.hstack([self.V.conj().T @ self.ubar1.conj().T,
                                sparse.csr_matrix((N // 2, N // 2))])
        return sparse.vstack([top, bottom], format="csr")

    def adjoint_residual(self) -> float:
        d = self.explicit_adjoint() - self.matrix.conj().T
        return float(abs(d).max()) if d.nnz else 0.0

    def commutation_residual(self) -> float:
        """max_j ‖[Ū_1, P'_{⟦j⟧}]‖_max with P'_{⟦j⟧} = Ū P_{⟦j⟧} Ū*."""
        out = 0.0
        for j in (0, 1):
            pj = sparse.diags(_prefix_projector([j], self.k))
            pp = self.ubar @ pj @ self.ubar.conj().T
            c = self.ubar1 @ pp - pp @ self.ubar1
            out = max(out, float(abs(c).max()) if c.nnz else 0.0)
        return out

    def _level_projector(self, x, level: int) -> sparse.csr_matrix:
        N = 2**self.k
        if level == 0:
            d = np.concatenate([_prefix_projector(x, self.k), np.zeros(N // 2)])
        else:
            d = np.concatenate([np.zeros(N), _prefix_projector(x, self.k - 1)])
        return sparse.diags(d, format="csr")

    def egorov_residual(self, x: Sequence[int], level: int = 0) -> float:
        """Residual of the tower Egorov identities for ⟦x⟧ at the given level.

        Level 0: ``Ũ*(P_x ⊕ 0)Ũ = P_{⟦0⟧}P_{T̄^{-1}x} ⊕ P'_{⟦1⟧}P_{T̄^{-1}x}``.
        Level 1: ``Ũ*(0 ⊕ P_x)Ũ = P_{⟦1⟧}P_{T̄^{-1}x} ⊕ 0``.
        """
        k = self.k
        if len(x) > k - 2:
            raise DepthError(f"|x|={len(x)} exceeds k-2={k - 2}")
        lhs = self.matrix.conj().T @ self._level_projector(x, level) @ self.matrix
        pre = _prefix_projector(x, k, shift=1)
        N = 2**k
        if level == 0:
            top = _prefix_projector([0], k) * pre
            bottom = _prefix_projector(x, k - 1, shift=1)  # V*P_{T̄^{-1}x}V on coordinates
            rhs = sparse.diags(np.concatenate([top, bottom]))
        else:
            top = _prefix_projector([1], k) * pre
            rhs = sparse.diags(np.concatenate([top, np.zeros(N // 2)]))
        d = lhs - rhs
        return float(abs(d).max()) if d.nnz else 0.0


def tower_evolution(k: int, theta: float, sites: Sequence[SiteUnitary] | None = None
                    ) -> TowerEvolution:
    """Ũ_θ(φ_0, φ_1) = (Ū_1 φ_1 + Ū P_{⟦0⟧} φ_0, e^{iθ} Ū P_{⟦1⟧} φ_0) on H̃.

    ``sites = (𝐔_1, 𝐔_2)``; Ū is the shift built on 𝐔_1 and Ū_1 = σ Ū[𝐔_2]
    with σ exchanging the last two sites, so that two tower steps through
    level 1 reproduce the base quantization on ⟦1⟧.
    """
    if k < 2:
        raise DepthError("the quantum tower needs k >= 2")
    sites = tuple(sites) if sites else (dft(2), dft(2))
    if len(sites) != 2 or any(s.p != 2 for s in sites):
        raise DimensionError("expected two 2x2 site unitaries")
    N = 2**k
    ubar = tensorial_uniform(sites[0], k).to_sparse()
    ubar1 = _swap_last_two(k) @ tensorial_uniform(sites[1], k).to_sparse()
    V = _level1_embedding(sites[0], k)
    p0 = sparse.diags(_prefix_projector([0], k))
    p1 = sparse.diags(_prefix_projector([1], k))
    top = sparse.hstack([ubar @ p0, ubar1 @ V])
    bottom = sparse.hstack([np.exp(1j * theta) * (V.conj().T @ ubar @ p1),
                            sparse.csr_matrix((N // 2, N // 2))])
    mat = sparse.vstack([top, bottom], format="csr")
    mat.eliminate_zeros()
    return TowerEvolution(k, float(theta), sites, ubar, ubar1, V, mat)


@dataclass
class TowerState:
    phi0: np.ndarray
    a: np.ndarray  # level-1 coordinates, φ_1 = V a
    k: int
    gamma: float = 1.0
    residual: float = 0.0
    phase: float = 0.0

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.phi0, self.a])

    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.phi0, self.phi0).real + np.vdot(self.a, self.a).real))

    def phi1(self, site: SiteUnitary) -> np.ndarray:
        return _level1_embedding(site, self.k) @ self.a

    def level1_residual(self, site: SiteUnitary) -> float:
        """‖P'_{⟦1⟧}φ_1 − φ_1‖, P'_{⟦1⟧} = V V*."""
        V = _level1_embedding(site, self.k)
        f1 = V @ self.a
        return float(np.linalg.norm(V @ (V.conj().T @ f1) - f1))


def lift_eigenstate(state: EigenState, k: int, sites: Sequence[SiteUnitary] | None = None,
                    tol: float = 1e-10) -> TowerState:
    """Ψ = (ψ, Ū P_{⟦1⟧} ψ) / Γ_ψ^{1/2} with Γ_ψ = 1 + ⟨ψ, P_{⟦1⟧} ψ⟩.

    The level-1 coordinates of Ū P_{⟦1⟧} ψ are the amplitudes of ψ on ⟦1⟧.
    """
    psi = np.asarray(state.vector, dtype=complex)
    if psi.size != 2**k:
        raise DimensionError(f"state has size {psi.size}, expected {2**k}")
    a = psi[2 ** (k - 1):].copy()
    gamma = 1.0 + float(np.vdot(a, a).real)
    s = 1.0 / math.sqrt(gamma)
    ev = tower_evolution(k, state.phase, sites)
    vec = np.concatenate([psi, a]) * s
    res = float(np.linalg.norm(ev.apply(vec) - np.exp(1j * state.phase) * vec))
    if res > tol:
        raise ResidualError(f"lifted eigen residual {res:.3g} exceeds {tol}")
    return TowerState(psi * s, a * s, k, gamma, res, state.phase)


def tower_measures(Psi: TowerState, m: int) -> tuple[TowerTable, CylinderTable]:
    """(μ̃_k on (string, level), μ̄_k on strings) for strings of length m ≤ k-1."""
    k = Psi.k
    if m > k - 1:
        raise DepthError(f"m={m} exceeds k-1={k - 1}")
    w0 = (np.abs(Psi.phi0) ** 2).reshape(2**m, -1).sum(axis=1)
    w1 = (np.abs(Psi.a) ** 2).reshape(2**m, -1).sum(axis=1)
    mt = TowerTable(2, m, np.array([w0, w1]))
    return mt, project_measure(mt)


def tower_invariance_residual(Psi: TowerState) -> float:
    """max over m+n ≤ k-1 and |x| = m of |μ̄_k(⟦x⟧) − μ̄_k(T̄^{-n}⟦x⟧)|."""
    k = Psi.k
    tables = [tower_measures(Psi, L)[1].weights for L in range(k)]
    worst = 0.0
    for m in range(k):
        for n in range(1, k - m):
            pre = tables[m + n].reshape(2**n, 2**m).sum(axis=0)
            worst = max(worst, float(np.max(np.abs(pre - tables[m]))))
    return worst


@dataclass
class TowerAudit:
    k: int
    h_seq: list  # h_n(μ̄_k), n = 1..k-1
    h_tilde: list  # h_n(μ̃_k)
    prop13_bound: float
    prop14_margins: list
    abramov_gap: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def prop13_margin(self) -> float:
        return self.h_seq[-1] - self.prop13_bound

    @property
    def sandwich(self) -> list:
        return [t - b for t, b in zip(self.h_tilde, self.h_seq)]

    def passed(self, tol: float = 1e-10) -> bool:
        return (self.prop13_margin >= -tol and min(self.prop14_margins) >= -tol
                and all(-tol <= s <= math.log(2) + tol for s in self.sandwich))

    def to_dict(self) -> dict:
        return {"k": self.k, "h_seq": self.h_seq, "prop13_bound": self.prop13_bound,
                "abramov_gap": self.abramov_gap, "prop13_margin": self.prop13_margin,
                "prop14_min_margin": min(self.prop14_margins), "sandwich": self.sandwich,
                "passed": self.passed(), **self.extra}


def _branch_coded_entropy(psi: np.ndarray, k: int, n: int) -> float:
    """h_n over the branch partition {⟦0⟧, ⟦10⟧, ⟦11⟧} of μ_k(⟦x⟧) = ‖P_x ψ‖²."""
    prob = np.abs(psi) ** 2
    words = [()]
    for _ in range(n):
        words = [w + c for w in words for c in ((0,), (1, 0), (1, 1))]
    ws = []
    for w in words:
        if len(w) > k:
            raise DepthError("branch word longer than k")
        idx = 0
        for d in w:
            idx = idx * 2 + d
        ws.append(prob.reshape(2 ** len(w), -1)[idx].sum())
    return classical_entropy(np.array(ws))


def tower_entropy_bound_audit(Psi: TowerState) -> TowerAudit:
    """h_n(μ̄_k) for n ≤ k-1 against ``((k-1)/2 - 1) log 2`` and the subadditive bound."""
    k = Psi.k
    L = k - 1
    h_bar, h_tilde = [], []
    for n in range(1, L + 1):
        mt, mb = tower_measures(Psi, n)
        h_bar.append(classical_entropy(mb))
        h_tilde.append(mt.entropy())
    bound13 = ((k - 1) / 2 - 1) * math.log(2)
    rate = h_bar[-1] / L
    margins14 = [h_bar[n - 1] / n - (rate - n * math.log(2) / L) for n in range(1, L + 1)]
    # Abramov check on the base measure at the longest branch depth that fits in k digits
    psi = Psi.phi0 * math.sqrt(Psi.gamma)
    nb = max(1, (k - 1) // 2)
    hT = _branch_coded_entropy(psi, k, nb)
    gap = abs(hT / nb - Psi.gamma * h_bar[nb - 1] / nb)
    return TowerAudit(k, h_bar, h_tilde, bound13, margins14, gap)
