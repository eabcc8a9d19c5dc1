"""Quantum partitions, eigenstate entropies and the uncertainty-principle audits.

For a branch partition with quantized elements ``P_1 … P_l`` and evolution U,
the refined elements are ``P_ε = P_{ε_{n-1}}(n-1) ··· P_{ε_0}(0)`` where
``P(t) = U^{-t} P U^t``, and the reversed ones ``P*_ε`` use the opposite
factor order.  Telescoping gives ``P_ε = U^{-(n-1)} A_ε`` with
``A_ε = P_{ε_{n-1}} U P_{ε_{n-2}} ··· U P_{ε_0}``, which is what the code
actually builds.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .classical import CylinderTable, PiecewiseLinearMap, classical_entropy, classical_pressure
from .errors import ConvergenceError, DepthError, DimensionError
from .observables import QuantizedObservable, op_quantize, smooth_partition

__all__ = [
    "EigenState",
    "eigensolve",
    "QuantumPartition",
    "build_quantum_partition",
    "state_weights",
    "quantum_entropy",
    "quantum_pressure",
    "symbol_weights",
    "EUPReport",
    "eup_audit",
    "partition_eup_audit",
    "norm_bound_check",
    "invariance_defect",
    "bound_thm2",
    "bound_thm3",
    "ehrenfest_time",
]

MATERIALIZE_LIMIT = 2**28  # complex entries across all partition elements


@dataclass(frozen=True)
class EigenState:
    vector: np.ndarray
    phase: float
    residual: float

    @property
    def eigenvalue(self) -> complex:
        return complex(np.exp(1j * self.phase))


def _apply(U, v):
    return U.apply(v) if hasattr(U, "apply") else np.asarray(U) @ v


def _apply_adj(U, v):
    return U.apply_adjoint(v) if hasattr(U, "apply_adjoint") else np.asarray(U).conj().T @ v


def _dense(U) -> np.ndarray:
    return U.to_dense() if hasattr(U, "to_dense") else np.asarray(U, dtype=complex)


def eigensolve(U, tol: float = 1e-9) -> list[EigenState]:
    """Orthonormal eigenbasis of a unitary via the complex Schur form, sorted by phase."""
    mat = _dense(U)
    if mat.shape[0] > 4096:
        raise DimensionError("eigensolve is limited to N <= 4096")
    T, Z = scipy.linalg.schur(mat, output="complex")
    lam = np.diag(T)
    lam = lam / np.abs(lam)
    res = np.linalg.norm(mat @ Z - Z * lam[None, :], axis=0)
    bad = np.flatnonzero(res > tol)
    if bad.size:
        raise ConvergenceError(f"{bad.size} eigenpairs with residual above {tol}, worst {res.max():.3g}")
    phases = np.angle(lam)
    order = np.argsort(phases, kind="stable")
    return [EigenState(Z[:, i].copy(), float(phases[i]), float(res[i])) for i in order]


def ehrenfest_time(N: int, lam_max: int) -> int:
    return int(math.floor(math.log(N) / math.log(lam_max) + 1e-12))


@dataclass(frozen=True)
class QuantumPartition:
    """Refined quantum partition of the branch partition of a map.

    ``diagonals[a]`` is the diagonal of the quantized branch element P_a.
    """

    U: object
    slopes: tuple[int, ...]
    diagonals: np.ndarray
    n: int
    delta: float = 0.0
    flavor: str = "forward"

    @property
    def N(self) -> int:
        return self.diagonals.shape[1]

    @property
    def l(self) -> int:
        return len(self.slopes)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(str(a + 1) for a in range(self.l))

    def strings(self) -> list[tuple[int, ...]]:
        return list(itertools.product(range(self.l), repeat=self.n))

    def with_length(self, n: int, flavor: str | None = None) -> "QuantumPartition":
        return QuantumPartition(self.U, self.slopes, self.diagonals, n, self.delta, flavor or self.flavor)

    def weights_v(self, exponent: float = -0.5) -> np.ndarray:
        return symbol_weights(self.slopes, self.n, exponent)

    def core(self, eps: Sequence[int]) -> np.ndarray:
        """Dense ``A_ε = P_{ε_{n-1}} U ··· U P_{ε_0}``."""
        a = np.diag(self.diagonals[eps[0]]).astype(complex)
        for s in eps[1:]:
            a = self.diagonals[s][:, None] * _apply(self.U, a)
        return a

    def element(self, eps: Sequence[int]) -> np.ndarray:
        """Dense ``P_ε`` (forward flavor) or ``P*_ε`` (reversed flavor)."""
        a = self.core(eps)
        for _ in range(len(eps) - 1):
            a = _apply_adj(self.U, a)
        return a if self.flavor == "forward" else a.conj().T

    def elements(self) -> list[np.ndarray]:
        if self.l**self.n * self.N**2 > MATERIALIZE_LIMIT:
            raise DepthError(f"{self.l}^{self.n} elements of size {self.N} exceed the materialization limit")
        return [self.element(e) for e in self.strings()]

    def resolution_residual(self) -> float:
        """Max-norm residual of ``Σ_ε Q_ε* Q_ε = I`` for the partition's own flavor."""
        d = self.diagonals
        u = _dense(self.U)
        x = np.diag((d**2).sum(axis=0)).astype(complex)
        for _ in range(self.n - 1):
            # forward: X <- Σ_a P_a U* X U P_a ; reversed: Y <- Σ_a P_a U Y U* P_a
            ux = u.conj().T @ x @ u if self.flavor == "forward" else u @ x @ u.conj().T
            x = sum(d[a][:, None] * ux * d[a][None, :] for a in range(self.l))
        return float(np.max(np.abs(x - np.eye(self.N))))


def build_quantum_partition(U, m: PiecewiseLinearMap, n: int, delta: float = 0.0,
                            flavor: str = "forward") -> QuantumPartition:
    """Quantum partition refined n times from the branch partition of ``m``."""
    if flavor not in ("forward", "reversed"):
        raise ValueError("flavor must be 'forward' or 'reversed'")
    if n < 1:
        raise DepthError("n must be at least 1")
    N = U.N if hasattr(U, "N") else np.asarray(U).shape[0]
    sp = smooth_partition(m.branches, delta)
    if delta == 0:
        diags = np.array([op_quantize(chi, N).diagonal for chi in sp.functions])
    else:
        diags = np.array([q.diagonal for q in sp.quantize(N)])
    return QuantumPartition(U, m.slopes, diags, n, float(delta), flavor)


def symbol_weights(slopes: Sequence[int], n: int, exponent: float = -0.5) -> np.ndarray:
    """``v_ε = Π_i Λ_{ε_i}^{exponent}`` over all branch strings, lexicographic."""
    base = np.asarray(slopes, dtype=float) ** exponent
    v = np.ones(1)
    for _ in range(n):
        v = np.outer(v, base).ravel()
    return v


def _forward_vectors(part: QuantumPartition, psi: np.ndarray) -> np.ndarray:
    """Columns ``A_ε ψ`` for all strings ε, lexicographic."""
    d = part.diagonals
    w = d.T * psi[:, None]
    for _ in range(part.n - 1):
        uw = _apply(part.U, w)
        w = (uw[:, :, None] * d.T[:, None, :]).reshape(part.N, -1)
    return w


def _reversed_vectors(part: QuantumPartition, psi: np.ndarray) -> np.ndarray:
    """Columns ``P*_ε ψ`` for all strings ε, lexicographic."""
    d = part.diagonals
    z = psi.astype(complex)
    for _ in range(part.n - 1):
        z = _apply(part.U, z)
    z = d.T * z[:, None]
    for _ in range(part.n - 1):
        uz = _apply_adj(part.U, z)
        z = (d.T[:, :, None] * uz[:, None, :]).reshape(part.N, -1)
    return z


def state_weights(part: QuantumPartition, psi: np.ndarray) -> CylinderTable:
    """Table of ``‖P_ε ψ‖²`` (forward) or ``‖P*_ε ψ‖²`` (reversed)."""
    psi = np.asarray(psi, dtype=complex)
    vecs = _forward_vectors(part, psi) if part.flavor == "forward" else _reversed_vectors(part, psi)
    w = np.sum(np.abs(vecs) ** 2, axis=0)
    return CylinderTable(part.labels, part.n, w)


def quantum_entropy(table) -> float:
    return classical_entropy(table)


def quantum_pressure(table, v) -> float:
    return classical_pressure(table, v)


@dataclass(frozen=True)
class EUPReport:
    n: int
    lhs: float
    rhs: float
    pairs_max: dict

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    def to_dict(self) -> dict:
        return {"n": self.n, "lhs": self.lhs, "rhs": self.rhs, "margin": self.margin,
                "pairs_max": self.pairs_max}


def _spec_norm(m: np.ndarray) -> float:
    rows = np.flatnonzero(np.any(m != 0, axis=1))
    cols = np.flatnonzero(np.any(m != 0, axis=0))
    if rows.size == 0 or cols.size == 0:
        return 0.0
    m = m[np.ix_(rows, cols)]
    g = m @ m.conj().T if rows.size <= cols.size else m.conj().T @ m
    return math.sqrt(max(float(np.linalg.eigvalsh(g)[-1]), 0.0))


def _pressure_of(vectors_or_weights, v) -> float:
    return classical_pressure(np.asarray(vectors_or_weights), v)


def eup_audit(pi_ops: Sequence[np.ndarray], tau_ops: Sequence[np.ndarray], v, w, isometry,
              psi: np.ndarray, n: int = 0) -> EUPReport:
    """Generic entropic uncertainty audit for explicit operator families.

    lhs = p_{π,v}(ψ) + p_{τ,w}(𝒰ψ); rhs = -2 log sup_{j,k} v_j w_k ‖π_j 𝒰 τ_k*‖.
    """
    iso = _dense(isometry)
    psi = np.asarray(psi, dtype=complex)
    upsi = iso @ psi
    mu = np.array([np.linalg.norm(p @ psi) ** 2 for p in pi_ops])
    nu = np.array([np.linalg.norm(t @ upsi) ** 2 for t in tau_ops])
    lhs = classical_pressure(mu, v) + classical_pressure(nu, w)
    best, arg = -1.0, (0, 0, 0.0)
    for j, p in enumerate(pi_ops):
        pu = p @ iso
        for k, t in enumerate(tau_ops):
            nrm = _spec_norm(pu @ np.asarray(t).conj().T)
            val = v[j] * w[k] * nrm
            if val > best:
                best, arg = val, (j, k, nrm)
    rhs = -2 * math.log(best)
    return EUPReport(n, float(lhs), float(rhs), {"eps": arg[0], "eps_prime": arg[1], "norm": arg[2]})


def _label(part: QuantumPartition, idx: int) -> str:
    digits = []
    for _ in range(part.n):
        idx, r = divmod(idx, part.l)
        digits.append(part.labels[r])
    return "".join(reversed(digits))


def partition_eup_audit(part: QuantumPartition, states: Sequence, exponent: float = -0.5,
                        flavor: str = "forward") -> tuple[float, dict, list[EUPReport]]:
    """EUP with π = {P_ε}, τ = {P*_ε}, 𝒰 = U^n (or the roles swapped).

    ``flavor='forward'`` uses π = forward elements; ``'reversed'`` swaps the
    two families.  The right side is computed once and reused for all states.
    Returns (rhs, pairs_max, reports).
    """
    n, U = part.n, part.U
    strings = part.strings()
    cores = [part.core(e) for e in strings]
    v = part.weights_v(exponent)
    if flavor == "forward":
        # ‖P_ε U^n P_ε'‖ = ‖A_ε U A_ε'‖
        lefts = cores
        rights = [_apply(U, a) for a in cores]
    else:
        # ‖P*_ε U^n P*_ε'‖ = ‖A_ε* U^{2n-1} A_ε'*‖
        lefts = [a.conj().T for a in cores]
        rights = []
        for a in cores:
            b = a.conj().T
            for _ in range(2 * n - 1):
                b = _apply(U, b)
            rights.append(b)
    best, arg = -1.0, None
    for i, left in enumerate(lefts):
        for j, right in enumerate(rights):
            nrm = _spec_norm(left @ right)
            val = v[i] * v[j] * nrm
            if val > best:
                best, arg = val, (i, j, nrm)
    rhs = -2 * math.log(best)
    pairs = {"eps": _label(part, arg[0]), "eps_prime": _label(part, arg[1]), "norm": arg[2]}
    fwd = part.with_length(n, "forward")
    rev = part.with_length(n, "reversed")
    reports = []
    for st in states:
        psi = st.vector if isinstance(st, EigenState) else np.asarray(st)
        upsi = psi.astype(complex)
        for _ in range(n):
            upsi = _apply(U, upsi)
        if flavor == "forward":
            mu, nu = state_weights(fwd, psi), state_weights(rev, upsi)
        else:
            mu, nu = state_weights(rev, psi), state_weights(fwd, upsi)
        lhs = classical_pressure(mu, v) + classical_pressure(nu, v)
        reports.append(EUPReport(n, lhs, rhs, pairs))
    return rhs, pairs, reports


def norm_bound_check(U, part: QuantumPartition, eps: Sequence[int]) -> tuple[float, float]:
    """Measured ``‖U P_{ε_0} U P_{ε_1} ··· U P_{ε_{n-1}}‖`` and its a-priori bound."""
    eps = list(eps)
    d = part.diagonals
    support = np.flatnonzero(d[eps[-1]])
    m = np.zeros((part.N, support.size), dtype=complex)
    m[support, np.arange(support.size)] = d[eps[-1]][support]
    for s in reversed(eps[:-1]):
        m = d[s][:, None] * _apply(U, m)
    measured = _spec_norm(m)
    lam = np.array([part.slopes[s] for s in eps], dtype=float)
    c = 2 * math.sqrt(max(part.slopes))
    bound = math.exp(len(eps) * c * part.delta) * math.sqrt(part.N) * float(np.prod(lam ** -0.5))
    return measured, bound


def invariance_defect(psi: np.ndarray, part: QuantumPartition, eps: Sequence[int], n: int) -> float:
    """``|μ̂(⟦ε⟧) - Σ_{|ε'|=n} μ̂(⟦ε'ε⟧)|`` for the partition's flavor."""
    eps = list(eps)
    if n == 0:
        return 0.0
    m = len(eps)
    short = state_weights(part.with_length(m), psi)
    long = state_weights(part.with_length(n + m), psi)
    idx = 0
    for s in eps:
        idx = idx * part.l + s
    tail = long.weights.reshape(-1, part.l**m)[:, idx].sum()
    return float(abs(short.weights[idx] - tail))


def _branch_mu(mu, m: PiecewiseLinearMap) -> np.ndarray:
    w = mu.weights if isinstance(mu, CylinderTable) else np.asarray(mu, dtype=float)
    if w.size != m.n_branches:
        raise DimensionError(f"expected {m.n_branches} branch weights, got {w.size}")
    return w


def bound_thm2(mu, m: PiecewiseLinearMap) -> float:
    """``Σ_j μ(I_j) log Λ_j - ½ log Λ_max``."""
    w = _branch_mu(mu, m)
    return float(np.dot(w, np.log(m.slopes)) - 0.5 * math.log(m.lam_max))


def bound_thm3(mu, m: PiecewiseLinearMap) -> float:
    """``½ Σ_j μ(I_j) log Λ_j`` for maps of the T_p class."""
    if m.uniform_base is None:
        raise ValueError("the sharper bound applies to maps with slopes p^{n_j}")
    w = _branch_mu(mu, m)
    return float(0.5 * np.dot(w, np.log(m.slopes)))
