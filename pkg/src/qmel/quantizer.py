"""Unitary quantizations of transfer matrices.

A unitary U quantizes the transfer matrix B when ``|U(i, j)|² = B(j, i)``.
Three constructions are provided: block DFT matrices for maps of uniform
slope, the composition ``U = Ū · U_BD`` for maps that split into a uniform
part and a block-diagonal part, and tensorial operators for T_p maps acting
on ``(C^p)^{⊗k}`` as a symbol shift followed by single-site flat unitaries.
Basis state ``|x_1 … x_k⟩`` is grid cell ``Σ x_i p^{k-i}``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .classical import PiecewiseLinearMap, TransferMatrix, decompose
from .errors import DepthError, DimensionError, NotTpError, SizeError

__all__ = [
    "SiteUnitary",
    "dft",
    "UnitaryOperator",
    "TensorialUnitary",
    "quantize_uniform",
    "quantize_general",
    "tensorial_uniform",
    "tensorial_nonuniform",
    "QuantizationReport",
    "verify_quantization",
    "load_site_unitary",
    "save_site_unitary",
    "export_operator_csv",
]

DENSE_LIMIT = 2**14


@dataclass(frozen=True)
class SiteUnitary:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 2:
            raise DimensionError(f"site unitary must be p x p with p >= 2, got {m.shape}")
        object.__setattr__(self, "matrix", m)
        if self.unitarity_residual > 1e-12:
            raise ValueError(f"matrix is not unitary (residual {self.unitarity_residual:.3g})")

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def unitarity_residual(self) -> float:
        m = self.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))

    @property
    def flat(self) -> bool:
        return bool(np.allclose(np.abs(self.matrix), self.p**-0.5, atol=1e-12, rtol=0))

    def phased(self, phi: float) -> "SiteUnitary":
        return SiteUnitary(np.exp(1j * phi) * self.matrix)


def dft(p: int) -> SiteUnitary:
    """Discrete Fourier transform ``p^{-1/2} exp(2πi l m / p)``."""
    if p < 2:
        raise ValueError("p must be at least 2")
    l = np.arange(p)
    return SiteUnitary(np.exp(2j * np.pi * np.outer(l, l) / p) / math.sqrt(p))


class UnitaryOperator:
    """Unitary on C^N stored as a sparse matrix."""

    def __init__(self, matrix):
        self._sparse = sparse.csr_matrix(matrix, dtype=complex)
        self.N = self._sparse.shape[0]

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self._sparse @ v

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        return self._sparse.conj().T @ v

    def to_sparse(self) -> sparse.csr_matrix:
        return self._sparse

    def to_dense(self) -> np.ndarray:
        if self.N > DENSE_LIMIT:
            raise SizeError(f"dense materialization capped at N={DENSE_LIMIT}")
        return self.to_sparse().toarray()

    def unitarity_residual(self) -> float:
        s = self.to_sparse()
        d = (s.conj().T @ s - sparse.identity(self.N, format="csr")).tocsr()
        return float(np.max(np.abs(d.data))) if d.nnz else 0.0


@dataclass(frozen=True)
class _Branch:
    code: tuple[int, ...]
    tail: np.ndarray  # amplitudes of the n output digits, most significant first


class TensorialUnitary(UnitaryOperator):
    """Matrix-free tensorial operator on (C^p)^{⊗k}.

    For ``x`` in the branch with digit code ``c`` of length n the rule is
    ``|x⟩ ↦ |x_{n+1} … x_k⟩ ⊗ 𝐔_n|x_n⟩ ⊗ … ⊗ 𝐔_1|x_1⟩``.
    """

    def __init__(self, p: int, k: int, codes: Sequence[Sequence[int]],
                 sites: Sequence[SiteUnitary]):
        nmax = max(len(c) for c in codes)
        if k < nmax:
            raise DepthError(f"k={k} smaller than the longest branch code {nmax}")
        if len(sites) < nmax:
            raise ValueError(f"need {nmax} site unitaries, got {len(sites)}")
        if any(s.p != p for s in sites):
            raise DimensionError("site unitaries must all be p x p")
        self.p, self.k, self.N = p, k, p**k
        self.sites = tuple(sites)
        self.codes = tuple(tuple(c) for c in codes)
        branches = []
        for c in self.codes:
            tail = np.ones(1, dtype=complex)
            for i in reversed(range(len(c))):
                tail = np.kron(tail, self.sites[i].matrix[:, c[i]])
            branches.append(_Branch(tuple(c), tail))
        self._branches = branches
        self._cache = None

    def _layout(self, br: _Branch):
        n = len(br.code)
        c = 0
        for d in br.code:
            c = c * self.p + d
        rest = self.p ** (self.k - n)
        return n, c, rest

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        flat = v.reshape(self.N, -1)
        out = np.zeros((self.N, flat.shape[1]), dtype=complex)
        for br in self._branches:
            n, c, rest = self._layout(br)
            block = flat[c * rest:(c + 1) * rest]
            out.reshape(rest, self.p**n, -1)[...] += block[:, None, :] * br.tail[None, :, None]
        return out.reshape(v.shape)

    def apply_adjoint(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        flat = v.reshape(self.N, -1)
        out = np.zeros((self.N, flat.shape[1]), dtype=complex)
        for br in self._branches:
            n, c, rest = self._layout(br)
            out[c * rest:(c + 1) * rest] = np.einsum(
                "rtm,t->rm", flat.reshape(rest, self.p**n, -1), br.tail.conj())
        return out.reshape(v.shape)

    def to_sparse(self) -> sparse.csr_matrix:
        if self._cache is None:
            rows, cols, data = [], [], []
            for br in self._branches:
                n, c, rest = self._layout(br)
                r = np.arange(rest)
                t = np.arange(self.p**n)
                rows.append((r[:, None] * self.p**n + t[None, :]).ravel())
                cols.append(np.repeat(c * rest + r, t.size))
                data.append(np.tile(br.tail, rest))
            m = sparse.csr_matrix(
                (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.N, self.N))
            object.__setattr__(self, "_cache", m)
        return self._cache


def _uniform_blocks(p: int, N: int, offset: int = 0, total: int | None = None):
    """COO triplets of the block-DFT quantization of slope p on N cells.

    Column ``b + t N/p`` goes to rows ``p b + r`` with amplitude DFT_p(r, t);
    local indices increase with the cell index.
    """
    f = dft(p).matrix if p > 1 else np.ones((1, 1), dtype=complex)
    m = N // p
    b = np.arange(m)
    r, t = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    rows = (p * b[:, None, None] + r[None]).ravel() + offset
    cols = (b[:, None, None] + t[None] * m).ravel() + offset
    data = np.broadcast_to(f[r, t][None], (m, p, p)).ravel()
    return rows, cols, data


def _is_power(N: int, base: int) -> bool:
    if base < 2:
        return N == 1
    while N % base == 0:
        N //= base
    return N == 1


def quantize_uniform(m: PiecewiseLinearMap, N: int) -> UnitaryOperator:
    """Block-DFT quantization of a map whose slopes all equal p, on N = p^k cells."""
    if not m.is_uniform:
        raise ValueError(f"slopes {m.slopes} are not uniform")
    p = m.slopes[0]
    if N < p or not _is_power(N, p):
        raise SizeError(f"N={N} is not a power of p={p}")
    rows, cols, data = _uniform_blocks(p, N)
    return UnitaryOperator(sparse.csr_matrix((data, (rows, cols)), shape=(N, N)))


def quantize_general(m: PiecewiseLinearMap, N: int) -> UnitaryOperator:
    """Composition quantization ``U = Ū · U_BD`` on N = N_0^k cells."""
    dec = decompose(m)
    if not _is_power(N, dec.n0):
        raise SizeError(f"N={N} is not a power of N_0={dec.n0}")
    rows, cols, data = _uniform_blocks(dec.p, N)
    ubar = sparse.csr_matrix((data, (rows, cols)), shape=(N, N))
    parts = []
    for (lo, hi), lb in zip(dec.blocks, dec.lambda_bar):
        s, e = int(lo * N), int(hi * N)
        parts.append(_uniform_blocks(lb, e - s, offset=s))
    rows, cols, data = (np.concatenate(x) for x in zip(*parts))
    ubd = sparse.csr_matrix((data, (rows, cols)), shape=(N, N))
    return UnitaryOperator(ubar @ ubd)


def tensorial_uniform(site: SiteUnitary, k: int) -> TensorialUnitary:
    """Shift-type operator ``Ū|x⟩ = |x_2 … x_k⟩ ⊗ 𝐔|x_1⟩``."""
    if not site.flat:
        raise ValueError("site unitary must be flat")
    return TensorialUnitary(site.p, k, [(d,) for d in range(site.p)], [site])


def tensorial_nonuniform(m: PiecewiseLinearMap, sites: Sequence[SiteUnitary],
                         k: int) -> TensorialUnitary:
    """Tensorial quantization of a T_p map with sites 𝐔_1 … 𝐔_{n_max}."""
    codes = m.codes
    p = m.uniform_base
    if isinstance(sites, SiteUnitary):
        sites = [sites] * max(len(c) for c in codes)
    if any(not s.flat for s in sites):
        raise ValueError("site unitaries must be flat")
    if any(s.p != p for s in sites):
        raise NotTpError(f"site dimension does not match the base p={p}")
    return TensorialUnitary(p, k, codes, sites)


@dataclass(frozen=True)
class QuantizationReport:
    bmatrix_residual: float
    unitarity_residual: float
    support_match: bool

    def passed(self, tol_b: float = 1e-13, tol_u: float = 1e-12) -> bool:
        return self.support_match and self.bmatrix_residual < tol_b and self.unitarity_residual < tol_u


def verify_quantization(U, B: TransferMatrix) -> QuantizationReport:
    """Compare ``|U(i, j)|²`` with ``B(j, i)`` and measure unitarity."""
    op = U if isinstance(U, UnitaryOperator) else UnitaryOperator(U)
    if op.N != B.N:
        raise DimensionError(f"operator of size {op.N} vs transfer matrix of size {B.N}")
    s = op.to_sparse()
    mod2 = s.multiply(s.conj()).real.tocsr()
    mod2.eliminate_zeros()
    bt = B.to_sparse().T.tocsr()
    diff = (mod2 - bt).tocsr()
    res_b = float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
    pat_u = (abs(mod2) > 1e-14).astype(np.int8)
    pat_b = (bt != 0).astype(np.int8)
    support = (pat_u != pat_b).nnz == 0
    return QuantizationReport(res_b, op.unitarity_residual(), support)


def load_site_unitary(path) -> SiteUnitary:
    data = json.loads(Path(path).read_text())
    p = int(data["p"])
    entries = np.array(data["entries"], dtype=float)
    if entries.shape != (p * p, 2):
        raise DimensionError(f"expected {p * p} [re, im] pairs")
    return SiteUnitary((entries[:, 0] + 1j * entries[:, 1]).reshape(p, p))


def save_site_unitary(site: SiteUnitary, path) -> None:
    entries = [[float(z.real), float(z.imag)] for z in site.matrix.ravel()]
    Path(path).write_text(json.dumps({"p": site.p, "entries": entries}))


def export_operator_csv(U: UnitaryOperator) -> str:
    coo = U.to_sparse().tocoo()
    order = np.lexsort((coo.col, coo.row))
    lines = ["row,col,re,im"]
    for i in order:
        z = coo.data[i]
        if z != 0:
            lines.append(f"{coo.row[i]},{coo.col[i]},{z.real:.17g},{z.imag:.17g}")
    return "\n".join(lines) + "\n"
