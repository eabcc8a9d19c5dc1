"""Quantized observables, smooth partitions of unity and Egorov-type defects."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .classical import PiecewiseLinearMap, cylinder_interval
from .errors import AlignmentError, ConvergenceError, DeltaTooLargeError, IntegrationError

__all__ = [
    "Observable",
    "constant",
    "identity",
    "sine",
    "indicator",
    "hat",
    "parse_observable",
    "QuantizedObservable",
    "op_quantize",
    "SmoothPartition",
    "smooth_partition",
    "operator_norm",
    "egorov_defect",
    "exact_egorov_check",
    "commutator_defect",
    "preimage",
]

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


@dataclass(frozen=True)
class Observable:
    """A function on [0, 1], smooth between the listed breakpoints."""

    fn: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple[Fraction, ...] = ()
    name: str = "f"
    lipschitz: float | None = None

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))

    def squared(self) -> "Observable":
        lip = None if self.lipschitz is None else 2 * self.lipschitz * self.sup()
        return Observable(lambda x: self.fn(x) ** 2, self.breakpoints, f"({self.name})^2", lip)

    def sup(self) -> float:
        grid = np.linspace(0.0, 1.0, 10001)
        return float(np.max(np.abs(self(grid))))


def constant(c: float = 1.0) -> Observable:
    return Observable(lambda x: np.full_like(x, c, dtype=float), (), f"const {c}", 0.0)


def identity() -> Observable:
    return Observable(lambda x: x, (), "x", 1.0)


def sine() -> Observable:
    return Observable(lambda x: np.sin(2 * np.pi * x), (), "sin", 2 * np.pi)


def indicator(a, b) -> Observable:
    a, b = Fraction(a), Fraction(b)
    fa, fb = float(a), float(b)
    return Observable(lambda x: np.asarray((np.asarray(x) >= fa) & (np.asarray(x) <= fb), dtype=float),
                      tuple(e for e in (a, b) if 0 < e < 1), f"indicator {a} {b}", None)


def hat() -> Observable:
    return Observable(lambda x: 1 - np.abs(2 * x - 1), (Fraction(1, 2),), "hat", 2.0)


def parse_observable(text: str) -> Observable:
    """Parse a named built-in: ``const [c]``, ``x``, ``sin``, ``hat``, ``indicator a b``."""
    parts = text.split()
    if not parts:
        raise ValueError("empty observable string")
    head = parts[0]
    if head == "const":
        return constant(float(parts[1]) if len(parts) > 1 else 1.0)
    if head == "x":
        return identity()
    if head == "sin":
        return sine()
    if head == "hat":
        return hat()
    if head == "indicator" and len(parts) == 3:
        return indicator(Fraction(parts[1]), Fraction(parts[2]))
    raise ValueError(f"unknown observable {text!r}")


@dataclass(frozen=True)
class QuantizedObservable:
    diagonal: np.ndarray
    source: str = ""
    delta: float = 0.0

    @property
    def N(self) -> int:
        return self.diagonal.size

    def to_sparse(self) -> sparse.dia_matrix:
        return sparse.diags(self.diagonal)

    def expectation(self, psi: np.ndarray) -> complex:
        return complex(np.vdot(psi, self.diagonal * psi))


def preimage(m: PiecewiseLinearMap, pieces, steps: int = 1):
    """Preimage under ``T^steps`` of a union of closed intervals, as intervals."""
    out = [(Fraction(a), Fraction(b)) for a, b in pieces]
    for _ in range(steps):
        nxt = []
        for lam, off in zip(m.slopes, m.offsets):
            for a, b in out:
                nxt.append(((a - off) / lam, (b - off) / lam))
        out = sorted(nxt)
    return out


def _cell_pieces(m: PiecewiseLinearMap | None, N: int, n: int):
    """Pieces (lo, hi, jac, cell) with ∫_{E_cell} f∘T^n = Σ jac ∫_{lo}^{hi} f."""
    pieces = [(Fraction(i, N), Fraction(i + 1, N), Fraction(1), i) for i in range(N)]
    if n == 0:
        return pieces
    ends = m.endpoints
    for _ in range(n):
        nxt = []
        for lo, hi, jac, cell in pieces:
            cuts = [lo] + [e for e in ends if lo < e < hi] + [hi]
            for a, b in zip(cuts[:-1], cuts[1:]):
                j = m.branch_index(a)
                lam, off = m.slopes[j], m.offsets[j]
                nxt.append((lam * a + off, lam * b + off, jac / lam, cell))
        pieces = nxt
    return pieces


def _cell_integrals(f: Observable, pieces, N: int) -> np.ndarray:
    lo, hi, jac, cell = [], [], [], []
    bps = sorted(f.breakpoints)
    for a, b, w, c in pieces:
        cuts = [a] + [e for e in bps if a < e < b] + [b]
        for u, v in zip(cuts[:-1], cuts[1:]):
            lo.append(float(u))
            hi.append(float(v))
            jac.append(float(w))
            cell.append(c)
    lo, hi, jac = np.array(lo), np.array(hi), np.array(jac)
    half = (hi - lo) / 2
    mid = (hi + lo) / 2
    x = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = f(x)
    if not np.all(np.isfinite(vals)):
        raise IntegrationError(f"non-finite samples of {f.name}")
    integ = (vals * _GL_W[None, :]).sum(axis=1) * half * jac
    return np.bincount(np.array(cell), weights=integ, minlength=N)


def op_quantize(f: Observable, N: int, m: PiecewiseLinearMap | None = None,
                n: int = 0) -> QuantizedObservable:
    """Diagonal operator of cell averages of ``f ∘ T^n`` on N cells.

    ``Op(f)_ii = N ∫_{E_i} f``; the composed form splits every cell exactly
    at the rational preimages of branch endpoints before integrating.
    """
    if n and m is None:
        raise ValueError("composition with T^n needs the map")
    diag = N * _cell_integrals(f, _cell_pieces(m, N, n), N)
    name = f.name if n == 0 else f"{f.name} o T^{n}"
    return QuantizedObservable(diag, name)


@dataclass(frozen=True)
class SmoothPartition:
    intervals: tuple[tuple[Fraction, Fraction], ...]
    delta: float
    functions: tuple[Observable, ...]

    def quantize(self, N: int) -> list[QuantizedObservable]:
        """Diagonal elements ``sqrt(Op(χ_i²))``, which square-sum to the identity."""
        out = []
        for chi in self.functions:
            d = op_quantize(chi.squared(), N).diagonal
            out.append(QuantizedObservable(np.sqrt(np.clip(d, 0.0, None)), chi.name, self.delta))
        return out


def smooth_partition(intervals: Sequence[tuple], delta: float) -> SmoothPartition:
    """Functions χ_i with Σ χ_i² = 1, equal to 1 on each interval shrunk by δ/2.

    Adjacent χ's cross over on a window of width δ centred at the shared
    endpoint using the cos/sin pair, so the squares sum to one exactly.
    """
    ivs = tuple((Fraction(a), Fraction(b)) for a, b in intervals)
    if ivs[0][0] != 0 or ivs[-1][1] != 1 or any(ivs[i][1] != ivs[i + 1][0] for i in range(len(ivs) - 1)):
        raise ValueError("intervals must tile [0, 1] in order")
    delta = float(delta)
    if delta < 0 or (delta > 0 and delta >= min(float(b - a) for a, b in ivs) / 2):
        raise DeltaTooLargeError(f"delta={delta} too large for the partition")
    funcs = []
    for i, (a, b) in enumerate(ivs):
        fa, fb = float(a), float(b)
        left_ramp = delta > 0 and i > 0
        right_ramp = delta > 0 and i < len(ivs) - 1

        def chi(x, fa=fa, fb=fb, lr=left_ramp, rr=right_ramp):
            x = np.asarray(x, dtype=float)
            y = ((x >= fa) & (x < fb)).astype(float) if fb < 1 else ((x >= fa) & (x <= fb)).astype(float)
            if lr:
                t = np.clip((x - (fa - delta / 2)) / delta, 0.0, 1.0)
                inside = (x >= fa - delta / 2) & (x <= fa + delta / 2)
                y = np.where(inside, np.sin(np.pi * t / 2), y)
            if rr:
                t = np.clip((x - (fb - delta / 2)) / delta, 0.0, 1.0)
                inside = (x >= fb - delta / 2) & (x <= fb + delta / 2)
                y = np.where(inside, np.cos(np.pi * t / 2), y)
            return y

        if delta > 0:
            half = Fraction(delta / 2)
            bps = [e for e in ((a - half, a + half) if left_ramp else ()) +
                   ((b - half, b + half) if right_ramp else ())]
            lip = math.pi / (2 * delta)
        else:
            bps = [e for e in (a, b) if 0 < e < 1]
            lip = None
        funcs.append(Observable(chi, tuple(sorted(bps)), f"chi_{i + 1}", lip))
    return SmoothPartition(ivs, delta, tuple(funcs))


def operator_norm(matvec, dim: int, adjoint=None, tol: float = 1e-10, maxiter: int = 500,
                  seed: int = 0) -> float:
    """Largest singular value of a matrix-free operator.

    Power iteration on the Gram operator A*A first; when it has not met the
    relative tolerance after ``maxiter`` steps (near-degenerate top of the
    spectrum), the estimate is finished with Lanczos on the same operator.
    """
    adjoint = adjoint or matvec
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(maxiter):
        w = adjoint(matvec(v))
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        new = math.sqrt(nrm)
        v = w / nrm
        if abs(new - est) <= tol * max(new, 1e-300):
            return new
        est = new
    low = float(np.linalg.norm(matvec(v)))
    if dim <= 2:
        raise ConvergenceError(f"power iteration stalled; norm in [{low:.12g}, {est:.12g}]")
    gram = spla.LinearOperator((dim, dim), matvec=lambda x: adjoint(matvec(x)), dtype=complex)
    try:
        top = spla.eigsh(gram, k=1, which="LA", v0=v, tol=tol, maxiter=20 * dim,
                         return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError(f"norm not converged; bracket [{low:.12g}, {est:.12g}]") from exc
    return max(math.sqrt(max(float(top[0]), 0.0)), low)


def _sparse_power(U, n: int) -> sparse.csr_matrix:
    s = U.to_sparse()
    out = sparse.identity(U.N, dtype=complex, format="csr")
    for _ in range(n):
        out = (s @ out).tocsr()
    return out


def _egorov_operator(U, f_diag: np.ndarray, n: int) -> sparse.csr_matrix:
    un = _sparse_power(U, n)
    return (un.conj().T @ sparse.diags(f_diag) @ un).tocsr()


def egorov_defect(U, m: PiecewiseLinearMap, f: Observable, n: int, **kw) -> float:
    """Operator norm of ``U^{-n} Op(f) U^n - Op(f∘T^n)``."""
    N = U.N
    a = _egorov_operator(U, op_quantize(f, N).diagonal, n) - sparse.diags(op_quantize(f, N, m, n).diagonal)
    a = a.tocsr()
    return operator_norm(lambda v: a @ v, N, **kw)


def commutator_defect(U, f: Observable, g: Observable, n: int, **kw) -> float:
    """Operator norm of ``[U^{-n} Op(f) U^n, Op(g)]``."""
    N = U.N
    a = _egorov_operator(U, op_quantize(f, N).diagonal, n)
    g_op = sparse.diags(op_quantize(g, N).diagonal)
    c = (a @ g_op - g_op @ a).tocsr()
    return operator_norm(lambda v: c @ v, N, adjoint=lambda v: c.conj().T @ v, **kw)


def _as_intervals(X, p: int | None):
    if isinstance(X, str):
        if p is None:
            raise ValueError("cylinder strings need the base p")
        return [cylinder_interval(p, X)]
    if isinstance(X, tuple) and len(X) == 2 and not isinstance(X[0], tuple):
        return [(Fraction(X[0]), Fraction(X[1]))]
    return [(Fraction(a), Fraction(b)) for a, b in X]


def exact_egorov_check(U, m: PiecewiseLinearMap, X, n: int, strict: bool = True) -> float:
    """Max-norm residual of ``U^{-n} P_X U^n = P_{T^{-n}X}``.

    X is a cylinder string over the map's base, an interval, or a list of
    intervals.  With ``strict`` every preimage endpoint must lie on the grid
    (AlignmentError otherwise); without it the right side is ``Op(χ_{T^{-n}X})``
    and the residual is reported regardless.
    """
    N = U.N
    ivs = _as_intervals(X, m.uniform_base)
    grid_ok = True
    for j in range(n + 1):
        for a, b in preimage(m, ivs, j):
            if (a * N).denominator != 1 or (b * N).denominator != 1:
                grid_ok = False
                if strict:
                    raise AlignmentError(f"endpoint of T^-{j}X leaves the 1/{N} grid")

    def proj(pieces):
        if grid_ok:
            d = np.zeros(N)
            for a, b in pieces:
                d += _grid_indicator(a, b, N)
            return d
        return _cell_overlap(pieces, N)

    lhs = _egorov_operator(U, proj(ivs), n).toarray()
    rhs = proj(preimage(m, ivs, n))
    lhs[np.diag_indices(N)] -= rhs
    return float(np.max(np.abs(lhs)))


def _cell_overlap(pieces, N: int) -> np.ndarray:
    """Cell averages of the indicator of a union of disjoint intervals: N·|E_i ∩ [a, b]|."""
    ab = np.array([[float(a), float(b)] for a, b in pieces]).reshape(-1, 2)
    lo = np.arange(N) / N
    hi = np.arange(1, N + 1) / N
    ov = np.minimum(ab[:, 1:2], hi[None, :]) - np.maximum(ab[:, 0:1], lo[None, :])
    return N * np.clip(ov, 0.0, None).sum(axis=0)


def _grid_indicator(a: Fraction, b: Fraction, N: int) -> np.ndarray:
    d = np.zeros(N)
    d[int(a * N):int(b * N)] = 1.0
    return d
