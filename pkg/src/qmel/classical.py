"""Piecewise-linear expanding maps of the unit interval in exact arithmetic.

The map with integer slopes ``Λ_1, ..., Λ_l`` (with ``Σ 1/Λ_j = 1``) sends
the branch ``I_j = [a_j, a_j + 1/Λ_j]`` affinely onto ``[0, 1]`` through
``T(x) = Λ_j x + b_j``.  Everything geometric (branches, grid cells,
transfer matrices, cylinders) is kept in :class:`fractions.Fraction`;
entropies and other functionals of measures are floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import xlogy

from .errors import (
    DigitRangeError,
    InconsistentMeasureError,
    NegativeWeightError,
    NotDecomposableError,
    NotTpError,
    PartitionAlignmentError,
    SlopeRangeError,
    SlopeSumError,
)

__all__ = [
    "PiecewiseLinearMap",
    "build_map",
    "apply_map",
    "TransferMatrix",
    "transfer_matrix",
    "BlockDecomposition",
    "decompose",
    "cylinder_interval",
    "CylinderTable",
    "classical_entropy",
    "classical_pressure",
    "CylinderMeasure",
    "AutomatonMeasure",
    "FunctionMeasure",
    "bernoulli_measure",
    "lebesgue_measure",
    "KSEstimate",
    "ks_entropy_estimate",
]


def _integer_log(value: int, base: int) -> int | None:
    """Return n with base**n == value, or None."""
    n = 0
    while value % base == 0:
        value //= base
        n += 1
    return n if value == 1 else None


@dataclass(frozen=True)
class PiecewiseLinearMap:
    slopes: tuple[int, ...]
    offsets: tuple[Fraction, ...]
    branches: tuple[tuple[Fraction, Fraction], ...]
    uniform_base: int | None = None
    exponents: tuple[int, ...] | None = None

    @property
    def n_branches(self) -> int:
        return len(self.slopes)

    @property
    def lam_max(self) -> int:
        return max(self.slopes)

    @property
    def endpoints(self) -> tuple[Fraction, ...]:
        return tuple(a for a, _ in self.branches) + (Fraction(1),)

    @property
    def is_uniform(self) -> bool:
        return len(set(self.slopes)) == 1

    @property
    def codes(self) -> tuple[tuple[int, ...], ...]:
        """Base-p digit string of every branch, when each branch is a p-adic cylinder.

        Raises NotTpError for maps outside the T_p class, i.e. when the slopes
        are not powers of a common base or some branch is not a cylinder.
        """
        p = self.uniform_base
        if p is None:
            raise NotTpError(f"slopes {self.slopes} are not powers of a common base")
        out = []
        for (a, _), n in zip(self.branches, self.exponents):
            v = a * p**n
            if v.denominator != 1:
                raise NotTpError(f"branch starting at {a} is not a {p}-adic cylinder of length {n}")
            v = int(v)
            out.append(tuple((v // p ** (n - 1 - i)) % p for i in range(n)))
        return tuple(out)

    @property
    def is_tp(self) -> bool:
        try:
            self.codes
        except NotTpError:
            return False
        return True

    def branch_index(self, x: Fraction) -> int:
        """Index of the branch containing x (right-open branches, last one closed)."""
        x = Fraction(x)
        if x < 0 or x > 1:
            raise ValueError(f"x={x} outside [0, 1]")
        for j, (a, b) in enumerate(self.branches):
            if a <= x < b:
                return j
        return self.n_branches - 1

    def lebesgue_branch_weights(self) -> np.ndarray:
        return np.array([1.0 / s for s in self.slopes])


def build_map(slopes: Iterable[int]) -> PiecewiseLinearMap:
    """Build the map with the given integer slopes, in branch order.

    Examples
    --------
    >>> m = build_map([2, 4, 4])
    >>> [str(b) for b in m.offsets]
    ['0', '-2', '-3']
    """
    slopes = tuple(int(s) for s in slopes)
    if not slopes:
        raise SlopeSumError("empty slope list")
    bad = [s for s in slopes if s < 2]
    if bad:
        raise SlopeRangeError(f"slopes must be integers >= 2, got {bad}")
    total = sum(Fraction(1, s) for s in slopes)
    if total != 1:
        raise SlopeSumError(f"sum of inverse slopes is {total}, not 1")
    left = Fraction(0)
    offsets, branches = [], []
    for s in slopes:
        offsets.append(-s * left)
        branches.append((left, left + Fraction(1, s)))
        left += Fraction(1, s)
    base, exps = None, None
    for p in range(2, min(slopes) + 1):
        ns = [_integer_log(s, p) for s in slopes]
        if all(n is not None for n in ns):
            base, exps = p, tuple(ns)
            break
    return PiecewiseLinearMap(slopes, tuple(offsets), tuple(branches), base, exps)


def apply_map(m: PiecewiseLinearMap, x, steps: int = 1) -> Fraction:
    """Iterate the map ``steps`` times on a rational point."""
    x = Fraction(x)
    for _ in range(steps):
        j = m.branch_index(x)
        x = m.slopes[j] * x + m.offsets[j]
    return x


@dataclass(frozen=True)
class TransferMatrix:
    """Sparse exact transfer matrix on the grid of N cells.

    Row i has the value ``1/width[i]`` on the contiguous columns
    ``start[i] .. start[i] + width[i] - 1`` and zeros elsewhere.
    """

    N: int
    start: np.ndarray
    width: np.ndarray

    def entry(self, i: int, j: int) -> Fraction:
        s, w = int(self.start[i]), int(self.width[i])
        return Fraction(1, w) if s <= j < s + w else Fraction(0)

    def to_fractions(self) -> list[list[Fraction]]:
        return [[self.entry(i, j) for j in range(self.N)] for i in range(self.N)]

    def incidence(self) -> sparse.csr_matrix:
        rows = np.repeat(np.arange(self.N), self.width)
        offs = np.arange(rows.size) - np.repeat(np.cumsum(self.width) - self.width, self.width)
        cols = np.repeat(self.start, self.width) + offs
        data = np.ones(rows.size, dtype=np.int64)
        return sparse.csr_matrix((data, (rows, cols)), shape=(self.N, self.N))

    def to_sparse(self) -> sparse.csr_matrix:
        inc = self.incidence().astype(float)
        return sparse.diags(1.0 / self.width) @ inc

    def to_array(self) -> np.ndarray:
        return self.to_sparse().toarray()

    def row_sums(self) -> list[Fraction]:
        return [Fraction(int(w), int(w)) for w in self.width]

    def column_sums(self) -> list[Fraction]:
        sums = [Fraction(0)] * self.N
        for i in range(self.N):
            s, w = int(self.start[i]), int(self.width[i])
            for j in range(s, s + w):
                sums[j] += Fraction(1, w)
        return sums

    def is_doubly_stochastic(self) -> bool:
        return all(r == 1 for r in self.row_sums()) and all(c == 1 for c in self.column_sums())

    def integer_form(self, scale: int) -> sparse.csr_matrix:
        """Entries multiplied by ``scale`` (which every width must divide), as int64."""
        if any(scale % int(w) for w in self.width):
            raise ValueError("scale is not a common multiple of the row widths")
        return sparse.diags((scale // self.width).astype(np.int64)) @ self.incidence()

    def exact_product_equals(self, left: "TransferMatrix", right: "TransferMatrix") -> bool:
        """True when ``self == left @ right`` exactly, using integer arithmetic."""
        a = math.lcm(*map(int, np.unique(left.width)))
        b = math.lcm(*map(int, np.unique(right.width)))
        prod = (left.integer_form(a) @ right.integer_form(b)).tocsr()
        scale = a * b
        mine = self.integer_form(scale).tocsr()
        diff = (prod - mine)
        diff.eliminate_zeros()
        return diff.nnz == 0


def _check_grid(points: Iterable[Fraction], N: int) -> None:
    for e in points:
        if (e * N).denominator != 1:
            raise PartitionAlignmentError(f"breakpoint {e} is not a multiple of 1/{N}")


def transfer_matrix(m: PiecewiseLinearMap, N: int) -> TransferMatrix:
    """Exact transfer matrix ``B(i, j) = |E_i ∩ T^{-1}E_j| / |E_i|`` on N cells."""
    if N < 1:
        raise PartitionAlignmentError("N must be positive")
    _check_grid(m.endpoints, N)
    start = np.empty(N, dtype=np.int64)
    width = np.empty(N, dtype=np.int64)
    for (a, b), lam, off in zip(m.branches, m.slopes, m.offsets):
        lo, hi = int(a * N), int(b * N)
        shift = off * N
        for i in range(lo, hi):
            start[i] = int(lam * i + shift)
            width[i] = lam
    return TransferMatrix(N, start, width)


@dataclass(frozen=True)
class BlockDecomposition:
    """T = T̄_p ∘ T_BD with T_BD block-diagonal of internal slopes ``lambda_bar``.

    Each block ``[lo, hi]`` is a maximal run of branches with equal slope
    ``p * lambda_bar``; T_BD restricted to it is the uniform expanding map of
    slope ``lambda_bar`` on that block.
    """

    p: int
    blocks: tuple[tuple[Fraction, Fraction], ...]
    lambda_bar: tuple[int, ...]
    n0: int

    def uniform_transfer(self, N: int) -> TransferMatrix:
        if N % self.p:
            raise PartitionAlignmentError(f"N={N} not divisible by p={self.p}")
        i = np.arange(N, dtype=np.int64)
        return TransferMatrix(N, self.p * i % N, np.full(N, self.p, dtype=np.int64))

    def block_transfer(self, N: int) -> TransferMatrix:
        _check_grid([lo for lo, _ in self.blocks] + [Fraction(1)], N)
        start = np.empty(N, dtype=np.int64)
        width = np.empty(N, dtype=np.int64)
        for (lo, hi), lb in zip(self.blocks, self.lambda_bar):
            s, e = int(lo * N), int(hi * N)
            L = e - s
            if L % lb:
                raise PartitionAlignmentError(f"block of {L} cells not divisible by {lb}")
            r = np.arange(L, dtype=np.int64)
            start[s:e] = s + (lb * r) % L
            width[s:e] = lb
        return TransferMatrix(N, start, width)


def decompose(m: PiecewiseLinearMap) -> BlockDecomposition:
    """Split the map into a uniform part of slope p and a block-diagonal part.

    Requires the distinct reduced slopes ``Λ/p`` (p the gcd of the slopes) to be
    pairwise coprime, and every run of equal slopes to cover a whole number of
    intervals of length 1/p.
    """
    p = reduce(math.gcd, m.slopes)
    if p < 2:
        raise NotDecomposableError(f"gcd of slopes {m.slopes} is 1")
    distinct = sorted(set(s // p for s in m.slopes))
    for i, u in enumerate(distinct):
        for v in distinct[i + 1:]:
            if math.gcd(u, v) != 1:
                raise NotDecomposableError(
                    f"reduced slopes {u} and {v} share the factor {math.gcd(u, v)} (p={p})")
    blocks, lbar = [], []
    j = 0
    while j < m.n_branches:
        s = m.slopes[j]
        k = j
        while k < m.n_branches and m.slopes[k] == s:
            k += 1
        run = k - j
        if run % (s // p):
            raise NotDecomposableError(
                f"run of {run} branches of slope {s} is not a multiple of Λ/p={s // p}")
        blocks.append((m.branches[j][0], m.branches[k - 1][1]))
        lbar.append(s // p)
        j = k
    n0 = p * math.prod(distinct)
    return BlockDecomposition(p, tuple(blocks), tuple(lbar), n0)


def cylinder_interval(p: int, digits: str | Sequence[int]) -> tuple[Fraction, Fraction]:
    """Interval of points whose base-p expansion starts with ``digits``."""
    ds = [int(c) for c in digits] if isinstance(digits, str) else list(digits)
    if any(d < 0 or d >= p for d in ds):
        raise DigitRangeError(f"digits {digits!r} outside alphabet 0..{p - 1}")
    v = sum(Fraction(d, p ** (i + 1)) for i, d in enumerate(ds))
    return v, v + Fraction(1, p ** len(ds))


@dataclass(frozen=True)
class CylinderTable:
    """Weights of all strings of a common length, in lexicographic order.

    ``symbols`` names the alphabet; the weight of the string with symbol
    indices (s_1, ..., s_n) sits at position Σ s_i A^{n-i}.
    """

    symbols: tuple[str, ...]
    n: int
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.symbols)

    def keys(self) -> list[str]:
        out = [""]
        for _ in range(self.n):
            out = [k + s for k in out for s in self.symbols]
        return out

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.keys(), self.weights.tolist()))

    def __getitem__(self, key: str) -> float:
        idx = 0
        pos = {s: i for i, s in enumerate(self.symbols)}
        width = max(len(s) for s in self.symbols)
        for t in range(self.n):
            idx = idx * self.size + pos[key[t * width:(t + 1) * width]]
        return float(self.weights[idx])

    def total(self) -> float:
        return float(np.sum(self.weights))

    def marginal(self) -> "CylinderTable":
        """Table of the strings one symbol shorter (last symbol summed out)."""
        if self.n == 0:
            raise ValueError("cannot marginalize the empty string")
        w = self.weights.reshape(-1, self.size).sum(axis=1)
        return CylinderTable(self.symbols, self.n - 1, w)

    def to_csv(self) -> str:
        lines = [f"{k},{w:.17g}" for k, w in zip(self.keys(), self.weights.tolist())]
        return "\n".join(lines) + "\n"


def _as_weights(table) -> np.ndarray:
    w = np.asarray(table.weights if isinstance(table, CylinderTable) else table, dtype=float)
    if np.any(w < -1e-13):
        raise NegativeWeightError(f"negative weight {w.min()}")
    return np.clip(w, 0.0, None)


def classical_entropy(table) -> float:
    """Shannon entropy -Σ w log w of a table, with 0 log 0 = 0."""
    w = _as_weights(table)
    return float(-np.sum(xlogy(w, w)))


def classical_pressure(table, v) -> float:
    """Pressure -Σ w log(v² w) for positive per-string weights v."""
    w = _as_weights(table)
    v = np.broadcast_to(np.asarray(v, dtype=float), w.shape)
    if np.any(v <= 0):
        raise NegativeWeightError("pressure weights must be positive")
    return float(-np.sum(xlogy(w, w)) - np.sum(w * np.log(v**2)))


class CylinderMeasure:
    """A measure on one-sided sequences, evaluated on cylinders.

    Subclasses describe how a batch of "prefix states" is extended by a
    block of symbols and how a state is turned into a weight.  States are
    tuples of arrays sharing a leading batch axis.
    """

    symbols: tuple[str, ...]

    def _root(self) -> tuple:
        raise NotImplementedError

    def _extend(self, states: tuple, code: Sequence[int]) -> tuple:
        raise NotImplementedError

    def _weight(self, states: tuple) -> np.ndarray:
        raise NotImplementedError

    @property
    def size(self) -> int:
        return len(self.symbols)

    def _expand(self, states: tuple, codes: Sequence[Sequence[int]], n: int) -> tuple:
        for _ in range(n):
            children = [self._extend(states, c) for c in codes]
            states = tuple(
                np.stack([ch[i] for ch in children], axis=1).reshape((-1,) + children[0][i].shape[1:])
                for i in range(len(states)))
        return states

    def weights(self, n: int, prefix: Sequence[int] = (), codes=None) -> np.ndarray:
        """Weights of ``prefix + x`` for every string x of n blocks.

        With ``codes`` given, each block is the symbol string ``codes[a]``
        (used for branch codings); otherwise blocks are single symbols.
        """
        states = self._root()
        if len(prefix):
            states = self._extend(states, tuple(prefix))
        codes = [(a,) for a in range(self.size)] if codes is None else codes
        return self._weight(self._expand(states, codes, n))

    def weight(self, string: Sequence[int] | str) -> float:
        if isinstance(string, str):
            string = [int(ch) for ch in string]
        return float(self._weight(self._extend(self._root(), tuple(string)))[0])

    def table(self, n: int) -> CylinderTable:
        return CylinderTable(self.symbols, n, self.weights(n))

    def coded_table(self, codes, n: int, labels=None) -> CylinderTable:
        labels = tuple(labels) if labels else tuple(str(i + 1) for i in range(len(codes)))
        return CylinderTable(labels, n, self.weights(n, codes=codes))


class AutomatonMeasure(CylinderMeasure):
    """Measure with ``μ(x) = Re(init · A[x_1] ··· A[x_m] · final)``.

    Bernoulli, product, and cyclic product measures all have this form.
    """

    def __init__(self, init, mats, final, symbols=None):
        self.init = np.asarray(init)
        self.mats = np.asarray(mats)
        self.final = np.asarray(final)
        self.symbols = tuple(symbols) if symbols else tuple(str(i) for i in range(len(self.mats)))

    def _root(self):
        return (self.init[None, :],)

    def _extend(self, states, code):
        (v,) = states
        for s in code:
            v = v @ self.mats[s]
        return (v,)

    def _weight(self, states):
        return np.real(states[0] @ self.final)


class FunctionMeasure(CylinderMeasure):
    """Wraps a plain callable ``string -> weight`` over the alphabet 0..p-1."""

    def __init__(self, fn: Callable[[str], float], p: int):
        self.fn = fn
        self.symbols = tuple(str(i) for i in range(p))

    def _root(self):
        return (np.array([""], dtype=object),)

    def _extend(self, states, code):
        suffix = "".join(self.symbols[s] for s in code)
        return (np.array([s + suffix for s in states[0]], dtype=object),)

    def _weight(self, states):
        return np.array([float(self.fn(s)) for s in states[0]])


def bernoulli_measure(probs: Sequence[float]) -> AutomatonMeasure:
    probs = np.asarray(probs, dtype=float)
    return AutomatonMeasure(np.ones(1), probs[:, None, None], np.ones(1))


def lebesgue_measure(p: int) -> AutomatonMeasure:
    return bernoulli_measure(np.full(p, 1.0 / p))


@dataclass(frozen=True)
class KSEstimate:
    rates: tuple[float, ...]
    entropies: tuple[float, ...]

    @property
    def estimate(self) -> float:
        return self.rates[-1]


def ks_entropy_estimate(measure, n_max: int, codes=None, p: int | None = None,
                        tol: float = 1e-9) -> KSEstimate:
    """Sequence h_n/n for n = 1..n_max of a cylinder measure.

    ``measure`` is a :class:`CylinderMeasure` or a callable on digit strings
    (then ``p`` gives the alphabet size).  With ``codes`` the entropy is taken
    over the partition coded by those symbol blocks (e.g. the branches of a
    map).  Marginal consistency is checked at every length.
    """
    if not isinstance(measure, CylinderMeasure):
        if p is None:
            raise ValueError("alphabet size p is required for a callable oracle")
        measure = FunctionMeasure(measure, p)
    a = len(codes) if codes is not None else measure.size
    prev = None
    rates, ents = [], []
    for n in range(1, n_max + 1):
        w = measure.weights(n, codes=codes)
        if prev is None:
            if abs(w.sum() - 1.0) > tol:
                raise InconsistentMeasureError(f"length-1 weights sum to {w.sum()}")
        else:
            gap = np.max(np.abs(w.reshape(-1, a).sum(axis=1) - prev))
            if gap > tol:
                raise InconsistentMeasureError(f"marginal mismatch {gap:.3g} at n={n}")
        h = classical_entropy(w)
        ents.append(h)
        rates.append(h / n)
        prev = w
    return KSEstimate(tuple(rates), tuple(ents))
