"""Boxes in Z^d, i.i.d. disorder, Dirichlet Hamiltonians and length schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import BoxTooLargeError, IncompleteRealizationError, InvalidExponentError

DEFAULT_MAX_SITES = 1_000_000

_FAMILIES = ("uniform",)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BoxSpec:
    """A cubic block of ``side**d`` lattice sites starting at corner ``lower``.

    Sites are stored row-wise in lexicographic (C) order, so ``sites[i]`` is
    the coordinate vector of basis vector ``i`` of the box Hamiltonian. Boxes
    built by :func:`make_box` have odd side and are centred on a site.
    """

    dimension: int
    lower: tuple[int, ...]
    side: int
    sites: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    boundary_index: np.ndarray = field(repr=False)

    @property
    def radius(self) -> int:
        return (self.side - 1) // 2

    @property
    def center(self) -> tuple[int, ...]:
        """Middle site; for even sides the lexicographically smaller middle."""
        return tuple(c + self.radius for c in self.lower)

    @property
    def size(self) -> int:
        return self.sites.shape[0]

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BoxSpec):
            return NotImplemented
        return (self.dimension, self.lower, self.side) == (other.dimension, other.lower, other.side)

    def __hash__(self) -> int:
        return hash((self.dimension, self.lower, self.side))

    def __repr__(self) -> str:
        return f"BoxSpec(d={self.dimension}, lower={self.lower}, side={self.side})"

    @property
    def center_index(self) -> int:
        return int(self.index_of(self.center)[0])

    def _local(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        return pts - np.asarray(self.lower, dtype=np.int64)

    def contains(self, points: np.ndarray | Sequence[int]) -> np.ndarray:
        """Boolean mask telling which of ``points`` (shape (m, d)) lie in the box."""
        local = self._local(points)
        return np.all((local >= 0) & (local < self.side), axis=1)

    def index_of(self, points: np.ndarray | Sequence[int]) -> np.ndarray:
        """Row indices of ``points`` in ``sites``; -1 for points outside the box."""
        local = self._local(points)
        inside = np.all((local >= 0) & (local < self.side), axis=1)
        idx = np.full(local.shape[0], -1, dtype=np.int64)
        if inside.any():
            idx[inside] = np.ravel_multi_index(tuple(local[inside].T), (self.side,) * self.dimension)
        return idx

    def is_subbox_of(self, other: BoxSpec) -> bool:
        if self.dimension != other.dimension:
            return False
        lo = np.asarray(self.lower) - np.asarray(other.lower)
        return bool(np.all(lo >= 0) and np.all(lo + self.side <= other.side))


def make_block(d: int, lower: Sequence[int] | int, side: int, *, max_sites: int = DEFAULT_MAX_SITES) -> BoxSpec:
    """Box of ``side**d`` sites with lowest corner ``lower``; any side >= 1."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if side < 1:
        raise ValueError(f"side length must be >= 1, got {side}")
    lower = (int(lower),) * d if np.ndim(lower) == 0 else tuple(int(c) for c in lower)
    if len(lower) != d:
        raise ValueError(f"corner {lower} does not have dimension {d}")
    n = side**d
    if n > max_sites:
        raise BoxTooLargeError(n, max_sites)
    axes = [np.arange(c, c + side, dtype=np.int64) for c in lower]
    grid = np.meshgrid(*axes, indexing="ij")
    sites = np.stack([g.ravel() for g in grid], axis=1)
    local = sites - np.asarray(lower)
    on_face = np.any((local == 0) | (local == side - 1), axis=1)
    bidx = np.flatnonzero(on_face)
    return BoxSpec(
        dimension=d,
        lower=lower,
        side=int(side),
        sites=_frozen(sites),
        boundary=_frozen(sites[bidx]),
        boundary_index=_frozen(bidx),
    )


def make_box(
    d: int,
    x: Sequence[int] | int,
    L: int,
    *,
    max_sites: int = DEFAULT_MAX_SITES,
) -> BoxSpec:
    """Box of side 2*floor(L/2)+1 centred on site ``x``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if L < 1:
        raise ValueError(f"side length must be >= 1, got {L}")
    center = (int(x),) * d if np.ndim(x) == 0 else tuple(int(c) for c in x)
    if len(center) != d:
        raise ValueError(f"center {center} does not have dimension {d}")
    r = int(L) // 2
    return make_block(d, tuple(c - r for c in center), 2 * r + 1, max_sites=max_sites)


@dataclass(frozen=True)
class PotentialSpec:
    """Single-site law of the disorder together with the coupling constant."""

    family: str = "uniform"
    low: float = 0.0
    high: float = 1.0
    coupling: float = 1.0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unsupported distribution family {self.family!r}; known: {_FAMILIES}")
        if not self.high > self.low:
            raise ValueError(f"support must satisfy high > low, got [{self.low}, {self.high}]")
        if not (self.coupling >= 0.0 and math.isfinite(self.coupling)):
            raise ValueError(f"coupling must be a finite non-negative number, got {self.coupling}")

    @property
    def density_sup(self) -> float:
        """Sup-norm of the single-site density."""
        return 1.0 / (self.high - self.low)

    @property
    def effective_density_sup(self) -> float:
        """Sup-norm of the density of the scaled potential lambda * V (inf at lambda = 0)."""
        return self.density_sup / self.coupling if self.coupling > 0 else math.inf

    @property
    def support(self) -> tuple[float, float]:
        return (self.low, self.high)

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.low + (self.high - self.low) * rng.random(n)


@dataclass(frozen=True, eq=False)
class PotentialRealization:
    box: BoxSpec
    values: np.ndarray = field(repr=False)
    seed: int | None = None

    def restrict(self, box: BoxSpec) -> PotentialRealization:
        """The same realization read on a sub-box."""
        idx = self.box.index_of(box.sites)
        if np.any(idx < 0):
            missing = box.sites[np.flatnonzero(idx < 0)[0]]
            raise IncompleteRealizationError(
                f"incomplete realization: no potential value at site {tuple(int(c) for c in missing)}"
            )
        return PotentialRealization(box=box, values=_frozen(self.values[idx]), seed=self.seed)


def sample_potential(spec: PotentialSpec, seed: int, box: BoxSpec) -> PotentialRealization:
    """Draw i.i.d. site values on ``box`` in its lexicographic site order.

    The stream is numpy's PCG64 seeded with the 64-bit ``seed``, so the result
    is a pure function of ``(spec, seed, box)``.
    """
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    rng = np.random.Generator(np.random.PCG64(seed))
    return PotentialRealization(box=box, values=_frozen(spec.draw(rng, box.size)), seed=seed)


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    """Dirichlet restriction of hopping plus coupling times the on-site potential."""

    box: BoxSpec
    matrix: sp.csr_matrix = field(repr=False)
    diagonal: np.ndarray = field(repr=False)
    coupling: float = 1.0

    @property
    def is_tridiagonal(self) -> bool:
        return self.box.dimension == 1

    @property
    def size(self) -> int:
        return self.box.size

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def offdiagonal(self) -> np.ndarray:
        if not self.is_tridiagonal:
            raise ValueError("offdiagonal() is only defined for the d=1 tridiagonal path")
        return np.ones(self.size - 1)

    def sub_hamiltonian(self, box: BoxSpec) -> HamiltonianMatrix:
        """Restriction to a sub-box, reusing the on-site values."""
        idx = self.box.index_of(box.sites)
        if np.any(idx < 0):
            raise IncompleteRealizationError("incomplete realization: sub-box leaves the host box")
        return _build(box, self.diagonal[idx], self.coupling)


def _neighbor_pairs(box: BoxSpec) -> tuple[np.ndarray, np.ndarray]:
    side, d = box.side, box.dimension
    local = box.sites - np.asarray(box.lower)
    rows, cols = [], []
    for j in range(d):
        stride = side ** (d - 1 - j)
        src = np.flatnonzero(local[:, j] < side - 1)
        rows.append(src)
        cols.append(src + stride)
    if not rows:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(rows), np.concatenate(cols)


def _build(box: BoxSpec, diagonal: np.ndarray, coupling: float) -> HamiltonianMatrix:
    n = box.size
    i, j = _neighbor_pairs(box)
    rows = np.concatenate([np.arange(n), i, j])
    cols = np.concatenate([np.arange(n), j, i])
    data = np.concatenate([diagonal, np.ones(2 * i.size)])
    mat = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    mat.sort_indices()
    return HamiltonianMatrix(box=box, matrix=mat, diagonal=_frozen(np.asarray(diagonal, float)), coupling=coupling)


def assemble_hamiltonian(box: BoxSpec, v: PotentialRealization, coupling: float) -> HamiltonianMatrix:
    if v.box != box:
        v = v.restrict(box)
    if v.values.shape != (box.size,) or not np.all(np.isfinite(v.values)):
        raise IncompleteRealizationError(
            f"incomplete realization: expected {box.size} finite values, got shape {v.values.shape}"
        )
    return _build(box, coupling * v.values, float(coupling))


@dataclass(frozen=True)
class ScaleSchedule:
    L0: int
    alpha: float
    lengths: tuple[int, ...]
    p: float

    def __getitem__(self, k: int) -> int:
        return self.lengths[k]

    def __len__(self) -> int:
        return len(self.lengths)


def next_scale(L: int, alpha: float) -> int:
    """Smallest odd integer that is >= L**alpha."""
    # slack absorbs pow() rounding when L**alpha is an exact integer
    n = math.ceil(L**alpha - 1e-9)
    return n if n % 2 else n + 1


def scale_schedule(L0: int, alpha: float, k_max: int, p: float | None = None, d: int = 1) -> ScaleSchedule:
    if not 1.0 < alpha < 2.0:
        raise InvalidExponentError(f"invalid exponent: alpha={alpha} must lie in (1, 2)")
    if L0 < 3 or L0 % 2 == 0:
        raise ValueError(f"base length must be an odd integer >= 3, got {L0}")
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    p = 2 * d + 1 if p is None else float(p)
    if not p > 2 * d:
        raise ValueError(f"MSA exponent p={p} must exceed 2d={2 * d}")
    lengths = [int(L0)]
    for _ in range(k_max):
        lengths.append(next_scale(lengths[-1], alpha))
    return ScaleSchedule(L0=int(L0), alpha=float(alpha), lengths=tuple(lengths), p=p)


def spectrum_support(spec: PotentialSpec, d: int) -> tuple[float, float]:
    """Closed interval [-2d, 2d] + coupling * supp(rho)."""
    lam = spec.coupling
    return (-2.0 * d + lam * spec.low, 2.0 * d + lam * spec.high)
