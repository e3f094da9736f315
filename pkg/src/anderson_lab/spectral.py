"""Eigendecomposition, interval counting and resolvent elements of box Hamiltonians.

Dense LAPACK drivers do the heavy lifting: ``stemr`` on the tridiagonal
d=1 path and ``syevr`` otherwise. Resolvent columns come from one LU
factorization of ``H - E`` (``gttrf`` for d=1, SuperLU otherwise).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .errors import BoxTooLargeError, ResolventSingular, SolverFailure
from .lattice import HamiltonianMatrix

DEFAULT_MAX_DENSE_SITES = 5000
DEFAULT_MAX_TRIDIAGONAL_SITES = 50_000
DEFAULT_TAU_SPEC = 1e-12


@dataclass(frozen=True, eq=False)
class SpectralData:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = field(repr=False)
    residuals: np.ndarray | None = field(repr=False)
    hamiltonian: HamiltonianMatrix = field(repr=False)

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigenvalues))) if self.size else 0.0

    @property
    def min_gap(self) -> float:
        return min_gap(self)

    def gram_deviation(self) -> float:
        """max |V^T V - I| over all entries."""
        if self.eigenvectors is None:
            raise ValueError("eigenvectors were not computed")
        v = self.eigenvectors
        g = v.T @ v
        g[np.diag_indices_from(g)] -= 1.0
        return float(np.max(np.abs(g)))

    def max_residual(self) -> float:
        if self.residuals is None:
            raise ValueError("eigenvectors were not computed")
        return float(np.max(self.residuals)) if self.size else 0.0


def _failure_index(exc: Exception) -> int | None:
    m = re.search(r"(\d+)", str(exc))
    return int(m.group(1)) if m else None


def eigenvalues(H: HamiltonianMatrix, *, max_sites: int | None = None) -> np.ndarray:
    """Sorted eigenvalues only; the cheap path used by counting experiments."""
    _check_cap(H, max_sites)
    try:
        if H.is_tridiagonal:
            if H.size == 1:
                return np.array(H.diagonal, dtype=float)
            return sla.eigh_tridiagonal(H.diagonal, H.offdiagonal(), eigvals_only=True)
        return sla.eigh(H.toarray(), eigvals_only=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverFailure(str(exc), _failure_index(exc)) from exc


def _check_cap(H: HamiltonianMatrix, max_sites: int | None) -> None:
    if max_sites is None:
        max_sites = DEFAULT_MAX_TRIDIAGONAL_SITES if H.is_tridiagonal else DEFAULT_MAX_DENSE_SITES
    if H.size > max_sites:
        raise BoxTooLargeError(H.size, max_sites)


def eigendecompose(H: HamiltonianMatrix, *, max_sites: int | None = None) -> SpectralData:
    """Full eigendecomposition with per-pair residual norms.

    Eigenvalues come back ascending and ``eigenvectors[:, j]`` belongs to
    ``eigenvalues[j]``.
    """
    _check_cap(H, max_sites)
    try:
        if H.is_tridiagonal and H.size > 1:
            w, v = sla.eigh_tridiagonal(H.diagonal, H.offdiagonal())
        else:
            w, v = sla.eigh(H.toarray())
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverFailure(str(exc), _failure_index(exc)) from exc
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
        bad = int(np.flatnonzero(~np.isfinite(w) | ~np.all(np.isfinite(v), axis=0))[0])
        raise SolverFailure("non-finite eigenpair", bad)
    res = np.linalg.norm(H.matrix @ v - v * w, axis=0)
    return SpectralData(eigenvalues=w, eigenvectors=v, residuals=res, hamiltonian=H)


def _values(s: SpectralData | np.ndarray) -> np.ndarray:
    return s.eigenvalues if isinstance(s, SpectralData) else np.asarray(s, dtype=float)


def count_in_interval(s: SpectralData | np.ndarray, J: Sequence[float]) -> int:
    """Number of eigenvalues strictly inside the open interval ``J``."""
    a, b = float(J[0]), float(J[1])
    if not a < b:
        raise ValueError(f"interval must satisfy a < b, got ({a}, {b})")
    w = _values(s)
    return int(np.searchsorted(w, b, side="left") - np.searchsorted(w, a, side="right"))


def min_gap(s: SpectralData | np.ndarray) -> float:
    w = _values(s)
    if w.size < 2:
        return float("inf")
    return float(np.min(np.diff(w)))


def distance_to_spectrum(s: SpectralData | np.ndarray, E: float) -> float:
    w = _values(s)
    return float(np.min(np.abs(w - E)))


def singular_tolerance(s: SpectralData | np.ndarray, tau: float = DEFAULT_TAU_SPEC) -> float:
    w = _values(s)
    return tau * max(1.0, float(np.max(np.abs(w))))


@dataclass(frozen=True)
class GreensValue:
    energy: float
    source: tuple[int, ...]
    target: tuple[int, ...]
    value: float
    distance_to_spectrum: float


class ResolventFactorization:
    """One LU factorization of ``H - E``, reused for every right-hand side.

    Raises :class:`ResolventSingular` when ``E`` lies within the relative
    tolerance ``tau`` of the box spectrum.
    """

    def __init__(
        self,
        H: HamiltonianMatrix,
        E: float,
        *,
        spectrum: SpectralData | np.ndarray | None = None,
        tau: float = DEFAULT_TAU_SPEC,
    ):
        self.H = H
        self.E = float(E)
        w = eigenvalues(H) if spectrum is None else _values(spectrum)
        self.distance = distance_to_spectrum(w, self.E)
        tol = singular_tolerance(w, tau)
        if self.distance <= tol:
            raise ResolventSingular(self.E, self.distance, tol)
        n = H.size
        if H.is_tridiagonal and n > 2:  # the gttrf wrapper mis-sizes n <= 2
            off = H.offdiagonal()
            dl, d, du, du2, ipiv, info = lapack.dgttrf(off, H.diagonal - self.E, off)
            if info != 0:
                raise ResolventSingular(self.E, self.distance, tol)
            self._tri = (dl, d, du, du2, ipiv)
            self._lu = None
        else:
            shifted = (H.matrix - self.E * sp.identity(n, format="csr")).tocsc()
            try:
                self._lu = spla.splu(shifted)
            except RuntimeError as exc:
                raise ResolventSingular(self.E, self.distance, tol) from exc
            self._tri = None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self._tri is not None:
            b = rhs.reshape(rhs.shape[0], -1)
            x, info = lapack.dgttrs(*self._tri, b)
            if info != 0:
                raise SolverFailure("gttrs failed", info)
            return x.reshape(rhs.shape)
        return self._lu.solve(rhs)

    def column(self, index: int) -> np.ndarray:
        """``u = (H - E)^{-1} delta_index``; equals the resolvent row by symmetry."""
        e = np.zeros(self.H.size)
        e[index] = 1.0
        return self.solve(e)


def _site_index(H: HamiltonianMatrix, site) -> int:
    idx = int(H.box.index_of(np.atleast_1d(site))[0])
    if idx < 0:
        raise ValueError(f"site {tuple(np.atleast_1d(site))} is not in the box")
    return idx


def greens_element(
    H: HamiltonianMatrix,
    E: float,
    x,
    y,
    *,
    spectrum: SpectralData | np.ndarray | None = None,
    tau: float = DEFAULT_TAU_SPEC,
) -> GreensValue:
    ix, iy = _site_index(H, x), _site_index(H, y)
    fac = ResolventFactorization(H, E, spectrum=spectrum, tau=tau)
    u = fac.column(iy)
    return GreensValue(
        energy=float(E),
        source=tuple(int(c) for c in H.box.sites[ix]),
        target=tuple(int(c) for c in H.box.sites[iy]),
        value=float(u[ix]),
        distance_to_spectrum=fac.distance,
    )


def greens_to_boundary(
    H: HamiltonianMatrix,
    E: float,
    x=None,
    *,
    spectrum: SpectralData | np.ndarray | None = None,
    tau: float = DEFAULT_TAU_SPEC,
    factorization: ResolventFactorization | None = None,
) -> list[GreensValue]:
    """G(E; x, y) for every boundary site y, from a single solve.

    ``x`` defaults to the box centre.
    """
    box = H.box
    ix = box.center_index if x is None else _site_index(H, x)
    fac = factorization or ResolventFactorization(H, E, spectrum=spectrum, tau=tau)
    u = fac.column(ix)
    src = tuple(int(c) for c in box.sites[ix])
    return [
        GreensValue(float(E), src, tuple(int(c) for c in box.sites[j]), float(u[j]), fac.distance)
        for j in box.boundary_index
    ]
