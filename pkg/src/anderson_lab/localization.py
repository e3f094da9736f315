"""Localization centers, tail masses, decay-rate fits and finite-volume witnesses.

Vectors are always read on a *domain* box: ``phi[i]`` is the amplitude at
``domain.sites[i]``. The ``*_batch`` helpers take a matrix whose columns are
vectors on the same domain and are what the ensemble experiments use.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InsufficientSupportError, NoCenterError, OutsideProbeBoxError
from .lattice import BoxSpec, make_box
from .spectral import SpectralData

DEFAULT_TAU_CENTER = 1e-10
FIT_FLOOR = 1e-14
NEAR_DEGENERATE_GAP = 1e-12


def _check_domain(phi: np.ndarray, domain: BoxSpec) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    if phi.shape[0] != domain.size:
        raise ValueError(f"vector has {phi.shape[0]} entries but the domain has {domain.size} sites")
    return phi


def center_mask(phi: np.ndarray, tol: float = DEFAULT_TAU_CENTER) -> np.ndarray:
    """Sites whose amplitude is within relative ``tol`` of the max (per column)."""
    if not 0.0 <= tol <= 1e-6:
        raise ValueError(f"center tolerance must lie in [0, 1e-6], got {tol}")
    a = np.abs(phi)
    top = a.max(axis=0)
    if np.any(top == 0.0):
        raise NoCenterError("no center: zero vector")
    return a >= (1.0 - tol) * top


def localization_centers(phi: np.ndarray, domain: BoxSpec, tol: float = DEFAULT_TAU_CENTER) -> np.ndarray:
    """Coordinates (shape (m, d), lexicographic order) where |phi| is maximal."""
    phi = _check_domain(phi, domain)
    return domain.sites[np.flatnonzero(center_mask(phi, tol))]


def designated_center(phi: np.ndarray, domain: BoxSpec, tol: float = DEFAULT_TAU_CENTER) -> tuple[int, ...]:
    """Lexicographically smallest localization center."""
    return tuple(int(c) for c in localization_centers(phi, domain, tol)[0])


def is_localized_in(phi: np.ndarray, domain: BoxSpec, box: BoxSpec, tol: float = DEFAULT_TAU_CENTER) -> bool:
    return bool(np.any(box.contains(localization_centers(phi, domain, tol))))


def tail_mass(phi: np.ndarray, domain: BoxSpec, box: BoxSpec) -> float:
    """l2 norm of ``phi`` on the domain sites outside ``box``."""
    phi = _check_domain(phi, domain)
    outside = ~box.contains(domain.sites)
    return float(np.sqrt(np.sum(phi[outside] ** 2)))


def _linf_distance(sites: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # (n_sites, n_vectors)
    return np.max(np.abs(sites[:, None, :] - centers[None, :, :]), axis=2)


def decay_rate_fit(phi: np.ndarray, domain: BoxSpec, center: Sequence[int]) -> tuple[float, float]:
    """Least-squares decay rate of log|phi| against the sup-distance to ``center``.

    Returns ``(gamma_hat, rms_residual)`` with ``gamma_hat = -2 * slope``, i.e.
    the rate for which |phi(y)| ~ exp(-gamma_hat |y - x| / 2).
    """
    phi = _check_domain(phi, domain)
    if not np.max(np.abs(phi)) > 0:
        raise InsufficientSupportError("insufficient support: zero vector")
    c = np.asarray(center, dtype=np.int64).reshape(1, -1)
    g, r, ok = _fit_batch(phi[:, None], domain.sites, c)
    if not ok[0]:
        raise InsufficientSupportError("insufficient support: fewer than 3 sites above the fit floor")
    return float(g[0]), float(r[0])


def _fit_batch(V: np.ndarray, sites: np.ndarray, centers: np.ndarray):
    a = np.abs(V)
    m = a > FIT_FLOOR
    x = _linf_distance(sites, centers).astype(float)
    y = np.log(np.where(m, a, 1.0))
    n = m.sum(axis=0).astype(float)
    sx = np.sum(m * x, axis=0)
    sy = np.sum(m * y, axis=0)
    sxx = np.sum(m * x * x, axis=0)
    sxy = np.sum(m * x * y, axis=0)
    den = n * sxx - sx * sx
    ok = (n >= 3) & (den > 0)
    safe = np.where(ok, den, 1.0)
    slope = np.where(ok, (n * sxy - sx * sy) / safe, np.nan)
    icpt = np.where(ok, (sy - slope * sx) / np.where(ok, n, 1.0), np.nan)
    resid = m * (y - icpt[None, :] - slope[None, :] * x)
    rms = np.sqrt(np.sum(resid**2, axis=0) / np.where(ok, n, 1.0))
    return -2.0 * slope, np.where(ok, rms, np.nan), ok


def localized_in_batch(V: np.ndarray, domain: BoxSpec, box: BoxSpec, tol: float = DEFAULT_TAU_CENTER) -> np.ndarray:
    """For each column, whether some localization center lies in ``box``."""
    inside = box.contains(domain.sites)
    return np.any(center_mask(V, tol) & inside[:, None], axis=0)


def tail_mass_batch(V: np.ndarray, domain: BoxSpec, box: BoxSpec) -> np.ndarray:
    outside = ~box.contains(domain.sites)
    return np.sqrt(np.sum(V[outside] ** 2, axis=0))


def designated_centers_batch(V: np.ndarray, domain: BoxSpec, tol: float = DEFAULT_TAU_CENTER) -> np.ndarray:
    # argmax returns the first True row, which is the lexicographic minimum
    return domain.sites[np.argmax(center_mask(V, tol), axis=0)]


def decay_rate_batch(V: np.ndarray, domain: BoxSpec, tol: float = DEFAULT_TAU_CENTER):
    """Vectorised :func:`decay_rate_fit` about each column's designated center.

    Columns without enough support get NaN instead of raising.
    """
    g, r, _ = _fit_batch(V, domain.sites, designated_centers_batch(V, domain, tol))
    return g, r


@dataclass(frozen=True)
class LocalizationRecord:
    index: int
    energy: float
    centers: np.ndarray = field(repr=False)
    center: tuple[int, ...]
    max_amplitude: float
    tail_masses: dict[int, float]
    decay_rate: float
    fit_residual: float
    near_degenerate: bool = False


def localization_records(
    spectral: SpectralData,
    probe_sides: Sequence[int] = (),
    indices: Sequence[int] | None = None,
    tol: float = DEFAULT_TAU_CENTER,
) -> list[LocalizationRecord]:
    """One record per eigenpair; tail masses are taken outside boxes of the given
    side lengths centred on the designated center."""
    domain = spectral.hamiltonian.box
    V = spectral.eigenvectors
    w = spectral.eigenvalues
    idx = range(w.size) if indices is None else indices
    gaps = np.diff(w)
    out = []
    for j in idx:
        phi = V[:, j]
        centers = localization_centers(phi, domain, tol)
        c = tuple(int(t) for t in centers[0])
        tails = {int(L): tail_mass(phi, domain, make_box(domain.dimension, c, L)) for L in probe_sides}
        try:
            g, r = decay_rate_fit(phi, domain, c)
        except InsufficientSupportError:
            g, r = float("nan"), float("nan")
        left = gaps[j - 1] if j > 0 else np.inf
        right = gaps[j] if j < gaps.size else np.inf
        out.append(
            LocalizationRecord(
                index=int(j),
                energy=float(w[j]),
                centers=centers,
                center=c,
                max_amplitude=float(np.max(np.abs(phi))),
                tail_masses=tails,
                decay_rate=g,
                fit_residual=r,
                near_degenerate=bool(min(left, right) < NEAR_DEGENERATE_GAP),
            )
        )
    return out


@dataclass(frozen=True)
class ApproximationWitness:
    energy: float
    probe: BoxSpec = field(repr=False)
    tail: float
    distance: float
    residual_bound: float
    epsilon: float | None = None
    slack: float = 1e-10

    @property
    def holds(self) -> bool:
        """dist(sigma(H_probe), E) <= residual bound, up to ``slack``."""
        return self.distance <= self.residual_bound + self.slack


def finite_volume_witness(
    phi: np.ndarray,
    E: float,
    domain: BoxSpec,
    probe: SpectralData,
    *,
    epsilon: float | None = None,
    slack: float = 1e-10,
) -> ApproximationWitness:
    """Compare the probe-box spectrum near ``E`` with the truncated residual of ``phi``.

    By the spectral theorem, ``dist(sigma(H_probe), E) <= ||(H_probe - E) psi|| / ||psi||``
    for ``psi`` the restriction of ``phi`` to the probe box.
    """
    phi = _check_domain(phi, domain)
    H = probe.hamiltonian
    idx = domain.index_of(H.box.sites)
    if np.any(idx < 0):
        raise ValueError("probe box must lie inside the domain of phi")
    psi = phi[idx]
    norm = float(np.linalg.norm(psi))
    if norm == 0.0:
        raise OutsideProbeBoxError("eigenfunction lives outside probe box")
    resid = float(np.linalg.norm(H.matrix @ psi - E * psi)) / norm
    dist = float(np.min(np.abs(probe.eigenvalues - E)))
    return ApproximationWitness(
        energy=float(E),
        probe=H.box,
        tail=tail_mass(phi, domain, H.box),
        distance=dist,
        residual_bound=resid,
        epsilon=epsilon,
        slack=slack,
    )
