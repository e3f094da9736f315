"""(gamma, E)-regular boxes, the eigenvalue-approximation scale and two-box MSA frequencies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from .ensemble import BinomialEstimate, binomial_estimate, map_trials
from .errors import ResolventSingular
from .lattice import (
    BoxSpec,
    HamiltonianMatrix,
    PotentialSpec,
    ScaleSchedule,
    assemble_hamiltonian,
    make_box,
    sample_potential,
)
from .spectral import DEFAULT_TAU_SPEC, ResolventFactorization, SpectralData, eigenvalues

SPECTRUM_HIT = "spectrum-hit"
BOUNDARY_TOO_LARGE = "boundary-too-large"


@dataclass(frozen=True)
class RegularityVerdict:
    box: BoxSpec = field(repr=False)
    energy: float
    gamma: float
    regular: bool
    max_boundary: float
    threshold: float
    reason: str | None = None

    def at_rate(self, gamma: float) -> bool:
        """Re-evaluate the verdict for another decay rate on the same resolvent data."""
        if self.reason == SPECTRUM_HIT:
            return False
        return self.max_boundary <= regularity_threshold(gamma, self.box.side)


def regularity_threshold(gamma: float, L: int) -> float:
    return math.exp(-gamma * L / 2.0)


def check_regular(
    H: HamiltonianMatrix,
    E: float,
    gamma: float,
    *,
    spectrum: SpectralData | np.ndarray | None = None,
    tau: float = DEFAULT_TAU_SPEC,
) -> RegularityVerdict:
    """Decide whether the box of ``H`` is (gamma, E)-regular.

    The box is regular when ``E`` is off its spectrum and the Green's function
    from the centre to every boundary site is at most ``exp(-gamma L / 2)``,
    with ``L`` the box side length.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    box = H.box
    thr = regularity_threshold(gamma, box.side)
    try:
        fac = ResolventFactorization(H, E, spectrum=spectrum, tau=tau)
    except ResolventSingular:
        return RegularityVerdict(box, float(E), gamma, False, math.inf, thr, SPECTRUM_HIT)
    u = fac.column(box.center_index)
    m = float(np.max(np.abs(u[box.boundary_index])))
    ok = m <= thr
    return RegularityVerdict(box, float(E), gamma, ok, m, thr, None if ok else BOUNDARY_TOO_LARGE)


def center_box_singular(
    H: HamiltonianMatrix,
    phi: np.ndarray,
    E: float,
    L: int,
    gamma: float,
    *,
    tol: float = 1e-10,
    tau: float = DEFAULT_TAU_SPEC,
) -> bool | None:
    """Whether the side-``L`` box around the designated center of ``phi`` fails
    to be (gamma, E)-regular, with ``phi`` an eigenvector of ``H`` at ``E``.

    Returns ``None`` when that box does not fit inside the box of ``H``.
    """
    from .localization import designated_center

    dom = H.box
    x = designated_center(phi, dom, tol)
    sub = make_box(dom.dimension, x, L)
    if not sub.is_subbox_of(dom):
        return None
    return not check_regular(H.sub_hamiltonian(sub), E, gamma, tau=tau).regular


@dataclass(frozen=True)
class EpsilonScale:
    C2: float
    gamma_prime: float
    L: float
    value: float


def epsilon_of_scale(C2: float, gamma_prime: float, L: float) -> EpsilonScale:
    """``C2 * exp(-gamma_prime * L / 2)``."""
    if C2 <= 0 or gamma_prime <= 0 or L < 1:
        raise ValueError(f"need C2 > 0, gamma' > 0, L >= 1; got {C2}, {gamma_prime}, {L}")
    return EpsilonScale(C2, gamma_prime, L, C2 * math.exp(-gamma_prime * L / 2.0))


def energy_grid(interval: Sequence[float], n: int = 32) -> np.ndarray:
    """Cell midpoints of ``n`` equal cells of the open interval."""
    a, b = float(interval[0]), float(interval[1])
    if not a < b or n < 1:
        raise ValueError(f"bad energy grid ({a}, {b}) with {n} points")
    return a + (np.arange(n) + 0.5) * (b - a) / n


@dataclass(frozen=True)
class MsaEstimate:
    k: int
    L: int
    energies: tuple[float, ...]
    estimate: BinomialEstimate
    target: float

    @property
    def probability(self) -> float:
        return self.estimate.probability

    @property
    def trials(self) -> int:
        return self.estimate.trials


@dataclass(frozen=True)
class MsaTrialSpec:
    spec: PotentialSpec
    d: int
    L: int
    x: tuple[int, ...]
    y: tuple[int, ...]
    energies: tuple[float, ...]
    gamma: float
    tau: float = DEFAULT_TAU_SPEC


def msa_boxes(params: MsaTrialSpec) -> tuple[BoxSpec, BoxSpec, BoxSpec]:
    bx = make_box(params.d, params.x, params.L)
    by = make_box(params.d, params.y, params.L)
    sep = int(np.max(np.abs(np.subtract(params.x, params.y))))
    ambient = make_box(params.d, params.x, 2 * (sep + bx.radius) + 1)
    return ambient, bx, by


def regular_mask(H: HamiltonianMatrix, energies: Sequence[float], gamma: float, tau: float) -> np.ndarray:
    w = eigenvalues(H)
    return np.array([check_regular(H, E, gamma, spectrum=w, tau=tau).regular for E in energies])


def msa_trial(params: MsaTrialSpec, trial: int, seed: int) -> dict:
    ambient, bx, by = msa_boxes(params)
    v = sample_potential(params.spec, seed, ambient)
    rx = regular_mask(assemble_hamiltonian(bx, v, params.spec.coupling), params.energies, params.gamma, params.tau)
    ry = regular_mask(assemble_hamiltonian(by, v, params.spec.coupling), params.energies, params.gamma, params.tau)
    either = rx | ry
    return {
        "event": bool(either.all()),
        "regular_x": int(rx.sum()),
        "regular_y": int(ry.sum()),
        "energies_failing": int((~either).sum()),
    }


def msa_event_frequency(
    schedule: ScaleSchedule,
    k: int,
    energies: float | Sequence[float],
    gamma: float,
    spec: PotentialSpec,
    *,
    x: Sequence[int] | None = None,
    y: Sequence[int] | None = None,
    d: int = 1,
    n_trials: int,
    seed: int,
    workers: int = 1,
    tau: float = DEFAULT_TAU_SPEC,
) -> MsaEstimate:
    """Fraction of realizations in which, for every energy on the grid, one of
    the two disjoint boxes of side ``L_k`` is (gamma, E)-regular.

    Both boxes read one realization drawn on their common bounding box.
    ``y`` defaults to ``x + (L_k + 1) e_1``.
    """
    if n_trials < 1:
        raise ValueError(f"ensemble size must be >= 1, got {n_trials}")
    L = schedule.lengths[k]
    x = tuple([0] * d) if x is None else tuple(int(c) for c in x)
    if y is None:
        y = (x[0] + L + 1,) + x[1:]
    y = tuple(int(c) for c in y)
    if len(x) != d or len(y) != d:
        raise ValueError("x and y must have the lattice dimension")
    if int(np.max(np.abs(np.subtract(x, y)))) <= L:
        raise ValueError(f"overlapping boxes: |x - y|_inf must exceed L_k = {L}")
    grid = tuple(float(e) for e in np.atleast_1d(energies))
    params = MsaTrialSpec(spec, d, L, x, y, grid, float(gamma), tau)
    payloads = map_trials(partial(msa_trial, params), n_trials, seed, workers=workers)
    return summarize_msa(params, k, payloads, schedule.p)


def summarize_msa(params: MsaTrialSpec, k: int, payloads: Sequence[dict], p: float) -> MsaEstimate:
    hits = sum(1 for pl in payloads if pl["event"])
    return MsaEstimate(
        k=k,
        L=params.L,
        energies=params.energies,
        estimate=binomial_estimate(hits, len(payloads)),
        target=1.0 - float(params.L) ** (-2.0 * p),
    )
