"""Ensemble experiments: Wegner and Minami counting, interval covers, thinness
and repulsion of localization centers, simplicity and level spacings.

Every experiment is split into a picklable per-trial function returning a
JSON-friendly payload and a ``summarize_*`` reducer over payloads, so that
the runner can persist trials and re-aggregate them from disk.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .ensemble import BinomialEstimate, binomial_estimate, map_trials
from .errors import InsufficientDataError, ScaleTooLargeError, UnderpoweredEnsembleError
from .lattice import (
    BoxSpec,
    PotentialSpec,
    ScaleSchedule,
    assemble_hamiltonian,
    make_box,
    sample_potential,
    spectrum_support,
)
from .localization import (
    DEFAULT_TAU_CENTER,
    center_mask,
    decay_rate_batch,
    localized_in_batch,
    tail_mass_batch,
)
from .regularity import epsilon_of_scale
from .spectral import count_in_interval, eigendecompose, eigenvalues, min_gap

MIN_ENSEMBLE = 100
MAX_AMBIENT_SITES = 20_000


# -- bounds -----------------------------------------------------------------


def wegner_bound(rho_sup: float, volume: int, width: float) -> float:
    return rho_sup * volume * width


def minami_bound(rho_sup: float, volume: int, width: float) -> float:
    return math.pi**2 * (rho_sup * volume * width) ** 2


def thinness_bound(
    rho_sup: float, width: float, eps: float, volume3: int, L: int, d: int, alpha: float, p: float, C1: float
) -> float:
    """rho (|J| + 2 eps) |Lambda_{3L}| + C1 L^(2 d alpha - 2 p)."""
    return rho_sup * (width + 2.0 * eps) * volume3 + C1 * float(L) ** (2 * d * alpha - 2 * p)


def repulsion_bound(rho_sup: float, dk: float, host_width: float, volume3: int) -> float:
    """pi^2 rho^2 (3 d_k)^2 (|I| / d_k) |Lambda_{3L_k}|^2."""
    return math.pi**2 * rho_sup**2 * (3.0 * dk) ** 2 * (host_width / dk) * volume3**2


@dataclass(frozen=True)
class StatsSummary:
    name: str
    params: dict
    estimate: BinomialEstimate
    bound: float
    bound_formula: str
    se_slack: float = 4.0

    @property
    def probability(self) -> float:
        return self.estimate.probability

    @property
    def bound_capped(self) -> float:
        return min(self.bound, 1.0)

    @property
    def bound_informative(self) -> bool:
        return self.bound <= 1.0

    @property
    def bound_satisfied(self) -> bool:
        """p_hat - slack * SE <= bound."""
        return self.estimate.probability - self.se_slack * self.estimate.standard_error <= self.bound

    def as_dict(self) -> dict:
        e = self.estimate
        return {
            "name": self.name,
            "params": self.params,
            "trials": e.trials,
            "hits": e.hits,
            "p_hat": e.probability,
            "standard_error": e.standard_error,
            "wilson_95": [e.wilson_low, e.wilson_high],
            "bound": self.bound,
            "bound_capped": self.bound_capped,
            "bound_formula": self.bound_formula,
            "bound_satisfied": self.bound_satisfied,
            "se_slack": self.se_slack,
        }


def _check_ensemble(n_trials: int, force: bool) -> None:
    if n_trials < 1:
        raise ValueError("ensemble size must be >= 1")
    if n_trials < MIN_ENSEMBLE and not force:
        raise UnderpoweredEnsembleError(
            f"underpowered ensemble: {n_trials} trials < {MIN_ENSEMBLE} (pass force=True to override)"
        )


# -- Wegner / Minami --------------------------------------------------------


@dataclass(frozen=True)
class CountTrialSpec:
    spec: PotentialSpec
    box: BoxSpec
    windows: tuple[tuple[float, float], ...]


def count_trial(params: CountTrialSpec, trial: int, seed: int) -> dict:
    v = sample_potential(params.spec, seed, params.box)
    w = eigenvalues(assemble_hamiltonian(params.box, v, params.spec.coupling))
    return {"counts": [count_in_interval(w, J) for J in params.windows]}


def _warn_outside(J: Sequence[float], spec: PotentialSpec, d: int) -> None:
    lo, hi = spectrum_support(spec, d)
    if J[0] < lo or J[1] > hi:
        warnings.warn(f"window {tuple(J)} is not inside the spectral support [{lo}, {hi}]", stacklevel=3)


def window_counts(
    box: BoxSpec,
    spec: PotentialSpec,
    windows: Sequence[Sequence[float]],
    n_trials: int,
    seed: int,
    *,
    workers: int = 1,
) -> list[dict]:
    params = CountTrialSpec(spec, box, tuple((float(a), float(b)) for a, b in windows))
    return map_trials(partial(count_trial, params), n_trials, seed, workers=workers)


def summarize_counts(
    kind: str, payloads: Sequence[dict], box: BoxSpec, spec: PotentialSpec, windows, se_slack: float = 4.0
) -> list[StatsSummary]:
    threshold = {"wegner": 1, "minami": 2}[kind]
    out = []
    for i, (a, b) in enumerate(windows):
        hits = sum(1 for pl in payloads if pl["counts"][i] >= threshold)
        width = float(b) - float(a)
        if kind == "wegner":
            bound = wegner_bound(spec.effective_density_sup, box.size, width)
            formula = "rho * |Lambda| * |J|, rho = rho_sup / lambda"
        else:
            bound = minami_bound(spec.effective_density_sup, box.size, width)
            formula = "pi^2 * rho^2 * |Lambda|^2 * |J|^2, rho = rho_sup / lambda"
        out.append(
            StatsSummary(
                name=kind,
                params={"J": [float(a), float(b)], "width": width, "volume": box.size, "coupling": spec.coupling},
                estimate=binomial_estimate(hits, len(payloads)),
                bound=bound,
                bound_formula=formula,
                se_slack=se_slack,
            )
        )
    return out


def run_wegner(box, spec, J, n_trials, seed, *, workers=1, force=False) -> StatsSummary:
    """P(at least one eigenvalue of H_box in J) against rho_sup |Lambda| |J|."""
    _check_ensemble(n_trials, force)
    _warn_outside(J, spec, box.dimension)
    pl = window_counts(box, spec, [J], n_trials, seed, workers=workers)
    return summarize_counts("wegner", pl, box, spec, [J])[0]


def run_minami(box, spec, J, n_trials, seed, *, workers=1, force=False) -> StatsSummary:
    """P(at least two eigenvalues of H_box in J) against pi^2 (rho_sup |Lambda| |J|)^2."""
    _check_ensemble(n_trials, force)
    _warn_outside(J, spec, box.dimension)
    pl = window_counts(box, spec, [J], n_trials, seed, workers=workers)
    return summarize_counts("minami", pl, box, spec, [J])[0]


# -- interval covers --------------------------------------------------------


@dataclass(frozen=True)
class IntervalCover:
    """Half-overlapping windows J(i, d) = (a + (i-1) d, a + (i+1) d), clipped to I."""

    host: tuple[float, float]
    d: float
    intervals: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.intervals.shape[0]

    def containing(self, J: Sequence[float]) -> int | None:
        """Index of a cover element containing the closed interval J, if any."""
        lo, hi = float(J[0]), float(J[1])
        left = self.intervals[:, 0]
        i = int(np.searchsorted(left, lo, side="right")) - 1
        for j in (i, i - 1):
            if 0 <= j < len(self) and left[j] <= lo and hi <= self.intervals[j, 1]:
                return j
        return None


def cover_intervals(I: Sequence[float], d: float) -> IntervalCover:
    a, b = float(I[0]), float(I[1])
    width = b - a
    if not (width > 0 and d > 0):
        raise ValueError(f"need a < b and d > 0, got I=({a}, {b}), d={d}")
    if d >= width:
        warnings.warn(f"cover width d={d} >= |I|={width}; returning I itself", stacklevel=2)
        return IntervalCover((a, b), d, np.array([[a, b]]))
    # J(n) reaches b once a + (n+1) d >= b; the slack absorbs division rounding
    n = max(1, math.ceil(width / d - 1.0 - 1e-9))
    i = np.arange(n, dtype=float)
    iv = np.stack([a + i * d, np.minimum(a + (i + 2.0) * d, b)], axis=1)
    iv[-1, 1] = b
    return IntervalCover((a, b), float(d), iv)


def _any_window_holds_two(sorted_e: np.ndarray, cover: IntervalCover) -> bool:
    if sorted_e.size < 2:
        return False
    lo = np.searchsorted(sorted_e, cover.intervals[:, 0], side="right")
    hi = np.searchsorted(sorted_e, cover.intervals[:, 1], side="left")
    return bool(np.any(hi - lo >= 2))


# -- ambient-box experiments ------------------------------------------------


def ambient_side(schedule: ScaleSchedule, ks: Sequence[int]) -> int:
    """Smallest odd side >= 3 L_{k+1} for the largest requested k."""
    kmax = max(ks)
    if kmax + 1 >= len(schedule.lengths):
        raise ValueError(f"schedule has no scale k={kmax + 1}")
    n = 3 * schedule.lengths[kmax + 1]
    return n if n % 2 else n + 1


@dataclass(frozen=True)
class ThinTrialSpec:
    spec: PotentialSpec
    d: int
    ambient: int
    lengths: tuple[int, ...]
    ks: tuple[int, ...]
    energy: float
    tol: float = DEFAULT_TAU_CENTER

    def width(self, k: int) -> float:
        return 1.0 / (float(self.lengths[k]) ** self.d * k**2)


def _ambient_spectral(spec: PotentialSpec, d: int, side: int, seed: int):
    box = make_box(d, (0,) * d, side, max_sites=MAX_AMBIENT_SITES)
    v = sample_potential(spec, seed, box)
    return box, eigendecompose(assemble_hamiltonian(box, v, spec.coupling))


def thin_trial(params: ThinTrialSpec, trial: int, seed: int) -> dict:
    box, sd = _ambient_spectral(params.spec, params.d, params.ambient, seed)
    w, V = sd.eigenvalues, sd.eigenvectors
    out = {}
    for k in params.ks:
        Lk = params.lengths[k]
        inner = make_box(params.d, (0,) * params.d, Lk)
        loc = localized_in_batch(V, box, inner, params.tol)
        half = params.width(k) / 2.0
        in_window = (w > params.energy - half) & (w < params.energy + half)
        sel = np.flatnonzero(loc)
        tails = tail_mass_batch(V[:, sel], box, make_box(params.d, (0,) * params.d, 3 * Lk))
        rates, _ = decay_rate_batch(V[:, sel], box, params.tol)
        out[str(k)] = {
            "hit": bool(np.any(loc & in_window)),
            "n_window": int(in_window.sum()),
            "n_localized": int(sel.size),
            "tails": [float(t) for t in tails],
            "rates": [float(r) for r in rates],
        }
    return out


@dataclass(frozen=True)
class TailCheck:
    k: int
    L: int
    median_rate: float
    gamma_prime: float
    threshold: float
    n_localized: int
    n_within: int

    @property
    def fraction(self) -> float:
        return self.n_within / self.n_localized if self.n_localized else float("nan")


@dataclass(frozen=True)
class ThinResult:
    summaries: list[StatsSummary]
    tails: list[TailCheck]


def summarize_thin(
    params: ThinTrialSpec,
    payloads: Sequence[dict],
    schedule: ScaleSchedule,
    *,
    gamma_prime: float,
    C1: float = 1.0,
    C2: float = 1.0,
    se_slack: float = 4.0,
) -> ThinResult:
    rho = params.spec.effective_density_sup
    d = params.d
    summaries, tails = [], []
    for k in params.ks:
        Lk = params.lengths[k]
        recs = [pl[str(k)] for pl in payloads]
        hits = sum(1 for r in recs if r["hit"])
        eps = epsilon_of_scale(C2, gamma_prime, Lk).value
        bound = thinness_bound(rho, params.width(k), eps, (3 * Lk) ** d, Lk, d, schedule.alpha, schedule.p, C1)
        summaries.append(
            StatsSummary(
                name="thin",
                params={
                    "k": k,
                    "L_k": Lk,
                    "J": [params.energy - params.width(k) / 2, params.energy + params.width(k) / 2],
                    "d_k": params.width(k),
                    "ambient": params.ambient,
                    "C1": C1,
                    "C1_normalization": "unnormalized",
                },
                estimate=binomial_estimate(hits, len(recs)),
                bound=bound,
                bound_formula="rho * (|J_k| + 2 eps_L) * |Lambda_3L| + C1 * L^(2 d alpha - 2 p), rho = rho_sup / lambda",
                se_slack=se_slack,
            )
        )
        rates = np.array([x for r in recs for x in r["rates"]], dtype=float)
        tm = np.array([x for r in recs for x in r["tails"]], dtype=float)
        rates = rates[np.isfinite(rates)]
        med = float(np.median(rates)) if rates.size else float("nan")
        gp = med / 2.0
        thr = math.exp(-gp * Lk / 2.0)
        tails.append(TailCheck(k, Lk, med, gp, thr, int(tm.size), int(np.sum(tm <= thr))))
    return ThinResult(summaries, tails)


def run_thin_centers(
    schedule: ScaleSchedule,
    spec: PotentialSpec,
    E: float,
    gamma_prime: float,
    ks: Sequence[int],
    n_trials: int,
    seed: int,
    *,
    d: int = 1,
    ambient: int | None = None,
    C1: float = 1.0,
    C2: float = 1.0,
    tol: float = DEFAULT_TAU_CENTER,
    workers: int = 1,
    force: bool = False,
) -> ThinResult:
    """Per-scale frequency of an ambient eigenvalue in J_k = (E - d_k/2, E + d_k/2),
    d_k = |Lambda_k|^-1 k^-2, whose center set meets Lambda_k(0)."""
    _check_ensemble(n_trials, force)
    if min(ks) < 1:
        raise ValueError("scale indices must be >= 1")
    side = ambient_side(schedule, ks) if ambient is None else int(ambient)
    if side**d > MAX_AMBIENT_SITES:
        raise ScaleTooLargeError(f"scale too large for desk run: ambient box of {side**d} sites")
    params = ThinTrialSpec(spec, d, side, schedule.lengths, tuple(ks), float(E), tol)
    payloads = map_trials(partial(thin_trial, params), n_trials, seed, workers=workers)
    return summarize_thin(params, payloads, schedule, gamma_prime=gamma_prime, C1=C1, C2=C2)


@dataclass(frozen=True)
class RepulsionTrialSpec:
    spec: PotentialSpec
    d: int
    ambient: int
    lengths: tuple[int, ...]
    ks: tuple[int, ...]
    host: tuple[float, float]
    tol: float = DEFAULT_TAU_CENTER

    def width(self, k: int) -> float:
        return 1.0 / (float(self.lengths[k]) ** (2 * self.d) * k**2)


def _pair_center_distances(V: np.ndarray, sites: np.ndarray, tol: float) -> np.ndarray:
    """min over X_i x X_j of the sup-distance, for all i < j (condensed order)."""
    mask = center_mask(V, tol)
    n = V.shape[1]
    iu, ju = np.triu_indices(n, k=1)
    if np.all(mask.sum(axis=0) == 1):
        c = sites[np.argmax(mask, axis=0)]
        return np.max(np.abs(c[iu] - c[ju]), axis=1)
    sets = [sites[np.flatnonzero(mask[:, j])] for j in range(n)]
    out = np.empty(iu.size, dtype=np.int64)
    for t, (i, j) in enumerate(zip(iu, ju)):
        out[t] = np.min(np.max(np.abs(sets[i][:, None, :] - sets[j][None, :, :]), axis=2))
    return out


def repulsion_trial(params: RepulsionTrialSpec, trial: int, seed: int) -> dict:
    box, sd = _ambient_spectral(params.spec, params.d, params.ambient, seed)
    w, V = sd.eigenvalues, sd.eigenvectors
    a, b = params.host
    in_host = np.flatnonzero((w > a) & (w < b))
    Vh, wh = V[:, in_host], w[in_host]
    out: dict = {"scales": {}}
    for k in params.ks:
        inner = make_box(params.d, (0,) * params.d, params.lengths[k])
        loc = localized_in_batch(Vh, box, inner, params.tol)
        cover = cover_intervals(params.host, params.width(k))
        out["scales"][str(k)] = {
            "double": _any_window_holds_two(wh[loc], cover),
            "n_localized": int(loc.sum()),
        }
    iu, ju = np.triu_indices(wh.size, k=1)
    out["gaps"] = [float(g) for g in np.abs(wh[ju] - wh[iu])]
    out["distances"] = [int(x) for x in _pair_center_distances(Vh, box.sites, params.tol)]
    return out


@dataclass(frozen=True)
class RepulsionResult:
    summaries: list[StatsSummary]
    gaps: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    trial_ids: np.ndarray = field(repr=False)

    @property
    def median_distance(self) -> float:
        return float(np.median(self.distances))

    def small_gap_median_distance(self, quantile: float = 0.1) -> float:
        """Median center distance among pairs whose gap is in the lowest ``quantile``."""
        cut = np.quantile(self.gaps, quantile)
        return float(np.median(self.distances[self.gaps <= cut]))


def summarize_repulsion(
    params: RepulsionTrialSpec, payloads: Sequence[dict], se_slack: float = 4.0
) -> RepulsionResult:
    rho = params.spec.effective_density_sup
    host_w = params.host[1] - params.host[0]
    summaries = []
    for k in params.ks:
        Lk = params.lengths[k]
        hits = sum(1 for pl in payloads if pl["scales"][str(k)]["double"])
        dk = params.width(k)
        summaries.append(
            StatsSummary(
                name="repulsion",
                params={"k": k, "L_k": Lk, "d_k": dk, "I": list(params.host), "ambient": params.ambient},
                estimate=binomial_estimate(hits, len(payloads)),
                bound=repulsion_bound(rho, dk, host_w, (3 * Lk) ** params.d),
                bound_formula="pi^2 * rho^2 * (3 d_k)^2 * (|I| / d_k) * |Lambda_3L|^2, rho = rho_sup / lambda",
                se_slack=se_slack,
            )
        )
    gaps = np.concatenate([np.asarray(pl["gaps"], float) for pl in payloads]) if payloads else np.empty(0)
    dist = np.concatenate([np.asarray(pl["distances"], np.int64) for pl in payloads]) if payloads else np.empty(0)
    ids = np.concatenate([np.full(len(pl["gaps"]), t, np.int64) for t, pl in enumerate(payloads)])
    return RepulsionResult(summaries, gaps, dist, ids)


def run_repulsion(
    schedule: ScaleSchedule,
    spec: PotentialSpec,
    I: Sequence[float],
    ks: Sequence[int],
    n_trials: int,
    seed: int,
    *,
    d: int = 1,
    ambient: int | None = None,
    tol: float = DEFAULT_TAU_CENTER,
    workers: int = 1,
    force: bool = False,
) -> RepulsionResult:
    """Per-scale frequency that some cover window J(i, d_k) of I, d_k = |Lambda_k|^-2 k^-2,
    holds two ambient eigenvalues both localized in Lambda_k(0)."""
    _check_ensemble(n_trials, force)
    side = ambient_side(schedule, ks) if ambient is None else int(ambient)
    if side**d > MAX_AMBIENT_SITES:
        raise ScaleTooLargeError(f"scale too large for desk run: ambient box of {side**d} sites")
    params = RepulsionTrialSpec(spec, d, side, schedule.lengths, tuple(ks), (float(I[0]), float(I[1])), tol)
    payloads = map_trials(partial(repulsion_trial, params), n_trials, seed, workers=workers)
    return summarize_repulsion(params, payloads)


# -- level spacings ---------------------------------------------------------


@dataclass(frozen=True)
class SpacingStatistics:
    spacings: np.ndarray = field(repr=False)
    bin_edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)
    rate: float
    ks_distance: float

    @property
    def n(self) -> int:
        return self.spacings.size


def unfold_spacings(levels: Iterable[np.ndarray], I: Sequence[float], window: float = 0.1) -> np.ndarray:
    """Spacings inside I divided by the local mean spacing.

    The mean spacing at a gap midpoint m is estimated from all pooled levels
    in (m - h, m + h) intersected with I, h = window * |I|.
    """
    a, b = float(I[0]), float(I[1])
    seqs = [np.sort(np.asarray(x, float)) for x in levels]
    seqs = [s[(s > a) & (s < b)] for s in seqs]
    pooled = np.sort(np.concatenate(seqs)) if seqs else np.empty(0)
    h = window * (b - a)
    out = []
    for s in seqs:
        if s.size < 2:
            continue
        m = 0.5 * (s[1:] + s[:-1])
        lo = np.maximum(m - h, a)
        hi = np.minimum(m + h, b)
        cnt = np.searchsorted(pooled, hi, "left") - np.searchsorted(pooled, lo, "right")
        density = cnt / ((hi - lo) * len(seqs))
        out.append(np.diff(s) * density)
    return np.concatenate(out) if out else np.empty(0)


def spacing_statistics(
    levels: Iterable[np.ndarray],
    I: Sequence[float],
    *,
    window: float = 0.1,
    bins: int = 50,
    min_spacings: int = 10_000,
) -> SpacingStatistics:
    """Unfolded spacing histogram, ML exponential rate and KS distance to Exp(1)."""
    s = unfold_spacings(levels, I, window)
    if s.size < min_spacings:
        raise InsufficientDataError(f"insufficient data: {s.size} spacings < {min_spacings}")
    edges = np.linspace(0.0, float(s.max()), bins + 1)
    counts, edges = np.histogram(s, bins=edges)
    return SpacingStatistics(
        spacings=s,
        bin_edges=edges,
        counts=counts,
        rate=float(1.0 / s.mean()),
        ks_distance=float(stats.kstest(s, "expon").statistic),
    )


@dataclass(frozen=True)
class LevelTrialSpec:
    spec: PotentialSpec
    box: BoxSpec
    host: tuple[float, float] | None = None
    threshold: float = 1e-12


def level_trial(params: LevelTrialSpec, trial: int, seed: int) -> dict:
    v = sample_potential(params.spec, seed, params.box)
    w = eigenvalues(assemble_hamiltonian(params.box, v, params.spec.coupling))
    out = {"min_gap": min_gap(w), "n_below": int(np.sum(np.diff(w) < params.threshold))}
    if params.host is not None:
        a, b = params.host
        out["levels"] = [float(x) for x in w[(w > a) & (w < b)]]
    return out


def run_spacing(box, spec, I, n_trials, seed, *, workers=1, **kw) -> SpacingStatistics:
    params = LevelTrialSpec(spec, box, (float(I[0]), float(I[1])))
    payloads = map_trials(partial(level_trial, params), n_trials, seed, workers=workers)
    return spacing_statistics([np.asarray(p["levels"]) for p in payloads], I, **kw)


# -- simplicity -------------------------------------------------------------


@dataclass(frozen=True)
class SimplicityStats:
    trials: int
    min_gap: float
    n_below: int
    n_gaps: int
    threshold: float


def simplicity_check(ensemble: Iterable, threshold: float) -> SimplicityStats:
    """Minimum consecutive gap over the ensemble and the number of gaps below ``threshold``.

    Items may be eigenvalue arrays or :class:`SpectralData`.
    """
    trials = 0
    lo = math.inf
    below = total = 0
    for item in ensemble:
        w = item.eigenvalues if hasattr(item, "eigenvalues") else np.asarray(item, float)
        g = np.diff(np.sort(w))
        trials += 1
        total += g.size
        if g.size:
            lo = min(lo, float(g.min()))
            below += int(np.sum(g < threshold)) if math.isfinite(threshold) else g.size
    return SimplicityStats(trials, lo, below, total, float(threshold))


def _levels_only(params: LevelTrialSpec, trial: int, seed: int) -> np.ndarray:
    v = sample_potential(params.spec, seed, params.box)
    return eigenvalues(assemble_hamiltonian(params.box, v, params.spec.coupling))


def run_simplicity(box, spec, n_trials, seed, threshold=1e-12, *, workers=1) -> SimplicityStats:
    params = LevelTrialSpec(spec, box, None, threshold)
    return simplicity_check(map_trials(partial(_levels_only, params), n_trials, seed, workers=workers), threshold)
