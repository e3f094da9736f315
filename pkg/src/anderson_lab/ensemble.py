"""Seed derivation, ordered parallel trial execution and binomial estimates.

Per-trial seeds are derived with the splitmix64 finaliser::

    z  = (master + (trial + 1) * 0x9E3779B97F4A7C15) mod 2**64
    z  = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 mod 2**64
    z  = (z ^ (z >> 27)) * 0x94D049BB133111EB mod 2**64
    z ^= z >> 31

so that any implementation can reproduce the trial streams bit-exactly.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

from scipy.stats import binomtest
from threadpoolctl import threadpool_limits

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN64 = 0x9E3779B97F4A7C15


def splitmix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, trial: int) -> int:
    return splitmix64((int(master_seed) + (int(trial) + 1) * GOLDEN64) & MASK64)


TrialFn = Callable[[int, int], Any]


def _init_worker() -> None:
    # pinned so that dense LAPACK results do not depend on the worker count
    threadpool_limits(1)


def _run_chunk(fn: TrialFn, master_seed: int, indices: Sequence[int]) -> list[Any]:
    return [fn(i, derive_seed(master_seed, i)) for i in indices]


def iter_trials(
    fn: TrialFn,
    n_trials: int,
    master_seed: int,
    *,
    workers: int = 1,
    chunksize: int | None = None,
) -> Iterator[tuple[int, int, Any]]:
    """Yield ``(trial, seed, fn(trial, seed))`` in trial order.

    ``fn`` must be picklable when ``workers > 1``. Results are identical for
    every worker count because each trial depends only on its derived seed.
    """
    if n_trials < 1:
        raise ValueError(f"ensemble size must be >= 1, got {n_trials}")
    workers = max(1, int(workers))
    if workers == 1:
        with threadpool_limits(1):
            for i in range(n_trials):
                s = derive_seed(master_seed, i)
                yield i, s, fn(i, s)
        return

    if chunksize is None:
        chunksize = max(1, min(64, n_trials // (4 * workers) or 1))
    chunks = [range(lo, min(lo + chunksize, n_trials)) for lo in range(0, n_trials, chunksize)]
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker) as pool:
        futures = [pool.submit(_run_chunk, fn, master_seed, c) for c in chunks]
        try:
            for c, fut in zip(chunks, futures):
                for i, payload in zip(c, fut.result()):
                    yield i, derive_seed(master_seed, i), payload
        finally:
            for fut in futures:
                fut.cancel()


def map_trials(fn: TrialFn, n_trials: int, master_seed: int, *, workers: int = 1) -> list[Any]:
    return [p for _, _, p in iter_trials(fn, n_trials, master_seed, workers=workers)]


@dataclass(frozen=True)
class BinomialEstimate:
    hits: int
    trials: int
    probability: float
    standard_error: float
    wilson_low: float
    wilson_high: float


def binomial_estimate(hits: int, trials: int, confidence: float = 0.95) -> BinomialEstimate:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = hits / trials
    ci = binomtest(int(hits), int(trials)).proportion_ci(confidence_level=confidence, method="wilson")
    return BinomialEstimate(
        hits=int(hits),
        trials=int(trials),
        probability=p,
        standard_error=math.sqrt(p * (1.0 - p) / trials),
        wilson_low=float(ci.low),
        wilson_high=float(ci.high),
    )


def monotone_within_intervals(estimates: Sequence[BinomialEstimate], direction: str) -> bool:
    """True unless two consecutive Wilson intervals separate against ``direction``.

    ``direction`` is ``"non-increasing"`` or ``"non-decreasing"``.
    """
    if direction not in ("non-increasing", "non-decreasing"):
        raise ValueError(direction)
    for prev, nxt in zip(estimates, estimates[1:]):
        if direction == "non-increasing" and nxt.wilson_low > prev.wilson_high:
            return False
        if direction == "non-decreasing" and nxt.wilson_high < prev.wilson_low:
            return False
    return True
