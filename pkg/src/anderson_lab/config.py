"""Experiment configuration: JSON schema, defaults and range validation."""

from __future__ import annotations

import hashlib
import os
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from . import jsonio
from .errors import ConfigError
from .lattice import PotentialSpec, ScaleSchedule, scale_schedule, spectrum_support

EXPERIMENTS = ("spectrum", "wegner", "minami", "regularity", "msa", "thin", "repulsion", "spacing", "simplicity")

# key -> (low, high, low_inclusive, high_inclusive); None means unbounded
RANGES: dict[str, tuple] = {
    "d": (1, 3, True, True),
    "L": (1, None, True, True),
    "ambient": (1, None, True, True),
    "coupling": (0.0, None, True, True),
    "L0": (3, None, True, True),
    "alpha": (1.0, 2.0, False, False),
    "gamma": (0.0, None, False, True),
    "gamma_prime": (0.0, None, False, True),
    "C1": (0.0, None, True, True),
    "C2": (0.0, None, False, True),
    "tau_center": (0.0, 1e-6, True, True),
    "tau_spec": (0.0, 1e-3, False, True),
    "energy_grid": (1, None, True, True),
    "trials": (1, None, True, True),
    "seed": (0, 2**64 - 1, True, True),
    "workers": (1, 1024, True, True),
    "gap_threshold": (0.0, None, True, True),
    "se_slack": (0.0, None, True, True),
    "spacing_window": (0.0, 0.5, False, True),
    "spacing_bins": (1, None, True, True),
    "min_spacings": (1, None, True, True),
}


def _range_text(lo, hi, li, hi_incl) -> str:
    left = "[" if li else "("
    right = "]" if hi_incl else ")"
    return f"{left}{'-inf' if lo is None else lo}, {'inf' if hi is None else hi}{right}"


class Distribution(BaseModel):
    model_config = ConfigDict(extra="forbid")
    family: Literal["uniform"] = "uniform"
    low: float = 0.0
    high: float = 1.0


class ExperimentConfig(BaseModel):
    """Every knob of a run. ``workers`` and ``out`` never affect results."""

    model_config = ConfigDict(extra="forbid")

    experiment: Literal[EXPERIMENTS]  # type: ignore[valid-type]
    d: int = 1
    L: int = 51
    ambient: Optional[int] = None
    coupling: float = 1.0
    distribution: Distribution = Distribution()
    interval: Optional[list[float]] = None
    energy: Optional[float] = None
    J_center: Optional[float] = None
    J_widths: list[float] = [0.02, 0.01, 0.005]
    L0: int = 7
    alpha: float = 1.3
    ks: list[int] = [1, 2, 3]
    p: Optional[float] = None
    gamma: float = 0.5
    gammas: list[float] = [0.25, 0.5]
    gamma_prime: float = 0.25
    C1: float = 1.0
    C2: float = 1.0
    tau_center: float = 1e-10
    tau_spec: float = 1e-12
    energy_grid: int = 32
    trials: int = 10000
    seed: int = 0
    workers: int = 1
    out: Optional[str] = None
    gap_threshold: float = 1e-12
    se_slack: float = 4.0
    bound_violation: Literal["warn", "fail"] = "warn"
    force: bool = False
    spacing_window: float = 0.1
    spacing_bins: int = 50
    min_spacings: int = 10000

    @model_validator(mode="after")
    def _ranges(self):
        for key, (lo, hi, li, hincl) in RANGES.items():
            v = getattr(self, key)
            if v is None:
                continue
            bad = (lo is not None and (v < lo if li else v <= lo)) or (
                hi is not None and (v > hi if hincl else v >= hi)
            )
            if bad:
                raise ValueError(f"{key}={v!r} outside expected range {_range_text(lo, hi, li, hincl)}")
        if self.L0 % 2 == 0:
            raise ValueError(f"L0={self.L0} must be odd")
        if not self.distribution.high > self.distribution.low:
            raise ValueError("distribution: high must exceed low")
        if self.interval is not None and (len(self.interval) != 2 or not self.interval[0] < self.interval[1]):
            raise ValueError(f"interval={self.interval!r} must be [a, b] with a < b")
        if any(w <= 0 for w in self.J_widths) or not self.J_widths:
            raise ValueError("J_widths must be a non-empty list of positive widths")
        if any(g <= 0 for g in self.gammas) or not self.gammas:
            raise ValueError("gammas must be a non-empty list of positive rates")
        if min(self.ks, default=0) < 0 or not self.ks:
            raise ValueError("ks must be a non-empty list of non-negative scale indices")
        if self.p is not None and not self.p > 2 * self.d:
            raise ValueError(f"p={self.p} outside expected range ({2 * self.d}, inf)")
        if not 0 < self.gamma_prime:
            raise ValueError("gamma_prime must be positive")
        return self

    # derived objects -------------------------------------------------------

    @property
    def potential(self) -> PotentialSpec:
        return PotentialSpec(self.distribution.family, self.distribution.low, self.distribution.high, self.coupling)

    @property
    def schedule(self) -> ScaleSchedule:
        k_needed = max(self.ks) + (1 if self.experiment in ("thin", "repulsion") else 0)
        return scale_schedule(self.L0, self.alpha, max(1, k_needed), self.p, self.d)

    @property
    def band_center(self) -> float:
        return self.coupling * 0.5 * (self.distribution.low + self.distribution.high)

    def host_interval(self) -> tuple[float, float]:
        """Configured I, else a per-experiment default around the band centre."""
        if self.interval is not None:
            return (float(self.interval[0]), float(self.interval[1]))
        if self.experiment == "repulsion":
            c = self.band_center
            return (c - 1.0, c + 1.0)
        lo, hi = spectrum_support(self.potential, self.d)
        q = 0.25 * (hi - lo)
        return (lo + q, hi - q)

    def target_energy(self) -> float:
        return self.band_center if self.energy is None else float(self.energy)

    def windows(self) -> list[tuple[float, float]]:
        c = self.band_center if self.J_center is None else self.J_center
        return [(c - w / 2.0, c + w / 2.0) for w in self.J_widths]

    def result_dict(self) -> dict:
        """Config fields that determine results (everything but workers/out)."""
        d = self.model_dump(mode="json")
        d.pop("workers")
        d.pop("out")
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(jsonio.dumps(self.result_dict()).encode()).hexdigest()

    def to_json(self) -> str:
        return jsonio.dumps(self.model_dump(mode="json"), indent=2)


def _format_error(exc: ValidationError) -> str:
    msgs = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "config"
        msg = err["msg"].removeprefix("Value error, ")
        msgs.append(msg if not err["loc"] else f"{loc}: {msg}")
    return "; ".join(msgs)


def parse_config(text: str | dict, **overrides) -> ExperimentConfig:
    """Validate a JSON document (or dict) and fill defaults.

    ``overrides`` replace top-level keys; ``None`` values are ignored.
    """
    try:
        data = jsonio.loads(text) if isinstance(text, str) else dict(text)
    except ValueError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from exc


def env_overrides() -> dict:
    out = {}
    if os.environ.get("ANDERSON_LAB_OUT"):
        out["out"] = os.environ["ANDERSON_LAB_OUT"]
    if os.environ.get("ANDERSON_LAB_WORKERS"):
        try:
            out["workers"] = int(os.environ["ANDERSON_LAB_WORKERS"])
        except ValueError as exc:
            raise ConfigError("ANDERSON_LAB_WORKERS must be an integer") from exc
    return out
