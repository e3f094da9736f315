"""Exception hierarchy shared by every module of the package."""


class AndersonLabError(Exception):
    """Base class for all errors raised by anderson_lab."""


class BoxTooLargeError(AndersonLabError, ValueError):
    def __init__(self, n_sites: int, cap: int):
        super().__init__(f"box too large: {n_sites} sites exceeds cap {cap}")
        self.n_sites = n_sites
        self.cap = cap


class IncompleteRealizationError(AndersonLabError, ValueError):
    pass


class InvalidExponentError(AndersonLabError, ValueError):
    pass


class SolverFailure(AndersonLabError, RuntimeError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(f"solver failure: {message}" + ("" if index is None else f" (index {index})"))
        self.index = index


class ResolventSingular(AndersonLabError, ArithmeticError):
    """Raised when the energy sits on the box spectrum within tolerance."""

    def __init__(self, energy: float, distance: float, tolerance: float):
        super().__init__(
            f"resolvent singular: E={energy!r} is within {distance:.3e} of the spectrum "
            f"(tolerance {tolerance:.3e})"
        )
        self.energy = energy
        self.distance = distance
        self.tolerance = tolerance


class NoCenterError(AndersonLabError, ValueError):
    pass


class InsufficientSupportError(AndersonLabError, ValueError):
    pass


class OutsideProbeBoxError(AndersonLabError, ValueError):
    pass


class InsufficientDataError(AndersonLabError, ValueError):
    pass


class UnderpoweredEnsembleError(AndersonLabError, ValueError):
    pass


class ScaleTooLargeError(AndersonLabError, ValueError):
    pass


class ConfigError(AndersonLabError, ValueError):
    pass
