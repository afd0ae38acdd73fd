"""Exception and warning types shared across the package."""

from __future__ import annotations


class GridTopoError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GridTopoError):
    """A data structure violates one of its invariants."""


class DisconnectedNetworkError(ValidationError):
    """The network graph is not connected.

    Carries the set of bus indices unreachable from the slack bus.
    """

    def __init__(self, component: frozenset[int]):
        self.component = component
        buses = ", ".join(str(b) for b in sorted(component))
        super().__init__(f"network is disconnected; unreachable buses: {{{buses}}}")


class InsufficientDataError(GridTopoError):
    """Too few samples for the requested operation."""


class ModeMismatchError(GridTopoError):
    """A phasor-mode operation received magnitude data or vice versa."""


class UndefinedMIError(GridTopoError):
    """Mutual information is undefined (zero-variance input)."""


class SingularSystemError(GridTopoError):
    """The reduced admittance system cannot be factorized."""


class ParseError(GridTopoError):
    """A data file could not be parsed.

    ``line`` is 1-based and refers to the physical line in the file.
    """

    def __init__(self, path, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class SparsityCapWarning(UserWarning):
    """Every point on the regularization path exceeded the sparsity cap."""


class AmbiguousColumnWarning(UserWarning):
    """Perfectly collinear regressor columns; the selected support is not unique."""
