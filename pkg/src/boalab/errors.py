"""Exception and warning types shared across the package."""


class BoaLabError(Exception):
    """Base class for all errors raised by boalab."""


class ConfigError(BoaLabError, ValueError):
    """Invalid model, grid or experiment configuration."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class DomainError(BoaLabError, ValueError):
    """A point lies outside the declared domain of a model."""


class GapViolation(BoaLabError):
    """The spectral gap of the selected bands fell below the threshold."""

    def __init__(self, message, min_gap=None, argmin=None):
        self.min_gap = min_gap
        self.argmin = argmin
        super().__init__(message)


class SingularNode(BoaLabError):
    """A quantity was requested at an excluded (singular) grid node."""


class BasisError(BoaLabError, ValueError):
    """A basis is not orthonormal or does not span an invariant subspace."""


class NonOrthogonal(BoaLabError, ValueError):
    """A gauge map is not orthogonal/unitary at some node."""


class GridMismatch(BoaLabError, ValueError):
    """Operands live on different grids."""


class EnsembleError(BoaLabError):
    """A generated ensemble state violates the kinetic-energy bound."""


class AccuracyError(BoaLabError):
    """A propagator could not reach the requested accuracy."""


class SupportError(BoaLabError):
    """Wavefunction mass entered an excluded region."""


class BoundaryError(BoaLabError, ValueError):
    """A wavepacket is too close to the grid boundary."""


class OrderError(BoaLabError, ValueError):
    """Unsupported effective-Hamiltonian order / band-count combination."""


class DegenerateFit(BoaLabError):
    """A log-log fit cannot be performed (non-positive data or too few points)."""


class GaugeSeamWarning(UserWarning):
    """Parallel transport around a closed loop did not return to the identity."""
