"""Shared exception types and warnings."""


class PhotongasError(Exception):
    """Base class for all package errors."""


class DegenerateFixedPoint(PhotongasError):
    """Transfer generator has a (near-)degenerate leading eigenvalue.

    Signals a reducible cMPS whose stationary density operator is not
    unique.
    """


class NoConvergence(PhotongasError):
    """Iterative ground-state search hit the iteration cap.

    The best result found so far is attached as ``self.result``.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DimensionOverflow(PhotongasError):
    """Requested Hilbert-space dimension exceeds the configured cap."""


class NonUniqueSteadyState(PhotongasError):
    """Liouvillian null space has dimension greater than one."""


class ZeroFlux(PhotongasError):
    """Second-order correlation requested at vanishing photon flux."""


class PlateauNotReached(PhotongasError):
    """G1 has not decayed to its coherent plateau at the end of the grid."""


class DegenerateScale(PhotongasError):
    """Scale optimization hit the zero-kinetic-energy limit.

    The limiting scale is attached as ``self.scale`` and the limiting
    energy as ``self.energy``.
    """

    def __init__(self, message, scale=None, energy=None):
        super().__init__(message)
        self.scale = scale
        self.energy = energy


class OutOfRange(PhotongasError):
    """Requested spatial point maps outside the sampled delay grid."""


class NegativeFluxEstimate(PhotongasError):
    """Recovered signal flux is at or below the statistical floor.

    The first-order correlation estimate is attached as ``self.g1`` so
    callers can still inspect it.
    """

    def __init__(self, message, g1=None, floor=None):
        super().__init__(message)
        self.g1 = g1
        self.floor = floor


class FitDiverged(PhotongasError):
    """Nonlinear least squares failed; best parameters attached."""

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


class SingularDesign(PhotongasError):
    """Voltage-map design matrix is (numerically) rank deficient."""


class NotConverged(PhotongasError):
    """Iterative tuner exceeded its iteration budget."""


class NoSolution(PhotongasError):
    """No qubit detuning realizes the requested dressed-state frequency."""


class InternalConsistencyError(PhotongasError):
    """A quantity that must be real carries a large imaginary residue."""


class TruncationWarning(UserWarning):
    """Steady state has non-negligible weight in the top truncated level."""
