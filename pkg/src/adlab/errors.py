"""Exception types shared across the package."""


class AdlabError(Exception):
    """Base class for all package-specific errors."""


class NonHermitianInput(AdlabError):
    """A matrix that must be Hermitian violates the Hermiticity tolerance."""


class DegenerateSpectrum(AdlabError):
    """An operation that needs a spectral gap met a (near-)degenerate matrix."""


class InvalidParameter(AdlabError):
    """A model parameter is outside its admissible range."""


class StepUnderflow(AdlabError):
    """The adaptive integrator needed a step below the hard floor (1e-12)."""


class GapClosure(AdlabError):
    """A dressed Hamiltonian in the projector iteration lost its spectral gap."""

    def __init__(self, level, message=None):
        self.level = level
        super().__init__(message or f"spectral gap lost at iteration level {level}")


class GridTooCoarse(AdlabError):
    """Finite-difference error estimate on the sampling grid exceeds budget."""


class NoConvergence(AdlabError):
    """An iterative solver did not converge within its iteration budget."""


class ZeroOnRealAxis(AdlabError):
    """The located complex gap zero sits (numerically) on the real axis."""


class BranchDiscontinuity(AdlabError):
    """Branch tracking along a contour detected an untrackable jump."""


class InsufficientData(AdlabError):
    """Too few data points for the requested fit."""


class NonPositiveAmplitude(AdlabError):
    """Exponential fitting requires strictly positive amplitudes."""


class FitDiverged(AdlabError):
    """A model fit ended with an unacceptably large residual."""


class WindowTooSmall(AdlabError):
    """Scattering coefficients still drift beyond the integration window."""


class EnergyOutsideWindow(AdlabError):
    """Requested energy violates the scattering condition E > sup E_high(x)."""


class MinimumOnBoundary(AdlabError):
    """A minimization landed on the edge of its bracketing window."""


class QuadratureUnderResolved(AdlabError):
    """Doubling the quadrature grid changed the result beyond tolerance."""


class NormalizationViolation(AdlabError):
    """Gaussian packet parameters violate the Re(conj(B)*A) = 1 condition."""


class ConfigInvalid(AdlabError):
    """An experiment configuration failed validation."""


class SchemaMismatch(AdlabError):
    """Two run manifests cannot be compared (different experiment/schema)."""
