"""Exception hierarchy.  Numerical failures map to CLI exit code 3."""


class FeynsliceError(Exception):
    pass


class ChartDomainError(FeynsliceError, ValueError):
    """Point outside the admissible region of the canonical chart."""


class NoUniqueGeodesicError(FeynsliceError, ValueError):
    """Endpoints too far apart for a unique minimizing geodesic."""


class NumericalError(FeynsliceError, ArithmeticError):
    pass


class ShootingError(NumericalError):
    """Newton shooting did not converge."""


class ChartEscapeError(ShootingError):
    """A trajectory left the admissible chart region."""


class MomentumBoundError(ShootingError):
    """Converged initial momentum violates the bound ``|eta| < mu``."""


class ConjugatePointError(NumericalError):
    """Near-singular endpoint Jacobian (conjugate point)."""


class AssemblyError(NumericalError):
    """Shooting failed for a grid pair inside the cutoff support."""


class TruncationError(FeynsliceError, ValueError):
    """Requested basis truncation exceeds what the grid can resolve."""


class ResolutionError(NumericalError):
    """Quadrature too coarse for the requested Galerkin matrix."""
