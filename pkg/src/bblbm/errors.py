"""Exception types shared across the package."""


class DomainError(ValueError):
    """A precondition on arguments or geometry was violated."""


class AntipodalError(DomainError):
    """Geodesic between antipodal sphere points is not unique."""


class MassMismatchError(DomainError):
    """Total masses of source and target densities differ."""


class DegenerateMapError(DomainError):
    """Interpolated transport map fails to be orientation preserving."""


class FocalPointError(DomainError):
    """Jacobi determinant vanished in the interior of the ray."""


class IllConditionedError(DomainError):
    """Fit basis is numerically rank deficient."""


class InconclusiveError(RuntimeError):
    """Monte Carlo error is too large to decide a verdict."""
