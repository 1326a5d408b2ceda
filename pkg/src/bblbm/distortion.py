"""Distortion coefficients of curvature-dimension comparison geometry.

``cofactor`` is the sine-type solution s(r) of s'' = -(K/(N-1)) s with
s(0) = 0, s'(0) = 1.  ``beta`` is the volume-distortion ratio
``(s(t*r) / (t*s(r)))**(N-1)`` built from it; it is identically 1 in
the flat case and carries all the curvature correction otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

__all__ = ["CurvatureDimension", "cofactor", "beta", "beta_monotone_in_r"]


@dataclass(frozen=True)
class CurvatureDimension:
    """Curvature lower bound K paired with an upper dimension bound N >= 1."""

    K: float
    N: float

    def __post_init__(self):
        if not self.N >= 1.0:
            raise DomainError(f"dimension bound N={self.N} must be >= 1")

    @property
    def conjugate_radius(self) -> float:
        """Radius at which the K > 0 coefficient degenerates (inf otherwise)."""
        if self.K > 0.0:
            return math.pi * math.sqrt((self.N - 1.0) / self.K)
        return math.inf


def cofactor(cd: CurvatureDimension, r):
    """Comparison cofactor s(r); accepts a scalar or an array of radii.

    Raises DomainError for negative radii, for K > 0 radii at or beyond
    the conjugate radius, and for K != 0 with N = 1 (the equation
    degenerates).
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("radius must be nonnegative")
    K, N = cd.K, cd.N
    if K == 0.0:
        out = arr.copy()
    else:
        if N <= 1.0:
            raise DomainError("K != 0 requires N > 1")
        if K > 0.0:
            if np.any(arr >= cd.conjugate_radius):
                raise DomainError(
                    f"radius >= conjugate radius {cd.conjugate_radius:.6g} for K={K}, N={N}"
                )
            w = math.sqrt(K / (N - 1.0))
            out = np.sin(w * arr) / w
        else:
            w = math.sqrt(-K / (N - 1.0))
            out = np.sinh(w * arr) / w
    return out if arr.ndim else float(out)


def beta(cd: CurvatureDimension, t: float, r):
    """Distortion coefficient (s(t*r)/(t*s(r)))**(N-1) for t in (0, 1].

    ``beta(cd, t, 0) == 1.0`` by continuous extension, and the flat
    coefficient is exactly (bitwise) 1 for every admissible input.
    """
    if not 0.0 < t <= 1.0:
        raise DomainError(f"interpolation parameter t={t} outside (0, 1]")
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError("radius must be nonnegative")
    if cd.K == 0.0:
        out = np.ones_like(arr)
    else:
        out = np.ones_like(arr)
        pos = arr > 0.0
        rs = arr[pos]
        out[pos] = (cofactor(cd, t * rs) / (t * cofactor(cd, rs))) ** (cd.N - 1.0)
    return out if arr.ndim else float(out)


def beta_monotone_in_r(
    cd: CurvatureDimension, t: float, interval: tuple[float, float], samples: int
) -> bool:
    """Check monotonicity of r -> beta(cd, t, r) on a sampling grid.

    Returns True iff the sampled coefficient is nondecreasing for
    K > 0, nonincreasing for K < 0, and exactly constant 1 for K = 0.
    """
    if samples < 2:
        raise DomainError("need at least 2 samples")
    lo, hi = interval
    if not 0.0 <= lo <= hi:
        raise DomainError(f"invalid interval [{lo}, {hi}]")
    vals = beta(cd, t, np.linspace(lo, hi, int(samples)))
    if cd.K > 0.0:
        return bool(np.all(np.diff(vals) >= 0.0))
    if cd.K < 0.0:
        return bool(np.all(np.diff(vals) <= 0.0))
    return bool(np.all(vals == 1.0))
