"""One-dimensional optimal transport on weighted domains.

The optimal map between densities on the weighted line is the monotone
rearrangement matching weighted CDFs.  From it we sample transport
rays, weighted Jacobians J_t = exp(psi(x) - psi(F_t x)) * F_t'(x), the
Monge-Ampere consistency residual, and the concavity margin of the
weighted-Jacobian interpolation inequality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import integrate as _sciint
from scipy.interpolate import PchipInterpolator

from .distortion import CurvatureDimension, beta
from .errors import DegenerateMapError, DomainError, MassMismatchError
from .model_spaces import WeightedSpace

__all__ = [
    "Density1D",
    "uniform_density",
    "power_density",
    "gaussian_density",
    "TransportMap1D",
    "optimal_map_1d",
    "interpolate",
    "weighted_jacobian_1d",
    "monge_ampere_residual",
    "displacement_interpolant_density",
    "TransportRay",
    "ray_from_map_1d",
    "homothety_ray",
    "geodesic_ray",
    "concavity_margin",
]

# 5-point Gauss-Legendre nodes/weights on [0, 1]
_GL_X = np.array(
    [0.046910077030668, 0.230765344947158, 0.5, 0.769234655052841, 0.953089922969332]
)
_GL_W = np.array(
    [0.118463442528095, 0.239314335249683, 0.284444444444444, 0.239314335249683, 0.118463442528095]
)


def _psi_scalar(ws: WeightedSpace, x):
    """Weight value for scalar/array abscissae on a 1-D space."""
    x = np.asarray(x, dtype=float)
    return ws.weight.value(x[..., None])


@dataclass(frozen=True)
class Density1D:
    """Density with respect to the weighted measure m = exp(-psi) dx."""

    support: tuple[float, float]
    fn: Callable[[np.ndarray], np.ndarray]
    total_mass: float

    def __post_init__(self):
        lo, hi = self.support
        if not hi > lo:
            raise DomainError("density support must be a nondegenerate interval")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.support
        inside = (x >= lo) & (x <= hi)
        vals = np.where(inside, self.fn(np.clip(x, lo, hi)), 0.0)
        return vals

    def mass_quadrature(self, ws: WeightedSpace) -> float:
        lo, hi = self.support
        val, _ = _sciint.quad(
            lambda x: float(self(x)) * float(np.exp(-_psi_scalar(ws, x))),
            lo,
            hi,
            limit=400,
        )
        return val


def _normalize(ws, fn, lo, hi):
    val, _ = _sciint.quad(
        lambda x: float(fn(np.asarray(x))) * float(np.exp(-_psi_scalar(ws, x))),
        lo,
        hi,
        limit=400,
    )
    if not val > 0:
        raise DomainError("density has nonpositive mass")
    return val


def uniform_density(ws: WeightedSpace, lo: float, hi: float) -> Density1D:
    """Constant density w.r.t. m on [lo, hi], normalized to unit mass."""
    mass = _normalize(ws, lambda x: np.ones_like(np.asarray(x, dtype=float)), lo, hi)
    return Density1D((lo, hi), lambda x: np.ones_like(np.asarray(x, dtype=float)) / mass, 1.0)


def power_density(ws: WeightedSpace, exponent: float, lo: float, hi: float) -> Density1D:
    """Density proportional to x**exponent w.r.t. m on [lo, hi] (needs lo > 0)."""
    if lo <= 0:
        raise DomainError("power densities need a positive left endpoint")
    raw = lambda x: np.asarray(x, dtype=float) ** exponent
    mass = _normalize(ws, raw, lo, hi)
    return Density1D((lo, hi), lambda x: raw(x) / mass, 1.0)


def gaussian_density(ws: WeightedSpace, mean: float, sd: float, width: float = 8.0) -> Density1D:
    """Density whose Lebesgue form rho * exp(-psi) is the N(mean, sd) pdf.

    Truncated at mean +/- width * sd; the discarded tail mass is far
    below the package's quadrature tolerances for width >= 8.
    """
    if sd <= 0:
        raise DomainError("standard deviation must be positive")
    lo, hi = mean - width * sd, mean + width * sd

    def fn(x):
        x = np.asarray(x, dtype=float)
        pdf = np.exp(-0.5 * ((x - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
        return pdf * np.exp(_psi_scalar(ws, x))

    return Density1D((lo, hi), fn, 1.0)


class _WeightedCDF:
    """Cumulative weighted mass on a uniform grid with per-cell
    Gauss-Legendre quadrature; evaluable and invertible to ~1e-13."""

    def __init__(self, ws: WeightedSpace, rho: Density1D, grid: int):
        lo, hi = rho.support
        self.lo, self.hi = lo, hi
        self.x = np.linspace(lo, hi, grid)
        self.rho = rho
        self.ws = ws
        h = self.x[1] - self.x[0]
        nodes = self.x[:-1, None] + h * _GL_X[None, :]
        dens = rho(nodes) * np.exp(-_psi_scalar(ws, nodes))
        cell = h * (dens * _GL_W[None, :]).sum(axis=1)
        self.F = np.concatenate([[0.0], np.cumsum(cell)])
        self.total = self.F[-1]
        if not self.total > 0:
            raise DomainError("density carries no mass on its support")
        # monotone-cubic inverse needs strictly increasing knots; skip
        # zero-mass cells (the Newton polish restores full accuracy)
        keep = np.concatenate([[True], np.diff(self.F) > 0.0])
        self._inv = PchipInterpolator(self.F[keep], self.x[keep], extrapolate=False)

    def _lebesgue(self, x):
        return self.rho(x) * np.exp(-_psi_scalar(self.ws, x))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, self.lo, self.hi)
        idx = np.clip(np.searchsorted(self.x, xc, side="right") - 1, 0, len(self.x) - 2)
        a = self.x[idx]
        w = xc - a
        nodes = a[..., None] + w[..., None] * _GL_X
        dens = self._lebesgue(nodes)
        part = w * (dens * _GL_W).sum(axis=-1)
        out = self.F[idx] + part
        return np.where(x >= self.hi, self.total, np.where(x <= self.lo, 0.0, out))

    def inverse(self, q):
        """Solve cdf(x) = q; monotone-cubic start, safeguarded Newton."""
        q = np.clip(np.asarray(q, dtype=float), 0.0, self.total)
        x = self._inv(q)
        x = np.where(np.isnan(x), 0.5 * (self.lo + self.hi), x)
        x = np.clip(x, self.lo, self.hi)
        lo = np.full_like(x, self.lo)
        hi = np.full_like(x, self.hi)
        for _ in range(60):
            f = self.cdf(x) - q
            lo = np.where(f <= 0, x, lo)
            hi = np.where(f > 0, x, hi)
            d = self._lebesgue(x)
            step = np.where(d > 0, f / np.maximum(d, 1e-300), 0.0)
            xn = x - step
            bad = (xn <= lo) | (xn >= hi) | (d <= 0)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            if np.max(np.abs(xn - x)) < 1e-15 * max(1.0, abs(self.hi)):
                x = xn
                break
            x = xn
        return x


@dataclass(frozen=True)
class TransportMap1D:
    """Monotone rearrangement between two weighted densities."""

    _cdf0: _WeightedCDF
    _cdf1: _WeightedCDF
    _ws: WeightedSpace
    rho0: Density1D
    rho1: Density1D

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        q = self._cdf0.cdf(x_arr) / self._cdf0.total * self._cdf1.total
        out = self._cdf1.inverse(q)
        return out if x_arr.ndim else float(out)

    def derivative(self, x):
        """T' from the mass-conservation ratio of Lebesgue densities."""
        x_arr = np.asarray(x, dtype=float)
        tx = self(x_arr)
        num = self.rho0(x_arr) * np.exp(-_psi_scalar(self._ws, x_arr))
        den = self.rho1(tx) * np.exp(-_psi_scalar(self._ws, tx))
        out = num / np.maximum(den, 1e-300)
        return out if x_arr.ndim else float(out)


def optimal_map_1d(
    ws: WeightedSpace, rho0: Density1D, rho1: Density1D, grid: int = 4096
) -> TransportMap1D:
    """Monotone optimal map T with CDF1(T(x)) = CDF0(x).

    Both inputs must carry the same total mass (tolerance 1e-6).
    """
    if grid < 16:
        raise DomainError("grid must have at least 16 points")
    c0 = _WeightedCDF(ws, rho0, grid)
    c1 = _WeightedCDF(ws, rho1, grid)
    if abs(c0.total - c1.total) > 1e-6 * max(1.0, abs(c0.total)):
        raise MassMismatchError(
            f"total masses differ: {c0.total:.9g} vs {c1.total:.9g}"
        )
    return TransportMap1D(c0, c1, ws, rho0, rho1)


def interpolate(T: TransportMap1D, x, t: float):
    """Displacement interpolant F_t(x) = (1-t) x + t T(x)."""
    x_arr = np.asarray(x, dtype=float)
    out = (1.0 - t) * x_arr + t * np.asarray(T(x_arr))
    return out if x_arr.ndim else float(out)


def weighted_jacobian_1d(ws: WeightedSpace, T: TransportMap1D, x, t: float):
    """J_t(x) = exp(psi(x) - psi(F_t x)) * ((1-t) + t T'(x)).

    Raises DegenerateMapError when the interpolated derivative is not
    positive.
    """
    x_arr = np.asarray(x, dtype=float)
    s = (1.0 - t) + t * np.asarray(T.derivative(x_arr))
    if np.any(s <= 0.0):
        raise DegenerateMapError("interpolated map has nonpositive derivative")
    ft = (1.0 - t) * x_arr + t * np.asarray(T(x_arr))
    out = np.exp(_psi_scalar(ws, x_arr) - _psi_scalar(ws, ft)) * s
    return out if x_arr.ndim else float(out)


def monge_ampere_residual(
    ws: WeightedSpace,
    rho0: Density1D,
    rho_t: Density1D,
    T: TransportMap1D,
    t: float,
    grid: int = 1000,
) -> float:
    """max |rho0(x) - rho_t(F_t(x)) * J_t(x)| over an interior grid."""
    lo, hi = rho0.support
    xs = np.linspace(lo, hi, grid + 2)[1:-1]
    jt = weighted_jacobian_1d(ws, T, xs, t)
    ft = interpolate(T, xs, t)
    return float(np.max(np.abs(rho0(xs) - rho_t(ft) * jt)))


def displacement_interpolant_density(
    ws: WeightedSpace, rho0: Density1D, T: TransportMap1D, t: float
) -> Density1D:
    """Pushforward density at time t, realized through the consistency
    relation rho_t(F_t(x)) = rho0(x) / J_t(x)."""
    lo, hi = rho0.support
    zlo = float(interpolate(T, lo, t))
    zhi = float(interpolate(T, hi, t))

    def fn(z):
        z_arr = np.atleast_1d(np.asarray(z, dtype=float))
        # invert the monotone interpolant by bisection
        a = np.full_like(z_arr, lo)
        b = np.full_like(z_arr, hi)
        for _ in range(80):
            mid = 0.5 * (a + b)
            fm = interpolate(T, mid, t)
            a = np.where(fm <= z_arr, mid, a)
            b = np.where(fm > z_arr, mid, b)
        x = 0.5 * (a + b)
        out = rho0(x) / weighted_jacobian_1d(ws, T, x, t)
        return out if np.asarray(z).ndim else out[0]

    return Density1D((zlo, zhi), fn, rho0.total_mass)


# ---------------------------------------------------------------------------
# transport rays
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TransportRay:
    """A [0,1]-parametrized transport geodesic with sampled weighted
    Jacobian; jacobian_sampler(0) == 1 by construction."""

    x0: np.ndarray
    x1: np.ndarray
    r: float
    interpolant: Callable[[float], np.ndarray]
    jacobian_sampler: Optional[Callable[[float], float]] = None


def ray_from_map_1d(ws: WeightedSpace, T: TransportMap1D, x: float) -> TransportRay:
    """Ray of the 1-D transport starting at abscissa x."""
    x = float(x)
    tx = float(T(x))

    def interpolant(t):
        return np.array([(1.0 - t) * x + t * tx])

    def jac(t):
        return float(weighted_jacobian_1d(ws, T, x, t))

    return TransportRay(np.array([x]), np.array([tx]), abs(tx - x), interpolant, jac)


def homothety_ray(ws: WeightedSpace, center, x, factor: float) -> TransportRay:
    """Euclidean scaling ray x -> center + factor * (x - center).

    The unweighted Jacobian of the interpolated scaling is
    ((1-t) + t*factor)**n; the weight contributes the usual pre/post
    value ratio.
    """
    if ws.space.kind != "euclidean":
        raise DomainError("homothety rays are Euclidean-only")
    if factor <= 0:
        raise DomainError("homothety factor must be positive")
    center = np.asarray(center, dtype=float)
    x = np.asarray(x, dtype=float)
    x1 = center + factor * (x - center)
    n = ws.space.n
    psi0 = float(ws.weight.value(x))

    def interpolant(t):
        s = (1.0 - t) + t * factor
        return center + s * (x - center)

    def jac(t):
        s = (1.0 - t) + t * factor
        return float(np.exp(psi0 - ws.weight.value(interpolant(t))) * s**n)

    return TransportRay(x, x1, float(np.linalg.norm(x1 - x)), interpolant, jac)


def geodesic_ray(space, x0, x1) -> TransportRay:
    """Bare geodesic ray without Jacobian data (geometry checks only)."""
    from .model_spaces import distance, intermediate_point

    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)

    def interpolant(t):
        return intermediate_point(space, x0, x1, t)

    return TransportRay(x0, x1, float(distance(space, x0, x1)), interpolant, None)


def concavity_margin(
    ws: WeightedSpace, cd: CurvatureDimension, ray: TransportRay, t: float
) -> float:
    """Margin of the weighted-Jacobian interpolation inequality.

    Returns J_t^{1/N} - [(1-t) beta_{1-t}(r)^{1/N} + t beta_t(r)^{1/N} J_1^{1/N}];
    nonnegative whenever the space satisfies the matching
    curvature-dimension bound along the ray.
    """
    if ray.jacobian_sampler is None:
        raise DomainError("ray carries no Jacobian data")
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"interpolation parameter t={t} outside [0, 1]")
    N = cd.N
    jt = float(ray.jacobian_sampler(t)) ** (1.0 / N)
    j1 = float(ray.jacobian_sampler(1.0)) ** (1.0 / N)
    r = ray.r
    rhs = 0.0
    if t < 1.0:
        rhs += (1.0 - t) * float(beta(cd, 1.0 - t, r)) ** (1.0 / N)
    if t > 0.0:
        rhs += t * float(beta(cd, t, r)) ** (1.0 / N) * j1
    return jt - rhs
