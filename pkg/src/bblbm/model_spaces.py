"""Constant-curvature model geometries with weights and measures.

Points are ambient coordinate vectors: R^n for the flat space, the
radius-R sphere embedded in R^(n+1), and the upper sheet of the
hyperboloid in Minkowski R^(n+1).  Every geometric operation broadcasts
over a leading batch axis, so ``x`` may be a single point of shape
``(d,)`` or a batch of shape ``(m, d)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate as _sciint
from scipy import special as _sp
from scipy.stats import qmc as _qmc

from .distortion import CurvatureDimension
from .errors import AntipodalError, DomainError

__all__ = [
    "ModelSpace",
    "euclidean",
    "sphere",
    "hyperbolic",
    "distance",
    "log_map",
    "exp_map",
    "intermediate_point",
    "extend",
    "geodesic_velocity",
    "Weight",
    "ConstantWeight",
    "RadialPowerWeight",
    "LinearWeight",
    "QuadraticWeight",
    "WeightedSpace",
    "Region",
    "GeodesicBall",
    "Box",
    "Interval",
    "HalfSpace",
    "measure",
    "integrate",
    "z_membership",
    "z_membership_mask",
    "bounding_region_for_z",
    "distance_bounds",
    "n_ricci_along",
]

_EMBED_TOL = 1e-12


# ---------------------------------------------------------------------------
# spaces and geodesics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSpace:
    """One of the three simply connected constant-curvature geometries."""

    kind: str  # "euclidean" | "sphere" | "hyperbolic"
    n: int
    sec: float

    def __post_init__(self):
        if self.n < 1:
            raise DomainError("dimension must be >= 1")
        if self.kind == "euclidean" and self.sec != 0.0:
            raise DomainError("euclidean space has sec = 0")
        if self.kind == "sphere" and not self.sec > 0.0:
            raise DomainError("sphere requires sec > 0")
        if self.kind == "hyperbolic" and not self.sec < 0.0:
            raise DomainError("hyperbolic space requires sec < 0")
        if self.kind not in ("euclidean", "sphere", "hyperbolic"):
            raise DomainError(f"unknown space kind {self.kind!r}")

    @property
    def ambient_dim(self) -> int:
        return self.n if self.kind == "euclidean" else self.n + 1

    @property
    def radius(self) -> float:
        """Embedding radius 1/sqrt(|sec|) for the curved spaces."""
        if self.kind == "euclidean":
            return math.inf
        return 1.0 / math.sqrt(abs(self.sec))

    @property
    def diameter(self) -> float:
        return math.pi * self.radius if self.kind == "sphere" else math.inf


def euclidean(n: int) -> ModelSpace:
    return ModelSpace("euclidean", n, 0.0)


def sphere(n: int, sec: float = 1.0) -> ModelSpace:
    return ModelSpace("sphere", n, sec)


def hyperbolic(n: int, sec: float = -1.0) -> ModelSpace:
    return ModelSpace("hyperbolic", n, sec)


def _mink_dot(x, y):
    """Minkowski pairing -x0*y0 + sum_i xi*yi along the last axis."""
    s = np.sum(x * y, axis=-1)
    return s - 2.0 * x[..., 0] * y[..., 0]


def check_point(space: ModelSpace, x) -> None:
    """Validate the embedding constraint of a point (or batch)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != space.ambient_dim:
        raise DomainError(
            f"expected ambient dimension {space.ambient_dim}, got {x.shape[-1]}"
        )
    if space.kind == "euclidean":
        if not np.all(np.isfinite(x)):
            raise DomainError("nonfinite coordinates")
        return
    R2 = space.radius**2
    if space.kind == "sphere":
        err = np.abs(np.sum(x * x, axis=-1) - R2)
    else:
        err = np.abs(_mink_dot(x, x) + R2)
        if np.any(x[..., 0] <= 0.0):
            raise DomainError("hyperboloid points must lie on the upper sheet")
    if np.any(err > _EMBED_TOL * max(1.0, R2)):
        raise DomainError("point violates the embedding constraint")


def distance(space: ModelSpace, x, y):
    """Geodesic distance; broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if space.kind == "euclidean":
        return np.linalg.norm(x - y, axis=-1)
    R = space.radius
    if space.kind == "sphere":
        c = np.clip(np.sum(x * y, axis=-1) / R**2, -1.0, 1.0)
        return R * np.arccos(c)
    c = np.maximum(-_mink_dot(x, y) / R**2, 1.0)
    return R * np.arccosh(c)


def log_map(space: ModelSpace, x, y):
    """Tangent vector v at x with exp_x(v) = y and |v| = d(x, y).

    On the sphere this requires d(x, y) < pi * R; antipodal pairs raise
    AntipodalError because the minimizing geodesic is not unique.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if space.kind == "euclidean":
        return y - x
    R = space.radius
    d = distance(space, x, y)
    if space.kind == "sphere":
        if np.any(d >= math.pi * R * (1.0 - 1e-12)):
            raise AntipodalError("antipodal points have no unique geodesic")
        proj = y - (np.sum(x * y, axis=-1, keepdims=True) / R**2) * x
        norm = np.linalg.norm(proj, axis=-1, keepdims=True)
    else:
        proj = y + (_mink_dot(x, y)[..., None] / R**2) * x
        norm = np.sqrt(np.maximum(_mink_dot(proj, proj), 0.0))[..., None]
    small = norm[..., 0] < 1e-300
    unit = np.where(small[..., None], 0.0, proj / np.where(small[..., None], 1.0, norm))
    return d[..., None] * unit


def exp_map(space: ModelSpace, x, v):
    """Geodesic exponential; |v| is the arclength travelled."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if space.kind == "euclidean":
        return x + v
    R = space.radius
    if space.kind == "sphere":
        s = np.linalg.norm(v, axis=-1, keepdims=True)
    else:
        s = np.sqrt(np.maximum(_mink_dot(v, v), 0.0))[..., None]
    small = s[..., 0] < 1e-300
    unit = np.where(small[..., None], 0.0, v / np.where(small[..., None], 1.0, s))
    ang = s / R
    if space.kind == "sphere":
        return np.cos(ang) * x + np.sin(ang) * R * unit
    return np.cosh(ang) * x + np.sinh(ang) * R * unit


def intermediate_point(space: ModelSpace, x, y, t: float):
    """Point z on the minimizing geodesic with d(x, z) = t * d(x, y)."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"interpolation parameter t={t} outside [0, 1]")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if t == 0.0:
        return x.copy()
    if t == 1.0:
        return y.copy()
    return exp_map(space, x, t * log_map(space, x, y))


def extend(space: ModelSpace, x, z, s: float):
    """Continue the geodesic from x through z up to parameter s >= 1.

    The result y satisfies intermediate_point(space, x, y, 1/s) == z.
    On the sphere the extension must stay inside the unique-geodesic
    range s * d(x, z) < pi * R.
    """
    if s < 1.0:
        raise DomainError(f"extension parameter s={s} must be >= 1")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    v = log_map(space, x, z)
    if space.kind == "sphere":
        d = distance(space, x, z)
        if np.any(s * d >= math.pi * space.radius * (1.0 - 1e-12)):
            raise DomainError("extension exits the sphere's unique-geodesic range")
    return exp_map(space, x, s * v)


def geodesic_velocity(space: ModelSpace, x0, x1, t: float):
    """Velocity gamma'(t) of the [0,1]-parametrized geodesic x0 -> x1."""
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    if space.kind == "euclidean":
        return x1 - x0
    v0 = log_map(space, x0, x1)
    if space.kind == "sphere":
        d = np.linalg.norm(v0, axis=-1, keepdims=True)
    else:
        d = np.sqrt(np.maximum(_mink_dot(v0, v0), 0.0))[..., None]
    small = d[..., 0] < 1e-300
    unit = np.where(small[..., None], 0.0, v0 / np.where(small[..., None], 1.0, d))
    R = space.radius
    ang = t * d / R
    if space.kind == "sphere":
        tangent = -np.sin(ang) * x0 / R + np.cos(ang) * unit
    else:
        tangent = np.sinh(ang) * x0 / R + np.cosh(ang) * unit
    return d * tangent


def tangent_basis(space: ModelSpace, x) -> np.ndarray:
    """Orthonormal basis of the tangent space at a single point x.

    Returns an array of shape (n, ambient_dim); for the hyperboloid the
    basis is orthonormal for the Minkowski pairing (which is positive
    definite on the tangent space).
    """
    x = np.asarray(x, dtype=float)
    if space.kind == "euclidean":
        return np.eye(space.n)
    d = space.ambient_dim
    dot = (lambda a, b: _mink_dot(a, b)) if space.kind == "hyperbolic" else (
        lambda a, b: np.sum(a * b, axis=-1)
    )
    xnorm2 = dot(x, x)  # +R^2 on the sphere, -R^2 on the hyperboloid
    basis = []
    for i in range(d):
        v = np.zeros(d)
        v[i] = 1.0
        v = v - (dot(v, x) / xnorm2) * x
        for b in basis:
            v = v - dot(v, b) * b
        nrm2 = dot(v, v)
        if nrm2 > 1e-18:
            basis.append(v / math.sqrt(nrm2))
        if len(basis) == space.n:
            break
    if len(basis) != space.n:
        raise DomainError("failed to build a tangent basis")
    return np.array(basis)


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


class Weight:
    """Smooth weight psi with value and geodesic directional derivatives.

    ``dderiv(x, v)`` is d/ds psi(exp_x(s v)) at s = 0 and ``dderiv2``
    the second derivative along the same geodesic.  The nontrivial
    concrete weights below are Euclidean; curved-space instances use
    constant weights.
    """

    is_constant = False

    def value(self, x):  # pragma: no cover - interface
        raise NotImplementedError

    def dderiv(self, x, v):  # pragma: no cover - interface
        raise NotImplementedError

    def dderiv2(self, x, v):  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantWeight(Weight):
    c: float = 0.0
    is_constant = True

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.c)

    def dderiv(self, x, v):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    def dderiv2(self, x, v):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class RadialPowerWeight(Weight):
    """psi(x) = -kappa * log ||x||, i.e. weighted density ||x||^kappa."""

    kappa: float

    def value(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return -self.kappa * np.log(np.linalg.norm(x, axis=-1))

    def dderiv(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        return -self.kappa * np.sum(x * v, axis=-1) / r2

    def dderiv2(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        xv = np.sum(x * v, axis=-1)
        vv = np.sum(v * v, axis=-1)
        return -self.kappa * (vv * r2 - 2.0 * xv**2) / r2**2


@dataclass(frozen=True)
class LinearWeight(Weight):
    """psi(x) = <a, x> + b."""

    a: tuple[float, ...]
    b: float = 0.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return x @ np.asarray(self.a, dtype=float) + self.b

    def dderiv(self, x, v):
        v = np.asarray(v, dtype=float)
        return v @ np.asarray(self.a, dtype=float)

    def dderiv2(self, x, v):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])


@dataclass(frozen=True)
class QuadraticWeight(Weight):
    """psi(x) = a * ||x||^2 / 2."""

    a: float = 1.0

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * self.a * np.sum(x * x, axis=-1)

    def dderiv(self, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        return self.a * np.sum(x * v, axis=-1)

    def dderiv2(self, x, v):
        v = np.asarray(v, dtype=float)
        return self.a * np.sum(v * v, axis=-1)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------


class Region:
    """Measurable subset with an indicator; sampleable kinds add a
    volume-uniform sampler and the exact unweighted volume."""

    space: ModelSpace

    def contains(self, pts) -> np.ndarray:
        raise NotImplementedError

    def signed_violation(self, pts) -> np.ndarray:
        """<= 0 inside, > 0 outside; comparable to distances."""
        raise NotImplementedError


class SampleableRegion(Region):
    @property
    def volume(self) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def sample_qmc(self, size: int, seed: int) -> np.ndarray:
        """Low-discrepancy sample when available; seeded-uniform fallback."""
        return self.sample(np.random.default_rng([seed, 977]), size)


def _unit_sphere_area(k: int) -> float:
    """Area of the unit sphere S^(k-1) in R^k."""
    return 2.0 * math.pi ** (k / 2.0) / _sp.gamma(k / 2.0)


@dataclass(frozen=True)
class GeodesicBall(SampleableRegion):
    space: ModelSpace
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        check_point(self.space, self.center)
        if not self.radius > 0.0:
            raise DomainError("ball radius must be positive")
        if self.radius > self.space.diameter:
            raise DomainError("ball radius exceeds the space diameter")

    def contains(self, pts):
        return distance(self.space, pts, self.center) <= self.radius

    def signed_violation(self, pts):
        return distance(self.space, pts, self.center) - self.radius

    @property
    def volume(self) -> float:
        sp, R = self.space, self.space.radius
        n = sp.n
        if sp.kind == "euclidean":
            return math.pi ** (n / 2.0) / _sp.gamma(n / 2.0 + 1.0) * self.radius**n
        theta = self.radius / R
        if sp.kind == "sphere":
            integrand = lambda u: math.sin(u) ** (n - 1)
        else:
            integrand = lambda u: math.sinh(u) ** (n - 1)
        val, _ = _sciint.quad(integrand, 0.0, theta, limit=200)
        return _unit_sphere_area(n) * R**n * val

    def _colatitude_icdf(self):
        sp = self.space
        theta = self.radius / sp.radius
        grid = np.linspace(0.0, theta, 4097)
        if sp.kind == "sphere":
            pdf = np.sin(grid) ** (sp.n - 1)
        else:
            pdf = np.sinh(grid) ** (sp.n - 1)
        cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(grid))])
        cdf /= cdf[-1]
        return grid, cdf

    def sample(self, rng, size):
        sp = self.space
        if sp.kind == "euclidean":
            w = rng.standard_normal((size, sp.n))
            w /= np.linalg.norm(w, axis=-1, keepdims=True)
            rad = self.radius * rng.random(size) ** (1.0 / sp.n)
            return self.center + rad[:, None] * w
        grid, cdf = self._colatitude_icdf()
        theta = np.interp(rng.random(size), cdf, grid)
        basis = tangent_basis(sp, self.center)
        w = rng.standard_normal((size, sp.n))
        w /= np.linalg.norm(w, axis=-1, keepdims=True)
        dirs = w @ basis
        return exp_map(sp, self.center, (theta * sp.radius)[:, None] * dirs)

    def sample_qmc(self, size, seed):
        sp = self.space
        if sp.kind != "euclidean":
            return super().sample_qmc(size, seed)
        eng = _qmc.Sobol(d=sp.n + 1, scramble=True, seed=seed)
        u = eng.random(size)
        w = _sp.ndtri(np.clip(u[:, 1:], 1e-12, 1.0 - 1e-12))
        w /= np.linalg.norm(w, axis=-1, keepdims=True)
        rad = self.radius * u[:, 0] ** (1.0 / sp.n)
        return self.center + rad[:, None] * w


@dataclass(frozen=True)
class Box(SampleableRegion):
    """Axis-aligned box; Euclidean spaces only."""

    space: ModelSpace
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        if self.space.kind != "euclidean":
            raise DomainError("boxes are Euclidean-only")
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        if self.lo.shape != (self.space.n,) or self.hi.shape != (self.space.n,):
            raise DomainError("box corners must match the space dimension")
        if not np.all(self.hi > self.lo):
            raise DomainError("box must have positive extent in every axis")

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=-1)

    def signed_violation(self, pts):
        pts = np.asarray(pts, dtype=float)
        return np.max(np.maximum(self.lo - pts, pts - self.hi), axis=-1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    def sample(self, rng, size):
        u = rng.random((size, self.space.n))
        return self.lo + u * (self.hi - self.lo)

    def sample_qmc(self, size, seed):
        eng = _qmc.Sobol(d=self.space.n, scramble=True, seed=seed)
        return self.lo + eng.random(size) * (self.hi - self.lo)


def Interval(lo: float, hi: float) -> Box:
    """1-D box on the Euclidean line; points have shape (..., 1)."""
    return Box(euclidean(1), np.array([lo]), np.array([hi]))


@dataclass(frozen=True)
class HalfSpace(Region):
    """Open half space {x : x[axis] > threshold}; domain restriction only."""

    space: ModelSpace
    axis: int
    threshold: float = 0.0

    def __post_init__(self):
        if self.space.kind != "euclidean":
            raise DomainError("half-space domains are Euclidean-only")
        if not 0 <= self.axis < self.space.n:
            raise DomainError("half-space axis out of range")

    def contains(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts[..., self.axis] > self.threshold

    def signed_violation(self, pts):
        pts = np.asarray(pts, dtype=float)
        return self.threshold - pts[..., self.axis]


# ---------------------------------------------------------------------------
# weighted spaces and Monte Carlo measure
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightedSpace:
    """Model space equipped with m = exp(-psi) * vol, optionally
    restricted to an open geodesically convex domain."""

    space: ModelSpace
    weight: Weight = field(default_factory=ConstantWeight)
    domain: Optional[Region] = None

    def density(self, pts) -> np.ndarray:
        """exp(-psi), zeroed outside the domain restriction."""
        with np.errstate(over="ignore"):
            d = np.exp(-self.weight.value(pts))
        if self.domain is not None:
            d = np.where(self.domain.contains(pts), d, 0.0)
        return d


_BLOCK = 1 << 16


def integrate(
    ws: WeightedSpace,
    fieldfn: Callable[[np.ndarray], np.ndarray],
    bounding: SampleableRegion,
    n_samples: int,
    rng_seed: int,
    *,
    workers: int | None = None,
) -> tuple[float, float]:
    """Monte Carlo estimate of the weighted integral of ``fieldfn``.

    Returns (value, std_err) for integral of fieldfn(x) * exp(-psi(x))
    over the bounding region.  Sampling is split into fixed 65536-point
    blocks seeded as (rng_seed, block_index), so the result for a given
    (rng_seed, n_samples) is identical regardless of the worker count.
    """
    if n_samples < 1000:
        raise DomainError("n_samples must be at least 1000")
    if rng_seed < 0:
        raise DomainError("rng_seed must be nonnegative")
    vol = bounding.volume
    if not vol > 0.0:
        raise DomainError("bounding region has zero volume")

    blocks = []
    done = 0
    while done < n_samples:
        m = min(_BLOCK, n_samples - done)
        blocks.append((len(blocks), m))
        done += m

    def run_block(args):
        idx, m = args
        rng = np.random.default_rng([rng_seed, idx])
        pts = bounding.sample(rng, m)
        vals = np.asarray(fieldfn(pts), dtype=float) * ws.density(pts)
        return float(vals.sum()), float(np.sum(vals * vals))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_block, blocks))
    else:
        parts = [run_block(b) for b in blocks]

    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    mean = s1 / n_samples
    var = max(s2 / n_samples - mean**2, 0.0)
    if n_samples > 1:
        var *= n_samples / (n_samples - 1.0)
    return vol * mean, vol * math.sqrt(var / n_samples)


def measure(
    ws: WeightedSpace,
    indicator: Callable[[np.ndarray], np.ndarray],
    bounding: SampleableRegion,
    n_samples: int,
    rng_seed: int,
    *,
    workers: int | None = None,
) -> tuple[float, float]:
    """Weighted measure of {indicator} estimated over ``bounding``.

    The indicator's support must be contained in the bounding region;
    the estimate is unbiased and deterministic for a fixed seed.
    """
    return integrate(
        ws,
        lambda pts: np.asarray(indicator(pts), dtype=float),
        bounding,
        n_samples,
        rng_seed,
        workers=workers,
    )


# ---------------------------------------------------------------------------
# intermediate-point sets
# ---------------------------------------------------------------------------


def distance_bounds(space: ModelSpace, A: Region, B: Region):
    """Closed-form (inf d, sup d) over A x B, or None when unavailable."""
    if isinstance(A, GeodesicBall) and isinstance(B, GeodesicBall):
        dc = float(distance(space, A.center, B.center))
        lo = max(0.0, dc - A.radius - B.radius)
        hi = dc + A.radius + B.radius
        if space.kind == "sphere":
            hi = min(hi, space.diameter)
        return lo, hi
    if isinstance(A, Box) and isinstance(B, Box):
        gap = np.maximum(0.0, np.maximum(B.lo - A.hi, A.lo - B.hi))
        far = np.maximum(np.abs(B.hi - A.lo), np.abs(A.hi - B.lo))
        return float(np.linalg.norm(gap)), float(np.linalg.norm(far))
    return None


def _exact_interpolant_region(space: ModelSpace, A: Region, B: Region, t: float):
    """Exact Z_t(A, B) for flat convex pairs: (1-t)A + tB."""
    if space.kind != "euclidean":
        return None
    if isinstance(A, GeodesicBall) and isinstance(B, GeodesicBall):
        return GeodesicBall(
            space,
            (1.0 - t) * A.center + t * B.center,
            (1.0 - t) * A.radius + t * B.radius,
        )
    if isinstance(A, Box) and isinstance(B, Box):
        return Box(space, (1.0 - t) * A.lo + t * B.lo, (1.0 - t) * A.hi + t * B.hi)
    return None


def bounding_region_for_z(space: ModelSpace, A: Region, B: Region, t: float) -> Region:
    """A sampleable region guaranteed to contain Z_t(A, B)."""
    exact = _exact_interpolant_region(space, A, B, t)
    if exact is not None:
        return exact
    bounds = distance_bounds(space, A, B)
    if isinstance(A, GeodesicBall) and bounds is not None:
        rad = t * bounds[1] + A.radius
        if space.kind == "sphere":
            rad = min(rad, space.diameter)
        return GeodesicBall(space, A.center, rad)
    raise DomainError("no automatic bounding region for these region shapes")


def _extend_batch(space, x, Z, s):
    """extend() over a batch of z, returning (points, ok) instead of raising."""
    v = log_map(space, x, Z)
    ok = np.ones(Z.shape[0], dtype=bool)
    if space.kind == "sphere":
        d = distance(space, x, Z)
        ok = s * d < math.pi * space.radius * (1.0 - 1e-12)
        v = np.where(ok[:, None], v, 0.0)
    return exp_map(space, x, s * v), ok


def _clamp_to_ball(ball: GeodesicBall, pts):
    """Project points onto the closed ball along radial geodesics."""
    sp = ball.space
    d = distance(sp, pts, ball.center)
    inside = d <= ball.radius
    if np.all(inside):
        return pts
    v = log_map(sp, ball.center, pts)
    scale = np.where(inside, 1.0, ball.radius / np.maximum(d, 1e-300))
    return exp_map(sp, ball.center, scale[:, None] * v)


def _refine_witness(space, A, B, t, Z, X0, rounds=10, proposals=8, seed=1234):
    """Batched pattern search improving witness candidates x in A.

    Z: (m, d) query points, X0: (m, d) current best witnesses.  Returns
    the boolean mask of queries for which a verified witness was found.
    """
    if not isinstance(A, GeodesicBall):
        return np.zeros(Z.shape[0], dtype=bool)
    rng = np.random.default_rng([seed, 424243])
    X = X0.copy()

    def paired_violation(Xc):
        v = _paired_log(space, Xc, Z)
        ok = np.ones(Z.shape[0], dtype=bool)
        if space.kind == "sphere":
            d = distance(space, Xc, Z)
            ok = (d / t) < math.pi * space.radius * (1.0 - 1e-12)
        Y = _paired_exp(space, Xc, v / t)
        viol = B.signed_violation(Y)
        return np.where(ok, viol, np.inf)

    best = paired_violation(X)
    found = best <= 0.0
    for k in range(rounds):
        step = A.radius * 2.0 ** (-k)
        for _ in range(proposals):
            dirs = rng.standard_normal(Z.shape)
            if space.kind != "euclidean":
                # project proposals onto the tangent space at X
                if space.kind == "sphere":
                    xn = np.sum(X * dirs, axis=-1, keepdims=True) / space.radius**2
                    dirs = dirs - xn * X
                else:
                    xn = _mink_dot(X, dirs)[..., None] / (-space.radius**2)
                    dirs = dirs - xn * X
            nrm = np.linalg.norm(dirs, axis=-1, keepdims=True)
            dirs = dirs / np.maximum(nrm, 1e-300)
            cand = _paired_exp(space, X, step * dirs)
            cand = _clamp_to_ball(A, cand)
            viol = paired_violation(cand)
            better = viol < best
            X = np.where(better[:, None], cand, X)
            best = np.where(better, viol, best)
        found = found | (best <= 0.0)
    return found


def _paired_log(space, X, Z):
    """log_map for row-paired batches X[i] -> Z[i]."""
    if space.kind == "euclidean":
        return Z - X
    R = space.radius
    d = distance(space, X, Z)
    if space.kind == "sphere":
        proj = Z - (np.sum(X * Z, axis=-1, keepdims=True) / R**2) * X
        norm = np.linalg.norm(proj, axis=-1, keepdims=True)
    else:
        proj = Z + (_mink_dot(X, Z)[..., None] / R**2) * X
        norm = np.sqrt(np.maximum(_mink_dot(proj, proj), 0.0))[..., None]
    unit = proj / np.maximum(norm, 1e-300)
    return d[..., None] * unit


def _paired_exp(space, X, V):
    if space.kind == "euclidean":
        return X + V
    R = space.radius
    if space.kind == "sphere":
        s = np.linalg.norm(V, axis=-1, keepdims=True)
        unit = V / np.maximum(s, 1e-300)
        return np.cos(s / R) * X + np.sin(s / R) * R * unit
    s = np.sqrt(np.maximum(_mink_dot(V, V), 0.0))[..., None]
    unit = V / np.maximum(s, 1e-300)
    return np.cosh(s / R) * X + np.sinh(s / R) * R * unit


def z_membership_mask(
    space: ModelSpace,
    A: Region,
    B: Region,
    t: float,
    Z,
    trials: int = 4096,
    rng_seed: int = 0,
    refine: bool = True,
) -> np.ndarray:
    """Vectorized membership test z in Z_t(A, B) for a batch of points.

    A found witness certifies membership; a False entry only means no
    witness was found (one-sided).  Flat ball/ball and box/box pairs are
    decided exactly via the Minkowski combination.
    """
    if not 0.0 < t < 1.0:
        raise DomainError(f"interpolation parameter t={t} outside (0, 1)")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    exact = _exact_interpolant_region(space, A, B, t)
    if exact is not None:
        return exact.contains(Z)

    mask = np.asarray(A.contains(Z) & B.contains(Z), dtype=bool)

    # rigorous necessary conditions prune far-field queries
    bounds = distance_bounds(space, A, B)
    feasible = ~mask
    if bounds is not None and isinstance(A, GeodesicBall) and isinstance(B, GeodesicBall):
        lo, hi = bounds
        slack = 1e-9
        dA = distance(space, Z, A.center)
        dB = distance(space, Z, B.center)
        feasible &= dA <= t * hi + A.radius + slack
        feasible &= dA >= t * lo - A.radius - slack
        feasible &= dB <= (1.0 - t) * hi + B.radius + slack
        feasible &= dB >= (1.0 - t) * lo - B.radius - slack

    active_idx = np.nonzero(feasible)[0]
    if active_idx.size == 0:
        return mask

    if isinstance(A, SampleableRegion):
        X = A.sample_qmc(trials, rng_seed)
    else:
        raise DomainError("witness search requires a sampleable source region")

    best_viol = np.full(active_idx.size, np.inf)
    best_x = np.empty((active_idx.size, Z.shape[1]))
    s = 1.0 / t
    for i in range(trials):
        if active_idx.size == 0:
            break
        Y, ok = _extend_batch(space, X[i], Z[active_idx], s)
        viol = np.where(ok, B.signed_violation(Y), np.inf)
        hit = viol <= 0.0
        if np.any(hit):
            mask[active_idx[hit]] = True
        better = viol < best_viol
        if np.any(better):
            best_viol = np.where(better, viol, best_viol)
            best_x[better] = X[i]
        keep = ~hit
        active_idx = active_idx[keep]
        best_viol = best_viol[keep]
        best_x = best_x[keep]

    if refine and space.kind != "euclidean" and active_idx.size:
        scale = B.radius if isinstance(B, GeodesicBall) else 1.0
        band = best_viol <= 0.5 * scale
        if np.any(band):
            idx = active_idx[band]
            found = _refine_witness(
                space, A, B, t, Z[idx], best_x[band], seed=rng_seed
            )
            mask[idx[found]] = True
    return mask


def z_membership(
    space: ModelSpace,
    A: Region,
    B: Region,
    t: float,
    z,
    trials: int = 4096,
    rng_seed: int = 0,
) -> bool:
    """One-sided test that z is a t-intermediate point of A and B.

    True means a witness pair (x, y) in A x B with z in Z_t(x, y) was
    exhibited; False means none was found within the trial budget.
    """
    return bool(
        z_membership_mask(space, A, B, t, np.asarray(z, dtype=float)[None, :],
                          trials=trials, rng_seed=rng_seed)[0]
    )


# ---------------------------------------------------------------------------
# N-Ricci curvature along rays
# ---------------------------------------------------------------------------


def n_ricci_along(ws: WeightedSpace, cd: CurvatureDimension, gamma, t: float) -> float:
    """N-Ricci curvature Ric_{m,N}(gamma'(t)) along a transport ray.

    gamma is parametrized on [0, 1], so |gamma'| equals the ray length.
    Requires N > n, or N = n with a constant weight.
    """
    sp = ws.space
    n, N = sp.n, cd.N
    if N < n:
        raise DomainError(f"N={N} must be >= space dimension n={n}")
    if N == n:
        if not ws.weight.is_constant:
            raise DomainError("N = n requires a constant weight")
        return (n - 1) * sp.sec * gamma.r**2
    pt = gamma.interpolant(t)
    v = geodesic_velocity(sp, gamma.x0, gamma.x1, t)
    hess = float(ws.weight.dderiv2(pt, v))
    dpsi = float(ws.weight.dderiv(pt, v))
    return (n - 1) * sp.sec * gamma.r**2 + hess - dpsi**2 / (N - n)
