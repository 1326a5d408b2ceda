"""End-to-end verification of the integral and set inequalities.

verify_bbl checks the functional inequality (hypothesis sampling plus
Monte Carlo integrals); verify_bm checks the intermediate-point set
inequality; rigidity_scan ties equality detection to the curvature and
weight-profile diagnostics that equality forces.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np
from scipy import integrate as _sciint

from .distortion import CurvatureDimension, beta
from .errors import DomainError, InconclusiveError
from .means import bbl_exponent, p_mean
from .model_spaces import (
    Box,
    GeodesicBall,
    Region,
    SampleableRegion,
    WeightedSpace,
    bounding_region_for_z,
    distance,
    distance_bounds,
    integrate,
    measure,
    z_membership_mask,
    _clamp_to_ball,
)
from .ode import fit_weight_profile
from .transport import homothety_ray

__all__ = [
    "Homothety",
    "BBLInstance",
    "BMInstance",
    "VerificationReport",
    "RigidityConclusion",
    "RigidityDiagnosis",
    "check_bbl_hypothesis",
    "verify_bbl",
    "bm_bbl_functions",
    "theta",
    "verify_bm",
    "check_equal_sets",
    "rigidity_scan",
]


def _subseed(seed: int, k: int) -> int:
    """Derive a deterministic nonnegative child seed."""
    state = np.random.SeedSequence([int(seed), int(k)]).generate_state(1, np.uint64)
    return int(state[0] >> np.uint64(1))


@dataclass(frozen=True)
class Homothety:
    """Declared scaling map x -> center + factor * (x - center)."""

    center: np.ndarray
    factor: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.factor <= 0:
            raise DomainError("homothety factor must be positive")


@dataclass(frozen=True)
class BBLInstance:
    """Functional-inequality instance: three fields, supports, and the
    mean exponent."""

    ws: WeightedSpace
    cd: CurvatureDimension
    f0: Callable[[np.ndarray], np.ndarray]
    f1: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    t: float
    p: float
    support_f0: SampleableRegion
    support_f1: SampleableRegion
    support_h: SampleableRegion
    normalized: bool = False


@dataclass(frozen=True)
class BMInstance:
    """Set-inequality instance A, B at interpolation time t."""

    ws: WeightedSpace
    cd: CurvatureDimension
    A: SampleableRegion
    B: SampleableRegion
    t: float
    homothety: Optional[Homothety] = None


@dataclass(frozen=True)
class VerificationReport:
    lhs: float
    rhs: float
    margin: float
    std_err: float
    passed: bool
    equality: bool
    samples: int
    seed: int
    notes: tuple[str, ...] = ()
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "std_err": self.std_err,
            "pass": self.passed,
            "equality": self.equality,
            "samples": self.samples,
            "seed": self.seed,
            "notes": list(self.notes),
            "extra": dict(sorted(self.extra.items())),
        }


def _report(lhs, rhs, std_err, samples, seed, equality_rel_tol, notes=(), extra=None):
    margin = lhs - rhs
    scale = max(abs(lhs), abs(rhs), 1e-300)
    equality = abs(margin) <= equality_rel_tol * scale + 3.0 * std_err
    passed = margin >= -3.0 * std_err or equality
    return VerificationReport(
        lhs=float(lhs),
        rhs=float(rhs),
        margin=float(margin),
        std_err=float(std_err),
        passed=bool(passed),
        equality=bool(equality),
        samples=int(samples),
        seed=int(seed),
        notes=tuple(notes),
        extra=extra or {},
    )


# ---------------------------------------------------------------------------
# functional inequality
# ---------------------------------------------------------------------------


def check_bbl_hypothesis(inst: BBLInstance, n_pairs: int, seed: int) -> list:
    """Sample the pointwise hypothesis; return the violating pairs.

    Each violation is a dict with the pair, the intermediate point, the
    value of h there, and the distorted mean it fell below (tolerance
    1e-9).
    """
    from .model_spaces import intermediate_point

    if n_pairs < 1:
        raise DomainError("need at least one sampled pair")
    space = inst.ws.space
    rng_x = np.random.default_rng([_subseed(seed, 11), 0])
    rng_y = np.random.default_rng([_subseed(seed, 12), 0])
    X = inst.support_f0.sample(rng_x, n_pairs)
    Y = inst.support_f1.sample(rng_y, n_pairs)
    d = np.asarray(distance(space, X, Y), dtype=float)
    Z = intermediate_point(space, X, Y, inst.t)
    f0x = np.asarray(inst.f0(X), dtype=float)
    f1y = np.asarray(inst.f1(Y), dtype=float)
    hz = np.asarray(inst.h(Z), dtype=float)
    ba = np.asarray(beta(inst.cd, 1.0 - inst.t, d), dtype=float)
    bb = np.asarray(beta(inst.cd, inst.t, d), dtype=float)
    violations = []
    for i in range(n_pairs):
        bound = p_mean(inst.p, inst.t, f0x[i] / ba[i], f1y[i] / bb[i])
        if hz[i] < bound - 1e-9:
            violations.append(
                {
                    "x": X[i].tolist(),
                    "y": Y[i].tolist(),
                    "z": Z[i].tolist(),
                    "h": float(hz[i]),
                    "bound": float(bound),
                }
            )
    return violations


def verify_bbl(
    inst: BBLInstance,
    n_samples: int,
    seed: int,
    *,
    hypothesis_pairs: int = 2048,
    skip_hypothesis: bool = False,
    equality_rel_tol: float = 1e-4,
    workers: int | None = None,
) -> VerificationReport:
    """Monte Carlo check of the integral inequality.

    lhs is the integral of h; rhs is the p/(1+Np)-mean of the integrals
    of f0 and f1.  The pointwise hypothesis is sampled first unless
    explicitly skipped (recorded in the report notes).
    """
    notes = []
    if skip_hypothesis:
        notes.append("hypothesis check skipped by caller")
    else:
        violations = check_bbl_hypothesis(inst, hypothesis_pairs, seed)
        if violations:
            raise DomainError(
                f"pointwise hypothesis fails on {len(violations)} of "
                f"{hypothesis_pairs} sampled pairs"
            )
        notes.append(f"hypothesis held on {hypothesis_pairs} sampled pairs")
    ws = inst.ws
    i0, e0 = integrate(ws, inst.f0, inst.support_f0, n_samples, _subseed(seed, 1), workers=workers)
    i1, e1 = integrate(ws, inst.f1, inst.support_f1, n_samples, _subseed(seed, 2), workers=workers)
    lhs, el = integrate(ws, inst.h, inst.support_h, n_samples, _subseed(seed, 3), workers=workers)
    q = bbl_exponent(inst.p, inst.cd.N)
    rhs = p_mean(q, inst.t, i0, i1)
    # first-order error propagation through the outer mean
    dr0 = abs(p_mean(q, inst.t, i0 + e0, i1) - rhs) if i0 > 0 else 0.0
    dr1 = abs(p_mean(q, inst.t, i0, i1 + e1) - rhs) if i1 > 0 else 0.0
    std_err = math.sqrt(el**2 + dr0**2 + dr1**2)
    extra = {"integral_f0": i0, "integral_f1": i1, "outer_exponent": q}
    return _report(lhs, rhs, std_err, n_samples, seed, equality_rel_tol, notes, extra)


def bm_bbl_functions(
    bm: BMInstance,
    z_trials: int = 4096,
    seed: int = 0,
    *,
    normalized: bool = False,
    norm_samples: int = 100_000,
) -> BBLInstance:
    """The indicator-based functional instance induced by a set instance.

    The plain form uses f0 = beta_{1-t}(Theta) 1_A, f1 = beta_t(Theta) 1_B,
    h = 1_{Z_t} with the sup mean; the normalized form divides by the
    measures, takes h = c 1_{Z_t} at the matching level c, and uses the
    boundary exponent -1/N, so a valid instance has both integrals equal
    to one.
    """
    space = bm.ws.space
    th = theta(space, bm.A, bm.B, bm.cd.K)
    ba = float(beta(bm.cd, 1.0 - bm.t, th))
    bb = float(beta(bm.cd, bm.t, th))
    bound = bounding_region_for_z(space, bm.A, bm.B, bm.t)
    member_seed = _subseed(seed, 21)

    def h_ind(pts):
        return z_membership_mask(
            space, bm.A, bm.B, bm.t, pts, trials=z_trials, rng_seed=member_seed
        ).astype(float)

    if not normalized:
        return BBLInstance(
            ws=bm.ws,
            cd=bm.cd,
            f0=lambda pts: ba * bm.A.contains(pts).astype(float),
            f1=lambda pts: bb * bm.B.contains(pts).astype(float),
            h=h_ind,
            t=bm.t,
            p=math.inf,
            support_f0=bm.A,
            support_f1=bm.B,
            support_h=bound,
        )
    mA, _ = integrate(bm.ws, lambda p: np.ones(p.shape[0]), bm.A, norm_samples, _subseed(seed, 22))
    mB, _ = integrate(bm.ws, lambda p: np.ones(p.shape[0]), bm.B, norm_samples, _subseed(seed, 23))
    N = bm.cd.N
    level = ((1.0 - bm.t) * (ba * mA) ** (1.0 / N) + bm.t * (bb * mB) ** (1.0 / N)) ** (-N)
    return BBLInstance(
        ws=bm.ws,
        cd=bm.cd,
        f0=lambda pts: bm.A.contains(pts).astype(float) / mA,
        f1=lambda pts: bm.B.contains(pts).astype(float) / mB,
        h=lambda pts: level * h_ind(pts),
        t=bm.t,
        p=-1.0 / N,
        support_f0=bm.A,
        support_f1=bm.B,
        support_h=bound,
        normalized=True,
    )


# ---------------------------------------------------------------------------
# set inequality
# ---------------------------------------------------------------------------


def _clamp(region: Region, pts):
    if isinstance(region, GeodesicBall):
        return _clamp_to_ball(region, pts)
    if isinstance(region, Box):
        return np.clip(pts, region.lo, region.hi)
    return pts


def theta(
    space,
    A: Region,
    B: Region,
    K: float,
    n_pairs: int = 4096,
    seed: int = 0,
) -> float:
    """Distance extremum over A x B fed into the distortion coefficients:
    the infimum for K >= 0 and the supremum for K < 0.

    Ball and box pairs are evaluated in closed form; otherwise the
    extremum is sampled and then sharpened by a clamped pattern search.
    """
    bounds = distance_bounds(space, A, B)
    if bounds is not None:
        return bounds[0] if K >= 0.0 else bounds[1]
    if not isinstance(A, SampleableRegion) or not isinstance(B, SampleableRegion):
        raise DomainError("theta needs sampleable regions without closed form")
    rng = np.random.default_rng([_subseed(seed, 31), 0])
    X = A.sample(rng, n_pairs)
    Y = B.sample(rng, n_pairs)
    d = np.asarray(distance(space, X, Y), dtype=float)
    pick = int(np.argmin(d) if K >= 0.0 else np.argmax(d))
    x, y = X[pick], Y[pick]
    best = float(d[pick])
    sign = 1.0 if K >= 0.0 else -1.0
    scale = best if best > 0 else 1.0
    for k in range(12):
        step = scale * 2.0 ** (-k)
        for _ in range(16):
            xc = _clamp(A, x + rng.normal(0, step, size=x.shape))
            yc = _clamp(B, y + rng.normal(0, step, size=y.shape))
            if not (A.contains(xc[None])[0] and B.contains(yc[None])[0]):
                continue
            dc = float(distance(space, xc, yc))
            if sign * dc < sign * best:
                best, x, y = dc, xc, yc
    return max(best, 0.0)


def _quad_mass(ws: WeightedSpace, lo: float, hi: float):
    val, err = _sciint.quad(
        lambda x: float(ws.density(np.array([x]))), lo, hi, limit=400
    )
    return val, err


def _verify_bm_quadrature(inst: BMInstance, seed: int, equality_rel_tol: float):
    """Deterministic path for 1-D interval instances."""
    t, N = inst.t, inst.cd.N
    aLo, aHi = float(inst.A.lo[0]), float(inst.A.hi[0])
    bLo, bHi = float(inst.B.lo[0]), float(inst.B.hi[0])
    zLo = (1.0 - t) * aLo + t * bLo
    zHi = (1.0 - t) * aHi + t * bHi
    mZ, eZ = _quad_mass(inst.ws, zLo, zHi)
    mA, eA = _quad_mass(inst.ws, aLo, aHi)
    mB, eB = _quad_mass(inst.ws, bLo, bHi)
    if inst.cd.K >= 0.0:
        th = max(0.0, bLo - aHi, aLo - bHi)
    else:
        th = max(bHi - aLo, aHi - bLo)
    ba = float(beta(inst.cd, 1.0 - t, th))
    bb = float(beta(inst.cd, t, th))
    lhs = mZ ** (1.0 / N)
    rhs = (1.0 - t) * ba ** (1.0 / N) * mA ** (1.0 / N) + t * bb ** (1.0 / N) * mB ** (
        1.0 / N
    )
    dl = eZ / N * mZ ** (1.0 / N - 1.0) if mZ > 0 else eZ
    da = eA / N * mA ** (1.0 / N - 1.0) if mA > 0 else eA
    db = eB / N * mB ** (1.0 / N - 1.0) if mB > 0 else eB
    std_err = math.sqrt(dl**2 + da**2 + db**2)
    extra = {"m_A": mA, "m_B": mB, "m_Z": mZ, "theta": th, "method": "quadrature"}
    return _report(
        lhs, rhs, std_err, 0, seed, equality_rel_tol,
        ("deterministic quadrature on 1-D intervals",), extra,
    )


def verify_bm(
    inst: BMInstance,
    n_samples: int,
    z_trials: int = 4096,
    seed: int = 0,
    *,
    equality_rel_tol: float = 1e-4,
    workers: int | None = None,
) -> VerificationReport:
    """Check the set inequality on one instance.

    lhs is m(Z_t(A, B))^{1/N} with membership decided by witness search
    (one-sided: a failed search undercounts, so a tiny negative margin
    may be a false negative; raise z_trials in that case).  rhs combines
    the distortion coefficients at the distance extremum with the
    measures of A and B.
    """
    if not 0.0 < inst.t < 1.0:
        raise DomainError(f"interpolation parameter t={inst.t} outside (0, 1)")
    space = inst.ws.space
    if (
        space.kind == "euclidean"
        and space.n == 1
        and isinstance(inst.A, Box)
        and isinstance(inst.B, Box)
    ):
        return _verify_bm_quadrature(inst, seed, equality_rel_tol)

    t, N = inst.t, inst.cd.N
    th = theta(space, inst.A, inst.B, inst.cd.K, seed=_subseed(seed, 41))
    ba = float(beta(inst.cd, 1.0 - t, th))
    bb = float(beta(inst.cd, t, th))
    ones = lambda pts: np.ones(pts.shape[0])
    mA, eA = integrate(inst.ws, ones, inst.A, n_samples, _subseed(seed, 1), workers=workers)
    mB, eB = integrate(inst.ws, ones, inst.B, n_samples, _subseed(seed, 2), workers=workers)
    bound = bounding_region_for_z(space, inst.A, inst.B, t)
    member_seed = _subseed(seed, 4)

    def indicator(pts):
        return z_membership_mask(
            space, inst.A, inst.B, t, pts, trials=z_trials, rng_seed=member_seed
        )

    mZ, eZ = measure(inst.ws, indicator, bound, n_samples, _subseed(seed, 3), workers=workers)
    lhs = mZ ** (1.0 / N)
    rhs = (1.0 - t) * (ba * mA) ** (1.0 / N) + t * (bb * mB) ** (1.0 / N)
    dl = eZ / N * mZ ** (1.0 / N - 1.0) if mZ > 0 else eZ
    da = (1.0 - t) * ba ** (1.0 / N) * eA / N * mA ** (1.0 / N - 1.0) if mA > 0 else eA
    db = t * bb ** (1.0 / N) * eB / N * mB ** (1.0 / N - 1.0) if mB > 0 else eB
    std_err = math.sqrt(dl**2 + da**2 + db**2)
    notes = (
        "membership is one-sided: lhs may be slightly underestimated; "
        "a tiny negative margin can be a false negative (raise z_trials)",
    )
    extra = {"m_A": mA, "m_B": mB, "m_Z": mZ, "theta": th, "method": "montecarlo"}
    return _report(lhs, rhs, std_err, n_samples, seed, equality_rel_tol, notes, extra)


def check_equal_sets(
    ws: WeightedSpace, A: Region, B: Region, n_samples: int, seed: int
) -> tuple[float, float]:
    """Monte Carlo estimate of m(A symmetric-difference B)."""
    space = ws.space
    if isinstance(A, GeodesicBall) and isinstance(B, GeodesicBall):
        dc = float(distance(space, A.center, B.center))
        rad = max(A.radius, dc + B.radius)
        if space.kind == "sphere":
            rad = min(rad, space.diameter)
        hull = GeodesicBall(space, A.center, rad)
    elif isinstance(A, Box) and isinstance(B, Box):
        hull = Box(space, np.minimum(A.lo, B.lo), np.maximum(A.hi, B.hi))
    else:
        raise DomainError("no hull rule for these region shapes")

    def xor(pts):
        return A.contains(pts) != B.contains(pts)

    return measure(ws, xor, hull, n_samples, _subseed(seed, 51))


# ---------------------------------------------------------------------------
# rigidity scanner
# ---------------------------------------------------------------------------


class RigidityConclusion(Enum):
    NO_EQUALITY = "NoEquality"
    EQUALITY_CONSISTENT_WITH_RIGIDITY = "EqualityConsistentWithRigidity"
    EQUALITY_INCONSISTENT = "EqualityInconsistent"


@dataclass(frozen=True)
class RigidityDiagnosis:
    equality_times: tuple[float, ...]
    inferred_sec: float
    weight_fits: tuple[tuple[float, float, float, float], ...]  # (r, C0, C1, residual)
    conclusion: RigidityConclusion
    reports: tuple[VerificationReport, ...]
    sym_diff: Optional[tuple[float, float]] = None
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "equality_times": list(self.equality_times),
            "inferred_sec": self.inferred_sec,
            "weight_fits": [list(w) for w in self.weight_fits],
            "conclusion": self.conclusion.value,
            "reports": [r.to_dict() for r in self.reports],
            "sym_diff": list(self.sym_diff) if self.sym_diff else None,
            "notes": list(self.notes),
        }


def _weight_fit_rays(inst: BMInstance, ray_samples: int, seed: int):
    """Fit the rigidity weight profile along declared transport rays."""
    ws, cd = inst.ws, inst.cd
    n = ws.space.n
    fits = []
    notes = []
    if cd.N == n:
        notes.append("N equals the dimension: weight constant, no profile to fit")
        return fits, notes
    if inst.homothety is None:
        notes.append(
            "no declared transport map: fitting along A-to-B sections "
            "(heuristic, not true transport rays)"
        )
        rngA = np.random.default_rng([_subseed(seed, 61), 0])
        rngB = np.random.default_rng([_subseed(seed, 62), 0])
        X = inst.A.sample(rngA, ray_samples)
        Y = inst.B.sample(rngB, ray_samples)
        from .model_spaces import intermediate_point

        ts = np.linspace(0.0, 1.0, 33)
        for i in range(ray_samples):
            r = float(distance(ws.space, X[i], Y[i]))
            if r < 1e-9:
                continue
            pts = np.array([intermediate_point(ws.space, X[i], Y[i], float(s)) for s in ts])
            dens = ws.density(pts)
            if np.any(dens <= 0):
                continue
            prof, residual = fit_weight_profile(
                np.column_stack([ts, dens]), cd.K, cd.N, n, r
            )
            fits.append((r, prof.C0, prof.C1, residual))
        return fits, notes
    hom = inst.homothety
    rng = np.random.default_rng([_subseed(seed, 63), 0])
    X = inst.A.sample(rng, ray_samples)
    ts = np.linspace(0.0, 1.0, 33)
    for i in range(ray_samples):
        ray = homothety_ray(ws, hom.center, X[i], hom.factor)
        if ray.r < 1e-9:
            continue
        pts = np.array([ray.interpolant(float(s)) for s in ts])
        dens = ws.density(pts)
        if np.any(dens <= 0):
            continue
        prof, residual = fit_weight_profile(
            np.column_stack([ts, dens]), cd.K, cd.N, n, ray.r
        )
        fits.append((ray.r, prof.C0, prof.C1, residual))
    return fits, notes


def rigidity_scan(
    inst: BMInstance,
    t_grid,
    ray_samples: int = 16,
    seed: int = 0,
    *,
    n_samples: int = 200_000,
    z_trials: int = 4096,
    sec_tol: float = 1e-9,
    weight_residual_tol: float = 1e-3,
    equality_rel_tol: float = 1e-4,
    workers: int | None = None,
) -> RigidityDiagnosis:
    """Scan a set instance for equality and test the forced structure.

    Equality at any grid time must propagate to every grid time; on
    equality instances the space's sectional curvature must equal
    K/(N-1), the weight profile along transport rays must fit the
    closed form, and for K > 0 the sets must agree up to null measure.
    Raises InconclusiveError when the Monte Carlo noise is too large to
    decide equality at the requested tolerance.
    """
    t_grid = [float(t) for t in t_grid]
    if not t_grid:
        raise DomainError("t_grid must be nonempty")
    reports = []
    for k, t in enumerate(t_grid):
        rep = verify_bm(
            dataclasses.replace(inst, t=t),
            n_samples,
            z_trials,
            _subseed(seed, 70 + k),
            equality_rel_tol=equality_rel_tol,
            workers=workers,
        )
        reports.append(rep)

    notes: list[str] = []
    for t, rep in zip(t_grid, reports):
        scale = max(abs(rep.lhs), abs(rep.rhs), 1e-300)
        if rep.equality and rep.std_err > equality_rel_tol * scale:
            raise InconclusiveError(
                f"std_err {rep.std_err:.3g} exceeds the equality tolerance "
                f"{equality_rel_tol * scale:.3g} at t={t}; raise n_samples"
            )

    equality_times = tuple(t for t, rep in zip(t_grid, reports) if rep.equality)
    inferred_sec = float(inst.ws.space.sec)
    sec_target = inst.cd.K / (inst.cd.N - 1.0) if inst.cd.N > 1 else inst.ws.space.sec

    if not equality_times:
        return RigidityDiagnosis(
            equality_times=(),
            inferred_sec=inferred_sec,
            weight_fits=(),
            conclusion=RigidityConclusion.NO_EQUALITY,
            reports=tuple(reports),
            notes=tuple(notes),
        )

    consistent = True
    if len(equality_times) != len(t_grid):
        missing = [t for t in t_grid if t not in equality_times]
        notes.append(
            f"equality does not propagate: missing at t={missing} "
            "(contradicts equality-at-one-time)"
        )
        consistent = False

    if abs(inferred_sec - sec_target) > sec_tol:
        notes.append(
            f"sectional curvature {inferred_sec} differs from K/(N-1)={sec_target}"
        )
        consistent = False

    fits, fit_notes = _weight_fit_rays(inst, ray_samples, seed)
    notes.extend(fit_notes)
    if fits and max(f[3] for f in fits) > weight_residual_tol:
        notes.append("weight profile misfit exceeds tolerance on some ray")
        consistent = False

    sym = None
    if inst.cd.K > 0.0:
        sym = check_equal_sets(inst.ws, inst.A, inst.B, n_samples, _subseed(seed, 52))
        scaleA = reports[0].extra.get("m_A", 1.0)
        if sym[0] > equality_rel_tol * max(scaleA, 1e-300) + 3.0 * sym[1]:
            notes.append(
                f"positive-bound equality requires A = B up to null measure; "
                f"m(A sym-diff B) = {sym[0]:.3g}"
            )
            consistent = False

    conclusion = (
        RigidityConclusion.EQUALITY_CONSISTENT_WITH_RIGIDITY
        if consistent
        else RigidityConclusion.EQUALITY_INCONSISTENT
    )
    return RigidityDiagnosis(
        equality_times=equality_times,
        inferred_sec=inferred_sec,
        weight_fits=tuple(fits),
        conclusion=conclusion,
        reports=tuple(reports),
        sym_diff=sym,
        notes=tuple(notes),
    )
