"""Jacobi and Riccati machinery along transport rays.

A ray gamma is parametrized on [0, 1] with constant speed r, so the
transverse Jacobi equation reads A'' + sec * r^2 * P A = 0 with
P = diag(0, 1, ..., 1) in a frame whose first vector is tangent.  From
the integrated differential A_t we assemble the logarithmic trace
quantities (lambda, f, y, alpha, u) that control the concavity of the
weighted Jacobian, plus the closed-form weight profiles which are the
only measures compatible with equality.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .distortion import CurvatureDimension, cofactor, beta
from .errors import DomainError, FocalPointError, IllConditionedError

__all__ = [
    "JacobiSystem",
    "RiccatiTrace",
    "integrate_jacobi",
    "equality_trace",
    "cs_inequality_residual",
    "ConcavityCheck",
    "u_concavity_check",
    "equality_propagation",
    "holder_chain_margins",
    "IsotropyDiagnosis",
    "isotropy_diagnosis",
    "WeightProfile",
    "weight_closed_form",
    "profile_from_initial",
    "fit_weight_profile",
    "write_trace_csv",
]


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JacobiSystem:
    """Matrix Jacobi data along a constant-curvature ray.

    ``hess_psi0`` is the symmetric initial derivative -A'(0) of the
    differential map; ``psi_along`` evaluates the weight along the ray
    (vectorized over a grid of times).
    """

    n: int
    r: float
    sec: float
    hess_psi0: np.ndarray
    psi_along: Callable[[np.ndarray], np.ndarray]

    def __post_init__(self):
        H = np.asarray(self.hess_psi0, dtype=float)
        object.__setattr__(self, "hess_psi0", H)
        if H.shape != (self.n, self.n):
            raise DomainError("hess_psi0 must be an n x n matrix")
        if np.max(np.abs(H - H.T)) > 1e-12:
            raise DomainError("hess_psi0 must be symmetric")
        if self.r < 0:
            raise DomainError("ray length must be nonnegative")


@dataclass(frozen=True)
class RiccatiTrace:
    """Sampled log-derivative data of a weighted Jacobian along a ray.

    ``u * f == jac_psi`` on the grid and ``f`` is concave whenever the
    trace comes from a genuine Jacobi system.
    """

    grid: np.ndarray
    U: Optional[np.ndarray]  # (m, n, n) tangent-frame derivative matrices
    lam: np.ndarray
    f: np.ndarray
    y: np.ndarray
    ypsi: np.ndarray
    alpha: np.ndarray
    u: np.ndarray
    jac: np.ndarray
    jac_psi: np.ndarray
    n: int
    r: float
    sec: float
    err_estimate: float = 0.0

    @property
    def step(self) -> float:
        return float(self.grid[1] - self.grid[0])


def _rk4_run(rhs, y0, t0, t1, nodes, substeps):
    """Fixed-step classical RK4 sampled at uniform nodes."""
    ys = [np.asarray(y0, dtype=float)]
    y = ys[0]
    h_node = (t1 - t0) / (nodes - 1)
    for i in range(nodes - 1):
        t = t0 + i * h_node
        h = h_node / substeps
        for k in range(substeps):
            tk = t + k * h
            k1 = rhs(tk, y)
            k2 = rhs(tk + 0.5 * h, y + 0.5 * h * k1)
            k3 = rhs(tk + 0.5 * h, y + 0.5 * h * k2)
            k4 = rhs(tk + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ys.append(y)
    return np.array(ys)


def _rk4_richardson(rhs, y0, t0, t1, nodes):
    """RK4 at steps h and h/2 with per-node Richardson extrapolation.

    Returns (solution, error_estimate); the estimate is the h/2-vs-h
    discrepancy scaled by the order-4 factor.
    """
    coarse = _rk4_run(rhs, y0, t0, t1, nodes, substeps=1)
    fine = _rk4_run(rhs, y0, t0, t1, nodes, substeps=2)
    err = float(np.max(np.abs(fine - coarse))) / 15.0
    return (16.0 * fine - coarse) / 15.0, err


def integrate_jacobi(sys: JacobiSystem, grid: int) -> RiccatiTrace:
    """Integrate the matrix Jacobi equation and assemble the trace.

    ``grid`` is the number of sample nodes on [0, 1] (at least 64).
    Raises FocalPointError if det A_t vanishes before t = 1.
    """
    if grid < 64:
        raise DomainError("grid must have at least 64 nodes")
    n = sys.n
    P = np.eye(n)
    P[0, 0] = 0.0
    curv = sys.sec * sys.r**2
    e0 = np.zeros(n)
    e0[0] = 1.0
    n2 = n * n

    def rhs(_, yv):
        A = yv[:n2].reshape(n, n)
        Ap = yv[n2 : 2 * n2].reshape(n, n)
        dA = Ap
        dAp = -curv * (P @ A)
        try:
            dlam = float(Ap[0] @ np.linalg.solve(A, e0))
        except np.linalg.LinAlgError:
            dlam = 0.0
        return np.concatenate([dA.ravel(), dAp.ravel(), [dlam]])

    y0 = np.concatenate([np.eye(n).ravel(), (-sys.hess_psi0).ravel(), [1.0]])
    sol, err = _rk4_richardson(rhs, y0, 0.0, 1.0, grid)

    ts = np.linspace(0.0, 1.0, grid)
    A = sol[:, :n2].reshape(grid, n, n)
    Ap = sol[:, n2 : 2 * n2].reshape(grid, n, n)
    lam = sol[:, -1]
    jac = np.linalg.det(A)
    if np.any(jac[:-1] <= 0.0):
        bad = ts[np.argmax(jac[:-1] <= 0.0)]
        raise FocalPointError(f"Jacobi determinant vanished at t = {bad:.6g}")

    U = np.full_like(A, np.nan)
    ok = jac > 0.0
    U[ok] = Ap[ok] @ np.linalg.inv(A[ok])

    psi_vals = np.asarray(sys.psi_along(ts), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(np.maximum(jac, 0.0))
    ypsi = psi_vals[0] - psi_vals + y
    f = np.exp(lam)
    alpha = ypsi - lam
    u = np.exp(alpha)
    return RiccatiTrace(
        grid=ts,
        U=U,
        lam=lam,
        f=f,
        y=y,
        ypsi=ypsi,
        alpha=alpha,
        u=u,
        jac=jac,
        jac_psi=np.exp(ypsi),
        n=n,
        r=sys.r,
        sec=sys.sec,
        err_estimate=err,
    )


def equality_trace(
    cd: CurvatureDimension, n: int, r: float, grid: int, xi0: float = 0.0
) -> RiccatiTrace:
    """Synthetic trace of the isotropic equality structure.

    The transverse derivative block is xi(t) * Id with
    xi' + xi^2 = -K r^2 / (N - 1), the tangential part is flat
    (lambda = 1) and the weight direction is locked to xi so that the
    concavity inequality is an equality at every time.
    """
    if grid < 64:
        raise DomainError("grid must have at least 64 nodes")
    K, N = cd.K, cd.N
    if N <= 1:
        raise DomainError("equality trace requires N > 1")
    rate = K * r**2 / (N - 1.0)

    def rhs(_, yv):
        xi, _i = yv
        return np.array([-(xi**2) - rate, xi])

    sol, err = _rk4_richardson(rhs, np.array([xi0, 0.0]), 0.0, 1.0, grid)
    ts = np.linspace(0.0, 1.0, grid)
    xi = sol[:, 0]
    integral = sol[:, 1]
    U = np.zeros((grid, n, n))
    for j in range(1, n):
        U[:, j, j] = xi
    lam = np.ones(grid)
    y = (n - 1) * integral
    ypsi = (N - 1.0) * integral
    alpha = ypsi - lam
    return RiccatiTrace(
        grid=ts,
        U=U,
        lam=lam,
        f=np.exp(lam),
        y=y,
        ypsi=ypsi,
        alpha=alpha,
        u=np.exp(alpha),
        jac=np.exp(y),
        jac_psi=np.exp(ypsi),
        n=n,
        r=r,
        sec=K / (N - 1.0),
        err_estimate=err,
    )


# ---------------------------------------------------------------------------
# differential-inequality checks
# ---------------------------------------------------------------------------


def _central_d1(v, h):
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - v[:-2]) / (2 * h)
    out[0] = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * h)
    out[-1] = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h)
    return out


def _central_d2(v, h):
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    out[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
    out[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
    return out


def _fourth_derivative_scale(v, h):
    if len(v) < 5:
        return 0.0
    d4 = (v[:-4] - 4 * v[1:-3] + 6 * v[2:-2] - 4 * v[3:-1] + v[4:]) / h**4
    return float(np.max(np.abs(d4)))


def cs_inequality_residual(
    trace: RiccatiTrace, cd: CurvatureDimension, ricci_along: Callable[[float], float]
) -> float:
    """Slack of alpha'' <= -Ric_{m,N}(gamma') - (alpha')^2 / (N - 1).

    Returns the minimum over interior grid nodes of
    (-Ric - (alpha')^2/(N-1)) - alpha''; a value >= -tolerance certifies
    the inequality on the trace.
    """
    if cd.N <= 1:
        raise DomainError("residual requires N > 1")
    h = trace.step
    a = trace.alpha
    d1 = _central_d1(a, h)[1:-1]
    d2 = _central_d2(a, h)[1:-1]
    ts = trace.grid[1:-1]
    ric = np.asarray([float(ricci_along(float(t))) for t in ts])
    resid = (-ric - d1**2 / (cd.N - 1.0)) - d2
    return float(np.min(resid))


@dataclass(frozen=True)
class ConcavityCheck:
    """Pointwise margins of the comparison inequality for u^{1/(N-1)}."""

    grid: np.ndarray
    ode_margin: np.ndarray  # -(K r^2/(N-1)) v - v'' (>= 0 up to discretization)
    chord_margin: np.ndarray  # v - cofactor chord through the endpoints


def _chord(cd: CurvatureDimension, r: float, ts: np.ndarray, v0: float, v1: float):
    if r == 0.0:
        return (1.0 - ts) * v0 + ts * v1
    sr = float(cofactor(cd, r))
    return (cofactor(cd, (1.0 - ts) * r) * v0 + cofactor(cd, ts * r) * v1) / sr


def u_concavity_check(trace: RiccatiTrace, cd: CurvatureDimension) -> ConcavityCheck:
    """Margins of the differential and chord comparison for u^{1/(N-1)}."""
    if cd.N <= 1:
        raise DomainError("concavity check requires N > 1")
    if np.any(trace.u[:-1] <= 0.0):
        raise DomainError("u must be positive on [0, 1)")
    v = trace.u ** (1.0 / (cd.N - 1.0))
    h = trace.step
    rate = cd.K * trace.r**2 / (cd.N - 1.0)
    ode_margin = -rate * v - _central_d2(v, h)
    chord = _chord(cd, trace.r, trace.grid, float(v[0]), float(v[-1]))
    return ConcavityCheck(trace.grid, ode_margin, v - chord)


def equality_propagation(
    u_samples, cd: CurvatureDimension, r: float, t0: float, tol: float
) -> bool:
    """Equality-at-one-time propagates to all times, tested on a grid.

    ``u_samples`` are values of u on a uniform grid over [0, 1].  Let w
    be the cofactor chord through the endpoint values of
    v = u^{1/(N-1)}.  Returns True iff |v(t0) - w(t0)| <= tol and the
    whole deviation stays below 10 * tol; returns False when t0 shows
    no equality (no propagation claim is made).

    Raises DomainError when v fails the comparison differential
    inequality by more than tol plus the finite-difference budget of
    the grid.
    """
    if cd.N <= 1:
        raise DomainError("equality propagation requires N > 1")
    v = np.asarray(u_samples, dtype=float) ** (1.0 / (cd.N - 1.0))
    m = len(v)
    if m < 8:
        raise DomainError("need at least 8 samples")
    if not 0.0 <= t0 <= 1.0:
        raise DomainError("t0 must lie in [0, 1]")
    ts = np.linspace(0.0, 1.0, m)
    h = ts[1] - ts[0]
    rate = cd.K * r**2 / (cd.N - 1.0)
    resid = -rate * v[1:-1] - (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    fd_budget = h**2 * _fourth_derivative_scale(v, h) / 12.0 * 4.0 + 64.0 * np.finfo(
        float
    ).eps * np.max(np.abs(v)) / h**2
    if float(np.min(resid)) < -(tol + fd_budget):
        raise DomainError(
            "samples violate the comparison differential inequality "
            f"by {-float(np.min(resid)):.3g} (budget {tol + fd_budget:.3g})"
        )
    w = _chord(cd, r, ts, float(v[0]), float(v[-1]))
    i0 = int(round(t0 * (m - 1)))
    dev = np.abs(v - w)
    return bool(dev[i0] <= tol and np.max(dev) <= 10.0 * tol)


def holder_chain_margins(trace: RiccatiTrace, cd: CurvatureDimension):
    """Margins of the two-step recombination that yields the
    interpolation inequality for the weighted Jacobian.

    Returns (m1, m2) on the grid: m1 is (J^psi_t)^{1/N} minus the
    product of the affine bound for f and the chord bound for u, and
    m2 is that product minus the distortion-coefficient right-hand
    side.  Both are nonnegative (up to tolerance) on valid traces.
    """
    N = cd.N
    ts = trace.grid
    v = trace.u ** (1.0 / (N - 1.0))
    chord = _chord(cd, trace.r, ts, float(v[0]), float(v[-1]))
    f_affine = (1.0 - ts) * trace.f[0] + ts * trace.f[-1]
    mid = f_affine ** (1.0 / N) * np.maximum(chord, 0.0) ** ((N - 1.0) / N)
    lhs = trace.jac_psi ** (1.0 / N)
    j1 = trace.jac_psi[-1] ** (1.0 / N)
    rhs = np.empty_like(ts)
    for i, t in enumerate(ts):
        term = 0.0
        if t < 1.0:
            term += (1.0 - t) * float(beta(cd, 1.0 - float(t), trace.r)) ** (1.0 / N)
        if t > 0.0:
            term += t * float(beta(cd, float(t), trace.r)) ** (1.0 / N) * j1
        rhs[i] = term
    return lhs - mid, mid - rhs


@dataclass(frozen=True)
class IsotropyDiagnosis:
    """Gap measurements of the equality structure of a trace.

    ``cs_gap`` is max_t |tr(V^2) - (tr V)^2/(n-1)| over the transverse
    block V (zero iff V is a scalar multiple of the identity) and
    ``weight_alignment_gap`` is max_t |(n-1) dpsi + (N-n)(y'-lambda')|,
    zero when the weight direction locks to the transverse trace.
    """

    cs_gap: float
    weight_alignment_gap: float


def isotropy_diagnosis(trace: RiccatiTrace, cd: CurvatureDimension) -> IsotropyDiagnosis:
    if trace.U is None:
        raise DomainError("trace carries no derivative matrices")
    n = trace.n
    if n < 2:
        return IsotropyDiagnosis(0.0, 0.0)
    V = trace.U[:, 1:, 1:]
    ok = ~np.isnan(V).any(axis=(1, 2))
    V = V[ok]
    trV = np.trace(V, axis1=1, axis2=2)
    trV2 = np.trace(V @ V, axis1=1, axis2=2)
    cs_gap = float(np.max(np.abs(trV2 - trV**2 / (n - 1.0))))
    h = trace.step
    dy = _central_d1(trace.y, h)
    dlam = _central_d1(trace.lam, h)
    dpsi = -_central_d1(trace.ypsi - trace.y, h)  # d/dt psi(gamma(t))
    align = (n - 1.0) * dpsi + (cd.N - n) * (dy - dlam)
    inner = slice(1, -1)
    weight_gap = float(np.max(np.abs(align[inner][ok[inner]])))
    return IsotropyDiagnosis(cs_gap, weight_gap)


# ---------------------------------------------------------------------------
# rigidity weight profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeightProfile:
    """Closed-form density profile exp(-psi(gamma(t))) of an equality ray:
    an (N-n)-th power of a trig/affine/hyperbolic combination according
    to the sign of K."""

    K: float
    N: float
    n: float
    r: float
    C0: float
    C1: float


def _profile_bracket(p: WeightProfile, ts: np.ndarray) -> np.ndarray:
    if p.K > 0.0:
        w = math.sqrt(p.K / (p.N - 1.0)) * p.r
        return p.C0 * np.sin(w * ts) + p.C1 * np.cos(w * ts)
    if p.K == 0.0:
        return p.C0 * ts + p.C1
    w = math.sqrt(-p.K / (p.N - 1.0)) * p.r
    return p.C0 * np.sinh(w * ts) + p.C1 * np.cosh(w * ts)


def weight_closed_form(p: WeightProfile, t):
    """Evaluate the profile at t (scalar or array).

    Raises DomainError wherever the base combination is nonpositive
    (the density would vanish or lose smoothness there).
    """
    ts = np.asarray(t, dtype=float)
    if p.K != 0.0 and p.N <= 1.0:
        raise DomainError("curved profiles require N > 1")
    bracket = _profile_bracket(p, ts)
    if np.any(bracket <= 0.0):
        raise DomainError("profile base is nonpositive at the requested time")
    out = bracket ** (p.N - p.n)
    return out if ts.ndim else float(out)


def profile_from_initial(
    psi_x: float, dpsi_x: float, K: float, N: float, n: float, r: float
) -> WeightProfile:
    """Profile constants from the initial weight value and derivative:
    C1 = exp(-psi/(N-n)) and C0 = (-dpsi/(N-n)) * C1."""
    if N <= n:
        raise DomainError("profile constants require N > n")
    C1 = math.exp(-psi_x / (N - n))
    C0 = (-dpsi_x / (N - n)) * C1
    return WeightProfile(K, N, n, r, C0, C1)


def fit_weight_profile(samples, K: float, N: float, n: float, r: float):
    """Least-squares fit of profile constants from (t, density) samples.

    The fit is linear in density**(1/(N-n)) against the K-appropriate
    basis.  Returns (profile, residual) where residual is the maximum
    absolute misfit of the reconstructed density (inf when the fitted
    base changes sign).
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 8:
        raise DomainError("need at least 8 (t, density) samples")
    if N <= n:
        raise DomainError("profile fit requires N > n")
    ts, dens = pts[:, 0], pts[:, 1]
    if np.any(dens <= 0.0):
        raise DomainError("densities must be positive")
    yv = dens ** (1.0 / (N - n))
    if K > 0.0:
        w = math.sqrt(K / (N - 1.0)) * r
        design = np.column_stack([np.sin(w * ts), np.cos(w * ts)])
    elif K == 0.0:
        design = np.column_stack([ts, np.ones_like(ts)])
    else:
        w = math.sqrt(-K / (N - 1.0)) * r
        design = np.column_stack([np.sinh(w * ts), np.cosh(w * ts)])
    if np.linalg.cond(design) > 1e12:
        raise IllConditionedError("profile basis is numerically degenerate")
    coef, *_ = np.linalg.lstsq(design, yv, rcond=None)
    profile = WeightProfile(K, N, n, r, float(coef[0]), float(coef[1]))
    bracket = design @ coef
    if np.any(bracket <= 0.0):
        return profile, math.inf
    residual = float(np.max(np.abs(bracket ** (N - n) - dens)))
    return profile, residual


def write_trace_csv(trace: RiccatiTrace, path) -> None:
    """Export the trace as CSV with columns t, J, J_psi, f, u, alpha."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "J", "J_psi", "f", "u", "alpha"])
        for i, t in enumerate(trace.grid):
            writer.writerow(
                [
                    repr(float(t)),
                    repr(float(trace.jac[i])),
                    repr(float(trace.jac_psi[i])),
                    repr(float(trace.f[i])),
                    repr(float(trace.u[i])),
                    repr(float(trace.alpha[i])),
                ]
            )
