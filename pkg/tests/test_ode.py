import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from bblbm.distortion import CurvatureDimension, cofactor
from bblbm.errors import DomainError, FocalPointError, IllConditionedError
from bblbm.ode import (
    JacobiSystem,
    cs_inequality_residual,
    equality_propagation,
    equality_trace,
    fit_weight_profile,
    holder_chain_margins,
    integrate_jacobi,
    isotropy_diagnosis,
    profile_from_initial,
    u_concavity_check,
    weight_closed_form,
    WeightProfile,
    write_trace_csv,
)

ZERO_PSI = lambda ts: np.zeros_like(np.asarray(ts, dtype=float))


def _flat_system(n=2, r=1.0):
    return JacobiSystem(n=n, r=r, sec=0.0, hess_psi0=np.zeros((n, n)), psi_along=ZERO_PSI)


class TestIntegrateJacobi:
    def test_flat_trivial(self):
        trace = integrate_jacobi(_flat_system(), grid=128)
        np.testing.assert_allclose(trace.jac, 1.0, atol=1e-12)
        np.testing.assert_allclose(trace.jac_psi, 1.0, atol=1e-12)
        np.testing.assert_allclose(trace.lam, 1.0, atol=1e-12)

    def test_positive_curvature_closed_form(self):
        k, r = 0.8, 1.1
        sys = JacobiSystem(2, r, k, np.zeros((2, 2)), ZERO_PSI)
        trace = integrate_jacobi(sys, grid=4096)
        want = np.cos(math.sqrt(k) * r * trace.grid)
        assert float(np.max(np.abs(trace.jac - want))) < 1e-8

    def test_negative_curvature_with_initial_derivative(self):
        c, r = 0.4, 0.9
        sys = JacobiSystem(2, r, -1.0, c * np.eye(2), ZERO_PSI)
        trace = integrate_jacobi(sys, grid=4096)
        ts = trace.grid
        transverse = np.cosh(r * ts) - (c / r) * np.sinh(r * ts)
        want = (1 - c * ts) * transverse
        assert float(np.max(np.abs(trace.jac - want))) < 1e-8

    def test_convergence_at_integrator_order(self):
        k, r = 1.0, 1.2
        sys = JacobiSystem(2, r, k, np.zeros((2, 2)), ZERO_PSI)
        errs = {}
        for grid in (64, 128, 4096):
            trace = integrate_jacobi(sys, grid=grid)
            want = np.cos(math.sqrt(k) * r * trace.grid)
            errs[grid] = float(np.max(np.abs(trace.jac - want)))
        assert errs[4096] < 1e-8
        order = math.log2(errs[64] / errs[128])
        assert order > 3.5

    def test_focal_point_error(self):
        sys = JacobiSystem(2, 0.9 * math.pi, 1.0, np.zeros((2, 2)), ZERO_PSI)
        with pytest.raises(FocalPointError):
            integrate_jacobi(sys, grid=256)

    def test_f_is_concave(self):
        rng = np.random.default_rng(13)
        for _ in range(5):
            H = rng.normal(0, 0.4, size=(3, 3))
            H = 0.5 * (H + H.T)
            sys = JacobiSystem(3, 0.8, 0.5, H, ZERO_PSI)
            try:
                trace = integrate_jacobi(sys, grid=512)
            except FocalPointError:
                continue
            d2 = np.diff(trace.f, 2)
            assert float(np.max(d2)) <= 1e-8

    def test_normalization_product(self):
        trace = integrate_jacobi(_flat_system(), grid=128)
        assert math.isclose(trace.u[0] * trace.f[0], 1.0, rel_tol=1e-12)

    def test_weighted_jacobian_includes_weight(self):
        # linear weight along the ray: psi(gamma(t)) = 0.7 t
        sys = JacobiSystem(
            2, 1.0, 0.0, np.zeros((2, 2)), lambda ts: 0.7 * np.asarray(ts, dtype=float)
        )
        trace = integrate_jacobi(sys, grid=128)
        np.testing.assert_allclose(trace.jac_psi, np.exp(-0.7 * trace.grid), atol=1e-10)

    def test_grid_validated(self):
        with pytest.raises(DomainError):
            integrate_jacobi(_flat_system(), grid=32)

    def test_csv_export(self, tmp_path):
        trace = integrate_jacobi(_flat_system(), grid=64)
        path = tmp_path / "trace.csv"
        write_trace_csv(trace, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,J,J_psi,f,u,alpha"
        assert len(lines) == 65


class TestCauchySchwarzResidual:
    def test_flat_trace_nonnegative(self):
        trace = integrate_jacobi(_flat_system(), grid=256)
        cd = CurvatureDimension(0.0, 2.0)
        resid = cs_inequality_residual(trace, cd, lambda t: 0.0)
        assert resid >= -1e-6

    def test_isotropic_equality_structure(self):
        cd = CurvatureDimension(1.0, 3.0)
        r = 1.0
        trace = equality_trace(cd, n=2, r=r, grid=1025, xi0=0.3)
        resid = cs_inequality_residual(trace, cd, lambda t: cd.K * r**2)
        assert abs(resid) < 1e-6

    def test_anisotropic_block_strictly_positive(self):
        # two distinct transverse Riccati flows give slack (xi1-xi2)^2/2
        k, r, n = 0.5, 1.0, 3
        rate = k * r**2

        def riccati(xi0):
            sol = solve_ivp(
                lambda t, y: [-(y[0] ** 2) - rate, y[0]],
                (0, 1),
                [xi0, 0.0],
                t_eval=np.linspace(0, 1, 513),
                rtol=1e-12,
                atol=1e-14,
            )
            return sol.y[0], sol.y[1]

        xi1, I1 = riccati(0.5)
        xi2, I2 = riccati(-0.4)
        ts = np.linspace(0, 1, 513)
        U = np.zeros((513, 3, 3))
        U[:, 1, 1] = xi1
        U[:, 2, 2] = xi2
        y = I1 + I2
        from bblbm.ode import RiccatiTrace

        trace = RiccatiTrace(
            grid=ts,
            U=U,
            lam=np.ones_like(ts),
            f=np.full_like(ts, math.e),
            y=y,
            ypsi=y,
            alpha=y - 1.0,
            u=np.exp(y - 1.0),
            jac=np.exp(y),
            jac_psi=np.exp(y),
            n=n,
            r=r,
            sec=k,
        )
        cd = CurvatureDimension((n - 1) * k, float(n))
        resid = cs_inequality_residual(trace, cd, lambda t: (n - 1) * k * r**2)
        want = 0.5 * float(np.min((xi1 - xi2) ** 2))
        assert resid > 0.0
        assert abs(resid - want) < 1e-4
        diag = isotropy_diagnosis(trace, cd)
        assert diag.cs_gap > 1e-3  # genuinely anisotropic

    def test_isotropy_diagnosis_flags_equality_structure(self):
        cd = CurvatureDimension(1.0, 3.0)
        trace = equality_trace(cd, n=2, r=1.0, grid=513, xi0=0.3)
        diag = isotropy_diagnosis(trace, cd)
        assert diag.cs_gap < 1e-10
        assert diag.weight_alignment_gap < 1e-6


class TestUConcavity:
    def test_constant_u_flat_margins_vanish(self):
        trace = integrate_jacobi(_flat_system(), grid=256)
        cd = CurvatureDimension(0.0, 2.0)
        chk = u_concavity_check(trace, cd)
        np.testing.assert_allclose(chk.ode_margin, 0.0, atol=1e-10)
        np.testing.assert_allclose(chk.chord_margin, 0.0, atol=1e-12)

    def test_equality_solution_has_zero_chord_margin(self):
        cd = CurvatureDimension(1.0, 3.0)
        trace = equality_trace(cd, n=2, r=1.0, grid=513, xi0=0.25)
        chk = u_concavity_check(trace, cd)
        assert float(np.max(np.abs(chk.chord_margin))) < 1e-8

    def test_concave_excess_gives_positive_margin(self):
        cd = CurvatureDimension(1.0, 3.0)
        r = 1.0
        rate = cd.K * r**2 / (cd.N - 1.0)
        ts = np.linspace(0, 1, 513)
        w = 0.2 * np.sin(math.sqrt(rate) * ts) + 1.0 * np.cos(math.sqrt(rate) * ts)
        bump = 1e-2 * np.sin(math.pi * ts)
        v = w + bump
        u = v ** (cd.N - 1.0)
        from bblbm.ode import RiccatiTrace

        trace = RiccatiTrace(
            grid=ts, U=None, lam=np.ones_like(ts), f=np.full_like(ts, math.e),
            y=np.log(u), ypsi=np.log(u) + 1.0, alpha=np.log(u), u=u,
            jac=u, jac_psi=u * math.e, n=2, r=r, sec=None,
        )
        chk = u_concavity_check(trace, cd)
        interior = slice(32, -32)
        assert np.all(chk.chord_margin[interior] > 0.0)
        assert np.all(chk.ode_margin[interior] > 0.0)


class TestEqualityPropagation:
    CD = CurvatureDimension(1.0, 3.0)
    R = 1.0

    def _equality_u(self, m=512, c0=0.3, c1=1.0):
        rate = self.CD.K * self.R**2 / (self.CD.N - 1.0)
        ts = np.linspace(0, 1, m)
        w = c0 * np.sin(math.sqrt(rate) * ts) + c1 * np.cos(math.sqrt(rate) * ts)
        return w ** (self.CD.N - 1.0)

    def test_equality_solution_propagates(self):
        u = self._equality_u()
        assert equality_propagation(u, self.CD, self.R, 0.3, tol=1e-8)

    def test_bump_is_rejected(self):
        rate = self.CD.K * self.R**2 / (self.CD.N - 1.0)
        ts = np.linspace(0, 1, 512)
        w = 0.3 * np.sin(math.sqrt(rate) * ts) + 1.0 * np.cos(math.sqrt(rate) * ts)
        v = w + 1e-3 * np.sin(math.pi * ts)  # satisfies the ODE inequality
        u = v ** (self.CD.N - 1.0)
        assert not equality_propagation(u, self.CD, self.R, 0.5, tol=1e-6)

    def test_flat_affine_case(self):
        cd = CurvatureDimension(0.0, 3.0)
        ts = np.linspace(0, 1, 512)
        v = 1.0 + 0.4 * ts
        u = v ** (cd.N - 1.0)
        assert equality_propagation(u, cd, 2.0, 0.3, tol=1e-8)

    def test_monotone_in_tolerance(self):
        u = self._equality_u()
        for tol in (1e-10, 1e-8, 1e-6, 1e-4):
            assert equality_propagation(u, self.CD, self.R, 0.3, tol=tol)

    def test_differential_inequality_precondition(self):
        cd = CurvatureDimension(0.0, 3.0)
        ts = np.linspace(0, 1, 512)
        v = 1.0 + ts**2  # strictly convex: violates v'' <= 0
        u = v ** (cd.N - 1.0)
        with pytest.raises(DomainError):
            equality_propagation(u, cd, 1.0, 0.3, tol=1e-6)


class TestHolderChain:
    def test_sphere_like_trace_first_step_tight(self):
        # constant curvature, no weight: f is constant and u solves the
        # comparison equation, so the first recombination step is tight
        # while the final mean-splitting step stays strictly positive
        sys = JacobiSystem(2, 1.2, 1.0, np.zeros((2, 2)), ZERO_PSI)
        trace = integrate_jacobi(sys, grid=512)
        cd = CurvatureDimension(1.0, 2.0)
        m1, m2 = holder_chain_margins(trace, cd)
        assert float(np.max(np.abs(m1))) < 1e-8
        assert float(np.min(m2)) > -1e-6
        assert float(np.max(m2[64:-64])) > 1e-4

    def test_flat_homothety_trace_chain_is_equality(self):
        # isotropic expansion A_t = (1 + 0.6 t) Id: the flat scaling family
        H = -0.6 * np.eye(2)
        sys = JacobiSystem(2, 1.0, 0.0, H, ZERO_PSI)
        trace = integrate_jacobi(sys, grid=512)
        cd = CurvatureDimension(0.0, 2.0)
        m1, m2 = holder_chain_margins(trace, cd)
        assert float(np.max(np.abs(m1))) < 1e-9
        assert float(np.max(np.abs(m2))) < 1e-9

    def test_anisotropic_trace_chain_holds_strictly(self):
        H = np.diag([0.0, 0.5, -0.3])
        sys = JacobiSystem(3, 0.8, 0.7, H, ZERO_PSI)
        trace = integrate_jacobi(sys, grid=512)
        cd = CurvatureDimension(2 * 0.7, 3.0)
        m1, m2 = holder_chain_margins(trace, cd)
        assert float(np.min(m1)) > -1e-6
        assert float(np.min(m2)) > -1e-6
        assert float(np.max(m1 + m2)) > 1e-3


class TestWeightClosedForm:
    def test_flat_constant(self):
        p = WeightProfile(0.0, 3.0, 2.0, 1.0, 0.0, 1.0)
        for t in (0.0, 0.3, 1.0):
            assert weight_closed_form(p, t) == 1.0

    def test_flat_square(self):
        p = WeightProfile(0.0, 4.0, 2.0, 1.0, 1.0, 1.0)
        assert math.isclose(weight_closed_form(p, 0.5), 2.25, rel_tol=1e-14)

    def test_matches_adaptive_ode_oracle_each_sign(self):
        N, n, r = 3.0, 2.0, 1.0
        C0, C1 = 0.3, 1.0
        ts = np.linspace(0, 1, 257)
        for K in (1.0, 0.0, -1.0):
            p = WeightProfile(K, N, n, r, C0, C1)
            w = math.sqrt(abs(K) / (N - 1.0)) * r
            slope0 = C0 * w if K != 0.0 else C0
            sol = solve_ivp(
                lambda t, y: [y[1], -(K * r**2 / (N - 1.0)) * y[0]],
                (0, 1),
                [C1, slope0],
                t_eval=ts,
                rtol=1e-12,
                atol=1e-14,
            )
            got = weight_closed_form(p, ts)
            assert float(np.max(np.abs(got - sol.y[0] ** (N - n)))) < 1e-8

    def test_satisfies_its_defining_equation(self):
        for K in (1.0, 0.0, -1.0):
            p = WeightProfile(K, 3.0, 2.0, 1.0, 0.3, 1.0)
            ts = np.linspace(0.0, 1.0, 2001)
            g = weight_closed_form(p, ts) ** (1.0 / (p.N - p.n))
            h = ts[1] - ts[0]
            d2 = (g[2:] - 2 * g[1:-1] + g[:-2]) / h**2
            resid = d2 + (K * p.r**2 / (p.N - 1.0)) * g[1:-1]
            assert float(np.max(np.abs(resid))) < 1e-6

    def test_vanishing_base_rejected(self):
        p = WeightProfile(0.0, 3.0, 2.0, 1.0, -2.0, 1.0)
        with pytest.raises(DomainError):
            weight_closed_form(p, 0.6)


class TestProfileFromInitial:
    def test_zero_weight(self):
        p = profile_from_initial(0.0, 0.0, 0.0, 3.0, 2.0, 1.0)
        assert p.C0 == 0.0 and p.C1 == 1.0

    def test_unit_slope(self):
        p = profile_from_initial(0.0, -(3.0 - 2.0), 0.0, 3.0, 2.0, 1.0)
        assert math.isclose(p.C0, 1.0, rel_tol=1e-14)
        assert p.C1 == 1.0

    def test_log_value(self):
        p = profile_from_initial((3.0 - 2.0) * math.log(2.0), 0.0, 0.0, 3.0, 2.0, 1.0)
        assert p.C0 == 0.0
        assert math.isclose(p.C1, 0.5, rel_tol=1e-14)

    def test_equal_dimensions_rejected(self):
        with pytest.raises(DomainError):
            profile_from_initial(0.0, 0.0, 0.0, 2.0, 2.0, 1.0)


class TestFitWeightProfile:
    def test_exact_recovery(self):
        K, N, n, r = 1.0, 4.0, 2.0, 1.3
        truth = WeightProfile(K, N, n, r, 0.4, 0.9)
        ts = np.linspace(0, 1, 33)
        dens = weight_closed_form(truth, ts)
        profile, residual = fit_weight_profile(np.column_stack([ts, dens]), K, N, n, r)
        assert abs(profile.C0 - 0.4) < 1e-8
        assert abs(profile.C1 - 0.9) < 1e-8
        assert residual < 1e-10

    def test_radial_scaling_ray_is_exactly_affine(self):
        # density ||(1 + t) x|| with ||x|| = 1.3 along a radial ray
        ts = np.linspace(0, 1, 33)
        dens = (1 + ts) * 1.3
        profile, residual = fit_weight_profile(
            np.column_stack([ts, dens]), 0.0, 3.0, 2.0, 1.3
        )
        assert residual < 1e-6
        assert abs(profile.C0 - 1.3) < 1e-9
        assert abs(profile.C1 - 1.3) < 1e-9

    def test_gaussian_profile_is_rejected(self):
        ts = np.linspace(0, 1, 33)
        dens = np.exp(-(ts**2))
        _, residual = fit_weight_profile(np.column_stack([ts, dens]), 0.0, 3.0, 2.0, 1.0)
        assert residual > 0.01

    def test_degenerate_basis_rejected(self):
        ts = np.linspace(0, 1, 33)
        dens = np.ones_like(ts)
        with pytest.raises(IllConditionedError):
            fit_weight_profile(np.column_stack([ts, dens]), 1.0, 3.0, 2.0, 1e-13)

    def test_sample_count_validated(self):
        with pytest.raises(DomainError):
            fit_weight_profile([[0.0, 1.0], [1.0, 2.0]], 0.0, 3.0, 2.0, 1.0)
