"""Mollifier calculus, cumulants, windows, extensions, and pairings."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from vortexdrag import (Circle, DomainError, FilterBank, FilterSpec,
                        ValidationError, WallTestFunction, build_grid,
                        cet_identity_gap, cumulant, decompose, extend_ext0,
                        filter_state, inertial_dissipation, interaction_flux,
                        mollify, momentum_wall_flux, no_flow_through_profile,
                        rotational_flux, skin_friction_pairing_viscous,
                        wall_limit_scan, wall_pairing, window, window_gradient,
                        windowed_interaction_residual,
                        windowed_rotational_residual)
from vortexdrag.filtering import _bump1d_mass
from vortexdrag.snapshots import FlowSnapshot


@pytest.fixture(scope="module")
def grid():
    return build_grid(Circle(1.0), 20.0, (96, 192), wall_cell=0.02)


@pytest.fixture(scope="module")
def bank(grid):
    return FilterBank(grid, 8 * grid.wall_spacing)


class TestKernel:
    def test_unit_mass(self, grid, bank):
        ones = np.ones(grid.nr * grid.ntheta)
        mass = bank.weights @ ones
        assert np.max(np.abs(mass - 1.0)) < 1e-12

    def test_zero_first_moments(self, grid, bank):
        x = grid.x.reshape(-1)
        y = grid.y.reshape(-1)
        out = np.arange(bank.row0 * grid.ntheta, grid.nr * grid.ntheta)
        mx = bank.weights @ x - x[out]
        my = bank.weights @ y - y[out]
        ok = bank.linear_exact_rows
        assert ok.mean() > 0.3  # resolvable near-wall band exists
        assert np.max(np.abs(mx[ok])) < 1e-12
        assert np.max(np.abs(my[ok])) < 1e-12

    def test_constants_filter_exactly(self, grid, bank):
        f = np.full((grid.nr, grid.ntheta), 3.0)
        fbar = bank.smooth_scalar(f)
        assert np.max(np.abs(fbar[bank.row0:] - 3.0)) < 1e-12

    def test_linear_fields_filter_exactly(self, grid, bank):
        f = 1.5 * grid.x - 0.25 * grid.y
        fbar = bank.smooth_scalar(f)
        rows_ok = bank.linear_exact_rows.reshape(-1, grid.ntheta)
        assert np.max(np.abs((fbar - f)[bank.row0:])[rows_ok]) < 1e-12

    def test_smooth_field_order(self):
        # Uniform radial spacing and a matched angular band keep the
        # kernel resolvable at every scan scale.
        grid = build_grid(Circle(1.0), 10.0, (96, 256), stretch=0.0)
        dx = max(grid.r[1] - grid.r[0], 4.0 * grid.dtheta_step)
        f = np.exp(-((grid.x - 3.0) ** 2 + grid.y**2) / 2.0)
        errs = []
        region = (grid.r[:, None] > 2.0) & (grid.r[:, None] < 4.0) \
            & np.ones((1, grid.ntheta), bool)
        for mult in (8, 4, 2):
            b = FilterBank(grid, mult * dx)
            fb = b.smooth_scalar(f)
            errs.append(np.sqrt(np.sum(((fb - f) ** 2 * grid.weights)[region])))
        orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(orders) >= 1.8

    def test_mollify_rejects_near_wall_evaluation(self, grid):
        from vortexdrag.filtering import mollify_at

        spec = FilterSpec(ell=8 * grid.wall_spacing, h=16 * grid.wall_spacing)
        f = np.ones((grid.nr, grid.ntheta))
        with pytest.raises(DomainError, match="wall"):
            mollify_at(grid, f, spec, (1.0 + 0.5 * spec.ell, 0.0))

    def test_unresolvable_scale_rejected(self, grid):
        with pytest.raises(ValidationError, match="resolvable"):
            FilterBank(grid, 0.5 * grid.wall_spacing)


class TestWindow:
    def test_profile_bounds(self):
        spec = FilterSpec(ell=0.3, h=0.6)
        assert spec.window(np.array([0.3]))[0] == 0.0  # below h
        assert spec.window(np.array([1.2]))[0] == 1.0  # above h + ell
        d = np.linspace(0.0, 1.5, 400)
        w = spec.window(d)
        assert np.all(np.diff(w) >= -1e-15)

    def test_derivative_integrates_to_one(self):
        spec = FilterSpec(ell=0.3, h=0.6)
        val, _ = quad(lambda d: spec.window_derivative(np.array([d]))[0],
                      0.6, 0.9, limit=200)
        assert val == pytest.approx(1.0, abs=1e-10)

    def test_derivative_bound(self):
        spec = FilterSpec(ell=0.3, h=0.6)
        d = np.linspace(0.6, 0.9, 4001)
        assert np.max(spec.window_derivative(d)) <= 4.0 / spec.ell

    def test_derivative_support(self):
        spec = FilterSpec(ell=0.3, h=0.6)
        d = np.array([0.0, 0.59, 0.91, 5.0])
        assert np.all(spec.window_derivative(d) == 0.0)

    def test_h_must_exceed_ell(self):
        with pytest.raises(ValidationError, match="exceed"):
            FilterSpec(ell=0.3, h=0.3)

    def test_window_gradient_points_along_normal(self, grid):
        spec = FilterSpec(ell=0.2, h=0.4)
        gw = window_gradient(spec, grid)
        cross = gw[..., 0] * grid.normal_field[..., 1] \
            - gw[..., 1] * grid.normal_field[..., 0]
        assert np.max(np.abs(cross)) < 1e-14


class TestCumulant:
    def test_constant_gives_zero(self, grid, bank):
        c = np.full((grid.nr, grid.ntheta), 2.5)
        g_field = np.sin(grid.x) * grid.y
        tau = cumulant(bank, c, g_field)
        assert np.max(np.abs(tau[bank.row0:])) < 1e-12

    def test_linear_fields_give_kernel_covariance(self, grid, bank):
        A = np.array([[0.5, 1.2], [-0.3, 0.8]])
        u = np.stack([A[0, 0] * grid.x + A[0, 1] * grid.y,
                      A[1, 0] * grid.x + A[1, 1] * grid.y], axis=-1)
        tau = cumulant(bank, u, u)[bank.row0:].reshape(-1, 2, 2)
        W = bank.weights
        x = grid.x.reshape(-1)
        y = grid.y.reshape(-1)
        cov = {}
        for nm, p, q in (("xx", x, x), ("xy", x, y), ("yy", y, y)):
            cov[nm] = W @ (p * q) - (W @ p) * (W @ q)
        expected = np.zeros_like(tau)
        for i in range(2):
            for j in range(2):
                expected[:, i, j] = (A[i, 0] * A[j, 0] * cov["xx"]
                                     + (A[i, 0] * A[j, 1] + A[i, 1] * A[j, 0]) * cov["xy"]
                                     + A[i, 1] * A[j, 1] * cov["yy"])
        scale = np.abs(expected).max()
        assert np.max(np.abs(tau - expected)) < 1e-11 * max(scale, 1.0)

    def test_transpose_symmetry(self, grid, bank):
        rng = np.random.default_rng(11)
        f = rng.standard_normal((grid.nr, grid.ntheta, 2))
        g_field = rng.standard_normal((grid.nr, grid.ntheta, 2))
        t_fg = cumulant(bank, f, g_field)
        t_gf = cumulant(bank, g_field, f)
        assert np.max(np.abs(t_fg - np.swapaxes(t_gf, -1, -2))) < 1e-14


class TestCETIdentity:
    def test_random_fields(self, grid, bank):
        rng = np.random.default_rng(7)
        f = rng.standard_normal((grid.nr, grid.ntheta))
        g_field = rng.standard_normal((grid.nr, grid.ntheta))
        assert cet_identity_gap(bank, f, g_field) < 1e-12

    def test_constant_field_both_sides_zero(self, grid, bank):
        c = np.full((grid.nr, grid.ntheta), 4.0)
        g_field = np.cos(grid.x)
        assert cet_identity_gap(bank, c, g_field) < 1e-12

    def test_real_flow_field(self, steady20_small, stream):
        body, flow, snaps = steady20_small
        snap = snaps[-1]
        g = snap.grid
        gp = flow.on_grid(g)
        state = decompose(snap, gp)
        b = FilterBank(g, 6 * g.wall_spacing)
        assert cet_identity_gap(b, state.u_rot, state.u_rot) < 1e-12


class TestExtension:
    def test_wall_restriction(self, grid):
        psi = WallTestFunction(cos_coeffs=(1.0, 0.5), t0=0.0, t1=1.0)
        ext = extend_ext0(psi, 0.5, grid)
        fld = ext.field_at(0.5)
        expected = psi.space(grid.theta) * float(psi.time(np.array(0.5)))
        assert np.max(np.abs(fld[0] - expected)) < 1e-14

    def test_midpoint_value(self, grid):
        psi = WallTestFunction(cos_coeffs=(1.0,), t0=0.0, t1=1.0)
        ext = extend_ext0(psi, 0.5, grid)
        fld = ext.field_at(0.5)
        i = int(np.argmin(np.abs(grid.r - 1.25)))
        d = grid.r[i] - 1.0
        expected = math.exp(-d / (0.5 - d)) * float(psi.time(np.array(0.5)))
        assert fld[i, 0] == pytest.approx(expected, rel=1e-12)

    def test_vanishes_beyond_width(self, grid):
        psi = WallTestFunction(cos_coeffs=(1.0,), t0=0.0, t1=1.0)
        ext = extend_ext0(psi, 0.5, grid)
        fld = ext.field_at(0.5)
        assert np.max(np.abs(fld[grid.r - 1.0 >= 0.5])) == 0.0

    def test_gradient_matches_finite_differences(self, grid):
        psi = WallTestFunction(cos_coeffs=(0.0, 1.0), t0=0.0, t1=1.0)
        ext = extend_ext0(psi, 0.5, grid)
        grad = ext.gradient_at(0.5)
        fld = ext.field_at(0.5)
        gd = grid.grad(fld)
        band = (grid.r - 1.0 < 0.4) & (grid.r - 1.0 > 0.0)
        assert np.allclose(grad[band], gd[band], atol=2e-2)

    def test_width_beyond_reach_rejected(self):
        from tests.test_geometry import bean_body

        body = bean_body()
        psi = WallTestFunction()
        grid = build_grid(Circle(1.0), 20.0, (64, 128))
        grid_bean = grid  # extension checks the body reach, not the grid body
        object.__setattr__(grid_bean.body, "reach", 0.3) if False else None
        # circle reach is infinite; emulate via a small custom reach
        from vortexdrag.filtering import Extension

        class Tiny:
            reach = 0.3
            radius = 1.0

        g = build_grid(Circle(1.0), 20.0, (64, 128))
        g.body = Tiny()
        with pytest.raises(ValidationError, match="tubular"):
            Extension(psi=psi, eps=0.5, grid=g)


class TestWallPairing:
    def test_zero_field(self, grid):
        psi = WallTestFunction(cos_coeffs=(1.0,), t0=0.2, t1=0.8)
        series = [np.zeros((grid.nr, grid.ntheta))] * 3
        assert wall_pairing(series, [0.0, 0.5, 1.0], psi, 0.5, grid) == 0.0

    def test_unit_field_against_dense_quadrature(self, grid):
        psi = WallTestFunction(cos_coeffs=(1.0,), t0=0.2, t1=0.8)
        times = np.linspace(0.0, 1.0, 33)
        series = [np.ones((grid.nr, grid.ntheta))] * len(times)
        val = wall_pairing(series, times, psi, 0.5, grid)
        # independent dense quadrature in polar coordinates and time
        r_int, _ = quad(lambda r: math.exp(-(r - 1) / (0.5 - (r - 1))) * r,
                        1.0, 1.5, limit=200)
        t_int, _ = quad(lambda t: float(psi.time(np.array(t))), 0.2, 0.8)
        exact = r_int * 2 * math.pi * t_int
        assert val == pytest.approx(exact, rel=5e-3)

    def test_support_outside_series_rejected(self, grid):
        psi = WallTestFunction(cos_coeffs=(1.0,), t0=-0.5, t1=0.5)
        series = [np.ones((grid.nr, grid.ntheta))] * 2
        with pytest.raises(ValidationError, match="support"):
            wall_pairing(series, [0.0, 1.0], psi, 0.5, grid)


class TestFluxes:
    @pytest.fixture()
    def steady_filtered(self, steady20_small, stream):
        body, flow, snaps = steady20_small
        snap = snaps[-1]
        g = snap.grid
        gp = flow.on_grid(g)
        state = decompose(snap, gp)
        spec = FilterSpec(ell=4 * g.wall_spacing, h=8 * g.wall_spacing)
        bank = FilterBank(g, spec.ell)
        fs = filter_state(state, snap, gp, spec, bank=bank)
        return g, gp, state, snap, spec, bank, fs

    def test_zero_rotational_state_zero_fluxes(self, grid, stream):
        gp = stream.on_grid(grid)
        from vortexdrag import snapshot_from_potential

        snap = snapshot_from_potential(gp, nu=0.1)
        state = decompose(snap, gp)
        spec = FilterSpec(ell=4 * grid.wall_spacing, h=8 * grid.wall_spacing)
        bank = FilterBank(grid, spec.ell)
        fs = filter_state(state, snap, gp, spec, bank=bank)
        terms = interaction_flux(fs)
        assert np.max(np.abs(terms["total"])) < 1e-12
        rterms = rotational_flux(fs)
        assert np.max(np.abs(rterms["total"])) < 1e-12

    def test_terms_sum_to_total(self, steady_filtered):
        g, gp, state, snap, spec, bank, fs = steady_filtered
        terms = interaction_flux(fs)
        total = sum(v for k, v in terms.items() if k != "total")
        assert np.max(np.abs(total - terms["total"])) < 1e-12
        rterms = rotational_flux(fs)
        rtotal = sum(v for k, v in rterms.items() if k != "total")
        assert np.max(np.abs(rtotal - rterms["total"])) < 1e-12

    def test_momentum_flux_pressure_only(self, grid, stream):
        # p_rot = 1, u_rot = 0: flux reduces to -theta' n.
        gp = stream.on_grid(grid)
        from vortexdrag import snapshot_from_potential

        snap = snapshot_from_potential(gp, nu=0.1)
        snap.p = gp.p + 1.0
        spec = FilterSpec(ell=4 * grid.wall_spacing, h=8 * grid.wall_spacing)
        bank = FilterBank(grid, spec.ell)
        # bypass the normalization check deliberately: build the state by hand
        from vortexdrag.decomposition import RotationalState

        state = RotationalState(grid=grid, u_rot=snap.u - gp.u,
                                p_rot=snap.p - gp.p, interaction_energy=0.0,
                                rotational_energy=0.0, r_limit=grid.r_max)
        fs = filter_state(state, snap, gp, spec, bank=bank)
        mom = momentum_wall_flux(fs)
        dprof = spec.window_derivative(grid.r - grid.wall_radius)
        expected = -dprof[:, None, None] * grid.normal_field
        sel = slice(bank.row0, None)
        assert np.max(np.abs(mom["flux"][sel] - expected[sel])) < 1e-10
        assert np.max(np.abs(mom["tangential"][sel])) < 1e-10

    def test_windowed_balances_close(self, steady20_small, stream):
        body, flow, snaps = steady20_small
        g = snaps[-1].grid
        gp = flow.on_grid(g)
        spec = FilterSpec(ell=4 * g.wall_spacing, h=8 * g.wall_spacing)
        bank = FilterBank(g, spec.ell)
        _, rel_i = windowed_interaction_residual(snaps, gp, spec, bank=bank,
                                                 r_limit=8.0)
        _, rel_r = windowed_rotational_residual(snaps, gp, spec, bank=bank,
                                                r_limit=8.0)
        # small-domain smoke level; the acceptance-scale run closes below 5%
        assert rel_i <= 0.08
        assert rel_r <= 0.05

    def test_windowed_balances_close_acceptance_scale(self, steady20_big, stream):
        body, flow, snaps = steady20_big
        g = snaps[-1].grid
        gp = flow.on_grid(g)
        spec = FilterSpec(ell=4 * g.wall_spacing, h=8 * g.wall_spacing)
        bank = FilterBank(g, spec.ell)
        _, rel_i = windowed_interaction_residual(snaps, gp, spec, bank=bank,
                                                 r_limit=40.0)
        _, rel_r = windowed_rotational_residual(snaps, gp, spec, bank=bank,
                                                r_limit=40.0)
        assert rel_i <= 0.05
        assert rel_r <= 0.05

    def test_shell_support_of_window_gradient_terms(self, steady_filtered):
        g, gp, state, snap, spec, bank, fs = steady_filtered
        mom = momentum_wall_flux(fs)
        d = g.r - g.wall_radius
        outside = (d < spec.h) | (d > spec.h + spec.ell)
        assert np.max(np.abs(mom["flux"][outside])) == 0.0


class TestInertialDissipation:
    def test_zero_for_potential_only(self, grid, stream):
        gp = stream.on_grid(grid)
        from vortexdrag import snapshot_from_potential

        snap = snapshot_from_potential(gp, nu=0.1)
        state = decompose(snap, gp)
        spec = FilterSpec(ell=4 * grid.wall_spacing, h=8 * grid.wall_spacing)
        fs = filter_state(state, snap, gp, spec)
        assert np.max(np.abs(inertial_dissipation(fs))) < 1e-13

    def test_smooth_field_scaling(self, steady20_big, stream):
        # Fine wall cells keep every scan window deep inside the smooth
        # boundary layer, where the cascade term vanishes with scale.
        body, flow, snaps = steady20_big
        snap = snaps[-1]
        g = snap.grid
        gp = flow.on_grid(g)
        state = decompose(snap, gp)
        vals = []
        for m in (8, 4, 2):
            spec = FilterSpec(ell=m * g.wall_spacing, h=2 * m * g.wall_spacing)
            bank = FilterBank(g, spec.ell)
            fs = filter_state(state, snap, gp, spec, bank=bank)
            vals.append(g.integrate(np.abs(inertial_dissipation(fs)),
                                    row0=bank.row0))
        orders = [math.log2(vals[i] / vals[i + 1]) for i in range(2)]
        assert min(orders) >= 1.0


class TestScans:
    def test_wall_limit_scan_monotone(self, steady20_small, stream):
        body, flow, snaps = steady20_small
        snap = snaps[-1]
        g = snap.grid
        gp = flow.on_grid(g)
        psi = WallTestFunction(cos_coeffs=(1.0,), t0=0.0, t1=1.0)
        reports, richardson, rich_gap = wall_limit_scan(
            snap, gp, psi, eps=0.5, ells=[m * g.wall_spacing for m in (8, 4, 2)])
        gaps = [r.gap for r in reports]
        assert gaps[0] > gaps[1] > gaps[2]
        assert rich_gap < gaps[2]

    def test_green_pairing_two_discretizations(self, steady20_small, stream):
        body, flow, snaps = steady20_small
        snap = snaps[-1]
        g = snap.grid
        gp = flow.on_grid(g)
        times = np.linspace(0.0, 1.0, 9)
        series = [FlowSnapshot(grid=g, t=float(t), nu=snap.nu, u=snap.u,
                               p=snap.p, omega=snap.omega,
                               tau_wall=snap.tau_wall, psi=snap.psi)
                  for t in times]
        psi = WallTestFunction(cos_coeffs=(1.0,), t0=0.1, t1=0.9)
        rep = skin_friction_pairing_viscous(series, gp, psi, eps=0.5)
        assert rep.gap <= 0.03
        assert rep.volume == pytest.approx(rep.volume_raw - rep.correction)

    def test_zero_vorticity_green_pairing(self, grid, stream):
        gp = stream.on_grid(grid)
        from vortexdrag import snapshot_from_potential

        series = [snapshot_from_potential(gp, nu=0.1, t=float(t))
                  for t in (0.0, 0.5, 1.0)]
        psi = WallTestFunction(cos_coeffs=(1.0,), t0=0.2, t1=0.8)
        rep = skin_friction_pairing_viscous(series, gp, psi, eps=0.5)
        assert rep.volume_raw == 0.0
        assert rep.boundary == 0.0

    def test_no_flow_through_profile(self, steady20_small, stream):
        body, flow, snaps = steady20_small
        g = snaps[-1].grid
        gp = flow.on_grid(g)
        state = decompose(snaps[-1], gp)
        rows = no_flow_through_profile(state, [0.05, 0.1, 0.2, 0.4])
        assert len(rows) == 4
        sups = [s for _, s in rows]
        assert sups[0] <= sups[-1]  # monotone in shell width by definition
