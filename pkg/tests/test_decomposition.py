"""Rotational splitting, transfer rate, drag-transfer verification, and
the pointwise energy balances."""

import numpy as np
import pytest

from vortexdrag import (ValidationError, decompose, interaction_residual,
                        ja_verify, relative_energy_audit,
                        relative_energy_residual, rotational_residual,
                        snapshot_from_potential, transfer_rate)


@pytest.fixture(scope="module")
def steady(steady20_small, stream):
    body, flow, snaps = steady20_small
    gp = flow.on_grid(snaps[-1].grid)
    return body, flow, gp, snaps


class TestDecompose:
    def test_potential_snapshot_gives_zero_state(self, steady):
        body, flow, gp, snaps = steady
        snap = snapshot_from_potential(gp, nu=0.1)
        state = decompose(snap, gp)
        assert np.max(np.abs(state.u_rot)) == 0.0
        assert state.interaction_energy == 0.0
        assert state.rotational_energy == 0.0

    def test_exact_subtraction_of_compact_bump(self, steady):
        body, flow, gp, snaps = steady
        snap = snapshot_from_potential(gp, nu=0.1)
        g = snap.grid
        bump = np.exp(-((g.x - 8.0) ** 2 + g.y**2))
        w = np.stack([bump, -0.5 * bump], axis=-1)
        snap.u = snap.u + w
        state = decompose(snap, gp)
        assert np.max(np.abs(state.u_rot - w)) < 1e-14

    def test_developed_flow_energies(self, steady):
        body, flow, gp, snaps = steady
        state = decompose(snaps[-1], gp)
        assert state.rotational_energy > 0.0
        assert snaps[-1].curl_mismatch() < 0.05

    def test_normalization_mismatch_rejected(self, steady):
        body, flow, gp, snaps = steady
        snap = snapshot_from_potential(gp, nu=0.1)
        snap.p = snap.p + 0.05  # break the shared outer-ring normalization
        with pytest.raises(ValidationError, match="normalization"):
            decompose(snap, gp)

    def test_grid_mismatch_rejected(self, steady, stream):
        from vortexdrag import Circle, build_grid

        body, flow, gp, snaps = steady
        other = flow.on_grid(build_grid(Circle(1.0), 20.0, (64, 128)))
        with pytest.raises(ValidationError, match="grid"):
            decompose(snaps[-1], other)


class TestTransfer:
    def test_zero_vorticity_zero_transfer(self, steady):
        body, flow, gp, snaps = steady
        snap = snapshot_from_potential(gp, nu=0.1)
        state = decompose(snap, gp)
        total, field, t_inv, t_visc = transfer_rate(state, snap, gp)
        assert total == 0.0 and t_inv == 0.0 and t_visc == 0.0

    def test_parts_sum_exactly(self, steady):
        body, flow, gp, snaps = steady
        state = decompose(snaps[-1], gp)
        total, field, t_inv, t_visc = transfer_rate(state, snaps[-1], gp)
        assert total == t_inv + t_visc  # same arithmetic, exact

    def test_transfer_tracks_drag_power(self, steady):
        body, flow, gp, snaps = steady
        rep = ja_verify(snaps[-1], gp)
        # Small domain keeps a sizable truncation tail; the identity is
        # verified tightly on the wide acceptance domain.
        assert rep.mismatch_drag_transfer < 0.3


class TestJAVerify:
    def test_potential_only_all_zero(self, steady):
        body, flow, gp, snaps = steady
        snap = snapshot_from_potential(gp, nu=0.1)
        rep = ja_verify(snap, gp)
        assert rep.drag_power == pytest.approx(0.0, abs=1e-12)
        assert rep.transfer == 0.0
        assert rep.reduced == pytest.approx(0.0, abs=1e-12)

    def test_integration_by_parts_consistency(self, steady):
        body, flow, gp, snaps = steady
        rep = ja_verify(snaps[-1], gp)
        assert rep.mismatch_transfer_reduced < 0.02

    def test_drag_split_consistent(self, steady):
        body, flow, gp, snaps = steady
        rep = ja_verify(snaps[-1], gp)
        assert rep.drag_pressure_part + rep.drag_friction_part == \
            pytest.approx(rep.drag_power, rel=1e-12)

    def test_integration_by_parts_refines(self, steady20_big, stream):
        body, flow, snaps = steady20_big
        gp = flow.on_grid(snaps[-1].grid)
        rep = ja_verify(snaps[-1], gp)
        assert rep.mismatch_transfer_reduced < 0.005


class TestResiduals:
    def test_steady_triple_closures(self, steady):
        body, flow, gp, snaps = steady
        ri = interaction_residual(snaps, gp, r_limit=8.0)
        rr = rotational_residual(snaps, gp, r_limit=8.0)
        assert ri.relative <= 0.05
        assert rr.relative <= 0.05

    def test_zero_rotational_state_zero_residual(self, steady):
        body, flow, gp, snaps = steady
        snap = snapshot_from_potential(gp, nu=0.1)
        triple = []
        for dt in (-0.5, 0.0, 0.5):
            s = snapshot_from_potential(gp, nu=0.1, t=10.0 + dt)
            triple.append(s)
        ri = interaction_residual(triple, gp, r_limit=8.0)
        # every term vanishes identically for u = u_phi, omega = 0
        assert np.max(np.abs(ri.field[1:-1])) < 1e-10

    def test_pressure_corruption_is_detected(self, steady):
        body, flow, gp, snaps = steady
        base = interaction_residual(snaps, gp, r_limit=8.0)
        corrupted = [s for s in snaps]
        mid = snaps[1]
        bad = type(mid)(grid=mid.grid, t=mid.t, nu=mid.nu, u=mid.u,
                        p=mid.p + 0.1, omega=mid.omega, tau_wall=mid.tau_wall,
                        psi=mid.psi)
        corrupted[1] = bad
        spoiled = interaction_residual(corrupted, gp, r_limit=8.0)
        # the corruption shifts the residual field by exactly the
        # discrete divergence of 0.1 u_phi, a nonzero field
        g = mid.grid
        expected = g.div(0.1 * gp.u)
        shift = spoiled.field - base.field
        assert np.max(np.abs(shift)) > 0.0
        assert np.allclose(shift[1:-1], expected[1:-1], atol=1e-10)

    def test_sum_identity_to_machine(self, steady):
        body, flow, gp, snaps = steady
        ri = interaction_residual(snaps, gp)
        rr = rotational_residual(snaps, gp)
        rel = relative_energy_residual(snaps, gp)
        gap = np.max(np.abs(ri.field + rr.field - rel.field))
        scale = max(np.max(np.abs(ri.field)), np.max(np.abs(rr.field)), 1e-300)
        assert gap / scale < 1e-12

    def test_nonuniform_triple_rejected(self, steady):
        body, flow, gp, snaps = steady
        mid = snaps[1]
        shifted = type(mid)(grid=mid.grid, t=mid.t + 0.2, nu=mid.nu, u=mid.u,
                            p=mid.p, omega=mid.omega, tau_wall=mid.tau_wall,
                            psi=mid.psi)
        with pytest.raises(ValidationError, match="non-uniform"):
            interaction_residual([snaps[0], shifted, snaps[2]], gp)


class TestAudit:
    def test_potential_only_audit_is_zero(self, steady):
        body, flow, gp, snaps = steady
        series = [snapshot_from_potential(gp, nu=0.1, t=float(t))
                  for t in (0.0, 1.0, 2.0)]
        rows = relative_energy_audit(series, gp)
        t, e, dedt, diss, flux, closure = rows[0]
        assert e == 0.0 and dedt == 0.0 and diss == 0.0
        assert abs(flux) < 1e-12 and abs(closure) < 1e-12

    def test_steady_audit_closes(self, steady):
        body, flow, gp, snaps = steady
        rows = relative_energy_audit(snaps, gp, r_limit=5.0)
        t, e, dedt, diss, flux, closure = rows[0]
        assert abs(dedt) <= 0.05 * diss
        assert abs(closure) <= 0.05 * diss
