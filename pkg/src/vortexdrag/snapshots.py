"""Flow snapshot container and its physical invariants."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geometry import ExteriorGrid
from .potential import GridPotential


@dataclass
class FlowSnapshot:
    """One time level of a viscous exterior flow.

    Fields live on the snapshot's grid: velocity ``u`` in Cartesian
    components (nr, ntheta, 2), pressure over density ``p``, scalar
    vorticity ``omega``, the signed tangential wall stress over density
    ``tau_wall`` (ntheta,), and the streamfunction ``psi`` used for
    restarts.  ``wall_velocity`` records prescribed tangential wall
    motion (zero for the static no-slip wall); synthetic snapshots of
    moving-wall flows set it so the no-slip invariant stays meaningful.
    """

    grid: ExteriorGrid
    t: float
    nu: float
    u: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    tau_wall: np.ndarray
    psi: np.ndarray | None = None
    wall_velocity: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    NO_SLIP_TOL = 1e-10
    DIV_TOL = 1e-8
    CURL_TOL = 0.15

    def wall_slip(self) -> float:
        """Largest wall-ring speed relative to the recorded wall motion."""
        g = self.grid
        tangent = np.stack([-g.sin_t, g.cos_t], axis=-1)
        wall_u = self.u[0]
        if self.wall_velocity is not None:
            wall_u = wall_u - self.wall_velocity[:, None] * tangent
        return float(np.max(np.linalg.norm(wall_u, axis=-1)))

    def require_no_slip(self) -> None:
        slip = self.wall_slip()
        if slip > self.NO_SLIP_TOL:
            raise ValidationError(
                f"no-slip invariant fails: wall slip {slip:.3e} exceeds "
                f"{self.NO_SLIP_TOL:.0e}"
            )

    def divergence_norm(self) -> float:
        """Relative L2 norm of the discrete divergence of u.

        Uses the grid's native polar-form divergence over interior
        rings, built from the same operators that derive u from the
        streamfunction; solver snapshots return machine-level zeros.
        """
        g = self.grid
        div = g.div_polar(self.u)[1:-1]
        num = np.sqrt(np.sum(div**2 * g.weights[1:-1]))
        gu = g.grad(self.u[..., 0])
        gv = g.grad(self.u[..., 1])
        scale = np.sqrt(g.integrate(gu[..., 0] ** 2 + gu[..., 1] ** 2
                                    + gv[..., 0] ** 2 + gv[..., 1] ** 2))
        return float(num / max(scale, 1e-300))

    def curl_mismatch(self) -> float:
        """Relative L2 gap between omega and the discrete curl of u.

        Wall and outer rings are excluded (one-sided stencils there are
        a different closure than the solver's wall fit); the scale in
        the denominator is the larger of the vorticity norm and the
        velocity-gradient norm, so irrotational fields compare against
        their shear magnitude rather than 0/0.
        """
        g = self.grid
        curl = g.curl(self.u)
        diff = (curl - self.omega)[1:-1]
        num = np.sqrt(np.sum(diff**2 * g.weights[1:-1]))
        den = np.sqrt(np.sum(self.omega[1:-1] ** 2 * g.weights[1:-1]))
        gu = g.grad(self.u[..., 0])
        gv = g.grad(self.u[..., 1])
        gscale = np.sqrt(g.integrate(gu[..., 0] ** 2 + gu[..., 1] ** 2
                                     + gv[..., 0] ** 2 + gv[..., 1] ** 2))
        return float(num / max(den, gscale, 1e-300))

    def validate(self) -> None:
        self.require_no_slip()
        div = self.divergence_norm()
        if div > self.DIV_TOL:
            raise ValidationError(
                f"incompressibility fails: relative divergence {div:.3e}"
            )
        curl = self.curl_mismatch()
        if curl > self.CURL_TOL:
            raise ValidationError(
                f"vorticity inconsistent with velocity: relative curl "
                f"gap {curl:.3e}"
            )


def snapshot_from_potential(pot: GridPotential, nu: float,
                            t: float = 0.0) -> FlowSnapshot:
    """Snapshot carrying the background potential flow as if viscous.

    The construction itself is legitimate diagnostic input (zero
    vorticity, potential pressure), but it slips at the wall, so
    stress and drag operations will refuse it.
    """
    g = pot.grid
    return FlowSnapshot(
        grid=g, t=t, nu=nu, u=pot.u.copy(), p=pot.p.copy(),
        omega=np.zeros((g.nr, g.ntheta)),
        tau_wall=np.zeros(g.ntheta), psi=pot.psi.copy(),
    )


def rigid_rotation_snapshot(grid: ExteriorGrid, nu: float,
                            rate: float = 1.0) -> FlowSnapshot:
    """Solid-body rotation u = rate (-y, x) clipped to the annulus.

    The wall co-rotates (wall_velocity = rate * a), so no slip holds
    relative to the moving wall and omega = 2 rate everywhere.
    """
    u = rate * np.stack([-grid.y, grid.x], axis=-1)
    omega = np.full((grid.nr, grid.ntheta), 2.0 * rate)
    return FlowSnapshot(
        grid=grid, t=0.0, nu=nu, u=u, p=np.zeros_like(omega), omega=omega,
        tau_wall=nu * omega[0],
        wall_velocity=np.full(grid.ntheta, rate * grid.wall_radius),
    )
