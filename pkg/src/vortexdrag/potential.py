"""Background potential flow: exterior Neumann solve and derived fields.

Two engines produce the irrotational background velocity for a body in a
uniform stream V:

* :func:`analytic_circle_potential` evaluates the classical closed-form
  solution for the circle (doublet in a stream).
* :func:`solve_neumann_bem` solves the exterior Neumann problem for a
  general smooth body with a single-layer boundary-integral method:
  source density collocated at midpoint quadrature nodes of the
  parameterization, the smooth-kernel Nystrom trapezoid rule for the
  boundary operator, and a rank-one term pinning the additive constant
  of the disturbance potential.  On smooth closed curves this converges
  spectrally, which is what lets a few hundred nodes reach the 1e-3
  field accuracy the validation suite demands.

Both expose pointwise evaluators for phi, velocity, the velocity
gradient, and Bernoulli pressure, plus ``on_grid`` to sample everything
onto an :class:`~vortexdrag.geometry.ExteriorGrid`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError
from .geometry import Body, Circle, ExteriorGrid, TWO_PI


@dataclass
class GridPotential:
    """Potential solution sampled on a structured exterior grid.

    Arrays share the grid layout: scalars (nr, ntheta), vectors with a
    trailing Cartesian axis, the gradient with a trailing (2, 2) axis in
    the convention grad_u[i, j] = d(u_j)/dx_i.  ``wall_tangential`` is
    the slip velocity u . t of the background flow on the wall ring and
    ``psi`` the background streamfunction (zero on the wall; zeros for
    layer solutions, which do not expose one).
    """

    grid: ExteriorGrid
    V: np.ndarray
    phi: np.ndarray
    u: np.ndarray
    grad_u: np.ndarray
    p: np.ndarray
    psi: np.ndarray
    wall_tangential: np.ndarray

    @property
    def speed(self) -> float:
        return float(np.hypot(self.V[0], self.V[1]))


class PotentialFlow:
    """Shared evaluator interface for the potential background flow."""

    V: np.ndarray
    body: Body

    def phi_at(self, pts):  # pragma: no cover - overridden
        raise NotImplementedError

    def velocity_at(self, pts):  # pragma: no cover - overridden
        raise NotImplementedError

    def velocity_gradient_at(self, pts):  # pragma: no cover - overridden
        raise NotImplementedError

    def streamfunction_at(self, pts):  # pragma: no cover - overridden
        raise NotImplementedError

    def pressure_at(self, pts):
        """Bernoulli pressure p/rho = |V|^2/2 - |u|^2/2 (zero far away)."""
        u = self.velocity_at(pts)
        v2 = float(self.V @ self.V)
        return 0.5 * v2 - 0.5 * np.sum(u * u, axis=-1)

    def wall_trace(self, s):
        """Tangential slip velocity u . t at boundary parameters ``s``."""
        pts = self.body.point(s)
        u = self.velocity_at(pts)
        t = self.body.tangent(s)
        return np.sum(u * t, axis=-1)

    def on_grid(self, grid: ExteriorGrid) -> GridPotential:
        pts = grid.nodes().reshape(-1, 2)
        shape = (grid.nr, grid.ntheta)
        phi = self.phi_at(pts).reshape(shape)
        u = self.velocity_at(pts).reshape(shape + (2,))
        grad_u = self.velocity_gradient_at(pts).reshape(shape + (2, 2))
        p = self.pressure_at(pts).reshape(shape)
        psi = self.streamfunction_at(pts).reshape(shape)
        wall_t = self.wall_trace(grid.theta)
        return GridPotential(grid=grid, V=self.V.copy(), phi=phi, u=u,
                             grad_u=grad_u, p=p, psi=psi,
                             wall_tangential=wall_t)


class CirclePotential(PotentialFlow):
    """Closed-form potential flow past a circle of radius a.

    In polar coordinates aligned with V the potential is
    phi = |V| (r + a^2 / r) cos(theta); velocity and its gradient come
    from the complex potential w(z) = conj(V) z + V a^2 / z.
    """

    def __init__(self, V, radius: float):
        V = np.asarray(V, dtype=float)
        if radius <= 0.0:
            raise ValidationError("circle radius must be positive")
        if np.hypot(V[0], V[1]) <= 0.0:
            raise ValidationError("far-field speed must be positive")
        self.V = V
        self.body = Circle(radius)
        self._a2 = radius * radius
        self._W = complex(V[0], V[1])

    def _z(self, pts):
        pts = np.asarray(pts, dtype=float)
        return pts[..., 0] + 1j * pts[..., 1]

    def phi_at(self, pts):
        z = self._z(pts)
        return np.real(np.conj(self._W) * z + self._W * self._a2 / z)

    def streamfunction_at(self, pts):
        z = self._z(pts)
        return np.imag(np.conj(self._W) * z + self._W * self._a2 / z)

    def velocity_at(self, pts):
        z = self._z(pts)
        conj_u = np.conj(self._W) - self._W * self._a2 / z**2
        return np.stack([np.real(conj_u), -np.imag(conj_u)], axis=-1)

    def velocity_gradient_at(self, pts):
        z = self._z(pts)
        wpp = 2.0 * self._W * self._a2 / z**3  # d(u - i v)/dz
        ux = np.real(wpp)
        vx = -np.imag(wpp)
        out = np.empty(z.shape + (2, 2))
        out[..., 0, 0] = ux    # du/dx
        out[..., 0, 1] = vx    # dv/dx
        out[..., 1, 0] = vx    # du/dy = dv/dx (irrotational)
        out[..., 1, 1] = -ux   # dv/dy (solenoidal)
        return out


def analytic_circle_potential(V, radius: float,
                              grid: ExteriorGrid | None = None):
    """Classical circle solution; sampled on ``grid`` when one is given."""
    flow = CirclePotential(V, radius)
    if grid is None:
        return flow
    return flow.on_grid(grid)


# ---------------------------------------------------------------------------
# Single-layer boundary-integral solver
# ---------------------------------------------------------------------------


def _curvature(body: Body, s):
    if isinstance(body, Circle):
        return np.full(np.asarray(s, dtype=float).shape, 1.0 / body.radius)
    d1 = body._dspline(np.mod(s, TWO_PI))
    d2 = body._d2spline(np.mod(s, TWO_PI))
    num = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    return num / np.sum(d1 * d1, axis=-1) ** 1.5


class PanelPotential(PotentialFlow):
    """Single-layer solution of the exterior Neumann problem.

    The disturbance potential decays at infinity and satisfies
    d(phi_tilde)/dn = -V . n on the wall; the full flow adds the stream
    V . x back.  ``condition`` carries the 2-norm condition number of
    the collocation matrix.  ``n_panels`` is the number of density
    nodes, placed at parameter midpoints.
    """

    # Distance below which boundary sums switch to an upsampled density,
    # in units of the local node spacing.
    _NEAR = 4.0
    _UPSAMPLE = 32

    def __init__(self, body: Body, V, n_panels: int):
        V = np.asarray(V, dtype=float)
        self.body = body
        self.V = V
        if n_panels < 32:
            raise ValidationError(f"panel count {n_panels} below the minimum 32")
        n = int(n_panels)
        h = TWO_PI / n
        s = (np.arange(n) + 0.5) * h
        y = body.point(s)
        nv = body.normal(s)
        tv = body.tangent(s)
        jac = body.speed(s)
        w = h * jac

        flux = float(np.sum((nv @ V) * w))
        scale = max(float(np.hypot(V[0], V[1])), 1.0) * body.perimeter
        if abs(flux) > 1e-10 * scale:
            raise ValidationError(
                f"Neumann data incompatible: net wall flux {flux:.3e}"
            )

        rel = y[:, None, :] - y[None, :, :]
        r2 = np.sum(rel * rel, axis=-1)
        np.fill_diagonal(r2, 1.0)
        K = np.einsum("ijk,ik->ij", rel, nv) / (TWO_PI * r2)
        np.fill_diagonal(K, _curvature(body, s) / (4.0 * math.pi))
        A = 0.5 * np.eye(n) + K * w[None, :]
        # Rank-one term pins the additive constant: total source strength 0.
        A += np.outer(np.ones(n), w) / body.perimeter
        self.condition = float(np.linalg.cond(A))
        if not np.isfinite(self.condition) or self.condition > 1e12:
            raise NumericalError(
                f"boundary system ill-conditioned: cond={self.condition:.3e}"
            )
        rhs = -(nv @ V)
        self.sigma = np.linalg.solve(A, rhs)
        self._s, self._y, self._nv, self._tv = s, y, nv, tv
        self._jac, self._w, self._h = jac, w, h

        # Spectrally upsampled density for near-boundary evaluation.
        m = self._UPSAMPLE * n
        sig_fine = _fft_upsample(self.sigma, m)
        s_fine = (np.arange(m) + 0.5) * (TWO_PI / m)
        # Align: upsampled samples of a midpoint grid land at (k+1/2)*h/M
        # offsets; resample via FFT shift instead of assuming node reuse.
        self._s_fine = s_fine
        self._y_fine = body.point(s_fine)
        self._w_fine = (TWO_PI / m) * body.speed(s_fine)
        self._sig_fine = sig_fine
        self._spacing = h * float(np.max(jac))

        # On-surface tangential trace via singularity subtraction: the
        # tangential kernel behaves like -cot((s'-s)/2)/(4 pi) near the
        # diagonal, and the pure cotangent has zero principal value, so
        # W(i, j) = K_t sigma |B'| + sigma_i cot((s_j-s_i)/2)/(4 pi)
        # is a smooth periodic integrand handled by the trapezoid rule.
        # Its diagonal value is filled by fourth-order interpolation
        # along each row.
        Kt = np.einsum("ijk,ik->ij", rel, tv) / (TWO_PI * r2)
        ds = s[None, :] - s[:, None]
        np.fill_diagonal(ds, math.pi)  # placeholder; diagonal rebuilt below
        W = Kt * (self.sigma * jac)[None, :] \
            + self.sigma[:, None] / np.tan(ds / 2.0) / (4.0 * math.pi)
        idx = np.arange(n)
        near = (W[idx, (idx + 1) % n] + W[idx, (idx - 1) % n]) / 2.0
        far = (W[idx, (idx + 2) % n] + W[idx, (idx - 2) % n]) / 2.0
        W[idx, idx] = (4.0 * near - far) / 3.0
        self._trace_nodes = (tv @ V) + h * np.sum(W, axis=1)

    @property
    def n_panels(self) -> int:
        return len(self.sigma)

    def _split_near(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        d2 = np.min(
            np.sum((pts[:, None, :] - self._y[None, :, :]) ** 2, axis=-1), axis=1
        )
        return pts, d2 > (self._NEAR * self._spacing) ** 2

    def _sum_kernel(self, pts, kernel):
        """Accumulate kernel sums, upsampling the density near the wall."""
        pts, far = self._split_near(pts)
        out = None
        for mask, yy, ww, sg in (
            (far, self._y, self._w, self.sigma),
            (~far, self._y_fine, self._w_fine, self._sig_fine),
        ):
            if not np.any(mask):
                continue
            vals = kernel(pts[mask], yy, ww * sg)
            if out is None:
                out = np.zeros((len(pts),) + vals.shape[1:])
            out[mask] = vals
        return out

    def phi_at(self, pts):
        pts = np.asarray(pts, dtype=float)

        def kern(p, y, q):
            rel = p[:, None, :] - y[None, :, :]
            r2 = np.sum(rel * rel, axis=-1)
            return np.sum(np.log(r2) * q[None, :], axis=1) / (2.0 * TWO_PI)

        phi = self._sum_kernel(pts.reshape(-1, 2), kern)
        return (phi + pts.reshape(-1, 2) @ self.V).reshape(pts.shape[:-1])

    def velocity_at(self, pts):
        pts = np.asarray(pts, dtype=float)

        def kern(p, y, q):
            rel = p[:, None, :] - y[None, :, :]
            r2 = np.sum(rel * rel, axis=-1)
            return np.einsum("ijk,j->ik", rel / r2[..., None], q) / TWO_PI

        u = self._sum_kernel(pts.reshape(-1, 2), kern)
        return (u + self.V[None, :]).reshape(pts.shape)

    def velocity_gradient_at(self, pts):
        pts = np.asarray(pts, dtype=float)

        def kern(p, y, q):
            rel = p[:, None, :] - y[None, :, :]
            r2 = np.sum(rel * rel, axis=-1)
            eye = np.eye(2)[None, None, :, :]
            grad = (eye * r2[..., None, None]
                    - 2.0 * rel[..., :, None] * rel[..., None, :])
            grad /= (r2 * r2)[..., None, None]
            return np.einsum("ijkl,j->ikl", grad, q) / TWO_PI

        g = self._sum_kernel(pts.reshape(-1, 2), kern)
        return g.reshape(pts.shape[:-1] + (2, 2))

    def streamfunction_at(self, pts):
        raise NotImplementedError(
            "layer solutions do not expose a streamfunction; "
            "use the analytic circle background for solver runs"
        )

    def wall_trace(self, s):
        """Tangential slip at boundary parameters, trigonometrically
        interpolated between the density nodes."""
        s = np.mod(np.asarray(s, dtype=float), TWO_PI)
        n = len(self._trace_nodes)
        m = self._UPSAMPLE * n
        fine = _fft_upsample(self._trace_nodes, m)
        s_fine = (np.arange(m) + 0.5) * (TWO_PI / m)
        return np.interp(s, s_fine, fine, period=TWO_PI)

    def on_grid(self, grid: ExteriorGrid) -> GridPotential:
        pts = grid.nodes().reshape(-1, 2)
        shape = (grid.nr, grid.ntheta)
        phi = self.phi_at(pts).reshape(shape)
        u = self.velocity_at(pts).reshape(shape + (2,))
        grad_u = self.velocity_gradient_at(pts).reshape(shape + (2, 2))
        p = self.pressure_at(pts).reshape(shape)
        wall_t = self.wall_trace(grid.theta)
        # Layer kernels are singular on the wall ring itself; use the
        # collocated trace there (u . n = 0 by construction).
        tangent = np.stack([-grid.sin_t, grid.cos_t], axis=-1)
        u[0] = wall_t[:, None] * tangent
        grad_u[0] = grad_u[1]
        p[0] = 0.5 * float(self.V @ self.V) - 0.5 * wall_t**2
        psi = np.zeros(shape)
        return GridPotential(grid=grid, V=self.V.copy(), phi=phi, u=u,
                             grad_u=grad_u, p=p, psi=psi,
                             wall_tangential=wall_t)


def _fft_upsample(values: np.ndarray, m: int) -> np.ndarray:
    """Trigonometric interpolation of midpoint samples onto m midpoints."""
    n = len(values)
    if m == n:
        return values.copy()
    spec = np.fft.rfft(values)
    k = np.arange(len(spec))
    # Node sets start at h/2 and h_m/2; shift phases accordingly.
    h_n = TWO_PI / n
    h_m = TWO_PI / m
    spec = spec * np.exp(1j * k * (h_m - h_n) / 2.0)
    out = np.fft.irfft(spec, n=m) * (m / n)
    return out


def solve_neumann_bem(body: Body, V, n_panels: int) -> PanelPotential:
    """Boundary-integral solution of the exterior Neumann problem."""
    return PanelPotential(body, V, n_panels)


def bernoulli_pressure(sol: GridPotential) -> np.ndarray:
    """Bernoulli pressure p/rho = |V|^2/2 - |u|^2/2 on the grid.

    The constant is fixed so the pressure vanishes with the disturbance
    far from the body, matching the solver normalization.
    """
    v2 = float(sol.V @ sol.V)
    return 0.5 * v2 - 0.5 * np.sum(sol.u * sol.u, axis=-1)


def dalembert_drag(flow: PotentialFlow, body: Body | None = None,
                   n_quad: int = 1024, rho: float = 1.0) -> np.ndarray:
    """Force rho * integral(-p n ds) of the potential solution.

    Both components vanish for the exact solution; the returned vector
    measures how well an approximate solution reproduces the zero-drag
    property.  Layer solutions integrate their own collocated surface
    pressure over the density nodes; analytic solutions use an
    ``n_quad``-point boundary quadrature.
    """
    body = body if body is not None else flow.body
    if isinstance(flow, PanelPotential):
        v2 = float(flow.V @ flow.V)
        p_nodes = 0.5 * v2 - 0.5 * flow._trace_nodes**2
        return -rho * np.einsum("p,pk,p->k", p_nodes, flow._nv, flow._w)
    s = np.linspace(0.0, TWO_PI, n_quad, endpoint=False)
    n = body.normal(s)
    speed = body.speed(s)
    p = flow.pressure_at(body.point(s))
    ds = TWO_PI / n_quad
    return -rho * np.sum(p[:, None] * n * (speed * ds)[:, None], axis=0)
