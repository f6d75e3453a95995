"""Snapshot and potential-solution files: text header plus raw floats.

The header is UTF-8 ``key: value`` lines terminated by a blank line;
the payload is raw little-endian 64-bit floats, row-major, concatenated
in the declared field order.  Round trips are bit exact.  The first
header line carries the magic and format version; readers reject
versions they do not understand, and payload size mismatches name the
expected and actual byte counts.
"""

from __future__ import annotations

import numpy as np

from .errors import UnsupportedFormatError, ValidationError
from .geometry import Circle, ExteriorGrid, build_grid
from .potential import GridPotential
from .snapshots import FlowSnapshot

SNAPSHOT_MAGIC = "vortexdrag-snapshot"
POTENTIAL_MAGIC = "vortexdrag-potential"
VERSION = 1

_SNAP_FIELDS = ("psi", "omega", "u_x", "u_y", "p")
_POT_FIELDS = ("phi", "u_x", "u_y", "grad_xx", "grad_xy", "grad_yx",
               "grad_yy", "p", "psi")


def _header_lines(magic: str, grid: ExteriorGrid, extra: dict,
                  fields: tuple) -> bytes:
    lines = [f"{magic} {VERSION}", "endian: little", "body: circle",
             f"radius: {grid.wall_radius!r}", f"r_max: {grid.r_max!r}",
             f"nr: {grid.nr}", f"ntheta: {grid.ntheta}",
             f"stretch: {grid.stretch!r}"]
    for key, val in extra.items():
        lines.append(f"{key}: {val}")
    lines.append("fields: " + ",".join(fields))
    return ("\n".join(lines) + "\n\n").encode("utf-8")


def _parse_header(blob: bytes, magic: str):
    end = blob.find(b"\n\n")
    if end < 0:
        raise ValidationError("missing blank line terminating the header")
    head = blob[:end].decode("utf-8").splitlines()
    first = head[0].split()
    if len(first) != 2 or first[0] != magic:
        raise UnsupportedFormatError(
            f"not a {magic} file (got {head[0]!r})")
    version = int(first[1])
    if version != VERSION:
        raise UnsupportedFormatError(
            f"unsupported {magic} version {version}; this reader handles "
            f"version {VERSION}")
    kv = {}
    for line in head[1:]:
        key, _, val = line.partition(":")
        kv[key.strip()] = val.strip()
    if kv.get("endian") != "little":
        raise UnsupportedFormatError(
            "endianness marker absent or not little-endian")
    return kv, blob[end + 2:]


def _grid_from_header(kv: dict) -> ExteriorGrid:
    if kv.get("body") != "circle":
        raise ValidationError(f"unsupported body {kv.get('body')!r} in file")
    return build_grid(Circle(float(kv["radius"])), float(kv["r_max"]),
                      (int(kv["nr"]), int(kv["ntheta"])),
                      stretch=float(kv["stretch"]))


def _check_payload(payload: bytes, expected_floats: int) -> np.ndarray:
    expected = expected_floats * 8
    if len(payload) != expected:
        raise ValidationError(
            f"payload size mismatch: expected {expected} bytes "
            f"({expected_floats} float64), found {len(payload)}")
    return np.frombuffer(payload, dtype="<f8")


def save_snapshot(snap: FlowSnapshot, path) -> None:
    """Write a snapshot; the round trip restores all floats bitwise."""
    g = snap.grid
    if snap.psi is None:
        raise ValidationError("snapshots need the streamfunction to be saved")
    fields = _SNAP_FIELDS + ("tau_wall",)
    header = _header_lines(
        SNAPSHOT_MAGIC, g,
        {"nu": repr(snap.nu), "t": repr(snap.t),
         "step": snap.meta.get("step", 0)},
        fields,
    )
    arrays = [snap.psi, snap.omega, snap.u[..., 0], snap.u[..., 1], snap.p]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                       for a in arrays)
    payload += np.ascontiguousarray(snap.tau_wall, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_snapshot(path) -> FlowSnapshot:
    with open(path, "rb") as fh:
        blob = fh.read()
    kv, payload = _parse_header(blob, SNAPSHOT_MAGIC)
    grid = _grid_from_header(kv)
    declared = tuple(kv.get("fields", "").split(","))
    if declared != _SNAP_FIELDS + ("tau_wall",):
        raise UnsupportedFormatError(
            f"unexpected field list {declared!r} in snapshot file")
    n = grid.nr * grid.ntheta
    data = _check_payload(payload, len(_SNAP_FIELDS) * n + grid.ntheta)
    shaped = [data[i * n:(i + 1) * n].reshape(grid.nr, grid.ntheta)
              for i in range(len(_SNAP_FIELDS))]
    tau_wall = data[len(_SNAP_FIELDS) * n:]
    psi, omega, ux, uy, p = shaped
    return FlowSnapshot(
        grid=grid, t=float(kv["t"]), nu=float(kv["nu"]),
        u=np.stack([ux, uy], axis=-1), p=p, omega=omega,
        tau_wall=tau_wall.copy(), psi=psi,
        meta={"step": int(kv.get("step", 0))},
    )


def save_potential(pot: GridPotential, path) -> None:
    g = pot.grid
    fields = _POT_FIELDS + ("wall_tangential",)
    header = _header_lines(
        POTENTIAL_MAGIC, g,
        {"vx": repr(float(pot.V[0])), "vy": repr(float(pot.V[1]))},
        fields,
    )
    arrays = [pot.phi, pot.u[..., 0], pot.u[..., 1],
              pot.grad_u[..., 0, 0], pot.grad_u[..., 0, 1],
              pot.grad_u[..., 1, 0], pot.grad_u[..., 1, 1],
              pot.p, pot.psi]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                       for a in arrays)
    payload += np.ascontiguousarray(pot.wall_tangential, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_potential(path) -> GridPotential:
    with open(path, "rb") as fh:
        blob = fh.read()
    kv, payload = _parse_header(blob, POTENTIAL_MAGIC)
    grid = _grid_from_header(kv)
    declared = tuple(kv.get("fields", "").split(","))
    if declared != _POT_FIELDS + ("wall_tangential",):
        raise UnsupportedFormatError(
            f"unexpected field list {declared!r} in potential file")
    n = grid.nr * grid.ntheta
    data = _check_payload(payload, len(_POT_FIELDS) * n + grid.ntheta)
    shaped = [data[i * n:(i + 1) * n].reshape(grid.nr, grid.ntheta)
              for i in range(len(_POT_FIELDS))]
    wall_t = data[len(_POT_FIELDS) * n:].copy()
    phi, ux, uy, gxx, gxy, gyx, gyy, p, psi = shaped
    grad = np.empty((grid.nr, grid.ntheta, 2, 2))
    grad[..., 0, 0], grad[..., 0, 1] = gxx, gxy
    grad[..., 1, 0], grad[..., 1, 1] = gyx, gyy
    return GridPotential(
        grid=grid, V=np.array([float(kv["vx"]), float(kv["vy"])]),
        phi=phi, u=np.stack([ux, uy], axis=-1), grad_u=grad, p=p, psi=psi,
        wall_tangential=wall_t,
    )


def write_csv(path, header_cols, rows) -> None:
    """Deterministic CSV: fixed column order, repr-formatted floats."""
    lines = [",".join(header_cols)]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, float):
                cells.append(repr(v))
            elif isinstance(v, (np.floating,)):
                cells.append(repr(float(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
