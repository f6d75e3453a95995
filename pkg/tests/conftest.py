"""Shared fixtures: steady and shedding reference runs, disk-cached.

The expensive solver runs are computed once per source state and cached
as snapshot files keyed by the run parameters and the relevant module
sources, so iterating on tests does not re-integrate unchanged flows.
"""

import hashlib
from pathlib import Path

import numpy as np
import pytest

from vortexdrag import (Circle, CirclePotential, SolverConfig, load_snapshot,
                        run_to_steady, save_snapshot, simulate)

CACHE = Path(__file__).resolve().parent / ".cache"
_SRC = Path(__file__).resolve().parents[1] / "src" / "vortexdrag"


def _source_tag() -> str:
    h = hashlib.sha256()
    for name in ("geometry.py", "potential.py", "solver.py", "snapshots.py"):
        h.update((_SRC / name).read_bytes())
    return h.hexdigest()[:12]


def _cached_steady(tag: str, cfg: SolverConfig, pre_roll: float,
                   pre_resolution=None):
    body = Circle(1.0)
    flow = CirclePotential((1.0, 0.0), 1.0)
    params = hashlib.sha256(
        f"{cfg!r}|{pre_roll}|{pre_resolution}".encode()).hexdigest()[:10]
    key = f"{tag}-{params}-{_source_tag()}"
    cdir = CACHE / key
    if cdir.exists():
        snaps = [load_snapshot(cdir / f"s{i}.snap") for i in range(3)]
        return body, flow, snaps
    snaps, _ = run_to_steady(body, flow, cfg, pre_roll=pre_roll,
                             pre_resolution=pre_resolution)
    cdir.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(snaps[-3:]):
        save_snapshot(s, cdir / f"s{i}.snap")
    return body, flow, snaps[-3:]


@pytest.fixture(scope="session")
def circle():
    return Circle(1.0)


@pytest.fixture(scope="session")
def stream():
    return CirclePotential((1.0, 0.0), 1.0)


@pytest.fixture(scope="session")
def steady20_small():
    """Steady Re=20 on a small domain; cheap enough for many checks."""
    cfg = SolverConfig(re=20.0, nr=96, ntheta=192, r_max=20.0, wall_cell=0.008,
                       t_end=230.0, snapshot_dt=1.0)
    return _cached_steady("steady20-small", cfg, pre_roll=200.0)


@pytest.fixture(scope="session")
def steady20_big():
    """Steady Re=20 on the wide acceptance domain with fine wall cells."""
    cfg = SolverConfig(re=20.0, nr=256, ntheta=384, r_max=320.0,
                       wall_cell=0.0008, t_end=60.0, snapshot_dt=1.0)
    return _cached_steady("steady20-big", cfg, pre_roll=450.0,
                          pre_resolution=(96, 128))


@pytest.fixture(scope="session")
def re100_run():
    """Developed Re=100 shedding at the acceptance resolution.

    Returns (body, flow, grid_potential, ja_rows, last_triple) where
    ja_rows holds per-snapshot (t, D, T, R, lift) streamed during the
    run at the snapshot cadence.
    """
    from vortexdrag import ja_verify

    body = Circle(1.0)
    flow = CirclePotential((1.0, 0.0), 1.0)
    cfg = SolverConfig(re=100.0, nr=256, ntheta=512, r_max=120.0,
                       wall_cell=0.012, t_end=150.0, snapshot_dt=0.12,
                       perturb=0.5)
    key = f"re100-{hashlib.sha256(repr(cfg).encode()).hexdigest()[:10]}-{_source_tag()}"
    cdir = CACHE / key
    if cdir.exists():
        triple = [load_snapshot(cdir / f"s{i}.snap") for i in range(3)]
        rows = np.load(cdir / "ja_rows.npy")
        gp = flow.on_grid(triple[-1].grid)
        return body, flow, gp, rows, triple
    rows = []
    triple = []
    gp_holder = {}

    for snap in simulate(body, flow, cfg):
        if "gp" not in gp_holder:
            gp_holder["gp"] = flow.on_grid(snap.grid)
        rep = ja_verify(snap, gp_holder["gp"])
        rows.append((snap.t, rep.drag_power, rep.transfer,
                     rep.reduced + rep.truncation_flux, rep.force[1]))
        triple.append(snap)
        if len(triple) > 3:
            triple.pop(0)
    rows = np.array(rows)
    cdir.mkdir(parents=True, exist_ok=True)
    np.save(cdir / "ja_rows.npy", rows)
    for i, s in enumerate(triple):
        save_snapshot(s, cdir / f"s{i}.snap")
    return body, flow, gp_holder["gp"], rows, triple
