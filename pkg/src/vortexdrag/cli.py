"""Command-line interface.

Subcommands: potential, simulate, decompose, ja-verify, filter,
wall-limit, sweep, pipeline.  Exit code 0 on success, 2 on validation
errors, 3 on numerical failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .decomposition import decompose, ja_verify
from .errors import NumericalError, ValidationError, VortexDragError
from .filtering import (FilterBank, FilterSpec, WallTestFunction,
                        wall_limit_scan)
from .geometry import Circle, measure_reach
from .io import (load_potential, load_snapshot, save_potential, save_snapshot,
                 write_csv)
from .pipeline import JA_COLUMNS, filter_scans, run_pipeline, sweep
from .potential import analytic_circle_potential, solve_neumann_bem
from .solver import run_collect, run_to_steady, steadiness


def _parse_vector(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValidationError(f"expected vx,vy - got {text!r}")
    return np.array([float(parts[0]), float(parts[1])])


def _load_config(path: str) -> RunConfig:
    return RunConfig.parse(Path(path).read_text(encoding="utf-8"))


def _sorted_snaps(directory: str):
    paths = sorted(Path(directory).glob("*.snap"))
    if not paths:
        raise ValidationError(f"no .snap files in {directory}")
    snaps = [load_snapshot(p) for p in paths]
    snaps.sort(key=lambda s: s.t)
    return snaps


def _cmd_potential(args) -> int:
    v = _parse_vector(args.V)
    if args.body == "circle":
        body = Circle(args.radius)
    else:
        raise ValidationError("CLI potential supports --body circle; use the "
                              "API for spline bodies")
    if args.method == "analytic":
        flow = analytic_circle_potential(v, args.radius)
    else:
        flow = solve_neumann_bem(body, v, args.panels)
        print(f"panel system condition estimate: {flow.condition:.3e}")
    nr, ntheta, r_max = args.grid
    from .geometry import build_grid

    grid = build_grid(body, r_max, (int(nr), int(ntheta)),
                      wall_cell=args.wall_cell)
    save_potential(flow.on_grid(grid), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    body = cfg.body()
    flow = analytic_circle_potential(cfg.velocity(), body.radius)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    solver_cfg = cfg.solver_config()
    save_every = max(1, cfg.get("solver", "save_every") or 1)
    counter = {"n": 0}

    def on_snapshot(snap):
        if counter["n"] % save_every == 0:
            save_snapshot(snap, outdir / f"snap_{counter['n']:06d}.snap")
        counter["n"] += 1

    pre = cfg.get("solver", "pre_roll")
    if pre > 0:
        snaps, log = run_to_steady(body, flow, solver_cfg, pre_roll=pre,
                                   on_snapshot=on_snapshot)
    else:
        snaps, log = run_collect(body, flow, solver_cfg, keep_last=3,
                                 on_snapshot=on_snapshot)
    for i, snap in enumerate(snaps):
        save_snapshot(snap, outdir / f"final_{i}.snap")
    (outdir / "runlog.txt").write_text(log.format(), encoding="utf-8")
    print(f"simulated to t={snaps[-1].t:g}; steadiness "
          f"{steadiness(snaps[-2], snaps[-1]):.3e}; wrote {counter['n']} + 3 snapshots")
    return 0


def _cmd_decompose(args) -> int:
    snaps = _sorted_snaps(args.snaps)
    pot = load_potential(args.potential)
    rows = []
    for snap in snaps:
        state = decompose(snap, pot)
        rows.append((snap.t, state.interaction_energy, state.rotational_energy))
    write_csv(args.out, ("t[a/|V|]", "E_int[rho|V|^2a^2]", "E_rot[rho|V|^2a^2]"),
              rows)
    print(f"wrote {args.out}")
    return 0


def _cmd_ja_verify(args) -> int:
    snaps = _sorted_snaps(args.snaps)
    pot = load_potential(args.potential)
    rows = []
    for snap in snaps:
        rep = ja_verify(snap, pot)
        rows.append((snap.t, rep.drag_power, rep.transfer, rep.reduced,
                     rep.transfer_inviscid, rep.transfer_viscous,
                     rep.skin_friction_power, rep.truncation_flux,
                     rep.mismatch_drag_transfer, rep.mismatch_transfer_reduced))
    write_csv(args.out, JA_COLUMNS, rows)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def _cmd_filter(args) -> int:
    snaps = _sorted_snaps(args.snaps)
    pot = load_potential(args.potential)
    cfg = RunConfig.defaults()
    cfg.values[("filter", "ell")] = (("abs", args.ell),)
    if args.h <= args.ell:
        raise ValidationError("the wall offset h must exceed ell")
    cfg.values[("filter", "h_rule")] = f"{args.h / args.ell!r}ell"
    if args.kernel != "bump":
        raise ValidationError("only the bump kernel is implemented")
    flux_rows, pairing_rows = filter_scans(cfg, snaps[-3:], pot)
    write_csv(args.out, ("ell[a]", "h[a]", "term", "L1[rho|V|^3a]"), flux_rows)
    print(f"wrote {args.out}")
    return 0


def _cmd_wall_limit(args) -> int:
    snaps = _sorted_snaps(args.snaps)
    pot = load_potential(args.potential)
    snap = snaps[-1]
    g = snap.grid
    scan = args.scan
    if not scan.startswith("ell="):
        raise ValidationError("scan must look like ell=8dx,4dx,2dx")
    ells = []
    for item in scan[4:].split(","):
        item = item.strip()
        if item.endswith("dx"):
            ells.append(float(item[:-2]) * g.wall_spacing)
        else:
            ells.append(float(item))
    if not args.psi.startswith("fourier:k="):
        raise ValidationError("psi must look like fourier:k=1")
    k = int(args.psi.split("=")[1])
    coeffs = tuple(1.0 if i == k else 0.0 for i in range(k + 1))
    psi = WallTestFunction(cos_coeffs=coeffs, t0=0.0, t1=1.0)
    eps = args.eps if args.eps > 0 else min(
        g.body.radius / 2.0, measure_reach(g.body) / 2.0)
    reports, richardson, rich_gap = wall_limit_scan(snap, pot, psi, eps=eps,
                                                    ells=ells)
    rows = [(rep.ell, rep.h, rep.value, rep.reference, rep.gap)
            for rep in reports]
    rows.append((0.0, 0.0, richardson, reports[0].reference, rich_gap))
    write_csv(args.out, ("ell[a]", "h[a]", "pairing[rho|V|^3a]",
                         "reference[rho|V|^3a]", "gap[-]"), rows)
    print(f"wrote {args.out}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    rows = sweep(cfg, args.out_dir)
    print(f"swept {len(rows)} points; wrote {Path(args.out_dir) / 'sweep.csv'}")
    return 0


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    manifest = run_pipeline(cfg, args.out_dir)
    print(f"pipeline complete; stages: {', '.join(manifest['stages'])}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vortex-drag",
        description="Exterior-flow drag-transfer diagnostics toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("potential", help="solve the background potential flow")
    p.add_argument("--body", default="circle")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--V", default="1,0")
    p.add_argument("--panels", type=int, default=256)
    p.add_argument("--method", choices=("analytic", "bem"), default="analytic")
    p.add_argument("--grid", type=float, nargs=3, default=(128, 256, 40.0),
                   metavar=("NR", "NTHETA", "RMAX"))
    p.add_argument("--wall-cell", type=float, default=None, dest="wall_cell")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_potential)

    p = sub.add_parser("simulate", help="run the viscous solver")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("decompose", help="rotational split energies")
    p.add_argument("--snaps", required=True)
    p.add_argument("--potential", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("ja-verify", help="instantaneous drag-transfer check")
    p.add_argument("--snaps", required=True)
    p.add_argument("--potential", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ja_verify)

    p = sub.add_parser("filter", help="coarse-graining flux scan")
    p.add_argument("--snaps", required=True)
    p.add_argument("--potential", required=True)
    p.add_argument("--ell", type=float, required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--kernel", default="bump")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("wall-limit", help="near-wall cascade limit scan")
    p.add_argument("--snaps", required=True)
    p.add_argument("--potential", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--psi", required=True)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_wall_limit)

    p = sub.add_parser("sweep", help="Reynolds-number sweep")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("pipeline", help="full reproduction pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except VortexDragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
