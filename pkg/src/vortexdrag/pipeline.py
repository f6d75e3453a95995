"""End-to-end pipelines: stage orchestration, sweeps, and reports.

``run_pipeline`` executes potential solve, viscous run, decomposition,
drag-transfer verification, filter scans, and report emission into one
output directory.  Re-running with an identical configuration
reproduces every CSV byte for byte: iteration orders are fixed, floats
are serialized with ``repr``, and the manifest carries a configuration
hash instead of timestamps.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .decomposition import (decompose, interaction_residual, ja_verify,
                            relative_energy_audit, relative_energy_residual,
                            rotational_residual)
from .errors import ValidationError, VortexDragError
from .filtering import (FilterBank, FilterSpec, WallTestFunction, extend_ext0,
                        filter_state, inertial_dissipation, interaction_flux,
                        momentum_wall_flux, no_flow_through_profile,
                        rotational_flux, skin_friction_pairing_viscous,
                        wall_limit_scan, windowed_interaction_residual,
                        windowed_rotational_residual)
from .geometry import measure_reach
from .io import save_potential, save_snapshot, write_csv
from .potential import CirclePotential, analytic_circle_potential
from .snapshots import FlowSnapshot
from .solver import (SolverConfig, dissipation_field, drag_force,
                     kato_strip_dissipation, run_collect, run_to_steady,
                     steadiness, total_dissipation)

STAGES = ("potential", "simulate", "decompose", "ja_verify", "filter_scan",
          "report")

JA_COLUMNS = ("t[a/|V|]", "D[rho|V|^3a]", "T[rho|V|^3a]", "R[rho|V|^3a]",
              "T_inviscid[rho|V|^3a]", "T_viscous[rho|V|^3a]",
              "skin_friction_term[rho|V|^3a]", "truncation_flux[rho|V|^3a]",
              "mismatch_DT[-]", "mismatch_TR[-]")


def _workers(cfg: RunConfig) -> int:
    configured = cfg.get("sweep", "workers")
    if configured > 0:
        return configured
    env = os.environ.get("VORTEX_DRAG_WORKERS", "")
    return max(1, int(env)) if env.isdigit() and env != "0" else 1


def _eps_default(cfg: RunConfig, body) -> float:
    eps = cfg.get("filter", "eps")
    if eps > 0:
        return eps
    reach = measure_reach(body)
    return min(body.radius / 2.0, reach / 2.0)


def _test_bank(cfg: RunConfig):
    t0 = cfg.get("test_functions", "t0")
    t1 = cfg.get("test_functions", "t1")
    bank = []
    for k in cfg.get("test_functions", "modes"):
        coeffs = tuple(1.0 if i == k else 0.0 for i in range(k + 1))
        bank.append((k, WallTestFunction(cos_coeffs=coeffs, t0=t0, t1=t1)))
    return bank


def _run_flow(cfg: RunConfig, body, flow, on_snapshot=None):
    solver_cfg = cfg.solver_config()
    pre_roll = cfg.get("solver", "pre_roll")
    if pre_roll > 0:
        return run_to_steady(body, flow, solver_cfg, pre_roll=pre_roll,
                             on_snapshot=on_snapshot)
    return run_collect(body, flow, solver_cfg, keep_last=3,
                       on_snapshot=on_snapshot)


def _steady_series(snap: FlowSnapshot, t0: float, t1: float, n: int = 9):
    """Replicate a steady snapshot over a time window for pairings."""
    times = np.linspace(t0, t1, n)
    out = []
    for t in times:
        out.append(FlowSnapshot(grid=snap.grid, t=float(t), nu=snap.nu,
                                u=snap.u, p=snap.p, omega=snap.omega,
                                tau_wall=snap.tau_wall, psi=snap.psi))
    return out


def run_pipeline(cfg: RunConfig, outdir) -> dict:
    """Execute all stages; returns the manifest dictionary.

    Any stage failure aborts with the stage name attached to the
    exception so the caller can see where the pipeline stopped.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "numpy_version": np.__version__,
        "stages": {},
    }
    stage = "potential"
    try:
        body = cfg.body()
        flow = analytic_circle_potential(cfg.velocity(), body.radius)
        grid = cfg.solver_config().make_grid(body)
        pot = flow.on_grid(grid)
        save_potential(pot, out / "potential.snap")
        manifest["stages"]["potential"] = "potential.snap"

        stage = "simulate"
        snaps_dir = out / "snaps"
        snaps_dir.mkdir(exist_ok=True)
        ja_rows = []
        saved = []
        save_every = cfg.get("solver", "save_every")
        counter = {"n": 0}

        def on_snapshot(snap):
            rep = ja_verify(snap, pot)
            ja_rows.append((snap.t, rep.drag_power, rep.transfer, rep.reduced,
                            rep.transfer_inviscid, rep.transfer_viscous,
                            rep.skin_friction_power, rep.truncation_flux,
                            rep.mismatch_drag_transfer,
                            rep.mismatch_transfer_reduced))
            if save_every > 0 and counter["n"] % save_every == 0:
                name = f"snap_{counter['n']:06d}.snap"
                save_snapshot(snap, snaps_dir / name)
                saved.append(name)
            counter["n"] += 1

        snaps, log = _run_flow(cfg, body, flow, on_snapshot=on_snapshot)
        for i, snap in enumerate(snaps):
            name = f"final_{i}.snap"
            save_snapshot(snap, snaps_dir / name)
            saved.append(name)
        (out / "runlog.txt").write_text(log.format(), encoding="utf-8")
        manifest["stages"]["simulate"] = f"snaps/ ({len(saved)} files), runlog.txt"

        stage = "decompose"
        r_limit = cfg.get("filter", "r_limit")
        r_limit = r_limit if r_limit > 0 else grid.r_max / 2.0
        state = decompose(snaps[-1], pot)
        audit = relative_energy_audit(snaps[-3:], pot, r_limit=r_limit)
        profile = no_flow_through_profile(
            state, [grid.wall_spacing * m for m in (2, 4, 8, 16, 32)])
        rows = [(snaps[-1].t, state.interaction_energy, state.rotational_energy,
                 steadiness(snaps[-2], snaps[-1]))]
        write_csv(out / "energies.csv",
                  ("t[a/|V|]", "E_int[rho|V|^2a^2]", "E_rot[rho|V|^2a^2]",
                   "steadiness[-]"), rows)
        write_csv(out / "audit.csv",
                  ("t[a/|V|]", "E_rel[rho|V|^2a^2]", "dE_dt[rho|V|^3a]",
                   "dissipation[rho|V|^3a]", "outer_flux[rho|V|^3a]",
                   "closure[rho|V|^3a]"), audit)
        write_csv(out / "no_flow_through.csv",
                  ("delta[a]", "sup_n_dot_u_rot[|V|]"), profile)
        manifest["stages"]["decompose"] = "energies.csv, audit.csv, no_flow_through.csv"

        stage = "ja_verify"
        write_csv(out / "ja.csv", JA_COLUMNS, ja_rows)
        manifest["stages"]["ja_verify"] = "ja.csv"

        stage = "filter_scan"
        flux_rows, pairing_rows = filter_scans(cfg, snaps, pot)
        write_csv(out / "flux.csv",
                  ("ell[a]", "h[a]", "term", "L1[rho|V|^3a]"), flux_rows)
        write_csv(out / "pairing.csv",
                  ("kind", "psi_mode[-]", "ell[a]", "h[a]",
                   "value[rho|V|^3a]", "reference[rho|V|^3a]", "gap[-]"),
                  pairing_rows)
        manifest["stages"]["filter_scan"] = "flux.csv, pairing.csv"

        stage = "report"
        rep = ja_verify(snaps[-1], pot)
        ri = interaction_residual(snaps[-3:], pot, r_limit=r_limit)
        rr = rotational_residual(snaps[-3:], pot, r_limit=r_limit)
        rel = relative_energy_residual(snaps[-3:], pot, r_limit=r_limit)
        summary = [
            ("drag_power", rep.drag_power),
            ("transfer", rep.transfer),
            ("reduced", rep.reduced),
            ("truncation_flux", rep.truncation_flux),
            ("mismatch_DT", rep.mismatch_drag_transfer),
            ("mismatch_TR", rep.mismatch_transfer_reduced),
            ("interaction_residual", ri.relative),
            ("rotational_residual", rr.relative),
            ("relative_energy_residual", rel.relative),
            ("total_dissipation", total_dissipation(snaps[-1])),
        ]
        if cfg.get("solver", "truncation_check"):
            summary.append(("truncation_sensitivity_DT",
                            _truncation_sensitivity(cfg, body, flow)))
        write_csv(out / "summary.csv", ("quantity", "value"), summary)
        manifest["stages"]["report"] = "summary.csv, manifest.json"
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
        return manifest
    except VortexDragError as exc:
        raise type(exc)(f"stage {stage}: {exc}") from exc


def _truncation_sensitivity(cfg: RunConfig, body, flow) -> float:
    """Drag-power shift when the run repeats at 0.75 r_max."""
    sub = RunConfig(values=dict(cfg.values))
    sub.values[("grid", "r_max")] = 0.75 * cfg.get("grid", "r_max")
    base_cfg = cfg.solver_config()
    sub_cfg = sub.solver_config()
    pre = cfg.get("solver", "pre_roll")
    grid_pot = flow.on_grid(sub_cfg.make_grid(body))
    if pre > 0:
        snaps, _ = run_to_steady(body, flow, sub_cfg, pre_roll=0.75 * pre)
    else:
        snaps, _ = run_collect(body, flow, sub_cfg, keep_last=1)
    rep = ja_verify(snaps[-1], grid_pot)
    full_pot = flow.on_grid(base_cfg.make_grid(body))
    if pre > 0:
        full_snaps, _ = run_to_steady(body, flow, base_cfg, pre_roll=pre)
    else:
        full_snaps, _ = run_collect(body, flow, base_cfg, keep_last=1)
    rep_full = ja_verify(full_snaps[-1], full_pot)
    return abs(rep.drag_power - rep_full.drag_power) / abs(rep_full.drag_power)


def filter_scans(cfg: RunConfig, snaps, pot):
    """Flux-term norms, windowed closures, and wall-limit pairings."""
    snap = snaps[-1]
    g = snap.grid
    ells = cfg.ell_values(g.wall_spacing)
    hfac = cfg.h_factor()
    eps = _eps_default(cfg, g.body)
    bank_cache = {}
    state = decompose(snap, pot)
    flux_rows = []
    r_limit = cfg.get("filter", "r_limit")
    r_limit = r_limit if r_limit > 0 else g.r_max / 2.0
    for ell in ells:
        spec = FilterSpec(ell=ell, h=hfac * ell)
        bank = bank_cache.setdefault(ell, FilterBank(g, ell))
        fs = filter_state(state, snap, pot, spec, bank=bank)
        for name, term in interaction_flux(fs).items():
            flux_rows.append((ell, spec.h, f"interaction_{name}",
                              g.integrate(np.linalg.norm(term, axis=-1),
                                          row0=bank.row0)))
        for name, term in rotational_flux(fs).items():
            flux_rows.append((ell, spec.h, f"rotational_{name}",
                              g.integrate(np.linalg.norm(term, axis=-1),
                                          row0=bank.row0)))
        mom = momentum_wall_flux(fs)
        flux_rows.append((ell, spec.h, "momentum_normal",
                          g.integrate(np.abs(mom["normal"]), row0=bank.row0)))
        flux_rows.append((ell, spec.h, "momentum_tangential",
                          g.integrate(np.abs(mom["tangential"]), row0=bank.row0)))
        flux_rows.append((ell, spec.h, "inertial_dissipation",
                          g.integrate(np.abs(inertial_dissipation(fs)),
                                      row0=bank.row0)))
        flux_rows.append((ell, spec.h, "viscous_dissipation",
                          total_dissipation(snap)))
        if len(snaps) >= 3:
            _, rel_i = windowed_interaction_residual(
                snaps[-3:], pot, spec, bank=bank, r_limit=r_limit)
            _, rel_r = windowed_rotational_residual(
                snaps[-3:], pot, spec, bank=bank, r_limit=r_limit)
            flux_rows.append((ell, spec.h, "windowed_interaction_residual", rel_i))
            flux_rows.append((ell, spec.h, "windowed_rotational_residual", rel_r))

    pairing_rows = []
    t0 = cfg.get("test_functions", "t0")
    t1 = cfg.get("test_functions", "t1")
    series = _steady_series(snap, t0 - 0.05 * (t1 - t0), t1 + 0.05 * (t1 - t0))
    for k, psi in _test_bank(cfg):
        reports, richardson, rich_gap = wall_limit_scan(
            snap, pot, psi, eps=eps, ells=ells, banks=bank_cache)
        for rep in reports:
            pairing_rows.append(("cascade_vs_skin_friction", k, rep.ell, rep.h,
                                 rep.value, rep.reference, rep.gap))
        pairing_rows.append(("cascade_richardson", k, 0.0, 0.0, richardson,
                             reports[0].reference, rich_gap))
        green = skin_friction_pairing_viscous(series, pot, psi, eps=eps)
        pairing_rows.append(("green_volume_vs_boundary", k, 0.0, 0.0,
                             green.volume, green.boundary, green.gap))
        pairing_rows.append(("green_correction", k, 0.0, 0.0,
                             green.correction, green.volume_raw, 0.0))
    return flux_rows, pairing_rows


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

SWEEP_COLUMNS = ("re[-]", "status", "D[rho|V|^3a]", "T[rho|V|^3a]",
                 "mismatch_DT[-]", "pairing_psi0[rho|V|^3a]",
                 "pairing_psi1[rho|V|^3a]", "pairing_psi2[rho|V|^3a]",
                 "Q_total[rho|V|^3a]", "Q_ext_psi0[rho|V|^3a]",
                 "kato_strip[rho|V|^3a]", "no_flow_through_2dx[|V|]",
                 "cascade_gap_final[-]", "cascade_order[-]")


def _sweep_point(args):
    cfg_text, re_value = args
    cfg = RunConfig.parse(cfg_text)
    body = cfg.body()
    flow = analytic_circle_potential(cfg.velocity(), body.radius)
    solver_cfg = cfg.solver_config(re=re_value)
    pre = cfg.get("solver", "pre_roll")
    try:
        if pre > 0:
            snaps, _ = run_to_steady(body, flow, solver_cfg, pre_roll=pre)
        else:
            snaps, _ = run_collect(body, flow, solver_cfg, keep_last=3)
        snap = snaps[-1]
        g = snap.grid
        pot = flow.on_grid(g)
        rep = ja_verify(snap, pot)
        state = decompose(snap, pot)
        eps = _eps_default(cfg, body)
        bank = {}
        pairings = []
        for k, psi in _test_bank(cfg)[:3]:
            psi_s = psi.space(g.theta)
            pairings.append(float(
                np.sum(psi_s * pot.wall_tangential * snap.tau_wall)
                * g.wall_radius * g.dtheta_step))
        while len(pairings) < 3:
            pairings.append(float("nan"))
        q_total = total_dissipation(snap)
        psi0 = WallTestFunction(cos_coeffs=(1.0,), t0=0.0, t1=1.0)
        ext = extend_ext0(psi0, eps, g)
        q_ext = g.integrate(ext.field_at(0.5 * (psi0.t0 + psi0.t1))
                            * dissipation_field(snap))
        try:
            kato = kato_strip_dissipation(snap, cfg.get("sweep", "kato_c"))
        except ValidationError:
            kato = float("nan")
        profile = no_flow_through_profile(state, [2.0 * g.wall_spacing])
        ells = cfg.ell_values(g.wall_spacing)
        reports, _, _ = wall_limit_scan(snap, pot, _test_bank(cfg)[0][1],
                                        eps=eps, ells=ells)
        gaps = [r.gap for r in reports]
        if len(gaps) >= 2 and gaps[-1] > 0:
            order = math.log2(max(gaps[-2], 1e-300) / gaps[-1])
        else:
            order = float("nan")
        return (re_value, "ok", rep.drag_power, rep.transfer,
                rep.mismatch_drag_transfer, pairings[0], pairings[1],
                pairings[2], q_total, q_ext, kato, profile[0][1],
                gaps[-1], order)
    except VortexDragError as exc:
        return (re_value, f"failed: {exc}", *([float("nan")] * 12))


def sweep(cfg: RunConfig, outdir) -> list:
    """Per-Reynolds diagnostics, executed concurrently, assembled in order.

    Failures of individual points are recorded in their row and the
    sweep continues.  Trend columns (ratios between consecutive Re) are
    appended for the scalar diagnostics; nothing is extrapolated.
    """
    re_list = list(cfg.get("sweep", "re_list"))
    if not re_list:
        raise ValidationError("sweep requires a non-empty ascending re_list")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    args = [(cfg.serialize(), re) for re in re_list]
    workers = min(_workers(cfg), len(args))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, args))
    else:
        rows = [_sweep_point(a) for a in args]
    trend_rows = []
    for i, row in enumerate(rows):
        ratios = []
        for col in (2, 3, 8, 10):  # D, T, Q_total, kato
            if i == 0 or row[1] != "ok" or rows[i - 1][1] != "ok":
                ratios.append(float("nan"))
            else:
                prev = rows[i - 1][col]
                ratios.append(row[col] / prev if prev not in (0.0,) else float("nan"))
        trend_rows.append(tuple(row) + tuple(ratios))
    cols = SWEEP_COLUMNS + ("trend_D[-]", "trend_T[-]", "trend_Q[-]",
                            "trend_kato[-]")
    write_csv(out / "sweep.csv", cols, trend_rows)
    return trend_rows
