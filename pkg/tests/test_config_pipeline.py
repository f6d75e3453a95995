"""Configuration parsing, pipeline determinism, sweeps, and the CLI."""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from vortexdrag import RunConfig, ValidationError
from vortexdrag.cli import main as cli_main
from vortexdrag.pipeline import run_pipeline, sweep

SMALL_CFG = """
[body]
shape = circle
radius = 1.0

[flow]
vx = 1.0
vy = 0.0
re = 20

[grid]
nr = 64
ntheta = 128
r_max = 20.0
wall_cell = 0.02

[solver]
t_end = 6.0
snapshot_dt = 0.5
save_every = 4

[filter]
ell = 8dx,4dx
r_limit = 8.0

[test_functions]
modes = 0,1

[output]
dir = out
"""


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = RunConfig.defaults()
        text = cfg.serialize()
        again = RunConfig.parse(text)
        assert again.values == cfg.values
        assert again.serialize() == text

    def test_parse_serialize_fixed_point(self):
        cfg = RunConfig.parse(SMALL_CFG)
        text = cfg.serialize()
        assert RunConfig.parse(text).serialize() == text

    def test_unknown_key_rejected(self):
        with pytest.raises(ValidationError, match="unknown key"):
            RunConfig.parse("[solver]\nwarp_speed = 9\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ValidationError, match="unknown section"):
            RunConfig.parse("[warp]\nx = 1\n")

    def test_wall_offset_rule_must_exceed_scale(self):
        with pytest.raises(ValidationError, match="exceed"):
            RunConfig.parse("[filter]\nh_rule = 1ell\n")
        with pytest.raises(ValidationError, match="exceed"):
            RunConfig.parse("[filter]\nh_rule = 0.5ell\n")

    def test_descending_sweep_rejected(self):
        with pytest.raises(ValidationError, match="ascending"):
            RunConfig.parse("[sweep]\nre_list = 100,50\n")

    def test_reynolds_window(self):
        with pytest.raises(ValidationError):
            RunConfig.parse("[flow]\nre = 0.1\n")

    def test_seed_must_be_none(self):
        with pytest.raises(ValidationError, match="seed"):
            RunConfig.parse("[solver]\nseed = 42\n")

    def test_ell_spec_parsing(self):
        cfg = RunConfig.parse("[filter]\nell = 8dx,0.5\n")
        assert cfg.ell_values(0.01) == [0.08, 0.5]

    def test_config_hash_stable(self):
        c1 = RunConfig.parse(SMALL_CFG)
        c2 = RunConfig.parse(SMALL_CFG)
        assert c1.config_hash() == c2.config_hash()


@pytest.fixture(scope="module")
def pipeline_dirs(tmp_path_factory):
    """Run the minimal pipeline twice into separate directories."""
    cfg = RunConfig.parse(SMALL_CFG)
    outs = []
    for tag in ("run1", "run2"):
        out = tmp_path_factory.mktemp(tag)
        run_pipeline(cfg, out)
        outs.append(out)
    return outs


class TestPipeline:
    def test_manifest_lists_six_stages(self, pipeline_dirs):
        import json

        manifest = json.loads((pipeline_dirs[0] / "manifest.json").read_text())
        assert len(manifest["stages"]) == 6
        assert set(manifest["stages"]) == {
            "potential", "simulate", "decompose", "ja_verify", "filter_scan",
            "report"}

    def test_expected_artifacts_exist(self, pipeline_dirs):
        out = pipeline_dirs[0]
        for name in ("potential.snap", "ja.csv", "flux.csv", "pairing.csv",
                     "energies.csv", "audit.csv", "summary.csv", "runlog.txt",
                     "manifest.json", "no_flow_through.csv"):
            assert (out / name).exists(), name
        assert list((out / "snaps").glob("*.snap"))

    def test_reports_byte_identical_across_runs(self, pipeline_dirs):
        a, b = pipeline_dirs
        for name in ("ja.csv", "flux.csv", "pairing.csv", "energies.csv",
                     "audit.csv", "summary.csv", "no_flow_through.csv",
                     "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_snapshots_byte_identical_across_runs(self, pipeline_dirs):
        a, b = pipeline_dirs
        for snap_a in sorted((a / "snaps").glob("*.snap")):
            snap_b = b / "snaps" / snap_a.name
            assert snap_a.read_bytes() == snap_b.read_bytes()

    def test_csvs_carry_unit_headers(self, pipeline_dirs):
        header = (pipeline_dirs[0] / "ja.csv").read_text().splitlines()[0]
        assert "rho|V|^3a" in header and "t[a/|V|]" in header

    def test_rejected_filter_rule_before_compute(self, tmp_path):
        bad = SMALL_CFG.replace("[filter]\nell = 8dx,4dx",
                                "[filter]\nh_rule = 0.9ell\nell = 8dx,4dx")
        with pytest.raises(ValidationError, match="exceed"):
            RunConfig.parse(bad)


class TestSweep:
    def test_single_point_sweep(self, tmp_path):
        text = SMALL_CFG + "\n[sweep]\nre_list = 20\nkato_c = 40.0\n"
        cfg = RunConfig.parse(text)
        rows = sweep(cfg, tmp_path)
        assert len(rows) == 1
        assert rows[0][1] == "ok"
        assert (tmp_path / "sweep.csv").exists()

    def test_positivity_column_and_trends(self, tmp_path):
        text = SMALL_CFG + "\n[sweep]\nre_list = 20,40\nkato_c = 40.0\n"
        cfg = RunConfig.parse(text)
        rows = sweep(cfg, tmp_path)
        assert len(rows) == 2
        for row in rows:
            assert row[1] == "ok"
            assert row[9] >= 0.0  # <Q, Ext0(psi)> for psi >= 0
        assert np.isfinite(rows[1][-4])  # trend column filled on 2nd point

    def test_empty_sweep_rejected(self, tmp_path):
        cfg = RunConfig.parse(SMALL_CFG)
        with pytest.raises(ValidationError, match="re_list"):
            sweep(cfg, tmp_path)


class TestCLI:
    def test_validation_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[solver]\nwarp = 1\n")
        code = cli_main(["pipeline", "--config", str(bad), "--out-dir",
                         str(tmp_path / "out")])
        assert code == 2

    def test_potential_subcommand(self, tmp_path):
        out = tmp_path / "potential.snap"
        code = cli_main(["potential", "--body", "circle", "--radius", "1",
                         "--V", "1,0", "--panels", "64", "--method", "bem",
                         "--grid", "64", "128", "20.0", "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_simulate_then_verify(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(SMALL_CFG)
        out = tmp_path / "snaps"
        assert cli_main(["simulate", "--config", str(cfg_path),
                         "--out-dir", str(out)]) == 0
        pot = tmp_path / "potential.snap"
        assert cli_main(["potential", "--body", "circle", "--radius", "1",
                         "--V", "1,0", "--grid", "64", "128", "20.0",
                         "--wall-cell", "0.02", "--out", str(pot)]) == 0
        ja = tmp_path / "ja.csv"
        assert cli_main(["ja-verify", "--snaps", str(out), "--potential",
                         str(pot), "--out", str(ja)]) == 0
        lines = ja.read_text().splitlines()
        assert len(lines) > 2

    def test_wall_limit_subcommand(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        cfg_path.write_text(SMALL_CFG)
        snaps = tmp_path / "snaps"
        cli_main(["simulate", "--config", str(cfg_path), "--out-dir", str(snaps)])
        pot = tmp_path / "potential.snap"
        cli_main(["potential", "--body", "circle", "--radius", "1",
                  "--V", "1,0", "--grid", "64", "128", "20.0",
                  "--wall-cell", "0.02", "--out", str(pot)])
        out = tmp_path / "pairing.csv"
        code = cli_main(["wall-limit", "--snaps", str(snaps), "--potential",
                         str(pot), "--scan", "ell=8dx,4dx", "--psi",
                         "fourier:k=1", "--out", str(out)])
        assert code == 0
        assert out.exists()

    def test_entry_point_installed(self):
        proc = subprocess.run([sys.executable, "-m", "vortexdrag.cli",
                               "--help"], capture_output=True)
        assert proc.returncode == 0
        assert b"vortex-drag" in proc.stdout
