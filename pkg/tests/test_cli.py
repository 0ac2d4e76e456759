import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from meanfield.cli import main
from meanfield.config import ConfigError, load_config
from meanfield.hjb import Mode
from meanfield.report import read_manifest, read_snapshot_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = """\
grid.n = 16
solver.nu = 0.05
solver.T = 1
solver.Nt = 10
hamiltonian.family = local
initial.density = uniform:1
"""


def write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadConfig:
    def test_defaults_filled(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL))
        s = cfg.solver
        assert (s.mode, s.delta, s.tol, s.max_iters, s.exit_cost) == (Mode.MFG, 0.5, 1e-5, 200, 0.0)
        assert (s.nu, s.T, s.Nt) == (0.05, 1.0, 10)
        assert cfg.grid.nx == 16 and cfg.out_dir == (tmp_path / "out").resolve()
        assert cfg.spec.cH == 8.0 and cfg.spec.alpha == 0.75

    def test_mode_parsed(self, tmp_path):
        cfg = load_config(write(tmp_path, MINIMAL + "run.mode = mftc\n"))
        assert cfg.solver.mode is Mode.MFTC

    def test_duplicate_key_names_both_lines(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_config(write(tmp_path, MINIMAL + "# again\nsolver.T = 2\n"))
        msg = str(info.value)
        assert "line 3" in msg and "line 8" in msg and "duplicate" in msg

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="line 7: unknown key 'solver.dtt'"):
            load_config(write(tmp_path, MINIMAL + "solver.dtt = 0.1\n"))

    def test_type_mismatch(self, tmp_path):
        text = MINIMAL.replace("solver.Nt = 10", "solver.Nt = ten")
        with pytest.raises(ConfigError, match="line 4: bad value for 'solver.Nt'"):
            load_config(write(tmp_path, text))

    def test_missing_key(self, tmp_path):
        with pytest.raises(ConfigError, match="missing required key 'solver.nu'"):
            load_config(write(tmp_path, MINIMAL.replace("solver.nu = 0.05\n", "")))

    def test_snapshots_inside_horizon(self, tmp_path):
        with pytest.raises(ConfigError, match="snapshot"):
            load_config(write(tmp_path, MINIMAL + "run.snapshots = 0, 2\n"))

    def test_missing_geometry_file(self, tmp_path):
        text = MINIMAL.replace("grid.n = 16", "grid.geometry = nowhere.txt")
        with pytest.raises(ConfigError, match="geometry file not found"):
            load_config(write(tmp_path, text))

    def test_shipped_pedestrian_configs(self):
        for mode in ("mfg", "mftc"):
            cfg = load_config(CONFIGS / f"pedestrian_{mode}.cfg")
            assert cfg.solver.mode is Mode(mode)
            assert (cfg.grid.nx, cfg.grid.ny) == (50, 50)
            people = cfg.grid.cell_area * cfg.length_unit**2 * cfg.m0.sum()
            assert people == pytest.approx(3300.0, rel=1e-12)
            assert set(np.unique(cfg.m0)) == {0.0, 4.0}
            assert cfg.grid.side_length * cfg.length_unit == 50.0
            assert (cfg.solver.nu, cfg.solver.T) == (0.012, 50.0)
            assert cfg.snapshots == (0.0, 1.0, 2.0, 5.0, 15.0)

    def test_nonlocal_config(self):
        cfg = load_config(CONFIGS / "torus_nonlocal.cfg")
        assert cfg.spec.kernel_mass == pytest.approx(0.2, rel=1e-12)
        assert cfg.spec.method == "fft"


class TestRun:
    def test_trivial_torus_run(self, tmp_path, capsys):
        path = write(tmp_path, MINIMAL + "run.snapshots = 0, 0.5, 1\n")
        assert main(["run", "--config", str(path)]) == 0
        out = tmp_path / "out"
        manifest = read_manifest(out / "manifest.txt")
        assert manifest["converged"] == "true"
        assert manifest["solver.delta"] == "0.5"
        for t in ("0", "0.5", "1"):
            assert (out / f"m_{t}.csv").is_file() and (out / f"u_{t}.csv").is_file()
            assert (out / f"m_{t}.png").is_file()

    def test_snapshot_mass_matches_manifest_exactly(self, tmp_path):
        text = MINIMAL.replace("initial.density = uniform:1", "initial.density = file:m0.csv")
        rng = np.random.default_rng(0)
        np.savetxt(tmp_path / "m0.csv", rng.uniform(0.5, 2.0, (16, 16)), delimiter=",")
        path = write(tmp_path, text + "run.snapshots = 0, 0.3, 1\ngrid.length_unit = 50\n")
        assert main(["run", "--config", str(path)]) == 0
        manifest = read_manifest(tmp_path / "out" / "manifest.txt")
        masses = [float(x) for x in manifest["mass"].split(",")]
        assert len(masses) == 3
        for t, mass in zip(("0", "0.3", "1"), masses):
            data = read_snapshot_csv(tmp_path / "out" / f"m_{t}.csv")
            h = data[1, 0] - data[0, 0]
            assert h * h * np.sum(data[:, 2]) == mass
        assert [float(t) for t in manifest["times"].split(",")] == pytest.approx([0.0, 0.3, 1.0])

    def test_csv_layout(self, tmp_path):
        path = write(tmp_path, MINIMAL.replace("grid.n = 16", "grid.n = 4") + "run.snapshots = 0\n")
        assert main(["run", "--config", str(path)]) == 0
        lines = (tmp_path / "out" / "m_0.csv").read_text().splitlines()
        assert lines[0] == "x,y,value"
        assert lines[1] == "0.125,0.875,1.0"       # top-left cell first, row-major
        assert lines[2] == "0.375,0.875,1.0"
        assert len(lines) == 17

    def test_rerun_is_byte_identical(self, tmp_path):
        path = write(tmp_path, MINIMAL.replace("uniform:1", "file:m0.csv"))
        x = (np.arange(16) + 0.5) / 16
        np.savetxt(tmp_path / "m0.csv", 1 + 0.5 * np.sin(2 * np.pi * x)[None, :] * np.ones((16, 1)), delimiter=",")
        assert main(["run", "--config", str(path)]) == 0
        first = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
        assert main(["run", "--config", str(path)]) == 0
        second = {p.name: p.read_bytes() for p in (tmp_path / "out").iterdir()}
        assert first == second
        assert any(name.endswith(".png") for name in first)

    def test_broken_geometry_path_exits_1_without_outputs(self, tmp_path):
        text = MINIMAL.replace("grid.n = 16", "grid.geometry = missing.txt")
        path = write(tmp_path, text)
        assert main(["run", "--config", str(path)]) == 1
        assert not (tmp_path / "out").exists()

    def test_bad_geometry_exits_1(self, tmp_path):
        (tmp_path / "sealed.txt").write_text("...#E\n...##\n.....\n")
        text = MINIMAL.replace("grid.n = 16", "grid.geometry = sealed.txt")
        assert main(["run", "--config", str(write(tmp_path, text))]) == 1
        assert not (tmp_path / "out").exists()

    def test_pedestrian_single_iteration_exits_2(self, tmp_path):
        out = tmp_path / "ped"
        # max_iters=1 through a copy of the shipped config
        text = (CONFIGS / "pedestrian_mfg.cfg").read_text().replace("solver.max_iters = 200", "solver.max_iters = 1")
        text = text.replace("grid.geometry = hall.txt", f"grid.geometry = {CONFIGS / 'hall.txt'}")
        path = write(tmp_path, text + "run.plots = false\n")
        code = main(["run", "--config", str(path), "--out", str(out), "--mode", "mftc"])
        assert code == 2
        manifest = read_manifest(out / "manifest.txt")
        assert manifest["converged"] == "false" and manifest["iterations"] == "1"
        assert manifest["run.mode"] == "mftc"
        assert (out / "m_15.csv").is_file()


def test_check_uniqueness(tmp_path, capsys):
    path = write(tmp_path, MINIMAL + "check.samples = 200\nhamiltonian.F = quad:0.1,0\n")
    assert main(["check-uniqueness", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "200 samples" in out
    assert "all_hold=true" in out.splitlines()


def test_check_uniqueness_reports_violation(tmp_path, capsys):
    path = write(tmp_path, MINIMAL + "check.samples = 200\nhamiltonian.alpha = 3\nhamiltonian.cH = 1\n")
    assert main(["check-uniqueness", "--config", str(path)]) == 0
    assert "all_hold=false" in capsys.readouterr().out.splitlines()


def test_console_entry_point(tmp_path):
    path = write(tmp_path, MINIMAL)
    proc = subprocess.run([sys.executable, "-m", "meanfield.cli", "run", "--config", str(path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "converged" in proc.stdout
