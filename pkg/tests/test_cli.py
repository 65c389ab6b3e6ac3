import hashlib
import json
import subprocess
import sys

import pytest

from kinktrap.cli import DEFAULTS, load_config, run
from kinktrap.errors import ConfigError


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


def test_relax_outputs_and_manifest(tmp_path):
    assert run(["relax", "-n", "31", "-s", "trap.ratio=1.34", "-o", str(tmp_path)]) == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["command"] == "relax"
    assert man["config"]["trap"]["ratio"] == 1.34
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["class"] == "zigzag" and summary["N"] == 31


def test_rerun_from_manifest_is_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["modes", "-n", "40", "--kink", "-s", "trap.ratio=1.04", "-o", str(a)]) == 0
    assert run(["modes", "-n", "40", "--kink", "-c", str(a / "manifest.json"), "-o", str(b)]) == 0
    assert _files(a) == _files(b)


def test_ini_config(tmp_path):
    ini = tmp_path / "k.ini"
    ini.write_text("[trap]\nratio = 1.2  ; omega_z / omega_y\nmodel = harmonic\n[camera]\nwidth_px = 256\n")
    cfg = load_config(ini, ["trap.radial_y_hz=600e3"])
    assert cfg["trap"]["ratio"] == 1.2 and cfg["camera"]["width_px"] == 256
    assert cfg["trap"]["radial_y_hz"] == 600e3
    assert DEFAULTS["trap"]["ratio"] == 1.05
    ini.write_text("[nonsense]\na = 1\n")
    with pytest.raises(ConfigError):
        load_config(ini)
    with pytest.raises(ConfigError):
        load_config(None, ["trap.ratio"])
    with pytest.raises(ConfigError):
        load_config(None, ["camera.width_px=wide"])


def test_exit_codes(tmp_path):
    assert run(["frobnicate"]) == 2
    assert run(["relax", "-n", "5", "-s", "trap.ratio=0.9", "-o", str(tmp_path / "x")]) == 2
    assert not (tmp_path / "x").exists()
    # no stable centered kink this close to the zigzag onset
    assert run(["pn", "-n", "30", "-o", str(tmp_path / "y")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(["relax", "-n", "3", "-o", str(blocker / "sub")]) == 4


def test_tune_and_render(tmp_path):
    assert run(["tune", "-n", "40", "--ratios", "1.03,1.05", "-o", str(tmp_path / "t")]) == 0
    rows = (tmp_path / "t" / "tune.csv").read_text().splitlines()
    assert rows[0] == "ratio,omega_low_over_omega_x,IPR,status" and len(rows) == 3
    args = ["render", "-n", "12", "--seed", "4", "-s", "camera.width_px=256", "-s", "camera.exposure_s=2e-5",
            "-o"]
    assert run(args + [str(tmp_path / "r1")]) == 0
    assert run(args + [str(tmp_path / "r2")]) == 0
    assert _files(tmp_path / "r1") == _files(tmp_path / "r2")
    assert (tmp_path / "r1" / "frame.pgm").read_bytes().startswith(b"P5\n256 64\n65535\n")


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "kinktrap", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("kinktrap ")
