import json
import struct
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from invisible_mirror.cli import OUT_ENV, RunConfig, main
from invisible_mirror.io_export import read_obj, svg_coordinates

PARAMS = ["--c", "1", "--kappa", "1.5", "--k1", "0.7", "--k2", "0.9"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_params_table(capsys):
    code, out, _ = run(capsys, "params", *PARAMS)
    assert code == 0
    assert "k_min" in out and "0.553283335172" in out
    assert "valid: yes" in out


def test_params_bad_kappa(capsys):
    code, _, err = run(capsys, "params", "--kappa", "2.5")
    assert code == 2
    assert "1 < kappa < 2" in err


def test_params_bad_inclinations(capsys):
    code, _, err = run(capsys, "params", "--k1", "0.5")
    assert code == 2
    assert "k_min=" in err and "k_max=" in err


def test_config_file_equivalent(capsys, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("c: 1\nkappa: 1.5\nk1: 0.7\nk2: 0.9\n")
    _, from_file, _ = run(capsys, "params", "--config", str(cfg))
    _, from_flags, _ = run(capsys, "params", *PARAMS)
    assert from_file == from_flags


def test_flags_override_config(capsys, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("kappa: 1.5\nk1: 0.7\nk2: 0.9\n")
    _, out, _ = run(capsys, "params", "--config", str(cfg), "--k2", "0.95")
    assert "0.95" in out


@pytest.mark.parametrize("text", ["kapa: 1.5\n", "- 1\n- 2\n", "c: [1, 2]\n"])
def test_config_rejects_bad_files(capsys, tmp_path, text):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(text)
    code, _, err = run(capsys, "params", "--config", str(cfg))
    assert code == 2
    assert "error" in err


def test_verify_passes(capsys, tmp_path):
    report = tmp_path / "rep.json"
    code, out, _ = run(capsys, "verify", *PARAMS, "--n", "100000", "--output", str(report))
    assert code == 0
    assert out.startswith("invisible: ")
    assert "deviated: 0" in out
    data = json.loads(report.read_text())
    assert data["counts"]["deviated"] == 0
    # effective config echoed into the report
    assert data["config"]["kappa"] == 1.5 and data["config"]["n"] == 100000


def test_verify_perturbed_fails(capsys, tmp_path):
    code, out, _ = run(capsys, "verify", "--perturb", "alpha=1.01", "--n", "20000", "--out-dir", str(tmp_path))
    assert code == 1
    assert "deviated: 0" not in out
    data = json.loads((tmp_path / "report-planar.json").read_text())
    assert data["config"]["perturb"] == "alpha=1.01"


@pytest.mark.parametrize("perturb", ["shift=0.01", "rotate=0.01"])
def test_verify_other_perturbations(capsys, tmp_path, perturb):
    code, _, _ = run(capsys, "verify", "--perturb", perturb, "--n", "20000", "--out-dir", str(tmp_path))
    assert code == 1


def test_verify_g2(capsys, tmp_path):
    code, out, _ = run(capsys, "verify", "--body", "g2", "--n", "5000", "--sampling", "uniform-sphere",
                       "--out-dir", str(tmp_path))
    assert code == 0
    assert (tmp_path / "report-g2.json").exists()


def test_verify_n_zero_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--n", "0"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_verify_env_out_dir(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    code, _, _ = run(capsys, "verify", "--n", "100")
    assert code == 0
    assert (tmp_path / "report-planar.json").exists()


def test_trace_k(capsys):
    code, out, _ = run(capsys, "trace", "--k", "0.8")
    assert code == 0
    rows = [l for l in out.splitlines() if l.strip()[:1].isdigit()]
    assert len(rows) == 3
    assert "F~:k1" in rows[1]
    assert float(rows[1].split()[-1]) == pytest.approx(2.0, abs=1e-9)


def test_trace_angle_zero(capsys):
    code, out, _ = run(capsys, "trace", "--angle", "0")
    assert code == 0
    assert "no intersection" in out


def test_trace_svg(capsys, tmp_path):
    path = tmp_path / "out.svg"
    code, _, _ = run(capsys, "trace", "--k", "0.8", "--svg", str(path))
    assert code == 0
    root = ET.fromstring(path.read_text())
    assert root.tag.endswith("svg")
    parsed = svg_coordinates(path.read_text())
    assert len(parsed["rays"]) == 1 and parsed["rays"][0].shape == (5, 2)


def test_mesh_g1_stl(capsys, tmp_path):
    code, out, _ = run(capsys, "mesh", "--body", "g1", "--segments", "64", "--format", "stl",
                       "--out-dir", str(tmp_path))
    assert code == 0
    data = (tmp_path / "g1.stl").read_bytes()
    n = struct.unpack_from("<I", data, 80)[0]
    assert len(data) == 84 + 50 * n
    assert "watertight: yes" in out
    # watertight from the file itself: every edge used twice
    tris = np.frombuffer(data, dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]),
                         offset=84)["v"]
    keys, inv = np.unique(tris.reshape(-1, 3), axis=0, return_inverse=True)
    f = inv.reshape(-1, 3)
    edges = np.sort(f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    assert np.all(counts == 2)


def test_mesh_g2_two_components(capsys, tmp_path):
    code, out, _ = run(capsys, "mesh", "--body", "g2", "--out-dir", str(tmp_path))
    assert code == 0
    assert "2 component(s)" in out
    _, _, names = read_obj((tmp_path / "g2.obj").read_bytes())
    assert names == ["G2_upper", "G2_lower"]


def test_mesh_bad_segments(capsys, tmp_path):
    code, _, err = run(capsys, "mesh", "--segments", "8", "--out-dir", str(tmp_path))
    assert code == 2
    assert "segments" in err


def test_plot_default(capsys, tmp_path):
    path = tmp_path / "section.svg"
    code, _, _ = run(capsys, "plot", "--output", str(path), "--rays", "6")
    assert code == 0
    parsed = svg_coordinates(path.read_text())
    assert len(parsed["arcs"]) == 8
    assert len(parsed["rays"]) == 6


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(body="torus")
    with pytest.raises(ValueError):
        RunConfig(n=0)


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "invisible_mirror", "params", "--kappa", "3"],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "1 < kappa < 2" in r.stderr
