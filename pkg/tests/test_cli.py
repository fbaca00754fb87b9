import json
from pathlib import Path

import numpy as np
import pytest

from biot_homog.cli import (EXIT_CHECK, EXIT_CONFIG, EXIT_OK, dumps, fmt, kernel_csv, load_config,
                            main, read_csv, read_vtk)
from biot_homog.effective import homogenize
from biot_homog.geometry import Cube, build_unit_cell
from biot_homog.manufactured import spatial_case

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def write_config(tmp_path, text=None, edits=()):
    text = DEFAULT.read_text() if text is None else text
    for old, new in edits:
        assert old in text, old
        text = text.replace(old, new)
    path = tmp_path / "run.toml"
    path.write_text(text)
    return path


def run(cmd, config, out, *extra):
    return main([cmd, "--config", str(config), "--out", str(out), *extra])


def test_fmt_round_trips_doubles():
    rng = np.random.default_rng(0)
    for x in np.r_[rng.standard_normal(50) * 10.0 ** rng.integers(-300, 300, 50), 0.0, 3.0]:
        assert float(fmt(x)) == x
    assert fmt(3.0) == "3.0" and fmt(1e300) == "1.0000000000000001e+300"


def test_missing_field_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, edits=[("alpha1 = 1.0\n", "")])
    assert run("cell", cfg, tmp_path / "o") == EXIT_CONFIG
    assert "materials.alpha1" in capsys.readouterr().err


def test_negative_storage_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path, edits=[("c2 = 1.0", "c2 = -1.0")])
    assert run("verify", cfg, tmp_path / "o") == EXIT_CONFIG
    assert "c2" in capsys.readouterr().err


def test_malformed_and_wrong_type(tmp_path):
    assert run("cell", write_config(tmp_path, text="[geometry\n"), tmp_path / "o") == EXIT_CONFIG
    cfg = write_config(tmp_path, edits=[("res = 8\n", 'res = "eight"\n')])
    assert run("cell", cfg, tmp_path / "o") == EXIT_CONFIG
    cfg = write_config(tmp_path, edits=[("vtk_steps = [1, 16]", "vtk_steps = [40]")])
    assert run("macro", cfg, tmp_path / "o") == EXIT_CONFIG


def test_effective_json_round_trip(tmp_path):
    out = tmp_path / "o"
    assert run("cell", DEFAULT, out) == EXIT_OK
    text = (out / "effective.json").read_text()
    doc = json.loads(text)
    assert dumps(doc) + "\n" == text
    assert len(doc["A_eff"]) == 16
    assert all(doc["checks"].values())
    for key in ("K_eff", "B", "Lambda", "c_tilde", "g_tilde", "f_bar", "vol_fracs", "mesh"):
        assert key in doc


def test_zero_contrast_effective_json(tmp_path):
    cfg = write_config(tmp_path, edits=[("lambda2 = 2.0", "lambda2 = 1.0"),
                                        ("mu2 = 2.0", "mu2 = 1.0")])
    out = tmp_path / "o"
    assert run("cell", cfg, out) == EXIT_OK
    doc = json.loads((out / "effective.json").read_text())
    A = np.array(doc["A_eff"]).reshape(2, 2, 2, 2)
    iso = np.zeros((2, 2, 2, 2))
    for i in range(2):
        for j in range(2):
            iso[i, i, j, j] += 1.0
            iso[i, j, i, j] += 1.0
            iso[i, j, j, i] += 1.0
    assert np.abs(A - iso).max() <= 1e-10


def test_mandel_material_input(tmp_path):
    text = DEFAULT.read_text().replace(
        "lambda2 = 2.0\nmu2 = 2.0\n",
        "A2_mandel = [[6.0, 2.0, 0.0], [2.0, 6.0, 0.0], [0.0, 0.0, 4.0]]\n")
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run("cell", write_config(tmp_path, text=text), out_a) == EXIT_OK
    assert run("cell", DEFAULT, out_b) == EXIT_OK
    a = json.loads((out_a / "effective.json").read_text())["A_eff"]
    b = json.loads((out_b / "effective.json").read_text())["A_eff"]
    assert np.abs(np.array(a) - np.array(b)).max() <= 1e-12


def test_kernels_zero_steps(tmp_path):
    cfg = write_config(tmp_path, edits=[("steps = 16", "steps = 0")])
    out = tmp_path / "o"
    assert run("kernels", cfg, out) == EXIT_OK
    head, table = read_csv(out / "kernels.csv")
    assert head == ["t", "eta", "theta_1", "theta_2", "m", "cum_eta", "cum_theta_1",
                    "cum_theta_2", "cum_m"]
    assert table.shape == (1, 9) and not table.any()
    assert (out / "kernels.svg").read_text().startswith("<svg")


def test_kernels_csv_bit_exact(tmp_path, solution2d):
    path = tmp_path / "k.csv"
    path.write_text(kernel_csv(solution2d.kernels))
    _, table = read_csv(path)
    kt = solution2d.kernels
    assert np.array_equal(table[:, 1], kt.eta)
    assert np.array_equal(table[:, 2:4], kt.theta)
    assert np.array_equal(table[:, -1], kt.cum_m)


def test_kernels_3d_cube_cumulative_eta(tmp_path):
    text = """
[geometry]
dim = 3
res = 8
inclusion = "cube"
size = 0.5
[materials]
lambda1 = 1.0
mu1 = 1.0
lambda2 = 1.0
mu2 = 1.0
c1 = 1.0
c2 = 1.0
K1 = 1.0
K2 = 1000.0
g = 1.0
alpha1 = 1.0
alpha2 = 1.0
[time]
dt = 0.01
steps = 300
"""
    out = tmp_path / "o"
    assert run("kernels", write_config(tmp_path, text=text), out) == EXIT_OK
    head, table = read_csv(out / "kernels.csv")
    assert abs(table[-1, head.index("cum_eta")] - 1.5) <= 0.02


def test_macro_outputs_and_vtk(tmp_path):
    out = tmp_path / "o"
    assert run("macro", DEFAULT, out) == EXIT_OK
    head, table = read_csv(out / "series.csv")
    assert head == ["t", "p1_l2", "p1_max", "u_l2", "P_l2"]
    assert table.shape == (17, 5) and table[-1, 3] > 0
    for n in (1, 16):
        path = out / f"step_{n}.vtk"
        lines = path.read_text().splitlines()
        assert lines[0] == "# vtk DataFile Version 3.0"
        assert lines[2] == "ASCII" and lines[3] == "DATASET STRUCTURED_POINTS"
        header, fields = read_vtk(path)
        assert header["DIMENSIONS"] == [9.0, 9.0, 1.0]
        assert set(fields) == {"p1", "u", "P"}
        assert fields["u"].shape == (81, 3) and not fields["u"][:, 2].any()
    cfg = load_config(DEFAULT, need_macro=True)
    p1_max = np.abs(fields["p1"]).max()
    assert p1_max == pytest.approx(table[16, 2], rel=1e-15)
    assert cfg.vtk_steps == [1, 16]


def test_vtk_ordering_x_fastest(tmp_path):
    text = DEFAULT.read_text().replace("res = [8, 8]", "res = [4, 2]").replace(
        "extent = [1.0, 1.0]", "extent = [2.0, 1.0]")
    out = tmp_path / "o"
    assert run("macro", write_config(tmp_path, text=text), out) == EXIT_OK
    header, fields = read_vtk(out / "step_16.vtk")
    assert header["DIMENSIONS"] == [5.0, 3.0, 1.0]
    p = fields["p1"].reshape(3, 5)
    # mirror symmetry of the load about x = 1 shows up along the fast axis
    assert np.abs(p - p[:, ::-1]).max() <= 1e-12
    assert np.abs(p[1]).max() > 0 and not p[0].any()


def test_zero_forcing_series(tmp_path):
    cfg = write_config(tmp_path, edits=[("f1 = [0.0, -1.0]", "f1 = [0.0, 0.0]"),
                                        ("f2 = [0.0, -1.0]", "f2 = [0.0, 0.0]")])
    out = tmp_path / "o"
    assert run("macro", cfg, out) == EXIT_OK
    _, table = read_csv(out / "series.csv")
    assert not table[:, 1:].any()


def test_manufactured_run_matches_convergence_case(tmp_path, solution2d):
    cfg = write_config(tmp_path, edits=[("vtk_steps = [1, 16]",
                                         "vtk_steps = [16]\nmanufactured = true")])
    out = tmp_path / "o"
    assert run("macro", cfg, out) == EXIT_OK
    head, table = read_csv(out / "series.csv")
    assert head[-2:] == ["p1_error_l2", "u_error_l2"]
    ref = spatial_case(solution2d.coefficients, solution2d.kernels, (1.0, 1.0), 8, 0.8, 16)
    assert table[-1, -2] == pytest.approx(ref.p1_error, rel=0.01)
    assert table[-1, -1] == pytest.approx(ref.u_error, rel=0.01)


def test_verify_exit_codes(tmp_path):
    out = tmp_path / "o"
    assert run("verify", DEFAULT, out) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] and not report["negative_control"]
    bad = tmp_path / "bad"
    assert run("verify", DEFAULT, bad, "--negative-control") == EXIT_CHECK
    report = json.loads((bad / "report.json").read_text())
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert "A_eff.major_symmetry" in failed
    assert run("cell", DEFAULT, bad, "--negative-control") == EXIT_CHECK


def test_deterministic_reruns(tmp_path):
    for cmd, files in (("cell", ["effective.json"]), ("kernels", ["kernels.csv", "kernels.svg"]),
                       ("macro", ["series.csv", "step_16.vtk"]), ("verify", ["report.json"])):
        a, b = tmp_path / f"{cmd}_a", tmp_path / f"{cmd}_b"
        assert run(cmd, DEFAULT, a) == EXIT_OK
        assert run(cmd, DEFAULT, b) == EXIT_OK
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_micro_mode_flag(tmp_path):
    a, b = tmp_path / "k", tmp_path / "m"
    assert run("macro", DEFAULT, a) == EXIT_OK
    assert run("macro", DEFAULT, b, "--mode", "micro") == EXIT_OK
    _, ta = read_csv(a / "series.csv")
    _, tb = read_csv(b / "series.csv")
    assert np.abs(ta - tb).max() <= 1e-8


def test_config_parsing_defaults():
    cfg = load_config(DEFAULT, need_macro=True, out_override="x", mode_override="micro_coupled")
    assert cfg.mode == "micro_coupled" and str(cfg.out_dir) == "x"
    assert cfg.domain.res == (8, 8)
    mesh = build_unit_cell(cfg.dim, cfg.cell_res, cfg.inclusion)
    ref = build_unit_cell(2, 8, Cube(0.5))
    assert np.array_equal(mesh.phase, ref.phase)


@pytest.mark.parametrize("name", ["default.toml", "cube3d_lumped.toml"])
def test_shipped_configs_load(name):
    cfg = load_config(DEFAULT.parent / name, need_macro=name == "default.toml")
    cfg.materials.validate()
    assert cfg.steps > 0 and cfg.dt > 0
