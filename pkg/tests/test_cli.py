import csv
import hashlib
import json
import subprocess
import sys

import pytest

from pbgcavity import ModelParams, bose_occupation, solve_localized_mode
from pbgcavity.cli import OUT_DIR_ENV, main


def read_csv(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    rows = list(csv.DictReader(ln for ln in lines if not ln.startswith("#")))
    return comments, rows


def run(tmp_path, *argv):
    return main(["--out-dir", str(tmp_path), *argv])


def test_fig1d_output_and_manifest(tmp_path):
    assert run(tmp_path, "fig1d", "--steps", "7") == 0
    comments, rows = read_csv(tmp_path / "fig1d.csv")
    z = {float(r["delta"]): float(r["Z"]) for r in rows}
    assert z[0.0] == pytest.approx(2 / 3, abs=1e-15)
    assert z[-15.0] > 0.99 and z[15.0] < 0.01
    manifest = json.loads((tmp_path / "fig1d.manifest.json").read_text())
    assert f"# manifest-sha256: {manifest['digest']}" in comments
    assert any("C**(2/3)" in c for c in comments)
    entry = manifest["outputs"][0]
    assert entry["path"] == "fig1d.csv"
    assert entry["sha256"] == hashlib.sha256((tmp_path / "fig1d.csv").read_bytes()).hexdigest()
    assert not list(tmp_path.glob(".*.tmp"))


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run(d, "--tmax", "1", "fig1c", "--deltas=-2.5,2.5") == 0
    for name in ("fig1c_deltam2p5.csv", "fig1c_delta2p5.csv", "fig1c.manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_fig1c_curves(tmp_path):
    assert run(tmp_path, "--tmax", "5", "fig1c", "--deltas=-10,10", "--stride", "1") == 0
    _, gap = read_csv(tmp_path / "fig1c_deltam10.csv")
    _, band = read_csv(tmp_path / "fig1c_delta10.csv")
    assert float(gap[0]["abs_u"]) == 1.0 and float(band[0]["abs_u"]) == 1.0
    assert float(gap[-1]["abs_u"]) == pytest.approx(0.985, abs=3e-3)
    assert float(band[-1]["abs_u"]) < 0.3


def test_env_var_sets_output_directory(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_DIR_ENV, str(tmp_path / "env"))
    assert main(["fig1d", "--steps", "3"]) == 0
    assert (tmp_path / "env" / "fig1d.csv").exists()


def test_config_file_sets_base_parameters(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("omega_e = 50\ncoupling = 8  # strong\n", encoding="utf-8")
    assert run(tmp_path, "--config", str(cfg), "fig1d", "--delta-range", "0", "0", "--steps", "2") == 0
    manifest = json.loads((tmp_path / "fig1d.manifest.json").read_text())
    assert manifest["params"]["base"]["omega_e"] == 50.0
    _, rows = read_csv(tmp_path / "fig1d.csv")
    # x**3 = C at zero detuning, so omega_b = omega_e - C**(2/3)
    assert float(rows[0]["omega_b"]) == pytest.approx(50 - 4, abs=1e-12)


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("omega_e = 50\n", encoding="utf-8")
    assert run(tmp_path, "--config", str(cfg), "--omega-e", "70", "fig1d", "--steps", "2") == 0
    manifest = json.loads((tmp_path / "fig1d.manifest.json").read_text())
    assert manifest["params"]["base"]["omega_e"] == 70.0


@pytest.mark.parametrize("argv", [
    ["fig1d", "--steps", "1"],
    ["--coupling", "-1", "fig1d"],
    ["--config", "/nonexistent/run.cfg", "fig1d"],
    ["fig2", "--temps", "20,abc"],
    ["--omega-e", "5", "fig1c", "--deltas=-10"],
    ["nosuchcommand"],
])
def test_invalid_arguments_exit_2(tmp_path, argv, capsys):
    with pytest.raises(SystemExit) as info:
        code = run(tmp_path, *argv)
        raise SystemExit(code)
    assert info.value.code == 2


def test_numeric_failure_exits_1(tmp_path, capsys):
    assert run(tmp_path, "--dt", "0.05", "--tmax", "1", "fig1c", "--deltas", "0") == 1
    assert "numerical failure" in capsys.readouterr().err


def test_validate_quick_passes(tmp_path, capsys):
    assert run(tmp_path, "validate", "--profile", "quick") == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 6
    _, rows = read_csv(tmp_path / "validate.csv")
    assert {r["status"] for r in rows} == {"PASS"}


def test_validate_detects_corrupted_residue(tmp_path, capsys):
    assert run(tmp_path, "validate", "--profile", "quick", "--inject", "residue") == 1
    failed = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("FAIL")]
    assert len(failed) == 1 and "sum rule" in failed[0]


def test_validate_detects_oversized_step(tmp_path, capsys):
    assert run(tmp_path, "validate", "--profile", "quick", "--inject", "dt") == 1
    failed = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("FAIL")]
    assert len(failed) == 1 and "convergence" in failed[0] and "StepTooLarge" in failed[0]


def test_fig2_rows(tmp_path):
    argv = ["--tmax", "1", "fig2", "--deltas", "10", "--temps", "0,100",
            "--sweep-range", "-10", "10", "--sweep-steps", "3", "--stride", "50"]
    assert run(tmp_path, *argv) == 0
    _, steady = read_csv(tmp_path / "fig2_steady.csv")
    by_key = {(float(r["delta"]), float(r["kT"])): r for r in steady}
    assert all(float(r["v_steady"]) == 0 for (d, k), r in by_key.items() if k == 0)
    nbar = bose_occupation(110.0, 100.0)
    assert float(by_key[(10.0, 100.0)]["v_steady"]) == pytest.approx(nbar, rel=0.02)
    assert float(by_key[(-10.0, 100.0)]["v_steady"]) < 0.1 * float(by_key[(-10.0, 100.0)]["bose_at_omega_c"])
    _, series = read_csv(tmp_path / "fig2_delta10_kT100.csv")
    assert list(series[0]) == ["t", "v", "v_dot", "n_mean"]
    assert float(series[0]["n_mean"]) == 5.0


def test_fig3_distributions(tmp_path):
    argv = ["--threads", "2", "fig3", "--deltas=-10,10", "--temps", "20", "--stride", "500"]
    assert run(tmp_path, *argv) == 0
    for name in ("fig3_deltam10_kT20.csv", "fig3_delta10_kT20.csv"):
        _, rows = read_csv(tmp_path / name)
        slices = {}
        for r in rows:
            slices.setdefault(float(r["t"]), {})[int(r["n"])] = float(r["prob"])
        for dist in slices.values():
            assert sum(dist.values()) == pytest.approx(1.0, abs=1e-9)
        final = slices[max(slices)]
        if "deltam10" in name:
            assert max(final, key=final.get) == 5
            # thermal noise is tiny here, so the loss channel is close to binomial in Z**2
            om = solve_localized_mode(ModelParams(delta=-10.0)).residue_Z ** 2
            assert final[4] == pytest.approx(5 * (1 - om) * om**4, rel=0.2)
        else:
            assert final[0] > 0.98


def test_fig4_rows(tmp_path):
    assert run(tmp_path, "fig4", "--n0", "5,15", "--temps", "20", "--deltas=-10,10") == 0
    _, rows = read_csv(tmp_path / "fig4.csv")
    assert list(rows[0]) == ["delta", "kT", "n0", "n", "prob", "bose_prob", "tv_distance"]
    cells = {}
    for r in rows:
        cells.setdefault((float(r["delta"]), int(r["n0"])), []).append(r)
    for (delta, n0), cell in cells.items():
        probs = [float(r["prob"]) for r in cell]
        tv = float(cell[0]["tv_distance"])
        if delta < 0:
            assert probs.index(max(probs)) == n0
        else:
            assert tv < 0.02


def test_sweep_parallel_matches_serial(tmp_path):
    argv = ["sweep", "--deltas=-10,10", "--temps", "100", "--n0", "5"]
    assert run(tmp_path / "serial", *argv) == 0
    assert run(tmp_path / "pool", "--threads", "2", *argv) == 0
    assert (tmp_path / "serial" / "sweep.csv").read_bytes() == (tmp_path / "pool" / "sweep.csv").read_bytes()
    _, rows = read_csv(tmp_path / "serial" / "sweep.csv")
    assert float(rows[0]["tv_to_bose"]) > 0.5 and float(rows[1]["tv_to_bose"]) < 0.02


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "pbgcavity", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "pbgcavity" in out.stdout
