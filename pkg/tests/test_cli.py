import json

import numpy as np
import pytest

from rieszgas import cli
from rieszgas.cli import ExperimentConfig, main
from rieszgas.errors import ConfigError
from rieszgas.sampler import read_snapshot_csv

SMALL = """[sampler]
n = 40
sweeps = 60
burn_in = 20
thin = 10
seed = 3
"""


def write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_config_roundtrip_and_digest():
    cfg = ExperimentConfig.from_text(SMALL + "[study]\nn_list = 10, 20\n[model]\nfield = power\npower = 4\n")
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg and again.digest() == cfg.digest()
    assert cfg["study"]["n_list"] == (10, 20) and cfg["model"]["power"] == 4.0
    assert cfg.with_overrides(out="elsewhere").digest() == cfg.digest()
    assert cfg.with_overrides(seed=9).digest() != cfg.digest()
    assert ExperimentConfig.defaults() == ExperimentConfig.from_text("")


@pytest.mark.parametrize("text", [
    "[model]\nbogus = 1\n",
    "[nosuch]\n",
    "[model]\nkernel = riesz\n",
    "[model]\nkernel = riesz\nalpha = 3\n",
    "[sampler]\nsweeps = 5\nburn_in = 6\n",
    "[sampler]\nn = 0\n",
    "[sampler]\nstep_size = -1\n",
    "[sampler]\nschedule = fixed\n",
    "[model]\nfield = table\n",
    "not an ini",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text(text)


def test_exit_codes(tmp_path):
    assert main(["sample", "--config", str(write(tmp_path, "[model]\nbogus=1\n"))]) == 2
    assert main(["sample", "--config", str(tmp_path / "missing.ini")]) == 2
    weak = write(tmp_path, "[model]\nfield = power\nscale = -1\n", "w.ini")
    assert main(["equilibrium", "--config", str(weak), "--out", str(tmp_path / "w")]) == 3
    riesz = write(tmp_path, "[model]\nkernel = riesz\nalpha = 1\n", "r.ini")
    assert main(["equilibrium", "--config", str(riesz), "--out", str(tmp_path / "r")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["nosuchcommand"])
    assert exc.value.code == 2


def test_sample_outputs_and_determinism(tmp_path):
    cfg = write(tmp_path, SMALL)
    out = tmp_path / "run"
    assert main(["sample", "--config", str(cfg), "--out", str(out)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert set(first) == {"config.ini", "trace.csv", "snapshot.csv", "histogram.csv", "diagnostics.json"}
    assert main(["sample", "--config", str(cfg), "--out", str(out), "--threads", "1"]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first
    diag = json.loads(first["diagnostics.json"])
    assert diag["seed"] == 3 and diag["N"] == 40 and len(diag["config_digest"]) == 64
    assert 0 <= diag["ks"] <= 1 and 0 <= diag["fm_distance"] <= 2
    assert first["trace.csv"].decode().splitlines()[0] == (
        "sweep,beta_N,energy,accept_rate_rw,accept_rate_mala,max_radius")
    # the resolved config reruns to the same digest
    assert ExperimentConfig.from_file(out / "config.ini").digest() == diag["config_digest"]
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "s9"), "--seed", "9"]) == 0
    assert json.loads((tmp_path / "s9" / "diagnostics.json").read_text())["seed"] == 9


def test_sample_zero_sweeps(tmp_path):
    cfg = write(tmp_path, "[sampler]\nn = 12\nsweeps = 0\nseed = 1\n")
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "z")]) == 0
    c = ExperimentConfig.from_file(cfg)
    x0 = cli.sp.init_configuration(12, cli.build_model(c), "uniform-ball", seed=np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(1).spawn(2)[0])))
    assert np.array_equal(read_snapshot_csv(tmp_path / "z" / "snapshot.csv"), x0)
    assert (tmp_path / "z" / "trace.csv").read_text().count("\n") == 1
    assert json.loads((tmp_path / "z" / "diagnostics.json").read_text())["ks"] is not None


def test_equilibrium_command(tmp_path):
    assert main(["equilibrium", "--out", str(tmp_path / "q")]) == 0
    s = json.loads((tmp_path / "q" / "summary.json").read_text())
    assert s["R0"] == pytest.approx(0.793700, abs=1e-6) and s["C_star"] == pytest.approx(1.889882, abs=1e-6)
    el = json.loads((tmp_path / "q" / "el_residual.json").read_text())
    assert el["on_support_max_dev"] < 1e-5 and el["off_support_min_excess"] > -1e-5
    rows = (tmp_path / "q" / "density.csv").read_text().splitlines()
    assert rows[0] == "r,M,F" and float(rows[-1].split(",")[2]) == pytest.approx(1.0, abs=1e-10)
    quartic = write(tmp_path, "[model]\nfield = power\npower = 4\n")
    assert main(["equilibrium", "--config", str(quartic), "--out", str(tmp_path / "p4")]) == 0
    s = json.loads((tmp_path / "p4" / "summary.json").read_text())
    assert s["r0"] == 0.0 and s["R0"] == pytest.approx(0.757858, abs=1e-6)


def test_prescribe_then_sample_with_table(tmp_path):
    assert main(["prescribe", "--out", str(tmp_path / "pr")]) == 0
    rep = json.loads((tmp_path / "pr" / "prescribe_report.json").read_text())
    assert rep["V0"] == pytest.approx(-1.5, abs=1e-12)
    assert rep["max_abs_residual_inside"] < 1e-9 and rep["min_residual"] > -1e-9
    table = tmp_path / "pr" / "field_table.csv"
    cfg = write(tmp_path, f"[model]\nfield = table\ntable = {table}\ntable_hinge = 2.0\n" + SMALL, "t.ini")
    assert main(["sample", "--config", str(cfg), "--out", str(tmp_path / "ts")]) == 0
    bad = write(tmp_path, "[prescribe]\ntarget_radius = 2.5\n", "b.ini")
    assert main(["prescribe", "--config", str(bad), "--out", str(tmp_path / "b")]) == 2


def test_convergence_study_and_diagnose(tmp_path):
    cfg = write(tmp_path, SMALL + "[study]\nn_list = 20\n")
    out = tmp_path / "cs"
    assert main(["convergence-study", "--config", str(cfg), "--out", str(out)]) == 0
    rows = (out / "convergence.csv").read_text().splitlines()
    assert rows[0] == "N,ks,fm_distance,max_radius" and len(rows) == 2
    assert 0 <= float(rows[1].split(",")[2]) <= 2
    snap = out / "snapshot_N20_s3.csv"
    assert main(["diagnose", "--config", str(cfg), "--snapshot", str(snap), "--out", str(tmp_path / "dg")]) == 0
    d = json.loads((tmp_path / "dg" / "diagnostics.json").read_text())
    ref = json.loads((out / "diagnostics_N20_s3.json").read_text())
    assert d["ks"] == ref["ks"] and d["max_radius"] == ref["max_radius"]
    wrong_d = write(tmp_path, "[model]\nd = 4\n", "d4.ini")
    assert main(["diagnose", "--config", str(wrong_d), "--snapshot", str(snap), "--out", str(tmp_path / "x")]) == 2
