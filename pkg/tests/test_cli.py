import json

import numpy as np
import pytest

from rhscatter.cli import DEFAULTS, ConfigError, load_config, main

SMALL = {
    "nodes_per_circle": 16,
    "potential": {"kind": "bump", "domain": {"shape": "disk", "center": [0, 0], "radius": 1.0},
                  "n": 16, "center": [0.1, -0.05], "radius": 0.85, "amplitude": 0.1},
    "exterior": {"cmax_factor": 8.0, "nradial": 6, "ntheta": 16, "grading": 1.5},
    "stride": 2,
    "nv": {"t_grid": [0.0, 0.05], "s_grid": [1.0], "x_points": 4, "threshold": 1e-3},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.json").write_text(json.dumps(SMALL))
    zero = json.loads(json.dumps(SMALL))
    zero["potential"] = {"kind": "zero", "domain": SMALL["potential"]["domain"], "n": 16}
    (d / "zero.json").write_text(json.dumps(zero))
    assert main(["forward", "--config", str(d / "small.json"), "--out", str(d / "ds")]) == 0
    return d


def test_config_defaults_and_validation(tmp_path):
    cfg = load_config(None)
    assert cfg["energy"] == DEFAULTS["energy"] and cfg["rho"] == 0.25
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"rho": "auto", "potential": SMALL["potential"]}))
    assert load_config(str(p))["rho"] >= 0.25
    for bad in ({"energy": 0}, {"nodes_per_circle": 7}, {"rho": -1.0},
                {"exterior": {"nradial": 1}}):
        p.write_text(json.dumps(bad))
        with pytest.raises(ConfigError):
            load_config(str(p))
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_exit_code_validation(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"energy": -1.0}))
    assert main(["forward", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert main(["forward", "--config", str(p)]) == 2


def test_forward_is_deterministic(work):
    out2 = work / "ds2"
    assert main(["forward", "--config", str(work / "small.json"), "--out", str(out2)]) == 0
    a = (work / "ds" / "manifest.json").read_bytes()
    b = (out2 / "manifest.json").read_bytes()
    assert a == b
    assert json.loads(a)["config"]["nodes_per_circle"] == 16


def test_reconstruct_writes_outputs(work):
    out = work / "rec"
    assert main(["reconstruct", "--config", str(work / "small.json"), "--dataset", str(work / "ds"),
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["relative_l2_error"] < 0.3
    shape = summary["shape"]
    vhat = np.frombuffer((out / "v_hat.bin").read_bytes(), "<c16").reshape(shape)
    assert np.isfinite(vhat).all()
    assert (out / "slice.csv").read_text().startswith("x,y,")
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["files"]) == {"v_hat.bin", "detA.bin", "residuals.bin", "slice.csv", "summary.json"}


def test_reconstruct_zero_dataset(work):
    assert main(["forward", "--config", str(work / "zero.json"), "--out", str(work / "zds")]) == 0
    out = work / "zrec"
    assert main(["reconstruct", "--config", str(work / "zero.json"), "--dataset", str(work / "zds"),
                 "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["max_abs_v_hat"] == 0
    assert summary["det"]["max_dev_from_1"] == 0
    assert summary["relative_l2_error"] is None


def test_corrupted_manifest_exit_code(work, tmp_path):
    import shutil

    bad = tmp_path / "bad"
    shutil.copytree(work / "ds", bad)
    man = json.loads((bad / "manifest.json").read_text())
    man["rho"] = 0.3
    (bad / "manifest.json").write_text(json.dumps(man))
    assert main(["reconstruct", "--config", str(work / "small.json"), "--dataset", str(bad),
                 "--out", str(tmp_path / "r")]) == 4
    assert main(["reconstruct", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path / "r")]) == 4


def test_verify_and_negative_control(work, capsys):
    assert main(["verify", "--config", str(work / "small.json"), "--out", str(work / "ver")]) == 0
    report = json.loads((work / "ver" / "report.json").read_text())
    assert report["all_passed"]
    assert main(["verify", "--config", str(work / "small.json"), "--debug-misorient"]) == 2
    lines = capsys.readouterr().out.splitlines()
    assert any(l.startswith("FAIL jump relation") for l in lines)


def test_verify_zero_potential(work):
    assert main(["verify", "--config", str(work / "zero.json")]) == 0


def test_nv_reversed_grid(work, tmp_path):
    cfg = json.loads((work / "small.json").read_text())
    cfg["nv"]["t_grid"] = [0.05, 0.0]
    p = tmp_path / "rev.json"
    p.write_text(json.dumps(cfg))
    assert main(["nv", "--config", str(work / "small.json"), "--dataset", str(work / "ds"),
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["nv", "--config", str(p), "--dataset", str(work / "ds"), "--out", str(tmp_path / "b")]) == 0
    ra = json.loads((tmp_path / "a" / "report.json").read_text())
    rb = json.loads((tmp_path / "b" / "report.json").read_text())
    assert ra["cells"] == rb["cells"] and ra["total_flagged"] == 0


def test_contour_dump_and_calibration(work, tmp_path):
    assert main(["contour-dump", "--config", str(work / "small.json"), "--out", str(tmp_path / "c")]) == 0
    meta = json.loads((tmp_path / "c" / "w_table.json").read_text())
    assert meta["shape"] == [32, 32]
    assert main(["calibrate-c0", "--config", str(work / "small.json"), "--out", str(tmp_path / "k")]) == 0
    res = json.loads((tmp_path / "k" / "c0.json").read_text())
    assert 0.19 < res["c0"] < 0.21
