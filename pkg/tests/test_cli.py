import hashlib
import json
import warnings
from pathlib import Path

import numpy as np
import pytest

from dynmap import cli
from dynmap.config import ConfigError
from dynmap.congestion import ErrorPeriodMap, p_coll

SMALL = ["n_vehicles=10", "area_km2=0.1", "T_sim=4"]
CALIB = ["n_vehicles=10", "area_km2=0.1", "T_sim=15", "H_max=20"]


def _digest(directory: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


def test_run_writes_outputs(tmp_path, capsys):
    rc = cli.main(["run", "-o", str(tmp_path), "--seed", "3", "--event-log", *SMALL])
    assert rc == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"config.txt", "metrics.json", "series.csv", "events.csv"} <= names
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert m["mean_error"] >= 0 and 0 <= m["p_miss"] <= 1
    assert "mean_error=" in capsys.readouterr().out


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env_out"))
    assert cli.default_output_dir() == tmp_path / "env_out"
    assert cli.main(["run", *SMALL]) == 0
    assert (tmp_path / "env_out" / "metrics.json").exists()
    monkeypatch.delenv(cli.OUTPUT_ENV)
    assert cli.default_output_dir() == Path("results")


def test_empty_grid_is_config_error(tmp_path, capsys):
    assert cli.main(["sweep", "-o", str(tmp_path), *SMALL]) == 2
    assert "empty sweep grid" in capsys.readouterr().err


def test_etb_nacc_without_map_is_config_error(tmp_path, capsys):
    rc = cli.main(["run", "-o", str(tmp_path), "strategy=ETB", "congestion=NACC", *SMALL])
    assert rc == 2
    assert "calibration_map" in capsys.readouterr().err
    rc = cli.main(["sweep", "-o", str(tmp_path), "--grid", "scheme=PB,ETB+NACC", *SMALL])
    assert rc == 2


def test_bad_key_and_value(tmp_path):
    assert cli.main(["run", "-o", str(tmp_path), "no_such_key=1"]) == 2
    assert cli.main(["run", "-o", str(tmp_path), "n_sc=abc"]) == 2
    assert cli.main(["run", "-o", str(tmp_path), "strategy=XYZ"]) == 2
    with pytest.raises(ConfigError):
        cli.parse_grid(["scheme=PB+FOO"])


def test_missing_map_is_input_error(tmp_path):
    assert cli.main(["analyze-map", str(tmp_path / "missing.csv")]) == 2


def test_runtime_error_exit_code(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("filter blew up")
    monkeypatch.setattr(cli, "run_sim", boom)
    assert cli.main(["run", "-o", str(tmp_path), *SMALL]) == 3
    assert "runtime error: FloatingPointError" in capsys.readouterr().err


def test_parse_grid_sizes():
    pts = cli.parse_grid(["T_period=" + ",".join(str(0.1 * k) for k in range(1, 31))])
    assert len(pts) == 30
    assert [p["T_period"] for p in pts] == pytest.approx([0.1 * k for k in range(1, 31)])
    pts = cli.parse_grid(["n_sc=2,4,6,8,10", "scheme=PB,PB+CSCC,ETB+NACC,PB+NACC"])
    assert len(pts) == 20
    assert {(p["strategy"], p["congestion"]) for p in pts} == {("PB", "none"), ("PB", "CSCC"),
                                                              ("ETB", "NACC"), ("PB", "NACC")}
    assert sorted({p["n_sc"] for p in pts}) == [2, 4, 6, 8, 10]
    assert all(isinstance(p["n_sc"], int) for p in pts)


def test_sweep_thirty_points(tmp_path):
    grid = "T_period=" + ",".join(f"{0.1 * k:.1f}" for k in range(1, 31))
    rc = cli.main(["sweep", "-o", str(tmp_path), "--runs", "1", "--grid", grid,
                   "n_vehicles=4", "area_km2=0.05", "T_sim=2.5"])
    assert rc == 0
    rows = [l for l in (tmp_path / "points.csv").read_text().splitlines()[2:] if l]
    assert len(rows) == 30
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["points"]) == 30


def test_analyze_pcoll_table(tmp_path):
    out = tmp_path / "pcoll.csv"
    assert cli.main(["analyze-pcoll", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == cli.PCOLL_SCHEMA and lines[1] == "N_sc,rho,P_coll"
    data = np.array([[float(x) for x in l.split(",")] for l in lines[2:]])
    assert data.shape == (1000, 3)
    assert np.all((data[:, 2] >= 0) & (data[:, 2] <= 1))
    for n in range(1, 11):
        block = data[data[:, 0] == n]
        assert len(block) == 100
        assert np.all(np.diff(block[:, 1]) > 0)
        assert np.all(np.diff(block[:, 2]) >= -1e-12)
        np.testing.assert_allclose(block[:, 2], p_coll(block[:, 1], float(n)), rtol=0, atol=0)


def test_analyze_pcoll_bad_range():
    assert cli.main(["analyze-pcoll", "--rho-min", "0.5", "--rho-max", "0.2"]) == 2


def test_calibrate_reload_and_report(tmp_path, capsys):
    rc = cli.main(["calibrate", "-o", str(tmp_path), "--seed", "5", *CALIB])
    assert rc == 0
    path = tmp_path / "error_period_map.csv"
    m = ErrorPeriodMap.load_csv(path)
    m.save_csv(tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()
    assert np.all(np.diff(m.T_period) >= 0)
    capsys.readouterr()
    assert cli.main(["analyze-map", str(path)]) == 0
    report = capsys.readouterr().out.splitlines()
    assert report[0].startswith(cli.MAP_REPORT_SCHEMA) and "monotone=True" in report[0]
    assert len(report) == 2 + len(m.E_grid)


def test_pb_ignored_threshold_warns(tmp_path):
    with pytest.warns(UserWarning, match="E_thr is not used by strategy PB"):
        cli.main(["run", "-o", str(tmp_path), "E_thr=3", *SMALL])


def test_default_valued_keys_do_not_warn(tmp_path):
    cfg_file = tmp_path / "full.txt"
    from dynmap.config import SimConfig
    cfg_file.write_text(SimConfig(n_vehicles=10, area_km2=0.1, T_sim=4).to_text())
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert cli.main(["run", "-c", str(cfg_file), "-o", str(tmp_path / "o")]) == 0


@pytest.mark.parametrize("cmd", [
    ["run", "--event-log", *SMALL],
    ["sweep", "--runs", "2", "--grid", "scheme=PB,PB+CSCC", *SMALL],
    ["calibrate", *CALIB],
    ["gen-traffic", *SMALL],
])
def test_repeated_runs_are_bit_identical(tmp_path, cmd):
    digests = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        if cmd[0] == "gen-traffic":
            out.mkdir()
            assert cli.main([cmd[0], "-o", str(out / "trace.csv"), "--seed", "9", *cmd[1:]]) == 0
        else:
            assert cli.main([cmd[0], "-o", str(out), "--seed", "9", *cmd[1:]]) == 0
        digests.append(_digest(out))
    assert digests[0] == digests[1]


def test_analyze_pcoll_is_deterministic(capsys):
    cli.main(["analyze-pcoll", "--n-max", "3", "--rho-points", "7", "--log-grid"])
    a = capsys.readouterr().out
    cli.main(["analyze-pcoll", "--n-max", "3", "--rho-points", "7", "--log-grid"])
    assert capsys.readouterr().out == a
    assert len(a.splitlines()) == 2 + 21
