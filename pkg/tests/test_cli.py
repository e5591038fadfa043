import csv
import io
import json

import pytest

from irsvlc.cli import main, reevaluate_report
from irsvlc.scene import DEFAULT_SCENARIO_FILE, dump_scenario


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


@pytest.fixture(scope="module")
def bare_file(tmp_path_factory, scenario):
    p = tmp_path_factory.mktemp("sc") / "bare.json"
    p.write_text(dump_scenario(scenario.model_copy(update={"mirror_arrays": ()})))
    return p


@pytest.fixture(scope="module")
def impulse_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("ir") / "ir.csv"
    assert run("impulse", "--user", "2.5,2.5,1.0", "--out", out) == 0
    return out


def test_impulse_schema(impulse_out):
    rows = read_csv(impulse_out)
    assert list(rows[0]) == ["ap", "branch", "t_ns", "total", "los", "diffuse1", "diffuse2", "irs"]
    assert {r["ap"] for r in rows} == {"0", "1", "2", "3"}


def test_impulse_los_bin_dominates(impulse_out):
    rows = read_csv(impulse_out)
    for ap in "0123":
        sec = [r for r in rows if r["ap"] == ap]
        los = max(float(r["los"]) for r in sec)
        assert los > 0
        assert all(float(r[c]) < los for r in sec for c in ("diffuse1", "diffuse2", "irs"))


def test_impulse_deterministic(impulse_out, tmp_path):
    out = tmp_path / "again.csv"
    assert run("impulse", "--user", "2.5,2.5,1.0", "--out", out) == 0
    assert out.read_bytes() == impulse_out.read_bytes()


def test_impulse_without_mirrors(bare_file, tmp_path):
    out = tmp_path / "ir.csv"
    assert run("impulse", "--scenario", bare_file, "--user", "1.0,4.0,1.0", "--out", out) == 0
    assert all(float(r["irs"]) == 0.0 for r in read_csv(out))


def test_impulse_rejects_outside_user(tmp_path):
    assert run("impulse", "--user", "9,1,1", "--out", tmp_path / "x.csv") == 2


def sweep(kind, out, *extra):
    return run(kind, "--out", out, *extra)


def test_sweep_power_single_point(tmp_path):
    out = tmp_path / "p.csv"
    assert sweep("sweep-power", out, "--grid", "2.0", "--trials", "1", "--seed", "5") == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["power_w", "variant", "mean_sum_rate_bps_hz", "stddev", "trials"]
    assert [r["variant"] for r in rows] == ["LoSOnly", "LoSPlusDiffuse", "IRS_1Array", "IRS_2Arrays"]
    assert all(float(r["stddev"]) == 0.0 and r["trials"] == "1" for r in rows)
    meta = json.loads((tmp_path / "p.csv.meta.json").read_text())
    assert meta["trials"] == 1 and meta["grid"] == [2.0] and meta["grid_source"] == "user"


def test_sweep_power_monotone(tmp_path):
    out = tmp_path / "p.csv"
    assert sweep("sweep-power", out, "--grid", "0.5,1,2,4", "--trials", "3",
                 "--variants", "LoSOnly,IRS_2Arrays") == 0
    rows = read_csv(out)
    for v in ("LoSOnly", "IRS_2Arrays"):
        means = [float(r["mean_sum_rate_bps_hz"]) for r in rows if r["variant"] == v]
        assert means == sorted(means) and len(means) == 4


def test_sweep_deterministic_across_jobs(tmp_path):
    args = ("--grid", "0,1", "--trials", "4", "--seed", "11")
    outs = [tmp_path / f"b{i}.csv" for i in range(3)]
    assert sweep("sweep-blockage", outs[0], *args) == 0
    assert sweep("sweep-blockage", outs[1], *args) == 0
    assert sweep("sweep-blockage", outs[2], *args, "--jobs", "2") == 0
    assert outs[0].read_bytes() == outs[1].read_bytes() == outs[2].read_bytes()
    rows = read_csv(outs[0])
    assert [float(r["mean_sum_rate_bps_hz"]) for r in rows
            if r["rho"] == "1" and r["variant"] == "LoSOnly"] == [0.0]


def test_sweep_float_format(tmp_path):
    out = tmp_path / "b.csv"
    assert sweep("sweep-blockage", out, "--grid", "0.3", "--trials", "2", "--variants", "LoSOnly") == 0
    row = read_csv(out)[0]
    assert row["rho"] == "0.3"
    digits = row["mean_sum_rate_bps_hz"].replace(".", "").lstrip("0")
    assert len(digits.split("e")[0]) <= 9


def test_los_only_ignores_mirrors(bare_file, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ("--grid", "0,0.5", "--trials", "2", "--variants", "LoSOnly")
    assert sweep("sweep-blockage", a, *args) == 0
    assert sweep("sweep-blockage", b, "--scenario", bare_file, *args) == 0
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("extra", [
    ("--grid", "2,1"),
    ("--grid", "0.5,1.5"),
    ("--trials", "0"),
    ("--variants", "LoSOnly,Nope"),
])
def test_sweep_rejects_bad_input(tmp_path, extra):
    assert sweep("sweep-blockage", tmp_path / "x.csv", *extra) == 2


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve") / "r.json"
    assert run("solve", "--rho", "0.4", "--seed", "3", "--out", out) == 0
    return out


def test_solve_schema(report):
    doc = json.loads(report.read_text())
    assert len(doc["ap_of_user"]) == 4 and all(0 <= l < 4 for l in doc["ap_of_user"])
    assert len(doc["user_of_mirror"]) == 50
    assert all(u == "unassigned" or 0 <= u < 4 for u in doc["user_of_mirror"])
    assert doc["sum_rate_bps_hz"] == pytest.approx(sum(doc["rates_bps_hz"]))
    for key in ("time_fraction", "branches", "snr", "log_utility", "blockage_mask"):
        assert key in doc


def test_solve_deterministic(report, tmp_path):
    out = tmp_path / "r.json"
    assert run("solve", "--rho", "0.4", "--seed", "3", "--out", out) == 0
    assert out.read_bytes() == report.read_bytes()


def test_solve_round_trip(report, scenario):
    doc = json.loads(report.read_text())
    assert reevaluate_report(scenario, report.read_text()) == pytest.approx(doc["sum_rate_bps_hz"], rel=1e-12)


def test_solve_rejects_rho(tmp_path):
    assert run("solve", "--rho", "1.5", "--out", tmp_path / "r.json") == 2


def test_invalid_scenario_exit_code(tmp_path, scenario):
    data = json.loads(dump_scenario(scenario))
    data["aps"][0]["position"] = [1.5, 1.5, 2.0]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert run("solve", "--scenario", bad, "--out", tmp_path / "r.json") == 2


def test_missing_scenario_exit_code(tmp_path):
    assert run("solve", "--scenario", tmp_path / "missing.json", "--out", tmp_path / "r.json") == 1


def test_default_scenario_command(tmp_path):
    out = tmp_path / "s.json"
    assert run("default-scenario", "--out", out) == 0
    assert out.read_bytes() == DEFAULT_SCENARIO_FILE.read_bytes()
