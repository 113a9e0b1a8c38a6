import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lfcsynth import io as lio
from lfcsynth.cli import main
from lfcsynth.config import bundled_path


@pytest.fixture(scope="module")
def case1_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("case1")
    assert main(["design", "bundled:three_area_moderate", "--out", str(out)]) == 0
    return out


def tweaked_config(tmp_path, **subs):
    text = bundled_path("three_area_moderate").read_text()
    for old, new in subs.items():
        text = text.replace(old.replace("_EQ_", " = "), new)
    p = tmp_path / "cfg.toml"
    p.write_text(text)
    return p


def test_design_writes_gains(case1_run):
    assert (case1_run / "gains.json").exists()
    man = json.loads((case1_run / "manifest.json").read_text())
    entry = man["runs"]["design"]
    assert entry["status"] == "feasible"
    assert len(entry["config"]["sha256"]) == 64
    for path in entry["outputs"].values():
        assert Path(path).exists()


def test_design_infeasible_exit_code(tmp_path, capsys):
    cfg = tweaked_config(tmp_path, **{"gamma = 7.5": "gamma = 1e-6"})
    rc = main(["design", str(cfg), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "infeasible at margin" in capsys.readouterr().out
    assert not (tmp_path / "o" / "gains.json").exists()


def test_malformed_config_no_outputs(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[[areas]]\nM = 'ten'\n")
    rc = main(["design", str(bad), "--out", str(tmp_path / "o")])
    assert rc == 64
    assert not (tmp_path / "o").exists()


def test_usage_error_code():
    with pytest.raises(SystemExit) as info:
        main(["design"])
    assert info.value.code == 64


def test_verify_pass(case1_run, capsys):
    rc = main(["verify", str(case1_run / "gains.json"), "bundled:three_area_moderate",
               "--out", str(case1_run)])
    assert rc == 0
    assert "verify: PASS" in capsys.readouterr().out
    header, rows = lio.read_csv(case1_run / "eigenvalues.csv")
    assert header == ["re", "im", "block"]
    assert sum(r[2] == "closed_loop" for r in rows) == 30


def test_verify_corrupted_gains_fail(case1_run, tmp_path, capsys):
    d = json.loads((case1_run / "gains.json").read_text())
    d["areas"][0]["K"] = [[v * -100 for v in d["areas"][0]["K"][0]]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    rc = main(["verify", str(bad), "bundled:three_area_moderate", "--out", str(tmp_path)])
    assert rc == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and "stable" in out


def test_verify_against_other_strips_fails(case1_run, tmp_path, capsys):
    rc = main(["verify", str(case1_run / "gains.json"), "bundled:three_area_tight",
               "--out", str(tmp_path)])
    assert rc == 3
    rep = json.loads((tmp_path / "verification.json").read_text())
    assert "strip_control" in rep["failing"] or "strip_observer" in rep["failing"]


def test_verify_incompatible_gains(tmp_path, case1_run):
    d = json.loads((case1_run / "gains.json").read_text())
    d["areas"] = d["areas"][:2]
    p = tmp_path / "two.json"
    p.write_text(json.dumps(d))
    assert main(["verify", str(p), "bundled:three_area_moderate", "--out", str(tmp_path)]) == 65


def test_gains_roundtrip_exact(case1_run):
    g = lio.load_gains(case1_run / "gains.json")
    p = case1_run / "again.json"
    lio.save_gains(g, p)
    assert p.read_bytes() == (case1_run / "gains.json").read_bytes()
    g2 = lio.load_gains(p)
    for a, b in zip(g.areas, g2.areas):
        np.testing.assert_array_equal(a.K, b.K)
        np.testing.assert_array_equal(a.Q, b.Q)


def test_determinism(case1_run, tmp_path):
    out = tmp_path / "again"
    assert main(["design", "bundled:three_area_moderate", "--out", str(out)]) == 0
    assert (out / "gains.json").read_bytes() == (case1_run / "gains.json").read_bytes()


def test_simulate_and_report(case1_run, tmp_path, capsys):
    run = tmp_path / "run"
    shutil.copytree(case1_run, run)
    assert main(["verify", str(run / "gains.json"), "bundled:three_area_moderate", "--out", str(run)]) == 0
    assert main(["simulate", str(run / "gains.json"), "bundled:three_area_moderate",
                 "--out", str(run)]) == 0
    for name in ("trajectory.csv", "metrics.json", "plot.gp"):
        assert (run / name).exists()
    m = json.loads((run / "metrics.json").read_text())
    assert all(np.isfinite(v["peak"]) for v in m["metrics"].values())
    header, rows = lio.read_csv(run / "trajectory.csv")
    assert header[0] == "time" and "df_1" in header and "dPtie_3" in header
    assert float(rows[-1][0]) == pytest.approx(300.0)
    capsys.readouterr()
    assert main(["report", str(run)]) == 0
    text = capsys.readouterr().out
    assert "Summary for" in text and ": PASS" in text
    # a second simulate run gives byte-identical CSV
    first = (run / "trajectory.csv").read_bytes()
    assert main(["simulate", str(run / "gains.json"), "bundled:three_area_moderate",
                 "--out", str(run)]) == 0
    assert (run / "trajectory.csv").read_bytes() == first


def test_empty_schedule_zero_csv(case1_run, tmp_path):
    sched = tmp_path / "none.toml"
    sched.write_text("events = []\n")
    out = tmp_path / "sim"
    assert main(["simulate", str(case1_run / "gains.json"), "bundled:three_area_moderate",
                 "--schedule", str(sched), "--t-end", "2", "--out", str(out)]) == 0
    header, rows = lio.read_csv(out / "trajectory.csv")
    vals = np.array([[float(v) for v in r[1:]] for r in rows])
    assert not np.any(vals)


def test_compare_strategies(case1_run, tmp_path, capsys):
    sep = tmp_path / "sep"
    assert main(["design", "bundled:three_area_moderate", "--strategy", "separated",
                 "--out", str(sep)]) == 0
    out = tmp_path / "cmp"
    assert main(["simulate", str(case1_run / "gains.json"), "bundled:three_area_moderate",
                 "--compare", str(sep / "gains.json"), "--t-end", "50", "--out", str(out)]) == 0
    table = (out / "comparison.txt").read_text()
    assert "integrated" in table and "separated" in table and "ise" in table


def test_report_flags_missing_simulation(case1_run, tmp_path, capsys):
    run = tmp_path / "nosim"
    shutil.copytree(case1_run, run)
    for name in ("trajectory.csv", "metrics.json"):
        (run / name).unlink(missing_ok=True)
    assert main(["report", str(run)]) == 0
    assert "simulation: ABSENT" in capsys.readouterr().out


def test_report_two_dirs(case1_run, tmp_path, capsys):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for d, gamma in ((a, "7.5"), (b, "5.0")):
        cfg = tweaked_config(tmp_path, **{"gamma = 7.5": f"gamma = {gamma}"})
        assert main(["design", str(cfg), "--out", str(d)]) == 0
        assert main(["verify", str(d / "gains.json"), str(cfg), "--out", str(d)]) == 0
    capsys.readouterr()
    assert main(["report", str(a), str(b)]) == 0
    text = capsys.readouterr().out
    assert "## Comparison" in text and "- hinf_lower_bound" in text


def test_dump_sdp(tmp_path):
    out = tmp_path / "d"
    assert main(["design", "bundled:three_area_moderate", "--dump-sdp", "--out", str(out)]) == 0
    first = (out / "problem.sdp.txt").read_text().splitlines()[0]
    assert first == "# format-version: 1"


def test_console_script_entry_point(tmp_path):
    exe = shutil.which("lfcsynth")
    cmd = [exe] if exe else [sys.executable, "-m", "lfcsynth.cli"]
    r = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert r.returncode == 0 and "lfcsynth" in r.stdout
