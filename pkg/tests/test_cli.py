import os

import numpy as np
import pytest

from stochac import __version__
from stochac.cli import csv_body, run, write_csv
from stochac.config import RunConfig, parse_config
from stochac.errors import UsageError

SMALL = """\
# tiny run
K = 8
T = 0.5
record_stride = 5
dt = 1e-3
ensemble_size = 300
T_values = 1 2
n_max = 3
control_K = 8
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


def go(*args):
    return run([*map(str, args), "-q"])


def test_echo_round_trip():
    cfg = parse_config(SMALL)
    assert cfg.K == 8 and cfg.T_values == "1 2"
    again = parse_config("\n".join(["# stochac x", *cfg.echo(), "0,1,2"]))
    assert again == cfg


def test_config_errors():
    with pytest.raises(UsageError):
        parse_config("bogus = 1")
    with pytest.raises(UsageError):
        parse_config("K = eight")
    with pytest.raises(UsageError):
        parse_config("zero_noise = maybe")
    with pytest.raises(UsageError):
        parse_config("delta = 1.5")
    with pytest.raises(UsageError):
        RunConfig(scheme="leapfrog")


def test_header_and_schema(tmp_path, cfg_file):
    assert go("simulate", cfg_file, "--out", tmp_path / "o") == 0
    lines = (tmp_path / "o" / "simulate.csv").read_text().splitlines()
    assert lines[0] == f"# stochac {__version__}"
    assert lines[1] == "# master_seed = 0"
    assert "#@ K = 8" in lines
    body = csv_body(tmp_path / "o" / "simulate.csv")
    assert body[0] == "t,h_norm,v_norm,sobolev_delta,f1,f2,f3\n"
    assert len(body) == 1 + 101
    assert body[1].startswith("0,0,0,0")


def test_seed_override_changes_body(tmp_path, cfg_file):
    go("simulate", cfg_file, "--out", tmp_path / "a")
    go("simulate", cfg_file, "--out", tmp_path / "b", "--seed", 7)
    assert "# master_seed = 7" in (tmp_path / "b" / "simulate.csv").read_text()
    assert csv_body(tmp_path / "a" / "simulate.csv") != csv_body(tmp_path / "b" / "simulate.csv")


@pytest.mark.parametrize("cmd,files", [
    ("simulate", ["simulate.csv"]),
    ("moments", ["moments.csv", "moments_summary.csv"]),
    ("ldp", ["scgf.csv", "rate.csv", "ldp_summary.csv"]),
    ("recurrence", ["recurrence.csv", "recurrence_summary.csv"]),
])
def test_rerun_on_echo_is_byte_identical_at_any_thread_count(tmp_path, cfg_file, cmd, files):
    assert go(cmd, cfg_file, "--out", tmp_path / "a") == 0
    echoed = tmp_path / "a" / files[0]
    assert go(cmd, echoed, "--out", tmp_path / "b", "--threads", 3) == 0
    for f in files:
        assert csv_body(tmp_path / "a" / f) == csv_body(tmp_path / "b" / f)


def test_schemas(tmp_path, cfg_file):
    out = tmp_path / "o"
    for cmd in ("moments", "ldp", "recurrence"):
        go(cmd, cfg_file, "--out", out)
    assert csv_body(out / "moments.csv")[0] == "x0_label,T,p,estimate,se\n"
    assert csv_body(out / "scgf.csv")[0] == "lambda,scgf\n"
    assert csv_body(out / "rate.csv")[0] == "r,rate\n"
    assert csv_body(out / "recurrence.csv")[0] == "n,p_tail,ci_lo,ci_hi\n"


def test_seventeen_digit_floats(tmp_path, cfg_file):
    go("simulate", cfg_file, "--out", tmp_path)
    row = csv_body(tmp_path / "simulate.csv")[5].strip().split(",")
    assert float(row[0]) == 0.02 and row[0] == format(0.02, ".17g")


def test_recurrence_zero_level_is_flagged_not_fatal(tmp_path, cfg_file):
    cfg_file.write_text(SMALL + "M_level = 0\n")
    assert go("recurrence", cfg_file, "--out", tmp_path) == 0
    summary = "".join(csv_body(tmp_path / "recurrence_summary.csv"))
    assert "all_censored,true" in summary
    tail = csv_body(tmp_path / "recurrence.csv")
    assert all(r.split(",")[1] == "1" for r in tail[1:])


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("bogus = 1\n")
    assert go("simulate", bad, "--out", tmp_path) == 2
    assert go("simulate", tmp_path / "missing.cfg") == 2
    bad.write_text("p = 0.9\n")
    assert go("moments", bad, "--out", tmp_path) == 2
    assert go("simulate", "--seed", -1, "--out", tmp_path) == 2
    assert not list(tmp_path.glob("*.csv"))


def test_atomic_write_leaves_nothing_on_error(tmp_path):
    def rows():
        yield (1.0, 2.0)
        raise RuntimeError("boom")

    with pytest.raises(RuntimeError):
        write_csv(tmp_path / "x.csv", RunConfig(), ["a", "b"], rows())
    assert os.listdir(tmp_path) == []


def test_control_and_noise_check(tmp_path, cfg_file):
    assert go("control", cfg_file, "--out", tmp_path) == 0
    body = dict(r.strip().split(",") for r in csv_body(tmp_path / "control.csv")[1:])
    assert body["passed"] == "true" and float(body["residual_v"]) < 1e-2
    assert go("noise-check", cfg_file, "--out", tmp_path) == 0
    rows = csv_body(tmp_path / "noise_check.csv")[1:]
    assert len(rows) == 6 and all(r.strip().endswith("true") for r in rows)


def test_occupation(tmp_path, cfg_file):
    assert go("occupation", cfg_file, "--out", tmp_path) == 0
    rows = csv_body(tmp_path / "occupation.csv")
    assert rows[0] == "observable,mean_a,se_a,mean_b,se_b,z,agree\n" and len(rows) == 4


def test_selftest_passes(tmp_path):
    assert go("selftest", "--out", tmp_path) == 0
    rows = csv_body(tmp_path / "selftest.csv")[1:]
    assert rows and all(r.strip().endswith("true") for r in rows)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as e:
        run(["--version"])
    assert e.value.code == 0 and __version__ in capsys.readouterr().out
