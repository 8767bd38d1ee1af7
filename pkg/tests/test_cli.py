import csv
import json
import sys

import pytest

from delaybsde.cli import main
from delaybsde.experiment import builtin_scenarios

SMALL = """
scenario = "{scenario}"
[grid]
T = 1.0
N = {N}
[ensemble]
M = 2000
d = 1
seed = {seed}
chunk_size = 512
[terminal]
kind = "brownian"
[generator]
{generator}
[picard]
max_iters = 8
tol = 1e-6
[output]
dir = "{out}"
"""


def write_cfg(tmp_path, name, scenario="zero-generator", N=20, seed=1, generator="", out=None):
    path = tmp_path / f"{name}.toml"
    path.write_text(SMALL.format(scenario=scenario, N=N, seed=seed, generator=generator,
                                 out=out or (tmp_path / name).as_posix()))
    return path


def test_scenarios_listed(capsys):
    assert main(["scenarios"]) == 0
    out = capsys.readouterr().out
    for name in ("zero_generator", "delayed_linear", "delayed_power", "heavy_tail_ladder",
                 "portfolio_insurance", "constant_driver"):
        assert name in out


def test_constants(capsys):
    assert main(["constants", "--p", "3", "--K", "0.01", "--T", "1"]) == 0
    out = capsys.readouterr().out
    assert "lambda_p = 32.217" in out and "advisory = True" in out
    assert main(["constants", "--p", "3", "--K", "1", "--T", "1"]) == 0
    assert "d_p = infeasible" in capsys.readouterr().out


def test_constants_rejects_p2(capsys):
    assert main(["constants", "--p", "2", "--K", "0.1", "--T", "1"]) == 2


def test_solve_zero_generator_builtin(tmp_path, capsys):
    out = tmp_path / "zg"
    assert main(["solve", "builtin:zero_generator", "--out", str(out)]) == 0
    for name in ("solution.csv", "iterations.csv", "estimates.csv", "run.meta"):
        assert (out / name).exists()
    meta = json.loads((out / "run.meta").read_text())
    assert meta["metrics"]["rmse_vs_W"] <= 0.05
    assert meta["metrics"]["iterations"] == 2 and meta["metrics"]["converged"]
    assert meta["seed"] == 20240611 and meta["chunk_size"] == 4096
    with open(out / "iterations.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    with open(out / "solution.csv") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        first = next(reader)
    assert header == ["path_id", "time_index", "time", "Y_1", "Z_1_1"]
    # floats are written with 17 significant digits
    for cell in first[2:]:
        assert cell == f"{float(cell):.17g}"


def test_meta_echo_reproduces_run(tmp_path):
    from delaybsde.experiment import parse_config, run
    cfg = write_cfg(tmp_path, "a")
    assert main(["solve", str(cfg)]) == 0
    meta = json.loads((tmp_path / "a" / "run.meta").read_text())
    again = parse_config(meta["config"])
    run(again, tmp_path / "b")
    for name in ("solution.csv", "iterations.csv", "estimates.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_malformed_delta_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "bad", scenario="delayed-power",
                    generator='kind = "power"\ngamma = 0.2\ndelta = 1.2')
    assert main(["solve", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "delta" in err and "(0, 1)" in err and "sublinear growth" in err


@pytest.mark.parametrize("text", ["scenario = 'nope'", "scenario = 'zero-generator'\n[grid]\nN = 0",
                                  "this is not toml", "scenario = 'zero-generator'\n[bogus]\nx = 1"])
def test_bad_configs_exit_2(tmp_path, text):
    path = tmp_path / "c.toml"
    path.write_text(text)
    assert main(["solve", str(path)]) == 2


def test_missing_seed_exit_2(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("scenario = 'zero-generator'\n[ensemble]\nM = 100\nchunk_size = 10\n")
    assert main(["solve", str(path), "--out", str(tmp_path / "o")]) == 2


def test_missing_file_and_bad_args(tmp_path):
    assert main(["solve", str(tmp_path / "none.toml")]) == 2
    assert main(["solve", "builtin:nope"]) == 2
    assert main(["frobnicate"]) == 2


def test_numerical_failure_exit_3(tmp_path, monkeypatch, capsys):
    mod = tmp_path / "nan_driver.py"
    mod.write_text("import numpy as np\n"
                   "def f(i, t, fy, fz, alpha):\n"
                   "    return np.full(fy.values.shape[1], np.nan if i == 5 else 0.0)\n")
    monkeypatch.syspath_prepend(str(tmp_path))
    cfg = write_cfg(tmp_path, "nan", scenario="custom",
                    generator='kind = "custom"\ncallable = "nan_driver:f"\nK = 0.0')
    assert main(["solve", str(cfg)]) == 3
    assert "time_index=5" in capsys.readouterr().err


def test_compare_identical(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "a")
    main(["solve", str(cfg), "--out", str(tmp_path / "r1")])
    main(["solve", str(cfg), "--out", str(tmp_path / "r2")])
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "r1"), str(tmp_path / "r2"), "--json"]) == 0
    out = capsys.readouterr().out
    report = json.loads(out[out.index("{"):])
    assert report["bit_equal"]
    assert all(f["max_abs_diff"] == 0 for f in report["files"].values())


def test_compare_different_seed(tmp_path, capsys):
    main(["solve", str(write_cfg(tmp_path, "a", seed=1))])
    main(["solve", str(write_cfg(tmp_path, "b", seed=2))])
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--json"]) == 0
    out = capsys.readouterr().out
    report = json.loads(out[out.index("{"):])
    assert not report["bit_equal"]
    assert report["files"]["solution.csv"]["max_abs_diff"] > 0
    assert report["y0_within_5se"]
    assert not any(f["unexpected_difference"] for f in report["files"].values())


def test_compare_different_N(tmp_path, capsys):
    main(["solve", str(write_cfg(tmp_path, "a", N=20))])
    main(["solve", str(write_cfg(tmp_path, "b", N=10))])
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 0
    assert "shape mismatch" in capsys.readouterr().out


def test_compare_missing_artifacts(tmp_path):
    (tmp_path / "x").mkdir()
    (tmp_path / "y").mkdir()
    assert main(["compare", str(tmp_path / "x"), str(tmp_path / "y")]) == 2


def test_heavy_tail_ladder_csv(tmp_path):
    out = tmp_path / "ht"
    assert main(["solve", "builtin:heavy_tail_ladder", "--out", str(out)]) == 0
    with open(out / "ladder.csv") as fh:
        rows = list(csv.DictReader(fh))
    gaps = [float(r["gap_to_next_L1"]) for r in rows if r["gap_to_next_L1"] not in ("", "nan")]
    assert len(gaps) == 4
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_module_entry_point(tmp_path):
    import subprocess
    r = subprocess.run([sys.executable, "-m", "delaybsde", "constants", "--p", "1.5", "--K", "0",
                        "--T", "1"], capture_output=True, text=True)
    assert r.returncode == 0 and "lambda_p" in r.stdout
