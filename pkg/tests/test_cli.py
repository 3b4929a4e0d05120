import csv
import json

import pytest

from dpi.cli import build_run_config, main, parse_config
from dpi.errors import ConfigError

BASE = """\
[suite]
profile = {profile}
n_tasks = {n}
n_train = 64
n_eval = 32
noise_std = 0.0

[training]
lr = 0.01
epochs_probe = 2
epochs_stage = 2

[method]
name = {method}
p = 5
tau = 0.1
seed = 42
"""


def write_cfg(tmp_path, name="run.ini", profile="mixed", n=4, method="dpi", extra=""):
    path = tmp_path / name
    path.write_text(BASE.format(profile=profile, n=n, method=method) + extra)
    return path


def test_probe_disjoint_gives_one_stage_per_task(tmp_path, capsys):
    cfg = write_cfg(tmp_path, profile="disjoint", n=3)
    assert main(["probe", str(cfg), "--out", str(tmp_path / "p")]) == 0
    assert "K=3" in capsys.readouterr().out
    plan = json.loads((tmp_path / "p/plan.json").read_text())
    assert len(plan["stages"]) == 3
    assert sorted(f.name for f in (tmp_path / "p/probes").iterdir()) == ["A.ckpt", "B.ckpt", "C.ckpt"]


def test_probe_overlapping_gives_one_stage(tmp_path, capsys):
    cfg = write_cfg(tmp_path, profile="overlapping", n=2)
    assert main(["probe", str(cfg), "--out", str(tmp_path / "p")]) == 0
    assert "K=1" in capsys.readouterr().out


def test_bad_tau_exits_2_naming_tau(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert main(["probe", str(cfg), "--set", "method.tau=1.5", "--out", str(tmp_path / "p")]) == 2
    assert "tau" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, extra="[method]\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "r")]) == 2
    (tmp_path / "extra.ini").write_text("[suite]\nprofile = mixed\n[method]\nname = dpi\n[colour]\nred = 1\n")
    assert main(["run", str(tmp_path / "extra.ini"), "--out", str(tmp_path / "r")]) == 2
    assert main(["run", str(tmp_path / "missing.ini")]) == 2
    (tmp_path / "bad.ini").write_text("[suite]\nprofile = mixed\n[method]\nname = dpi\nwidth = 3\n")
    assert main(["run", str(tmp_path / "bad.ini"), "--out", str(tmp_path / "r")]) == 2
    assert "method.width" in capsys.readouterr().err
    assert main(["frobnicate"]) == 2


def test_missing_required_key_is_named():
    with pytest.raises(ConfigError) as exc:
        parse_config("[suite]\nprofile = mixed\n")
    assert exc.value.field == "method.name"
    with pytest.raises(ConfigError) as exc:
        parse_config("[suite]\nprofile = mixed\nn_tasks = many\n[method]\nname = dpi\n")
    assert exc.value.field == "suite.n_tasks"


def test_set_overrides_file():
    cfg = parse_config(BASE.format(profile="mixed", n=4, method="dpi"), ["method.p=0.5", "training.lr=0.2"])
    run = build_run_config(cfg)
    assert run.p == 0.5 and run.training.lr == 0.2 and run.seed == 42


def test_run_is_deterministic_and_snapshot_reparses(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/report.json").read_bytes() == (tmp_path / "b/report.json").read_bytes()
    snap = parse_config((tmp_path / "a/config.ini").read_text())
    assert snap.get("output", "dir") == str(tmp_path / "a")
    assert build_run_config(snap).to_dict() == build_run_config(parse_config(cfg.read_text())).to_dict()
    # refuses to clobber, unless asked
    assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == 2
    assert main(["run", str(cfg), "--out", str(tmp_path / "a"), "--overwrite"]) == 0


def test_random_k1_matches_multitask(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["run", str(cfg), "--set", "method.name=random_stages", "--set", "method.K=1", "--out", str(tmp_path / "r")]) == 0
    assert main(["run", str(cfg), "--set", "method.name=full_multitask", "--out", str(tmp_path / "m")]) == 0
    r = json.loads((tmp_path / "r/report.json").read_text())["rows"][0]
    m = json.loads((tmp_path / "m/report.json").read_text())["rows"][0]
    assert r["scores"] == m["scores"]


def test_report_merges_and_reproduces(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    main(["run", str(cfg), "--out", str(tmp_path / "d")])
    main(["run", str(cfg), "--set", "method.name=heuristic_stages", "--out", str(tmp_path / "h")])
    assert main(["report", str(tmp_path / "d"), "--out", str(tmp_path / "one")]) == 0
    assert (tmp_path / "one/report.json").read_bytes() == (tmp_path / "d/report.json").read_bytes()
    assert main(["report", str(tmp_path / "h"), str(tmp_path / "d"), "--out", str(tmp_path / "two")]) == 0
    rows = json.loads((tmp_path / "two/report.json").read_text())["rows"]
    assert [r["method"] for r in rows] == ["dpi", "heuristic_stages"]
    other = write_cfg(tmp_path, "other.ini", profile="disjoint", n=3)
    main(["run", str(other), "--out", str(tmp_path / "o")])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "d"), str(tmp_path / "o")]) == 2
    assert "different suites" in capsys.readouterr().err
    assert main(["report", str(tmp_path / "nowhere")]) == 2


@pytest.mark.parametrize("p_arg,count", [("5", 1), ("0.1,0.5,1,5,10", 5)])
def test_ablate_rows(tmp_path, p_arg, count):
    cfg = write_cfg(tmp_path)
    assert main(["ablate", str(cfg), "--p", p_arg, "--out", str(tmp_path / "a")]) == 0
    with (tmp_path / "a/ablation_p.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 * count
    for t in "ABCD":
        assert sum(r["task_id"] == t for r in rows) == count
    assert main(["ablate", str(cfg), "--p", "0", "--out", str(tmp_path / "z")]) == 2
