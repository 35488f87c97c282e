import csv
import json

import pytest

from ditree.cli import main
from ditree.planner import PlanResult
from ditree.workspace import dump_map
from helpers import walled_grid

SMALL = """\
[train]
epochs = 2
hidden = 16
batch_size = 64
[observation]
patch_size = 5
extent = 2.5
[bench]
iterations = 150
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    g = walled_grid(24, 24, 0.5)
    text = dump_map(g)
    (d / "room.map").write_text(text)
    rows = text.splitlines()
    # a copy with S/G markers for plan and bench
    body = [r for r in rows if r and r[0] in "#."]
    body[3] = body[3][:3] + "S" + body[3][4:]
    body[-5] = body[-5][:18] + "G" + body[-5][19:]
    header = [r for r in rows if r and r[0] not in "#."]
    (d / "suite").mkdir()
    (d / "suite" / "room_sg.map").write_text("\n".join(header + body) + "\n")
    (d / "small.ini").write_text(SMALL)
    (d / "seeds.txt").write_text("0\n1\n")
    return d


@pytest.fixture(scope="module")
def weights(workdir):
    assert main(["gen-data", "--map", str(workdir / "room.map"), "--queries", "6", "--seed", "1",
                 "--out", str(workdir / "d.dkd")]) == 0
    assert main(["train", "--data", str(workdir / "d.dkd"), "--config", str(workdir / "small.ini"),
                 "--map", str(workdir / "room.map"), "--out", str(workdir / "w.fmw")]) == 0
    return workdir / "w.fmw"


def test_training_writes_weights_and_sidecar(weights):
    side = json.loads(weights.with_name("w.fmw.json").read_text())
    assert side["patch_size"] == 5 and side["meta"]["epochs"] == 2
    assert weights.read_bytes()[:4] == b"FMW1"


def test_plan_and_plot(workdir, weights, capsys):
    m = str(workdir / "suite" / "room_sg.map")
    out = workdir / "r.json"
    code = main(["plan", "--map", m, "--method", "rrt", "--seed", "0", "--budget", "5", "--out", str(out),
                 "--plot", str(workdir / "r.svg")])
    assert code == 0 and "Solved" in capsys.readouterr().out
    res = PlanResult.load(out)
    assert res.solved and res.tree is not None
    assert (workdir / "r.svg").exists()
    code = main(["plan", "--map", m, "--method", "ditree", "--weights", str(weights), "--config",
                 str(workdir / "small.ini"), "--deterministic", "--iterations", "300", "--out", str(out)])
    assert code in (0, 2)
    assert main(["plot", "--map", m, "--result", str(out), "--out", str(workdir / "p.svg")]) == 0
    assert (workdir / "p.svg").read_text().lstrip().startswith("<?xml")


def test_bench_deterministic_twice(workdir, weights):
    args = ["bench", "--suite", str(workdir / "suite"), "--methods", "rrt", "ditree", "dp", "--seeds",
            str(workdir / "seeds.txt"), "--weights", str(weights), "--config", str(workdir / "small.ini"),
            "--deterministic"]
    assert main(args + ["--report", str(workdir / "a.csv")]) == 0
    assert main(args + ["--report", str(workdir / "b.csv")]) == 0
    a = (workdir / "a.csv").read_bytes()
    assert a == (workdir / "b.csv").read_bytes()
    assert (workdir / "a_trials.csv").read_bytes() == (workdir / "b_trials.csv").read_bytes()
    rows = list(csv.DictReader(a.decode().splitlines()))
    assert [r["method"] for r in rows] == ["rrt", "ditree", "dp"]
    assert "rt_mean_s" not in rows[0] and all(r["trials"] == "2" for r in rows)
    assert (workdir / "a.svg").exists()


def test_bench_with_wall_clock_has_time_columns(workdir):
    code = main(["bench", "--suite", str(workdir / "suite"), "--methods", "rrt", "--trials", "1", "--budget", "5",
                 "--report", str(workdir / "t.csv")])
    assert code == 0
    header = (workdir / "t.csv").read_text().splitlines()[0].split(",")
    assert header == ["scenario", "method", "trials", "successes", "rate_pct", "rt_mean_s", "rt_std_s",
                      "len_mean_m", "len_rel_rrt"]


def test_ablate(workdir, weights):
    code = main(["ablate", "--kind", "dgb", "--values", "0", "0.85", "--suite", str(workdir / "suite"), "--trials", "1",
                 "--weights", str(weights), "--config", str(workdir / "small.ini"), "--deterministic",
                 "--report", str(workdir / "abl.csv")])
    assert code == 0
    rows = list(csv.DictReader((workdir / "abl.csv").read_text().splitlines()))
    assert [r["value"] for r in rows] == ["0.0", "0.85"]
    assert (workdir / "abl.svg").exists()


@pytest.mark.parametrize("argv", [
    ["plan", "--map", "/nonexistent.map", "--method", "rrt", "--out", "x.json"],
    ["ablate", "--kind", "prop_N", "--values", "40", "--weights", "/nonexistent.fmw", "--report", "x.csv"],
    ["train", "--data", "/nonexistent.dkd", "--out", "x.fmw"],
])
def test_errors_exit_with_status_one(argv, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("error:")


def test_bad_prop_n_is_a_config_error(workdir, weights, capsys):
    code = main(["ablate", "--kind", "prop_N", "--values", "40", "--suite", str(workdir / "suite"), "--weights",
                 str(weights), "--config", str(workdir / "small.ini"), "--report", str(workdir / "x.csv")])
    assert code == 1 and "multiple" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2
