import csv
import json

import numpy as np
import pytest

from rltqap.cli import main, parse_size
from rltqap.model import Instance, random_instance, serialize_qaplib
from rltqap.optima import bundled_path


@pytest.fixture
def write_instance(tmp_path):
    def _write(inst, name="toy.dat"):
        path = tmp_path / name
        path.write_text(serialize_qaplib(inst))
        return path
    return _write


def test_parse_size():
    assert parse_size("8G") == 8 * 1024**3
    assert parse_size("512M") == 512 * 1024**2
    assert parse_size("1000") == 1000
    assert parse_size("1.5GiB") == int(1.5 * 1024**3)


def test_estimate_n12(capsys):
    assert main(["estimate", "--n", "12", "--level", "3", "--precision", "32"]) == 0
    out = capsys.readouterr().out
    assert "141,134,400" in out
    assert "564,537,600" in out
    assert "E" in out and "total" in out


def test_estimate_from_instance(capsys):
    assert main(["estimate", "--instance", str(bundled_path("nug12.dat")), "--level", "2"]) == 0
    assert "n=12 level=2" in capsys.readouterr().out


def test_verify_small(tmp_path, write_instance, capsys):
    inst = random_instance(3, seed=4)
    path = write_instance(inst)
    perm = tmp_path / "p.txt"
    perm.write_text("1 2 3\n")
    assert main(["verify", "--instance", str(path), "--perm", str(perm)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("cost: ")
    assert "optimal: " in out and "brute-force optimum" in out


def test_verify_zero_flow(tmp_path, write_instance, capsys):
    path = write_instance(Instance(np.zeros((4, 4)), np.ones((4, 4))))
    perm = tmp_path / "p.txt"
    perm.write_text("4 3 2 1")
    assert main(["verify", "--instance", str(path), "--perm", str(perm)]) == 0
    out = capsys.readouterr().out
    assert "cost: 0" in out and "optimal: yes" in out


def test_verify_nug12(capsys):
    args = ["verify", "--instance", str(bundled_path("nug12.dat")), "--perm", str(bundled_path("nug12.sln"))]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "cost: 578" in out and "optimal: unknown" in out


def test_bound_zero_flow(tmp_path, write_instance, capsys):
    path = write_instance(Instance(np.zeros((5, 5)), np.ones((5, 5))))
    out_json = tmp_path / "r.json"
    out_csv = tmp_path / "r.csv"
    rc = main(["bound", "--instance", str(path), "--target", "0", "--out", str(out_json), "--csv", str(out_csv)])
    assert rc == 0
    report = json.loads(out_json.read_text())
    assert report["final_lb"] == 0 and report["stop_reason"] == "TargetReached"
    rows = list(csv.reader(out_csv.open()))
    assert len(rows) - 1 == report["iterations_run"] + 1
    assert "LB=0.000000" in capsys.readouterr().out


def test_bound_workers_and_gap(tmp_path, write_instance):
    path = write_instance(random_instance(5, seed=6))
    out_json = tmp_path / "r.json"
    rc = main(["bound", "--instance", str(path), "--level", "2", "--workers", "3",
               "--max-iters", "2", "--target", "1000", "--out", str(out_json)])
    assert rc == 0
    report = json.loads(out_json.read_text())
    assert report["partition"]["workers"] == 3
    assert report["gap_percent"] == pytest.approx((1000 - report["final_lb"]) / 1000 * 100)


def test_bound_over_budget_fails_cleanly(tmp_path, write_instance, capsys):
    path = write_instance(random_instance(30, seed=0))
    rc = main(["bound", "--instance", str(path), "--level", "3", "--mem-budget", "8G"])
    assert rc != 0
    err = capsys.readouterr().err
    assert "MemoryBudgetExceeded" in err and "E" in err


def test_bound_level_unavailable(write_instance, capsys):
    path = write_instance(random_instance(3, seed=0))
    assert main(["bound", "--instance", str(path), "--level", "3"]) == 2
    assert "LevelUnavailable" in capsys.readouterr().err


def test_missing_file(capsys):
    assert main(["verify", "--instance", "/nonexistent.dat", "--perm", "/nonexistent"]) == 2
    assert "error" in capsys.readouterr().err


def test_estimate_level1_lists_b_and_c(capsys):
    assert main(["estimate", "--n", "4", "--level", "1"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()[2:]]
    assert names == ["B", "C", "total", "worker"]


def test_verify_all_permutations_of_n3(tmp_path, write_instance, capsys):
    import itertools

    path = write_instance(random_instance(3, seed=8))
    verdicts = []
    for p in itertools.permutations(range(1, 4)):
        perm = tmp_path / "p.txt"
        perm.write_text(" ".join(map(str, p)))
        assert main(["verify", "--instance", str(path), "--perm", str(perm)]) == 0
        verdicts.append("optimal: yes" in capsys.readouterr().out)
    assert sum(verdicts) >= 1
