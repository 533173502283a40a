import csv
import io
import json

import pytest

from mtlrc.cli import config_hash, main, to_csv

SMALL = {
    "bound": {"T": 2, "n": 100, "family": {"kind": "group", "q": 1.5, "radius": 1.0},
              "decay": {"d": 1.0, "alpha": 2.0, "length": 64}, "r": [0.001, 0.1]},
    "fixed-point": {"T": 2, "n": 100, "family": "schatten", "q": 1.0, "decay": {"alpha": 3.0, "length": 128}},
    "empirical": {"T": 2, "n": 4, "p": 3, "family": {"kind": "group", "q": 2.0, "radius": 1.0},
                  "mc_draws": 200, "r": [0.01, 1.0], "local_draws": 16},
    "train": {"T": 2, "n": 30, "p": 3, "family": "schatten", "q": 1.0, "radius": 1.0, "iters": 200,
              "noise_std": 0.1},
    "sweep": {"vary": "n", "grid": {"start": 8, "stop": 12, "num": 5, "base": 2.0},
              "outputs": ["lrc_excess", "grc_excess"]},
    "compare-trace": {"grid": {"start": 8, "stop": 12, "num": 5, "base": 2.0}},
    "compare-graph": {"n_grid": [256, 512, 1024], "T_grid": [2, 4, 8]},
    "talagrand": {"M": 3, "T": 2, "n": 8, "p": 3, "redraws": 200, "rademacher_draws": 100},
}


def _run(tmp_path, command, cfg, fmt="csv", seed=0, extra=()):
    cpath = tmp_path / f"{command}.json"
    cpath.write_text(json.dumps(cfg))
    out = tmp_path / f"{command}-{fmt}-{seed}.out"
    code = main([command, "--config", str(cpath), "--seed", str(seed), "--out", str(out), "--format", fmt, *extra])
    return code, out.read_bytes() if out.exists() else b""


@pytest.mark.parametrize("command", sorted(SMALL))
def test_subcommand_is_deterministic(tmp_path, command):
    code1, a = _run(tmp_path, command, SMALL[command])
    code2, b = _run(tmp_path, command, SMALL[command])
    assert code1 == code2 == 0
    assert a == b and a


@pytest.mark.parametrize("command", sorted(SMALL))
def test_json_output_has_hash(tmp_path, command):
    code, out = _run(tmp_path, command, SMALL[command], fmt="json", seed=3)
    assert code == 0
    doc = json.loads(out)
    assert doc["config_sha256"] == config_hash(SMALL[command], 3)
    assert doc["command"] == command


def test_bound_csv_schema(tmp_path):
    _, out = _run(tmp_path, "bound", SMALL["bound"])
    rows = list(csv.reader(io.StringIO(out.decode())))
    assert rows[0] == ["config_hash", "family", "q", "r", "value", "A1", "A2", "additive"]
    assert len(rows) == 4


def test_fixed_point_json_fields(tmp_path):
    _, out = _run(tmp_path, "fixed-point", SMALL["fixed-point"], fmt="json")
    doc = json.loads(out)
    for key in ("r_star", "method", "residual", "excess_risk", "confidence"):
        assert key in doc
    assert doc["r_star"] > 0 and doc["method"] == "bisection"


def test_empirical_from_csv(tmp_path):
    data = tmp_path / "sample.csv"
    data.write_text("task,y,x1,x2\n0,1,1,0\n0,0,0,1\n1,1,1,1\n1,2,0.5,0\n")
    cfg = {"sample_csv": str(data), "family": {"kind": "group", "q": 2.0, "radius": 1.0}, "mc_draws": 50}
    code, out = _run(tmp_path, "empirical", cfg, fmt="json")
    assert code == 0
    doc = json.loads(out)
    assert {"estimate", "std_error", "draws", "seed"} <= set(doc)
    assert doc["draws"] == 50


def test_train_writes_weights(tmp_path):
    w = tmp_path / "w.csv"
    code, out = _run(tmp_path, "train", SMALL["train"], extra=("--weights", str(w)))
    assert code == 0
    rows = list(csv.reader(io.StringIO(w.read_text())))
    assert rows[0] == ["task_0", "task_1"] and len(rows) == 4
    assert b"population_loss" in out


def test_float_formatting_and_csv():
    text = to_csv(("a", "b"), [(0.1, None), (1, True)])
    assert text.splitlines()[1] == "0.10000000000000001,"


def test_invalid_config_exit_code(tmp_path, capsys):
    code, _ = _run(tmp_path, "sweep", {"vary": "n", "grid": [1, 2]})
    assert code == 2
    assert "grid" in capsys.readouterr().err
    assert main(["bound", "--config", str(tmp_path / "missing.json")]) == 2


def test_validate_subset(tmp_path):
    out = tmp_path / "v.csv"
    assert main(["validate", "--only", "11", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "criterion,title,passed" and lines[1].startswith("11,")


def test_validate_fails_on_mutated_constant(tmp_path, monkeypatch):
    import mtlrc.fixedpoint as fp

    monkeypatch.setattr(fp, "CONVEX_COEFS", (31.0, 48.0, 16.0))
    assert main(["validate", "--only", "11", "--out", str(tmp_path / "v.csv")]) == 1
