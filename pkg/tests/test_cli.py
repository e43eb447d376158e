import json
import subprocess
import sys

import numpy as np
import pytest

from cubepersist.cli import main
from cubepersist.grid import PersistenceDiagram, write_field


@pytest.fixture
def fields(tmp_path):
    rng = np.random.default_rng(0)
    write_field(tmp_path / "f.cpf", rng.normal(size=(12, 12)), 2, 12)
    write_field(tmp_path / "g.cpf", rng.normal(size=(12, 12)), 2, 12)
    return tmp_path


def test_diagram_and_bottleneck(fields, capsys):
    a, b = fields / "a.csv", fields / "b.csv"
    assert main(["diagram", "--field", str(fields / "f.cpf"), "--block", "2", "--out", str(a),
                 "--cells", str(fields / "cells.csv")]) == 0
    assert main(["diagram", "--field", str(fields / "g.cpf"), "--block", "2", "--out", str(b)]) == 0
    assert (fields / "cells.csv").read_text().startswith("cell_id,dim,value,pair_id\n")
    capsys.readouterr()
    assert main(["bottleneck", str(a), str(b), "--degree", "0"]) == 0
    out = capsys.readouterr().out.strip()
    from cubepersist.metrics import bottleneck
    expected = bottleneck(PersistenceDiagram.from_csv(a), PersistenceDiagram.from_csv(b), 0)
    assert out == f"{expected:.12g}"


def test_bottleneck_inf(tmp_path, capsys):
    PersistenceDiagram.from_points([(0, 0.0, float("inf"))]).to_csv(tmp_path / "a.csv")
    PersistenceDiagram().to_csv(tmp_path / "b.csv")
    assert main(["bottleneck", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 0
    assert capsys.readouterr().out.strip() == "inf"


@pytest.mark.parametrize("doc,code", [
    ({"kind": "sandwich"}, 2),
    ({"resolutions": [30, 20]}, 2),
    ({"signal": {"variant": "Nope"}}, 2),
])
def test_config_errors(tmp_path, doc, code):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == code


def test_missing_config_is_config_error(tmp_path):
    assert main(["lowerbound", "--config", str(tmp_path / "none.json")]) == 2


def test_runtime_failure(tmp_path):
    assert main(["diagram", "--field", str(tmp_path / "none.cpf"), "--block", "2"]) == 3


def test_bad_block(fields):
    assert main(["diagram", "--field", str(fields / "f.cpf"), "--block", "40"]) == 2


@pytest.mark.parametrize("cmd,doc,table", [
    ("lowerbound", {"resolutions": [20], "blocks": [2], "sigma": 1.0}, "kl.csv"),
    ("noise-tail", {"resolutions": [24], "block": 4, "repetitions": 50}, "noise_tail.csv"),
    ("sandwich", {"resolutions": [30], "repetitions": 1, "signal": {"variant": "CosSineDisc"},
                  "oracle_N": 200}, "sandwich.csv"),
    ("simulate", {"resolutions": [20], "repetitions": 2, "eval_N": 100}, "raw.csv"),
])
def test_experiment_commands(tmp_path, cmd, doc, table):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main([cmd, "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / table).exists()


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "cubepersist.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "bottleneck" in r.stdout
    r = subprocess.run([sys.executable, "-m", "cubepersist.cli", "frobnicate"], capture_output=True)
    assert r.returncode == 2
