import csv
import json
import math

import numpy as np
import pytest

from dpslab.cli import main
from dpslab.model import DpsModel


def _write_model(path, lam, mu, g):
    path.write_text(json.dumps(DpsModel(lam, mu, g).to_dict()), encoding="utf-8")
    return str(path)


@pytest.fixture
def ref_file(tmp_path):
    return _write_model(tmp_path / "ref.json", (0.2, 0.3), (1.0, 1.0), (1.0, 2.0))


@pytest.fixture
def egal_file(tmp_path):
    return _write_model(tmp_path / "egal.json", (0.2, 0.3), (1.0, 1.0), (2.0, 2.0))


def _manifest(out):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


def _read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.reader(fh))


def test_solve_writes_normalized_distribution(tmp_path, ref_file, capsys):
    out = tmp_path / "solve"
    assert main(["solve", "--model", ref_file, "--nmax", "60", "--out", str(out)]) == 0
    rows = _read_csv(out / "distribution.csv")
    probs = np.array([float(r[-1]) for r in rows[1:]])
    assert math.isclose(probs.sum(), 1.0, abs_tol=1e-12)
    man = _manifest(out)
    assert man["command"] == "solve"
    assert man["exit_code"] == 0
    assert set(man["outputs"]) == {str(out / "distribution.csv"), str(out / "solve_summary.json")}
    for p in man["outputs"]:
        assert (out / p.rsplit("/", 1)[-1]).stat().st_mtime_ns <= (out / "manifest.json").stat().st_mtime_ns


def test_solve_single_class_is_geometric(tmp_path):
    model = _write_model(tmp_path / "mm1.json", (0.5,), (1.0,), (1.0,))
    out = tmp_path / "mm1"
    assert main(["solve", "--model", model, "--nmax", "40", "--out", str(out), "--format", "json"]) == 0
    doc = json.loads((out / "distribution.json").read_text(encoding="utf-8"))
    # reflecting truncation keeps the geometric shape, renormalized over 0..40
    norm = (1 - 0.5**41) / 0.5
    for entry in doc["masses"]:
        (k,) = entry["n"]
        assert entry["p"] == pytest.approx(0.5**k / norm, rel=1e-9)
    text = (out / "distribution.json").read_bytes()
    assert b"\r\n" not in text


def test_unstable_model_exit_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"classes": 2, "lambda": [0.6, 0.6], "mu": [1, 1], "g": [1, 2]}), encoding="utf-8")
    out = tmp_path / "bad"
    assert main(["solve", "--model", str(path), "--out", str(out)]) == 2
    assert "Unstable" in capsys.readouterr().err
    assert _manifest(out)["exit_code"] == 2


def test_malformed_json_exit_2(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json", encoding="utf-8")
    assert main(["solve", "--model", str(path), "--out", str(tmp_path / "o")]) == 2


def test_asymptotics_reference(tmp_path, ref_file):
    out = tmp_path / "asym"
    assert main(["asymptotics", "--model", ref_file, "--gamma", "0.5,0.5", "--out", str(out)]) == 0
    doc = json.loads((out / "asymptotics.json").read_text(encoding="utf-8"))
    assert doc["delta2"] == pytest.approx([0.6, 0.675], abs=1e-12)
    assert doc["feasible"] is True


def test_asymptotics_infeasible_still_writes_report(tmp_path, ref_file):
    out = tmp_path / "asym"
    assert main(["asymptotics", "--model", ref_file, "--gamma", "0.01,0.99", "--out", str(out)]) == 5
    doc = json.loads((out / "asymptotics.json").read_text(encoding="utf-8"))
    assert doc["feasible"] is False
    assert doc["margins"][0] < 0
    assert _manifest(out)["exit_code"] == 5


def test_asymptotics_equal_weights_degenerate(tmp_path, egal_file):
    out = tmp_path / "asym"
    assert main(["asymptotics", "--model", egal_file, "--out", str(out)]) == 0
    assert json.loads((out / "asymptotics.json").read_text(encoding="utf-8"))["degenerate"] is True


def test_asymptotics_reorders_classes(tmp_path):
    model = _write_model(tmp_path / "rev.json", (0.3, 0.2), (1.0, 1.0), (2.0, 1.0))
    out = tmp_path / "asym"
    assert main(["asymptotics", "--model", model, "--gamma", "0.5,0.5", "--out", str(out)]) == 0
    doc = json.loads((out / "asymptotics.json").read_text(encoding="utf-8"))
    assert doc["class_order"] == [2, 1]
    assert doc["delta2"] == pytest.approx([0.6, 0.675], abs=1e-12)


def test_partial_weight_ties_refused(tmp_path):
    model = _write_model(tmp_path / "tie.json", (0.1, 0.1, 0.1), (1.0, 1.0, 1.0), (1.0, 1.0, 2.0))
    assert main(["asymptotics", "--model", model, "--out", str(tmp_path / "o")]) == 2


def test_characterize(tmp_path, ref_file, egal_file):
    out = tmp_path / "c1"
    assert main(["characterize", "--model", ref_file, "--out", str(out)]) == 0
    doc = json.loads((out / "characterization.json").read_text(encoding="utf-8"))
    assert doc["product_form"] is False
    assert doc["witness"] is not None
    out2 = tmp_path / "c2"
    assert main(["characterize", "--model", egal_file, "--out", str(out2)]) == 0
    assert json.loads((out2 / "characterization.json").read_text(encoding="utf-8"))["product_form"] is True


def test_table1_csv(tmp_path):
    out = tmp_path / "t1"
    assert main(["table1", "--no-grid", "--out", str(out)]) == 0
    rows = _read_csv(out / "table1.csv")
    assert rows[0][:5] == ["g2", "gamma1", "gamma2", "objective", "mode"]
    assert len(rows) == 6
    for r in rows[1:]:
        assert float(r[7]) <= 0.01
        assert r[9] == ""


def test_table1_paper_literal_exit_5(tmp_path):
    assert main(["table1", "--no-grid", "--mode", "paper-literal", "--out", str(tmp_path / "o")]) == 5


def test_optimize(tmp_path, ref_file):
    out = tmp_path / "opt"
    assert main(["optimize", "--model", ref_file, "--out", str(out)]) == 0
    doc = json.loads((out / "optimum.json").read_text(encoding="utf-8"))
    assert sum(doc["gamma_opt"]) == pytest.approx(1.0)


def test_validate_reference(tmp_path, ref_file):
    out = tmp_path / "val"
    assert main(["validate", "--model", ref_file, "--gamma", "0.5,0.5", "--out", str(out)]) == 0
    doc = json.loads((out / "validate.json").read_text(encoding="utf-8"))
    assert doc["trend"] == {"1": "decreasing", "2": "decreasing"}


def test_validate_egalitarian_exact_ratios(tmp_path, egal_file):
    out = tmp_path / "val"
    assert main(["validate", "--model", egal_file, "--gamma", "0.3,0.7", "--nmax", "60",
                 "--N-list", "10,20", "--out", str(out)]) == 0
    for row in json.loads((out / "validate.json").read_text(encoding="utf-8"))["rows"]:
        assert row["ratio"] == pytest.approx(row["exact"], rel=1e-8)


def test_validate_infeasible_exit_5_before_solving(tmp_path, ref_file):
    out = tmp_path / "val"
    assert main(["validate", "--model", ref_file, "--gamma", "0.01,0.99", "--out", str(out)]) == 5
    assert not (out / "validate.csv").exists()


def test_simulate_requires_seed(tmp_path, ref_file):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--model", ref_file, "--horizon", "100", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_simulate_deterministic(tmp_path, ref_file):
    outs = []
    for k in range(2):
        out = tmp_path / f"sim{k}"
        assert main(["simulate", "--model", ref_file, "--horizon", "2000", "--seed", "11", "--out", str(out)]) == 0
        outs.append((out / "empirical.csv").read_bytes())
        man = _manifest(out)
        assert man["parameters"]["seed"] == 11
        assert man["parameters"]["warmup"] == pytest.approx(200.0)
    assert outs[0] == outs[1]
