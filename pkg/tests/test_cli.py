import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from mrppsel.cli import main
from mrppsel.data import LabeledSample, load_csv, standardize, write_csv
from mrppsel.dist import euclidean
from mrppsel.importance import tau
from mrppsel.mrpp import mrpp_test
from mrppsel.perm import build_plan
from oracles import naive_p

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"


def _schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def _csv(tmp_path, sample, name="data.csv", group_column="group"):
    path = tmp_path / name
    write_csv(sample, path, group_column)
    return str(path)


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def signal_csv(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(24, 8))
    X[12:, :4] += 2.5
    return _csv(tmp_path, LabeledSample(X, np.repeat(["a", "b"], 12)))


@pytest.fixture
def small_csv(tmp_path):
    X = np.array([[0.0, 1.0], [1.0, 3.0], [2.0, 2.0], [6.0, 1.0], [7.0, 2.0], [9.0, 0.0]])
    return _csv(tmp_path, LabeledSample(X, [0, 0, 0, 1, 1, 1]), "small.csv")


@pytest.mark.parametrize("method", ["mrpp", "disco", "energy"])
def test_identical_rows_give_p_one(tmp_path, capsys, method):
    path = _csv(tmp_path, LabeledSample(np.ones((8, 3)), [0] * 4 + [1] * 4))
    code, out, _ = _run(capsys, "test", path, "--method", method, "--permutations", "50")
    assert code == 0
    res = json.loads(out)
    jsonschema.validate(res, _schema("test"))
    assert res["p_value"] == 1.0 and res["method"] == method


def test_mrpp_matches_enumeration_oracle(small_csv, capsys):
    code, out, _ = _run(capsys, "test", small_csv)
    res = json.loads(out)
    assert res["plan"] == "exhaustive" and res["permutations"] == 20
    s = load_csv(small_csv, "group")
    D = euclidean(s).square()
    assert res["p_value"] == pytest.approx(float(naive_p(D, s.labels)), abs=1e-12)


def test_missing_group_column(small_csv, capsys):
    code, out, err = _run(capsys, "test", small_csv, "--group-col", "condition")
    assert code == 1 and out == ""
    assert "condition" in err and err.startswith("error:") and err.count("\n") == 1


def test_bad_inputs_exit_nonzero(tmp_path, capsys):
    code, _, err = _run(capsys, "test", tmp_path / "nope.csv")
    assert code == 1 and err.startswith("error:")
    three = _csv(tmp_path, LabeledSample(np.arange(12.0).reshape(6, 2), [0, 0, 1, 1, 2, 2]))
    code, _, err = _run(capsys, "test", three, "--method", "energy")
    assert code == 1 and "2 groups" in err
    code, _, err = _run(capsys, "test", three, "--permutations", "1")
    assert code == 2
    code, _, err = _run(capsys, "modified-test", three, "--r0", "fixed:0")
    assert code == 1 and err.count("\n") == 1
    with pytest.raises(SystemExit) as exc:
        main(["test", three, "--method", "anova"])
    assert exc.value.code == 2
    capsys.readouterr()


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_importance_tau_plumbing(signal_csv, capsys):
    code, out, _ = _run(capsys, "importance", signal_csv)
    assert code == 0
    rows = _rows(out)
    s = load_csv(signal_csv, "group")
    t = tau(euclidean(s), s.labels).values
    got = {r["variable"]: float(r["value"]) for r in rows}
    assert got == {n: v for n, v in zip(s.variable_names, t)}
    assert [int(r["rank"]) for r in rows] == list(range(1, 9))
    vals = [float(r["value"]) for r in rows]
    assert vals == sorted(vals)


def test_importance_constant_column_last(tmp_path, capsys):
    rng = np.random.default_rng(4)
    X = np.column_stack([np.full(10, 2.0), rng.normal(size=(10, 3))])
    X[5:, 1] += 3
    path = _csv(tmp_path, LabeledSample(X, np.repeat([0, 1], 5)))
    for measure in ("tau", "iota", "drop1", "add1", "central"):
        code, out, _ = _run(capsys, "importance", path, "--measure", measure, "--permutations", "100")
        assert code == 0
        last = _rows(out)[-1]
        assert last["variable"] == "V1" and float(last["value"]) == 0.0 and last["rank"] == "4"


def test_importance_bandwidth_options(signal_csv, capsys):
    code, out, err = _run(capsys, "importance", signal_csv, "--bandwidth", "fixed:0.5")
    assert code == 0 and "ignored" in err
    for bw in ("auto-curvature", "fixed:0.01", "auto-sse-central"):
        code, out, _ = _run(capsys, "importance", signal_csv, "--measure", "iota",
                            "--bandwidth", bw, "--permutations", "60")
        assert code == 0 and len(_rows(out)) == 8
    for bad in ("fixed:0", "fixed:-1", "auto-magic", "0.3"):
        code, _, err = _run(capsys, "importance", signal_csv, "--measure", "iota", "--bandwidth", bad)
        assert code == 1 and err.startswith("error:")
    code, out, _ = _run(capsys, "importance", signal_csv, "--measure", "gradp", "--permutations", "50")
    assert all(0 < float(r["value"]) <= 1 for r in _rows(out))


def test_iota_ranks_follow_tau(standard_sample, tmp_path, capsys):
    path = _csv(tmp_path, standard_sample)
    ranks = {}
    for m in ("tau", "iota"):
        _, out, _ = _run(capsys, "importance", path, "--measure", m)
        ranks[m] = {r["variable"]: int(r["rank"]) for r in _rows(out)}
    names = sorted(ranks["tau"])
    a = np.array([ranks["tau"][n] for n in names], float)
    b = np.array([ranks["iota"][n] for n in names], float)
    rho = 1 - 6 * np.sum((a - b) ** 2) / (len(a) * (len(a) ** 2 - 1))
    assert rho >= 0.8


def test_select_all_negative(tmp_path, capsys):
    rng = np.random.default_rng(0)
    X = rng.normal(scale=0.1, size=(10, 3))
    X[5:] += 3.0
    path = _csv(tmp_path, LabeledSample(X, np.repeat([0, 1], 5)))
    code, out, err = _run(capsys, "select", path, "--checkpoint", "off")
    assert code == 0
    res = json.loads(out)
    jsonschema.validate(res, _schema("select"))
    assert res["final"]["L"] == 1 and res["final"]["selected"] == [0, 1, 2]
    assert "L = 1" in err and "S(L) [3]" in err


def test_select_signal_and_determinism(signal_csv, tmp_path, capsys):
    out1 = tmp_path / "t1.json"
    out2 = tmp_path / "t2.json"
    for o in (out1, out2):
        code, stdout, _ = _run(capsys, "select", signal_csv, "--permutations", "100",
                               "--seed", "5", "--out", o)
        assert code == 0 and "top average ranks" in stdout
    assert out1.read_bytes() == out2.read_bytes()
    res = json.loads(out1.read_text())
    jsonschema.validate(res, _schema("select"))
    avg = np.array(res["summary"]["average_ranks"])
    assert sorted(np.argsort(avg, kind="stable")[:4].tolist()) == [0, 1, 2, 3]
    manifest = json.loads((tmp_path / "t1.json.manifest.json").read_text())
    jsonschema.validate(manifest, _schema("manifest"))
    assert manifest["command"] == "select" and manifest["seed"] == 5


def test_select_checkpoint_series(signal_csv, capsys):
    code, out, err = _run(capsys, "select", signal_csv, "--permutations", "50", "--alpha", "0.999")
    assert code == 0
    res = json.loads(out)
    assert res["final"]["stop_reason"] == "DeletedSetSignificant"
    assert "p(selected)" in err


def test_modified_fixed_all_matches_standardized_test(signal_csv, capsys):
    _, out, _ = _run(capsys, "modified-test", signal_csv, "--r0", "fixed:8",
                     "--permutations", "150", "--seed", "4")
    mod = json.loads(out)
    jsonschema.validate(mod, _schema("modified-test"))
    _, out, _ = _run(capsys, "test", signal_csv, "--standardize", "--permutations", "150", "--seed", "4")
    assert mod["p_bs"] == json.loads(out)["p_value"]
    s = standardize(load_csv(signal_csv, "group"))
    assert mod["p_bs"] == mrpp_test(euclidean(s), build_plan(s.labels, 150, 4)).p_value


def test_modified_identical_rows(tmp_path, capsys):
    path = _csv(tmp_path, LabeledSample(np.ones((8, 4)), [0] * 4 + [1] * 4))
    code, out, _ = _run(capsys, "modified-test", path, "--r0", "fixed:2", "--permutations", "40")
    assert code == 0 and json.loads(out)["p_bs"] == 1.0


def test_modified_fallback_flagged(tmp_path, capsys):
    X = np.array([[0.0], [10.0], [0.0], [10.0]] * 2)
    path = _csv(tmp_path, LabeledSample(X, [0, 0, 1, 1] * 2))
    _, out, _ = _run(capsys, "modified-test", path, "--r0", "sl", "--permutations", "20")
    res = json.loads(out)
    assert res["fallback"] is True and res["R0"] == 1


def test_simulate(tmp_path, capsys):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("n1 = 20\nn2 = 20\nR = 6\nnu = 0\nreps = 6\npermutations = 30\n"
                   "methods = MRPP_Org, Mod_2, Mod_S(L)\n")
    code, out, _ = _run(capsys, "simulate", cfg, "--out", tmp_path / "o1", "--seed", "2")
    assert code == 0 and "empirical size" in out and "Mod_2" in out
    data = json.loads((tmp_path / "o1" / "results.json").read_text())
    jsonschema.validate(data, _schema("simulate"))
    assert data[0]["config"]["seed"] == 2
    assert [r["method"] for r in data[0]["results"]] == ["MRPP_Org", "Mod_2", "Mod_S(L)"]
    jsonschema.validate(json.loads((tmp_path / "o1" / "manifest.json").read_text()), _schema("manifest"))
    _run(capsys, "simulate", cfg, "--out", tmp_path / "o2", "--seed", "2", "--threads", "2")
    for f in ("results.json", "results.csv"):
        assert (tmp_path / "o1" / f).read_bytes() == (tmp_path / "o2" / f).read_bytes()


def test_simulate_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("rho = 3\n")
    code, _, err = _run(capsys, "simulate", cfg, "--out", tmp_path / "o")
    assert code == 1 and "rho" in err and err.count("\n") == 1
    code, _, err = _run(capsys, "simulate", tmp_path / "missing.cfg", "--out", tmp_path / "o")
    assert code == 1


def test_console_script(small_csv):
    proc = subprocess.run([sys.executable, "-m", "mrppsel.cli", "test", small_csv],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["method"] == "mrpp"
    proc = subprocess.run([sys.executable, "-m", "mrppsel.cli", "test", small_csv, "--group-col", "x"],
                          capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.strip().count("\n") == 0
