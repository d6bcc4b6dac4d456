import json

import pytest

from shuffledp.cli import main


def run(capsys, *argv):
    rc = main(list(argv))
    out = capsys.readouterr()
    return rc, out


def test_amplify_inverse(capsys):
    rc, out = run(capsys, "amplify", "--mechanism", "solh", "--eps-c", "0.2", "--n", "990002")
    res = json.loads(out.out)
    assert rc == 0 and res["d_prime"] == 45 and res["eps_c"] == 0.2 and res["n"] == 990002
    assert res["variance"] == pytest.approx(5.2816e-8, rel=1e-3)


def test_amplify_forward_and_table1(capsys):
    rc, out = run(capsys, "amplify", "--mechanism", "grr", "--eps-l", "1", "--n", "100000", "--d", "2")
    assert json.loads(out.out)["amplified"]
    rc, out = run(capsys, "amplify", "--table1", "efmrtt", "--eps-l", "0.3", "--n", "100000")
    assert "condition_satisfied" in json.loads(out.out)


def test_error_exit_code(capsys):
    rc, out = run(capsys, "amplify", "--eps-c", "0.01", "--n", "100")
    assert rc == 2 and json.loads(out.err)["error"] == "InfeasibleError"


def test_plan(capsys):
    rc, out = run(capsys, "plan", "--eps1", "0.5", "--eps2", "1.0", "--eps3", "5", "--n", "100000", "--d", "100")
    res = json.loads(out.out)
    assert rc == 0 and res["mechanism"] in ("grr", "solh") and res["eps_l"] <= 5


def test_mechanism_and_output_file(capsys, tmp_path):
    path = tmp_path / "r.json"
    rc, _ = run(capsys, "mechanism", "--mechanism", "ue", "--eps-l", "2", "--n", "2000", "--d", "8",
                "--output", str(path))
    res = json.loads(path.read_text())
    assert rc == 0 and len(res["estimate"]) == 8 and res["mechanism"] == "ue"


def test_simulate_peos_with_view(capsys, tmp_path):
    view = tmp_path / "v.jsonl"
    tr = tmp_path / "t.jsonl"
    rc, out = run(capsys, "simulate", "--mechanism", "solh", "--eps-c", "1.0", "--n", "20000", "--d", "30",
                  "--n-r", "500", "--view", "server+users", "--view-output", str(view), "--transcript", str(tr))
    res = json.loads(out.out)
    assert rc == 0 and res["achieved_eps_c"] == pytest.approx(1.0) and res["mse"] < 1e-3
    assert view.read_text().startswith('{"model": "server+users"')
    assert tr.read_text().count("\n") > 20000


def test_simulate_paillier_and_ss(capsys):
    rc, out = run(capsys, "simulate", "--protocol", "peos", "--ahe", "paillier", "--mechanism", "grr",
                  "--eps-l", "3", "--n", "60", "--d", "4", "--key-bits", "256")
    assert rc == 0
    rc, out = run(capsys, "simulate", "--protocol", "ss", "--mechanism", "grr", "--eps-l", "3", "--n", "200",
                  "--d", "4", "--n-r", "10")
    assert rc == 0 and json.loads(out.out)["protocol"] == "ss"


def test_treehist(capsys):
    rc, out = run(capsys, "treehist", "--n", "20000", "--L", "16", "--k", "5", "--planted", "5")
    res = json.loads(out.out)
    assert rc == 0 and len(res["top"]) == 5 and res["f1"] >= 0.8


def test_experiment(capsys, tmp_path):
    spec = tmp_path / "s.toml"
    spec.write_text('methods = ["solh", "lap"]\neps_c = [1.0]\nreps = 1\n[data]\nn = 20000\nd = 10\n')
    rc, out = run(capsys, "experiment", str(spec), "--output", str(tmp_path / "res"))
    res = json.loads(out.out)
    assert rc == 0 and res["skipped"] == 0
    assert (tmp_path / "res.csv").read_text().startswith("method,eps_c")


def test_overhead(capsys):
    rc, out = run(capsys, "overhead", "--n", "500", "--r", "3", "5")
    rows = json.loads(out.out)["rows"]
    assert [r["shuffle_rounds"] for r in rows] == [3, 10]


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "shuffledp", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "simulate" in proc.stdout
