import math

import numpy as np
import pytest

from shuffledp import amplification as amp
from shuffledp import experiment as ex
from shuffledp.errors import InfeasibleError, InputError
from shuffledp.protocol import PeosConfig, peos_run
from shuffledp import mechanisms as mech


def test_zipf_and_mse():
    v = ex.gen_zipf(50000, 20, 1.1, 0)
    assert v.min() >= 0 and v.max() < 20
    emp = np.bincount(v, minlength=20) / v.size
    assert np.abs(emp - ex.zipf_pmf(20, 1.1)).max() < 0.01
    assert np.array_equal(v, ex.gen_zipf(50000, 20, 1.1, 0))
    assert ex.mse([0, 1], [1, 1]) == 0.5
    with pytest.raises(InputError):
        ex.mse([0, 1], [1])
    with pytest.raises(InputError):
        ex.gen_zipf(0, 20, 1.1, 0)


def test_ingest_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("item,count\nb,1\na,2\n\nb,3\n", encoding="utf-8")
    data = ex.ingest_csv(p, header=True)
    assert data.values.tolist() == [0, 1, 0] and data.labels == ["b", "a"]
    bad = tmp_path / "bad.csv"
    bad.write_bytes(b"ok\n\xff\xfe\n")
    with pytest.raises(InputError, match="line 2"):
        ex.ingest_csv(bad)
    empty = tmp_path / "e.csv"
    empty.write_text("\n")
    with pytest.raises(InputError):
        ex.ingest_csv(empty)


def test_plan_method_fallbacks():
    p = ex.plan_method("solh", 1.0, 10**5, 100, 1e-9)
    assert p.amplified and p.eps_l > 1.0
    p = ex.plan_method("sh", 0.05, 10**4, 100, 1e-9)
    assert not p.amplified and p.eps_l == 0.05
    p = ex.plan_method("rap_r", 0.5, 10**5, 50, 1e-9)
    assert p.eps_l == pytest.approx(amp.invert_amplification("ue", 1.0, 10**5, 1e-9))
    with pytest.raises(InfeasibleError):
        ex.plan_method("aue", 0.1, 1000, 10, 1e-9)
    with pytest.raises(InfeasibleError):
        ex.plan_method("aue", 1.0, 10**6, 10, 1e-9, budget="eps_l")
    with pytest.raises(InputError):
        ex.plan_method("magic", 1.0, 10**5, 10, 1e-9)


def test_estimates_are_unbiased_per_method():
    g = np.random.default_rng(1)
    data = ex.Dataset(ex.gen_zipf(20000, 10, 1.1, 1), 10)
    truth = data.frequencies()
    for method in ("solh", "sh", "rap", "aue", "olh", "had", "lap"):
        plan = ex.plan_method(method, 1.0, data.n, data.d, 1e-9)
        est = np.stack([ex.estimate(plan, data, 1.0, g) for _ in range(60)])
        se = est.std(0, ddof=1) / math.sqrt(60)
        assert np.all(np.abs(est.mean(0) - truth) < 5 * se + 1e-12), method
    base = ex.estimate(ex.plan_method("base", 1.0, data.n, 10, 1e-9), data, 1.0, g)
    assert np.allclose(base, 0.1)


def test_run_and_write(tmp_path):
    spec = ex.ExperimentSpec(methods=["solh", "aue", "base"], eps=[0.1, 1.0],
                             data={"kind": "zipf", "n": 20000, "d": 20}, reps=2, seed=4)
    recs = ex.run_experiment(spec)
    skipped = [r for r in recs if r["status"] == "skipped"]
    assert len(skipped) == 1 and skipped[0]["method"] == "aue" and skipped[0]["rep"] is None
    a = ex.write_results(recs, tmp_path / "a")
    b = ex.write_results(ex.run_experiment(spec), tmp_path / "b")
    assert open(a["records"]).read() == open(b["records"]).read()
    assert open(a["summary"]).read() == open(b["summary"]).read()
    assert "wall_time" not in open(a["records"]).read()
    assert "wall_time" in open(a["timing"]).read()


def test_load_spec(tmp_path):
    (tmp_path / "vals.csv").write_text("x\ny\nx\n")
    spec_path = tmp_path / "s.toml"
    spec_path.write_text('methods = ["olh"]\neps_l = [1.0]\nreps = 1\n[data]\nkind = "csv"\npath = "vals.csv"\n')
    spec = ex.load_spec(spec_path)
    assert spec.budget == "eps_l" and spec.eps == [1.0]
    assert ex.load_data(spec.data).n == 3
    with pytest.raises(InputError):
        ex.ExperimentSpec(methods=["olh"], eps=[1.0], data={}, reps=0)
    with pytest.raises(InputError):
        ex.ExperimentSpec(methods=["nope"], eps=[1.0], data={})
    with pytest.raises(InputError):
        ex.load_data({"kind": "parquet"})


def test_analytic_variance_order():
    v = {m: ex.analytic_variance(m, 0.4, 990002, 42178, 1e-9) for m in ("solh", "sh", "rap")}
    assert v["solh"] < v["rap"] < v["sh"] or math.isinf(v["sh"])
    with pytest.raises(InputError):
        ex.analytic_variance("lap", 0.4, 10, 10, 1e-9)


def test_overhead_report():
    _, t = peos_run(np.arange(100) % 5, PeosConfig(mech.GrrConfig(1.0, 5), r=3, seed=0))
    rep = ex.overhead_report(t)
    assert rep["shuffle_rounds"] == 3 and rep["n"] == 100
    assert rep["user_messages"] == ["ciphertext", "share", "share"]
    assert rep["user_bytes_max"] == 2 * 8 + 4 + 128
