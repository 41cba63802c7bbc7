import csv
import json

import numpy as np
import pytest

from fusionkit import simulation
from fusionkit.errors import FusionError, MatchingError, SimulationAborted
from fusionkit.evaluation import pearson_corr
from fusionkit.simulation import McConfig, load_scenarios, run_mc, run_replication, stream, write_outputs
from fusionkit.synth import TRACKED_PAIRS, survey_population, survey_schema


@pytest.fixture(scope="module")
def pop():
    table, _ = survey_population(3000, 11)
    return table


@pytest.fixture(scope="module")
def schema():
    return survey_schema()


def test_streams_are_independent_of_order():
    a = stream(5, 3, "pmm").random(4)
    b = stream(5, 3, "pmm").random(4)
    c = stream(5, 3, "rhd").random(4)
    d = stream(5, 4, "pmm").random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_micro_run_summary_consistent(pop, schema):
    cfg = McConfig(schema, k=2, n_rec=100, n_don=100, methods=("rhd", "pmm"), seed=3, pairs=TRACKED_PAIRS[:2])
    res = run_mc(pop, cfg)
    for (m, lab), est in res.estimates.items():
        assert est.shape == (2,) and not np.isnan(est).any()
        s = res.summaries[(m, lab)]
        true = res.targets[lab].true_value
        assert s.mean == pytest.approx(est.mean())
        assert s.bias == pytest.approx(est.mean() - true)
        assert s.mse == pytest.approx(np.mean((est - true) ** 2))
    assert res.targets["Y1~Z1"].true_value == pytest.approx(pearson_corr(pop.column("Y1"), pop.column("Z1")))
    assert res.targets["Y1~Z1"].cia_value is not None


def test_self_fusion_reproduces_sample_correlation(pop, schema):
    cfg = McConfig(schema, k=1, n_rec=200, n_don=200, methods=("pmm",), seed=8, pairs=(("Y1", "Z1"),),
                   self_fusion=True)
    out = run_replication(pop, cfg, 0)
    idx = stream(8, 0, "sample").choice(pop.n_rows, size=200, replace=False)
    sample = pop.take(idx)
    assert out["pmm"]["Y1~Z1"] == pearson_corr(sample.column("Y1"), sample.column("Z1"))


def test_seeded_runs_bit_identical(pop, schema):
    cfg = McConfig(schema, k=3, n_rec=80, n_don=80, methods=("rhd", "pmm", "gower"), seed=21, pairs=TRACKED_PAIRS)
    a, b = run_mc(pop, cfg), run_mc(pop, cfg)
    for key in a.estimates:
        assert a.estimates[key].tobytes() == b.estimates[key].tobytes()


def test_adding_a_method_leaves_others_unchanged(pop, schema):
    base = McConfig(schema, k=2, n_rec=80, n_don=80, methods=("pmm",), seed=4, pairs=TRACKED_PAIRS[:1])
    more = McConfig(schema, k=2, n_rec=80, n_don=80, methods=("rhd", "gower", "pmm"), seed=4, pairs=TRACKED_PAIRS[:1])
    a, b = run_mc(pop, base), run_mc(pop, more)
    np.testing.assert_array_equal(a.estimates[("pmm", "Y1~Z1")], b.estimates[("pmm", "Y1~Z1")])


def test_parallel_equals_serial(pop, schema):
    cfg = McConfig(schema, k=4, n_rec=60, n_don=60, methods=("pmm", "rhd"), seed=2, pairs=TRACKED_PAIRS[:2])
    a, b = run_mc(pop, cfg, threads=1), run_mc(pop, cfg, threads=2)
    for key in a.estimates:
        np.testing.assert_array_equal(a.estimates[key], b.estimates[key])


def test_single_pmm_replication_within_spread(pop, schema):
    cfg = McConfig(schema, k=20, n_rec=150, n_don=150, methods=("pmm",), seed=6, pairs=(("Y1", "Z1"),))
    est = run_mc(pop, cfg).estimates[("pmm", "Y1~Z1")]
    one = run_replication(pop, cfg, 0)["pmm"]["Y1~Z1"]
    assert est[0] == one
    assert est.mean() - 4 * est.std() <= one <= est.mean() + 4 * est.std()


def test_failures_abort_above_five_percent(pop, schema, monkeypatch):
    real = simulation.fuse
    calls = {"n": 0}

    def flaky(frame, schema_, method, *args, **kwargs):
        calls["n"] += 1
        if calls["n"] % 3 == 0:
            raise MatchingError("injected")
        return real(frame, schema_, method, *args, **kwargs)

    monkeypatch.setattr(simulation, "fuse", flaky)
    cfg = McConfig(schema, k=6, n_rec=50, n_don=50, methods=("pmm",), seed=1, pairs=(("Y1", "Z1"),))
    with pytest.raises(SimulationAborted, match="injected"):
        run_mc(pop, cfg)


def test_isolated_failure_recorded(pop, schema, monkeypatch):
    real = simulation.fuse

    def once(frame, schema_, method, *args, **kwargs):
        if frame.table.row_ids[0] == first_id:
            raise MatchingError("injected")
        return real(frame, schema_, method, *args, **kwargs)

    rec, _ = simulation._sample(pop, McConfig(schema, k=1, n_rec=50, n_don=50, seed=1), 0)
    first_id = rec.row_ids[0]
    monkeypatch.setattr(simulation, "fuse", once)
    cfg = McConfig(schema, k=40, n_rec=50, n_don=50, methods=("pmm",), seed=1, pairs=(("Y1", "Z1"),))
    res = run_mc(pop, cfg)
    assert len(res.failures) == 1 and res.failures[0][0] == 0
    assert np.isnan(res.estimates[("pmm", "Y1~Z1")][0])
    assert res.summaries[("pmm", "Y1~Z1")].n == 39


def test_config_validation(schema):
    with pytest.raises(FusionError):
        McConfig(schema, k=0, n_rec=10, n_don=10)
    with pytest.raises(FusionError, match="unknown"):
        McConfig(schema, k=1, n_rec=10, n_don=10, methods=("knn",))


def test_both_sample_scenarios_from_one_population(schema):
    big, _ = survey_population(23_418, 2015)
    for n_don in (400, 3600):
        cfg = McConfig(schema, k=1, n_rec=400, n_don=n_don, methods=("pmm", "rhd"), seed=1, pairs=TRACKED_PAIRS)
        res = run_mc(big, cfg)
        assert not res.failures


def test_scenario_file_and_outputs(tmp_path):
    (tmp_path / "sc.yaml").write_text(
        "population: {synthetic: survey, n: 2000, seed: 3}\n"
        "k: 2\nmethods: [rhd, pmm, gower]\nseed: 9\n"
        "scenarios:\n  - {name: a, n_rec: 50, n_don: 50}\n  - {name: b, n_rec: 50, n_don: 150, k: 1}\n")
    pop_, configs = load_scenarios(tmp_path / "sc.yaml")
    assert [c.name for c in configs] == ["a", "b"]
    assert configs[1].k == 1 and configs[1].n_don == 150 and configs[0].seed == 9
    _, over = load_scenarios(tmp_path / "sc.yaml", seed=44)
    assert all(c.seed == 44 for c in over)
    results = [run_mc(pop_, c) for c in configs]
    paths = write_outputs(results, tmp_path / "out")
    summary = json.loads(paths["summary"].read_text())
    assert [s["scenario"] for s in summary["scenarios"]] == ["a", "b"]
    assert set(summary["scenarios"][0]["pairs"]["Y1~Z1"]["methods"]) == {"rhd", "pmm", "gower"}
    rows = list(csv.DictReader(paths["estimates"].open()))
    assert len(rows) == (2 + 1) * 3 * len(TRACKED_PAIRS)
    q = list(csv.DictReader(paths["quantiles"].open()))
    assert {"min", "q25", "median", "q75", "max", "cia"} <= set(q[0])
    assert "BIAS [a" in simulation.format_table(results, "bias")
