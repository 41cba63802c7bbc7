import csv
import json
import time

import numpy as np
import pytest
import yaml

from fusionkit.cli import main
from fusionkit.synth import survey_population, survey_schema


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    pop, _ = survey_population(2000, 3)
    schema = survey_schema()
    (d / "schema.yaml").write_text(yaml.safe_dump(schema.to_dict(), sort_keys=False))
    pop.take(np.arange(20)).drop(schema.specific_donor).to_csv(d / "rec.csv", with_row_id=True)
    pop.take(np.arange(100, 120)).drop(schema.specific_recipient).to_csv(d / "don.csv", with_row_id=True)
    d.joinpath("bare.yaml").write_text(yaml.safe_dump(
        {"variables": [{k: v for k, v in var.items() if k != "recode"} for var in schema.to_dict()["variables"]]}))
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_validate(files, capsys):
    code, out, _ = run(capsys, "validate", "--schema", files / "schema.yaml", files / "rec.csv", files / "don.csv")
    assert code == 0 and "20 recipients + 20 donors" in out


def test_validate_bad_code_is_data_error(files, capsys, tmp_path):
    text = (files / "rec.csv").read_text().splitlines()
    head = text[0].split(",")
    row = text[1].split(",")
    row[head.index("X1")] = "7"
    (tmp_path / "bad.csv").write_text("\n".join([text[0], ",".join(row)]) + "\n")
    code, _, err = run(capsys, "validate", "--schema", files / "schema.yaml", tmp_path / "bad.csv")
    assert code == 2
    assert json.loads(err)["error"] == "DataError"


def test_fuse_pmm_fills_from_donors(files, capsys, tmp_path):
    out = tmp_path / "fused.csv"
    code, stdout, _ = run(capsys, "fuse", "--recipient", files / "rec.csv", "--donor", files / "don.csv",
                          "--schema", files / "schema.yaml", "--method", "pmm", "--seed", 1, "--out", out)
    assert code == 0 and "fallback rate" in stdout
    fused = list(csv.DictReader(out.open()))
    donors = list(csv.DictReader((files / "don.csv").open()))
    by_id = {r["row_id"]: r for r in donors}
    audit = list(csv.DictReader((tmp_path / "fused.assignment.csv").open()))
    assert len(fused) == len(audit) == 20
    for f, a in zip(fused, audit):
        assert f["Z1"] == by_id[a["donor_id"]]["Z1"] and f["Z2"] == by_id[a["donor_id"]]["Z2"]
        assert a["method"] == "pmm" and a["fallback"] == ""


def test_fuse_same_seed_byte_identical(files, capsys, tmp_path):
    for m in ("rhd", "pmm", "gower"):
        blobs = []
        for rep in ("a", "b"):
            out = tmp_path / rep / f"{m}.csv"
            code, _, _ = run(capsys, "fuse", "--recipient", files / "rec.csv", "--donor", files / "don.csv",
                             "--schema", files / "schema.yaml", "--method", m, "--seed", 7, "--out", out)
            assert code == 0
            blobs.append(sorted((p.name, p.read_bytes()) for p in out.parent.iterdir()))
        assert blobs[0] == blobs[1]


def test_fuse_rhd_without_recode_rule(files, capsys, tmp_path):
    code, _, err = run(capsys, "fuse", "--recipient", files / "rec.csv", "--donor", files / "don.csv",
                       "--schema", files / "bare.yaml", "--method", "rhd", "--seed", 1, "--out", tmp_path / "f.csv")
    assert code == 2
    report = json.loads(err)
    assert report["error"] == "SchemaError" and "recode" in report["message"]
    assert not (tmp_path / "f.csv").exists()


def test_missing_seed_is_printed(files, capsys, tmp_path):
    code, out, _ = run(capsys, "fuse", "--recipient", files / "rec.csv", "--donor", files / "don.csv",
                       "--schema", files / "schema.yaml", "--method", "gower", "--out", tmp_path / "f.csv")
    assert code == 0 and out.startswith("seed: ")


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["fuse", "--method", "knn"])
    assert exc.value.code == 1
    assert json.loads(capsys.readouterr().err.splitlines()[-1])["error"] == "UsageError"
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1


def test_missing_input_exit_two(capsys, tmp_path):
    code, _, err = run(capsys, "simulate", "--scenario", tmp_path / "nope.yaml", "--out", tmp_path / "o")
    assert code == 2 and json.loads(err)["error"] == "FileNotFoundError"


def test_overdraw_is_data_error(capsys, tmp_path):
    (tmp_path / "sc.yaml").write_text("population: {synthetic: survey, n: 300, seed: 1}\nk: 1\nn_rec: 200\nn_don: 200\n")
    code, _, err = run(capsys, "simulate", "--scenario", tmp_path / "sc.yaml", "--out", tmp_path / "o")
    assert code == 2
    assert "cannot draw" in json.loads(err)["message"]


def test_matcher_error_exit_three(capsys, tmp_path):
    (tmp_path / "sc.yaml").write_text("population: {synthetic: survey, n: 1000, seed: 1}\nk: 1\nseed: 1\n"
                                      "rhd: {c_primary: 1, c_secondary: 2}\n")
    code, _, err = run(capsys, "simulate", "--scenario", tmp_path / "sc.yaml", "--out", tmp_path / "o")
    assert code == 3 and json.loads(err)["error"] == "MatchingError"
    assert not (tmp_path / "o").exists()


def test_synth_writes_population_and_schema(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--spec", "survey", "--n", 2000, "--seed", 3, "--out", tmp_path / "pop.csv")
    assert code == 0 and "Y1~Z1: 0.86" in out
    assert (tmp_path / "pop.schema.yaml").exists()
    rows = (tmp_path / "pop.csv").read_text().splitlines()
    assert len(rows) == 2001


def test_smoke_scenario_then_report(capsys, tmp_path):
    sc = tmp_path / "smoke.yaml"
    sc.write_text("name: smoke\npopulation: {synthetic: survey, n: 2000, seed: 7}\n"
                  "k: 1\nn_rec: 100\nn_don: 100\nmethods: [rhd, pmm, gower]\nseed: 1\n")
    code, out, _ = run(capsys, "simulate", "--scenario", sc, "--out", tmp_path / "res")
    assert code == 0 and "BIAS [smoke" in out and "MSE [smoke" in out
    summary = json.loads((tmp_path / "res" / "summary.json").read_text())
    assert set(summary["scenarios"][0]["methods"]) == {"rhd", "pmm", "gower"}
    assert set(summary["scenarios"][0]["pairs"]["Y1~Z1"]["methods"]) == {"rhd", "pmm", "gower"}
    for name in ("estimates.csv", "quantiles.csv"):
        assert list(csv.reader((tmp_path / "res" / name).open()))
    code, out, _ = run(capsys, "report", "--results", tmp_path / "res", "--out", tmp_path / "rep")
    assert code == 0
    for name in ("bias.csv", "mse.csv", "boxplot_yz_smoke.png", "boxplot_xz_smoke.png"):
        assert (tmp_path / "rep" / name).stat().st_size > 0


def test_report_on_wrong_directory(capsys, tmp_path):
    code, _, err = run(capsys, "report", "--results", tmp_path, "--out", tmp_path / "rep")
    assert code == 2 and "not a simulate output" in json.loads(err)["message"]


def test_simulate_without_any_seed_prints_one(capsys, tmp_path):
    sc = tmp_path / "s.yaml"
    sc.write_text("population: {synthetic: survey, n: 1000, seed: 7}\nk: 1\nn_rec: 50\nn_don: 50\nmethods: [pmm]\n")
    code, out, _ = run(capsys, "simulate", "--scenario", sc, "--out", tmp_path / "r")
    assert code == 0 and out.startswith("seed: ")


@pytest.mark.slow
def test_demo_scenario_under_five_minutes(capsys, tmp_path):
    from pathlib import Path
    demo = Path(__file__).resolve().parents[1] / "configs" / "demo.yaml"
    start = time.perf_counter()
    code, _, _ = run(capsys, "simulate", "--scenario", demo, "--out", tmp_path / "demo")
    elapsed = time.perf_counter() - start
    print(f"demo scenario wall clock: {elapsed:.1f}s")
    assert code == 0 and elapsed < 300
