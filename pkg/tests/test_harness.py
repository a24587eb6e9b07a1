import csv
import filecmp
import json
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mcensemble import harness
from mcensemble.errors import ConfigError
from mcensemble.harness import ExperimentConfig, MethodResult, RunReport
from mcensemble.oracle import CovarianceConstrained, LinearCapped
from mcensemble.synthlab import LabelMean


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("exp,spec,region", [("A", "coordinate", "covariance"), ("B", "group", "covariance"),
                                             ("C", "coordinate", "linear_capped"), ("d", "group", "linear_capped")])
def test_experiment_table(exp, spec, region):
    cfg = ExperimentConfig(exp)
    assert (cfg.experiment, cfg.specialization, cfg.region) == (exp.upper(), spec, region)
    assert cfg.generator.seed == cfg.seed == 0


@pytest.mark.parametrize("kw", [dict(experiment="E"), dict(experiment="A", region="linear_capped"),
                                dict(experiment="B", specialization="coordinate"), dict(alpha=0),
                                dict(alpha=float("inf")), dict(mass_floor=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        ExperimentConfig(**kw)


def test_config_json_roundtrip(tmp_path):
    cfg = ExperimentConfig("C", alpha=1e-3, seed=4)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_json()), encoding="utf-8")
    assert harness.load_config(path) == cfg
    assert harness.load_config(path, seed=9).generator.seed == 9
    path.write_text(json.dumps({"bogus": 1}), encoding="utf-8")
    with pytest.raises(ConfigError):
        harness.load_config(path)


def test_build_region(small_split):
    train, _ = small_split
    assert isinstance(harness.build_region(ExperimentConfig("A"), train), CovarianceConstrained)
    assert isinstance(harness.build_region(ExperimentConfig("D"), train), LinearCapped)


def test_clairvoyant_is_upper_bound(small_split):
    train, debias = small_split
    region = harness.build_region(ExperimentConfig("C"), train)
    clair = harness.clairvoyant_payoff(debias, region)
    mean = harness.evaluate(
        harness.PatchedModel(LabelMean.fit(train), debias.M), debias, region)["realized"]
    assert mean < clair
    zero = harness.evaluate(np.zeros((debias.n, debias.d)), debias, region)
    assert zero["realized"] == 0.0 and zero["self_assessed"] is None


def _empty_method():
    return MethodResult([], [], 0, 0, 0, 0.0, 0.0, 0.0, 0.0, [], 0.0)


def test_emit_report_empty(tmp_path):
    rep = RunReport({"alpha": 0.01}, 1.0, [], 0.5, _empty_method(), _empty_method(), [], [], [], {})
    paths = harness.emit_report(rep, tmp_path)
    for p in paths:
        if p.suffix == ".csv" and p.name != "summary.csv":
            assert len(read_csv(p)) == 1
    ET.parse(tmp_path / "payoff_convergence.svg")


def test_run_is_reproducible(tmp_path, runs):
    a = runs("A")
    b = harness.run_experiment(ExperimentConfig("A"))
    harness.write_run_artifacts(a, tmp_path / "a")
    harness.write_run_artifacts(b, tmp_path / "b")
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "payoff_convergence.svg" in names and "run.json" in names
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert mismatch == [] and errors == []


@pytest.fixture(scope="module")
def written(tmp_path_factory, runs):
    out = tmp_path_factory.mktemp("runA")
    report = runs("A")
    harness.write_run_artifacts(report, out)
    return report, out


def test_report_rows(written):
    report, out = written
    conv = read_csv(out / "payoff_convergence.csv")
    wb = [r for r in conv[1:] if r[1] == "whitebox"]
    bb = [r for r in conv[1:] if r[1] == "blackbox"]
    assert len(wb) == report.whitebox.rounds + 1
    assert len(bb) == report.blackbox.n_patches + 1
    k = len(report.initial_payoffs)
    assert len(read_csv(out / "wb_rounds.csv")) == 1 + k * (report.whitebox.rounds + 1)
    freq = read_csv(out / "selection_freq.csv")[1:]
    for t in {r[0] for r in freq}:
        assert sum(float(r[2]) for r in freq if r[0] == t) == pytest.approx(1.0)
    assert len(read_csv(out / "dominance_report.csv")) == 1 + len(report.dominance)
    summary = dict(read_csv(out / "summary.csv")[1:])
    assert float(summary["clairvoyant"]) == report.clairvoyant


def test_svg_matches_csv(written):
    report, out = written
    conv = read_csv(out / "payoff_convergence.csv")[1:]
    root = ET.parse(out / "payoff_convergence.svg").getroot()
    ns = {"s": "http://www.w3.org/2000/svg"}
    for method in ("whitebox", "blackbox"):
        rows = [r for r in conv if r[1] == method]
        panel = root.find(f".//s:g[@data-method='{method}']", ns)
        for col, name in ((2, "predicted"), (3, "realized")):
            line = panel.find(f"s:polyline[@class='{name}']", ns)
            assert float(line.get("data-first")) == float(rows[0][col])
            assert float(line.get("data-last")) == float(rows[-1][col])
            assert int(line.get("data-length")) == len(rows)
            assert len(re.findall(r"[\d.]+,[\d.]+", line.get("points"))) == len(rows)
        clair = panel.find("s:line[@class='clairvoyant']", ns)
        assert float(clair.get("data-value")) == report.clairvoyant


def test_report_rerender_from_run_json(written, tmp_path):
    report, out = written
    back = harness.load_run(out / "run.json")
    harness.emit_report(back, tmp_path)
    for name in ("payoff_convergence.svg", "payoff_convergence.csv", "summary.csv", "dominance_report.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_saved_ensembles_replay(written):
    report, out = written
    art = report._artifacts
    debias = art["debias"]
    wb = harness.load_ensemble(out / "ensemble_wb.json")
    res = harness.evaluate(wb["ensemble"], debias, wb["region"])
    assert res["realized"] == report.whitebox.final_realized
    bb = harness.load_ensemble(out / "ensemble_bb.json")
    res = harness.evaluate(bb["models"][0], debias, bb["region"], bb["bucketing"], context=bb["context"])
    assert res["realized"] == report.blackbox.final_realized
    assert res["histogram"].sum(axis=1) == pytest.approx(np.ones(debias.d))


def test_timing_file(written, tmp_path):
    report, _ = written
    harness.write_timing(report, tmp_path / "t.json")
    obj = json.loads((tmp_path / "t.json").read_text())
    assert obj["whitebox"]["wall_seconds"] == report.whitebox.wall_seconds > 0


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        harness.load_run(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        harness.load_ensemble(tmp_path / "missing.json")
