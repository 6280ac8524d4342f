import csv
import io
import json
import math

import pytest

from ecfse.experiment import (TIMING_COLUMNS, TRIAL_COLUMNS, ExperimentConfig, run_experiment, run_pmu_sweep,
                              thread_count)
from ecfse.measurements import NoiseSpec, PlacementPlan, RtuPlacement, load_placement


@pytest.fixture(scope="module")
def report():
    return run_experiment(ExperimentConfig(trials=4, seed_base=10))


def test_rows_and_summary(report):
    assert len(report.rows) == 12
    assert [r.method for r in report.rows[:3]] == ["lecf", "necf", "wls"]
    assert [r.seed for r in report.rows[::3]] == [10, 11, 12, 13]
    summary = report.summary()
    assert set(summary) == {"lecf", "necf", "wls"}
    for m, s in summary.items():
        rows = report.method_rows(m)
        assert s["trials"] == 4 and s["failures"] == 0
        assert s["mean_state_error"] == math.fsum(r.state_error for r in rows) / 4
        assert s["mean_variance_ratio"] == math.fsum(r.variance_ratio for r in rows) / 4
        assert 0 < s["mean_variance_ratio"] < 1


def test_means_recompute_from_csv(report):
    rows = list(csv.DictReader(io.StringIO(report.trials_csv())))
    assert tuple(rows[0]) == TRIAL_COLUMNS
    for m, s in report.summary().items():
        vals = [float(r["state_error"]) for r in rows if r["method"] == m]
        assert math.fsum(vals) / len(vals) == s["mean_state_error"]
    timing = list(csv.DictReader(io.StringIO(report.timing_csv())))
    assert tuple(timing[0]) == TIMING_COLUMNS and len(timing) == 12


def test_identical_config_gives_identical_bytes(report):
    again = run_experiment(ExperimentConfig(trials=4, seed_base=10))
    assert again.trials_csv() == report.trials_csv()


def test_threads_do_not_change_results(report):
    threaded = run_experiment(ExperimentConfig(trials=4, seed_base=10), threads=3)
    assert threaded.trials_csv() == report.trials_csv()


def test_zero_noise_single_trial():
    rep = run_experiment(ExperimentConfig(trials=1, noise=NoiseSpec(kind="none")))
    for r in rep.rows:
        assert r.status == "ok"
        assert r.state_error < 1e-13
        assert math.isnan(r.variance_ratio)
    doc = json.loads(rep.to_json())
    assert doc["rows"][0]["variance_ratio"] is None
    assert doc["summary"]["lecf"]["mean_variance_ratio"] is None


def test_failures_are_recorded():
    plan = PlacementPlan(pmus=load_placement("ieee14").pmus[:1], rtus=[RtuPlacement(5, True, False, ())])
    with pytest.warns(UserWarning):
        rep = run_experiment(ExperimentConfig(placement=plan, methods=("lecf", "wls"), trials=2))
    assert all(r.status == "error" and "Unobservable" in r.error for r in rep.rows)
    assert rep.summary()["lecf"]["failures"] == 2


def test_write(tmp_path, report):
    paths = report.write(tmp_path / "out")
    assert set(paths) == {"trials.csv", "timing.csv", "report.json"}
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert doc["format"] == "ecfse-report/1" and doc["n_bus"] == 14 and doc["n_pmu"] == 3


def test_pmu_sweep():
    out = run_pmu_sweep(ExperimentConfig(methods=("lecf",), trials=1), [0.5, 1.0])
    assert [lvl for lvl, _ in out] == [0.5, 1.0]
    assert [rep.n_pmu for _, rep in out] == [7, 14]


def test_config_validation(monkeypatch):
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)
    with pytest.raises(ValueError):
        ExperimentConfig(methods=())
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("lecf", "lecf"))
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("kalman",))
    monkeypatch.setenv("ECFSE_THREADS", "4")
    assert thread_count() == 4
    monkeypatch.setenv("ECFSE_THREADS", "x")
    with pytest.raises(ValueError):
        thread_count()
