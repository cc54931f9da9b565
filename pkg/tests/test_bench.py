import csv
import io
import json
import statistics

import pytest

from cvchain.bench import (
    ROWS_COLUMNS,
    SUITE_NAMES,
    ExperimentSuite,
    UnknownSuite,
    run_experiment_suite,
)


def test_unknown_suite():
    with pytest.raises(UnknownSuite):
        run_experiment_suite("latency")
    with pytest.raises(UnknownSuite):
        ExperimentSuite("bogus")


def test_suite_invariants():
    with pytest.raises(ValueError):
        ExperimentSuite("cpu", repetitions=0)
    assert ExperimentSuite("cpu").sweep_values == (1, 4, 6)


@pytest.mark.parametrize("name", [n for n in SUITE_NAMES if n != "isig-demo"])
def test_summary_means_match_rows(tmp_path, name):
    result = run_experiment_suite(name, out_dir=tmp_path, chart=True)
    rows = list(csv.DictReader(io.StringIO((tmp_path / f"{name}.csv").read_text())))
    assert tuple(rows[0]) == ROWS_COLUMNS
    summary = list(csv.DictReader(io.StringIO((tmp_path / f"{name}_summary.csv").read_text())))
    for line in summary:
        values = [float(r["response_ms"]) for r in rows if r["sweep_value"] == line["sweep_value"]]
        assert float(line["mean_response_ms"]) == statistics.fmean(values)
        assert int(line["samples"]) == len(values)
    order = [line["sweep_value"] for line in summary]
    assert order == [str(v) for v in result.suite.sweep_values]
    js = json.loads((tmp_path / f"{name}_summary.json").read_text())
    assert js["suite"] == name
    assert (tmp_path / f"{name}.txt").read_text().startswith(name)


def test_sample_counts():
    assert run_experiment_suite("participants").counts() == {v: 8 for v in (20, 40, 80, 160, 320)}
    assert run_experiment_suite("multiattack").counts() == {1: 3, 2: 6, 3: 9, 4: 12}


def test_network_suite_rejections_only():
    result = run_experiment_suite("network")
    for verdicts in result.notes["verdicts"].values():
        assert set(verdicts) <= {"RejectedSpoof", "RejectedBlacklisted", "RejectedUnverifiable"}


def test_tamper_suite_chains_intact():
    result = run_experiment_suite("tamper")
    assert result.notes["chains_ok"] == {"Vehicle": True, "RSU": True, "Controller": True}
    assert set(result.means().values()) == {39.0}


def test_isig_suite_files(tmp_path):
    result = run_experiment_suite("isig-demo", out_dir=tmp_path)
    report = json.loads((tmp_path / "isig-demo_report.json").read_text())
    assert report["protected"] == report["baseline"]
    assert report["unprotected"]["total_delay_s"] > report["baseline"]["total_delay_s"]
    assert {p.name for p in result.files} == {"isig-demo_report.json", "isig-demo_delays.csv"}


def test_seed_changes_nothing_but_placement(tmp_path):
    a = run_experiment_suite("network", seed=1).means()
    b = run_experiment_suite("network", seed=2).means()
    assert a == b
