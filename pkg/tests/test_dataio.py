import json

import numpy as np
import pandas as pd
import pytest

from condrand.dataio import (
    PairwiseReport,
    RunConfig,
    ingest_covariates,
    ingest_csv,
    pairwise_frame,
    read_table,
    result_payload,
    write_json,
    write_labels_csv,
    write_reference_csv,
)
from condrand.engine import conditional_test, pairwise_tests
from condrand.errors import ConfigError, DomainError

ERRATUM_CSV = "y,w,x\n1.13,1,1\n0.49,0,1\n-0.31,0,1\n0.98,1,2\n1.68,0,2\n"


@pytest.fixture
def erratum_csv(tmp_path):
    path = tmp_path / "erratum.csv"
    path.write_text(ERRATUM_CSV, encoding="utf-8")
    return path


@pytest.fixture
def erratum_config():
    return RunConfig(outcome="y", treatment="w", covariates=("x",))


def test_run_config_from_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"outcome": "y", "treatment": "w", "covariates": "x, z", "draws": 50}))
    config = RunConfig.from_json(path)
    assert config.covariates == ("x", "z")
    assert config.draws == 50


def test_run_config_unknown_key():
    with pytest.raises(ConfigError, match="colour"):
        RunConfig.from_dict({"colour": "red"})


def test_run_config_merged_ignores_none():
    config = RunConfig(statistic="t_ps(x)", seed=3).merged(statistic=None, seed=7, balance="strata(x)")
    assert config.statistic == "t_ps(x)"
    assert config.seed == 7
    assert config.balance == "strata(x)"


@pytest.mark.parametrize("kwargs", [{"alpha": 0.0}, {"draws": 0}, {"exact_cap": 0}])
def test_run_config_validation(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_require_columns():
    with pytest.raises(ConfigError, match="input, treatment"):
        RunConfig(outcome="y").require_columns()


def test_ingest_erratum(erratum_csv, erratum_config):
    obs = ingest_csv(erratum_csv, erratum_config)
    np.testing.assert_array_equal(obs.assignment, [1, 0, 0, 1, 0])
    np.testing.assert_allclose(obs.outcomes, [1.13, 0.49, -0.31, 0.98, 1.68])
    assert obs.covariates.column("x").levels == ("1", "2")
    assert obs.metadata["arm_levels"] == ["0", "1"]
    assert obs.metadata["dropped_rows"] == 0
    result = conditional_test(obs, "t_ps(x)", "strata(x)", sidedness="doubled", erratum_doubling=True)
    assert result.p_value == pytest.approx(2 / 3)


def test_ingest_labels_in_first_appearance_order(tmp_path):
    path = tmp_path / "arms.csv"
    path.write_text("score,arm\n1,B\n2,A\n3,B\n4,C\n", encoding="utf-8")
    obs = ingest_csv(path, RunConfig(outcome="score", treatment="arm"))
    np.testing.assert_array_equal(obs.assignment, [0, 1, 0, 2])
    assert obs.arm_levels == ("B", "A", "C")
    assert obs.n_arms == 3


def test_ingest_drops_incomplete_rows(tmp_path):
    path = tmp_path / "gaps.csv"
    path.write_text("y,w,x\n1.0,1,a\n,0,b\n2.0,0, \n3.0,1,b\n4.0,0,a\n", encoding="utf-8")
    obs = ingest_csv(path, RunConfig(outcome="y", treatment="w", covariates=("x",)))
    assert obs.n_units == 3
    assert obs.metadata["dropped_rows"] == 2

def test_ingest_keeps_na_like_levels(tmp_path):
    path = tmp_path / "levels.csv"
    path.write_text("y,w,region\n1.0,1,NA\n2.0,0,None\n3.0,1,null\n4.0,0,\n5.0,0,NA\n", encoding="utf-8")
    obs = ingest_csv(path, RunConfig(outcome="y", treatment="w", covariates=("region",)))
    assert obs.n_units == 4
    assert obs.metadata["dropped_rows"] == 1
    assert obs.covariates.column("region").levels == ("NA", "None", "null")



def test_ingest_bad_outcome_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,w\n1.0,1\nhigh,0\n", encoding="utf-8")
    with pytest.raises(DomainError, match="line 3"):
        ingest_csv(path, RunConfig(outcome="y", treatment="w"))


def test_ingest_header_errors(tmp_path):
    path = tmp_path / "dup.csv"
    path.write_text("y,w,y\n1,0,1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="Duplicate"):
        ingest_csv(path, RunConfig(outcome="y", treatment="w"))
    with pytest.raises(ConfigError, match="not found"):
        ingest_csv(tmp_path / "missing.csv", RunConfig(outcome="y", treatment="w"))
    path.write_text("y,w\n1,0\n2,1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="available: y, w"):
        ingest_csv(path, RunConfig(outcome="y", treatment="w", covariates=("age",)))


def test_ingest_single_arm(tmp_path):
    path = tmp_path / "one.csv"
    path.write_text("y,w\n1,1\n2,1\n", encoding="utf-8")
    with pytest.raises(DomainError, match="two arms"):
        ingest_csv(path, RunConfig(outcome="y", treatment="w"))


def test_read_table_strips_whitespace(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a,b\n x ,1\ny, 2\n", encoding="utf-8")
    df, dropped = read_table(path)
    assert df["a"].tolist() == ["x", "y"]
    assert df["b"].tolist() == ["1", "2"]
    assert dropped == 0


def test_result_payload_and_json(tmp_path, erratum_csv, erratum_config):
    obs = ingest_csv(erratum_csv, erratum_config)
    result = conditional_test(obs, "t_sd", "strata(x)", keep_reference=True)
    payload = result_payload(result, obs)
    assert payload["version"]
    assert payload["arm_levels"] == ["0", "1"]
    assert payload["covariate_levels"] == {"x": ["1", "2"]}
    assert payload["reference_size"] == 6

    out = tmp_path / "result.json"
    write_json(out, payload)
    text = out.read_text(encoding="utf-8")
    loaded = json.loads(text)
    assert loaded["p_value"] == pytest.approx(4 / 6)
    assert list(loaded) == sorted(loaded)

    ref = tmp_path / "ref.csv"
    write_reference_csv(ref, result)
    frame = pd.read_csv(ref)
    assert list(frame.columns) == ["draw", "value"]
    assert len(frame) == 6


def test_write_json_replaces_non_finite(tmp_path):
    out = tmp_path / "x.json"
    write_json(out, {"value": float("nan"), "items": (np.int64(2), np.float64(0.5))})
    assert json.loads(out.read_text(encoding="utf-8")) == {"items": [2, 0.5], "value": None}


def test_write_reference_requires_values(tmp_path, erratum_obs):
    result = conditional_test(erratum_obs, "t_sd", "strata(x)")
    with pytest.raises(DomainError):
        write_reference_csv(tmp_path / "ref.csv", result)


def test_pairwise_frame_and_report(make_obs):
    obs = make_obs([0, 1, 2] * 3, [1.0, 2.0, 3.0, 1.5, 2.5, 3.5, 0.5, 2.2, 3.1], n_arms=3)
    results = pairwise_tests(obs)
    labels = ["A", "B", "C"]
    frame = pairwise_frame(results, [0, 1, 2], labels)
    assert frame.index.name == "arm"
    assert list(frame.columns) == labels
    assert frame.loc["A", "B"] == f"{results[(0, 1)].p_value:.6g}"
    assert frame.loc["B", "A"] == ""

    payload = PairwiseReport(results, [0, 1, 2], labels, extra={"seed": 0}).payload()
    assert [(p["arm_a"], p["arm_b"]) for p in payload["pairs"]] == [("A", "B"), ("A", "C"), ("B", "C")]
    assert payload["order"] == labels
    assert payload["seed"] == 0
    assert payload["method"] == ["exact"]


def test_cluster_labels_round_trip(tmp_path):
    path = tmp_path / "cov.csv"
    path.write_text("id,a,b\n1,x,p\n2,y,\n3,x,q\n", encoding="utf-8")
    frame, original, index, dropped = ingest_covariates(path, ["a", "b"])
    assert frame.n_units == 2
    assert dropped == 1
    out = tmp_path / "labelled.csv"
    write_labels_csv(out, original, index, [0, 1])
    labelled = pd.read_csv(out, dtype=str, keep_default_na=False)
    assert labelled["cluster"].tolist() == ["0", "", "1"]
    assert labelled["id"].tolist() == ["1", "2", "3"]
    with pytest.raises(ConfigError, match="already exists"):
        write_labels_csv(out, original, index, [0, 1], name="a")
