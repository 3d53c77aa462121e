import json

import numpy as np
import pandas as pd
import pytest

from condrand.errors import ConfigError, DomainError
from condrand.simulation import (
    MARKETING_ARM_SIZES,
    SimConfig,
    generate_science,
    rejection_rates,
    sweep,
    synthetic_marketing,
)


@pytest.fixture
def small_config():
    return SimConfig(
        n_units=20, n_treated=10, strata_sizes=(10, 10), replicates=30, n_draws=200, seed=4,
        tests=("unconditional:t_sd", "conditional:t_sd", "conditional:t_ps"),
    )


def test_config_aliases_and_grids():
    config = SimConfig.from_dict({"N": 20, "N_T": 10, "lambda": [0, 1], "fixed_balance": [5, 3], "draws": 50})
    assert config.strata_sizes == (10, 10)
    assert config.lam == (0.0, 1.0)
    assert config.tau == (0.0,)
    assert config.fixed_balance == ((5, 5), (3, 7))
    assert config.n_draws == 50
    assert len(config.points()) == 4


def test_config_full_fixed_vectors():
    config = SimConfig(n_units=9, n_treated=4, strata_sizes=(3, 3, 3), fixed_balance=[None, [2, 1, 1]])
    assert config.fixed_balance == (None, (2, 1, 1))


@pytest.mark.parametrize("data", [
    {"N": 20, "N_T": 10, "colour": "red"},
    {"N": 20, "N_T": 20},
    {"N": 20, "N_T": 10, "strata_sizes": [5, 5]},
    {"N": 20, "N_T": 10, "fixed_balance": [11]},
    {"N": 20, "N_T": 10, "tests": ["conditional:median"]},
    {"N": 20, "N_T": 10, "tau": "big"},
    {"N": 20, "N_T": 10, "alpha": 2},
    {"N": 20, "N_T": 10, "exact": "yes"},
])
def test_config_validation(data):
    with pytest.raises(ConfigError):
        SimConfig.from_dict(data)


def test_config_from_json(tmp_path):
    path = tmp_path / "sim.json"
    path.write_text(json.dumps({"N": 10, "N_T": 5, "replicates": 3}), encoding="utf-8")
    assert SimConfig.from_json(path).replicates == 3
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        SimConfig.from_json(path)
    with pytest.raises(ConfigError):
        SimConfig.from_json(tmp_path / "missing.json")


def test_generate_science(small_config):
    science = generate_science(small_config, 1, tau=2.5, lam=0.0)
    np.testing.assert_allclose(science.potential_outcomes[:, 1] - science.potential_outcomes[:, 0], 2.5)
    again = generate_science(small_config, 1, tau=2.5, lam=0.0)
    np.testing.assert_array_equal(science.potential_outcomes, again.potential_outcomes)
    assert science.covariates.column("x").levels == ("1", "2")


def test_generate_science_stratum_shift():
    config = SimConfig(n_units=20_000, n_treated=10_000, strata_sizes=(10_000, 10_000))
    y0 = generate_science(config, 0, lam=3.0).potential_outcomes[:, 0]
    strata = config.strata()
    assert y0[strata == 1].mean() - y0[strata == 0].mean() == pytest.approx(3.0, abs=0.1)


def test_rejection_rates_deterministic(small_config):
    a = rejection_rates(small_config, tau=0.5)
    b = rejection_rates(small_config, tau=0.5, n_jobs=2)
    assert [r.rate for r in a.rows] == [r.rate for r in b.rows]
    assert [r.test for r in a.rows] == list(small_config.tests)
    for row in a.rows:
        assert 0.0 <= row.rate <= 1.0
        assert row.se == pytest.approx(np.sqrt(row.rate * (1 - row.rate) / 30))


def test_rejection_rates_size_and_power():
    config = SimConfig(
        n_units=20, n_treated=10, strata_sizes=(10, 10), replicates=200, n_draws=200, seed=11,
        tests=("unconditional:t_sd", "conditional:t_sd", "conditional:t_ps"),
    )
    null = rejection_rates(config, tau=0.0, lam=1.0)
    for row in null.rows:
        assert row.rate < 0.12
    strong = rejection_rates(config, tau=3.0, lam=1.0)
    for row in strong.rows:
        assert row.rate > 0.8


def test_fixed_balance_replicates():
    config = SimConfig(
        n_units=20, n_treated=10, strata_sizes=(10, 10), replicates=20, n_draws=100,
        tests=("conditional:t_ps", "conditional:ols"), fixed_balance=[3],
    )
    result = rejection_rates(config)
    assert {r.fixed_nt1 for r in result.rows} == {3}


def test_sweep_frame(tmp_path):
    config = SimConfig(
        n_units=12, n_treated=6, strata_sizes=(6, 6), replicates=5, n_draws=50,
        tau=[0.0, 1.0], fixed_balance=[None, 2], tests=("unconditional:t_sd", "conditional:t_sd"),
    )
    result = sweep(config)
    frame = result.to_frame()
    assert list(frame.columns) == ["tau", "lambda", "fixed_NT1", "test", "rate", "se", "replicates"]
    assert len(frame) == 4 * len(config.tests)
    assert frame["fixed_NT1"].isna().sum() == 2 * len(config.tests)
    assert result.rate("conditional:t_sd", tau=1.0, fixed_nt1=2).fixed_nt1 == 2
    with pytest.raises(KeyError):
        result.rate("conditional:t_sd", tau=5.0)

    path = tmp_path / "rates.csv"
    result.to_csv(path)
    assert len(pd.read_csv(path)) == len(frame)


def test_synthetic_marketing_shape():
    obs = synthetic_marketing(seed=3)
    assert obs.n_units == 2256
    assert obs.n_arms == 11
    np.testing.assert_array_equal(obs.arm_sizes, MARKETING_ARM_SIZES)
    assert set(np.unique(obs.outcomes)) <= {1.0, 2.0, 3.0}
    assert obs.arm_levels[0] == "A" and obs.arm_levels[-1] == "K"
    assert obs.covariates.names == tuple(f"x{p}" for p in range(1, 9))
    again = synthetic_marketing(seed=3)
    np.testing.assert_array_equal(obs.assignment, again.assignment)
    np.testing.assert_array_equal(obs.outcomes, again.outcomes)


def test_synthetic_marketing_effects_length():
    with pytest.raises(DomainError):
        synthetic_marketing(arm_effects=[0.1, 0.2])


def test_exact_reference_for_small_experiments():
    config = SimConfig.from_dict({
        "N": 8, "N_T": 4, "strata_sizes": [4, 4], "replicates": 40, "draws": 1, "seed": 6, "exact": True,
        "tests": ["unconditional:t_sd", "conditional:t_sd"], "alpha": 0.2,
    })
    assert config.exact is True
    result = rejection_rates(config, tau=0.0, lam=1.0)
    # 全列挙ならドロー数は結果に影響しない
    again = rejection_rates(SimConfig(**{**config.__dict__, "n_draws": 500}), tau=0.0, lam=1.0)
    assert [r.rate for r in result.rows] == [r.rate for r in again.rows]
    for row in result.rows:
        assert 0.0 <= row.rate <= 0.5
