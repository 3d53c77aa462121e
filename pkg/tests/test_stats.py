import numpy as np
import pytest

from condrand.engine import conditional_test
from condrand.errors import DomainError, StatisticError
from condrand.erratum import TABLE
from condrand.stats import (
    StatisticSpec,
    kruskal_wallis,
    mean_rank_difference,
    midranks,
    monotone_t_ps,
    ols_coefficient,
    t_ps,
    t_res,
    t_sd,
)


def test_erratum_observed_values(erratum_obs):
    assert round(t_sd(erratum_obs), 3) == 0.435
    assert round(t_ps(erratum_obs, "x"), 3) == 0.344
    assert t_res(erratum_obs, "x") == pytest.approx(0.286111, abs=1e-6)


@pytest.mark.parametrize("w,sd,ps", TABLE)
def test_erratum_table(erratum_obs, w, sd, ps):
    obs = erratum_obs.with_assignment(w)
    assert round(t_sd(obs), 3) == sd
    assert round(t_ps(obs, "x"), 3) == ps


def test_batch_matches_single(erratum_obs):
    rows = np.array([w for w, _, _ in TABLE])
    for spec in (StatisticSpec("t_sd"), StatisticSpec("t_ps", "x"), StatisticSpec("t_res", "x")):
        bound = spec.bind(erratum_obs)
        np.testing.assert_allclose(bound.batch(rows), [bound(r) for r in rows])


def test_midranks():
    np.testing.assert_array_equal(midranks([1.0, 2.0, 2.0, 3.0]), [1.0, 2.5, 2.5, 4.0])


def test_kruskal_wallis_hand_value(make_obs):
    obs = make_obs([0, 0, 1, 1], [1.0, 2.0, 3.0, 4.0])
    assert kruskal_wallis(obs, use_ranks=False) == pytest.approx(2.4)
    assert kruskal_wallis(obs) == pytest.approx(2.4)


def test_kruskal_wallis_constant_outcomes(make_obs):
    obs = make_obs([0, 1, 2, 1], [3.0, 3.0, 3.0, 3.0], n_arms=3)
    bound = StatisticSpec("kruskal_wallis").bind(obs)
    assert bound.degenerate
    assert bound() == 0.0


def test_mean_rank_difference(make_obs):
    obs = make_obs([0, 0, 1, 1], [1.0, 2.0, 3.0, 4.0])
    assert mean_rank_difference(obs, 1, 0) == pytest.approx(2.0)
    assert mean_rank_difference(obs, 0, 1) == pytest.approx(-2.0)


def test_mean_rank_identical_outcomes_is_zero(make_obs):
    obs = make_obs([0, 1, 2, 0, 1, 2], [5.0] * 6, n_arms=3)
    assert mean_rank_difference(obs, 2, 0) == 0.0


def test_mean_rank_ranks_within_pair(make_obs):
    # 腕2のユニットは順位付けに含めない
    obs = make_obs([0, 1, 2, 0, 1], [1.0, 3.0, 100.0, 2.0, 4.0], n_arms=3)
    assert mean_rank_difference(obs, 1, 0) == pytest.approx(2.0)


@pytest.mark.parametrize("seed", range(5))
def test_mean_rank_antisymmetric(make_obs, seed):
    rng = np.random.default_rng(seed)
    w = np.concatenate([[0, 1, 2], rng.integers(0, 3, 9)])
    obs = make_obs(w, rng.normal(size=12), n_arms=3)
    assert mean_rank_difference(obs, 2, 1) == pytest.approx(-mean_rank_difference(obs, 1, 2))


def test_t_ps_missing_control_names_stratum(erratum_obs):
    obs = erratum_obs.with_assignment([1, 1, 1, 1, 0])
    with pytest.raises(StatisticError, match="x=1"):
        t_ps(obs, "x")


def test_t_ps_drop_empty_strata(erratum_obs):
    obs = erratum_obs.with_assignment([1, 1, 1, 1, 0])
    assert t_ps(obs, "x", drop_empty_strata=True) == pytest.approx(-0.7)


def test_t_ps_single_stratum_equals_t_sd(make_obs):
    obs = make_obs([1, 0, 0, 1, 1, 0], [0.3, 1.2, -0.4, 2.2, 0.9, 0.1], s=[0] * 6)
    assert t_ps(obs, "s") == pytest.approx(t_sd(obs))


def test_t_sd_empty_arm(make_obs):
    with pytest.raises(StatisticError, match="empty"):
        t_sd(make_obs([0, 0, 0], [1.0, 2.0, 3.0], n_arms=2))


def test_two_arm_statistics_reject_more_arms(make_obs):
    obs = make_obs([0, 1, 2], [1.0, 2.0, 3.0], s=[0, 0, 0])
    with pytest.raises(DomainError, match="subset"):
        t_ps(obs, "s")


@pytest.mark.parametrize("shift,scale", [(0.0, 2.0), (10.0, 1.0), (-3.5, 0.25)])
def test_location_scale(make_obs, shift, scale):
    rng = np.random.default_rng(7)
    w = np.array([1, 0, 1, 0, 1, 0, 1, 0])
    s = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    y = rng.normal(size=8)
    base = make_obs(w, y, s=s)
    moved = make_obs(w, shift + scale * y, s=s)
    assert t_sd(moved) == pytest.approx(scale * t_sd(base))
    assert t_ps(moved, "s") == pytest.approx(scale * t_ps(base, "s"))
    assert t_res(moved, "s") == pytest.approx(scale * t_res(base, "s"))
    assert kruskal_wallis(moved) == pytest.approx(kruskal_wallis(base))
    assert kruskal_wallis(moved, use_ranks=False) == pytest.approx(kruskal_wallis(base, use_ranks=False))


def _lstsq_oracle(w, y, s, n_levels):
    z = np.column_stack([(s == j).astype(float) for j in range(1, n_levels)])
    zc = z - z.mean(axis=0)
    x = np.column_stack([np.ones_like(y), w.astype(float), z, w[:, None] * zc])
    return np.linalg.lstsq(x, y, rcond=None)[0][1]


@pytest.mark.parametrize("seed", range(200))
def test_ols_coefficient_equals_t_ps(make_obs, seed):
    rng = np.random.default_rng(seed)
    n_levels = int(rng.integers(2, 5))
    sizes = rng.integers(2, 7, n_levels)
    s = np.repeat(np.arange(n_levels), sizes)
    # 各層に両方の腕が必ず現れる
    w = np.concatenate([rng.permutation(np.r_[0, 1, rng.integers(0, 2, k - 2)]) for k in sizes])
    y = rng.normal(loc=s, size=s.size)
    obs = make_obs(w, y, s=s)
    coef = ols_coefficient(obs, "s")
    assert coef == pytest.approx(_lstsq_oracle(w, y, s, n_levels), abs=1e-9)
    assert coef == pytest.approx(t_ps(obs, "s"), abs=1e-9)


def test_ols_rank_deficient(erratum_obs):
    with pytest.raises(StatisticError, match="rank deficient"):
        ols_coefficient(erratum_obs.with_assignment([1, 1, 1, 1, 0]), "x")


@pytest.mark.parametrize("seed", range(20))
def test_monotone_map(make_obs, seed):
    rng = np.random.default_rng(seed)
    half = 6
    s = np.repeat([0, 1], half)
    n_t1 = int(rng.integers(1, half))
    w = np.concatenate([rng.permutation(np.repeat([1, 0], [n_t1, half - n_t1])),
                        rng.permutation(np.repeat([1, 0], [half - n_t1, n_t1]))])
    y = rng.normal(size=2 * half)
    obs = make_obs(w, y, s=s)
    got = monotone_t_ps(t_sd(obs), y, s, (n_t1, half - n_t1))
    assert got == pytest.approx(t_ps(obs, "s"), abs=1e-10)


def test_monotone_map_preconditions():
    with pytest.raises(DomainError):
        monotone_t_ps(0.0, [1.0, 2.0, 3.0], [0, 0, 1], (1, 0))
    with pytest.raises(DomainError):
        monotone_t_ps(0.0, [1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1], (0, 2))


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("sidedness", ["greater", "less", "doubled"])
def test_monotone_map_gives_same_conditional_p_value(make_obs, seed, sidedness):
    rng = np.random.default_rng(100 + seed)
    half = 5
    s = np.repeat([0, 1], half)
    n_t1 = int(rng.integers(1, half))
    w = np.concatenate([rng.permutation(np.repeat([1, 0], [n_t1, half - n_t1])),
                        rng.permutation(np.repeat([1, 0], [half - n_t1, n_t1]))])
    obs = make_obs(w, rng.normal(size=2 * half), s=s)
    by_sd = conditional_test(obs, "t_sd", "strata(s)", sidedness=sidedness)
    by_ps = conditional_test(obs, "t_ps(s)", "strata(s)", sidedness=sidedness)
    assert by_sd.method == by_ps.method == "exact"
    assert by_sd.hits == by_ps.hits
    assert by_sd.p_value == by_ps.p_value


@pytest.mark.parametrize("spec,text", [
    (StatisticSpec("t_ps", "x"), "t_ps(x)"),
    (StatisticSpec("kruskal_wallis", use_ranks=False), "kruskal_wallis(raw)"),
    (StatisticSpec("mean_rank"), "mean_rank(1, 0)"),
    (StatisticSpec("t_sd"), "t_sd"),
])
def test_describe(spec, text):
    assert spec.describe() == text


@pytest.mark.parametrize("kwargs", [{"kind": "median"}, {"kind": "t_ps"}, {"kind": "mean_rank", "arms": (1, 1)}])
def test_spec_validation(kwargs):
    with pytest.raises(DomainError):
        StatisticSpec(**kwargs)
