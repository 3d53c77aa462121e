#!/usr/bin/env python3

"""層別した2群実験のシミュレーション (棄却率曲線) と合成マーケティングデータ。"""

import itertools
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .balance import BalanceFunctionSpec
from .core import CovariateColumn, CovariateFrame, ObservedExperiment, ScienceTable, experiment_from_science
from .engine import Sidedness, conditional_test, unconditional_test, worker_count
from .errors import ConfigError, DomainError
from .sampler import AssignmentSpec, as_seed, draw
from .stats import StatisticSpec

logger = logging.getLogger(__name__)

STRATUM_COLUMN = "x"
CONDITIONINGS = ("unconditional", "conditional")
SIM_STATISTICS = ("t_sd", "t_ps", "t_res", "ols")
DEFAULT_TESTS = ("unconditional:t_sd", "unconditional:t_ps", "conditional:t_sd")

MARKETING_ARM_SIZES = (238, 266, 225, 231, 237, 226, 198, 135, 136, 136, 228)
MARKETING_LEVELS = (3, 2, 5, 5, 4, 11, 6, 2)

_KEYS = {
    "N": "n_units", "n_units": "n_units",
    "N_T": "n_treated", "n_treated": "n_treated",
    "strata_sizes": "strata_sizes",
    "tau": "tau",
    "lambda": "lam", "lam": "lam",
    "tests": "tests",
    "alpha": "alpha",
    "replicates": "replicates",
    "fixed_balance": "fixed_balance",
    "seed": "seed",
    "draws": "n_draws", "n_draws": "n_draws",
    "sidedness": "sidedness",
    "exact": "exact",
}


def _grid(value, name):
    values = value if isinstance(value, (list, tuple)) else [value]
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError):
        raise ConfigError(f"SimConfig '{name}' must be a number or a list of numbers") from None
    if not out:
        raise ConfigError(f"SimConfig '{name}' grid is empty")
    return out


def _parse_test(entry):
    conditioning, _, stat = str(entry).partition(":")
    if conditioning not in CONDITIONINGS or stat not in SIM_STATISTICS:
        raise ConfigError(
            f"Unknown simulation test '{entry}' (expected <{'|'.join(CONDITIONINGS)}>:<{'|'.join(SIM_STATISTICS)}>)"
        )
    return conditioning, stat


@dataclass(frozen=True)
class SimConfig:
    """シミュレーション設定。

    ``tau`` / ``lam`` / ``fixed_balance`` はグリッドで、``sweep`` が直積を走査します。
    ``fixed_balance`` の要素は層ごとの処置数ベクトル、または None (完全無作為化) です。
    ``exact`` を真にすると参照分布を全列挙します (小さい N での妥当性の確認用)。
    """
    n_units: int = 100
    n_treated: int = 50
    strata_sizes: tuple = (50, 50)
    tau: tuple = (0.0,)
    lam: tuple = (0.0,)
    tests: tuple = DEFAULT_TESTS
    alpha: float = 0.05
    replicates: int = 2000
    fixed_balance: tuple = (None,)
    seed: int = 0
    n_draws: int = 1000
    sidedness: str = "absolute"
    exact: bool = False

    def __post_init__(self):
        object.__setattr__(self, "strata_sizes", tuple(int(n) for n in self.strata_sizes))
        object.__setattr__(self, "tau", _grid(self.tau, "tau"))
        object.__setattr__(self, "lam", _grid(self.lam, "lambda"))
        object.__setattr__(self, "tests", tuple(self.tests))
        object.__setattr__(self, "fixed_balance", self._fixed_grid(self.fixed_balance))
        if sum(self.strata_sizes) != self.n_units or min(self.strata_sizes, default=0) < 1:
            raise ConfigError(f"Stratum sizes {self.strata_sizes} must be positive and sum to N={self.n_units}")
        if not 0 < self.n_treated < self.n_units:
            raise ConfigError(f"N_T={self.n_treated} must lie strictly between 0 and N={self.n_units}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.replicates < 1 or self.n_draws < 1:
            raise ConfigError("replicates and draws must be positive")
        for entry in self.tests:
            _parse_test(entry)
        Sidedness.parse(self.sidedness)
        if not isinstance(self.exact, bool):
            raise ConfigError(f"SimConfig 'exact' must be true or false, got {self.exact!r}")
        for fixed in self.fixed_balance:
            if fixed is None:
                continue
            if len(fixed) != len(self.strata_sizes):
                raise ConfigError(f"Fixed balance {fixed} needs one entry per stratum")
            if any(not 0 <= t <= n for t, n in zip(fixed, self.strata_sizes)) or sum(fixed) != self.n_treated:
                raise ConfigError(
                    f"Fixed balance {fixed} must lie within stratum sizes {self.strata_sizes} and sum to N_T={self.n_treated}"
                )

    def _fixed_grid(self, value):
        # 整数 (または整数のリスト) は2層の N_T1 を表す
        if value is None or isinstance(value, int):
            value = [value]
        out = []
        for entry in value:
            if entry is None:
                out.append(None)
            elif isinstance(entry, (list, tuple)):
                out.append(tuple(int(t) for t in entry))
            else:
                if len(self.strata_sizes) != 2:
                    raise ConfigError("A scalar fixed balance (N_T1) needs exactly two strata")
                out.append((int(entry), self.n_treated - int(entry)))
        return tuple(out)

    @classmethod
    def from_dict(cls, data):
        kwargs = {}
        for key, value in data.items():
            if key not in _KEYS:
                raise ConfigError(f"Unknown SimConfig key '{key}'")
            kwargs[_KEYS[key]] = value
        if "strata_sizes" not in kwargs and "n_units" in kwargs:
            n = int(kwargs["n_units"])
            kwargs["strata_sizes"] = (n - n // 2, n // 2)
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read simulation config {path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"Simulation config {path} must be a JSON object")
        return cls.from_dict(data)

    def points(self):
        """(tau, lambda, fixed_balance) のグリッド点を順に返します。"""
        return list(itertools.product(self.tau, self.lam, self.fixed_balance))

    def strata(self):
        return np.repeat(np.arange(len(self.strata_sizes)), self.strata_sizes)


@dataclass(frozen=True)
class SimRow:
    tau: float
    lam: float
    fixed_nt1: int | None
    test: str
    rate: float
    se: float
    replicates: int


@dataclass
class SimResult:
    """グリッド点と検定ごとの棄却率とモンテカルロ標準誤差。"""
    rows: list = field(default_factory=list)
    config: SimConfig | None = None

    def to_frame(self):
        return pd.DataFrame(
            [
                {
                    "tau": r.tau, "lambda": r.lam, "fixed_NT1": r.fixed_nt1, "test": r.test,
                    "rate": r.rate, "se": r.se, "replicates": r.replicates,
                }
                for r in self.rows
            ],
            columns=["tau", "lambda", "fixed_NT1", "test", "rate", "se", "replicates"],
        ).astype({"fixed_NT1": "Int64"})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def rate(self, test, tau=None, lam=None, fixed_nt1=None):
        """条件に合う1行の棄却率を返します。"""
        for r in self.rows:
            if r.test != test:
                continue
            if tau is not None and not math.isclose(r.tau, tau):
                continue
            if lam is not None and not math.isclose(r.lam, lam):
                continue
            if fixed_nt1 is not None and r.fixed_nt1 != fixed_nt1:
                continue
            return r
        raise KeyError((test, tau, lam, fixed_nt1))


def generate_science(config, seed, tau=None, lam=None):
    """潜在的結果を生成します。

    Y(0) ~ N(lambda * x, 1) (x は層番号 1..J)、Y(1) = Y(0) + tau。
    ``tau`` / ``lam`` を省略するとグリッドの先頭を使います。
    """
    tau = config.tau[0] if tau is None else float(tau)
    lam = config.lam[0] if lam is None else float(lam)
    strata = config.strata()
    rng = as_seed(seed).generator(0)
    y0 = rng.normal(lam * (strata + 1), 1.0)
    column = CovariateColumn(
        STRATUM_COLUMN, len(config.strata_sizes), strata, tuple(str(j + 1) for j in range(len(config.strata_sizes)))
    )
    return ScienceTable(np.column_stack([y0, y0 + tau]), CovariateFrame((column,)))


def _assignment_spec(config, fixed):
    if fixed is None:
        return AssignmentSpec.complete([config.n_units - config.n_treated, config.n_treated])
    counts = [[n - t, t] for n, t in zip(config.strata_sizes, fixed)]
    return AssignmentSpec.within_strata(config.strata(), counts)


def _replicate(config, tau, lam, fixed, seed, index):
    rseed = seed.derive(index)
    science = generate_science(config, rseed.derive(0), tau, lam)
    w = draw(_assignment_spec(config, fixed), rseed.derive(1), 0)
    obs = experiment_from_science(science, w)
    rejected = []
    for entry in config.tests:
        conditioning, stat = _parse_test(entry)
        spec = StatisticSpec(stat, column=None if stat == "t_sd" else STRATUM_COLUMN)
        kwargs = dict(
            sidedness=config.sidedness, seed=rseed.derive(2), n_draws=config.n_draws, exact=config.exact,
            alpha=config.alpha, n_jobs=1,
        )
        if conditioning == "conditional":
            result = conditional_test(obs, spec, BalanceFunctionSpec("strata", (STRATUM_COLUMN,)), **kwargs)
        else:
            result = unconditional_test(obs, spec, **kwargs)
        rejected.append(result.p_value <= config.alpha)
    return rejected


def rejection_rates(config, tau=None, lam=None, fixed=None, n_jobs=None):
    """1つのグリッド点で、各検定の棄却率を複製の平均として求めます。

    複製 r の科学表・割り付け・参照描画のシードは ``seed.derive(r)`` から導出するので、
    グリッド点間で同じ複製番号は同じ乱数を共有します。
    """
    tau = config.tau[0] if tau is None else float(tau)
    lam = config.lam[0] if lam is None else float(lam)
    fixed = config.fixed_balance[0] if fixed is None else tuple(fixed)
    seed = as_seed(config.seed)
    jobs = worker_count(n_jobs)
    if jobs == 1:
        outcomes = [_replicate(config, tau, lam, fixed, seed, r) for r in range(config.replicates)]
    else:
        outcomes = Parallel(n_jobs=jobs, prefer="threads")(
            delayed(_replicate)(config, tau, lam, fixed, seed, r) for r in range(config.replicates)
        )
    counts = np.asarray(outcomes, dtype=np.int64).sum(axis=0)
    rows = []
    for test, hits in zip(config.tests, counts):
        rate = hits / config.replicates
        rows.append(SimRow(
            tau=tau, lam=lam, fixed_nt1=None if fixed is None else fixed[0], test=test, rate=float(rate),
            se=math.sqrt(rate * (1 - rate) / config.replicates), replicates=config.replicates,
        ))
    logger.info(
        "tau=%g lambda=%g fixed=%s: %s", tau, lam, fixed, ", ".join(f"{r.test}={r.rate:.3f}" for r in rows)
    )
    return SimResult(rows, config)


def sweep(config, n_jobs=None):
    """設定のグリッド全体を走査します。"""
    result = SimResult([], config)
    points = config.points()
    for i, (tau, lam, fixed) in enumerate(points, 1):
        logger.info("grid point %d/%d", i, len(points))
        result.rows.extend(rejection_rates(config, tau, lam, fixed, n_jobs).rows)
    return result


def synthetic_marketing(seed=0, arm_sizes=MARKETING_ARM_SIZES, levels=MARKETING_LEVELS, arm_effects=None,
                        covariate_scale=0.4):
    """多群のマーケティング実験を模した合成データを作ります。

    8つのカテゴリカル共変量と3段階の順序結果を持ち、腕は完全無作為化で割り付けます。
    ``arm_effects`` を省略すると腕の効果はゼロ (シャープ帰無仮説が成立) です。

    Returns:
        ObservedExperiment: 腕ラベルは "A".."K" の順です。
    """
    n_arms = len(arm_sizes)
    if arm_effects is None:
        arm_effects = np.zeros(n_arms)
    arm_effects = np.asarray(arm_effects, dtype=np.float64)
    if arm_effects.shape != (n_arms,):
        raise DomainError(f"arm_effects needs {n_arms} entries, got {arm_effects.shape}")
    seed = as_seed(seed)
    rng = seed.derive(0).generator(0)
    n = int(sum(arm_sizes))
    columns = []
    latent = np.zeros(n)
    for p, n_levels in enumerate(levels, 1):
        codes = rng.integers(0, n_levels, size=n)
        effects = rng.normal(0.0, covariate_scale, size=n_levels)
        latent += effects[codes]
        columns.append(CovariateColumn(f"x{p}", n_levels, codes))
    w = draw(AssignmentSpec.complete(arm_sizes), seed.derive(1), 0)
    latent += arm_effects[w] + rng.logistic(size=n)
    outcomes = np.digitize(latent, [-1.0, 1.0]) + 1
    labels = [chr(ord("A") + k) for k in range(n_arms)]
    return ObservedExperiment(
        w, outcomes.astype(np.float64), CovariateFrame(tuple(columns)), n_arms, {"arm_levels": labels},
    )
