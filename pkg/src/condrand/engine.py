#!/usr/bin/env python3

"""無条件・条件付き無作為化検定の実行、p値の計算、omnibus/ペアワイズ検定。"""

import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from joblib import Parallel, delayed

from .balance import BalanceFunctionSpec, partition_size
from .errors import DomainError, StatisticError
from .sampler import (
    BLOCK_SIZE,
    DEFAULT_DRAWS,
    DEFAULT_ENUMERATION_CAP,
    DEFAULT_MAX_TRIES,
    AssignmentSpec,
    as_seed,
    draw_batch,
    enumerate_assignments,
    rejection_batch,
)
from .stats import StatisticSpec

logger = logging.getLogger(__name__)

# 同値判定の許容誤差 (参照分布内の観測統計量を必ず「同じか極端」と数える)
TIE_RTOL = 1e-9
TIE_ATOL = 1e-12

THREADS_ENV = "CONDRAND_THREADS"


class Sidedness(str, Enum):
    ABSOLUTE = "absolute"
    DOUBLED = "doubled"
    GREATER = "greater"
    LESS = "less"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).lower()
        if key == "doubled_one_sided":
            key = "doubled"
        try:
            return cls(key)
        except ValueError:
            raise DomainError(f"Unknown sidedness '{value}' (expected absolute, doubled, greater or less)") from None


def worker_count(n_jobs=None):
    """並列ワーカー数を返します。CONDRAND_THREADS が上限になります。"""
    cap = os.environ.get(THREADS_ENV)
    n = 1 if n_jobs is None else int(n_jobs)
    if cap:
        try:
            limit = max(int(cap), 1)
        except ValueError:
            raise DomainError(f"{THREADS_ENV} must be an integer, got '{cap}'") from None
        n = limit if n_jobs is None else min(n, limit)
    return max(n, 1)


def _tail_hits(reference, t_obs, sidedness, erratum_doubling=False):
    """裾の件数と倍率を返します。p = min(1, 倍率 * 件数 / 参照数)。"""
    ref = np.asarray(reference, dtype=np.float64)
    if ref.size == 0:
        raise DomainError("Reference distribution is empty")
    sidedness = Sidedness.parse(sidedness)
    if erratum_doubling and sidedness is not Sidedness.DOUBLED:
        raise DomainError("Erratum doubling applies to doubled sidedness only")

    def at_least(values, bound):
        return int(np.count_nonzero(values >= bound - (TIE_ATOL + TIE_RTOL * abs(bound))))

    def at_most(values, bound):
        return int(np.count_nonzero(values <= bound + (TIE_ATOL + TIE_RTOL * abs(bound))))

    match sidedness:
        case Sidedness.ABSOLUTE:
            return at_least(np.abs(ref), abs(t_obs)), 1
        case Sidedness.GREATER:
            return at_least(ref, t_obs), 1
        case Sidedness.LESS:
            return at_most(ref, t_obs), 1
        case Sidedness.DOUBLED:
            if erratum_doubling:
                return at_least(ref, t_obs), 2
            return min(at_least(ref, t_obs), at_most(ref, t_obs)), 2


def p_value(reference, t_obs, sidedness=Sidedness.ABSOLUTE, include_observed=False, erratum_doubling=False):
    """参照分布から p 値を計算します。

    Args:
        reference (sequence[float]): 参照分布の統計量。
        t_obs (float): 観測統計量。
        sidedness: ``absolute`` / ``doubled`` / ``greater`` / ``less``。
        include_observed (bool): モンテカルロ推定 (1 + hits) / (1 + M) を使う場合 True。
            厳密列挙では観測割り付けが参照集合に含まれるので False。
        erratum_doubling (bool): doubled で上側比率の2倍 (上限1) を使う場合 True。

    Returns:
        float: p 値。
    """
    hits, factor = _tail_hits(reference, t_obs, sidedness, erratum_doubling)
    m = len(reference)
    if include_observed:
        return min(1.0, factor * (hits + 1) / (m + 1))
    return min(1.0, factor * hits / m)


def _critical_value(reference, sidedness, alpha):
    ref = np.asarray(reference, dtype=np.float64)
    match Sidedness.parse(sidedness):
        case Sidedness.ABSOLUTE:
            return float(np.quantile(np.abs(ref), 1 - alpha))
        case Sidedness.GREATER:
            return float(np.quantile(ref, 1 - alpha))
        case Sidedness.LESS:
            return float(np.quantile(ref, alpha))
        case Sidedness.DOUBLED:
            return float(np.quantile(ref, 1 - alpha / 2))


@dataclass
class TestResult:
    """無作為化検定の結果。"""
    __test__ = False

    t_obs: float
    p_value: float
    sidedness: str
    method: str
    reference_size: int
    small_partition_warning: bool
    seed: int
    alpha: float
    hits: int
    statistic: str
    balance: str | None = None
    n_draws: int | None = None
    partition_size: int | None = None
    erratum_doubling: bool = False
    critical_value: float | None = None
    reference_values: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def is_exact(self):
        return self.method == "exact"

    def rejects(self, alpha=None):
        return self.p_value <= (self.alpha if alpha is None else alpha)

    def to_dict(self, include_reference=False):
        out = {
            "t_obs": self.t_obs,
            "p_value": self.p_value,
            "sidedness": self.sidedness,
            "erratum_doubling": self.erratum_doubling,
            "method": self.method,
            "n_draws": self.n_draws,
            "reference_size": self.reference_size,
            "partition_size": self.partition_size,
            "small_partition_warning": self.small_partition_warning,
            "hits": self.hits,
            "seed": self.seed,
            "alpha": self.alpha,
            "statistic": self.statistic,
            "balance": self.balance,
            "critical_value": self.critical_value,
            "metadata": self.metadata,
        }
        if include_reference and self.reference_values is not None:
            out["reference_values"] = self.reference_values.tolist()
        return out


class _DirectReference:
    """割り付け仕様から直接描画・列挙する参照集合。"""

    def __init__(self, spec):
        self.spec = spec
        self.size = spec.support_size()
        self.enumerable_size = self.size

    def exact(self, cap):
        return enumerate_assignments(self.spec, cap)

    def monte_carlo(self, seed, n_draws):
        # (開始番号, ブロック取得関数) の列
        return [
            (start, lambda s=start: draw_batch(self.spec, seed, s, min(s + BLOCK_SIZE, n_draws)))
            for start in range(0, n_draws, BLOCK_SIZE)
        ]


class _RejectionReference:
    """基底仕様から棄却法で S_ref を作る参照集合 (周辺バランス用)。"""

    def __init__(self, base, balance, target, size, max_tries):
        self.base = base
        self.balance = balance
        self.target = target
        self.size = size
        self.enumerable_size = base.support_size()
        self.max_tries = max_tries

    def exact(self, cap):
        candidates = enumerate_assignments(self.base, cap)
        keep = np.all(self.balance.batch(candidates) == np.asarray(self.target.values), axis=1)
        return candidates[keep]

    def monte_carlo(self, seed, n_draws):
        draws, tries = rejection_batch(self.base, self.balance, self.target, seed, n_draws, self.max_tries)
        logger.info("rejection sampler acceptance rate %.4f (%d/%d)", n_draws / tries, n_draws, tries)
        return [
            (start, lambda s=start: draws[s:s + BLOCK_SIZE])
            for start in range(0, n_draws, BLOCK_SIZE)
        ]


def _evaluate_chunk(bound, start, fetch):
    w = fetch()
    try:
        return bound.batch(w)
    except StatisticError as e:
        index = start + (e.row or 0)
        raise StatisticError(f"{e} (reference draw {index})", row=index) from e


def _evaluate(bound, chunks, n_jobs):
    jobs = worker_count(n_jobs)
    if jobs == 1 or len(chunks) == 1:
        parts = [_evaluate_chunk(bound, start, fetch) for start, fetch in chunks]
    else:
        parts = Parallel(n_jobs=jobs, prefer="threads")(
            delayed(_evaluate_chunk)(bound, start, fetch) for start, fetch in chunks
        )
    return np.concatenate(parts) if parts else np.empty(0)


def _as_statistic(statistic):
    if isinstance(statistic, StatisticSpec):
        return statistic
    from .specparse import parse_statistic
    return parse_statistic(str(statistic))


def _as_balance(balance):
    if balance is None:
        return BalanceFunctionSpec("none")
    if isinstance(balance, BalanceFunctionSpec):
        return balance
    from .specparse import parse_balance
    return parse_balance(str(balance))


def _run(obs, statistic, reference, *, sidedness, seed, n_draws, exact, exact_cap, alpha,
         erratum_doubling, keep_reference, n_jobs, balance=None, metadata=None):
    sidedness = Sidedness.parse(sidedness)
    seed = as_seed(seed)
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if erratum_doubling and sidedness is not Sidedness.DOUBLED:
        raise DomainError("Erratum doubling applies to doubled sidedness only")
    bound = statistic.bind(obs)
    t_obs = bound()

    enumerable = reference.enumerable_size <= exact_cap
    if exact is None:
        use_exact = enumerable
    elif exact:
        use_exact = True
    else:
        use_exact = False

    if use_exact:
        assignments = reference.exact(exact_cap)
        chunk = BLOCK_SIZE * 4
        chunks = [
            (start, lambda s=start: assignments[s:s + chunk]) for start in range(0, assignments.shape[0], chunk)
        ]
        values = _evaluate(bound, chunks, n_jobs)
        method, draws, include_observed = "exact", None, False
    else:
        if n_draws < 1:
            raise DomainError(f"n_draws must be positive, got {n_draws}")
        logger.info("Monte Carlo reference with %d draws (support %s)", n_draws, reference.size)
        values = _evaluate(bound, reference.monte_carlo(seed, n_draws), n_jobs)
        method, draws, include_observed = "monte_carlo", n_draws, True

    hits, _ = _tail_hits(values, t_obs, sidedness, erratum_doubling)
    p = p_value(values, t_obs, sidedness, include_observed, erratum_doubling)
    size = reference.size if reference.size is not None else values.size
    warning = size < math.ceil(1 / alpha)
    if warning:
        logger.warning(
            "Reference set has %d assignments, fewer than 1/alpha = %d; the test cannot reject at alpha=%g",
            size, math.ceil(1 / alpha), alpha,
        )
    meta = dict(metadata or {})
    if getattr(bound, "degenerate", False):
        meta["degenerate_statistic"] = True
    return TestResult(
        t_obs=float(t_obs),
        p_value=float(p),
        sidedness=sidedness.value,
        method=method,
        reference_size=int(values.size),
        small_partition_warning=bool(warning),
        seed=seed.master_seed,
        alpha=alpha,
        hits=hits,
        statistic=statistic.describe(),
        balance=balance,
        n_draws=draws,
        partition_size=reference.size,
        erratum_doubling=erratum_doubling,
        critical_value=_critical_value(values, sidedness, alpha),
        reference_values=values if keep_reference else None,
        metadata=meta,
    )


def unconditional_test(obs, statistic, assignment_spec=None, sidedness=Sidedness.ABSOLUTE, seed=0,
                       n_draws=DEFAULT_DRAWS, exact=None, exact_cap=DEFAULT_ENUMERATION_CAP, alpha=0.05,
                       erratum_doubling=False, keep_reference=False, n_jobs=None):
    """無条件無作為化検定。

    参照集合は割り付けメカニズムの台 S 全体です (省略時は観測された腕の大きさの完全無作為化)。
    台が exact_cap 以下なら厳密に列挙し、そうでなければ n_draws 回のモンテカルロ描画を使います。

    Raises:
        DesignError: 観測割り付けが台に含まれない場合。
    """
    spec = assignment_spec or AssignmentSpec.complete(obs.arm_sizes)
    spec.require(obs.assignment)
    return _run(
        obs, _as_statistic(statistic), _DirectReference(spec), sidedness=sidedness, seed=seed,
        n_draws=n_draws, exact=exact, exact_cap=exact_cap, alpha=alpha, erratum_doubling=erratum_doubling,
        keep_reference=keep_reference, n_jobs=n_jobs, metadata={"design": spec.kind},
    )


def conditional_test(obs, statistic, balance_spec, sidedness=Sidedness.ABSOLUTE, seed=0,
                     n_draws=DEFAULT_DRAWS, exact=None, exact_cap=DEFAULT_ENUMERATION_CAP, alpha=0.05,
                     erratum_doubling=False, keep_reference=False, n_jobs=None, assignment_spec=None,
                     max_tries=DEFAULT_MAX_TRIES):
    """条件付き無作為化検定。

    観測バランス b = B(w, X) を計算し、参照集合を S_ref(w) = {w' : B(w', X) = b} に制限します。
    層別型バランスは層内無作為化として直接描画し、周辺型は棄却法を使います。
    """
    balance_spec = _as_balance(balance_spec)
    base = assignment_spec or AssignmentSpec.complete(obs.arm_sizes)
    base.require(obs.assignment)
    bound_balance = balance_spec.bind(obs.covariates, obs.n_arms, obs.n_units)
    observed = bound_balance(obs.assignment)
    metadata = {"design": base.kind}
    if len(observed.values) <= 1000:
        metadata["balance_value"] = list(observed.values)

    if balance_spec.is_stratification:
        strata, n_strata = bound_balance.strata, bound_balance.n_strata
        if base.kind != "complete":
            # 層別デザインとバランスの層の直積で条件付ける
            strata = base.strata * n_strata + strata
            n_strata = base.n_strata * n_strata
        spec = AssignmentSpec.from_assignment(obs.assignment, obs.n_arms, strata, n_strata)
        reference = _DirectReference(spec)
    else:
        size = None
        if base.kind == "complete":
            size = partition_size(balance_spec, obs.covariates, observed, n_treated=int(obs.arm_sizes[1]))
        reference = _RejectionReference(base, bound_balance, observed, size, max_tries)

    return _run(
        obs, _as_statistic(statistic), reference, sidedness=sidedness, seed=seed, n_draws=n_draws,
        exact=exact, exact_cap=exact_cap, alpha=alpha, erratum_doubling=erratum_doubling,
        keep_reference=keep_reference, n_jobs=n_jobs, balance=balance_spec.describe(), metadata=metadata,
    )


def omnibus_test(obs, balance_spec=None, use_ranks=True, sidedness=Sidedness.GREATER, **kwargs):
    """全ての腕の潜在的結果が等しいというシャープ帰無仮説の Kruskal-Wallis 検定。

    統計量が大きいほど腕の違いを示すので、既定は上側片側です。
    ``balance_spec`` を与えると条件付き検定になります。
    """
    statistic = StatisticSpec("kruskal_wallis", use_ranks=use_ranks)
    if balance_spec is None:
        return unconditional_test(obs, statistic, sidedness=sidedness, **kwargs)
    return conditional_test(obs, statistic, balance_spec, sidedness=sidedness, **kwargs)


def pair_test(obs, arm_a, arm_b, statistic=None, balance_spec=None, sidedness=Sidedness.ABSOLUTE, **kwargs):
    """腕 a と b に割り付けられたユニットだけを使う2群検定。

    部分集合では腕 a を 1、腕 b を 0 に振り直します。既定の統計量は平均順位の差です。
    条件付きの場合、バランスは部分集合のユニットで計算し直します。
    """
    sub = obs.subset([arm_b, arm_a])
    statistic = StatisticSpec("mean_rank", arms=(1, 0)) if statistic is None else _as_statistic(statistic)
    if balance_spec is None:
        result = unconditional_test(sub, statistic, sidedness=sidedness, **kwargs)
    else:
        result = conditional_test(sub, statistic, balance_spec, sidedness=sidedness, **kwargs)
        result.metadata["balance_recomputed_on_subset"] = True
    result.metadata["pair"] = [obs.arm_levels[arm_a], obs.arm_levels[arm_b]]
    return result


def arm_order(obs, order=None):
    """腕の並び順。``order="mean"`` なら観測平均の降順 (同値は番号順)。"""
    arms = list(range(obs.n_arms))
    if order is None:
        return arms
    if order == "mean":
        sizes = obs.arm_sizes
        sums = np.bincount(obs.assignment, weights=obs.outcomes, minlength=obs.n_arms)
        means = np.divide(sums, sizes, out=np.full(obs.n_arms, -np.inf), where=sizes > 0)
        return sorted(arms, key=lambda k: (-means[k], k))
    raise DomainError(f"Unknown arm order '{order}' (expected 'mean')")


def pairwise_tests(obs, statistic=None, balance_spec=None, sidedness=Sidedness.ABSOLUTE, seed=0, order=None,
                   **kwargs):
    """全ての腕のペアについて検定します (多重性の調整はしません)。

    Returns:
        dict: {(a, b): TestResult}。並び順で a が b より前のペアだけを含みます。
    """
    if obs.n_arms < 2:
        raise DomainError("Pairwise tests need at least two arms")
    seed = as_seed(seed)
    arms = arm_order(obs, order)
    results = {}
    for i, a in enumerate(arms):
        for b in arms[i + 1:]:
            pair_seed = seed.derive(min(a, b), max(a, b))
            results[(a, b)] = pair_test(
                obs, a, b, statistic=statistic, balance_spec=balance_spec, sidedness=sidedness,
                seed=pair_seed, **kwargs,
            )
    logger.info("ran %d pairwise tests", len(results))
    return results
