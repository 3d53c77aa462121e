#!/usr/bin/env python3

"""検定統計量 t(W, Y_obs, X)。

全ての統計量は ``StatisticSpec.bind(obs)`` で観測データに束縛され、
単一の割り付け、または割り付けの行列 (B×N) を評価します。
シャープ帰無仮説の下では y_obs が固定なので、層コード・残差・順位は束縛時に一度だけ計算します。
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.stats import rankdata

from .errors import DomainError, StatisticError

KINDS = ("t_sd", "t_ps", "t_res", "kruskal_wallis", "mean_rank", "ols")
_NEEDS_COLUMN = ("t_ps", "t_res", "ols")


def midranks(values):
    """同順位を平均順位で解決した順位を返します。"""
    return rankdata(np.asarray(values, dtype=np.float64), method="average")


@dataclass(frozen=True)
class StatisticSpec:
    """検定統計量の宣言。

    Attributes:
        kind (str): ``t_sd`` / ``t_ps`` / ``t_res`` / ``kruskal_wallis`` / ``mean_rank`` / ``ols``。
        column (str | None): 層を与える共変量列 (t_ps, t_res, ols)。
        use_ranks (bool): Kruskal-Wallis で順位を使う場合 True、観測値を直接使う場合 False。
        arms (tuple[int, int] | None): mean_rank の腕の組 (a, b)。
        drop_empty_strata (bool): t_ps で片方の腕が欠けた層を加重和から除く場合 True。
    """
    kind: str = "t_sd"
    column: str | None = None
    use_ranks: bool = True
    arms: tuple | None = None
    drop_empty_strata: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"Unknown statistic '{self.kind}' (expected one of {', '.join(KINDS)})")
        if self.kind in _NEEDS_COLUMN and not self.column:
            raise DomainError(f"Statistic '{self.kind}' needs a stratum column")
        if self.kind == "mean_rank":
            arms = (1, 0) if self.arms is None else tuple(int(a) for a in self.arms)
            if len(arms) != 2 or arms[0] == arms[1]:
                raise DomainError(f"mean_rank needs two distinct arms, got {self.arms}")
            object.__setattr__(self, "arms", arms)

    def describe(self):
        if self.kind == "kruskal_wallis":
            return "kruskal_wallis" if self.use_ranks else "kruskal_wallis(raw)"
        if self.kind == "mean_rank":
            return f"mean_rank({self.arms[0]}, {self.arms[1]})"
        return f"{self.kind}({self.column})" if self.column else self.kind

    def to_dict(self):
        out = {"kind": self.kind}
        if self.column:
            out["column"] = self.column
        if self.kind == "kruskal_wallis":
            out["use_ranks"] = self.use_ranks
        if self.kind == "mean_rank":
            out["arms"] = list(self.arms)
        if self.drop_empty_strata:
            out["drop_empty_strata"] = True
        return out

    def bind(self, obs):
        """観測データに束縛した評価器を返します。"""
        match self.kind:
            case "t_sd":
                return _SimpleDifference(obs)
            case "t_ps":
                return _PostStratified(obs, self.column, self.drop_empty_strata)
            case "t_res":
                return _ResidualDifference(obs, self.column)
            case "kruskal_wallis":
                return _KruskalWallis(obs, self.use_ranks)
            case "mean_rank":
                return _MeanRankDifference(obs, *self.arms)
            case "ols":
                return _OlsCoefficient(obs, self.column)


class BoundStatistic:
    """観測データに束縛された統計量の基底クラス。"""
    degenerate = False

    def __init__(self, obs):
        self.obs = obs
        self.n_arms = obs.n_arms

    def batch(self, assignments):
        raise NotImplementedError

    def __call__(self, assignment=None):
        """単一の割り付け (省略時は観測割り付け) の値を返します。"""
        w = self.obs.assignment if assignment is None else assignment
        try:
            return float(self.batch(np.atleast_2d(np.asarray(w, dtype=np.int64)))[0])
        except StatisticError as e:
            raise StatisticError(str(e)) from None

    def _check_width(self, w):
        if w.shape[1] != self.obs.n_units:
            raise DomainError(f"Assignment length {w.shape[1]} does not match n_units {self.obs.n_units}")


def _require_two_arms(obs, name):
    if obs.n_arms != 2:
        raise DomainError(f"Statistic '{name}' compares two arms; the experiment has {obs.n_arms} (subset it first)")


def _arm_means(w, values, arm):
    """各行について腕 ``arm`` の平均を計算します。空の腕は StatisticError。"""
    mask = (w == arm).astype(np.float64)
    n = mask.sum(axis=1)
    empty = np.flatnonzero(n == 0)
    if empty.size:
        raise StatisticError(f"Arm {arm} is empty", row=int(empty[0]))
    return (mask @ values) / n


def _stratum_codes(obs, column):
    col = obs.covariates.column(column)
    return col.codes, col.n_levels, col.levels


class _SimpleDifference(BoundStatistic):
    def __init__(self, obs):
        super().__init__(obs)
        _require_two_arms(obs, "t_sd")
        self.values = obs.outcomes

    def batch(self, assignments):
        w = np.atleast_2d(assignments)
        self._check_width(w)
        return _arm_means(w, self.values, 1) - _arm_means(w, self.values, 0)


class _ResidualDifference(_SimpleDifference):
    """層内平均を引いた残差 e_i = y_i - f(X_i) の単純差。"""

    def __init__(self, obs, column):
        BoundStatistic.__init__(self, obs)
        _require_two_arms(obs, "t_res")
        codes, n_levels, _ = _stratum_codes(obs, column)
        sums = np.bincount(codes, weights=obs.outcomes, minlength=n_levels)
        sizes = np.bincount(codes, minlength=n_levels)
        means = np.divide(sums, sizes, out=np.zeros(n_levels), where=sizes > 0)
        self.values = obs.outcomes - means[codes]


class _PostStratified(BoundStatistic):
    def __init__(self, obs, column, drop_empty_strata=False):
        super().__init__(obs)
        _require_two_arms(obs, "t_ps")
        codes, n_levels, self.levels = _stratum_codes(obs, column)
        self.column = column
        self.drop_empty_strata = drop_empty_strata
        self.y = obs.outcomes
        self.strata = [np.flatnonzero(codes == j) for j in range(n_levels)]
        self.strata = [(j, u) for j, u in enumerate(self.strata) if u.size]

    def batch(self, assignments):
        w = np.atleast_2d(assignments)
        self._check_width(w)
        total = np.zeros(w.shape[0])
        weight = np.zeros(w.shape[0])
        for j, units in self.strata:
            wj = w[:, units]
            yj = self.y[units]
            t = (wj == 1).astype(np.float64)
            c = (wj == 0).astype(np.float64)
            nt, nc = t.sum(axis=1), c.sum(axis=1)
            ok = (nt > 0) & (nc > 0)
            if not ok.all() and not self.drop_empty_strata:
                row = int(np.flatnonzero(~ok)[0])
                side = "treated" if nt[row] == 0 else "control"
                raise StatisticError(
                    f"Stratum '{self.column}={self.levels[j]}' has no {side} units", row=row
                )
            diff = np.divide(t @ yj, nt, out=np.zeros_like(nt), where=ok) - np.divide(
                c @ yj, nc, out=np.zeros_like(nc), where=ok
            )
            total += np.where(ok, units.size * diff, 0.0)
            weight += np.where(ok, units.size, 0)
        if (weight == 0).any():
            raise StatisticError("No stratum contains both arms", row=int(np.flatnonzero(weight == 0)[0]))
        # 除外した層がなければ weight は N に等しい
        return total / weight


class _KruskalWallis(BoundStatistic):
    def __init__(self, obs, use_ranks=True):
        super().__init__(obs)
        self.scores = midranks(obs.outcomes) if use_ranks else obs.outcomes.astype(np.float64)
        self.centered = self.scores - self.scores.mean()
        self.denominator = float(self.centered @ self.centered)
        self.degenerate = self.denominator <= 0.0

    def batch(self, assignments):
        w = np.atleast_2d(assignments)
        self._check_width(w)
        if self.degenerate:
            return np.zeros(w.shape[0])
        numerator = np.zeros(w.shape[0])
        for k in range(self.n_arms):
            mask = (w == k).astype(np.float64)
            n = mask.sum(axis=1)
            sums = mask @ self.centered
            numerator += np.divide(sums * sums, n, out=np.zeros_like(n), where=n > 0)
        return (self.obs.n_units - 1) * numerator / self.denominator


class _MeanRankDifference(BoundStatistic):
    """腕 a と b に割り付けられたユニットだけで順位を付けた平均順位の差。"""

    def __init__(self, obs, arm_a, arm_b):
        super().__init__(obs)
        for a in (arm_a, arm_b):
            if not 0 <= a < obs.n_arms:
                raise DomainError(f"Arm {a} outside 0..{obs.n_arms - 1}")
        self.arm_a, self.arm_b = arm_a, arm_b
        # 2群なら部分集合は常に全ユニットで順位は固定
        self.fixed = obs.n_arms == 2
        self.ranks = midranks(obs.outcomes) if self.fixed else None

    def batch(self, assignments):
        w = np.atleast_2d(assignments)
        self._check_width(w)
        if self.fixed:
            return _arm_means(w, self.ranks, self.arm_a) - _arm_means(w, self.ranks, self.arm_b)
        out = np.empty(w.shape[0])
        for i, row in enumerate(w):
            keep = (row == self.arm_a) | (row == self.arm_b)
            ranks = midranks(self.obs.outcomes[keep])
            sub = row[keep]
            na, nb = (sub == self.arm_a).sum(), (sub == self.arm_b).sum()
            if na == 0 or nb == 0:
                raise StatisticError(f"Arm {self.arm_a if na == 0 else self.arm_b} is empty", row=i)
            out[i] = ranks[sub == self.arm_a].mean() - ranks[sub == self.arm_b].mean()
        return out


class _OlsCoefficient(BoundStatistic):
    """処置対比コーディングと中心化交互作用を含む回帰の W の係数。

    説明変数は [1, W, Z_2..Z_J, W(Z_2 - Z̄_2)..W(Z_J - Z̄_J)] です。
    """

    def __init__(self, obs, column):
        super().__init__(obs)
        _require_two_arms(obs, "ols")
        codes, n_levels, self.levels = _stratum_codes(obs, column)
        self.column = column
        present = np.flatnonzero(np.bincount(codes, minlength=n_levels) > 0)
        # 空の水準はダミーから除く (基準は最初の非空水準)
        remap = np.full(n_levels, -1)
        remap[present] = np.arange(present.size)
        self.codes = remap[codes]
        self.present = present
        z = (self.codes[:, None] == np.arange(1, present.size)[None, :]).astype(np.float64)
        self.z = z
        self.zc = z - z.mean(axis=0)
        self.y = obs.outcomes

    def batch(self, assignments):
        w = np.atleast_2d(assignments)
        self._check_width(w)
        out = np.empty(w.shape[0])
        n_strata = self.present.size
        for i, row in enumerate(w):
            if ((row != 0) & (row != 1)).any():
                raise StatisticError("ols needs a two-arm assignment", row=i)
            cells = np.zeros((n_strata, 2), dtype=np.int64)
            np.add.at(cells, (self.codes, row), 1)
            bad = np.flatnonzero((cells == 0).any(axis=1))
            if bad.size:
                level = self.levels[self.present[bad[0]]]
                raise StatisticError(
                    f"Design is rank deficient: stratum '{self.column}={level}' lacks an arm", row=i
                )
            wf = row.astype(np.float64)
            design = np.column_stack([np.ones_like(wf), wf, self.z, wf[:, None] * self.zc])
            coef, _, rank, _ = scipy.linalg.lstsq(design, self.y, lapack_driver="gelsy")
            if rank < design.shape[1]:
                raise StatisticError(f"Design is rank deficient (rank {rank} < {design.shape[1]})", row=i)
            out[i] = coef[1]
        return out


def _evaluate(spec, obs):
    return spec.bind(obs)()


def t_sd(obs):
    """単純差 Ȳ_T - Ȳ_C。"""
    return _evaluate(StatisticSpec("t_sd"), obs)


def t_ps(obs, stratum_column, drop_empty_strata=False):
    """層の大きさで重み付けした層内単純差の平均 Σ (N_j/N) t_sd,j。"""
    return _evaluate(StatisticSpec("t_ps", stratum_column, drop_empty_strata=drop_empty_strata), obs)


def t_res(obs, stratum_column):
    """層内平均で調整した残差の単純差。"""
    return _evaluate(StatisticSpec("t_res", stratum_column), obs)


def kruskal_wallis(obs, use_ranks=True):
    """Kruskal-Wallis 統計量 (N-1) Σ N_j (r̄_j - r̄)² / Σ (r_i - r̄)²。

    全ての結果が等しい (分母0) 場合は0を返します。
    """
    return _evaluate(StatisticSpec("kruskal_wallis", use_ranks=use_ranks), obs)


def mean_rank_difference(obs, arm_a, arm_b):
    """腕 a, b の部分集合で計算した平均順位の差。"""
    return _evaluate(StatisticSpec("mean_rank", arms=(arm_a, arm_b)), obs)


def ols_coefficient(obs, stratum_column):
    """交互作用付き回帰における処置指示変数の最小二乗係数。"""
    return _evaluate(StatisticSpec("ols", stratum_column), obs)


def monotone_t_ps(t_sd_value, outcomes, strata, treated_counts):
    """2層・等しい層の大きさ・N_T = N_C のとき、t_sd から t_ps を求める写像。

    t_ps = N / (4 N_T1 N_C1) * ( N/4 (t_sd + 2Ȳ) - N_T1 Ȳ_1 - N_T2 Ȳ_2 )

    Args:
        t_sd_value (float): 単純差。
        outcomes (sequence[float]): 観測結果。
        strata (sequence[int]): 層コード (0, 1)。
        treated_counts (tuple[int, int]): 固定されたバランス (N_T1, N_T2)。
    """
    y = np.asarray(outcomes, dtype=np.float64)
    s = np.asarray(strata)
    n = y.size
    n_t1, n_t2 = treated_counts
    sizes = np.bincount(s, minlength=2)
    if sizes.size != 2 or sizes[0] != sizes[1] or 2 * (n_t1 + n_t2) != n:
        raise DomainError("The monotone map needs two equal strata and equal arm sizes")
    n_c1 = sizes[0] - n_t1
    if n_t1 == 0 or n_c1 == 0:
        raise DomainError("The monotone map needs both arms in every stratum")
    y1, y2 = y[s == 0].mean(), y[s == 1].mean()
    return n / (4 * n_t1 * n_c1) * (n / 4 * (t_sd_value + 2 * y.mean()) - n_t1 * y1 - n_t2 * y2)
