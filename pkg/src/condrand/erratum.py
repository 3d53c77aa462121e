#!/usr/bin/env python3

"""t_sd と t_ps の条件付き検定が一致しない5ユニットの反例と、その再現確認。"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .balance import BalanceFunctionSpec
from .core import CovariateColumn, CovariateFrame, ObservedExperiment
from .engine import Sidedness, conditional_test
from .errors import VerificationError
from .stats import StatisticSpec

logger = logging.getLogger(__name__)

ASSIGNMENT = (1, 0, 0, 1, 0)
OUTCOMES = (1.13, 0.49, -0.31, 0.98, 1.68)
STRATA = (1, 1, 1, 2, 2)
STRATUM_COLUMN = "x"

# (割り付け, t_sd, t_ps) 小数第3位に丸めた公表値
TABLE = (
    ((1, 0, 0, 1, 0), 0.435, 0.344),
    ((0, 1, 0, 1, 0), -0.098, -0.232),
    ((0, 0, 1, 1, 0), -0.765, -0.952),
    ((1, 0, 0, 0, 1), 1.018, 0.904),
    ((0, 1, 0, 0, 1), 0.485, 0.328),
    ((0, 0, 1, 0, 1), -0.182, -0.392),
)

# 倍化 (上側比率の2倍) と絶対値の p 値
EXPECTED_P = {
    ("t_sd", "doubled"): 1.0,
    ("t_ps", "doubled"): 2 / 3,
    ("t_sd", "absolute"): 2 / 3,
    ("t_ps", "absolute"): 2 / 3,
}

TOLERANCE = 1e-9


def erratum_experiment():
    """反例の観測実験 (N=5, 層 x = 1,1,1,2,2) を返します。"""
    column = CovariateColumn(STRATUM_COLUMN, 2, np.asarray(STRATA) - 1, ("1", "2"))
    return ObservedExperiment(ASSIGNMENT, OUTCOMES, CovariateFrame((column,)), 2)


def statistics():
    return {
        "t_sd": StatisticSpec("t_sd"),
        "t_ps": StatisticSpec("t_ps", column=STRATUM_COLUMN),
    }


@dataclass
class ErratumReport:
    """再現確認の結果。"""
    rows: list = field(default_factory=list)
    p_values: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    mismatches: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.mismatches

    def lines(self):
        """表示用の行を返します。"""
        out = ["randomization     t_sd      t_ps"]
        for w, sd, ps in self.rows:
            out.append(f"{str(tuple(w)):<15} {sd:>8.6f} {ps:>9.6f}")
        for (name, sided), p in sorted(self.p_values.items()):
            out.append(f"p({name}, {sided}) = {p:.6f}")
        out.append("OK" if self.ok else f"MISMATCH: {'; '.join(self.mismatches)}")
        return out


def verify(raise_on_mismatch=True):
    """公表された6通りの割り付けの統計量と p 値を再計算して照合します。

    統計量は小数第3位に丸めた値が公表値と 1e-9 以内で一致することを、
    p 値は期待値と 1e-9 以内で一致することを確認します。

    Raises:
        VerificationError: 不一致があり ``raise_on_mismatch`` が True の場合。
    """
    obs = erratum_experiment()
    specs = statistics()
    bound = {name: spec.bind(obs) for name, spec in specs.items()}
    report = ErratumReport()
    for w, sd_expected, ps_expected in TABLE:
        sd, ps = bound["t_sd"](w), bound["t_ps"](w)
        report.rows.append((w, sd, ps))
        for name, value, expected in (("t_sd", sd, sd_expected), ("t_ps", ps, ps_expected)):
            if abs(round(value, 3) - expected) > TOLERANCE:
                report.mismatches.append(f"{name}{w} = {value:.6f}, expected {expected}")

    balance = BalanceFunctionSpec("strata", (STRATUM_COLUMN,))
    for (name, sided), expected in EXPECTED_P.items():
        result = conditional_test(
            obs, specs[name], balance, sidedness=Sidedness.parse(sided), exact=True,
            erratum_doubling=sided == "doubled",
        )
        report.results[(name, sided)] = result
        report.p_values[(name, sided)] = result.p_value
        if abs(result.p_value - expected) > TOLERANCE:
            report.mismatches.append(f"p({name}, {sided}) = {result.p_value:.6f}, expected {expected:.6f}")
        if result.reference_size != len(TABLE):
            report.mismatches.append(f"reference size {result.reference_size}, expected {len(TABLE)}")

    if report.mismatches:
        logger.error("erratum reproduction failed: %s", report.mismatches)
        if raise_on_mismatch:
            raise VerificationError("; ".join(report.mismatches))
    return report
