#!/usr/bin/env python3

"""共変量バランス関数 B(w, X) と割り付け空間の分割。"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import comb

from .core import CovariateColumn
from .errors import CapacityError, DomainError

logger = logging.getLogger(__name__)

DEFAULT_CELL_CAP = 10**6

# 層別型 (直接サンプリング可能) のバランス関数
STRATIFICATION_KINDS = ("none", "strata", "contingency", "cluster")
KINDS = (*STRATIFICATION_KINDS, "marginal")


@dataclass(frozen=True)
class BalanceValue:
    """バランス関数の値。

    ``values`` は層優先・腕の順に平坦化した非負整数列です。
    ``shape`` は層別型なら (J, K)、周辺型なら (P,) です。
    """
    values: tuple
    shape: tuple = ()

    def __post_init__(self):
        values = tuple(int(v) for v in np.asarray(self.values).ravel())
        if any(v < 0 for v in values):
            raise DomainError(f"Balance values must be non-negative: {values}")
        shape = tuple(self.shape) if self.shape else (len(values),)
        if int(np.prod(shape)) != len(values):
            raise DomainError(f"Balance shape {shape} does not match {len(values)} values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "shape", shape)

    def as_array(self):
        return np.array(self.values, dtype=np.int64).reshape(self.shape)

    def treated_counts(self):
        """2群の層別バランスから処置群数 (N_T1, ..., N_TJ) を取り出します。"""
        if len(self.shape) != 2 or self.shape[1] != 2:
            raise DomainError("Treated counts are defined for two-arm stratum tables only")
        return tuple(int(v) for v in self.as_array()[:, 1])


def _column_tuple(columns):
    if columns is None:
        return ()
    return (columns,) if isinstance(columns, str) else tuple(columns)


@dataclass(frozen=True)
class BalanceFunctionSpec:
    """宣言的なバランス関数。

    Attributes:
        kind (str): ``none`` / ``strata`` / ``contingency`` / ``marginal`` / ``cluster``。
        columns (tuple[str, ...]): 参照する共変量列。
        cell_cap (int): 直積セル数の上限。
    """
    kind: str = "none"
    columns: tuple = ()
    cell_cap: int = DEFAULT_CELL_CAP

    def __post_init__(self):
        object.__setattr__(self, "columns", _column_tuple(self.columns))
        if self.kind not in KINDS:
            raise DomainError(f"Unknown balance kind '{self.kind}' (expected one of {', '.join(KINDS)})")
        if self.kind == "none" and self.columns:
            raise DomainError("Balance 'none' takes no columns")
        if self.kind != "none" and not self.columns:
            raise DomainError(f"Balance '{self.kind}' needs at least one column")
        if self.kind == "cluster" and len(self.columns) != 1:
            raise DomainError("Balance 'cluster' takes exactly one label column")

    @property
    def is_stratification(self):
        return self.kind in STRATIFICATION_KINDS

    def to_dict(self):
        return {"kind": self.kind, "columns": list(self.columns)}

    def describe(self):
        return self.kind if self.kind == "none" else f"{self.kind}({', '.join(self.columns)})"

    def validate(self, covariates, n_arms=2):
        for name in self.columns:
            covariates.column(name)
        if self.kind == "marginal":
            if n_arms != 2:
                raise DomainError(f"Marginal treated counts need two arms, got {n_arms}")
            for name in self.columns:
                col = covariates.column(name)
                if col.n_levels != 2:
                    raise DomainError(f"Marginal balance column '{name}' must be binary, has {col.n_levels} levels")

    def strata(self, covariates, n_arms=2, n_units=None):
        """層別型バランスが誘導する層コードと層数を返します。"""
        if not self.is_stratification:
            raise DomainError(f"Balance '{self.kind}' does not define strata")
        if self.kind == "none":
            n = covariates.n_units if n_units is None else n_units
            return np.zeros(n, dtype=np.int64), 1
        self.validate(covariates, n_arms)
        codes, n_strata = covariates.joint_codes(self.columns)
        if n_strata * n_arms > self.cell_cap:
            raise CapacityError(
                f"Balance {self.describe()} has {n_strata * n_arms} cells (cap {self.cell_cap}); "
                "cluster the covariates first (condrand cluster) and condition on the cluster label"
            )
        return codes, n_strata

    def bind(self, covariates, n_arms=2, n_units=None):
        """共変量を固定した評価器を返します。"""
        return BoundBalance(self, covariates, n_arms, n_units)


class BoundBalance:
    """共変量と腕数を固定したバランス関数。単一の割り付けとバッチを評価します。"""

    def __init__(self, spec, covariates, n_arms=2, n_units=None):
        self.spec = spec
        self.n_arms = n_arms
        if spec.is_stratification:
            self.strata, self.n_strata = spec.strata(covariates, n_arms, n_units)
            self.shape = (self.n_strata, n_arms)
        else:
            spec.validate(covariates, n_arms)
            self.binary = covariates.matrix(spec.columns).astype(np.int64)
            self.shape = (len(spec.columns),)

    def batch(self, assignments):
        """割り付けの行列 (B×N) に対する値を (B×L) の整数行列で返します。"""
        w = np.atleast_2d(np.asarray(assignments, dtype=np.int64))
        if self.spec.is_stratification:
            return _cell_counts(w, self.strata, self.n_strata, self.n_arms)
        return (w == 1).astype(np.int64) @ self.binary

    def __call__(self, assignment):
        return BalanceValue(self.batch(assignment)[0], self.shape)


def _cell_counts(w, strata, n_strata, n_arms):
    """各行について (層, 腕) セルの度数を数えます。"""
    if w.shape[1] != strata.size:
        raise DomainError(f"Assignment length {w.shape[1]} does not match {strata.size} covariate rows")
    if w.size and (w.min() < 0 or w.max() >= n_arms):
        raise DomainError(f"Arm labels must lie in 0..{n_arms - 1}")
    n_cells = n_strata * n_arms
    flat = strata[None, :] * n_arms + w + (np.arange(w.shape[0]) * n_cells)[:, None]
    return np.bincount(flat.ravel(), minlength=w.shape[0] * n_cells).reshape(w.shape[0], n_cells)


def _n_arms(assignment, n_arms):
    if n_arms is not None:
        return n_arms
    return max(int(np.max(assignment)) + 1, 2) if len(assignment) else 2


def stratum_arm_counts(assignment, covariates, columns, n_arms=None):
    """層 (列または列の直積) ごとの各腕の度数 N_{j,k} を返します。

    2群の場合、処置群の列 (N_T1, ..., N_TJ) は ``treated_counts()`` で取り出せます。
    """
    w = np.asarray(assignment, dtype=np.int64)
    if w.size == 0:
        raise DomainError("Balance of an empty assignment is undefined")
    spec = BalanceFunctionSpec("strata", columns)
    return spec.bind(covariates, _n_arms(w, n_arms))(w)


def contingency_table(assignment, covariates, columns, n_arms=None, cell_cap=DEFAULT_CELL_CAP):
    """共変量の直積水準 × 腕の分割表の内部セルを返します。"""
    w = np.asarray(assignment, dtype=np.int64)
    if w.size == 0:
        raise DomainError("Balance of an empty assignment is undefined")
    spec = BalanceFunctionSpec("contingency", columns, cell_cap)
    return spec.bind(covariates, _n_arms(w, n_arms))(w)


def marginal_treated_counts(assignment, covariates, columns):
    """二値共変量ごとに、その共変量が1である処置ユニット数を返します。"""
    w = np.asarray(assignment, dtype=np.int64)
    if w.size == 0:
        raise DomainError("Balance of an empty assignment is undefined")
    return BalanceFunctionSpec("marginal", columns).bind(covariates, 2)(w)


def coarsen(values, bin_edges, clamp=False):
    """連続値をビンに丸めてカテゴリコードにします。

    ビン j は [edge_j, edge_{j+1}) で、最後のビンだけ右閉区間です。

    Args:
        values (sequence[float]): 連続値。
        bin_edges (sequence[float]): 狭義単調増加の境界。
        clamp (bool): 範囲外の値を端のビンに寄せる場合 True。

    Returns:
        np.ndarray: 0..(ビン数-1) のコード。
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise DomainError("At least two bin edges are required")
    if not np.all(np.diff(edges) > 0):
        raise DomainError(f"Bin edges must be strictly ascending: {edges.tolist()}")
    v = np.asarray(values, dtype=np.float64)
    outside = ~np.isfinite(v) | (v < edges[0]) | (v > edges[-1])
    if outside.any():
        i = int(np.flatnonzero(outside)[0])
        if not clamp or not np.isfinite(v[i]):
            raise DomainError(f"Value {v[i]} at unit {i} outside [{edges[0]}, {edges[-1]}]")
        v = np.clip(v, edges[0], edges[-1])
    codes = np.searchsorted(edges, v, side="right") - 1
    return np.minimum(codes, edges.size - 2).astype(np.int64)


def coarsen_column(name, values, bin_edges, clamp=False):
    """``coarsen`` の結果を区間ラベル付きの共変量列にします。"""
    edges = list(bin_edges)
    labels = [f"[{a:g}, {b:g})" for a, b in zip(edges[:-1], edges[1:])]
    labels[-1] = labels[-1][:-1] + "]"
    return CovariateColumn(name, len(labels), coarsen(values, bin_edges, clamp), tuple(labels))


def multinomial(n, counts):
    """多項係数 n! / (c_1! ... c_K!) を厳密な整数で返します。"""
    total = 1
    remaining = int(n)
    for c in counts:
        total *= int(comb(remaining, int(c), exact=True))
        remaining -= int(c)
    return total


def partition_size(spec, covariates, observed_balance, n_treated=None, n_units=None):
    """観測バランスを持つ割り付けの数 |S_ref| を厳密に数えます。

    層別型は層ごとの多項係数の積、周辺型は二値パターンのセル上の動的計画法で数えます。

    Args:
        spec (BalanceFunctionSpec): バランス関数。
        covariates (CovariateFrame): 共変量。
        observed_balance (BalanceValue): 観測されたバランス値。
        n_treated (int): 周辺型でのみ必要な処置群の大きさ N_T。

    Returns:
        int: 割り付け数。
    """
    if spec.is_stratification:
        shape = observed_balance.shape
        if len(shape) != 2:
            raise DomainError(f"Stratum balance must be a J x K table, got shape {shape}")
        strata, n_strata = spec.strata(covariates, shape[1], n_units)
        if shape[0] != n_strata:
            raise DomainError(f"Balance has {shape[0]} strata but the covariates define {n_strata}")
        table = observed_balance.as_array()
        sizes = np.bincount(strata, minlength=n_strata)
        bad = np.flatnonzero(table.sum(axis=1) != sizes)
        if bad.size:
            j = int(bad[0])
            raise DomainError(f"Balance row {j} sums to {int(table[j].sum())} but stratum {j} has {int(sizes[j])} units")
        size = 1
        for n_j, row in zip(sizes, table):
            size *= multinomial(n_j, row)
        return size

    spec.validate(covariates, 2)
    if n_treated is None:
        raise DomainError("Marginal balance needs n_treated to count its partition")
    target = tuple(observed_balance.values)
    if len(target) != len(spec.columns):
        raise DomainError(f"Marginal balance has {len(target)} entries for {len(spec.columns)} columns")
    patterns, cell_sizes = np.unique(covariates.matrix(spec.columns), axis=0, return_counts=True)
    states = {(0, (0,) * len(target)): 1}
    for pattern, m in zip(patterns, cell_sizes):
        nxt = {}
        for (t, margins), ways in states.items():
            for n in range(min(int(m), n_treated - t) + 1):
                new = tuple(a + n * int(p) for a, p in zip(margins, pattern))
                if any(a > b for a, b in zip(new, target)):
                    break
                key = (t + n, new)
                nxt[key] = nxt.get(key, 0) + ways * int(comb(int(m), n, exact=True))
        states = nxt
    size = states.get((n_treated, target), 0)
    if size == 0:
        raise DomainError(f"No assignment with {n_treated} treated units attains marginal balance {target}")
    return size
