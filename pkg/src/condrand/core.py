#!/usr/bin/env python3

"""有限標本の潜在的結果モデル (Science Table、観測実験、シャープ帰無仮説による補完)。"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


def _frozen(values, dtype):
    """読み取り専用のnumpy配列を返します。"""
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class CovariateColumn:
    """カテゴリカル共変量の1列。

    Attributes:
        name (str): 列名。
        n_levels (int): 水準数 J。
        codes (np.ndarray): 各ユニットの水準コード (0 <= c < n_levels)。
        levels (tuple[str, ...]): 水準コードに対応するラベル。
    """
    name: str
    n_levels: int
    codes: np.ndarray
    levels: tuple = ()

    def __post_init__(self):
        codes = _frozen(self.codes, np.int64)
        if codes.ndim != 1:
            raise DomainError(f"Covariate '{self.name}' must be one-dimensional")
        if self.n_levels < 1:
            raise DomainError(f"Covariate '{self.name}' must have at least one level")
        if codes.size and (codes.min() < 0 or codes.max() >= self.n_levels):
            bad = int(np.flatnonzero((codes < 0) | (codes >= self.n_levels))[0])
            raise DomainError(
                f"Covariate '{self.name}' code {codes[bad]} at unit {bad} outside 0..{self.n_levels - 1}"
            )
        levels = tuple(str(v) for v in self.levels) if self.levels else tuple(str(v) for v in range(self.n_levels))
        if len(levels) != self.n_levels:
            raise DomainError(f"Covariate '{self.name}' has {len(levels)} labels for {self.n_levels} levels")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return int(self.codes.size)

    @classmethod
    def from_values(cls, name, values):
        """任意の値列から初出順に水準を割り当てて列を作ります。"""
        levels = {}
        codes = [levels.setdefault(v, len(levels)) for v in values]
        return cls(name, max(len(levels), 1), codes, tuple(str(v) for v in levels) or ("0",))


@dataclass(frozen=True, eq=False)
class CovariateFrame:
    """同じ長さを持つカテゴリカル共変量列の順序付き集合。"""
    columns: tuple = ()

    def __post_init__(self):
        columns = tuple(self.columns)
        names = [c.name for c in columns]
        if len(set(names)) != len(names):
            raise DomainError(f"Duplicate covariate names: {names}")
        if len({len(c) for c in columns}) > 1:
            raise DomainError("All covariate columns must share the same length")
        object.__setattr__(self, "columns", columns)

    @classmethod
    def from_codes(cls, n_units=None, **codes):
        """``name=codes`` 形式でフレームを作成します (水準数はコードの最大値+1)。"""
        cols = []
        for name, values in codes.items():
            values = np.asarray(values, dtype=np.int64)
            cols.append(CovariateColumn(name, int(values.max()) + 1 if values.size else 1, values))
        frame = cls(tuple(cols))
        if n_units is not None and cols and frame.n_units != n_units:
            raise DomainError(f"Covariate rows {frame.n_units} do not match n_units {n_units}")
        return frame

    @property
    def n_units(self):
        return len(self.columns[0]) if self.columns else None

    @property
    def names(self):
        return tuple(c.name for c in self.columns)

    def __contains__(self, name):
        return name in self.names

    def column(self, name):
        """列名から列を取得します。

        Raises:
            DomainError: 列が存在しない場合。
        """
        for c in self.columns:
            if c.name == name:
                return c
        raise DomainError(f"Unknown covariate column '{name}' (available: {', '.join(self.names) or 'none'})")

    def codes(self, name):
        return self.column(name).codes

    def matrix(self, names=None):
        """指定列 (省略時は全列) を N×P のコード行列として返します。"""
        names = self.names if names is None else tuple(names)
        if not names:
            raise DomainError("No covariate columns selected")
        return np.column_stack([self.codes(n) for n in names])

    def joint_codes(self, names):
        """複数列の直積水準コードを返します。

        先頭の列が最上位桁となる混合基数でコード化します。

        Returns:
            tuple: (コード配列, 直積水準数)
        """
        names = (names,) if isinstance(names, str) else tuple(names)
        if not names:
            raise DomainError("At least one covariate column is required")
        codes = np.zeros(self.n_units, dtype=np.int64)
        size = 1
        for name in names:
            col = self.column(name)
            codes = codes * col.n_levels + col.codes
            size *= col.n_levels
        return codes, size

    def joint_labels(self, names):
        """直積水準ラベルを ``joint_codes`` と同じ順序で返します。"""
        names = (names,) if isinstance(names, str) else tuple(names)
        labels = [""]
        for i, name in enumerate(names):
            col = self.column(name)
            sep = "|" if i else ""
            labels = [f"{p}{sep}{lv}" for p in labels for lv in col.levels]
        return labels

    def subset(self, index):
        index = np.asarray(index)
        return CovariateFrame(tuple(
            CovariateColumn(c.name, c.n_levels, c.codes[index], c.levels) for c in self.columns
        ))

    def with_column(self, column):
        """列を追加 (同名なら置換) した新しいフレームを返します。"""
        cols = [c for c in self.columns if c.name != column.name]
        return CovariateFrame((*cols, column))


@dataclass(frozen=True, eq=False)
class ScienceTable:
    """N×K の潜在的結果行列と共変量。

    Attributes:
        potential_outcomes (np.ndarray): Y_i(k) の行列。
        covariates (CovariateFrame): 共変量。
    """
    potential_outcomes: np.ndarray
    covariates: CovariateFrame = field(default_factory=CovariateFrame)

    def __post_init__(self):
        po = _frozen(self.potential_outcomes, np.float64)
        if po.ndim != 2 or po.shape[0] < 1:
            raise DomainError("Potential outcomes must be a non-empty n_units x n_arms matrix")
        if po.shape[1] < 2:
            raise DomainError(f"A science table needs at least 2 arms, got {po.shape[1]}")
        if not np.all(np.isfinite(po)):
            unit = int(np.flatnonzero(~np.isfinite(po).all(axis=1))[0])
            raise DomainError(f"Non-finite potential outcome at unit {unit}")
        if self.covariates.columns and self.covariates.n_units != po.shape[0]:
            raise DomainError(
                f"Covariate rows {self.covariates.n_units} do not match n_units {po.shape[0]}"
            )
        object.__setattr__(self, "potential_outcomes", po)

    @property
    def n_units(self):
        return self.potential_outcomes.shape[0]

    @property
    def n_arms(self):
        return self.potential_outcomes.shape[1]


@dataclass(frozen=True, eq=False)
class ObservedExperiment:
    """観測された実験 (割り付け、観測結果、共変量)。

    腕は 0..K-1 で表し、2群の場合は control=0, treatment=1 とします。
    """
    assignment: np.ndarray
    outcomes: np.ndarray
    covariates: CovariateFrame = field(default_factory=CovariateFrame)
    n_arms: int = 2
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        w = _frozen(self.assignment, np.int64)
        y = _frozen(self.outcomes, np.float64)
        if w.ndim != 1 or y.ndim != 1:
            raise DomainError("Assignment and outcomes must be one-dimensional")
        if w.size == 0:
            raise DomainError("An experiment needs at least one unit")
        if w.size != y.size:
            raise DomainError(f"Assignment length {w.size} does not match outcomes length {y.size}")
        if self.covariates.columns and self.covariates.n_units != w.size:
            raise DomainError(f"Covariate rows {self.covariates.n_units} do not match n_units {w.size}")
        if self.n_arms < 2:
            raise DomainError(f"An experiment needs at least 2 arms, got {self.n_arms}")
        _check_labels(w, self.n_arms)
        if not np.all(np.isfinite(y)):
            raise DomainError(f"Non-finite outcome at unit {int(np.flatnonzero(~np.isfinite(y))[0])}")
        object.__setattr__(self, "assignment", w)
        object.__setattr__(self, "outcomes", y)

    @property
    def n_units(self):
        return int(self.assignment.size)

    @property
    def arm_sizes(self):
        return np.bincount(self.assignment, minlength=self.n_arms)

    @property
    def arm_levels(self):
        return tuple(self.metadata.get("arm_levels", [str(k) for k in range(self.n_arms)]))

    def with_assignment(self, assignment):
        return ObservedExperiment(assignment, self.outcomes, self.covariates, self.n_arms, dict(self.metadata))

    def with_covariates(self, covariates):
        return ObservedExperiment(self.assignment, self.outcomes, covariates, self.n_arms, dict(self.metadata))

    def subset(self, arms):
        """指定した腕のユニットだけを取り出し、腕を 0..len(arms)-1 に振り直します。

        Args:
            arms (sequence[int]): 残す腕。並び順が新しいラベルになります。
        """
        arms = [int(a) for a in arms]
        for a in arms:
            if not 0 <= a < self.n_arms:
                raise DomainError(f"Arm {a} outside 0..{self.n_arms - 1}")
        if len(set(arms)) != len(arms) or len(arms) < 2:
            raise DomainError(f"Subset needs at least two distinct arms, got {arms}")
        relabel = np.full(self.n_arms, -1, dtype=np.int64)
        relabel[arms] = np.arange(len(arms))
        keep = np.flatnonzero(relabel[self.assignment] >= 0)
        meta = dict(self.metadata)
        meta["arm_levels"] = [self.arm_levels[a] for a in arms]
        return ObservedExperiment(
            relabel[self.assignment[keep]],
            self.outcomes[keep],
            self.covariates.subset(keep) if self.covariates.columns else self.covariates,
            len(arms),
            meta,
        )


def _check_labels(assignment, n_arms):
    bad = np.flatnonzero((assignment < 0) | (assignment >= n_arms))
    if bad.size:
        unit = int(bad[0])
        raise DomainError(f"Arm label {assignment[unit]} at unit {unit} outside 0..{n_arms - 1}")


def observe(science, assignment):
    """割り付けに従って観測結果を選びます (Y_i^obs = Y_i(w_i))。

    Args:
        science (ScienceTable): 潜在的結果。
        assignment (sequence[int]): 割り付けベクトル。

    Returns:
        np.ndarray: 観測結果。
    """
    w = np.asarray(assignment, dtype=np.int64)
    if w.shape != (science.n_units,):
        raise DomainError(f"Assignment length {w.size} does not match n_units {science.n_units}")
    _check_labels(w, science.n_arms)
    return science.potential_outcomes[np.arange(science.n_units), w].copy()


def experiment_from_science(science, assignment):
    """Science Table と割り付けから観測実験を作ります。"""
    return ObservedExperiment(assignment, observe(science, assignment), science.covariates, science.n_arms)


def impute_under_sharp_null(obs):
    """シャープ帰無仮説の下で欠測潜在的結果を補完します。

    全ての腕の潜在的結果が観測結果と等しい Science Table を返します。
    """
    po = np.repeat(obs.outcomes[:, None], obs.n_arms, axis=1)
    return ScienceTable(po, obs.covariates)
