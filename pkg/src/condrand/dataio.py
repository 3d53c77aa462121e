#!/usr/bin/env python3

"""CSV の読み込み、実行設定、結果の JSON/CSV 出力。"""

import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np
import pandas as pd

from .__about__ import __version__
from .core import CovariateColumn, CovariateFrame, ObservedExperiment
from .errors import ConfigError, DomainError
from .sampler import DEFAULT_DRAWS, DEFAULT_ENUMERATION_CAP, DEFAULT_MAX_TRIES

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    """``test`` / ``omnibus`` / ``pairwise`` の実行設定。

    JSON 設定ファイルのキーはフィールド名と同じです。コマンドラインの指定が優先されます。
    """
    input: str | None = None
    outcome: str | None = None
    treatment: str | None = None
    covariates: tuple = ()
    statistic: str = "t_sd"
    balance: str | None = None
    sidedness: str = "absolute"
    erratum_doubling: bool = False
    alpha: float = 0.05
    draws: int = DEFAULT_DRAWS
    exact_cap: int = DEFAULT_ENUMERATION_CAP
    exact: bool | None = None
    max_tries: int = DEFAULT_MAX_TRIES
    seed: int = 0
    order: str | None = None
    out: str | None = None
    dump_reference: str | None = None
    pairwise_csv: str | None = None

    def __post_init__(self):
        covariates = self.covariates
        if isinstance(covariates, str):
            covariates = [c.strip() for c in covariates.split(",") if c.strip()]
        object.__setattr__(self, "covariates", tuple(covariates))
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.draws < 1:
            raise ConfigError(f"draws must be positive, got {self.draws}")
        if self.exact_cap < 1:
            raise ConfigError(f"exact cap must be positive, got {self.exact_cap}")

    @classmethod
    def from_dict(cls, data, defaults=None):
        """``defaults`` はサブコマンドごとの既定値で、JSON の値が優先されます。"""
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}")
        return cls(**{**(defaults or {}), **data})

    @classmethod
    def from_json(cls, path, defaults=None):
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must be a JSON object")
        return cls.from_dict(data, defaults)

    def merged(self, **overrides):
        """None でない値で上書きした設定を返します。"""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def require_columns(self):
        missing = [name for name in ("input", "outcome", "treatment") if not getattr(self, name)]
        if missing:
            raise ConfigError(f"Missing required setting(s): {', '.join(missing)}")


def _read_header(path):
    try:
        header = pd.read_csv(path, header=None, nrows=1, dtype=str, encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"Input file not found: {path}") from None
    except (pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ConfigError(f"Cannot read header of {path}: {e}") from None
    names = [str(v).strip() for v in header.iloc[0].tolist()]
    seen = set()
    for name in names:
        if name in seen:
            raise ConfigError(f"Duplicate column name '{name}' in {path}")
        seen.add(name)
    return names


def read_table(path, columns=None):
    """CSV を文字列として読み、指定列の欠測行を取り除きます。

    Returns:
        tuple: (DataFrame, 取り除いた行数)
    """
    header = _read_header(path)
    columns = list(header if columns is None else columns)
    missing = [c for c in columns if c not in header]
    if missing:
        raise ConfigError(f"Unknown column(s) {', '.join(missing)} in {path} (available: {', '.join(header)})")
    # "NA" や "None" も水準として扱い、空欄だけを欠測とする
    df = pd.read_csv(
        path, dtype=str, encoding="utf-8", skipinitialspace=True, keep_default_na=False, na_values=[""],
    )
    df.columns = header
    df = df[columns].apply(lambda s: s.str.strip())
    df = df.replace("", np.nan)
    incomplete = df.isna().any(axis=1)
    dropped = int(incomplete.sum())
    if dropped:
        logger.warning("dropped %d row(s) with missing values from %s", dropped, path)
    return df[~incomplete], dropped


def _arm_codes(tokens):
    """腕のトークンを 0..K-1 に符号化します。

    全てが整数で {0, ..., K-1} をなすならその値を使い、そうでなければ初出順です。
    """
    try:
        ints = [int(t) for t in tokens]
    except ValueError:
        ints = None
    if ints is not None and set(ints) == set(range(len(set(ints)))):
        k = len(set(ints))
        return np.asarray(ints, dtype=np.int64), [str(v) for v in range(k)]
    levels = {}
    codes = [levels.setdefault(t, len(levels)) for t in tokens]
    return np.asarray(codes, dtype=np.int64), list(levels)


def ingest_csv(path, config):
    """CSV から観測実験を読み込みます。

    結果列は実数、割り付け列と共変量列はカテゴリカルなトークンとして扱い、
    水準の対応表を ``metadata`` に記録します。

    Raises:
        ConfigError: 列が存在しない、または見出しが重複している場合。
        DomainError: 結果列が数値として解釈できない場合 (行番号付き)。
    """
    if not config.outcome or not config.treatment:
        raise ConfigError("Outcome and treatment columns must be specified")
    columns = list(dict.fromkeys([config.outcome, config.treatment, *config.covariates]))
    df, dropped = read_table(path, columns)
    if df.empty:
        raise DomainError(f"No complete rows in {path}")

    raw = df[config.outcome]
    outcomes = pd.to_numeric(raw, errors="coerce")
    bad = outcomes.isna() | ~np.isfinite(outcomes.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.any():
        row = int(bad.to_numpy().nonzero()[0][0])
        line = int(df.index[row]) + 2
        raise DomainError(f"Outcome '{raw.iloc[row]}' on line {line} of {path} is not a finite number")

    assignment, arm_levels = _arm_codes(df[config.treatment].tolist())
    if len(arm_levels) < 2:
        raise DomainError(f"Treatment column '{config.treatment}' has fewer than two arms")
    cov = CovariateFrame(tuple(CovariateColumn.from_values(c, df[c].tolist()) for c in config.covariates))
    metadata = {
        "source": str(path),
        "dropped_rows": dropped,
        "arm_levels": arm_levels,
        "covariate_levels": {c.name: list(c.levels) for c in cov.columns},
    }
    logger.info("read %d units, %d arms from %s", len(df), len(arm_levels), path)
    return ObservedExperiment(assignment, outcomes.to_numpy(dtype=np.float64), cov, len(arm_levels), metadata)


def ingest_covariates(path, columns=None):
    """クラスタリング用に共変量だけを読み込みます。

    Returns:
        tuple: (CovariateFrame, 元の DataFrame, 使用した行のインデックス, 取り除いた行数)
    """
    original = pd.read_csv(path, dtype=str, encoding="utf-8", keep_default_na=False)
    original.columns = _read_header(path)
    df, dropped = read_table(path, columns)
    if df.empty:
        raise DomainError(f"No complete rows in {path}")
    frame = CovariateFrame(tuple(CovariateColumn.from_values(c, df[c].tolist()) for c in df.columns))
    return frame, original, df.index, dropped


def _json_default(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def _clean(value):
    # JSON に NaN/Infinity を出さない
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_json(path, payload):
    """キーを整列した JSON を書き出します (path が None なら標準出力)。"""
    text = json.dumps(_clean(payload), sort_keys=True, indent=2, default=_json_default, ensure_ascii=False)
    if path is None:
        sys.stdout.write(text + "\n")
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")


def result_payload(result, obs=None):
    """TestResult に版数・入力の情報を加えた辞書を返します。"""
    payload = result.to_dict()
    payload["version"] = __version__
    meta = obs.metadata if obs is not None else {}
    payload["dropped_rows"] = meta.get("dropped_rows", 0)
    if "arm_levels" in meta:
        payload["arm_levels"] = list(meta["arm_levels"])
    if "covariate_levels" in meta:
        payload["covariate_levels"] = meta["covariate_levels"]
    return payload


def write_result_json(path, result, obs=None, extra=None):
    payload = result_payload(result, obs)
    payload.update(extra or {})
    write_json(path, payload)


def write_reference_csv(path, result):
    """参照分布の統計量を (draw, value) の CSV に書き出します。"""
    if result.reference_values is None:
        raise DomainError("Result does not carry reference values; rerun with keep_reference=True")
    df = pd.DataFrame({"draw": np.arange(result.reference_values.size), "value": result.reference_values})
    df.to_csv(path, index=False, float_format="%.17g")


def pairwise_frame(results, arms, labels):
    """上三角に p 値を並べた K×K の表を返します (行・列は ``arms`` の順)。"""
    names = [labels[a] for a in arms]
    table = pd.DataFrame("", index=names, columns=names, dtype=object)
    for (a, b), result in results.items():
        table.loc[labels[a], labels[b]] = f"{result.p_value:.6g}"
    table.index.name = "arm"
    return table


def write_pairwise_csv(path, results, arms, labels):
    pairwise_frame(results, arms, labels).to_csv(path)


def write_curve_csv(path, curve):
    pd.DataFrame(curve.to_rows(), columns=["k", "cost", "monotone"]).to_csv(path, index=False)


def write_labels_csv(path, original, index, labels, name="cluster"):
    """元の CSV にクラスタ列を付け加えて書き出します (欠測で除いた行は空欄)。"""
    if name in original.columns:
        raise ConfigError(f"Column '{name}' already exists in the input")
    out = original.copy()
    column = pd.Series("", index=out.index, dtype=object)
    column.loc[index] = [str(v) for v in labels]
    out[name] = column
    out.to_csv(path, index=False)


@dataclass
class PairwiseReport:
    """ペアワイズ検定の JSON 出力用の束。"""
    results: dict
    arms: list
    labels: list
    omnibus: object = None
    extra: dict = field(default_factory=dict)

    def payload(self, obs=None):
        meta = obs.metadata if obs is not None else {}
        first = next(iter(self.results.values()), None)
        pairs = []
        for (a, b), result in self.results.items():
            entry = result.to_dict()
            entry["arm_a"], entry["arm_b"] = self.labels[a], self.labels[b]
            pairs.append(entry)
        out = {
            "version": __version__,
            "seed": first.seed if first else None,
            "dropped_rows": meta.get("dropped_rows", 0),
            "order": [self.labels[a] for a in self.arms],
            "pairs": pairs,
            "method": sorted({r.method for r in self.results.values()}),
            "reference_size": min((r.reference_size for r in self.results.values()), default=0),
            "small_partition_warning": any(r.small_partition_warning for r in self.results.values()),
        }
        if self.omnibus is not None:
            out["omnibus"] = self.omnibus.to_dict()
        if "covariate_levels" in meta:
            out["covariate_levels"] = meta["covariate_levels"]
        out.update(self.extra)
        return out
