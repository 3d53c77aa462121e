#!/usr/bin/env python3

"""カテゴリカル共変量の k-modes クラスタリングとエルボー曲線。

ハミング距離 (値が異なる変数の数) と座標ごとの最頻値を使うバッチ (Lloyd型) 更新です。
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .core import CovariateColumn, CovariateFrame
from .errors import DomainError
from .sampler import as_seed

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 100


def _as_matrix(data):
    """CovariateFrame または2次元配列を N×P の非負整数行列にします。"""
    if isinstance(data, CovariateFrame):
        return data.matrix()
    rows = np.asarray(data)
    if rows.ndim == 1:
        rows = rows[:, None]
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DomainError("Clustering needs a non-empty N x P matrix of categorical codes")
    if not np.issubdtype(rows.dtype, np.integer):
        raise DomainError("Categorical codes must be integers")
    if rows.min() < 0:
        raise DomainError("Categorical codes must be non-negative")
    return rows.astype(np.int64)


def dissimilarity(a, b):
    """2つのカテゴリカル行の単純一致距離 (異なる位置の数) を返します。"""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError(f"Rows must share the same arity, got {a.shape} and {b.shape}")
    return int(np.count_nonzero(a != b))


def _distances(rows, modes):
    return (rows[:, None, :] != modes[None, :, :]).sum(axis=2)


def _modes(rows, labels, k):
    """各クラスタの座標ごとの最頻値 (同数は小さいコード)。"""
    modes = np.zeros((k, rows.shape[1]), dtype=np.int64)
    for p in range(rows.shape[1]):
        counts = np.zeros((k, int(rows[:, p].max()) + 1), dtype=np.int64)
        np.add.at(counts, (labels, rows[:, p]), 1)
        modes[:, p] = counts.argmax(axis=1)
    return modes


def mode_of(rows):
    """行集合のハミング距離の和を最小にする行 (座標ごとの最頻値) を返します。

    Raises:
        DomainError: 行集合が空の場合。
    """
    rows = np.asarray(rows)
    if rows.size == 0:
        raise DomainError("Mode of an empty set of rows is undefined")
    rows = _as_matrix(np.atleast_2d(rows))
    return _modes(rows, np.zeros(rows.shape[0], dtype=np.int64), 1)[0]


@dataclass
class ClusterModel:
    """k-modes の当てはめ結果。

    Attributes:
        k (int): クラスタ数。
        modes (np.ndarray): k×P の最頻値行列。
        labels (np.ndarray): 各ユニットのクラスタ番号。
        cost (int): クラスタ内の距離の総和。
        n_iterations (int): 反復回数。
        seed (int): 当てはめに使ったシード。
        converged (bool): ラベルが変化せずに停止した場合 True。
        cost_trace (list[int]): 反復ごとのコスト。
    """
    k: int
    modes: np.ndarray
    labels: np.ndarray
    cost: int
    n_iterations: int
    seed: int
    converged: bool = True
    cost_trace: list = field(default_factory=list)
    columns: tuple = ()

    def as_column(self, name="cluster"):
        """ラベルをバランス関数で使える共変量列として返します。"""
        return CovariateColumn(name, self.k, self.labels, tuple(str(c) for c in range(self.k)))

    def to_dict(self):
        return {
            "k": self.k,
            "columns": list(self.columns),
            "modes": self.modes.tolist(),
            "cost": self.cost,
            "n_iterations": self.n_iterations,
            "converged": self.converged,
            "cost_trace": list(self.cost_trace),
            "seed": self.seed,
            "cluster_sizes": np.bincount(self.labels, minlength=self.k).tolist(),
        }


def _reseed_empty(rows, labels, modes, k):
    """空のクラスタに、現在の最頻値から最も遠い行を移します。"""
    sizes = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(sizes == 0):
        dist = (rows != modes[labels]).sum(axis=1)
        # 1行しかないクラスタからは移さない
        dist[sizes[labels] <= 1] = -1
        unit = int(np.argmax(dist))
        logger.debug("reseeding empty cluster %d with unit %d (distance %d)", c, unit, dist[unit])
        sizes[labels[unit]] -= 1
        labels[unit] = c
        sizes[c] = 1
        modes[c] = rows[unit]
    return labels


def _record_cost(trace, cost, iteration):
    """反復ごとのコストを記録します。コストは単調非増加でなければなりません。"""
    if trace and cost > trace[-1]:
        raise AssertionError(f"k-modes cost rose from {trace[-1]} to {cost} at iteration {iteration}")
    logger.debug("k-modes iteration %d cost %d", iteration, cost)
    trace.append(cost)


def _fit_once(rows, distinct, k, seed, max_iter):
    rng = seed.generator(0)
    modes = distinct[rng.choice(distinct.shape[0], size=k, replace=False)].copy()
    labels = None
    trace = []
    converged = False
    iteration = 0
    while iteration < max_iter:
        iteration += 1
        d = _distances(rows, modes)
        new = d.argmin(axis=1)
        if labels is not None:
            # 同距離なら現在のクラスタに留まる
            keep = d[np.arange(rows.shape[0]), labels] == d[np.arange(rows.shape[0]), new]
            new = np.where(keep, labels, new)
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = _reseed_empty(rows, new, modes, k)
        modes = _modes(rows, labels, k)
        _record_cost(trace, int((rows != modes[labels]).sum()), iteration)
    if not converged:
        logger.info("k-modes stopped at max_iter=%d without converging (k=%d)", max_iter, k)
    return ClusterModel(
        k=k, modes=modes, labels=labels, cost=trace[-1], n_iterations=iteration, seed=seed.master_seed,
        converged=converged, cost_trace=trace,
    )


def kmodes_fit(data, k, seed=0, max_iter=DEFAULT_MAX_ITER, n_init=1, n_jobs=None):
    """k-modes を当てはめ、n_init 回の初期化のうち最小コストのモデルを返します。

    初期最頻値は異なる行から非復元で一様に選びます。各初期化のシードは
    ``seed.derive(k, restart)`` で決まります。

    Args:
        data (CovariateFrame | array-like): カテゴリカル共変量。
        k (int): クラスタ数。
        seed (int | RngSeed): 親シード。
        max_iter (int): 反復の上限。
        n_init (int): 初期化の回数。

    Raises:
        DomainError: k が異なる行の数を超える場合。
    """
    rows = _as_matrix(data)
    distinct = np.unique(rows, axis=0)
    if k < 1 or k > distinct.shape[0]:
        raise DomainError(f"k={k} must lie in 1..{distinct.shape[0]} (number of distinct rows)")
    if n_init < 1 or max_iter < 1:
        raise DomainError("n_init and max_iter must be positive")
    seed = as_seed(seed)
    seeds = [seed.derive(k, r) for r in range(n_init)]
    from .engine import worker_count

    jobs = worker_count(n_jobs)
    if jobs == 1 or n_init == 1:
        models = [_fit_once(rows, distinct, k, s, max_iter) for s in seeds]
    else:
        models = Parallel(n_jobs=jobs, prefer="threads")(
            delayed(_fit_once)(rows, distinct, k, s, max_iter) for s in seeds
        )
    best = min(range(n_init), key=lambda r: (models[r].cost, r))
    model = models[best]
    if isinstance(data, CovariateFrame):
        model.columns = data.names
    logger.info("k=%d best cost %d over %d restarts", k, model.cost, n_init)
    return model


@dataclass(frozen=True)
class ElbowPoint:
    k: int
    cost: int
    monotone: bool = True


@dataclass
class ElbowCurve:
    """k ごとの最小コスト。単調性は報告するだけで強制しません。"""
    points: list
    restarts: int = 1
    seed: int = 0

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    @property
    def rises(self):
        """コストが前の k より上がった k の一覧 (局所解の兆候)。"""
        return [p.k for p in self.points if not p.monotone]

    def cost(self, k):
        for p in self.points:
            if p.k == k:
                return p.cost
        raise KeyError(k)

    def to_rows(self):
        return [{"k": p.k, "cost": p.cost, "monotone": p.monotone} for p in self.points]


def elbow_curve(data, k_range, seed=0, restarts=10, max_iter=DEFAULT_MAX_ITER, n_jobs=None):
    """k の範囲についてエルボー曲線を計算します。k の選択は利用者に任せます。"""
    ks = sorted(int(k) for k in k_range)
    if not ks:
        raise DomainError("k range is empty")
    seed = as_seed(seed)
    points = []
    previous = None
    for k in ks:
        model = kmodes_fit(data, k, seed, max_iter=max_iter, n_init=restarts, n_jobs=n_jobs)
        monotone = previous is None or model.cost <= previous
        if not monotone:
            logger.warning("elbow cost rose at k=%d (%d > %d)", k, model.cost, previous)
        points.append(ElbowPoint(k, model.cost, monotone))
        previous = model.cost
    return ElbowCurve(points, restarts, seed.master_seed)
