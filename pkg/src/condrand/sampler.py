#!/usr/bin/env python3

"""割り付けメカニズム p(W) と条件付き参照集合 S_ref(w) のサンプラー・列挙器。"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np

from .balance import multinomial
from .errors import AcceptanceRateError, CapacityError, DesignError, DomainError

logger = logging.getLogger(__name__)

# ブロック内の行位置とブロック番号が描画番号を一意に決める (ワーカー数に依存しない)
BLOCK_SIZE = 256
DEFAULT_ENUMERATION_CAP = 10**6
DEFAULT_DRAWS = 10_000
DEFAULT_MAX_TRIES = 1_000_000

_STREAM_DRAWS = 0
_STREAM_DERIVED = 1


@dataclass(frozen=True)
class RngSeed:
    """再現可能な乱数ストリームの親シード。

    描画番号 i の割り付けは、ブロック i // BLOCK_SIZE のPhiloxジェネレータ
    (SeedSequence(master_seed, spawn_key=(0, block))) の i % BLOCK_SIZE 行目です。
    """
    master_seed: int = 0

    def __post_init__(self):
        seed = int(self.master_seed)
        if not 0 <= seed < 2**64:
            raise DomainError(f"Seed must be a 64-bit unsigned integer, got {self.master_seed}")
        object.__setattr__(self, "master_seed", seed)

    def generator(self, block):
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(_STREAM_DRAWS, int(block)))
        return np.random.Generator(np.random.Philox(ss))

    def derive(self, *keys):
        """キー列から子シードを導出します (複製・腕ペア・再初期化ごと)。"""
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(_STREAM_DERIVED, *(int(k) for k in keys)))
        return RngSeed(int(ss.generate_state(1, dtype=np.uint64)[0]))


def as_seed(seed):
    return seed if isinstance(seed, RngSeed) else RngSeed(0 if seed is None else seed)


class AssignmentSpec:
    """一様な割り付けメカニズム。

    完全無作為化 (層1つ) と層内無作為化 (層ごとに腕の度数を固定) を表します。
    層内無作為化の台は層ごとの置換の直積で、層別型バランスの S_ref と一致します。
    """

    def __init__(self, strata, counts, kind="strata"):
        strata = np.asarray(strata, dtype=np.int64)
        counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
        if strata.ndim != 1 or strata.size == 0:
            raise DomainError("Assignment spec needs a non-empty stratum label vector")
        if counts.shape[1] < 2:
            raise DomainError(f"Assignment spec needs at least 2 arms, got {counts.shape[1]}")
        if (counts < 0).any():
            raise DomainError("Arm counts must be non-negative")
        if strata.min() < 0 or strata.max() >= counts.shape[0]:
            raise DomainError(f"Stratum labels must lie in 0..{counts.shape[0] - 1}")
        sizes = np.bincount(strata, minlength=counts.shape[0])
        bad = np.flatnonzero(counts.sum(axis=1) != sizes)
        if bad.size:
            j = int(bad[0])
            raise DomainError(f"Arm counts of stratum {j} sum to {int(counts[j].sum())}, stratum has {int(sizes[j])} units")
        self.kind = kind
        self.strata = strata
        self.counts = counts
        self.strata.flags.writeable = False
        self.counts.flags.writeable = False
        self._units = [np.flatnonzero(strata == j) for j in range(counts.shape[0])]
        self._labels = [np.repeat(np.arange(counts.shape[1]), row) for row in counts]

    @classmethod
    def complete(cls, arm_counts):
        """完全無作為化 (各腕の大きさを固定)。"""
        arm_counts = [int(c) for c in arm_counts]
        return cls(np.zeros(sum(arm_counts), dtype=np.int64), [arm_counts], kind="complete")

    @classmethod
    def within_strata(cls, strata, counts):
        """層内無作為化。``counts`` は J×K の度数表です。"""
        return cls(strata, counts, kind="strata")

    @classmethod
    def from_assignment(cls, assignment, n_arms, strata=None, n_strata=None):
        """観測された割り付けの度数を保つ仕様を作ります。"""
        w = np.asarray(assignment, dtype=np.int64)
        if strata is None:
            return cls.complete(np.bincount(w, minlength=n_arms))
        strata = np.asarray(strata, dtype=np.int64)
        n_strata = int(strata.max()) + 1 if n_strata is None else n_strata
        counts = np.zeros((n_strata, n_arms), dtype=np.int64)
        np.add.at(counts, (strata, w), 1)
        return cls.within_strata(strata, counts)

    @property
    def n_units(self):
        return int(self.strata.size)

    @property
    def n_arms(self):
        return int(self.counts.shape[1])

    @property
    def n_strata(self):
        return int(self.counts.shape[0])

    def support_size(self):
        """台の要素数 (層ごとの多項係数の積)。"""
        size = 1
        for row in self.counts:
            size *= multinomial(row.sum(), row)
        return size

    def contains(self, assignment):
        w = np.asarray(assignment, dtype=np.int64)
        if w.shape != (self.n_units,) or w.min() < 0 or w.max() >= self.n_arms:
            return False
        counts = np.zeros_like(self.counts)
        np.add.at(counts, (self.strata, w), 1)
        return bool(np.array_equal(counts, self.counts))

    def require(self, assignment):
        """観測割り付けが台に含まれることを確認します。"""
        if not self.contains(assignment):
            raise DesignError("Observed assignment is outside the support of the assignment mechanism")

    def _block(self, seed, block):
        rng = seed.generator(block)
        out = np.empty((BLOCK_SIZE, self.n_units), dtype=np.int64)
        for units, labels in zip(self._units, self._labels):
            if units.size == 0:
                continue
            # 層ごとに腕ラベルの多重集合を行単位で一様に並べ替える
            rows = np.tile(labels, (BLOCK_SIZE, 1))
            rng.permuted(rows, axis=1, out=rows)
            out[:, units] = rows
        return out


def draw_batch(spec, seed, start, stop):
    """描画番号 start..stop-1 の割り付けを (stop-start)×N 行列で返します。"""
    seed = as_seed(seed)
    if stop <= start:
        return np.empty((0, spec.n_units), dtype=np.int64)
    first, last = start // BLOCK_SIZE, (stop - 1) // BLOCK_SIZE
    blocks = [spec._block(seed, b) for b in range(first, last + 1)]
    stacked = np.concatenate(blocks) if len(blocks) > 1 else blocks[0]
    offset = first * BLOCK_SIZE
    return stacked[start - offset:stop - offset]


def draw(spec, seed, draw_index):
    """p(W) から1つの割り付けを描画します。(spec, seed, draw_index) の純関数です。"""
    return draw_batch(spec, seed, draw_index, draw_index + 1)[0]


def _stratum_arrangements(n_units, counts):
    """1つの層の腕ラベル配置を全て列挙します (K×位置の組合せ)。"""
    rows = []
    positions = range(n_units)
    counts = [int(c) for c in counts]

    def place(remaining, arm, row):
        if arm == len(counts) - 1:
            for p in remaining:
                row[p] = arm
            rows.append(row.copy())
            return
        for chosen in itertools.combinations(remaining, counts[arm]):
            nxt = row.copy()
            for p in chosen:
                nxt[p] = arm
            rest = [p for p in remaining if p not in set(chosen)]
            place(rest, arm + 1, nxt)

    place(list(positions), 0, np.zeros(n_units, dtype=np.int64))
    return np.array(rows, dtype=np.int64).reshape(len(rows), n_units)


def enumerate_assignments(spec, cap=DEFAULT_ENUMERATION_CAP):
    """台を辞書式順序で重複なく完全に列挙します。

    Raises:
        CapacityError: 台の大きさが cap を超える場合。
    """
    size = spec.support_size()
    if size > cap:
        raise CapacityError(
            f"Support has {size} assignments, above the enumeration cap {cap}; use Monte Carlo mode"
        )
    out = np.zeros((size, spec.n_units), dtype=np.int64)
    per_stratum = [_stratum_arrangements(u.size, row) for u, row in zip(spec._units, spec.counts)]
    # 直積の行番号を層ごとの配置番号に分解する (後ろの層ほど速く回る)
    rows = np.arange(size, dtype=np.int64)
    stride = 1
    for units, arrangements in reversed(list(zip(spec._units, per_stratum))):
        m = len(arrangements)
        if units.size and m > 1:
            out[:, units] = arrangements[(rows // stride) % m]
        elif units.size:
            out[:, units] = arrangements[0]
        stride *= m
    order = np.lexsort(out.T[::-1])
    return out[order]


def rejection_batch(base_spec, balance_fn, target, seed, n_draws, max_tries=DEFAULT_MAX_TRIES, start=0):
    """基底仕様から描画し、バランスが target と一致したものだけを受理します。

    描画番号 start から順に走査するので、受理される列は seed だけで決まります。

    Args:
        base_spec (AssignmentSpec): 基底の割り付けメカニズム。
        balance_fn: ``batch(W)`` を持つバランス評価器。
        target (BalanceValue): 目標のバランス値。
        seed (RngSeed): 親シード。
        n_draws (int): 必要な受理数。
        max_tries (int): 基底描画の上限。

    Returns:
        tuple: (受理された割り付けの行列, 試行回数)
    """
    seed = as_seed(seed)
    want = np.asarray(target.values, dtype=np.int64)
    accepted = []
    hits = 0
    tries = 0
    index = start
    while hits < n_draws:
        if tries >= max_tries:
            raise AcceptanceRateError(tries, hits, n_draws)
        stop = min(index + BLOCK_SIZE - (index % BLOCK_SIZE), start + max_tries)
        batch = draw_batch(base_spec, seed, index, stop)
        match = np.all(balance_fn.batch(batch) == want, axis=1)
        tries += batch.shape[0]
        index = stop
        if match.any():
            take = batch[match][: n_draws - hits]
            accepted.append(take)
            hits += take.shape[0]
    logger.debug("rejection sampler accepted %d of %d tries", hits, tries)
    return np.concatenate(accepted), tries


def rejection_sample(base_spec, balance_fn, target, seed, max_tries=DEFAULT_MAX_TRIES, start=0):
    """{w' : B(w', X) = target} から一様に1つ描画します。"""
    draws, _ = rejection_batch(base_spec, balance_fn, target, seed, 1, max_tries, start)
    return draws[0]
