import numpy as np
import pytest

from condrand.balance import BalanceFunctionSpec
from condrand.core import CovariateFrame
from condrand.errors import DomainError
from condrand.kmodes import _record_cost, _reseed_empty, dissimilarity, elbow_curve, kmodes_fit, mode_of


def _three_groups(seed=0, per_group=20, arity=6, levels=5, noise=0.1):
    rng = np.random.default_rng(seed)
    rows = np.repeat(np.arange(3), per_group)[:, None] * np.ones((1, arity), dtype=np.int64)
    flip = rng.random(rows.shape) < noise
    rows[flip] = rng.integers(0, levels, flip.sum())
    return rows.astype(np.int64)


def test_dissimilarity():
    assert dissimilarity([0, 1, 2], [0, 2, 2]) == 1
    assert dissimilarity([3, 3], [3, 3]) == 0
    with pytest.raises(DomainError, match="arity"):
        dissimilarity([0, 1], [0, 1, 2])


def test_mode_of():
    np.testing.assert_array_equal(mode_of([[0, 1], [0, 2], [1, 2]]), [0, 2])
    # 同数なら小さいコード
    np.testing.assert_array_equal(mode_of([[1], [0]]), [0])
    with pytest.raises(DomainError):
        mode_of(np.empty((0, 2), dtype=np.int64))


def test_single_cluster_cost():
    rows = np.array([[0, 1], [0, 2], [1, 2]])
    model = kmodes_fit(rows, 1)
    np.testing.assert_array_equal(model.modes, [[0, 2]])
    assert model.cost == 2
    assert model.converged


def test_k_equals_distinct_rows_has_zero_cost():
    rows = np.array([[0, 0], [1, 1], [0, 0], [2, 1]])
    model = kmodes_fit(rows, 3)
    assert model.cost == 0
    assert len(set(model.labels.tolist())) == 3


def test_k_outside_range():
    rows = np.array([[0, 0], [0, 0], [1, 1]])
    with pytest.raises(DomainError, match="distinct rows"):
        kmodes_fit(rows, 3)
    with pytest.raises(DomainError):
        kmodes_fit(rows, 0)


def test_rejects_non_integer_codes():
    with pytest.raises(DomainError):
        kmodes_fit(np.array([[0.5, 1.0]]), 1)


def test_fit_is_deterministic():
    rows = _three_groups(seed=3)
    a = kmodes_fit(rows, 3, seed=9, n_init=4)
    b = kmodes_fit(rows, 3, seed=9, n_init=4, n_jobs=3)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.cost == b.cost
    assert a.seed == b.seed


@pytest.mark.parametrize("seed", range(100))
def test_cost_trace_never_rises(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(10, 120)), int(rng.integers(1, 9))
    levels = rng.integers(2, 7, size=p)
    rows = rng.integers(0, levels, size=(n, p))
    k = min(int(rng.integers(1, 9)), len(np.unique(rows, axis=0)))
    model = kmodes_fit(rows, k, seed=seed, n_init=2)
    assert all(b <= a for a, b in zip(model.cost_trace, model.cost_trace[1:]))
    assert model.cost == model.cost_trace[-1]
    assert model.cost == sum(dissimilarity(r, model.modes[c]) for r, c in zip(rows, model.labels))


def test_reseed_empty_moves_farthest_unit():
    rows = np.array([[0], [0], [1]])
    labels = np.array([0, 0, 0])
    modes = np.array([[0], [5]])
    labels = _reseed_empty(rows, labels, modes, 2)
    np.testing.assert_array_equal(labels, [0, 0, 1])
    np.testing.assert_array_equal(modes[1], [1])


def test_three_groups_elbow():
    rows = _three_groups()
    curve = elbow_curve(rows, range(1, 6), seed=1, restarts=30)
    c2, c3, c4 = curve.cost(2), curve.cost(3), curve.cost(4)
    assert c3 < c2
    assert c2 - c3 > c3 - c4
    assert [row["k"] for row in curve.to_rows()] == [1, 2, 3, 4, 5]
    with pytest.raises(KeyError):
        curve.cost(9)


def test_three_groups_recovered():
    rows = _three_groups(noise=0.05)
    model = kmodes_fit(rows, 3, seed=2, n_init=40)
    truth = np.repeat(np.arange(3), 20)
    # 各真のグループの大部分が同じクラスタに入る
    for g in range(3):
        assert np.bincount(model.labels[truth == g]).max() >= 18


def test_cluster_labels_as_balance_column():
    frame = CovariateFrame.from_codes(a=[0, 0, 1, 1, 2, 2], b=[1, 1, 0, 0, 2, 2])
    model = kmodes_fit(frame, 3)
    assert model.columns == ("a", "b")
    frame = frame.with_column(model.as_column())
    bound = BalanceFunctionSpec("cluster", ("cluster",)).bind(frame, 2)
    assert bound.n_strata == 3
    payload = model.to_dict()
    assert payload["cluster_sizes"] == [2, 2, 2]
    assert payload["columns"] == ["a", "b"]


def test_empty_k_range():
    with pytest.raises(DomainError):
        elbow_curve(np.array([[0], [1]]), [])


def test_record_cost_rejects_rise():
    trace = []
    _record_cost(trace, 7, 1)
    _record_cost(trace, 7, 2)
    with pytest.raises(AssertionError, match="rose from 7 to 8"):
        _record_cost(trace, 8, 3)
    assert trace == [7, 7]
