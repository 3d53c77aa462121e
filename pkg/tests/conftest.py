import os
import sys

import numpy as np
import pytest

# srcディレクトリをパスに追加（パッケージ未インストール時の開発用）
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '../src')))

from condrand.balance import BalanceFunctionSpec
from condrand.core import CovariateColumn, CovariateFrame, ObservedExperiment
from condrand.erratum import erratum_experiment


@pytest.fixture
def erratum_obs():
    """N=5, 層 x=(1,1,1,2,2), w=(1,0,0,1,0) の反例。"""
    return erratum_experiment()


@pytest.fixture
def stratum_balance():
    return BalanceFunctionSpec("strata", ("x",))


@pytest.fixture
def make_obs():
    """(割り付け, 結果, 共変量コード...) から観測実験を作るファクトリ。"""
    def factory(assignment, outcomes, n_arms=None, **covariates):
        w = np.asarray(assignment)
        columns = tuple(
            CovariateColumn(name, int(np.max(codes)) + 1, codes) for name, codes in covariates.items()
        )
        k = n_arms if n_arms is not None else max(int(w.max()) + 1, 2)
        return ObservedExperiment(w, outcomes, CovariateFrame(columns), k)
    return factory
