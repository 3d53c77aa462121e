from .__about__ import __version__
from .balance import BalanceFunctionSpec, BalanceValue, coarsen, partition_size
from .core import (
    CovariateColumn,
    CovariateFrame,
    ObservedExperiment,
    ScienceTable,
    experiment_from_science,
    impute_under_sharp_null,
    observe,
)
from .engine import (
    Sidedness,
    TestResult,
    conditional_test,
    omnibus_test,
    p_value,
    pair_test,
    pairwise_tests,
    unconditional_test,
)
from .kmodes import ClusterModel, dissimilarity, elbow_curve, kmodes_fit, mode_of
from .sampler import AssignmentSpec, RngSeed, draw, enumerate_assignments, rejection_sample
from .simulation import SimConfig, SimResult, generate_science, rejection_rates, sweep, synthetic_marketing
from .stats import StatisticSpec

__all__ = [
    "AssignmentSpec",
    "BalanceFunctionSpec",
    "BalanceValue",
    "ClusterModel",
    "CovariateColumn",
    "CovariateFrame",
    "ObservedExperiment",
    "RngSeed",
    "ScienceTable",
    "Sidedness",
    "SimConfig",
    "SimResult",
    "StatisticSpec",
    "TestResult",
    "coarsen",
    "conditional_test",
    "dissimilarity",
    "draw",
    "elbow_curve",
    "enumerate_assignments",
    "experiment_from_science",
    "generate_science",
    "impute_under_sharp_null",
    "kmodes_fit",
    "mode_of",
    "observe",
    "omnibus_test",
    "p_value",
    "pair_test",
    "pairwise_tests",
    "partition_size",
    "rejection_rates",
    "rejection_sample",
    "sweep",
    "synthetic_marketing",
    "unconditional_test",
    "__version__",
]
