"""Intervention-target estimation in linear SEMs from covariance pairs.

The package estimates which nodes of a linear structural equation model
were softly intervened on — and the non-intervened parents of those
nodes — given only (estimates of) the second moments of an observational
and an interventional environment, by repeatedly estimating sparse
precision-matrix differences on small node subsets.

Layout: :mod:`cite.sem` (models, interventions, marginalization,
sampling), :mod:`cite.pde` (the sparse difference estimator),
:mod:`cite.estimator` (the staged pipeline), :mod:`cite.cpdag` (Meek
orientation machinery), :mod:`cite.oracle` (graph-theoretic ground
truth), :mod:`cite.bench` (synthetic experiments), :mod:`cite.cli`
(command line).
"""

from __future__ import annotations

__version__ = "0.1.0"

from .bench import (
    ComplexityStats,
    Metrics,
    TrialConfig,
    TrialResult,
    complexity_stats,
    evaluate,
    generate_er_sem,
    run_trial,
    sweep,
)
from .cpdag import Cpdag, cpdag_from_dag, meek_closure
from .estimator import (
    CiteConfig,
    ClassDecomposition,
    TargetEstimate,
    estimate_targets,
    refine_cpdag,
)
from .exceptions import CiteError
from .oracle import (
    AugmentedGraph,
    GroundTruth,
    brute_force_targets,
    d_separated,
    ground_truth_answers,
    interventional_cpdag,
    invariance_oracle,
)
from .pde import (
    AdmmConfig,
    CovariancePair,
    PrecisionDiff,
    complexity_constants,
    empirical_pair,
    estimate_precision_difference,
    exact_precision_difference,
)
from .sem import (
    Dag,
    InterventionSpec,
    LinearSem,
    apply_intervention,
    build_dag,
    check_i_faithfulness,
    population_covariance,
    restricted_sem,
    sample,
)

__all__ = [
    "__version__",
    "AdmmConfig",
    "AugmentedGraph",
    "CiteConfig",
    "CiteError",
    "ClassDecomposition",
    "ComplexityStats",
    "CovariancePair",
    "Cpdag",
    "Dag",
    "GroundTruth",
    "InterventionSpec",
    "LinearSem",
    "Metrics",
    "PrecisionDiff",
    "TargetEstimate",
    "TrialConfig",
    "TrialResult",
    "apply_intervention",
    "brute_force_targets",
    "build_dag",
    "check_i_faithfulness",
    "complexity_constants",
    "complexity_stats",
    "cpdag_from_dag",
    "d_separated",
    "empirical_pair",
    "estimate_precision_difference",
    "estimate_targets",
    "evaluate",
    "exact_precision_difference",
    "generate_er_sem",
    "ground_truth_answers",
    "interventional_cpdag",
    "invariance_oracle",
    "meek_closure",
    "population_covariance",
    "refine_cpdag",
    "restricted_sem",
    "run_trial",
    "sample",
    "sweep",
]
