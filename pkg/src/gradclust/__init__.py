"""Metric-assignment clustering with single-gradient-step center updates.

Points are reassigned to their metric-nearest center, then each center takes
one gradient step on a pluggable smooth loss (or an exact mean step where the
mean is the minimizer). Includes fixed-point and descent verifiers plus an
experiment harness for noiseless and noisy benchmark runs.
"""

from .core import (
    Assignment,
    Centers,
    ClusteringError,
    DataSet,
    IterationTrace,
    StepConfig,
    make_dataset,
)
from .divergences import (
    DivergencePair,
    Huber,
    JensenShannon,
    Mahalanobis,
    SquaredEuclidean,
    make_pair,
)
from .engine import (
    RunResult,
    assign,
    center_gradient,
    cost,
    estimate_step_size,
    gradient_step,
    lloyd_step,
    run,
)
from .diagnostics import (
    AssumptionReport,
    FixedPointReport,
    TraceReport,
    check_centroidal,
    check_fixed_point,
    check_trace,
    huber_exact_center,
    sample_assumptions,
)
from .dataio import (
    accuracy,
    init_centers,
    inject_noise,
    load_idx,
    prepare,
    synth_mixture,
    synth_simplex_mixture,
)

__all__ = [
    "Assignment",
    "AssumptionReport",
    "Centers",
    "ClusteringError",
    "DataSet",
    "DivergencePair",
    "FixedPointReport",
    "Huber",
    "IterationTrace",
    "JensenShannon",
    "Mahalanobis",
    "RunResult",
    "SquaredEuclidean",
    "StepConfig",
    "TraceReport",
    "accuracy",
    "assign",
    "center_gradient",
    "check_centroidal",
    "check_fixed_point",
    "check_trace",
    "cost",
    "estimate_step_size",
    "gradient_step",
    "huber_exact_center",
    "init_centers",
    "inject_noise",
    "lloyd_step",
    "load_idx",
    "make_dataset",
    "make_pair",
    "prepare",
    "run",
    "sample_assumptions",
    "synth_mixture",
    "synth_simplex_mixture",
]

__version__ = "0.1.0"
