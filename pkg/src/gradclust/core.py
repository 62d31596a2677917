"""Shared domain types: datasets, centers, assignments, run configuration, traces.

All types are immutable after construction (arrays are marked read-only), so
they can be shared freely across threads.
"""

from dataclasses import dataclass, field
import numpy as np


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class ClusteringError(Exception):
    """Base class for all errors raised by this package."""


class DegenerateData(ClusteringError):
    """Dataset cannot be clustered (e.g. fewer than two distinct points)."""


class InvalidValue(ClusteringError):
    """A non-finite value (NaN/Inf) where a finite one is required."""


class InvalidWeight(ClusteringError):
    """A point weight that is not strictly positive."""


class DomainViolation(ClusteringError):
    """An argument outside the divergence's valid domain."""


class ShapeError(ClusteringError):
    """Inconsistent array shapes between centers, data, or assignments."""


class NumericalError(ClusteringError):
    """Non-finite state encountered during iteration."""


class UnsupportedUpdate(ClusteringError):
    """Requested center update has no valid form for this divergence."""


class UnsafeStepSize(ClusteringError):
    """Step size violates the stability bound and override was not given."""


class NoConvergence(ClusteringError):
    """Iterative solver exhausted its budget without converging."""


class FormatError(ClusteringError):
    """Malformed input file (bad magic, truncated payload, count mismatch)."""


class InsufficientData(ClusteringError):
    """Fewer samples available than requested."""


class MissingLabels(ClusteringError):
    """Operation requires ground-truth labels but the dataset has none."""


class EvalError(ClusteringError):
    """Label-based evaluation is not applicable (e.g. class/cluster mismatch)."""


class ConfigError(ClusteringError):
    """Malformed run configuration document."""


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

WEIGHT_SUM_TOL = 1e-12


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataSet:
    """N weighted points in d-dimensional space, optionally labeled.

    Labels are evaluation-only ground truth; the clustering loop never reads
    them (the labeled-sample initializer is the one exception).
    """

    points: np.ndarray          # (N, d)
    weights: np.ndarray         # (N,), strictly positive, sums to 1
    labels: np.ndarray | None = None  # (N,) ints, optional

    def __post_init__(self):
        object.__setattr__(self, "points", _readonly(np.asarray(self.points, dtype=np.float64)))
        object.__setattr__(self, "weights", _readonly(np.asarray(self.weights, dtype=np.float64)))
        if self.labels is not None:
            object.__setattr__(self, "labels", _readonly(np.asarray(self.labels, dtype=np.int64)))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class Centers:
    """K stacked d-dimensional cluster centers (row i is center i)."""

    vectors: np.ndarray  # (K, d)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"centers must be a K x d matrix, got shape {v.shape}")
        if v.shape[0] < 2:
            raise DegenerateData(f"need at least 2 clusters, got K={v.shape[0]}")
        if not np.all(np.isfinite(v)):
            raise InvalidValue("centers contain non-finite entries")
        object.__setattr__(self, "vectors", _readonly(v))

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class Assignment:
    """Total map from point index to cluster index in [0, K).

    Empty clusters are legal: the center of an empty cluster simply does not
    move during updates.
    """

    cluster_of: np.ndarray  # (N,) ints
    k: int

    def __post_init__(self):
        a = np.asarray(self.cluster_of, dtype=np.int64)
        if a.ndim != 1:
            raise ShapeError("assignment must be a flat index array")
        if self.k < 2:
            raise DegenerateData(f"need at least 2 clusters, got K={self.k}")
        if a.size and (a.min() < 0 or a.max() >= self.k):
            raise ShapeError("cluster index out of range")
        object.__setattr__(self, "cluster_of", _readonly(a))

    @property
    def n(self) -> int:
        return self.cluster_of.shape[0]

    def counts(self) -> np.ndarray:
        """Number of points per cluster, shape (K,)."""
        return np.bincount(self.cluster_of, minlength=self.k)

    def diff_count(self, other: "Assignment") -> int:
        """Number of points assigned differently from `other`."""
        if other.n != self.n:
            raise ShapeError("assignments cover different point counts")
        return int(np.count_nonzero(self.cluster_of != other.cluster_of))


@dataclass(frozen=True)
class StepConfig:
    """Configuration of the iteration loop.

    grad_tol=None resolves at run time to 1e-8 * (1 + initial cost), the
    finite-precision stand-in for an exactly vanishing gradient.
    """

    alpha: float = 1.0
    max_iters: int = 10_000
    grad_tol: float | None = None
    seed: int = 0
    update_rule: str = "gradient"        # "gradient" | "lloyd"
    tie_rule: str = "sticky-then-lowest-index"
    unsafe_alpha: bool = False           # skip the alpha < 2/L guard
    reseed_empty: bool = False           # off-theory: re-aim empty clusters

    def __post_init__(self):
        if not (self.alpha > 0):
            raise InvalidValue(f"alpha must be positive, got {self.alpha}")
        if self.max_iters < 0:
            raise InvalidValue(f"max_iters must be >= 0, got {self.max_iters}")
        if self.grad_tol is not None and not (self.grad_tol > 0):
            raise InvalidValue(f"grad_tol must be positive, got {self.grad_tol}")
        if self.update_rule not in ("gradient", "lloyd"):
            raise InvalidValue(f"unknown update rule {self.update_rule!r}")
        if self.tie_rule != "sticky-then-lowest-index":
            raise InvalidValue(f"unsupported tie rule {self.tie_rule!r}")
        if not (0 <= int(self.seed) < 2 ** 64):
            raise InvalidValue("seed must fit in 64 unsigned bits")


@dataclass(frozen=True)
class IterationTrace:
    """Per-iteration record of the run plus the final state.

    Records are indexed by consecutive t starting at 0. cost[t] and
    grad_norm[t] are evaluated on the state (x_t, C_{t+1}), i.e. right after
    the reassignment at iteration t; reassigned[t] counts points that changed
    cluster at that reassignment (all N at t=0).
    """

    cost: np.ndarray                 # (T,)
    grad_norm: np.ndarray            # (T,)
    reassigned: np.ndarray           # (T,) ints
    accuracy: np.ndarray | None      # (T,) or None when unlabeled
    final_centers: Centers
    final_assignment: Assignment
    termination_reason: str          # "fixed_point" | "max_iters"
    projections: tuple[int, ...] = field(default=())  # iters where a center
                                                      # was projected back to
                                                      # the simplex domain

    def __post_init__(self):
        object.__setattr__(self, "cost", _readonly(np.asarray(self.cost, dtype=np.float64)))
        object.__setattr__(self, "grad_norm", _readonly(np.asarray(self.grad_norm, dtype=np.float64)))
        object.__setattr__(self, "reassigned", _readonly(np.asarray(self.reassigned, dtype=np.int64)))
        if self.accuracy is not None:
            object.__setattr__(self, "accuracy", _readonly(np.asarray(self.accuracy, dtype=np.float64)))
        if self.termination_reason not in ("fixed_point", "max_iters"):
            raise InvalidValue(f"unknown termination reason {self.termination_reason!r}")

    def __len__(self) -> int:
        return self.cost.shape[0]


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------

def make_dataset(points, weights=None, labels=None) -> DataSet:
    """Build a validated DataSet.

    Weights default to the uniform 1/N and are otherwise normalized to sum
    to one. Raises DegenerateData if all points coincide or N < 2,
    InvalidValue on non-finite entries, InvalidWeight on non-positive weights.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ShapeError(f"points must be an N x d matrix, got shape {pts.shape}")
    n = pts.shape[0]
    if n < 2:
        raise DegenerateData(f"need at least 2 points, got N={n}")
    if not np.all(np.isfinite(pts)):
        raise InvalidValue("points contain non-finite entries")
    if not np.any(np.ptp(pts, axis=0) > 0):
        raise DegenerateData("all points are identical")

    if weights is None:
        w = np.full(n, 1.0 / n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise ShapeError(f"weights must have shape ({n},), got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InvalidValue("weights contain non-finite entries")
        if np.any(w <= 0):
            raise InvalidWeight("weights must be strictly positive")
        w = w / w.sum()
        if np.any(w <= 0):
            raise InvalidWeight("weight underflowed to zero after normalization")
    assert abs(w.sum() - 1.0) <= WEIGHT_SUM_TOL

    lab = None
    if labels is not None:
        lab = np.asarray(labels, dtype=np.int64)
        if lab.shape != (n,):
            raise ShapeError(f"labels must have shape ({n},), got {lab.shape}")

    return DataSet(points=pts, weights=w, labels=lab)
