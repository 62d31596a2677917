"""The alternating clustering loop: metric reassignment plus one center update.

One iteration reassigns every point to its metric-nearest center (sticky
tie-breaking), then moves each center either by a single gradient step on the
summed loss of its cluster or, for pairs whose exact minimizer is the weighted
mean, by the mean itself.
"""

from dataclasses import dataclass

import numpy as np

from .core import (
    Assignment,
    Centers,
    DataSet,
    InvalidValue,
    IterationTrace,
    NumericalError,
    ShapeError,
    StepConfig,
    UnsafeStepSize,
    UnsupportedUpdate,
)
from .divergences import DivergencePair, JensenShannon

TIE_REL_TOL = 1e-12

# pairs whose per-cluster loss is exactly minimized by the weighted mean
MEAN_OPTIMAL_KINDS = ("sqeuclid", "mahalanobis")


@dataclass(frozen=True)
class RunResult:
    """Everything a run produced, sufficient for offline verification."""

    trace: IterationTrace
    final_centers: Centers
    final_assignment: Assignment
    alpha_used: float | None     # None for the mean update rule
    L_bound_used: float


def _check_shapes(centers: Centers, data: DataSet, assignment: Assignment | None = None):
    if centers.dim != data.dim:
        raise ShapeError(
            f"centers have dimension {centers.dim}, data has {data.dim}"
        )
    if assignment is not None:
        if assignment.n != data.n:
            raise ShapeError(
                f"assignment covers {assignment.n} points, data has {data.n}"
            )
        if assignment.k != centers.k:
            raise ShapeError(
                f"assignment has K={assignment.k}, centers have K={centers.k}"
            )


def _metric_matrix(vectors: np.ndarray, points: np.ndarray, pair: DivergencePair) -> np.ndarray:
    """Distances from every point to every center, shape (N, K)."""
    cols = [pair.metric(vectors[i], points, check_domain=False) for i in range(vectors.shape[0])]
    return np.stack(cols, axis=1)


def _assign_array(vectors, points, pair, prev: np.ndarray | None) -> np.ndarray:
    dist = _metric_matrix(vectors, points, pair)
    best = np.argmin(dist, axis=1)  # lowest index among exact minima
    if prev is not None:
        m = dist[np.arange(points.shape[0]), best]
        tol = TIE_REL_TOL * (1.0 + m)
        keep = dist[np.arange(points.shape[0]), prev] <= m + tol
        best = np.where(keep, prev, best)
    return best


def assign(centers: Centers, data: DataSet, pair: DivergencePair,
           prev: Assignment | None = None) -> Assignment:
    """Map each point to a cluster attaining the minimum metric.

    Ties are broken sticky-then-lowest-index: a point keeps its previous
    cluster whenever that cluster still attains the minimum within a relative
    tolerance, and otherwise takes the smallest attaining index. Deterministic.
    """
    _check_shapes(centers, data, prev)
    pair.validate_points(data.points)
    pair.validate_points(centers.vectors)
    prev_arr = prev.cluster_of if prev is not None else None
    return Assignment(_assign_array(centers.vectors, data.points, pair, prev_arr), centers.k)


def _cost_array(vectors, cluster_of, points, weights, pair) -> float:
    per_point = pair.loss(vectors[cluster_of], points, check_domain=False)
    return float(np.dot(weights, per_point))


def cost(centers: Centers, assignment: Assignment, data: DataSet,
         pair: DivergencePair) -> float:
    """Weighted total loss of the clustering; empty clusters contribute 0."""
    _check_shapes(centers, data, assignment)
    return _cost_array(centers.vectors, assignment.cluster_of, data.points,
                       data.weights, pair)


def _center_gradient_array(vectors, cluster_of, points, weights, pair) -> np.ndarray:
    per_point = pair.grad(vectors[cluster_of], points, check_domain=False)
    out = np.zeros_like(vectors)
    np.add.at(out, cluster_of, weights[:, None] * per_point)
    return out


def center_gradient(centers: Centers, assignment: Assignment, data: DataSet,
                    pair: DivergencePair) -> np.ndarray:
    """Per-center gradient of the cost, shape (K, d); zero rows for empty clusters."""
    _check_shapes(centers, data, assignment)
    return _center_gradient_array(centers.vectors, assignment.cluster_of,
                                  data.points, data.weights, pair)


def gradient_step(centers: Centers, grad: np.ndarray, alpha: float) -> Centers:
    """Move every center by -alpha * its gradient row."""
    if not (alpha > 0):
        raise InvalidValue(f"alpha must be positive, got {alpha}")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != centers.vectors.shape:
        raise ShapeError(
            f"gradient shape {grad.shape} does not match centers {centers.vectors.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient")
    return Centers(centers.vectors - alpha * grad)


def _lloyd_array(vectors, cluster_of, points, weights) -> np.ndarray:
    k = vectors.shape[0]
    mass = np.bincount(cluster_of, weights=weights, minlength=k)
    sums = np.zeros_like(vectors)
    np.add.at(sums, cluster_of, weights[:, None] * points)
    out = vectors.copy()
    nonempty = mass > 0
    out[nonempty] = sums[nonempty] / mass[nonempty, None]
    return out


def lloyd_step(centers: Centers, assignment: Assignment, data: DataSet) -> Centers:
    """Move every nonempty cluster's center to its weighted mean."""
    _check_shapes(centers, data, assignment)
    return Centers(_lloyd_array(centers.vectors, assignment.cluster_of,
                                data.points, data.weights))


def estimate_step_size(pair: DivergencePair, data: DataSet, mode: str = "theory",
                       safety: float = 1.0) -> float:
    """Step size from the smoothness bound, or the conservative 1/(2N).

    mode="theory": alpha = safety / L where L is the pair's gradient
    Lipschitz bound (cluster masses are at most 1, so L bounds the full
    cost's constant too); safety must lie in (0, 2) to stay below 2/L.
    mode="paper_mnist": alpha = 1/(2N), the far more conservative choice of
    the MNIST benchmark protocol this harness can reproduce.
    """
    if mode == "theory":
        if not (0 < safety < 2):
            raise InvalidValue(f"safety must lie in (0, 2), got {safety}")
        return safety / pair.lipschitz
    if mode == "paper_mnist":
        return 1.0 / (2.0 * data.n)
    raise InvalidValue(f"unknown step-size mode {mode!r}")


def _trace_accuracy_fn(data: DataSet, k: int):
    """Per-iteration accuracy closure, or None when labels are unusable."""
    if data.labels is None:
        return None
    if np.unique(data.labels).size != k:
        return None
    from .dataio import accuracy as _accuracy  # local import: dataio is a consumer otherwise

    labels = data.labels

    def fn(cluster_of: np.ndarray) -> float:
        return _accuracy(Assignment(cluster_of, k), labels)

    return fn


def _reseed_empty(vectors, cluster_of, points, pair) -> np.ndarray:
    """Off-theory: aim each empty cluster at the point farthest from its center.

    Deterministic; breaks the descent guarantee and is therefore opt-in.
    """
    k = vectors.shape[0]
    counts = np.bincount(cluster_of, minlength=k)
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return vectors
    out = vectors.copy()
    dist_to_own = pair.metric(vectors[cluster_of], points, check_domain=False)
    order = np.argsort(-dist_to_own, kind="stable")
    for slot, ci in enumerate(empties):
        out[ci] = points[order[slot % order.size]]
    return out


def run(data: DataSet, pair: DivergencePair, init: Centers,
        config: StepConfig) -> RunResult:
    """Iterate reassignment and center updates until a fixed point or budget.

    Stops with termination_reason="fixed_point" when an iteration reassigns
    no point and the gradient norm is at most grad_tol; otherwise runs
    max_iters center updates and stops with "max_iters". The trace records
    cost, gradient norm, reassignment count and (when labels allow) accuracy
    at every iteration, including the final evaluation.

    Restricted-simplex pairs are a special case: the raw gradient generally
    cannot vanish on the simplex (its stationary point lies off the sum-one
    hyperplane), so each step is projected back into the domain and the run
    also stops once the projected step moves the centers by at most
    alpha * grad_tol, i.e. at a fixed point of the projected update. For the
    unprojected rule the step length is exactly alpha times the gradient
    norm, so this is the same criterion. Projected runs are flagged in
    trace.projections; their final raw gradient norm is typically nonzero.
    """
    _check_shapes(init, data)
    pair.validate_points(data.points)
    pair.validate_points(init.vectors)

    L = pair.lipschitz
    if config.update_rule == "gradient":
        if not config.unsafe_alpha and not (config.alpha < 2.0 / L):
            raise UnsafeStepSize(
                f"alpha={config.alpha} is not below 2/L={2.0 / L}; "
                "pass unsafe_alpha to override"
            )
    else:  # lloyd
        if pair.kind not in MEAN_OPTIMAL_KINDS:
            raise UnsupportedUpdate(
                f"mean update is not the exact minimizer for pair kind {pair.kind!r}"
            )

    points = data.points
    weights = data.weights
    x = init.vectors.copy()
    k = init.k
    prev: np.ndarray | None = None
    is_js = isinstance(pair, JensenShannon)
    acc_fn = _trace_accuracy_fn(data, k)

    costs: list[float] = []
    gnorms: list[float] = []
    reassigned: list[int] = []
    accuracies: list[float] = []
    projections: list[int] = []
    grad_tol = config.grad_tol
    termination = "max_iters"

    for t in range(config.max_iters + 1):
        a = _assign_array(x, points, pair, prev)
        n_re = data.n if prev is None else int(np.count_nonzero(a != prev))
        j = _cost_array(x, a, points, weights, pair)
        g = _center_gradient_array(x, a, points, weights, pair)
        gn = float(np.linalg.norm(g))
        if not np.isfinite(j) or not np.isfinite(gn):
            raise NumericalError(f"non-finite cost or gradient at iteration {t}")

        costs.append(j)
        gnorms.append(gn)
        reassigned.append(n_re)
        if acc_fn is not None:
            accuracies.append(acc_fn(a))

        if grad_tol is None:
            grad_tol = 1e-8 * (1.0 + costs[0])

        stationary = gn <= grad_tol
        x_next = None
        clamped = False
        if config.update_rule == "gradient" and is_js:
            raw = x - config.alpha * g
            clamped = not pair.in_domain(raw)
            x_next = pair.project(raw)
            movement = float(np.linalg.norm(x_next - x))
            stationary = stationary or movement <= config.alpha * grad_tol

        if n_re == 0 and stationary:
            termination = "fixed_point"
            break
        if t == config.max_iters:
            termination = "max_iters"
            break

        if config.update_rule == "lloyd":
            x = _lloyd_array(x, a, points, weights)
        elif x_next is not None:
            if clamped:
                projections.append(t)
            x = x_next
        else:
            x = x - config.alpha * g
        if config.reseed_empty:
            x = _reseed_empty(x, a, points, pair)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite centers after iteration {t}")
        prev = a

    final_centers = Centers(x)
    final_assignment = Assignment(a, k)
    trace = IterationTrace(
        cost=np.array(costs),
        grad_norm=np.array(gnorms),
        reassigned=np.array(reassigned),
        accuracy=np.array(accuracies) if acc_fn is not None else None,
        final_centers=final_centers,
        final_assignment=final_assignment,
        termination_reason=termination,
        projections=tuple(projections),
    )
    return RunResult(
        trace=trace,
        final_centers=final_centers,
        final_assignment=final_assignment,
        alpha_used=config.alpha if config.update_rule == "gradient" else None,
        L_bound_used=L,
    )
