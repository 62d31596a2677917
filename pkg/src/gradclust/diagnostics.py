"""Verifiers: fixed-point certificates, centroid checks, sampled assumption
validation, descent-trace checks, and the implicit Huber center solver.

Everything here is pure over immutable inputs; sampling operations take an
explicit seed and are deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .core import (
    Assignment,
    Centers,
    DataSet,
    DegenerateData,
    IterationTrace,
    NoConvergence,
)
from .divergences import DivergencePair
from .engine import _check_shapes, center_gradient

CENTROID_REL_TOL = 1e-6
TRIANGLE_TOL = 1e-9
IDENTITY_TOL = 1e-12
MONOTONE_LINK_TOL = 1e-12
LIPSCHITZ_SLACK = 1e-9
COCOERCIVE_SLACK = 1e-9
DESCENT_REL_SLACK = 1e-9


# ---------------------------------------------------------------------------
# Fixed-point certificate
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointReport:
    voronoi_ok: bool
    worst_margin: float          # max over points of g(own center) - g(best center)
    grad_norm: float
    is_fixed_point: bool
    assign_tol: float
    grad_tol: float
    centroidal_ok: bool | None = None        # mean-optimal and simplex kinds only
    centroidal_deviation: float | None = None


def check_fixed_point(centers: Centers, assignment: Assignment, data: DataSet,
                      pair: DivergencePair, assign_tol: float | None = None,
                      grad_tol: float | None = None) -> FixedPointReport:
    """Certify that (centers, assignment) is a fixed point of the iteration.

    The clustering must be metric-optimal for the centers (every point's own
    center attains the minimum within assign_tol) and the center gradient of
    the cost must vanish within grad_tol. Defaults: assign_tol scales with
    the certificate's distance magnitudes, grad_tol with the current cost.
    """
    _check_shapes(centers, data, assignment)
    dist = np.stack(
        [pair.metric(centers.vectors[i], data.points) for i in range(centers.k)],
        axis=1,
    )
    own = dist[np.arange(data.n), assignment.cluster_of]
    best = dist.min(axis=1)
    worst_margin = float(np.max(own - best))
    if assign_tol is None:
        assign_tol = 1e-9 * (1.0 + float(best.max(initial=0.0)))
    voronoi_ok = worst_margin <= assign_tol

    grad = center_gradient(centers, assignment, data, pair)
    grad_norm = float(np.linalg.norm(grad))
    if grad_tol is None:
        per_point = pair.loss(centers.vectors[assignment.cluster_of], data.points)
        grad_tol = 1e-8 * (1.0 + float(np.dot(data.weights, per_point)))

    centroidal_ok = None
    centroidal_dev = None
    if pair.kind in ("sqeuclid", "mahalanobis", "js"):
        centroidal_ok, centroidal_dev = check_centroidal(centers, assignment, data)

    return FixedPointReport(
        voronoi_ok=bool(voronoi_ok),
        worst_margin=worst_margin,
        grad_norm=grad_norm,
        is_fixed_point=bool(voronoi_ok and grad_norm <= grad_tol),
        assign_tol=float(assign_tol),
        grad_tol=float(grad_tol),
        centroidal_ok=centroidal_ok,
        centroidal_deviation=centroidal_dev,
    )


def check_centroidal(centers: Centers, assignment: Assignment,
                     data: DataSet) -> tuple[bool, float]:
    """True iff every nonempty cluster's center sits on its weighted mean."""
    _check_shapes(centers, data, assignment)
    ok = True
    max_dev = 0.0
    for i in range(centers.k):
        mask = assignment.cluster_of == i
        if not np.any(mask):
            continue
        w = data.weights[mask]
        mean = (w[:, None] * data.points[mask]).sum(axis=0) / w.sum()
        dev = float(np.linalg.norm(centers.vectors[i] - mean))
        max_dev = max(max_dev, dev)
        if dev > CENTROID_REL_TOL * (1.0 + float(np.linalg.norm(centers.vectors[i]))):
            ok = False
    return ok, max_dev


# ---------------------------------------------------------------------------
# Implicit Huber center
# ---------------------------------------------------------------------------

def huber_exact_center(points, weights, delta: float, init=None,
                       tol: float = 1e-10, max_iters: int = 10_000) -> np.ndarray:
    """Solve the self-consistent Huber center of one cluster.

    The stationarity condition is a weighted average in which points within
    delta of the center keep their weight and farther points are reweighted
    by delta over their distance; iterating that average (a reweighting
    scheme of the same family as the classic geometric-median iteration)
    converges to the cluster's loss minimizer. A far point that coincides
    with the iterate has distance 0 <= delta and is therefore treated as
    near, so no division by zero can occur.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = np.asarray(weights, dtype=np.float64)
    if pts.shape[0] == 0:
        raise DegenerateData("cluster is empty")
    x = (w[:, None] * pts).sum(axis=0) / w.sum() if init is None \
        else np.asarray(init, dtype=np.float64).copy()

    for _ in range(max_iters):
        r = np.linalg.norm(pts - x, axis=1)
        far = r > delta
        eff = np.where(far, w * delta / np.where(far, r, 1.0), w)
        x_new = (eff[:, None] * pts).sum(axis=0) / eff.sum()
        step = float(np.linalg.norm(x_new - x))
        x = x_new
        if step <= tol:
            grad = _huber_cluster_gradient(x, pts, w, delta)
            if float(np.linalg.norm(grad)) <= 10.0 * tol:
                return x
    raise NoConvergence(f"no fixed point within {max_iters} iterations")


def _huber_cluster_gradient(x, pts, w, delta):
    diff = x - pts
    r = np.linalg.norm(diff, axis=1, keepdims=True)
    scale = np.where(r <= delta, 1.0, delta / np.maximum(r, 1e-300))
    return (w[:, None] * diff * scale).sum(axis=0)


# ---------------------------------------------------------------------------
# Sampled assumption validation
# ---------------------------------------------------------------------------

def box_sampler(dim: int, low: float = -3.0, high: float = 3.0):
    """Uniform sampler over a box, for the unrestricted-domain pairs."""
    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(low, high, size=(n, dim))
    return sample


def simplex_sampler(dim: int, epsilon: float):
    """Uniform-flavored sampler over the eps-restricted probability simplex."""
    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        q = rng.dirichlet(np.ones(dim), size=n)
        return epsilon + (1.0 - dim * epsilon) * q
    return sample


@dataclass(frozen=True)
class AssumptionReport:
    kind: str
    n: int
    symmetry_violations: int
    symmetry_worst: float
    identity_violations: int
    identity_worst: float
    triangle_violations: int
    triangle_worst: float
    monotone_violations: int
    monotone_worst: float
    lipschitz_violations: int
    lipschitz_ratio_max: float
    lipschitz_bound: float
    cocoercive_violations: int
    cocoercive_worst_slack: float

    @property
    def total_violations(self) -> int:
        return (self.symmetry_violations + self.identity_violations
                + self.triangle_violations + self.monotone_violations
                + self.lipschitz_violations + self.cocoercive_violations)


def sample_assumptions(pair: DivergencePair, domain_sampler, n: int,
                       seed: int = 0) -> AssumptionReport:
    """Sample metric axioms, the monotone metric-loss link, the gradient
    Lipschitz ratio, and the co-coercivity inequality over the pair's domain.

    Returns violation counts and worst margins; shipped pairs are expected to
    report zero violations at any sample size.
    """
    rng = np.random.default_rng(seed)
    x = domain_sampler(rng, n)
    z = domain_sampler(rng, n)
    y = domain_sampler(rng, n)

    g_xy = pair.metric(x, y)
    g_yx = pair.metric(y, x)
    sym_tol = 1e-12 if pair.kind == "js" else 0.0
    sym_err = np.abs(g_xy - g_yx)
    sym_viol = int(np.count_nonzero(sym_err > sym_tol))

    g_xx = pair.metric(x, x)
    ident_viol = int(np.count_nonzero(g_xx > IDENTITY_TOL))
    distinct = np.linalg.norm(x - y, axis=1) > 1e-9
    ident_viol += int(np.count_nonzero(g_xy[distinct] <= IDENTITY_TOL))

    g_xz = pair.metric(x, z)
    g_zy = pair.metric(z, y)
    tri_margin = g_xy - (g_xz + g_zy)
    tri_viol = int(np.count_nonzero(tri_margin > TRIANGLE_TOL))

    f_xy = pair.loss(x, y)
    f_zy = pair.loss(z, y)
    g_zy_ = pair.metric(z, y)
    applies = g_xy <= g_zy_
    mono_margin = np.where(applies, f_xy - f_zy, -np.inf)
    mono_viol = int(np.count_nonzero(mono_margin > MONOTONE_LINK_TOL))

    dgrad = pair.grad(x, y) - pair.grad(z, y)
    dgrad_norm = np.linalg.norm(dgrad, axis=1)
    dx_norm = np.linalg.norm(x - z, axis=1)
    ok = dx_norm > 0
    ratio = dgrad_norm[ok] / dx_norm[ok]
    lip_max = float(ratio.max(initial=0.0))
    lip_viol = int(np.count_nonzero(ratio > pair.lipschitz + LIPSCHITZ_SLACK))

    inner = np.sum(dgrad * (x - z), axis=1)
    slack = inner - dgrad_norm ** 2 / pair.lipschitz
    coco_viol = int(np.count_nonzero(slack < -COCOERCIVE_SLACK))

    return AssumptionReport(
        kind=pair.kind,
        n=n,
        symmetry_violations=sym_viol,
        symmetry_worst=float(sym_err.max(initial=0.0)),
        identity_violations=ident_viol,
        identity_worst=float(g_xx.max(initial=0.0)),
        triangle_violations=tri_viol,
        triangle_worst=float(tri_margin.max(initial=-np.inf)),
        monotone_violations=mono_viol,
        monotone_worst=float(mono_margin.max(initial=-np.inf)),
        lipschitz_violations=lip_viol,
        lipschitz_ratio_max=lip_max,
        lipschitz_bound=pair.lipschitz,
        cocoercive_violations=coco_viol,
        cocoercive_worst_slack=float(slack.min(initial=np.inf)),
    )


# ---------------------------------------------------------------------------
# Trace verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceReport:
    monotone_ok: bool
    first_violation: int | None          # index t where cost increased
    grad_sum_ok: bool | None             # None when no step size applies
    grad_sum: float
    grad_sum_bound: float | None


def check_trace(trace: IterationTrace, alpha: float | None = None,
                L_bound: float | None = None) -> TraceReport:
    """Verify descent along a trace and, for gradient runs, the summability
    of squared gradient norms against (initial - final cost) / c(alpha)
    with c(alpha) = alpha * (1 - alpha * L / 2).
    """
    j = trace.cost
    slack = DESCENT_REL_SLACK * max(1.0, float(j[0]))
    increases = np.flatnonzero(np.diff(j) > slack)
    monotone_ok = increases.size == 0
    first_violation = int(increases[0]) + 1 if increases.size else None

    # the final record is not followed by a step, so its gradient is excluded
    grad_sum = float(np.sum(trace.grad_norm[:-1] ** 2))
    grad_sum_ok = None
    grad_sum_bound = None
    if alpha is not None and L_bound is not None:
        c = alpha * (1.0 - alpha * L_bound / 2.0)
        if c > 0:
            grad_sum_bound = (float(j[0]) - float(j[-1]) + slack) / c
            grad_sum_ok = grad_sum <= grad_sum_bound
    return TraceReport(
        monotone_ok=bool(monotone_ok),
        first_violation=first_violation,
        grad_sum_ok=grad_sum_ok,
        grad_sum=grad_sum,
        grad_sum_bound=grad_sum_bound,
    )
