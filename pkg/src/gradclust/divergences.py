"""Divergence pairs: an assignment metric plus a smooth loss with its gradient.

Each pair couples a true metric (used to reassign points) with a loss that is
a nondecreasing function of that metric (used to move centers), and carries an
upper bound on the Lipschitz constant of the loss gradient, which governs the
admissible step-size range of the gradient update.

Shipped pairs:
  SquaredEuclidean   g = ||x-y||,        f = 0.5*||x-y||^2,          L = 1
  Mahalanobis(A)     g = ||x-y||_A,      f = 0.5*(x-y)'A(x-y),       L = lam_max(A)
  Huber(delta)       g = ||x-y||,        f = huber(g),               L = 2
  JensenShannon(eps) g = sqrt(JS(y,x)),  f = JS(y,x) on the eps-     L = 1/eps
                                         restricted simplex

All operations broadcast over leading axes: inputs of shape (..., d) give
values of shape (...) and gradients of shape (..., d).
"""

import numpy as np

from .core import DomainViolation, InvalidValue, ShapeError

SIMPLEX_SUM_TOL = 1e-9
SIMPLEX_COMP_TOL = 1e-12
SYMMETRY_TOL = 1e-12


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidValue("non-finite input")


class DivergencePair:
    """Base interface. Subclasses are immutable and safe to share."""

    kind: str

    @property
    def lipschitz(self) -> float:
        """Upper bound on the gradient Lipschitz constant of the loss."""
        raise NotImplementedError

    def metric(self, x, y, check_domain: bool = True) -> np.ndarray:
        """Assignment distance g(x, y); a metric on the pair's domain."""
        raise NotImplementedError

    def loss(self, x, y, check_domain: bool = True) -> np.ndarray:
        """Center loss f(x, y), nondecreasing in metric(x, y)."""
        raise NotImplementedError

    def grad(self, x, y, check_domain: bool = True) -> np.ndarray:
        """Gradient of the loss with respect to its first argument."""
        raise NotImplementedError

    def validate_points(self, pts: np.ndarray) -> None:
        """Raise DomainViolation if any point lies outside the domain."""
        if not np.all(np.isfinite(pts)):
            raise InvalidValue("non-finite point")

    def __repr__(self):
        return f"{type(self).__name__}()"


class SquaredEuclidean(DivergencePair):
    """Plain K-means pair: Euclidean metric, half squared distance loss."""

    kind = "sqeuclid"

    @property
    def lipschitz(self) -> float:
        return 1.0

    def metric(self, x, y, check_domain=True):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if check_domain:
            _check_finite(x, y)
        return np.linalg.norm(x - y, axis=-1)

    def loss(self, x, y, check_domain=True):
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        if check_domain:
            _check_finite(d)
        return 0.5 * np.sum(d * d, axis=-1)

    def grad(self, x, y, check_domain=True):
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        if check_domain:
            _check_finite(d)
        return d


class Mahalanobis(DivergencePair):
    """Metric ||x-y||_A with loss 0.5*(x-y)'A(x-y) for symmetric PD A.

    The Cholesky factor and the largest eigenvalue are computed once at
    construction; the eigenvalue feeds the step-size bound.
    """

    kind = "mahalanobis"

    def __init__(self, matrix):
        a = np.asarray(matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError(f"matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidValue("matrix contains non-finite entries")
        if np.max(np.abs(a - a.T)) > SYMMETRY_TOL:
            raise InvalidValue("matrix is not symmetric")
        a = 0.5 * (a + a.T)
        eigvals = np.linalg.eigvalsh(a)
        if eigvals[0] <= 0:
            raise InvalidValue("matrix is not positive definite")
        self.matrix = a
        self.matrix.flags.writeable = False
        self._chol = np.linalg.cholesky(a)  # A = L L'
        self._chol.flags.writeable = False
        self._lam_max = float(eigvals[-1])

    @property
    def lipschitz(self) -> float:
        return self._lam_max

    def metric(self, x, y, check_domain=True):
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        if check_domain:
            _check_finite(d)
        return np.linalg.norm(d @ self._chol, axis=-1)

    def loss(self, x, y, check_domain=True):
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        if check_domain:
            _check_finite(d)
        t = d @ self._chol
        return 0.5 * np.sum(t * t, axis=-1)

    def grad(self, x, y, check_domain=True):
        d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        if check_domain:
            _check_finite(d)
        return d @ self.matrix

    def __repr__(self):
        return f"Mahalanobis(d={self.matrix.shape[0]})"


class Huber(DivergencePair):
    """Euclidean metric with the Huber loss of the distance.

    Quadratic within radius delta, linear beyond; the gradient is the
    residual clipped to norm delta, which is what gives outlier robustness.
    """

    kind = "huber"

    def __init__(self, delta: float):
        if not (delta > 0) or not np.isfinite(delta):
            raise InvalidValue(f"delta must be positive, got {delta}")
        self.delta = float(delta)

    @property
    def lipschitz(self) -> float:
        return 2.0

    def metric(self, x, y, check_domain=True):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if check_domain:
            _check_finite(x, y)
        return np.linalg.norm(x - y, axis=-1)

    def loss(self, x, y, check_domain=True):
        r = self.metric(x, y, check_domain=check_domain)
        d = self.delta
        return np.where(r <= d, 0.5 * r * r, d * r - 0.5 * d * d)

    def grad(self, x, y, check_domain=True):
        diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
        if check_domain:
            _check_finite(diff)
        r = np.linalg.norm(diff, axis=-1, keepdims=True)
        # r = 0 falls in the quadratic branch, so the clip factor is never 0/0
        scale = np.where(r <= self.delta, 1.0, self.delta / np.maximum(r, 1e-300))
        return diff * scale

    def __repr__(self):
        return f"Huber(delta={self.delta})"


class JensenShannon(DivergencePair):
    """Jensen-Shannon divergence on the restricted probability simplex.

    The domain is the set of probability vectors with every component at
    least eps; there the loss is smooth with gradient Lipschitz constant
    1/eps and its square root is a metric.
    """

    kind = "js"

    def __init__(self, epsilon: float):
        if not (0 < epsilon < 1) or not np.isfinite(epsilon):
            raise InvalidValue(f"epsilon must lie in (0, 1), got {epsilon}")
        self.epsilon = float(epsilon)

    @property
    def lipschitz(self) -> float:
        return 1.0 / self.epsilon

    def _check_simplex(self, *arrays):
        for a in arrays:
            a = np.asarray(a, dtype=np.float64)
            d = a.shape[-1]
            if self.epsilon * d >= 1.0:
                raise DomainViolation(
                    f"restricted simplex is empty for eps={self.epsilon}, d={d}"
                )
            if not np.all(np.isfinite(a)):
                raise InvalidValue("non-finite input")
            if np.any(a < self.epsilon - SIMPLEX_COMP_TOL):
                raise DomainViolation("component below eps on restricted simplex")
            sums = np.sum(a, axis=-1)
            if np.any(np.abs(sums - 1.0) > SIMPLEX_SUM_TOL):
                raise DomainViolation("coordinates do not sum to one")

    def validate_points(self, pts: np.ndarray) -> None:
        self._check_simplex(pts)

    def metric(self, x, y, check_domain=True):
        return np.sqrt(np.maximum(self.loss(x, y, check_domain=check_domain), 0.0))

    def loss(self, x, y, check_domain=True):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if check_domain:
            self._check_simplex(x, y)
        m = 0.5 * (x + y)
        terms = y * np.log(y / m) + x * np.log(x / m)
        return 0.5 * np.sum(terms, axis=-1)

    def grad(self, x, y, check_domain=True):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if check_domain:
            self._check_simplex(x, y)
        return 0.5 * np.log(2.0 * x / (x + y))

    def project(self, x: np.ndarray) -> np.ndarray:
        """Map a vector back into the restricted simplex.

        Components are floored at eps and the excess mass above the floor is
        rescaled so the total is exactly one. Idempotent on feasible points
        up to rounding.
        """
        x = np.asarray(x, dtype=np.float64)
        d = x.shape[-1]
        if self.epsilon * d >= 1.0:
            raise DomainViolation(
                f"restricted simplex is empty for eps={self.epsilon}, d={d}"
            )
        excess = np.maximum(x - self.epsilon, 0.0)
        total = np.sum(excess, axis=-1, keepdims=True)
        budget = 1.0 - d * self.epsilon
        out = np.where(
            total > 0.0,
            self.epsilon + excess * (budget / np.where(total > 0.0, total, 1.0)),
            1.0 / d,
        )
        return out

    def in_domain(self, x: np.ndarray) -> bool:
        """True when x satisfies the domain tolerances."""
        try:
            self._check_simplex(x)
        except DomainViolation:
            return False
        return True

    def __repr__(self):
        return f"JensenShannon(epsilon={self.epsilon})"


PAIR_KINDS = ("sqeuclid", "mahalanobis", "huber", "js")


def make_pair(kind: str, *, delta: float | None = None,
              epsilon: float | None = None, matrix=None) -> DivergencePair:
    """Factory keyed by the CLI kind names."""
    if kind == "sqeuclid":
        return SquaredEuclidean()
    if kind == "mahalanobis":
        if matrix is None:
            raise InvalidValue("mahalanobis pair needs a matrix")
        return Mahalanobis(matrix)
    if kind == "huber":
        if delta is None:
            raise InvalidValue("huber pair needs delta")
        return Huber(delta)
    if kind == "js":
        if epsilon is None:
            raise InvalidValue("js pair needs epsilon")
        return JensenShannon(epsilon)
    raise InvalidValue(f"unknown pair kind {kind!r}; expected one of {PAIR_KINDS}")
