"""Dataset ingestion (IDX and CSV), normalization, noise injection, synthetic
mixtures, center initialization strategies, and label-based accuracy scoring.
"""

import csv
import itertools
import struct
from dataclasses import dataclass

import numpy as np

from .core import (
    Centers,
    DataSet,
    Assignment,
    DegenerateData,
    EvalError,
    FormatError,
    InsufficientData,
    InvalidValue,
    MissingLabels,
    make_dataset,
)
from .divergences import DivergencePair, SquaredEuclidean

IDX_IMAGE_MAGIC = 0x00000803  # 2051: unsigned-byte rank-3 tensor
IDX_LABEL_MAGIC = 0x00000801  # 2049: unsigned-byte rank-1 tensor


@dataclass(frozen=True)
class RawData:
    """Unnormalized samples straight from a file, prior to `prepare`."""

    points: np.ndarray           # (N, d), raw values
    labels: np.ndarray | None    # (N,) ints or None


# ---------------------------------------------------------------------------
# IDX / CSV ingestion
# ---------------------------------------------------------------------------

def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path) -> RawData:
    """Load a big-endian IDX image/label file pair.

    Image files carry magic 2051 followed by count, rows, cols; label files
    carry magic 2049 followed by count. Pixel payloads are flattened
    row-major into d = rows*cols columns. Raises FormatError on a bad magic,
    a truncated or oversized payload, or an image/label count mismatch.
    """
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lab_buf = f.read()

    magic = _read_be32(img_buf, 0, str(images_path))
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{images_path}: bad image magic {magic}")
    n = _read_be32(img_buf, 4, str(images_path))
    rows = _read_be32(img_buf, 8, str(images_path))
    cols = _read_be32(img_buf, 12, str(images_path))
    if len(img_buf) != 16 + n * rows * cols:
        raise FormatError(
            f"{images_path}: payload is {len(img_buf) - 16} bytes, "
            f"expected {n * rows * cols}"
        )
    magic = _read_be32(lab_buf, 0, str(labels_path))
    if magic != IDX_LABEL_MAGIC:
        raise FormatError(f"{labels_path}: bad label magic {magic}")
    n_lab = _read_be32(lab_buf, 4, str(labels_path))
    if len(lab_buf) != 8 + n_lab:
        raise FormatError(
            f"{labels_path}: payload is {len(lab_buf) - 8} bytes, expected {n_lab}"
        )
    if n != n_lab:
        raise FormatError(f"image count {n} != label count {n_lab}")

    pixels = np.frombuffer(img_buf, dtype=np.uint8, offset=16)
    points = pixels.reshape(n, rows * cols).astype(np.float64)
    labels = np.frombuffer(lab_buf, dtype=np.uint8, offset=8).astype(np.int64)
    return RawData(points=points, labels=labels)


def load_csv(path, weights_path=None) -> tuple[RawData, np.ndarray | None]:
    """Load a dataset CSV with header x0,...,x{d-1}[,label].

    Returns the raw data and, when a weights file (one float per line) is
    given, the weight vector.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        has_label = header[-1] == "label"
        d = len(header) - (1 if has_label else 0)
        expected = [f"x{i}" for i in range(d)] + (["label"] if has_label else [])
        if header != expected:
            raise FormatError(f"{path}: unexpected header {header!r}")
        rows = list(reader)

    points = np.empty((len(rows), d))
    labels = np.empty(len(rows), dtype=np.int64) if has_label else None
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise FormatError(f"{path}: row {i + 2} has {len(row)} fields")
        points[i] = [float(v) for v in row[:d]]
        if has_label:
            labels[i] = int(float(row[d]))

    weights = None
    if weights_path is not None:
        with open(weights_path, encoding="utf-8") as f:
            weights = np.array([float(line) for line in f if line.strip()])
    return RawData(points=points, labels=labels), weights


def write_csv(path, points: np.ndarray, labels: np.ndarray | None = None) -> None:
    """Write points (and labels) in the CSV layout load_csv reads back."""
    points = np.asarray(points, dtype=np.float64)
    header = [f"x{i}" for i in range(points.shape[1])]
    if labels is not None:
        header.append("label")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for i in range(points.shape[0]):
            row = [repr(float(v)) for v in points[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            writer.writerow(row)


# ---------------------------------------------------------------------------
# Preparation and corruption
# ---------------------------------------------------------------------------

def prepare(raw: RawData, classes, counts) -> DataSet:
    """Select per-class sample prefixes and scale into [0, 1].

    Scaling divides by the maximum over the FULL raw set before selection,
    so which classes are chosen does not change the scale. For each requested
    class, the first counts[c] samples in file order are taken; the output
    concatenates classes in the requested order with uniform weights.
    """
    if raw.labels is None:
        raise MissingLabels("prepare needs labeled raw data")
    classes = list(classes)
    if not classes:
        raise InsufficientData("no classes requested")
    if isinstance(counts, int):
        counts = [counts] * len(classes)
    counts = list(counts)
    if len(counts) != len(classes):
        raise InsufficientData("classes and counts differ in length")

    peak = float(raw.points.max(initial=0.0))
    if peak <= 0:
        raise DegenerateData("raw data has no positive values to scale by")

    chunks, label_chunks = [], []
    for cls, cnt in zip(classes, counts):
        if cnt < 1:
            raise InsufficientData(f"requested {cnt} samples of class {cls}")
        idx = np.flatnonzero(raw.labels == cls)
        if idx.size < cnt:
            raise InsufficientData(
                f"class {cls} has {idx.size} samples, requested {cnt}"
            )
        take = idx[:cnt]
        chunks.append(raw.points[take] / peak)
        label_chunks.append(raw.labels[take])
    return make_dataset(np.concatenate(chunks), None, np.concatenate(label_chunks))


def inject_noise(data: DataSet, fraction: float, variance: float,
                 rng_seed: int) -> DataSet:
    """Add zero-mean Gaussian noise to a fraction of points in each class.

    Exactly floor(fraction * class size) points per class are drawn without
    replacement and every coordinate of each drawn point is perturbed with
    variance `variance`. Unlabeled data is treated as a single class. No
    clamping is applied, so large variances produce genuine outliers.
    Weights and labels pass through unchanged; deterministic given the seed.
    """
    if not (0.0 <= fraction <= 1.0):
        raise InvalidValue(f"fraction must lie in [0, 1], got {fraction}")
    if variance < 0:
        raise InvalidValue(f"variance must be nonnegative, got {variance}")

    rng = np.random.default_rng(rng_seed)
    points = data.points.copy()
    if data.labels is None:
        strata = [np.arange(data.n)]
    else:
        strata = [np.flatnonzero(data.labels == c) for c in np.unique(data.labels)]
    std = float(np.sqrt(variance))
    for idx in strata:
        m = int(np.floor(fraction * idx.size))
        if m == 0:
            continue
        chosen = rng.choice(idx, size=m, replace=False)
        points[chosen] += rng.normal(0.0, std, size=(m, data.dim))
    return DataSet(points=points, weights=data.weights, labels=data.labels)


# ---------------------------------------------------------------------------
# Synthetic mixtures
# ---------------------------------------------------------------------------

def synth_mixture(k: int, dim: int, per_cluster_n: int, center_separation: float,
                  cluster_stddev: float, rng_seed: int) -> DataSet:
    """K isotropic Gaussian blobs with centers at multiples of basis vectors.

    Component j is centered at center_separation * j * e_{j mod dim}; labels
    record the generating component. Deterministic given the seed.
    """
    if k < 2:
        raise DegenerateData(f"need at least 2 components, got {k}")
    if not (center_separation > 0):
        raise InvalidValue("center separation must be positive")
    rng = np.random.default_rng(rng_seed)
    chunks, labels = [], []
    for j in range(k):
        center = np.zeros(dim)
        center[j % dim] = center_separation * j
        chunks.append(center + rng.normal(0.0, cluster_stddev, size=(per_cluster_n, dim)))
        labels.append(np.full(per_cluster_n, j))
    return make_dataset(np.concatenate(chunks), None, np.concatenate(labels))


def synth_simplex_mixture(k: int, dim: int, per_cluster_n: int, epsilon: float,
                          concentration: float, rng_seed: int) -> DataSet:
    """K clusters of probability vectors inside the eps-restricted simplex.

    Component j draws Dirichlet samples biased toward corner j mod dim and
    maps them affinely into the restricted simplex, so every point satisfies
    the componentwise eps floor exactly.
    """
    if k < 2:
        raise DegenerateData(f"need at least 2 components, got {k}")
    if not (0 < epsilon * dim < 1):
        raise InvalidValue(f"epsilon={epsilon} leaves no room in dimension {dim}")
    rng = np.random.default_rng(rng_seed)
    chunks, labels = [], []
    for j in range(k):
        alpha = np.ones(dim)
        alpha[j % dim] += concentration
        q = rng.dirichlet(alpha, size=per_cluster_n)
        chunks.append(epsilon + (1.0 - dim * epsilon) * q)
        labels.append(np.full(per_cluster_n, j))
    return make_dataset(np.concatenate(chunks), None, np.concatenate(labels))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

INIT_STRATEGIES = ("labeled_sample", "uniform_random", "kmeanspp")


def init_centers(strategy: str, data: DataSet, k: int, rng_seed: int,
                 pair: DivergencePair | None = None) -> Centers:
    """Pick K initial centers from the data.

    labeled_sample draws one uniform point per class (the first K classes in
    sorted label order); uniform_random draws K distinct points; kmeanspp
    seeds proportionally to weight times squared metric distance to the
    nearest already-chosen center, under the given pair's metric (Euclidean
    when no pair is given). Deterministic given the seed.
    """
    rng = np.random.default_rng(rng_seed)
    if strategy == "labeled_sample":
        if data.labels is None:
            raise MissingLabels("labeled_sample initialization needs labels")
        classes = np.unique(data.labels)
        if classes.size < k:
            raise MissingLabels(
                f"labeled_sample needs at least {k} classes, found {classes.size}"
            )
        idx = [rng.choice(np.flatnonzero(data.labels == c)) for c in classes[:k]]
        return Centers(data.points[np.array(idx)])

    if strategy == "uniform_random":
        idx = rng.choice(data.n, size=k, replace=False)
        return Centers(data.points[idx])

    if strategy == "kmeanspp":
        metric = (pair or SquaredEuclidean()).metric
        chosen = [int(rng.choice(data.n, p=data.weights))]
        d2 = metric(data.points[chosen[0]], data.points) ** 2
        for _ in range(1, k):
            mass = data.weights * d2
            total = mass.sum()
            if total <= 0:
                remaining = np.setdiff1d(np.arange(data.n), chosen)
                chosen.append(int(rng.choice(remaining)))
            else:
                chosen.append(int(rng.choice(data.n, p=mass / total)))
            d2 = np.minimum(d2, metric(data.points[chosen[-1]], data.points) ** 2)
        return Centers(data.points[np.array(chosen)])

    raise InvalidValue(f"unknown init strategy {strategy!r}; expected {INIT_STRATEGIES}")


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def accuracy(assignment: Assignment, labels) -> float:
    """Fraction of points whose cluster maps to their label under the best
    cluster-to-label bijection.

    Exhaustive over permutations up to K = 8, optimal bipartite matching
    beyond. Requires exactly K distinct labels.
    """
    labels = np.asarray(labels)
    classes, class_idx = np.unique(labels, return_inverse=True)
    k = assignment.k
    if classes.size != k:
        raise EvalError(
            f"need exactly {k} distinct labels, found {classes.size}"
        )
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (assignment.cluster_of, class_idx), 1)
    if k <= 8:
        best = max(
            sum(counts[i, p[i]] for i in range(k))
            for p in itertools.permutations(range(k))
        )
    else:
        from scipy.optimize import linear_sum_assignment

        rows, cols = linear_sum_assignment(-counts)
        best = counts[rows, cols].sum()
    return float(best) / assignment.n
