"""
Probability measures, samplers, cost functions and dataset ingestion.

Three kinds of measure feed the solvers:

    DiscreteMeasure   weighted point cloud (optionally labeled), sampled by index
    GaussianMeasure   N(mean, covariance), sampled through its Cholesky factor
    GaussianMixture   weighted Gaussians, sampled component-first

Anything accepting a ``MeasureSource`` accepts all three. Discrete batches carry the
support indices of the drawn atoms so vector potentials can be looked up directly.

Usage:
    from otmap.measures import CostFn, DiscreteMeasure, cost_matrix, sample_batch

    mu = DiscreteMeasure.uniform(points)
    batch = sample_batch(mu, 256, np.random.default_rng(0))
    C = cost_matrix(CostFn.squared_euclidean(), batch.points, other_points)
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from otmap.exceptions import MeasureFormatError

logger = logging.getLogger("otmap.measures")

WEIGHT_TOL = 1e-9
SYMMETRY_TOL = 1e-12
WEIGHT_COLUMN = "w"
LABEL_COLUMN = "y"


# =============================================================================
# Measures
# =============================================================================


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted point cloud Σ a_i δ_{x_i}, with optional integer class labels."""

    points: np.ndarray
    weights: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] < 1:
            raise ValueError(f"points must be a non-empty n×d matrix, got shape {points.shape}")
        if points.shape[1] < 1:
            raise ValueError("points must have dimension d >= 1")
        if not np.all(np.isfinite(points)):
            raise ValueError("points must be finite")

        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if weights.shape != (points.shape[0],):
            raise ValueError(
                f"weights length {weights.shape[0]} does not match {points.shape[0]} points"
            )
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights must sum to 1 (got {weights.sum():.12f})")

        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels).ravel()
            if labels.shape != (points.shape[0],):
                raise ValueError("labels length does not match number of points")
            labels = labels.astype(np.int64)

        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def uniform(cls, points, labels=None) -> DiscreteMeasure:
        """Build a measure with equal mass 1/n on every point."""
        points = np.asarray(points, dtype=np.float64)
        n = points.shape[0]
        return cls(points=points, weights=np.full(n, 1.0 / n), labels=labels)

    @classmethod
    def from_masses(cls, points, masses, labels=None) -> DiscreteMeasure:
        """Build a measure from nonnegative masses, renormalized to sum 1."""
        masses = np.asarray(masses, dtype=np.float64).ravel()
        total = masses.sum()
        if not np.isfinite(total) or total <= 0:
            raise ValueError("masses must have a positive finite sum")
        return cls(points=points, weights=masses / total, labels=labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @cached_property
    def cdf(self) -> np.ndarray:
        cdf = np.cumsum(self.weights)
        return cdf / cdf[-1]

    def without_labels(self) -> DiscreteMeasure:
        return DiscreteMeasure(points=self.points, weights=self.weights)


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """N(mean, covariance) with a symmetric positive-definite covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).ravel()
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        d = mean.shape[0]
        if d < 1:
            raise ValueError("Gaussian dimension must be >= 1")
        if cov.shape != (d, d):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {d}")
        if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(cov))):
            raise ValueError("covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.covariance)


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Finite mixture Σ w_k N(m_k, S_k); all components share the same dimension."""

    weights: np.ndarray
    components: tuple[GaussianMeasure, ...] = field(default_factory=tuple)

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).ravel()
        components = tuple(self.components)
        if len(components) == 0 or weights.shape != (len(components),):
            raise ValueError("mixture needs one weight per component and at least one component")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError("mixture weights must lie on the simplex")
        dims = {c.dim for c in components}
        if len(dims) != 1:
            raise ValueError(f"mixture components have different dimensions: {sorted(dims)}")
        object.__setattr__(self, "weights", weights / weights.sum())
        object.__setattr__(self, "components", components)

    @property
    def dim(self) -> int:
        return self.components[0].dim


MeasureSource = Union[DiscreteMeasure, GaussianMeasure, GaussianMixture]


def dimension(src: MeasureSource) -> int:
    """Ambient dimension d of any measure source."""
    return src.dim


# =============================================================================
# Costs
# =============================================================================


class CostKind(str, Enum):
    SQUARED_EUCLIDEAN = "sqeuclidean"
    EUCLIDEAN = "euclidean"
    CUSTOM = "custom"


@dataclass(frozen=True)
class CostFn:
    """
    Ground cost c(x, y) >= 0.

    ``scale`` multiplies every entry; pipelines use it to bring costs to unit order so
    regularization grids mean the same thing across datasets.
    """

    kind: CostKind = CostKind.SQUARED_EUCLIDEAN
    func: Callable[[np.ndarray, np.ndarray], float] | None = None
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CostKind(self.kind))
        if self.kind == CostKind.CUSTOM and self.func is None:
            raise ValueError("custom cost requires a callable")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"cost scale must be positive, got {self.scale}")

    @classmethod
    def squared_euclidean(cls, scale: float = 1.0) -> CostFn:
        return cls(CostKind.SQUARED_EUCLIDEAN, scale=scale)

    @classmethod
    def euclidean(cls, scale: float = 1.0) -> CostFn:
        return cls(CostKind.EUCLIDEAN, scale=scale)

    @classmethod
    def custom(cls, func: Callable[[np.ndarray, np.ndarray], float]) -> CostFn:
        return cls(CostKind.CUSTOM, func=func)

    def with_scale(self, scale: float) -> CostFn:
        return dataclasses.replace(self, scale=scale)

    def swapped(self) -> CostFn:
        """Cost with its arguments exchanged, c'(y, x) = c(x, y)."""
        if self.kind != CostKind.CUSTOM:
            return self
        func = self.func
        return dataclasses.replace(self, func=lambda y, x: func(x, y))

    def __call__(self, x, y) -> float:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return float(cost_matrix(self, x, y)[0, 0])


def cost_matrix(c: CostFn, xb: np.ndarray, yb: np.ndarray) -> np.ndarray:
    """Pairwise cost matrix, entry (i, j) = c(xb[i], yb[j])."""
    xb = np.asarray(xb, dtype=np.float64)
    yb = np.asarray(yb, dtype=np.float64)
    if xb.ndim != 2 or yb.ndim != 2:
        raise ValueError("cost_matrix expects two 2-D point arrays")
    if xb.shape[1] != yb.shape[1]:
        raise ValueError(f"dimension mismatch: {xb.shape[1]} vs {yb.shape[1]}")

    if c.kind == CostKind.SQUARED_EUCLIDEAN:
        C = cdist(xb, yb, metric="sqeuclidean")
    elif c.kind == CostKind.EUCLIDEAN:
        C = cdist(xb, yb, metric="euclidean")
    else:
        C = np.array([[c.func(x, y) for y in yb] for x in xb], dtype=np.float64)
        C = C.reshape(xb.shape[0], yb.shape[0])
        if not np.all(np.isfinite(C)) or np.any(C < 0):
            raise ValueError("custom cost must be finite and nonnegative on all evaluated pairs")

    if c.scale != 1.0:
        C = C * c.scale
    return C


# =============================================================================
# Sampling
# =============================================================================


class Batch(NamedTuple):
    """Rows drawn from a measure; ``indices`` are support positions for discrete sources."""

    points: np.ndarray
    indices: np.ndarray | None


def sample_batch(src: MeasureSource, p: int, rng: np.random.Generator) -> Batch:
    """Draw p i.i.d. rows from src (with replacement, weight-proportional for discrete)."""
    if p < 1:
        raise ValueError(f"batch size must be >= 1, got {p}")
    if src.dim < 1:
        raise ValueError("cannot sample from a dimension-zero source")

    if isinstance(src, DiscreteMeasure):
        idx = np.searchsorted(src.cdf, rng.random(p), side="right")
        idx = np.minimum(idx, src.n - 1)
        return Batch(src.points[idx], idx)

    if isinstance(src, GaussianMeasure):
        z = rng.standard_normal((p, src.dim))
        return Batch(src.mean + z @ src.cholesky.T, None)

    if isinstance(src, GaussianMixture):
        which = rng.choice(len(src.components), size=p, p=src.weights)
        z = rng.standard_normal((p, src.dim))
        out = np.empty((p, src.dim))
        for k, comp in enumerate(src.components):
            rows = which == k
            out[rows] = comp.mean + z[rows] @ comp.cholesky.T
        return Batch(out, None)

    raise TypeError(f"unsupported measure source: {type(src).__name__}")


def support_batch(m: DiscreteMeasure) -> Batch:
    """The whole support of a discrete measure as a batch, in index order."""
    return Batch(m.points, np.arange(m.n))


# =============================================================================
# Moments
# =============================================================================


def empirical_moments(m: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Weighted mean and (population) covariance of a discrete measure."""
    if m.n < 2:
        raise ValueError(f"insufficient data: need at least 2 points for moments, got {m.n}")
    mean = m.weights @ m.points
    centered = m.points - mean
    cov = (centered * m.weights[:, None]).T @ centered
    return mean, 0.5 * (cov + cov.T)


def fit_gaussian(m: DiscreteMeasure, ridge: float = 0.0) -> GaussianMeasure:
    """Gaussian with the empirical mean and covariance of m (plus ridge·I)."""
    mean, cov = empirical_moments(m)
    return GaussianMeasure(mean, cov + ridge * np.eye(m.dim))


# =============================================================================
# CSV ingestion
# =============================================================================


def _is_numeric(value: str) -> bool:
    try:
        float(value)
    except (TypeError, ValueError):
        return False
    return True


def load_csv(path, has_weights: bool = False, has_labels: bool = False) -> DiscreteMeasure:
    """
    Load a point cloud written one row per point.

    A header row is optional. With a header, weights and labels are read from the
    columns named "w" and "y". Without one, labels are the last column and weights the
    column before the labels (or the last one when there are no labels).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"measure file not found: {path}")

    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise MeasureFormatError(f"empty measure file: {path}") from e
    except pd.errors.ParserError as e:
        raise MeasureFormatError(f"inconsistent row width in {path}: {e}") from e

    if raw.isna().any().any():
        raise MeasureFormatError(f"inconsistent row width in {path}")

    first = [str(v).strip() for v in raw.iloc[0]]
    has_header = not all(_is_numeric(v) for v in first)
    if has_header:
        raw = raw.iloc[1:].reset_index(drop=True)
        raw.columns = first
    if raw.empty:
        raise MeasureFormatError(f"measure file has no data rows: {path}")

    values = raw.apply(lambda col: pd.to_numeric(col.str.strip(), errors="coerce"))
    bad = values.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise MeasureFormatError(
            f"non-numeric cell {raw.iat[row, col]!r} at row {row + 1}, column {col + 1} in {path}"
        )

    columns = list(values.columns)
    weight_col = label_col = None
    if has_header:
        if has_weights:
            if WEIGHT_COLUMN not in columns:
                raise MeasureFormatError(f"weights column '{WEIGHT_COLUMN}' missing in {path}")
            weight_col = WEIGHT_COLUMN
        if has_labels:
            if LABEL_COLUMN not in columns:
                raise MeasureFormatError(f"label column '{LABEL_COLUMN}' missing in {path}")
            label_col = LABEL_COLUMN
    else:
        trailing = columns[-(int(has_weights) + int(has_labels)) :] if (has_weights or has_labels) else []
        if has_labels:
            label_col = trailing[-1]
        if has_weights:
            weight_col = trailing[0]

    features = [c for c in columns if c not in (weight_col, label_col)]
    if not features:
        raise MeasureFormatError(f"no feature columns in {path}")

    points = values[features].to_numpy(dtype=np.float64)
    labels = None
    if label_col is not None:
        raw_labels = values[label_col].to_numpy(dtype=np.float64)
        if not np.allclose(raw_labels, np.round(raw_labels)):
            raise MeasureFormatError(f"labels must be integers in {path}")
        labels = np.round(raw_labels).astype(np.int64)

    if weight_col is None:
        measure = DiscreteMeasure.uniform(points, labels=labels)
    else:
        masses = values[weight_col].to_numpy(dtype=np.float64)
        if np.any(masses < 0) or masses.sum() <= 0:
            raise MeasureFormatError(f"weights must be nonnegative with positive sum in {path}")
        measure = DiscreteMeasure.from_masses(points, masses, labels=labels)

    logger.debug(f"Loaded {measure.n} points (d={measure.dim}) from {path}")
    return measure


def measure_frame(m: DiscreteMeasure) -> pd.DataFrame:
    """Tabular view with columns x0..x{d-1}, w and (when labeled) y."""
    frame = pd.DataFrame(m.points, columns=[f"x{k}" for k in range(m.dim)])
    frame[WEIGHT_COLUMN] = m.weights
    if m.labels is not None:
        frame[LABEL_COLUMN] = m.labels
    return frame


def save_csv(m: DiscreteMeasure, path) -> Path:
    """Write m with a header row; floats keep 17 significant digits."""
    path = Path(path)
    measure_frame(m).to_csv(path, index=False, float_format="%.17g")
    return path


# =============================================================================
# Synthetic generators
# =============================================================================


def rotation_matrix(d: int, angle: float) -> np.ndarray:
    """Rotation by ``angle`` in the plane of the first two coordinates."""
    R = np.eye(d)
    if angle == 0:
        return R
    if d < 2:
        raise ValueError("rotation requires dimension d >= 2")
    c, s = np.cos(angle), np.sin(angle)
    R[:2, :2] = [[c, -s], [s, c]]
    return R


def blob_centers(k: int, d: int, radius: float = 4.0) -> np.ndarray:
    """k centers summing to zero: on a circle (first two coordinates) or a segment for d=1."""
    centers = np.zeros((k, d))
    if d == 1:
        centers[:, 0] = np.linspace(-radius, radius, k)
    else:
        angles = np.pi / 2 + 2 * np.pi * np.arange(k) / k
        centers[:, 0] = radius * np.cos(angles)
        centers[:, 1] = radius * np.sin(angles)
    return centers


def _draw_blobs(centers, per_class, spread, rng) -> tuple[np.ndarray, np.ndarray]:
    k, d = centers.shape
    labels = np.repeat(np.arange(k), per_class)
    points = centers[labels] + spread * rng.standard_normal((k * per_class, d))
    return points, labels


def make_blobs(
    k: int,
    per_class: int,
    d: int,
    shift=None,
    rotation: float = 0.0,
    rng: np.random.Generator | None = None,
    radius: float = 4.0,
    spread: float = 0.6,
) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """
    Labeled Gaussian blobs for domain adaptation.

    Source and target draw fresh samples from the same k isotropic components; the
    target samples are then rotated about the origin and shifted. Both measures are
    uniform and carry labels; pipelines withhold the target labels except for scoring.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 classes, got {k}")
    if per_class < 1:
        raise ValueError(f"need per_class >= 1, got {per_class}")
    if d < 1:
        raise ValueError(f"need d >= 1, got {d}")
    rng = rng if rng is not None else np.random.default_rng(0)
    shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=np.float64).ravel()
    if shift.shape != (d,):
        raise ValueError(f"shift must have length {d}")

    R = rotation_matrix(d, rotation)
    centers = blob_centers(k, d, radius)
    src_points, src_labels = _draw_blobs(centers, per_class, spread, rng)
    tgt_points, tgt_labels = _draw_blobs(centers, per_class, spread, rng)
    tgt_points = tgt_points @ R.T + shift

    return (
        DiscreteMeasure.uniform(src_points, labels=src_labels),
        DiscreteMeasure.uniform(tgt_points, labels=tgt_labels),
    )


def make_ring(k: int = 8, radius: float = 2.0, d: int = 2) -> DiscreteMeasure:
    """k equally weighted atoms evenly spaced on a circle."""
    if d < 2:
        raise ValueError("ring target requires d >= 2")
    angles = 2 * np.pi * np.arange(k) / k
    points = np.zeros((k, d))
    points[:, 0] = radius * np.cos(angles)
    points[:, 1] = radius * np.sin(angles)
    return DiscreteMeasure.uniform(points)
