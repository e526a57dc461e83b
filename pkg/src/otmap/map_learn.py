"""
Neural Monge maps fitted to the barycentric projection of a regularized plan.

Once dual potentials (u, v) are solved, the plan density H_ε(x, y) is known pointwise,
so a network f can be fitted by minimizing

    E_{X∼μ, Y∼ν}[ d(Y, f(X)) · H_ε(X, Y) ]

on independent mini-batches. The minimizer is the barycentric projection of the plan,
and unlike the discrete projection it is defined off the source support.

Architecture:
    solve_dual → (u, v) frozen → [fit_map: Adam on f] → MongeMap → apply_map

Usage:
    from otmap.map_learn import MapTrainConfig, apply_map, train_map

    f, trace = train_map(mu, nu, u, v, cost, reg, MapTrainConfig(iterations=5000))
    mapped = apply_map(f, mu.points)
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np

from otmap import nn
from otmap.dual_solver import DualPotential, Regularization, TrainTrace
from otmap.exceptions import NumericalError
from otmap.measures import (
    Batch,
    CostFn,
    CostKind,
    DiscreteMeasure,
    GaussianMeasure,
    MeasureSource,
    cost_matrix,
    sample_batch,
)
from otmap.plan import PlanDensity

logger = logging.getLogger("otmap.map_learn")

SCALE_FLOOR = 1e-12
TANH_MARGIN = 1.1
REFERENCE_DRAWS = 4096


# =============================================================================
# Normalization
# =============================================================================


def _reference_stats(src: MeasureSource, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, per-coordinate std and max absolute deviation of a measure."""
    if isinstance(src, DiscreteMeasure):
        points, weights = src.points, src.weights
    elif isinstance(src, GaussianMeasure):
        std = np.sqrt(np.diag(src.covariance))
        return src.mean.copy(), std, 3.0 * std
    else:
        points = sample_batch(src, REFERENCE_DRAWS, np.random.default_rng(seed)).points
        weights = np.full(points.shape[0], 1.0 / points.shape[0])
    mean = weights @ points
    std = np.sqrt(weights @ (points - mean) ** 2)
    spread = np.abs(points - mean).max(axis=0)
    return mean, std, spread


def _safe_scale(scale: np.ndarray) -> np.ndarray:
    return np.where(scale > SCALE_FLOOR, scale, 1.0)


@dataclass(frozen=True, eq=False)
class Normalization:
    """Affine maps around the network: x ↦ (x − in_mean)/in_scale, z ↦ z·out_scale + out_mean."""

    input_mean: np.ndarray
    input_scale: np.ndarray
    output_mean: np.ndarray
    output_scale: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("input_mean", "input_scale", "output_mean", "output_scale"):
            value = np.array(getattr(self, name), dtype=np.float64).ravel()
            if not np.all(np.isfinite(value)):
                raise ValueError(f"normalization {name} must be finite")
            arrays[name] = value
            object.__setattr__(self, name, value)
        if len({a.size for a in arrays.values()}) != 1:
            raise ValueError("normalization vectors must share one dimension")
        if np.any(arrays["input_scale"] <= 0) or np.any(arrays["output_scale"] <= 0):
            raise ValueError("normalization scales must be positive")

    @property
    def dim(self) -> int:
        return self.input_mean.size

    @classmethod
    def identity(cls, d: int) -> Normalization:
        return cls(np.zeros(d), np.ones(d), np.zeros(d), np.ones(d))

    @classmethod
    def fit(
        cls,
        source: MeasureSource,
        target: MeasureSource,
        output_activation: nn.Activation = nn.Activation.IDENTITY,
        seed: int = 0,
    ) -> Normalization:
        """Whiten inputs by source moments; scale outputs to the target (bounding box for tanh)."""
        in_mean, in_std, _ = _reference_stats(source, seed)
        out_mean, out_std, out_spread = _reference_stats(target, seed + 1)
        if output_activation == nn.Activation.TANH:
            out_scale = TANH_MARGIN * out_spread
        else:
            out_scale = out_std
        return cls(in_mean, _safe_scale(in_std), out_mean, _safe_scale(out_scale))

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_mean) / self.input_scale

    def decode(self, z: np.ndarray) -> np.ndarray:
        return z * self.output_scale + self.output_mean

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_mean": self.input_mean,
            "input_scale": self.input_scale,
            "output_mean": self.output_mean,
            "output_scale": self.output_scale,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Normalization:
        return cls(**{k: np.asarray(data[k], dtype=np.float64) for k in cls.__dataclass_fields__})


# =============================================================================
# Map and config
# =============================================================================


@dataclass(eq=False)
class MongeMap:
    params: nn.MlpParams
    normalization: Normalization | None = None

    def __post_init__(self):
        spec = self.params.spec
        if spec.input_dim != spec.output_dim:
            raise ValueError(
                f"Monge map must be d → d, got {spec.input_dim} → {spec.output_dim}"
            )
        if self.normalization is not None and self.normalization.dim != spec.input_dim:
            raise ValueError("normalization dimension does not match the network")
        if not self.params.all_finite():
            raise ValueError("Monge map parameters must be finite")

    @property
    def spec(self) -> nn.MlpSpec:
        return self.params.spec

    @property
    def dim(self) -> int:
        return self.params.spec.input_dim

    def copy(self) -> MongeMap:
        return MongeMap(self.params.copy(), self.normalization)

    def to_dict(self) -> dict[str, Any]:
        return {
            "params": self.params.to_dict(),
            "normalization": None if self.normalization is None else self.normalization.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MongeMap:
        norm = data.get("normalization")
        return cls(
            nn.MlpParams.from_dict(data["params"]),
            None if norm is None else Normalization.from_dict(norm),
        )


@dataclass
class MapTrainConfig:
    """
    Adam settings for the map fit.

    Defaults follow the adaptation setting (d → 200 → 500 → d, identity output);
    ``generative()`` gives the wider tanh-output network used for sample generation.
    """

    batch_size: int = 256
    learning_rate: float = 1e-3
    iterations: int = 2000
    seed: int = 0
    log_every: int = 100
    projection_cost: CostFn = field(default_factory=CostFn.squared_euclidean)
    hidden: tuple[int, ...] = (200, 500)
    output_activation: nn.Activation = nn.Activation.IDENTITY
    normalize: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        if self.projection_cost.kind == CostKind.CUSTOM:
            raise ValueError("projection cost must be squared Euclidean or Euclidean")
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ValueError("map networks need at least one positive hidden width")
        self.output_activation = nn.Activation(self.output_activation)

    @classmethod
    def generative(cls, **overrides) -> MapTrainConfig:
        values: dict[str, Any] = {
            "hidden": (1024, 1024),
            "output_activation": nn.Activation.TANH,
        }
        values.update(overrides)
        return cls(**values)


def default_map_spec(
    d: int,
    hidden: tuple[int, ...] = (200, 500),
    output_activation: nn.Activation = nn.Activation.IDENTITY,
) -> nn.MlpSpec:
    return nn.MlpSpec((d, *hidden, d), output_activation=output_activation)


def init_map(
    source: MeasureSource, target: MeasureSource, cfg: MapTrainConfig
) -> MongeMap:
    spec = default_map_spec(source.dim, cfg.hidden, cfg.output_activation)
    norm = Normalization.fit(source, target, cfg.output_activation, cfg.seed) if cfg.normalize else None
    return MongeMap(nn.init(spec, cfg.seed), norm)


# =============================================================================
# Loss
# =============================================================================


def _predict(f: MongeMap, points: np.ndarray) -> tuple[np.ndarray, nn.ForwardCache]:
    x = points if f.normalization is None else f.normalization.encode(points)
    z, cache = nn.forward(f.params, x)
    out = z if f.normalization is None else f.normalization.decode(z)
    return out, cache


def map_loss_batch(
    f: MongeMap,
    batch_x: Batch,
    batch_y: Batch,
    u: DualPotential,
    v: DualPotential,
    cost: CostFn,
    reg: Regularization,
    projection_cost: CostFn | None = None,
) -> tuple[float, nn.MlpParams]:
    """
    Loss (1/pq)·Σ_ij H_ε(x_i, y_j)·d(y_j, f(x_i)) and its parameter gradient.

    H_ε is a constant weight here; only f is differentiated.
    """
    d_cost = projection_cost or CostFn.squared_euclidean()
    X, Y = batch_x.points, batch_y.points
    H = PlanDensity(u, v, cost, reg)(X, Y, batch_x.indices, batch_y.indices)
    if not np.all(np.isfinite(H)):
        raise NumericalError(
            f"non-finite plan density in map loss (epsilon={reg.epsilon}); potentials diverged"
        )

    pred, cache = _predict(f, X)
    p, q = H.shape
    D = cost_matrix(d_cost, pred, Y)
    loss = float(np.sum(H * D) / (p * q))

    if d_cost.kind == CostKind.SQUARED_EUCLIDEAN:
        d_pred = 2.0 * (H.sum(axis=1)[:, None] * pred - H @ Y)
    else:
        diff = pred[:, None, :] - Y[None, :, :]
        norms = np.linalg.norm(diff, axis=2)
        inv = np.divide(H, norms, out=np.zeros_like(H), where=norms > 0)
        d_pred = np.einsum("ij,ijk->ik", inv, diff)
    d_pred *= d_cost.scale / (p * q)
    if f.normalization is not None:
        d_pred = d_pred * f.normalization.output_scale

    grads, _ = nn.backward(f.params, cache, d_pred)
    return loss, grads


# =============================================================================
# Training
# =============================================================================


def fit_map(
    source: MeasureSource,
    target: MeasureSource,
    u_src: DualPotential,
    v_tgt: DualPotential,
    cost: CostFn,
    reg: Regularization,
    cfg: MapTrainConfig,
    label: str = "map",
) -> tuple[MongeMap, TrainTrace]:
    """Adam on the weighted projection loss; the trace holds window-averaged batch losses."""
    if source.dim != target.dim:
        raise ValueError(
            f"source dimension {source.dim} differs from target dimension {target.dim}"
        )

    rng = np.random.default_rng(cfg.seed)
    f = init_map(source, target, cfg)
    state = nn.adam_init(f.params)
    trace = TrainTrace(label=label)
    window: list[float] = []
    elapsed = 0.0

    logger.info(
        f"Map fit ({label}): {reg.kind.value} eps={reg.epsilon}, p={cfg.batch_size}, "
        f"lr={cfg.learning_rate}, layers={f.spec.layer_sizes}"
    )
    for k in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        bx = sample_batch(source, cfg.batch_size, rng)
        by = sample_batch(target, cfg.batch_size, rng)
        loss, grads = map_loss_batch(f, bx, by, u_src, v_tgt, cost, reg, cfg.projection_cost)
        params, state = nn.adam_step(f.params, grads, state, cfg.learning_rate)
        f = MongeMap(params, f.normalization)
        elapsed += time.perf_counter() - t0
        window.append(loss)

        if k % cfg.log_every == 0 or k == cfg.iterations:
            trace.append(k, elapsed * 1000.0, float(np.mean(window)))
            window.clear()
            logger.debug(f"  iter {k:>7}: loss={trace.final_objective:.6f}")

    logger.info(f"Map fit ({label}) done: loss={trace.final_objective:.6f} in {elapsed:.2f}s")
    return f, trace


def train_map(
    mu: MeasureSource,
    nu: MeasureSource,
    u: DualPotential,
    v: DualPotential,
    cost: CostFn,
    reg: Regularization,
    cfg: MapTrainConfig,
) -> tuple[MongeMap, TrainTrace]:
    """Fit f: μ → ν from potentials of a finished dual solve with the same cost and reg."""
    return fit_map(mu, nu, u, v, cost, reg, cfg, label="map")


def train_reverse_map(
    mu: MeasureSource,
    nu: MeasureSource,
    u: DualPotential,
    v: DualPotential,
    cost: CostFn,
    reg: Regularization,
    cfg: MapTrainConfig,
) -> MongeMap:
    """Fit g: ν → μ minimizing E[d(g(Y), X)·H_ε(X, Y)]."""
    g, _ = fit_map(nu, mu, v, u, cost.swapped(), reg, cfg, label="reverse_map")
    return g


def apply_map(f: MongeMap, points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1 and f.dim == 1:
        points = points[:, None]
    if points.ndim != 2 or points.shape[1] != f.dim:
        raise ValueError(f"expected points of shape (k, {f.dim}), got {points.shape}")
    return _predict(f, points)[0]


# =============================================================================
# Moment diagnostics
# =============================================================================


class MomentErrors(NamedTuple):
    mean: float
    covariance: float

    @property
    def worst(self) -> float:
        return max(self.mean, self.covariance)


def moment_errors(points, mean, cov) -> MomentErrors:
    """
    Relative errors of the sample moments of ``points`` against (mean, cov).

    The mean error is measured against max(‖mean‖, √tr cov) so a centered target does
    not divide by zero; the covariance error is Frobenius-relative.
    """
    points = np.asarray(points, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64).ravel()
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("moment errors need at least two points")
    sample_mean = points.mean(axis=0)
    sample_cov = np.cov(points, rowvar=False, bias=True).reshape(cov.shape)
    mean_ref = max(float(np.linalg.norm(mean)), float(np.sqrt(np.trace(cov))), SCALE_FLOOR)
    cov_ref = max(float(np.linalg.norm(cov)), SCALE_FLOOR)
    return MomentErrors(
        mean=float(np.linalg.norm(sample_mean - mean) / mean_ref),
        covariance=float(np.linalg.norm(sample_cov - cov) / cov_ref),
    )


def composition_moment_error(f: MongeMap, g: MongeMap, samples) -> MomentErrors:
    """Moment error of f(g(y)) against the samples y themselves."""
    samples = np.asarray(samples, dtype=np.float64)
    roundtrip = apply_map(f, apply_map(g, samples))
    return moment_errors(roundtrip, samples.mean(axis=0), np.cov(samples, rowvar=False, bias=True))
