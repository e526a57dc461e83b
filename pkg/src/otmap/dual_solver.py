"""
Stochastic gradient ascent on the regularized OT dual.

The relaxed dual replaces the hard constraint u(x) + v(y) <= c(x, y) by a smooth
penalty F_ε of s = u(x) + v(y) − c(x, y):

    entropy:  F(s) = −ε·exp(s/ε)
    L2:       F(s) = −(1/4ε)·(s₊)²

and maximizes E[u(X) + v(Y) + F(s)] over μ×ν. Each potential is either a vector
aligned to a discrete support (updated by plain SGD, or sparse Adam on request) or a
small ReLU network (updated by Adam), so discrete-discrete, semi-discrete and
continuous-continuous problems share one loop.

Mini-batch objective:
    J = mean over the p×q batch pairs of [u(x_i) + v(y_j) + F(s_ij)]
so ∂J/∂u(x_i) = (1 + mean_j ∂F(s_ij)) / p, which keeps the step size comparable
across batch sizes.

Usage:
    from otmap.dual_solver import DualSolverConfig, Regularization, solve_dual

    reg = Regularization.entropy(0.1)
    u, v, trace = solve_dual(mu, nu, CostFn.squared_euclidean(), reg, DualSolverConfig())
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from otmap import nn
from otmap.exceptions import NumericalError
from otmap.measures import (
    Batch,
    CostFn,
    DiscreteMeasure,
    MeasureSource,
    cost_matrix,
    sample_batch,
)

logger = logging.getLogger("otmap.dual_solver")

EXP_CLAMP = 30.0
EXACT_PAIR_LIMIT = 1_000_000


# =============================================================================
# Regularization and penalty
# =============================================================================


class RegKind(str, Enum):
    ENTROPY = "entropy"
    L2 = "l2"


@dataclass(frozen=True)
class Regularization:
    kind: RegKind
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "kind", RegKind(self.kind))
        if not np.isfinite(self.epsilon) or self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def entropy(cls, epsilon: float) -> Regularization:
        return cls(RegKind.ENTROPY, epsilon)

    @classmethod
    def l2(cls, epsilon: float) -> Regularization:
        return cls(RegKind.L2, epsilon)


def _scalar_or_array(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def count_clamped(reg: Regularization, s) -> int:
    """Number of entries whose entropic exponent s/ε exceeds the clamp."""
    if reg.kind != RegKind.ENTROPY:
        return 0
    return int(np.count_nonzero(np.asarray(s, dtype=np.float64) / reg.epsilon > EXP_CLAMP))


def f_eps(reg: Regularization, s):
    """Penalty F_ε(s); always <= 0 and concave in s."""
    s = np.asarray(s, dtype=np.float64)
    eps = reg.epsilon
    if reg.kind == RegKind.ENTROPY:
        out = -eps * np.exp(np.minimum(s / eps, EXP_CLAMP))
    else:
        out = -np.square(np.maximum(s, 0.0)) / (4.0 * eps)
    return _scalar_or_array(out)


def f_eps_partial(reg: Regularization, s):
    """Derivative ∂F/∂s, equal to ∂F/∂u and ∂F/∂v."""
    s = np.asarray(s, dtype=np.float64)
    eps = reg.epsilon
    if reg.kind == RegKind.ENTROPY:
        out = -np.exp(np.minimum(s / eps, EXP_CLAMP))
    else:
        out = -np.maximum(s, 0.0) / (2.0 * eps)
    return _scalar_or_array(out)


# =============================================================================
# Potentials
# =============================================================================


@dataclass
class VectorAdamState:
    """Sparse Adam moments for a vector potential (only sampled entries move)."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


@dataclass(eq=False)
class VectorPotential:
    values: np.ndarray
    adam: VectorAdamState | None = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64).ravel()
        if self.values.size < 1:
            raise ValueError("vector potential needs at least one entry")

    @property
    def size(self) -> int:
        return self.values.size

    def copy(self) -> VectorPotential:
        adam = None
        if self.adam is not None:
            adam = VectorAdamState(self.adam.m.copy(), self.adam.v.copy(), self.adam.step)
        return VectorPotential(self.values.copy(), adam)


@dataclass(eq=False)
class NetworkPotential:
    params: nn.MlpParams
    adam: nn.AdamState | None = None

    def __post_init__(self):
        if self.params.spec.output_dim != 1:
            raise ValueError("network potential must have output dimension 1")

    @property
    def spec(self) -> nn.MlpSpec:
        return self.params.spec

    def copy(self) -> NetworkPotential:
        adam = None
        if self.adam is not None:
            adam = nn.AdamState(
                self.adam.m.copy(), self.adam.v.copy(), self.adam.step,
                self.adam.beta1, self.adam.beta2, self.adam.delta,
            )
        return NetworkPotential(self.params.copy(), adam)


DualPotential = Union[VectorPotential, NetworkPotential]


def default_potential_spec(d: int, hidden: tuple[int, ...] = (1024, 1024)) -> nn.MlpSpec:
    """d → hidden… → 1 with ReLU hidden units and identity output."""
    if not hidden:
        raise ValueError("network potentials need at least one hidden layer")
    return nn.MlpSpec((d, *hidden, 1))


def init_potential(
    src: MeasureSource, hidden: tuple[int, ...] = (1024, 1024), seed: int = 0
) -> DualPotential:
    """Zero vector for discrete sources; He-initialized network with a zero last layer otherwise."""
    if isinstance(src, DiscreteMeasure):
        return VectorPotential(np.zeros(src.n))
    params = nn.init(default_potential_spec(src.dim, hidden), seed)
    params.weights[-1][:] = 0.0
    return NetworkPotential(params)


def _evaluate(pot: DualPotential, xb: np.ndarray, indices) -> tuple[np.ndarray, nn.ForwardCache | None]:
    if isinstance(pot, VectorPotential):
        if indices is None:
            raise ValueError("vector potential evaluation requires support indices")
        return pot.values[np.asarray(indices)], None
    out, cache = nn.forward(pot.params, xb)
    return out[:, 0], cache


def potential_eval(u: DualPotential, xb: np.ndarray, indices=None) -> np.ndarray:
    """Per-row potential values u(x_i)."""
    return _evaluate(u, xb, indices)[0]


# =============================================================================
# Ascent step
# =============================================================================


def _ascend(pot: DualPotential, batch: Batch, grad, cache, lr: float, vector_optimizer: str):
    """Move ``pot`` in place along +grad, where grad[i] = ∂J/∂pot(batch row i)."""
    if isinstance(pot, VectorPotential):
        idx = batch.indices
        if vector_optimizer == "adam":
            if pot.adam is None:
                pot.adam = VectorAdamState(np.zeros(pot.size), np.zeros(pot.size))
            uniq, inverse = np.unique(idx, return_inverse=True)
            g = np.bincount(inverse, weights=grad, minlength=uniq.size)
            pot.adam.step += 1
            # descent on −J
            new_vals, m, v = nn.adam_update(
                pot.values[uniq], -g, pot.adam.m[uniq], pot.adam.v[uniq], pot.adam.step, lr
            )
            pot.values[uniq] = new_vals
            pot.adam.m[uniq] = m
            pot.adam.v[uniq] = v
        else:
            np.add.at(pot.values, idx, lr * grad)
        return

    if pot.adam is None:
        pot.adam = nn.adam_init(pot.params)
    grads, _ = nn.backward(pot.params, cache, grad[:, None])
    pot.params, pot.adam = nn.adam_step(pot.params, grads.scaled(-1.0), pot.adam, lr)


def _ascent_step(
    u: DualPotential,
    v: DualPotential,
    batch_x: Batch,
    batch_y: Batch,
    cost: CostFn,
    reg: Regularization,
    lr: float,
    vector_optimizer: str = "sgd",
) -> int:
    """In-place ascent step; returns the number of clamped entropic exponents."""
    uu, cache_u = _evaluate(u, batch_x.points, batch_x.indices)
    vv, cache_v = _evaluate(v, batch_y.points, batch_y.indices)
    s = uu[:, None] + vv[None, :] - cost_matrix(cost, batch_x.points, batch_y.points)
    dF = f_eps_partial(reg, s)
    p, q = s.shape
    grad_u = (1.0 + dF.mean(axis=1)) / p
    grad_v = (1.0 + dF.mean(axis=0)) / q
    if not (np.all(np.isfinite(grad_u)) and np.all(np.isfinite(grad_v))):
        raise NumericalError(
            f"non-finite dual update (max |s| = {np.nanmax(np.abs(s)):.3e}, epsilon={reg.epsilon})"
        )
    if lr != 0.0:
        _ascend(u, batch_x, grad_u, cache_u, lr, vector_optimizer)
        _ascend(v, batch_y, grad_v, cache_v, lr, vector_optimizer)
    return count_clamped(reg, s)


def sgd_step(
    u: DualPotential,
    v: DualPotential,
    batch_x: Batch,
    batch_y: Batch,
    cost: CostFn,
    reg: Regularization,
    lr: float,
    vector_optimizer: str = "sgd",
    inplace: bool = False,
) -> tuple[DualPotential, DualPotential]:
    """One ascent step on the mini-batch dual; returns the updated (u, v)."""
    if not inplace:
        u, v = u.copy(), v.copy()
    _ascent_step(u, v, batch_x, batch_y, cost, reg, lr, vector_optimizer)
    return u, v


# =============================================================================
# Trace
# =============================================================================


@dataclass
class TraceRecord:
    iteration: int
    wall_ms: float
    objective: float


@dataclass
class TrainTrace:
    """Objective estimates logged during training, with cumulative training wall time."""

    records: list[TraceRecord] = field(default_factory=list)
    clamp_events: int = 0
    label: str = "dual"

    def append(self, iteration: int, wall_ms: float, objective: float) -> None:
        if self.records and iteration <= self.records[-1].iteration:
            raise ValueError(
                f"trace iterations must increase: {iteration} after {self.records[-1].iteration}"
            )
        self.records.append(TraceRecord(int(iteration), float(wall_ms), float(objective)))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.records], dtype=np.int64)

    @property
    def wall_ms(self) -> np.ndarray:
        return np.array([r.wall_ms for r in self.records])

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def final_objective(self) -> float:
        return self.records[-1].objective if self.records else float("nan")

    @property
    def valid(self) -> bool:
        """False when the entropic clamp fired or any objective is non-finite."""
        return self.clamp_events == 0 and bool(np.all(np.isfinite(self.objectives)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"iteration": self.iterations, "wall_ms": self.wall_ms, "objective": self.objectives}
        )

    def to_csv(self, path) -> Path:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path

    @classmethod
    def from_csv(cls, path, label: str = "dual") -> TrainTrace:
        frame = pd.read_csv(path)
        missing = {"iteration", "wall_ms", "objective"} - set(frame.columns)
        if missing:
            raise ValueError(f"trace file {path} lacks columns {sorted(missing)}")
        trace = cls(label=label)
        for row in frame.itertuples(index=False):
            trace.append(row.iteration, row.wall_ms, row.objective)
        return trace


# =============================================================================
# Objective estimates
# =============================================================================


def exact_dual_objective(
    u: DualPotential,
    v: DualPotential,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: CostFn,
    reg: Regularization,
) -> float:
    """Σ a_i u_i + Σ b_j v_j + Σ a_i b_j F(u_i + v_j − C_ij) over the full product support."""
    uu = potential_eval(u, mu.points, np.arange(mu.n))
    vv = potential_eval(v, nu.points, np.arange(nu.n))
    F = f_eps(reg, uu[:, None] + vv[None, :] - cost_matrix(cost, mu.points, nu.points))
    return float(mu.weights @ uu + nu.weights @ vv + mu.weights @ F @ nu.weights)


def dual_objective_monte_carlo(
    u: DualPotential,
    v: DualPotential,
    mu: MeasureSource,
    nu: MeasureSource,
    cost: CostFn,
    reg: Regularization,
    eval_batches: int = 4,
    p: int = 256,
    seed: int = 0,
) -> tuple[float, float]:
    """Mean and standard error over ``eval_batches`` independent p×p pair batches."""
    if eval_batches < 1:
        raise ValueError("eval_batches must be >= 1")
    rng = np.random.default_rng(seed)
    means = np.empty(eval_batches)
    for k in range(eval_batches):
        bx = sample_batch(mu, p, rng)
        by = sample_batch(nu, p, rng)
        uu = potential_eval(u, bx.points, bx.indices)
        vv = potential_eval(v, by.points, by.indices)
        s = uu[:, None] + vv[None, :] - cost_matrix(cost, bx.points, by.points)
        means[k] = uu.mean() + vv.mean() + np.mean(f_eps(reg, s))
    stderr = float(means.std(ddof=1) / np.sqrt(eval_batches)) if eval_batches > 1 else float("nan")
    return float(means.mean()), stderr


def dual_objective_estimate(
    u: DualPotential,
    v: DualPotential,
    mu: MeasureSource,
    nu: MeasureSource,
    cost: CostFn,
    reg: Regularization,
    eval_batches: int = 4,
    p: int = 256,
    seed: int = 0,
    exact_limit: int = EXACT_PAIR_LIMIT,
) -> float:
    """Exact weighted sum for small discrete pairs, Monte Carlo otherwise."""
    if (
        isinstance(mu, DiscreteMeasure)
        and isinstance(nu, DiscreteMeasure)
        and mu.n * nu.n <= exact_limit
    ):
        return exact_dual_objective(u, v, mu, nu, cost, reg)
    return dual_objective_monte_carlo(u, v, mu, nu, cost, reg, eval_batches, p, seed)[0]


# =============================================================================
# Solver
# =============================================================================


@dataclass
class DualSolverConfig:
    """
    Training knobs for the stochastic dual.

    lr_decay κ turns the step into γ/√(1 + κ·k). averaging_start switches on running
    averages of vector potentials from that iteration on. With the defaults the loop
    is plain constant-step SGD.
    """

    batch_size: int = 256
    learning_rate: float = 1.0
    iterations: int = 1000
    seed: int = 0
    log_every: int = 100
    lr_decay: float = 0.0
    averaging_start: int | None = None
    vector_optimizer: str = "sgd"
    potential_hidden: tuple[int, ...] = (1024, 1024)
    eval_batches: int = 4
    eval_batch_size: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")
        if self.lr_decay < 0:
            raise ValueError(f"lr_decay must be >= 0, got {self.lr_decay}")
        if self.averaging_start is not None and self.averaging_start < 1:
            raise ValueError("averaging_start must be >= 1 when set")
        if self.vector_optimizer not in ("sgd", "adam"):
            raise ValueError(f"vector_optimizer must be 'sgd' or 'adam', got {self.vector_optimizer!r}")
        self.potential_hidden = tuple(int(h) for h in self.potential_hidden)
        if not self.potential_hidden or any(h < 1 for h in self.potential_hidden):
            raise ValueError("potential_hidden needs at least one positive width")
        if self.eval_batches < 1:
            raise ValueError("eval_batches must be >= 1")

    def step_size(self, iteration: int) -> float:
        return self.learning_rate / np.sqrt(1.0 + self.lr_decay * (iteration - 1))


class RunningAverage:
    """Running means of vector potentials (or bare arrays) from iteration ``start`` on."""

    def __init__(self, start: int | None):
        self.start = start
        self.count = 0
        self.means: dict[int, np.ndarray] = {}

    @staticmethod
    def _values(item) -> np.ndarray | None:
        if isinstance(item, VectorPotential):
            return item.values
        if isinstance(item, np.ndarray):
            return item
        return None

    def update(self, iteration: int, *items) -> None:
        if self.start is None or iteration < self.start:
            return
        self.count += 1
        for k, item in enumerate(items):
            values = self._values(item)
            if values is None:
                continue
            if k not in self.means:
                self.means[k] = values.copy()
            else:
                self.means[k] += (values - self.means[k]) / self.count

    def resolve(self, *items) -> list:
        resolved = []
        for k, item in enumerate(items):
            if k not in self.means:
                resolved.append(item)
            elif isinstance(item, VectorPotential):
                resolved.append(VectorPotential(self.means[k].copy()))
            else:
                resolved.append(self.means[k].copy())
        return resolved


def solve_dual(
    mu: MeasureSource,
    nu: MeasureSource,
    cost: CostFn,
    reg: Regularization,
    cfg: DualSolverConfig,
    u0: DualPotential | None = None,
    v0: DualPotential | None = None,
) -> tuple[DualPotential, DualPotential, TrainTrace]:
    """
    Run ``cfg.iterations`` ascent steps and return the final potentials and trace.

    Wall time in the trace counts training steps only; objective evaluations at the
    log points are excluded.
    """
    if mu.dim != nu.dim:
        raise ValueError(f"source dimension {mu.dim} differs from target dimension {nu.dim}")

    rng = np.random.default_rng(cfg.seed)
    u = u0.copy() if u0 is not None else init_potential(mu, cfg.potential_hidden, cfg.seed)
    v = v0.copy() if v0 is not None else init_potential(nu, cfg.potential_hidden, cfg.seed + 1)
    for name, pot, src in (("u", u, mu), ("v", v, nu)):
        if isinstance(pot, VectorPotential):
            if not isinstance(src, DiscreteMeasure) or pot.size != src.n:
                raise ValueError(f"vector potential {name} must match a discrete support")

    trace = TrainTrace(label="dual")
    averager = RunningAverage(cfg.averaging_start)
    eval_p = cfg.eval_batch_size or cfg.batch_size
    elapsed = 0.0

    logger.info(
        f"Dual solve: {reg.kind.value} eps={reg.epsilon}, p={cfg.batch_size}, "
        f"lr={cfg.learning_rate}, iterations={cfg.iterations}, "
        f"u={type(u).__name__}, v={type(v).__name__}"
    )

    for k in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        bx = sample_batch(mu, cfg.batch_size, rng)
        by = sample_batch(nu, cfg.batch_size, rng)
        trace.clamp_events += _ascent_step(
            u, v, bx, by, cost, reg, cfg.step_size(k), cfg.vector_optimizer
        )
        averager.update(k, u, v)
        elapsed += time.perf_counter() - t0

        if k % cfg.log_every == 0 or k == cfg.iterations:
            cur_u, cur_v = averager.resolve(u, v)
            objective = dual_objective_estimate(
                cur_u, cur_v, mu, nu, cost, reg, cfg.eval_batches, eval_p, seed=cfg.seed
            )
            if not np.isfinite(objective):
                raise NumericalError(f"dual objective became non-finite at iteration {k}")
            trace.append(k, elapsed * 1000.0, objective)
            logger.debug(f"  iter {k:>7}: objective={objective:.6f} ({elapsed:.2f}s)")

    if trace.clamp_events:
        logger.warning(
            f"Entropic exponent clamped {trace.clamp_events} times; run flagged invalid"
        )
    logger.info(f"Dual solve done: objective={trace.final_objective:.6f} in {elapsed:.2f}s")

    u, v = averager.resolve(u, v)
    return u, v, trace
