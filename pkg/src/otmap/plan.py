"""
Primal recovery from dual potentials, plan diagnostics and discrete barycentric projection.

At the regularized optimum the plan has density H_ε w.r.t. μ×ν:

    entropy:  H(x, y) = exp((u(x) + v(y) − c(x, y))/ε)
    L2:       H(x, y) = (1/2ε)·(u(x) + v(y) − c(x, y))₊

which is exactly −∂F_ε/∂s, so the gradient of the dual penalty and the plan density
are one function. On discrete supports π_ij = H(x_i, y_j)·a_i·b_j.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from otmap.dual_solver import DualPotential, Regularization, RegKind, f_eps_partial, potential_eval
from otmap.exceptions import UnmatchedAtomError
from otmap.measures import CostFn, DiscreteMeasure, cost_matrix

logger = logging.getLogger("otmap.plan")


@dataclass(eq=False)
class TransportPlan:
    """Dense nonnegative coupling matrix with the marginals it is meant to have."""

    matrix: np.ndarray
    row_marginal_target: np.ndarray
    col_marginal_target: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        self.row_marginal_target = np.asarray(self.row_marginal_target, dtype=np.float64).ravel()
        self.col_marginal_target = np.asarray(self.col_marginal_target, dtype=np.float64).ravel()
        if self.matrix.ndim != 2:
            raise ValueError("plan matrix must be 2-D")
        n, m = self.matrix.shape
        if self.row_marginal_target.shape != (n,) or self.col_marginal_target.shape != (m,):
            raise ValueError("marginal targets do not match plan shape")
        if np.any(self.matrix < 0) or not np.all(np.isfinite(self.matrix)):
            raise ValueError("plan entries must be finite and nonnegative")
        for name, target in (("row", self.row_marginal_target), ("col", self.col_marginal_target)):
            if np.any(target < 0) or abs(target.sum() - 1.0) > 1e-9:
                raise ValueError(f"{name} marginal target must lie on the simplex")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def row_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def col_sums(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def to_csv(self, path) -> Path:
        path = Path(path)
        frame = pd.DataFrame(self.matrix, columns=[f"j{j}" for j in range(self.shape[1])])
        frame.to_csv(path, index=False, float_format="%.17g")
        return path


# =============================================================================
# Plan density
# =============================================================================


def h_eps(reg: Regularization, u_val, v_val, c_val):
    """Plan density H_ε(u, v, c) = −∂F/∂s at s = u + v − c."""
    s = np.asarray(u_val, dtype=np.float64) + np.asarray(v_val, dtype=np.float64) - c_val
    out = -np.asarray(f_eps_partial(reg, s))
    return float(out) if np.ndim(out) == 0 else out


class PlanDensity:
    """Closure (x, y) ↦ H_ε(x, y) over fixed potentials, cost and regularization."""

    def __init__(self, u: DualPotential, v: DualPotential, cost: CostFn, reg: Regularization):
        self.u = u
        self.v = v
        self.cost = cost
        self.reg = reg

    def __call__(self, xb, yb, x_indices=None, y_indices=None) -> np.ndarray:
        xb = np.asarray(xb, dtype=np.float64)
        yb = np.asarray(yb, dtype=np.float64)
        uu = potential_eval(self.u, xb, x_indices)
        vv = potential_eval(self.v, yb, y_indices)
        return h_eps(self.reg, uu[:, None], vv[None, :], cost_matrix(self.cost, xb, yb))


def plan_density(u: DualPotential, v: DualPotential, cost: CostFn, reg: Regularization) -> PlanDensity:
    return PlanDensity(u, v, cost, reg)


def recover_discrete_plan(
    u: DualPotential,
    v: DualPotential,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: CostFn,
    reg: Regularization,
) -> TransportPlan:
    """π_ij = H_ε(x_i, y_j)·a_i·b_j with potentials evaluated on both supports."""
    H = PlanDensity(u, v, cost, reg)(mu.points, nu.points, np.arange(mu.n), np.arange(nu.n))
    matrix = H * mu.weights[:, None] * nu.weights[None, :]
    return TransportPlan(matrix, mu.weights, nu.weights)


# =============================================================================
# Diagnostics
# =============================================================================


def marginal_residuals(plan: TransportPlan) -> tuple[float, float]:
    """L1 distances of realized row/column sums to their targets."""
    row = float(np.abs(plan.row_sums - plan.row_marginal_target).sum())
    col = float(np.abs(plan.col_sums - plan.col_marginal_target).sum())
    return row, col


def regularized_objective(
    plan: TransportPlan, cost_matrix: np.ndarray, reg: Regularization
) -> tuple[float, float]:
    """
    (Σ π_ij C_ij, R(π)) with R_e = Σ π(ln(π/ab) − 1) or R_L2 = Σ π²/(ab).

    Zero entries contribute nothing (0·ln 0 = 0).
    """
    P = plan.matrix
    C = np.asarray(cost_matrix, dtype=np.float64)
    if C.shape != P.shape:
        raise ValueError(f"cost matrix shape {C.shape} does not match plan {P.shape}")
    ab = plan.row_marginal_target[:, None] * plan.col_marginal_target[None, :]
    transport = float(np.sum(P * C))

    mask = P > 0
    if reg.kind == RegKind.ENTROPY:
        value = float(np.sum(P[mask] * (np.log(P[mask] / ab[mask]) - 1.0)))
    else:
        value = float(np.sum(P[mask] ** 2 / ab[mask]))
    return transport, value


def primal_objective(plan: TransportPlan, C: np.ndarray, reg: Regularization) -> float:
    """Transport cost plus ε times the regularizer."""
    transport, value = regularized_objective(plan, C, reg)
    return transport + reg.epsilon * value


def plan_l1_distance(first: TransportPlan, second: TransportPlan) -> float:
    if first.shape != second.shape:
        raise ValueError(f"plan shapes differ: {first.shape} vs {second.shape}")
    return float(np.abs(first.matrix - second.matrix).sum())


# =============================================================================
# Barycentric projection
# =============================================================================


def barycentric_projection_discrete(plan: TransportPlan, target_points: np.ndarray) -> np.ndarray:
    """Row i = Σ_j π_ij y_j / Σ_j π_ij (squared-Euclidean barycentric projection)."""
    Y = np.asarray(target_points, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != plan.shape[1]:
        raise ValueError(f"{Y.shape[0]} target points for a plan with {plan.shape[1]} columns")
    mass = plan.row_sums
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        raise UnmatchedAtomError(
            f"{empty.size} source atoms carry no plan mass (first: index {int(empty[0])})"
        )
    return (plan.matrix @ Y) / mass[:, None]
