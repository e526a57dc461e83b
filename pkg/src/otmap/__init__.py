"""Regularized optimal transport by stochastic dual ascent, and neural Monge maps.

Usage:
    from otmap import CostFn, DiscreteMeasure, DualSolverConfig, Regularization, solve_dual

    mu = DiscreteMeasure.uniform(x_points)
    nu = DiscreteMeasure.uniform(y_points)
    u, v, trace = solve_dual(
        mu, nu, CostFn.squared_euclidean(), Regularization.entropy(0.05), DualSolverConfig()
    )

    # Barycentric projection network from the same potentials
    f, _ = train_map(mu, nu, u, v, CostFn.squared_euclidean(), Regularization.entropy(0.05),
                     MapTrainConfig())
"""

from otmap.dual_solver import (
    DualSolverConfig,
    Regularization,
    TrainTrace,
    dual_objective_estimate,
    solve_dual,
)
from otmap.map_learn import MapTrainConfig, MongeMap, apply_map, train_map, train_reverse_map
from otmap.measures import CostFn, DiscreteMeasure, GaussianMeasure, GaussianMixture
from otmap.plan import TransportPlan, plan_density, recover_discrete_plan

__all__ = [
    "CostFn",
    "DiscreteMeasure",
    "DualSolverConfig",
    "GaussianMeasure",
    "GaussianMixture",
    "MapTrainConfig",
    "MongeMap",
    "Regularization",
    "TrainTrace",
    "TransportPlan",
    "apply_map",
    "dual_objective_estimate",
    "plan_density",
    "recover_discrete_plan",
    "solve_dual",
    "train_map",
    "train_reverse_map",
]
