"""
Acceptance runs of the shipped configs with strict checks.

These take minutes; deselect with -m 'not slow'.
"""

from pathlib import Path

import pytest

CONFIGS = Path(__file__).parent.parent / "configs"
CHECKS = Path(__file__).parent.parent / "checks" / "acceptance_checks.yml"


def _strict(tmp_path):
    from otmap.config import RuntimeSettings

    return RuntimeSettings(_env_file=None, output_dir=tmp_path, strict_checks=True, checks_path=CHECKS)


@pytest.mark.slow
@pytest.mark.integration
class TestShippedConfigs:
    """End-to-end runs that must pass their acceptance checks."""

    def test_solve_matches_sinkhorn(self, tmp_path):
        """Test the entropic sweep against Sinkhorn and the recovered plan marginals."""
        from otmap.config import SolveConfig, load_config
        from otmap.pipelines import cmd_solve

        report = cmd_solve(load_config(CONFIGS / "solve.yml", SolveConfig), _strict(tmp_path))

        assert report.checks["passed"]
        assert report.metrics["sinkhorn_relative_gap_max"] <= 1e-2
        assert report.metrics["marginal_residual_max"] <= 5e-2

    def test_map_chain(self, tmp_path):
        """Test the L2 Gaussian-to-ring chain: solve → map-train → generate."""
        from otmap.config import GenerateConfig, MapTrainConfigModel, SolveConfig, load_config
        from otmap.pipelines import cmd_generate, cmd_map_train, cmd_solve

        settings = _strict(tmp_path)
        cmd_solve(load_config(CONFIGS / "demo_solve.yml", SolveConfig), settings)
        dual = tmp_path / "demo_solve" / "checkpoints" / "potentials_eps_0.05.json"

        fitted = cmd_map_train(load_config(CONFIGS / "map_train.yml", MapTrainConfigModel), dual, settings)
        generated = cmd_generate(
            load_config(CONFIGS / "generate.yml", GenerateConfig),
            tmp_path / "map" / "checkpoints" / "map.json",
            settings,
        )

        assert fitted.metrics["pushforward_mean_error"] <= 0.10
        assert generated.metrics["histogram_mass_error"] <= 1e-9
        assert 0.0625 <= generated.metrics["atom_share_min"]
        assert generated.metrics["atom_share_max"] <= 0.25

    def test_converge(self, tmp_path):
        """Test plan gaps as eps shrinks, the exact crosscheck and the learned Gaussian map."""
        from otmap.config import ConvergeConfig, load_config
        from otmap.pipelines import cmd_converge

        report = cmd_converge(load_config(CONFIGS / "converge.yml", ConvergeConfig), _strict(tmp_path))

        m = report.metrics
        assert m["plan_gap_at_smallest_eps"] <= 1e-2
        assert m["exact_crosscheck_max_diff"] <= 1e-10
        assert m["assignment_relative_deviation"] <= 5e-2
        assert m["learned_map_error"] <= 0.05
        assert m["learned_map_pushforward_mean_error"] <= 0.10
        assert m["learned_map_pushforward_covariance_error"] <= 0.15

    def test_domain_adaptation(self, tmp_path):
        """Test that the learned map beats source-only 1-NN on rotated, shifted blobs."""
        from otmap.config import DaConfig, load_config
        from otmap.pipelines import cmd_da

        cfg = load_config(
            CONFIGS / "da.yml",
            DaConfig,
            ["reg_grid=[0.1]", "sinkhorn_grid=[0.1, 0.5]", "solver.iterations=5000", "solver.averaging_start=2500"],
        )

        report = cmd_da(cfg, _strict(tmp_path))

        assert report.metrics["map_gain_min"] >= 0.15
        assert report.metrics["map_minus_projection_min"] >= -0.02

    def test_benchmark_dual_cost_is_flat(self, tmp_path):
        """Test flat dual iteration cost, linear semi-dual cost and the dual reaching the reference first."""
        from otmap.config import BenchmarkConfig, load_config
        from otmap.pipelines import cmd_benchmark

        report = cmd_benchmark(load_config(CONFIGS / "benchmark.yml", BenchmarkConfig), _strict(tmp_path))

        m = report.metrics
        assert m["dual_time_ratio"] < 2.0
        assert m["semi_dual_time_ratio"] >= 20.0
        assert all(m["dual_reaches_first"].values())
        assert {c["reference_source"] for c in m["curves"].values()} == {"sinkhorn"}


@pytest.mark.slow
class TestDualAgainstSinkhorn:
    """Stochastic dual ascent against the Sinkhorn optimum on a fixed random instance."""

    def test_entropic_64x64_gap_and_marginals(self):
        """Test the relative objective gap and recovered-plan marginals on uniform 64×64 clouds."""
        import numpy as np

        from otmap.baselines import sinkhorn
        from otmap.dual_solver import DualSolverConfig, Regularization, exact_dual_objective, solve_dual
        from otmap.measures import CostFn, DiscreteMeasure, cost_matrix
        from otmap.plan import marginal_residuals, recover_discrete_plan

        rng = np.random.default_rng(0)
        mu = DiscreteMeasure.uniform(rng.uniform(size=(64, 2)))
        nu = DiscreteMeasure.uniform(rng.uniform(size=(64, 2)))
        cost = CostFn.squared_euclidean()
        reg = Regularization.entropy(0.1)
        cfg = DualSolverConfig(
            batch_size=64, learning_rate=1.0, iterations=20_000, log_every=5_000, averaging_start=10_000
        )

        u, v, _ = solve_dual(mu, nu, cost, reg, cfg)

        reference = sinkhorn(mu.weights, nu.weights, cost_matrix(cost, mu.points, nu.points), 0.1).dual_objective
        dual = exact_dual_objective(u, v, mu, nu, cost, reg)
        row, col = marginal_residuals(recover_discrete_plan(u, v, mu, nu, cost, reg))
        assert abs(dual - reference) / abs(reference) <= 1e-2
        assert max(row, col) <= 5e-2
