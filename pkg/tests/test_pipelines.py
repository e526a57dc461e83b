"""
Tests for experiment pipelines.

Test Categories:
- Unit tests: measure building, evaluation helpers, report writing
- Integration tests: full command runs on tiny problems writing into tmp_path
  (marked with @pytest.mark.integration)
"""

import numpy as np
import pandas as pd
import pytest

GAUSSIAN_2D = {"kind": "gaussian", "mean": [0.0, 0.0], "covariance": [[1.0, 0.0], [0.0, 1.0]]}
RING_4 = {"kind": "ring", "k": 4, "radius": 2.0}


def _settings(tmp_path, **overrides):
    from otmap.config import RuntimeSettings

    values = {"output_dir": tmp_path / "outputs", "strict_checks": False}
    values.update(overrides)
    return RuntimeSettings(_env_file=None, **values)


def _solve_cfg(**overrides):
    from otmap.config import SolveConfig

    data = {
        "name": "solve",
        "source": {**GAUSSIAN_2D, "samples": 12},
        "target": RING_4,
        "reg": {"kind": "entropy", "epsilon": 0.5},
        "solver": {"batch_size": 8, "learning_rate": 0.5, "iterations": 200, "log_every": 50},
    }
    data.update(overrides)
    return SolveConfig.model_validate(data)


def _map_cfg(**overrides):
    from otmap.config import MapTrainConfigModel

    data = {
        "name": "map",
        "source": {**GAUSSIAN_2D, "samples": 12},
        "target": RING_4,
        "reg": {"kind": "entropy", "epsilon": 0.5},
        "map": {"batch_size": 8, "iterations": 40, "log_every": 10, "hidden": [8]},
    }
    data.update(overrides)
    return MapTrainConfigModel.model_validate(data)


# ============================================================================
# Unit Tests - Measures from config
# ============================================================================


class TestBuildMeasure:
    """Tests for build_measure and build_pair."""

    def test_gaussian_with_samples_is_discrete(self):
        """Test that `samples` turns a Gaussian into an empirical measure."""
        from otmap.config import MeasureSpec
        from otmap.measures import DiscreteMeasure
        from otmap.pipelines import build_measure

        m = build_measure(MeasureSpec(**GAUSSIAN_2D, samples=30), seed=0)

        assert isinstance(m, DiscreteMeasure)
        assert m.n == 30

    def test_gaussian_without_samples_stays_continuous(self):
        """Test that a Gaussian spec without samples is a continuous law."""
        from otmap.config import MeasureSpec
        from otmap.measures import GaussianMeasure
        from otmap.pipelines import build_measure

        assert isinstance(build_measure(MeasureSpec(**GAUSSIAN_2D), seed=0), GaussianMeasure)

    def test_mixture_weights_are_normalized(self):
        """Test that mixture weights need not sum to one in config."""
        from otmap.config import MeasureSpec
        from otmap.pipelines import build_measure

        spec = MeasureSpec(
            kind="mixture",
            components=[
                {"weight": 1.0, "mean": [-1.0, 0.0], "covariance": [[0.3, 0.0], [0.0, 0.3]]},
                {"weight": 3.0, "mean": [1.0, 0.0], "covariance": [[0.3, 0.0], [0.0, 0.3]]},
            ],
        )

        m = build_measure(spec, seed=0)

        np.testing.assert_allclose(m.weights, [0.25, 0.75])

    def test_invalid_covariance_is_config_error(self):
        """Test that a bad covariance surfaces as ConfigError."""
        from otmap.config import MeasureSpec
        from otmap.exceptions import ConfigError
        from otmap.pipelines import build_measure

        spec = MeasureSpec(kind="gaussian", mean=[0.0, 0.0], covariance=[[1.0, 0.0], [0.0, -1.0]])

        with pytest.raises(ConfigError, match="invalid gaussian measure"):
            build_measure(spec, seed=0)

    def test_fitted_gaussian_copies_target_moments(self):
        """Test that a fitted Gaussian source takes the target's empirical moments."""
        from otmap.config import MeasureSpec
        from otmap.measures import empirical_moments
        from otmap.pipelines import build_pair

        mu, nu = build_pair(MeasureSpec(kind="fitted_gaussian"), MeasureSpec(**RING_4), seed=0)

        mean, cov = empirical_moments(nu)
        np.testing.assert_allclose(mu.mean, mean)
        np.testing.assert_allclose(mu.covariance, cov)

    def test_blob_pair_shares_one_draw(self):
        """Test that blob source and target specs come from the same generator draw."""
        from otmap.config import MeasureSpec
        from otmap.measures import make_blobs
        from otmap.pipelines import build_pair

        spec = {"kind": "blobs", "k": 3, "per_class": 5, "shift": [0.0, -3.0], "rotation_deg": 30.0}
        mu, nu = build_pair(MeasureSpec(**spec), MeasureSpec(**spec, role="target"), seed=4)

        src, tgt = make_blobs(3, 5, 2, [0.0, -3.0], np.deg2rad(30.0), np.random.default_rng(4))
        np.testing.assert_array_equal(mu.points, src.points)
        np.testing.assert_array_equal(nu.points, tgt.points)

    def test_dimension_mismatch(self):
        """Test that measures of different dimensions are rejected."""
        from otmap.config import MeasureSpec
        from otmap.exceptions import ConfigError
        from otmap.pipelines import build_pair

        with pytest.raises(ConfigError, match="dimension"):
            build_pair(MeasureSpec(**GAUSSIAN_2D), MeasureSpec(**RING_4, dim=3), seed=0)

    def test_median_normalization(self):
        """Test that median normalization brings the calibration median to one."""
        from otmap.config import CostSpec
        from otmap.measures import DiscreteMeasure
        from otmap.pipelines import calibrate_cost

        mu = DiscreteMeasure.uniform(np.zeros((3, 1)))
        nu = DiscreteMeasure.uniform(np.full((3, 1), 2.0))

        cost = calibrate_cost(CostSpec(normalize="median"), mu, nu, seed=0)

        assert cost.scale == pytest.approx(0.25)


# ============================================================================
# Unit Tests - Evaluation helpers
# ============================================================================


class TestEvaluationHelpers:
    """Tests for 1-NN classification, accuracy and time-to-reach."""

    def test_knn_assigns_nearest_label(self):
        """Test 1-NN labels and the lowest-index tie rule."""
        from otmap.pipelines import knn_classify

        train = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 0.0]])
        labels = np.array([7, 8, 9])

        out = knn_classify(train, labels, np.array([[0.4, 0.0], [1.0, 0.0], [9.0, 1.0]]))

        np.testing.assert_array_equal(out, [7, 7, 9])

    def test_knn_chunks_large_queries(self):
        """Test that queries larger than one chunk are fully classified."""
        from otmap.pipelines import KNN_CHUNK, knn_classify

        query = np.linspace(-1, 1, KNN_CHUNK + 7)[:, None]

        out = knn_classify(np.array([[-1.0], [1.0]]), np.array([0, 1]), query)

        assert out.shape == (KNN_CHUNK + 7,)
        assert out[0] == 0 and out[-1] == 1

    def test_knn_rejects_label_mismatch(self):
        """Test that labels must match the training set."""
        from otmap.pipelines import knn_classify

        with pytest.raises(ValueError, match="one label"):
            knn_classify(np.zeros((3, 2)), np.zeros(2), np.zeros((1, 2)))

    def test_accuracy(self):
        """Test the fraction of matching labels."""
        from otmap.pipelines import accuracy

        assert accuracy([1, 2, 3, 4], [1, 2, 0, 0]) == pytest.approx(0.5)

    def test_time_to_reach(self):
        """Test the wall time of the first objective at or above a level."""
        from otmap.dual_solver import TrainTrace
        from otmap.pipelines import time_to_reach

        trace = TrainTrace()
        for k, (ms, obj) in enumerate([(1.0, 0.1), (2.0, 0.5), (3.0, 0.9)], start=1):
            trace.append(k, ms, obj)

        assert time_to_reach(trace, 0.5) == 2.0
        assert time_to_reach(trace, 1.0) is None


# ============================================================================
# Unit Tests - Report writing
# ============================================================================


class TestExperimentReport:
    """Tests for staged report writes."""

    def test_write_layout_and_timing_strip(self, tmp_path):
        """Test the output layout and removal of wall-clock values in deterministic mode."""
        import orjson

        from otmap.dual_solver import TrainTrace
        from otmap.pipelines import ExperimentReport

        trace = TrainTrace()
        trace.append(10, 3.5, 0.2)
        report = ExperimentReport(
            name="r",
            command="solve",
            config={},
            metrics={"value": 1.0, "train_ms": 12.0, "nested": {"wall_seconds": 1.0, "ok": True}},
            tables={"grid": pd.DataFrame({"a": [1.0, 2.0]})},
            traces={"dual": trace},
        )

        out = report.write(tmp_path / "r", deterministic=True)

        data = orjson.loads((out / "report.json").read_bytes())
        assert data["metrics"] == {"value": 1.0, "nested": {"ok": True}}
        assert data["files"] == {"trace:dual": "traces/dual.csv", "table:grid": "tables/grid.csv"}
        assert pd.read_csv(out / "traces/dual.csv")["wall_ms"].isna().all()

    def test_rewrite_replaces_previous_outputs(self, tmp_path):
        """Test that writing again replaces stale files."""
        from otmap.pipelines import ExperimentReport

        out = tmp_path / "r"
        ExperimentReport("r", "solve", {}, tables={"old": pd.DataFrame({"a": [1]})}).write(out)

        ExperimentReport("r", "solve", {}, tables={"new": pd.DataFrame({"a": [1]})}).write(out)

        assert not (out / "tables/old.csv").exists()
        assert (out / "tables/new.csv").exists()

    def test_failed_write_leaves_nothing(self, tmp_path):
        """Test that an error during staging removes the staging directory."""
        from unittest.mock import patch

        from otmap.pipelines import ExperimentReport

        report = ExperimentReport("r", "solve", {}, tables={"t": pd.DataFrame({"a": [1]})})
        with patch("otmap.pipelines.write_atomic", side_effect=OSError("disk full")):
            with pytest.raises(OSError):
                report.write(tmp_path / "r")

        assert list(tmp_path.iterdir()) == []


# ============================================================================
# Integration Tests - Commands
# ============================================================================


@pytest.mark.integration
class TestSolveCommand:
    """Tests for the solve command."""

    def test_solve_writes_outputs_and_diagnostics(self, tmp_path):
        """Test a discrete solve: files, plan diagnostics and Sinkhorn reference."""
        from otmap.pipelines import cmd_solve

        report = cmd_solve(_solve_cfg(export_plan=True), _settings(tmp_path))

        out = tmp_path / "outputs" / "solve"
        assert (out / "report.json").exists()
        assert (out / "traces" / "dual_eps_0.5.csv").exists()
        assert (out / "checkpoints" / "potentials_eps_0.5.json").exists()
        assert (out / "tables" / "plan_eps_0.5.csv").exists()
        entry = report.metrics["per_epsilon"]["eps_0.5"]
        assert np.isfinite(entry["row_residual"])
        assert "sinkhorn_relative_gap" in entry
        assert report.metrics["marginal_residual_max"] is not None
        assert report.checks["checks_run"] > 0

    def test_deterministic_runs_are_identical(self, tmp_path):
        """Test that two runs with one seed produce byte-identical reports and traces."""
        from otmap.pipelines import cmd_solve

        settings = _settings(tmp_path)
        cmd_solve(_solve_cfg(), settings, output_dir=tmp_path / "a")
        cmd_solve(_solve_cfg(), settings, output_dir=tmp_path / "b")

        for rel in ("report.json", "traces/dual_eps_0.5.csv", "checkpoints/potentials_eps_0.5.json"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
        assert b"train_ms" not in (tmp_path / "a" / "report.json").read_bytes()

    def test_epsilon_sweep(self, tmp_path):
        """Test that a list of epsilons gives one trace and checkpoint per value."""
        from otmap.pipelines import cmd_solve

        report = cmd_solve(_solve_cfg(reg={"kind": "l2", "epsilon": [1.0, 0.5]}), _settings(tmp_path))

        assert set(report.metrics["per_epsilon"]) == {"eps_1", "eps_0.5"}
        assert set(report.traces) == {"dual_eps_1", "dual_eps_0.5"}
        assert report.metrics["sinkhorn_relative_gap_max"] is None

    def test_continuous_source_uses_network_potential(self, tmp_path):
        """Test a semi-discrete solve without plan diagnostics."""
        from otmap.checkpoints import load_checkpoint
        from otmap.pipelines import cmd_solve

        cfg = _solve_cfg(
            source=GAUSSIAN_2D,
            solver={"batch_size": 8, "iterations": 20, "log_every": 10, "potential_hidden": [8]},
        )

        report = cmd_solve(cfg, _settings(tmp_path))

        assert report.metrics["marginal_residual_max"] is None
        payload = load_checkpoint(tmp_path / "outputs" / "solve" / "checkpoints" / "potentials_eps_0.5.json").payload
        assert payload["u"]["type"] == "network"
        assert payload["v"]["type"] == "vector"

    def test_strict_checks_failure_writes_nothing(self, tmp_path):
        """Test that a failing check in strict mode raises before any output is written."""
        from otmap.exceptions import AcceptanceCheckError
        from otmap.pipelines import cmd_solve

        checks = tmp_path / "checks.yml"
        checks.write_text("solve:\n  impossible:\n    metric: marginal_residual_max\n    max: -1.0\n")
        settings = _settings(tmp_path, strict_checks=True, checks_path=checks)

        with pytest.raises(AcceptanceCheckError):
            cmd_solve(_solve_cfg(), settings)

        assert not (tmp_path / "outputs" / "solve").exists()


@pytest.mark.integration
class TestMapAndGenerateCommands:
    """Tests for map-train and generate chained on a solve checkpoint."""

    @pytest.fixture
    def dual_checkpoint(self, tmp_path):
        from otmap.pipelines import cmd_solve

        cmd_solve(_solve_cfg(), _settings(tmp_path))
        return tmp_path / "outputs" / "solve" / "checkpoints" / "potentials_eps_0.5.json"

    def test_map_train_forward(self, tmp_path, dual_checkpoint):
        """Test that map-train writes a map checkpoint, a trace and moment errors."""
        from otmap.checkpoints import load_checkpoint
        from otmap.pipelines import cmd_map_train

        report = cmd_map_train(_map_cfg(), dual_checkpoint, _settings(tmp_path))

        out = tmp_path / "outputs" / "map"
        meta = load_checkpoint(out / "checkpoints" / "map.json").metadata
        assert meta["role"] == "forward"
        assert meta["layer_sizes"] == [2, 8, 2]
        assert (out / "traces" / "map.csv").exists()
        assert np.isfinite(report.metrics["pushforward_mean_error"])

    def test_map_train_reverse(self, tmp_path, dual_checkpoint):
        """Test that --reverse fits g from target to source."""
        from otmap.checkpoints import load_checkpoint
        from otmap.pipelines import cmd_map_train

        cmd_map_train(_map_cfg(reverse=True), dual_checkpoint, _settings(tmp_path))

        meta = load_checkpoint(tmp_path / "outputs" / "map" / "checkpoints" / "reverse_map.json").metadata
        assert meta["role"] == "reverse"

    def test_map_train_rejects_other_epsilon(self, tmp_path, dual_checkpoint):
        """Test that the config epsilon must match the checkpoint."""
        from otmap.exceptions import ConfigError
        from otmap.pipelines import cmd_map_train

        with pytest.raises(ConfigError, match="epsilon"):
            cmd_map_train(_map_cfg(reg={"kind": "entropy", "epsilon": 0.1}), dual_checkpoint, _settings(tmp_path))

    def test_map_train_rejects_other_support(self, tmp_path, dual_checkpoint):
        """Test that potentials sized for another support are rejected."""
        from otmap.exceptions import ConfigError
        from otmap.pipelines import cmd_map_train

        cfg = _map_cfg(source={**GAUSSIAN_2D, "samples": 13})

        with pytest.raises(ConfigError, match="potential u"):
            cmd_map_train(cfg, dual_checkpoint, _settings(tmp_path))

    def test_map_train_rejects_same_size_other_source(self, tmp_path, dual_checkpoint):
        """Test that a source with the solve run's size but other points is rejected."""
        from otmap.exceptions import ConfigError
        from otmap.pipelines import cmd_map_train

        shifted = {**GAUSSIAN_2D, "mean": [3.0, -1.0], "samples": 12}

        with pytest.raises(ConfigError, match="source support does not match"):
            cmd_map_train(_map_cfg(source=shifted), dual_checkpoint, _settings(tmp_path))

    def test_solve_checkpoint_records_support_digests(self, dual_checkpoint):
        """Test that the solve checkpoint stores a digest of each discrete support."""
        from otmap.checkpoints import load_checkpoint, support_digest
        from otmap.pipelines import build_pair

        meta = load_checkpoint(dual_checkpoint).metadata
        mu, nu = build_pair(_solve_cfg().source, _solve_cfg().target, meta["measure_seed"])

        assert meta["source_digest"] == support_digest(mu)
        assert meta["target_digest"] == support_digest(nu)
        assert len(meta["source_digest"]) == 64

    def test_generate_histogram_and_shares(self, tmp_path, dual_checkpoint):
        """Test sample generation, the normalized histogram and nearest-atom shares."""
        from otmap.config import GenerateConfig
        from otmap.pipelines import cmd_generate, cmd_map_train

        cmd_map_train(_map_cfg(), dual_checkpoint, _settings(tmp_path))
        cfg = GenerateConfig.model_validate(
            {
                "source": GAUSSIAN_2D,
                "target": RING_4,
                "samples": 500,
                "chunk_size": 200,
                "histogram_bins": 10,
                "displacement_grid": 5,
            }
        )

        report = cmd_generate(cfg, tmp_path / "outputs" / "map" / "checkpoints" / "map.json", _settings(tmp_path))

        assert report.metrics["samples"] == 500
        assert report.metrics["histogram_mass_error"] < 1e-9
        assert len(report.tables["histogram"]) == 100
        assert len(report.tables["displacement"]) == 25
        assert sum(report.metrics["atom_shares"]) == pytest.approx(1.0)
        assert len(report.tables["samples"]) == 500

    def test_generate_dimension_mismatch(self, tmp_path, dual_checkpoint):
        """Test that a source of another dimension is rejected."""
        from otmap.config import GenerateConfig
        from otmap.exceptions import ConfigError
        from otmap.pipelines import cmd_generate, cmd_map_train

        cmd_map_train(_map_cfg(), dual_checkpoint, _settings(tmp_path))
        cfg = GenerateConfig.model_validate({"source": {"kind": "gaussian", "mean": [0.0], "covariance": [[1.0]]}})

        with pytest.raises(ConfigError, match="dimension"):
            cmd_generate(cfg, tmp_path / "outputs" / "map" / "checkpoints" / "map.json", _settings(tmp_path))


def _da_cfg(**overrides):
    from otmap.config import DaConfig

    data = {
        "blobs": {"k": 2, "per_class": 10},
        "sinkhorn_grid": [0.5],
        "reg_grid": [0.5],
        "lr_grid": [0.001],
        "reg_kinds": ["entropy"],
        "solver": {"batch_size": 10, "learning_rate": 0.5, "iterations": 100, "log_every": 50},
        "map": {"batch_size": 10, "iterations": 20, "log_every": 10, "hidden": [8]},
    }
    data.update(overrides)
    return DaConfig.model_validate(data)


@pytest.mark.integration
class TestDaCommand:
    """Tests for the domain adaptation command."""

    def test_grid_and_summary(self, tmp_path):
        """Test that every method gets a grid row and a selected summary row."""
        from otmap.pipelines import cmd_da

        report = cmd_da(_da_cfg(), _settings(tmp_path))

        acc = report.metrics["accuracies"]
        assert set(acc) == {"source_only", "exact_bp", "sinkhorn_bp:entropy", "dual_bp:entropy", "map:entropy"}
        assert all(0.0 <= v <= 1.0 for v in acc.values())
        assert report.metrics["selection"] == "fixed"
        assert report.metrics["map_gain_min"] == pytest.approx(acc["map:entropy"] - acc["source_only"])
        assert set(report.tables["grid"]["method"]) == {"source_only", "exact_bp", "sinkhorn_bp", "dual_bp", "map"}

    def test_identical_domains_match_source_only(self, tmp_path):
        """Test that without shift or rotation the exact projection keeps source-only accuracy."""
        from otmap.pipelines import cmd_da

        cfg = _da_cfg(blobs={"k": 2, "per_class": 20, "shift": [0.0, 0.0], "rotation_deg": 0.0}, methods=["exact"])

        report = cmd_da(cfg, _settings(tmp_path))

        acc = report.metrics["accuracies"]
        assert acc["source_only"] >= 0.95
        assert acc["exact_bp"] >= 0.95

    def test_oracle_selection_picks_best(self, tmp_path):
        """Test that oracle selection reports the best grid accuracy per method."""
        from otmap.pipelines import cmd_da

        report = cmd_da(
            _da_cfg(sinkhorn_grid=[0.1, 2.0], methods=["sinkhorn"], oracle_selection=True),
            _settings(tmp_path),
        )

        grid = report.tables["grid"]
        best = grid[grid["method"] == "sinkhorn_bp"]["accuracy"].max()
        assert report.metrics["accuracies"]["sinkhorn_bp:entropy"] == best
        assert report.metrics["map_gain_min"] is None

    def test_diverged_grid_point_is_nan(self, tmp_path):
        """Test that a numerical failure marks the grid point NaN instead of aborting."""
        from unittest.mock import patch

        from otmap.exceptions import NumericalError
        from otmap.pipelines import cmd_da

        with patch("otmap.pipelines.solve_dual", side_effect=NumericalError("overflow")):
            report = cmd_da(_da_cfg(methods=["dual_bp", "map"]), _settings(tmp_path))

        grid = report.tables["grid"]
        assert grid[grid["method"].isin(["dual_bp", "map"])]["accuracy"].isna().all()

    def test_diverged_map_fit_is_nan(self, tmp_path):
        """Test that a map fit failing numerically marks only its own grid rows NaN."""
        from unittest.mock import patch

        from otmap.exceptions import NumericalError
        from otmap.pipelines import cmd_da

        cfg = _da_cfg(methods=["dual_bp", "map"], lr_grid=[0.01, 0.001])
        with patch("otmap.pipelines.train_map", side_effect=NumericalError("map loss overflow")):
            report = cmd_da(cfg, _settings(tmp_path))

        grid = report.tables["grid"]
        maps = grid[grid["method"] == "map"]
        assert len(maps) == 2
        assert maps["accuracy"].isna().all()
        assert grid[grid["method"] == "dual_bp"]["accuracy"].notna().all()


@pytest.mark.integration
class TestBenchmarkAndConvergeCommands:
    """Tests for the benchmark and convergence commands."""

    def test_benchmark_tables_and_metrics(self, tmp_path):
        """Test timing table, curves and reach flags on tiny sizes."""
        from otmap.config import BenchmarkConfig
        from otmap.pipelines import cmd_benchmark

        cfg = BenchmarkConfig(
            sizes=[20, 40],
            epsilons=[1.0],
            timing_iterations=5,
            eval_batch_size=10,
            batch_size=10,
            iterations=50,
            log_every=10,
            curve_size=20,
        )

        report = cmd_benchmark(cfg, _settings(tmp_path))

        timing = report.tables["timing"]
        assert set(timing["method"]) == {"dual", "semi_dual"}
        assert len(timing) == 4
        assert report.metrics["dual_time_ratio"] >= 1.0
        assert set(report.metrics["dual_reaches_first"]) == {"1"}
        assert report.metrics["curves"]["1"]["reference_source"] == "sinkhorn"
        assert b"per_iteration_ms" in (tmp_path / "outputs" / "benchmark" / "tables" / "timing.csv").read_bytes()

    def test_benchmark_reference_is_sinkhorn_at_default_curve_size(self, tmp_path):
        """Test that the default config computes a Sinkhorn reference for the n = 10⁴ curves."""
        from unittest.mock import MagicMock, patch

        from otmap.config import BenchmarkConfig
        from otmap.measures import CostFn
        from otmap.pipelines import BenchmarkRunner, benchmark_instance

        cfg = BenchmarkConfig()
        runner = BenchmarkRunner(cfg, _settings(tmp_path))
        mu, nu = benchmark_instance(cfg.curve_size, cfg.dim, np.random.default_rng(0))

        with patch("otmap.pipelines.sinkhorn_blockwise", return_value=MagicMock(dual_objective=1.25)) as sk:
            reference, source = runner._reference(mu, nu, CostFn.squared_euclidean(), 0.1, None, None)

        assert cfg.curve_size == 10_000
        assert source == "sinkhorn"
        assert reference == 1.25
        sk.assert_called_once()

    def test_converge_metrics(self, tmp_path):
        """Test plan gaps, simplex crosscheck, assignment deviation and Gaussian errors."""
        from otmap.config import ConvergeConfig
        from otmap.pipelines import cmd_converge

        cfg = ConvergeConfig(
            plan_sizes=[4],
            epsilons=[1.0, 0.1],
            assignment_n=4,
            gaussian_sizes=[32, 64],
            crosscheck_instances=6,
            gaussian_max_iters=500,
            learned_map=False,
        )

        report = cmd_converge(cfg, _settings(tmp_path))

        m = report.metrics
        assert len(m["plan_gaps"]["4"]) == 2
        assert m["plan_gaps"]["4"][1] < m["plan_gaps"]["4"][0]
        assert m["exact_crosscheck_max_diff"] < 1e-10
        assert 0.0 <= m["assignment_relative_deviation"] < 1.0
        assert len(m["gaussian_map_errors"]) == 2
        assert "learned_map_error" not in m

    def test_converge_learned_map(self, tmp_path):
        """Test that the learned-map study reports errors at the reference eps and over the sweep."""
        import numpy as np

        from otmap.config import ConvergeConfig
        from otmap.pipelines import cmd_converge

        cfg = ConvergeConfig(
            plan_sizes=[4],
            epsilons=[1.0],
            assignment_n=3,
            gaussian_sizes=[],
            crosscheck_instances=0,
            learned_map_samples=64,
            learned_map_holdout=50,
            learned_map_epsilons=[2.0, 1.0],
            gaussian_epsilon=0.5,
            solver={"batch_size": 16, "learning_rate": 0.5, "iterations": 200, "log_every": 50},
            map={"batch_size": 16, "iterations": 100, "log_every": 50, "hidden": [16]},
        )

        report = cmd_converge(cfg, _settings(tmp_path))

        m = report.metrics
        assert list(report.tables["learned_map"]["epsilon"]) == [2.0, 1.0, 0.5]
        assert len(m["learned_map_moment_errors"]) == 2
        assert np.isfinite(m["learned_map_error"])
        assert m["learned_map_pushforward_mean_error"] >= 0.0
        assert "gaussian_map_errors" not in m
