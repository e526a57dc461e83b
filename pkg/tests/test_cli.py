"""
Tests for the otmap command line: argument parsing, dispatch and exit codes.
"""

from unittest.mock import patch

import pytest

SOLVE_YAML = """
name: cli_solve
source:
  kind: gaussian
  mean: [0.0, 0.0]
  covariance: [[1.0, 0.0], [0.0, 1.0]]
  samples: 10
target:
  kind: ring
  k: 4
reg:
  epsilon: 0.5
solver:
  batch_size: 5
  learning_rate: 0.5
  iterations: 40
  log_every: 20
"""


@pytest.fixture
def solve_config(tmp_path, monkeypatch):
    monkeypatch.setenv("OTMAP_OUTPUT_DIR", str(tmp_path / "outputs"))
    monkeypatch.delenv("OTMAP_STRICT_CHECKS", raising=False)
    monkeypatch.delenv("OTMAP_CHECKS_PATH", raising=False)
    path = tmp_path / "solve.yml"
    path.write_text(SOLVE_YAML)
    return path


class TestParser:
    """Tests for build_parser."""

    def test_subcommand_is_required(self):
        """Test that calling without a subcommand is a usage error."""
        from otmap.main import build_parser

        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])

        assert exc.value.code == 2

    def test_overrides_accumulate(self):
        """Test that --set can be repeated."""
        from otmap.main import build_parser

        args = build_parser().parse_args(["solve", "-c", "x.yml", "--set", "a=1", "--set", "b.c=2"])

        assert args.overrides == ["a=1", "b.c=2"]
        assert args.output_dir is None

    def test_map_train_needs_checkpoint(self):
        """Test that map-train requires --dual-checkpoint."""
        from otmap.main import build_parser

        with pytest.raises(SystemExit):
            build_parser().parse_args(["map-train", "-c", "x.yml"])


class TestMain:
    """Tests for main() exit codes."""

    @pytest.mark.integration
    def test_solve_succeeds(self, solve_config, tmp_path):
        """Test a full solve run through the CLI."""
        from otmap.main import EXIT_OK, main

        code = main(["solve", "--config", str(solve_config)])

        assert code == EXIT_OK
        assert (tmp_path / "outputs" / "cli_solve" / "report.json").exists()

    @pytest.mark.integration
    def test_output_dir_flag(self, solve_config, tmp_path):
        """Test that --output-dir overrides OTMAP_OUTPUT_DIR/<name>."""
        from otmap.main import main

        code = main(["solve", "-c", str(solve_config), "--output-dir", str(tmp_path / "here")])

        assert code == 0
        assert (tmp_path / "here" / "report.json").exists()

    def test_invalid_config_exits_2(self, solve_config):
        """Test that a config validation error exits with code 2."""
        from otmap.main import EXIT_USAGE, main

        assert main(["solve", "-c", str(solve_config), "--set", "reg.epsilon=-1"]) == EXIT_USAGE

    def test_missing_config_exits_2(self, tmp_path):
        """Test that a missing config file exits with code 2."""
        from otmap.main import main

        assert main(["solve", "-c", str(tmp_path / "nope.yml")]) == 2

    def test_malformed_measure_file_exits_2(self, tmp_path, monkeypatch):
        """Test that a CSV with non-numeric cells exits with code 2."""
        from otmap.main import main

        monkeypatch.setenv("OTMAP_OUTPUT_DIR", str(tmp_path / "outputs"))
        (tmp_path / "bad.csv").write_text("x0,x1\n1.0,abc\n")
        (tmp_path / "c.yml").write_text(
            f"source:\n  kind: csv\n  path: {tmp_path / 'bad.csv'}\ntarget:\n  kind: ring\n"
        )

        assert main(["solve", "-c", str(tmp_path / "c.yml")]) == 2

    def test_missing_checkpoint_exits_2(self, tmp_path, monkeypatch):
        """Test that map-train with a missing checkpoint exits with code 2."""
        from otmap.main import main

        monkeypatch.setenv("OTMAP_OUTPUT_DIR", str(tmp_path / "outputs"))
        (tmp_path / "m.yml").write_text("source:\n  kind: ring\ntarget:\n  kind: ring\n")

        code = main(["map-train", "-c", str(tmp_path / "m.yml"), "--dual-checkpoint", str(tmp_path / "x.json")])

        assert code == 2

    def test_numerical_error_exits_1(self, solve_config):
        """Test that a numerical failure exits with code 1."""
        from otmap.exceptions import NumericalError
        from otmap.main import EXIT_FAILURE, main

        with patch("otmap.main.cmd_solve", side_effect=NumericalError("non-finite gradient")):
            assert main(["solve", "-c", str(solve_config)]) == EXIT_FAILURE

    def test_strict_check_failure_exits_1(self, solve_config, tmp_path, monkeypatch):
        """Test that failing acceptance checks exit with code 1 in strict mode."""
        from otmap.main import main

        checks = tmp_path / "checks.yml"
        checks.write_text("solve:\n  never:\n    metric: marginal_residual_max\n    max: -1.0\n")
        monkeypatch.setenv("OTMAP_STRICT_CHECKS", "true")
        monkeypatch.setenv("OTMAP_CHECKS_PATH", str(checks))

        assert main(["solve", "-c", str(solve_config)]) == 1

    def test_reverse_flag_sets_config(self, tmp_path, monkeypatch):
        """Test that --reverse reaches the map-train config."""
        from otmap.main import main

        monkeypatch.setenv("OTMAP_OUTPUT_DIR", str(tmp_path / "outputs"))
        (tmp_path / "m.yml").write_text("source:\n  kind: ring\ntarget:\n  kind: ring\n")

        with patch("otmap.main.cmd_map_train") as mock_train:
            code = main(["map-train", "-c", str(tmp_path / "m.yml"), "--dual-checkpoint", "d.json", "--reverse"])

        assert code == 0
        cfg, checkpoint = mock_train.call_args.args[:2]
        assert cfg.reverse is True
        assert checkpoint == "d.json"
