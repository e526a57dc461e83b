"""
Acceptance checks over experiment metrics.

Thresholds are declared per command in checks/acceptance_checks.yml and evaluated
against the metrics dict of a finished run, before anything is written.

Architecture:
    Runner → metrics → [AcceptanceValidator] → report.json (+ exit code in strict mode)

A check names one metric and one rule:

    max / min               scalar bound (lists and dicts are checked element-wise)
    equals                  exact value, typically a boolean flag
    nonincreasing_slack     sequence may not rise by more than this relative slack

``severity: warn`` turns a failure into a warning. A metric the run did not produce is
reported as a warning and skipped.

Usage:
    from otmap.validators import AcceptanceValidator

    result = AcceptanceValidator().validate("solve", report.metrics)
    if not result.passed:
        raise AcceptanceCheckError(result.failed_checks)
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

logger = logging.getLogger("otmap.validators")


# =============================================================================
# Data Classes
# =============================================================================


@dataclass
class AcceptanceCheckResult:
    """Counts and messages of the acceptance checks of one run."""

    passed: bool
    checks_run: int = 0
    checks_passed: int = 0
    checks_failed: int = 0
    checks_warned: int = 0
    failed_checks: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    duration_seconds: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def record(self, outcome: str, messages: list[str] | None = None) -> None:
        """Count one check as "passed", "warned" or "failed"."""
        self.checks_run += 1
        if outcome == "passed":
            self.checks_passed += 1
        elif outcome == "warned":
            self.checks_warned += 1
            self.warnings.extend(messages or [])
        else:
            self.checks_failed += 1
            self.failed_checks.extend(messages or [])


# =============================================================================
# Rules
# =============================================================================


def _leaves(value: Any, prefix: str = "") -> list[tuple[str, Any]]:
    """Flatten scalars, lists and dicts to (label, scalar) pairs."""
    if isinstance(value, dict):
        out = []
        for key, item in value.items():
            out.extend(_leaves(item, f"{prefix}[{key}]"))
        return out
    if isinstance(value, (list, tuple)):
        out = []
        for k, item in enumerate(value):
            out.extend(_leaves(item, f"{prefix}[{k}]"))
        return out
    return [(prefix, value)]


def _sequences(value: Any, prefix: str = "") -> list[tuple[str, list[float]]]:
    if isinstance(value, dict):
        out = []
        for key, item in value.items():
            out.extend(_sequences(item, f"{prefix}[{key}]"))
        return out
    return [(prefix, list(value))]


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _bound_violations(name: str, value: Any, spec: dict[str, Any]) -> list[str]:
    problems = []
    for label, x in _leaves(value):
        if "equals" in spec:
            if x != spec["equals"]:
                problems.append(f"{name}{label}: expected {spec['equals']!r}, got {x!r}")
            continue
        if not _is_number(x) or math.isnan(x):
            problems.append(f"{name}{label}: not a finite number ({x!r})")
            continue
        if "max" in spec and x > spec["max"]:
            problems.append(f"{name}{label}: {x:.6g} > max {spec['max']}")
        if "min" in spec and x < spec["min"]:
            problems.append(f"{name}{label}: {x:.6g} < min {spec['min']}")
    return problems


def _monotone_violations(name: str, value: Any, slack: float) -> list[str]:
    problems = []
    for label, seq in _sequences(value):
        for k in range(1, len(seq)):
            prev, cur = seq[k - 1], seq[k]
            if cur > prev * (1.0 + slack) + 1e-12:
                problems.append(
                    f"{name}{label}: rises from {prev:.6g} to {cur:.6g} at step {k} "
                    f"(slack {slack:.0%})"
                )
    return problems


# =============================================================================
# Validator
# =============================================================================


BUILTIN_CHECKS: dict[str, Any] = {
    "solve": {
        "marginal_residual": {"metric": "marginal_residual_max", "max": 5e-2},
        "sinkhorn_gap": {"metric": "sinkhorn_relative_gap_max", "max": 1e-2},
    },
    "generate": {
        "histogram_mass": {"metric": "histogram_mass_error", "max": 1e-9},
    },
}


class AcceptanceValidator:
    """
    Evaluate the YAML-declared acceptance checks of one command.

    Attributes:
        checks: check definitions per command
        warn_only: failures are downgraded to warnings and the result still passes
    """

    DEFAULT_CHECKS_PATH = (
        Path(__file__).parent.parent.parent / "checks" / "acceptance_checks.yml"
    )

    def __init__(self, checks_path: Path | str | None = None, warn_only: bool = True):
        self.checks_path = Path(checks_path) if checks_path else self.DEFAULT_CHECKS_PATH
        self.warn_only = warn_only
        self.checks = self._read_checks()

    def _read_checks(self) -> dict[str, Any]:
        if not self.checks_path.is_file():
            logger.warning(f"No acceptance checks at {self.checks_path}; falling back to built-ins")
            return dict(BUILTIN_CHECKS)
        declared = yaml.safe_load(self.checks_path.read_text()) or {}
        logger.debug(f"Acceptance checks for {sorted(declared)} from {self.checks_path}")
        return declared

    def validate(self, command: str, metrics: dict[str, Any]) -> AcceptanceCheckResult:
        started = time.monotonic()
        result = AcceptanceCheckResult(passed=True)
        checks = self.checks.get(command) or {}
        logger.info(f"Running {len(checks)} acceptance checks for {command}")

        for check_name, spec in checks.items():
            outcome, messages = self._evaluate(check_name, spec, metrics)
            result.record(outcome, messages)
            if outcome == "passed":
                logger.debug(f"✓ {check_name}")

        result.duration_seconds = time.monotonic() - started
        result.passed = result.checks_failed == 0
        self._report(command, result)
        return result

    def _evaluate(
        self, check_name: str, spec: dict[str, Any], metrics: dict[str, Any]
    ) -> tuple[str, list[str]]:
        metric = spec.get("metric", check_name)
        value = metrics.get(metric)
        if value is None:
            return "warned", [f"{check_name}: metric {metric!r} not produced by this run"]

        if "nonincreasing_slack" in spec:
            problems = _monotone_violations(metric, value, float(spec["nonincreasing_slack"]))
        else:
            problems = _bound_violations(metric, value, spec)

        if not problems:
            return "passed", []
        messages = [f"{check_name}: {p}" for p in problems]
        if spec.get("severity") == "warn" or self.warn_only:
            return "warned", messages
        return "failed", messages

    def _report(self, command: str, result: AcceptanceCheckResult) -> None:
        verdict = "✓" if result.passed else "✗"
        logger.info(
            f"{verdict} {command}: {result.checks_passed} of {result.checks_run} checks passed, "
            f"{result.checks_failed} failed, {result.checks_warned} warned "
            f"in {result.duration_seconds:.2f}s"
        )
        for message in result.failed_checks:
            logger.error(f"  ✗ {message}")
        for message in result.warnings:
            logger.warning(f"  ⚠ {message}")
