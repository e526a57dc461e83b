"""
Experiment pipelines behind the CLI commands.

Every command is a runner that builds its measures from config, runs the solvers,
collects metrics, evaluates the acceptance checks and only then writes its outputs:

    config → [build measures] → [solve / fit / evaluate] → checks → staged write → output dir

Outputs of one run land in ``<output_dir>/<config name>/``:

    report.json          metrics, resolved config, acceptance checks, file list
    traces/*.csv         iteration,wall_ms,objective
    tables/*.csv         plans, grids, histograms, timing curves
    checkpoints/*.json   dual potentials or Monge maps

Files are written into a staging directory that is renamed into place at the end, so a
failed command leaves nothing behind.

Usage:
    from otmap.config import SolveConfig, load_config
    from otmap.pipelines import cmd_solve

    report = cmd_solve(load_config("configs/solve.yml", SolveConfig))
    print(report.metrics["marginal_residual_max"])
"""

from __future__ import annotations

import logging
import os
import shutil
import tempfile
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import pandas as pd
from scipy.spatial.distance import cdist

from otmap.baselines import (
    exact_assignment_bruteforce,
    exact_ot,
    exact_ot_simplex,
    gaussian_monge_closed_form,
    semi_dual_sgd,
    sinkhorn,
    sinkhorn_blockwise,
)
from otmap.checkpoints import (
    Checkpoint,
    check_compatible,
    check_supports,
    cost_from_metadata,
    load_checkpoint,
    map_checkpoint,
    map_from_checkpoint,
    potentials_checkpoint,
    potentials_from_checkpoint,
    problem_metadata,
    save_checkpoint,
    support_digest,
    write_atomic,
)
from otmap.config import (
    BenchmarkConfig,
    ConvergeConfig,
    CostSpec,
    DaConfig,
    GenerateConfig,
    MapTrainConfigModel,
    MeasureSpec,
    RuntimeSettings,
    SolveConfig,
)
from otmap.dual_solver import (
    DualSolverConfig,
    RegKind,
    Regularization,
    TrainTrace,
    VectorPotential,
    exact_dual_objective,
    solve_dual,
)
from otmap.exceptions import (
    AcceptanceCheckError,
    ConfigError,
    MeasureFormatError,
    NumericalError,
    UnmatchedAtomError,
)
from otmap.map_learn import apply_map, moment_errors, train_map, train_reverse_map
from otmap.measures import (
    CostFn,
    DiscreteMeasure,
    GaussianMeasure,
    GaussianMixture,
    MeasureSource,
    cost_matrix,
    empirical_moments,
    fit_gaussian,
    load_csv,
    make_blobs,
    make_ring,
    measure_frame,
    sample_batch,
)
from otmap.plan import (
    barycentric_projection_discrete,
    marginal_residuals,
    plan_l1_distance,
    recover_discrete_plan,
    regularized_objective,
)
from otmap.validators import AcceptanceValidator

logger = logging.getLogger("otmap.pipelines")

KNN_CHUNK = 2048
CALIBRATION_DRAWS = 256
MOMENT_DRAWS = 10_000
DA_SINKHORN_ITERS = 5_000
DA_SINKHORN_TOL = 1e-6


# =============================================================================
# Measures and costs from config
# =============================================================================


def build_measure(
    spec: MeasureSpec, seed: int, reference: MeasureSource | None = None
) -> MeasureSource:
    """Materialize one MeasureSpec; ``reference`` is the measure a fitted Gaussian copies."""
    rng = np.random.default_rng(spec.seed if spec.seed is not None else seed)
    if spec.kind == "csv":
        return load_csv(spec.path, spec.has_weights, spec.has_labels)

    try:
        if spec.kind == "blobs":
            source, target = make_blobs(
                spec.k, spec.per_class, spec.dim, spec.shift, np.deg2rad(spec.rotation_deg),
                rng, spec.radius, spec.spread,
            )
            return source if spec.role == "source" else target
        if spec.kind == "ring":
            return make_ring(spec.k, spec.radius, spec.dim)
        if spec.kind == "gaussian":
            law: MeasureSource = GaussianMeasure(spec.mean, spec.covariance)
        elif spec.kind == "mixture":
            weights = np.array([c.weight for c in spec.components])
            law = GaussianMixture(
                weights / weights.sum(),
                tuple(GaussianMeasure(c.mean, c.covariance) for c in spec.components),
            )
        else:
            if not isinstance(reference, DiscreteMeasure):
                raise ConfigError("fitted_gaussian needs a discrete measure to fit")
            law = fit_gaussian(reference, spec.ridge)
    except (MeasureFormatError, ConfigError):
        raise
    except ValueError as e:
        raise ConfigError(f"invalid {spec.kind} measure: {e}") from e

    if spec.samples is None:
        return law
    return DiscreteMeasure.uniform(sample_batch(law, spec.samples, rng).points)


def build_pair(
    source_spec: MeasureSpec, target_spec: MeasureSpec, seed: int
) -> tuple[MeasureSource, MeasureSource]:
    """
    Source drawn with ``seed`` and target with ``seed + 1``. Two blob specs share one
    seed, so their roles come from the same draw.
    """
    both_blobs = source_spec.kind == target_spec.kind == "blobs"
    src_seed, tgt_seed = (seed, seed) if both_blobs else (seed, seed + 1)
    if source_spec.kind == "fitted_gaussian":
        nu = build_measure(target_spec, tgt_seed)
        mu = build_measure(source_spec, src_seed, reference=nu)
    else:
        mu = build_measure(source_spec, src_seed)
        nu = build_measure(target_spec, tgt_seed, reference=mu)
    if mu.dim != nu.dim:
        raise ConfigError(f"source dimension {mu.dim} differs from target dimension {nu.dim}")
    return mu, nu


def calibrate_cost(spec: CostSpec, mu: MeasureSource, nu: MeasureSource, seed: int) -> CostFn:
    """Cost from config; with ``normalize: median`` the scale is 1/median of a sample block."""
    cost = spec.build()
    if spec.normalize == "none":
        return cost
    rng = np.random.default_rng(seed)
    xb = sample_batch(mu, CALIBRATION_DRAWS, rng).points
    yb = sample_batch(nu, CALIBRATION_DRAWS, rng).points
    median = float(np.median(cost_matrix(cost.with_scale(1.0), xb, yb)))
    if not median > 0:
        logger.warning("Median cost is zero on the calibration block; keeping configured scale")
        return cost
    logger.info(f"Cost normalized by median {median:.4g} (scale {1.0 / median:.4g})")
    return cost.with_scale(1.0 / median)


def describe_measure(m: MeasureSource) -> str:
    if isinstance(m, DiscreteMeasure):
        labeled = ", labeled" if m.labels is not None else ""
        return f"discrete n={m.n}, d={m.dim}{labeled}"
    if isinstance(m, GaussianMeasure):
        return f"gaussian d={m.dim}"
    return f"mixture of {len(m.components)} gaussians, d={m.dim}"


def _reference_moments(m: MeasureSource, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(m, DiscreteMeasure):
        return empirical_moments(m)
    if isinstance(m, GaussianMeasure):
        return m.mean, m.covariance
    pts = sample_batch(m, MOMENT_DRAWS, rng).points
    return pts.mean(axis=0), np.cov(pts, rowvar=False, bias=True)


def _domain_points(m: MeasureSource, rng: np.random.Generator) -> np.ndarray:
    if isinstance(m, DiscreteMeasure):
        return m.points
    return sample_batch(m, MOMENT_DRAWS, rng).points


# =============================================================================
# Evaluation
# =============================================================================


def knn_classify(train_points, train_labels, query_points) -> np.ndarray:
    """1-NN by squared Euclidean distance; ties go to the lowest training index."""
    train = np.asarray(train_points, dtype=np.float64)
    labels = np.asarray(train_labels)
    query = np.asarray(query_points, dtype=np.float64)
    if train.ndim != 2 or train.shape[0] < 1:
        raise ValueError("knn_classify needs a non-empty training set")
    if labels.shape != (train.shape[0],):
        raise ValueError("one label per training point required")
    if query.ndim != 2 or query.shape[1] != train.shape[1]:
        raise ValueError(f"query points must have dimension {train.shape[1]}")

    out = np.empty(query.shape[0], dtype=labels.dtype)
    for start in range(0, query.shape[0], KNN_CHUNK):
        block = query[start : start + KNN_CHUNK]
        out[start : start + block.shape[0]] = labels[
            np.argmin(cdist(block, train, metric="sqeuclidean"), axis=1)
        ]
    return out


def accuracy(predicted, truth) -> float:
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    return float(np.mean(predicted == truth)) if truth.size else float("nan")


def time_to_reach(trace: TrainTrace, level: float) -> float | None:
    """Training wall time (ms) of the first logged objective >= level."""
    hits = np.flatnonzero(trace.objectives >= level)
    return float(trace.wall_ms[hits[0]]) if hits.size else None


def planted_permutation_costs(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """n×n costs whose unique optimal assignment is a random permutation σ."""
    perm = rng.permutation(n)
    C = rng.uniform(0.5, 1.0, size=(n, n))
    C[np.arange(n), perm] = rng.uniform(0.0, 0.1, size=n)
    return C, perm


def random_spd(d: int, rng: np.random.Generator, floor: float = 0.5) -> np.ndarray:
    A = rng.standard_normal((d, d))
    return A @ A.T / d + floor * np.eye(d)


# =============================================================================
# Report
# =============================================================================


_TIMING_SUFFIXES = ("_seconds", "_ms")


def _strip_timings(value: Any) -> Any:
    if isinstance(value, dict):
        return {
            k: _strip_timings(v)
            for k, v in value.items()
            if not (isinstance(k, str) and k.endswith(_TIMING_SUFFIXES))
        }
    return value


@dataclass
class ExperimentReport:
    """Metrics, tables, traces and checkpoints of one command run."""

    name: str
    command: str
    config: dict[str, Any]
    metrics: dict[str, Any] = field(default_factory=dict)
    tables: dict[str, pd.DataFrame] = field(default_factory=dict)
    traces: dict[str, TrainTrace] = field(default_factory=dict)
    checkpoints: dict[str, Checkpoint] = field(default_factory=dict)
    checks: dict[str, Any] | None = None
    files: dict[str, str] = field(default_factory=dict)
    keep_timings: bool = False

    def to_dict(self, deterministic: bool = False) -> dict[str, Any]:
        strip = deterministic and not self.keep_timings
        return {
            "name": self.name,
            "command": self.command,
            "config": self.config,
            "metrics": _strip_timings(self.metrics) if strip else self.metrics,
            "checks": _strip_timings(self.checks) if (strip and self.checks) else self.checks,
            "files": self.files,
        }

    def write(self, out_dir, deterministic: bool = True) -> Path:
        """Write everything into a staging directory, then move it to ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
        strip = deterministic and not self.keep_timings
        try:
            files: dict[str, str] = {}
            for label, trace in self.traces.items():
                frame = trace.to_frame()
                if strip:
                    frame["wall_ms"] = np.nan
                files[f"trace:{label}"] = self._write_frame(staging, f"traces/{label}.csv", frame)
            for label, table in self.tables.items():
                files[f"table:{label}"] = self._write_frame(staging, f"tables/{label}.csv", table)
            for label, checkpoint in self.checkpoints.items():
                rel = f"checkpoints/{label}.json"
                save_checkpoint(checkpoint, staging / rel)
                files[f"checkpoint:{label}"] = rel
            self.files = files
            write_atomic(
                staging / "report.json",
                orjson.dumps(
                    self.to_dict(deterministic),
                    option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_INDENT_2 | orjson.OPT_NON_STR_KEYS,
                ),
            )
            if out_dir.exists():
                logger.warning(f"Replacing previous outputs in {out_dir}")
                shutil.rmtree(out_dir)
            os.replace(staging, out_dir)
        except BaseException:
            shutil.rmtree(staging, ignore_errors=True)
            raise
        logger.info(f"Wrote {len(self.files)} files to {out_dir}")
        return out_dir

    @staticmethod
    def _write_frame(root: Path, rel: str, frame: pd.DataFrame) -> str:
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g")
        return rel


# =============================================================================
# Runner
# =============================================================================


class ExperimentRunner:
    """
    Shared run loop: banner, steps, acceptance checks, staged write, summary.

    Subclasses implement ``_execute`` (fill ``self.report``) and ``_describe``.
    """

    command = "experiment"
    title = "otmap experiment"
    keep_timings = False

    def __init__(self, cfg, settings: RuntimeSettings | None = None, output_dir=None):
        self.cfg = cfg
        self.settings = settings or RuntimeSettings()
        self.output_dir = Path(output_dir) if output_dir else self.settings.output_dir / cfg.name
        self.report = ExperimentReport(
            name=cfg.name,
            command=self.command,
            config=cfg.model_dump(mode="json"),
            keep_timings=self.keep_timings,
        )
        self.validator = AcceptanceValidator(
            self.settings.checks_path, warn_only=not self.settings.strict_checks
        )
        self._step_count = 0
        self.metrics: dict[str, Any] = {
            "start_time": None,
            "end_time": None,
            "status": None,
            "errors": [],
        }

    def run(self) -> ExperimentReport:
        self.metrics["start_time"] = datetime.now(timezone.utc).isoformat()
        self._t0 = time.monotonic()

        print(f"\n{'=' * 70}")
        print(self.title)
        print(f"{'=' * 70}")
        for label, value in self._describe():
            print(f"{label + ':':<18}{value}")
        print(f"Output:           {self.output_dir}")
        print(f"{'=' * 70}\n")

        try:
            self._execute()

            self._step("Running acceptance checks")
            result = self.validator.validate(self.command, self.report.metrics)
            self.report.checks = result.to_dict()
            status_icon = "✓" if result.passed else "✗"
            print(f"  {status_icon} {result.checks_passed}/{result.checks_run} checks passed")
            if not result.passed:
                raise AcceptanceCheckError(
                    f"{result.checks_failed} acceptance checks failed: {result.failed_checks}"
                )

            self._step("Writing outputs")
            self.report.write(self.output_dir, self.settings.deterministic)
            print(f"  → {len(self.report.files)} files in {self.output_dir}")
        except Exception as e:
            logger.error(f"{self.command} failed: {e}")
            self.metrics["errors"].append(str(e))
            self._finalize("failed")
            raise

        self._finalize("success")
        return self.report

    def _step(self, text: str) -> None:
        self._step_count += 1
        print(f"\nStep {self._step_count}: {text}...")

    def _describe(self) -> list[tuple[str, str]]:
        return []

    def _execute(self) -> None:
        raise NotImplementedError

    def _summary_lines(self) -> list[str]:
        return []

    def _finalize(self, status: str) -> dict[str, Any]:
        self.metrics["end_time"] = datetime.now(timezone.utc).isoformat()
        self.metrics["status"] = status
        self.metrics["duration_seconds"] = time.monotonic() - self._t0

        print(f"\n{'=' * 70}")
        status_text = {"success": "COMPLETE", "failed": "FAILED"}.get(status, status.upper())
        print(f"{self.command.upper()} {status_text}")
        print(f"{'=' * 70}")
        print(f"Status:           {status}")
        print(f"Duration:         {self.metrics['duration_seconds']:.1f}s")
        if status == "success":
            for line in self._summary_lines():
                print(line)
        checks = self.report.checks
        if checks:
            check_status = "✓ PASSED" if checks["passed"] else "✗ FAILED"
            print(f"Checks:           {check_status} ({checks['checks_passed']}/{checks['checks_run']})")
            for check in checks.get("failed_checks", []):
                print(f"  ✗ {check}")
            for warning in checks.get("warnings", []):
                print(f"  ⚠ {warning}")
        if self.metrics["errors"]:
            print(f"Errors:           {self.metrics['errors']}")
        print(f"{'=' * 70}\n")
        return self.metrics


# =============================================================================
# solve
# =============================================================================


class SolveRunner(ExperimentRunner):
    command = "solve"
    title = "otmap solve - stochastic dual ascent"

    def _describe(self):
        cfg = self.cfg
        return [
            ("Source", cfg.source.kind),
            ("Target", cfg.target.kind),
            ("Regularizer", f"{cfg.reg.kind} eps={cfg.reg.epsilons}"),
            ("Cost", f"{cfg.cost.kind} (normalize: {cfg.cost.normalize})"),
            ("Batch size", str(cfg.solver.batch_size)),
            ("Iterations", str(cfg.solver.iterations)),
        ]

    def _execute(self):
        cfg = self.cfg
        seed = cfg.solver.seed

        self._step("Building measures")
        mu, nu = build_pair(cfg.source, cfg.target, seed)
        cost = calibrate_cost(cfg.cost, mu, nu, seed)
        print(f"  → source: {describe_measure(mu)}")
        print(f"  → target: {describe_measure(nu)}")
        discrete = isinstance(mu, DiscreteMeasure) and isinstance(nu, DiscreteMeasure)

        per_eps: dict[str, dict[str, Any]] = {}
        for eps in cfg.reg.epsilons:
            reg = cfg.reg.build(eps)
            tag = f"eps_{eps:g}"
            self._step(f"Solving dual ({reg.kind.value}, eps={eps:g})")
            u, v, trace = solve_dual(mu, nu, cost, reg, cfg.solver.build())
            self.report.traces[f"dual_{tag}"] = trace
            self.report.checkpoints[f"potentials_{tag}"] = potentials_checkpoint(
                u, v,
                problem_metadata(
                    reg, cost, mu.dim, seed,
                    measure_seed=seed,
                    command=self.command,
                    source_digest=support_digest(mu),
                    target_digest=support_digest(nu),
                ),
            )
            entry: dict[str, Any] = {
                "final_objective": trace.final_objective,
                "clamp_events": trace.clamp_events,
                "trace_valid": trace.valid,
                "train_ms": float(trace.wall_ms[-1]),
            }
            if discrete:
                entry.update(self._plan_diagnostics(u, v, mu, nu, cost, reg, tag))
            per_eps[tag] = entry
            print(f"  → objective {trace.final_objective:.6f}")

        metrics = self.report.metrics
        metrics["per_epsilon"] = per_eps
        metrics["cost_scale"] = cost.scale
        metrics["trace_valid"] = all(e["trace_valid"] for e in per_eps.values())
        residuals = [max(e["row_residual"], e["col_residual"]) for e in per_eps.values() if "row_residual" in e]
        metrics["marginal_residual_max"] = max(residuals) if residuals else None
        gaps = [e["sinkhorn_relative_gap"] for e in per_eps.values() if "sinkhorn_relative_gap" in e]
        metrics["sinkhorn_relative_gap_max"] = max(gaps) if gaps else None

    def _plan_diagnostics(self, u, v, mu, nu, cost, reg, tag) -> dict[str, Any]:
        plan = recover_discrete_plan(u, v, mu, nu, cost, reg)
        row, col = marginal_residuals(plan)
        C = cost_matrix(cost, mu.points, nu.points)
        transport, reg_value = regularized_objective(plan, C, reg)
        primal = transport + reg.epsilon * reg_value
        dual = exact_dual_objective(u, v, mu, nu, cost, reg)
        out: dict[str, Any] = {
            "row_residual": row,
            "col_residual": col,
            "transport_cost": transport,
            "regularizer_value": reg_value,
            "primal_objective": primal,
            "exact_dual_objective": dual,
            "duality_gap": primal - dual,
        }
        print(f"  → marginal residuals row={row:.3e} col={col:.3e}, gap={primal - dual:.3e}")
        if self.cfg.export_plan:
            self.report.tables[f"plan_{tag}"] = pd.DataFrame(
                plan.matrix, columns=[f"j{j}" for j in range(plan.shape[1])]
            )
        if reg.kind == RegKind.ENTROPY and mu.n * nu.n <= self.cfg.sinkhorn_limit:
            sk = sinkhorn(mu.weights, nu.weights, C, reg.epsilon)
            ref = sk.dual_objective
            out["sinkhorn_objective"] = ref
            out["sinkhorn_converged"] = sk.converged
            out["sinkhorn_relative_gap"] = abs(dual - ref) / max(abs(ref), 1e-12)
            print(f"  → Sinkhorn reference {ref:.6f} (relative gap {out['sinkhorn_relative_gap']:.2e})")
        return out

    def _summary_lines(self):
        m = self.report.metrics
        lines = [f"Runs:             {len(m.get('per_epsilon', {}))}"]
        if m.get("marginal_residual_max") is not None:
            lines.append(f"Max residual:     {m['marginal_residual_max']:.3e}")
        if m.get("sinkhorn_relative_gap_max") is not None:
            lines.append(f"Sinkhorn gap:     {m['sinkhorn_relative_gap_max']:.3e}")
        return lines


# =============================================================================
# map-train
# =============================================================================


class MapTrainRunner(ExperimentRunner):
    command = "map-train"
    title = "otmap map-train - barycentric projection network"

    def __init__(self, cfg: MapTrainConfigModel, dual_checkpoint, settings=None, output_dir=None):
        super().__init__(cfg, settings, output_dir)
        self.dual_checkpoint = Path(dual_checkpoint)

    def _describe(self):
        cfg = self.cfg
        return [
            ("Dual checkpoint", str(self.dual_checkpoint)),
            ("Direction", "reverse (g: target → source)" if cfg.reverse else "forward (f)"),
            ("Layers", f"{cfg.map.hidden} ({cfg.map.output_activation} output)"),
            ("Learning rate", str(cfg.map.learning_rate)),
            ("Iterations", str(cfg.map.iterations)),
        ]

    def _execute(self):
        cfg = self.cfg

        self._step("Loading dual potentials")
        checkpoint = load_checkpoint(self.dual_checkpoint)
        reg = cfg.reg.build()
        check_compatible(checkpoint, reg, cfg.cost.build())
        cost = cost_from_metadata(checkpoint.metadata)
        u, v = potentials_from_checkpoint(checkpoint)
        measure_seed = int(checkpoint.metadata.get("measure_seed", 0))
        mu, nu = build_pair(cfg.source, cfg.target, measure_seed)
        for name, pot, src in (("u", u, mu), ("v", v, nu)):
            if isinstance(pot, VectorPotential) and (
                not isinstance(src, DiscreteMeasure) or pot.size != src.n
            ):
                size = src.n if isinstance(src, DiscreteMeasure) else "continuous"
                raise ConfigError(
                    f"potential {name} has {pot.size} entries but its measure is {size}"
                )
        check_supports(checkpoint, mu, nu)
        print(f"  → {reg.kind.value} eps={reg.epsilon:g}, cost scale {cost.scale:.4g}")

        map_cfg = cfg.map.build()
        if cfg.reverse:
            self._step("Fitting reverse map g")
            f = train_reverse_map(mu, nu, u, v, cost, reg, map_cfg)
            domain, image, label = nu, mu, "reverse_map"
        else:
            self._step("Fitting map f")
            f, trace = train_map(mu, nu, u, v, cost, reg, map_cfg)
            self.report.traces["map"] = trace
            self.report.metrics["final_loss"] = trace.final_objective
            domain, image, label = mu, nu, "map"

        self.report.checkpoints[label] = map_checkpoint(
            f,
            problem_metadata(
                reg, cost, f.dim, map_cfg.seed,
                role="reverse" if cfg.reverse else "forward",
                layer_sizes=list(f.spec.layer_sizes),
                dual_checkpoint=str(self.dual_checkpoint),
            ),
        )

        rng = np.random.default_rng(map_cfg.seed)
        mapped = apply_map(f, _domain_points(domain, rng))
        mean, cov = _reference_moments(image, rng)
        errors = moment_errors(mapped, mean, cov)
        self.report.metrics["pushforward_mean_error"] = errors.mean
        self.report.metrics["pushforward_covariance_error"] = errors.covariance
        print(f"  → pushforward moment errors: mean {errors.mean:.3f}, cov {errors.covariance:.3f}")

    def _summary_lines(self):
        m = self.report.metrics
        return [
            f"Mean error:       {m['pushforward_mean_error']:.4f}",
            f"Cov error:        {m['pushforward_covariance_error']:.4f}",
        ]


# =============================================================================
# generate
# =============================================================================


class GenerateRunner(ExperimentRunner):
    command = "generate"
    title = "otmap generate - push source samples through a Monge map"

    def __init__(self, cfg: GenerateConfig, map_checkpoint, settings=None, output_dir=None):
        super().__init__(cfg, settings, output_dir)
        self.map_checkpoint = Path(map_checkpoint)

    def _describe(self):
        return [
            ("Map checkpoint", str(self.map_checkpoint)),
            ("Source", self.cfg.source.kind),
            ("Samples", f"{self.cfg.samples:,}"),
            ("Seed", str(self.cfg.seed)),
        ]

    def _execute(self):
        cfg = self.cfg

        self._step("Loading map")
        f = map_from_checkpoint(load_checkpoint(self.map_checkpoint))
        target = build_measure(cfg.target, cfg.seed + 1) if cfg.target is not None else None
        source = build_measure(cfg.source, cfg.seed, reference=target)
        if source.dim != f.dim:
            raise ConfigError(f"map expects dimension {f.dim}, source has {source.dim}")
        print(f"  → map {f.spec.layer_sizes}, source {describe_measure(source)}")

        self._step(f"Generating {cfg.samples:,} samples")
        rng = np.random.default_rng(cfg.seed)
        chunks = []
        remaining = cfg.samples
        while remaining > 0:
            k = min(cfg.chunk_size, remaining)
            chunks.append(apply_map(f, sample_batch(source, k, rng).points))
            remaining -= k
        generated = np.vstack(chunks)
        self.report.tables["samples"] = measure_frame(DiscreteMeasure.uniform(generated))
        metrics = self.report.metrics
        metrics["samples"] = int(generated.shape[0])

        if f.dim == 2:
            self._step("Building histogram and displacement field")
            self._histogram(generated)
            if cfg.displacement_grid:
                self._displacement(f, source)
        else:
            logger.warning(f"Histogram and displacement field need d = 2, map has d = {f.dim}")

        if isinstance(target, DiscreteMeasure):
            nearest = knn_classify(target.points, np.arange(target.n), generated)
            shares = np.bincount(nearest, minlength=target.n) / generated.shape[0]
            metrics["atom_shares"] = shares.tolist()
            metrics["atom_share_min"] = float(shares.min())
            metrics["atom_share_max"] = float(shares.max())
            print(f"  → nearest-atom shares in [{shares.min():.3f}, {shares.max():.3f}]")

    def _histogram(self, generated: np.ndarray) -> None:
        cfg = self.cfg
        if cfg.histogram_bounds is not None:
            bounds = [tuple(b) for b in cfg.histogram_bounds]
        else:
            lo, hi = generated.min(axis=0), generated.max(axis=0)
            bounds = [(lo[0], hi[0]), (lo[1], hi[1])]
        counts, xe, ye = np.histogram2d(
            generated[:, 0], generated[:, 1], bins=cfg.histogram_bins, range=bounds
        )
        total = counts.sum()
        if total == 0:
            raise ConfigError("no generated sample falls inside the histogram bounds")
        mass = counts / total
        xc, yc = np.meshgrid(0.5 * (xe[:-1] + xe[1:]), 0.5 * (ye[:-1] + ye[1:]), indexing="ij")
        self.report.tables["histogram"] = pd.DataFrame(
            {"x_center": xc.ravel(), "y_center": yc.ravel(), "mass": mass.ravel()}
        )
        self.report.metrics["histogram_mass_error"] = abs(float(mass.sum()) - 1.0)
        self.report.metrics["histogram_coverage"] = float(total / generated.shape[0])
        self.report.metrics["histogram_bounds"] = [list(map(float, b)) for b in bounds]

    def _displacement(self, f, source: MeasureSource) -> None:
        rng = np.random.default_rng(self.cfg.seed + 2)
        ref = sample_batch(source, min(self.cfg.samples, MOMENT_DRAWS), rng).points
        lo, hi = ref.min(axis=0), ref.max(axis=0)
        g = self.cfg.displacement_grid
        gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], g), np.linspace(lo[1], hi[1], g), indexing="ij")
        grid = np.column_stack([gx.ravel(), gy.ravel()])
        disp = apply_map(f, grid) - grid
        self.report.tables["displacement"] = pd.DataFrame(
            {"x0": grid[:, 0], "x1": grid[:, 1], "dx0": disp[:, 0], "dx1": disp[:, 1]}
        )

    def _summary_lines(self):
        m = self.report.metrics
        lines = [f"Samples:          {m['samples']:,}"]
        if "atom_share_min" in m:
            lines.append(f"Atom shares:      [{m['atom_share_min']:.3f}, {m['atom_share_max']:.3f}]")
        return lines


# =============================================================================
# da
# =============================================================================


class DaRunner(ExperimentRunner):
    command = "da"
    title = "otmap da - domain adaptation by transport"

    def _describe(self):
        cfg = self.cfg
        return [
            ("Domains", "csv" if cfg.source is not None else f"blobs k={cfg.blobs.k}"),
            ("Methods", ", ".join(cfg.methods)),
            ("Reg grid", str(cfg.reg_grid)),
            ("LR grid", str(cfg.lr_grid)),
            ("Selection", "oracle (target labels)" if cfg.oracle_selection else "fixed"),
        ]

    def _domains(self) -> tuple[DiscreteMeasure, DiscreteMeasure]:
        cfg = self.cfg
        if cfg.source is not None:
            source = build_measure(cfg.source, cfg.seed)
            target = build_measure(cfg.target, cfg.seed + 1)
        else:
            b = cfg.blobs
            source, target = make_blobs(
                b.k, b.per_class, b.dim, b.shift, np.deg2rad(b.rotation_deg),
                np.random.default_rng(cfg.seed), b.radius, b.spread,
            )
        for name, m in (("source", source), ("target", target)):
            if not isinstance(m, DiscreteMeasure) or m.labels is None:
                raise MeasureFormatError(f"{name} domain needs a label column")
        if source.dim != target.dim:
            raise ConfigError(f"source dimension {source.dim} differs from target {target.dim}")
        return source, target

    def _execute(self):
        cfg = self.cfg

        self._step("Building domains")
        source, labeled_target = self._domains()
        held_out = labeled_target.labels
        target = labeled_target.without_labels()
        cost = calibrate_cost(cfg.cost, source, target, cfg.seed)
        print(f"  → source {describe_measure(source)}; target {describe_measure(target)}")

        def score(mapped_source: np.ndarray) -> float:
            return accuracy(knn_classify(mapped_source, source.labels, target.points), held_out)

        rows: list[dict[str, Any]] = []

        def add(method, reg_kind, eps, lr, acc):
            rows.append(
                {"method": method, "reg_kind": reg_kind, "epsilon": eps,
                 "learning_rate": lr, "accuracy": acc}
            )

        self._step("Source-only baseline")
        add("source_only", "", np.nan, np.nan, score(source.points))
        print(f"  → accuracy {rows[-1]['accuracy']:.3f}")

        C = cost_matrix(cost, source.points, target.points)
        a, b = source.weights, target.weights
        if "exact" in cfg.methods:
            self._step("Exact plan barycentric projection")
            exact = exact_ot(a, b, C)
            add("exact_bp", "", np.nan, np.nan, score(barycentric_projection_discrete(exact.plan, target.points)))
            print(f"  → accuracy {rows[-1]['accuracy']:.3f} ({exact.method.value})")

        if "sinkhorn" in cfg.methods:
            self._step("Sinkhorn barycentric projection")
            for eps in cfg.sinkhorn_grid:
                sk = sinkhorn(a, b, C, eps, max_iters=DA_SINKHORN_ITERS, tol=DA_SINKHORN_TOL)
                add("sinkhorn_bp", "entropy", eps, np.nan, self._safe_projection_score(sk.plan, target, score))

        dual_methods = {"dual_bp", "map"} & set(cfg.methods)
        if dual_methods:
            for kind in cfg.reg_kinds:
                self._step(f"Stochastic dual, {kind} regularization")
                for eps in cfg.reg_grid:
                    self._dual_grid_point(Regularization(kind, eps), source, target, cost, score, add)

        grid = pd.DataFrame(rows)
        summary = self._select(grid)
        self.report.tables["grid"] = grid
        self.report.tables["summary"] = summary
        self._summarize(summary)

    def _safe_projection_score(self, plan, target, score) -> float:
        try:
            return score(barycentric_projection_discrete(plan, target.points))
        except UnmatchedAtomError as e:
            logger.warning(f"Barycentric projection undefined: {e}")
            return float("nan")

    def _dual_grid_point(self, reg, source, target, cost, score, add) -> None:
        cfg = self.cfg
        kind, eps = reg.kind.value, reg.epsilon
        try:
            u, v, trace = solve_dual(source.without_labels(), target, cost, reg, cfg.solver.build())
        except NumericalError as e:
            logger.warning(f"Dual solve diverged ({kind}, eps={eps:g}): {e}")
            if "dual_bp" in cfg.methods:
                add("dual_bp", kind, eps, np.nan, float("nan"))
            if "map" in cfg.methods:
                for lr in cfg.lr_grid:
                    add("map", kind, eps, lr, float("nan"))
            return
        if not trace.valid:
            logger.warning(f"Dual solve ({kind}, eps={eps:g}) hit the exponent clamp")

        if "dual_bp" in cfg.methods:
            plan = recover_discrete_plan(u, v, source, target, cost, reg)
            add("dual_bp", kind, eps, np.nan, self._safe_projection_score(plan, target, score))
        if "map" in cfg.methods:
            for lr in cfg.lr_grid:
                try:
                    f, _ = train_map(source, target, u, v, cost, reg, cfg.map.build(learning_rate=lr))
                except NumericalError as e:
                    logger.warning(f"Map fit diverged ({kind}, eps={eps:g}, lr={lr:g}): {e}")
                    add("map", kind, eps, lr, float("nan"))
                    continue
                add("map", kind, eps, lr, score(apply_map(f, source.points)))
        logger.info(f"  {kind} eps={eps:g}: done")

    def _select(self, grid: pd.DataFrame) -> pd.DataFrame:
        cfg = self.cfg
        if cfg.oracle_selection:
            logger.warning(
                "Oracle model selection: each row reports its best target accuracy over the grid"
            )
        selected = []
        for (method, reg_kind), group in grid.groupby(["method", "reg_kind"], sort=False):
            valid = group.dropna(subset=["accuracy"])
            if valid.empty:
                row = group.iloc[0].copy()
            elif cfg.oracle_selection:
                row = valid.loc[valid["accuracy"].idxmax()].copy()
            else:
                eps_dist = np.abs(np.log(valid["epsilon"].fillna(cfg.selection_epsilon) / cfg.selection_epsilon))
                lr_dist = np.abs(
                    np.log(valid["learning_rate"].fillna(cfg.selection_learning_rate) / cfg.selection_learning_rate)
                )
                order = np.lexsort((lr_dist.to_numpy(), eps_dist.to_numpy()))
                row = valid.iloc[int(order[0])].copy()
            row["selection"] = "oracle" if cfg.oracle_selection else "fixed"
            selected.append(row)
        return pd.DataFrame(selected).reset_index(drop=True)

    def _summarize(self, summary: pd.DataFrame) -> None:
        metrics = self.report.metrics
        acc = {
            (f"{r.method}:{r.reg_kind}" if r.reg_kind else r.method): float(r.accuracy)
            for r in summary.itertuples(index=False)
        }
        metrics["accuracies"] = acc
        metrics["selection"] = "oracle" if self.cfg.oracle_selection else "fixed"
        src_only = acc["source_only"]
        metrics["source_only_accuracy"] = src_only

        maps = [v for k, v in acc.items() if k.startswith("map:")]
        metrics["map_gain_min"] = (min(maps) - src_only) if maps else None
        if "exact_bp" in acc:
            projection = acc["exact_bp"]
        else:
            projections = [v for k, v in acc.items() if k.startswith("sinkhorn_bp")]
            projection = max(projections) if projections else None
        metrics["map_minus_projection_min"] = (
            min(maps) - projection if (maps and projection is not None) else None
        )
        for key, value in acc.items():
            print(f"  {key:<22} {value:.3f}")

    def _summary_lines(self):
        m = self.report.metrics
        lines = [f"Source only:      {m['source_only_accuracy']:.3f}"]
        if m.get("map_gain_min") is not None:
            lines.append(f"Map gain (min):   {m['map_gain_min']:+.3f}")
        return lines


# =============================================================================
# benchmark
# =============================================================================


def benchmark_instance(
    n: int, dim: int, rng: np.random.Generator
) -> tuple[DiscreteMeasure, DiscreteMeasure]:
    """Two uniform n-point Gaussian clouds, the target shifted by one unit per axis."""
    mu = DiscreteMeasure.uniform(rng.standard_normal((n, dim)))
    nu = DiscreteMeasure.uniform(rng.standard_normal((n, dim)) + 1.0)
    return mu, nu


class BenchmarkRunner(ExperimentRunner):
    command = "benchmark"
    title = "otmap benchmark - dual vs semi-dual SGD"
    keep_timings = True

    def _describe(self):
        cfg = self.cfg
        return [
            ("Sizes", str(cfg.sizes)),
            ("Batch size", str(cfg.batch_size)),
            ("Epsilons", str(cfg.epsilons)),
            ("Curve size", str(cfg.curve_size)),
        ]

    def _solver_cfg(self, lr: float, iterations: int, log_every: int) -> DualSolverConfig:
        cfg = self.cfg
        return DualSolverConfig(
            batch_size=cfg.batch_size,
            learning_rate=lr,
            iterations=iterations,
            seed=cfg.seed,
            log_every=log_every,
            eval_batches=4,
            eval_batch_size=cfg.eval_batch_size,
        )

    def _execute(self):
        cfg = self.cfg
        cost = CostFn.squared_euclidean()
        rng = np.random.default_rng(cfg.seed)
        eps0 = max(cfg.epsilons)

        self._step("Per-iteration cost")
        timing = []
        for n in sorted(cfg.sizes):
            mu, nu = benchmark_instance(n, cfg.dim, rng)
            it = cfg.timing_iterations
            _, _, dual_trace = solve_dual(
                mu, nu, cost, Regularization.entropy(eps0),
                self._solver_cfg(cfg.dual_learning_rate, it, it),
            )
            _, semi_trace = semi_dual_sgd(
                mu, nu, cost, eps0, self._solver_cfg(cfg.semi_dual_learning_rate, it, it)
            )
            for method, trace in (("dual", dual_trace), ("semi_dual", semi_trace)):
                timing.append({"n": n, "method": method, "per_iteration_ms": trace.wall_ms[-1] / it})
            print(f"  → n={n:>7}: dual {timing[-2]['per_iteration_ms']:.3f} ms/it, "
                  f"semi-dual {timing[-1]['per_iteration_ms']:.3f} ms/it")
        timing_frame = pd.DataFrame(timing)
        self.report.tables["timing"] = timing_frame

        dual_t = timing_frame[timing_frame["method"] == "dual"]["per_iteration_ms"].to_numpy()
        semi_t = timing_frame[timing_frame["method"] == "semi_dual"]["per_iteration_ms"].to_numpy()
        metrics = self.report.metrics
        metrics["dual_time_ratio"] = float(dual_t.max() / dual_t.min())
        metrics["semi_dual_time_ratio"] = float(semi_t[-1] / semi_t[0])

        if cfg.curve_size:
            self._curves(cost, rng)

    def _curves(self, cost: CostFn, rng: np.random.Generator) -> None:
        cfg = self.cfg
        n = cfg.curve_size
        self._step(f"Objective vs time on n={n}")
        mu, nu = benchmark_instance(n, cfg.dim, rng)
        rows, reached = [], {}
        for eps in cfg.epsilons:
            tag = f"{eps:g}"
            reg = Regularization.entropy(eps)
            _, _, dual_trace = solve_dual(
                mu, nu, cost, reg,
                self._solver_cfg(cfg.dual_learning_rate, cfg.iterations, cfg.log_every),
            )
            _, semi_trace = semi_dual_sgd(
                mu, nu, cost, eps,
                self._solver_cfg(cfg.semi_dual_learning_rate, cfg.iterations, cfg.log_every),
            )
            self.report.traces[f"dual_eps_{tag}"] = dual_trace
            self.report.traces[f"semi_dual_eps_{tag}"] = semi_trace

            reference, source = self._reference(mu, nu, cost, eps, dual_trace, semi_trace)
            level = reference - cfg.reach_tolerance
            t_dual = time_to_reach(dual_trace, level)
            t_semi = time_to_reach(semi_trace, level)
            reached[tag] = {
                "reference": reference,
                "reference_source": source,
                "dual_reach_ms": t_dual,
                "semi_dual_reach_ms": t_semi,
                "dual_first": t_dual is not None and (t_semi is None or t_dual < t_semi),
            }
            for method, trace in (("dual", dual_trace), ("semi_dual", semi_trace)):
                for rec in trace.records:
                    rows.append(
                        {"method": method, "epsilon": eps, "iteration": rec.iteration,
                         "wall_ms": rec.wall_ms, "objective": rec.objective, "reference": reference}
                    )
            print(f"  → eps={tag}: reference {reference:.5f} ({source}), dual first: {reached[tag]['dual_first']}")

        self.report.tables["curves"] = pd.DataFrame(rows)
        self.report.metrics["curves"] = reached
        self.report.metrics["dual_reaches_first"] = {k: v["dual_first"] for k, v in reached.items()}

    def _reference(self, mu, nu, cost, eps, dual_trace, semi_trace) -> tuple[float, str]:
        """Sinkhorn dual value up to sinkhorn_limit cost entries, else the best logged value."""
        cfg = self.cfg
        if mu.n * nu.n <= cfg.sinkhorn_limit:
            sk = sinkhorn_blockwise(
                mu, nu, cost, eps, max_iters=cfg.sinkhorn_max_iters, tol=cfg.sinkhorn_tol
            )
            return sk.dual_objective, "sinkhorn"
        best = max(dual_trace.objectives.max(), semi_trace.objectives.max())
        return float(best), "best_reached"

    def _summary_lines(self):
        m = self.report.metrics
        return [
            f"Dual time ratio:  {m['dual_time_ratio']:.2f}",
            f"Semi-dual ratio:  {m['semi_dual_time_ratio']:.2f}",
        ]


# =============================================================================
# converge
# =============================================================================


class ConvergeRunner(ExperimentRunner):
    command = "converge"
    title = "otmap converge - vanishing regularization and growing samples"

    def _describe(self):
        cfg = self.cfg
        return [
            ("Plan sizes", str(cfg.plan_sizes)),
            ("Epsilons", str(sorted(cfg.epsilons, reverse=True))),
            ("Assignment n", str(cfg.assignment_n)),
            ("Gaussian sizes", str(cfg.gaussian_sizes)),
            ("Learned map", f"n={cfg.learned_map_samples}, eps {cfg.learned_map_epsilons}" if cfg.learned_map else "off"),
        ]

    def _execute(self):
        self._plan_gaps()
        self._crosscheck()
        self._assignment()
        self._gaussian()
        if self.cfg.learned_map:
            self._learned_map()

    def _gaussian_problem(self):
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed + 3)
        d = cfg.gaussian_dim
        S1, S2 = random_spd(d, rng), random_spd(d, rng)
        m2 = rng.standard_normal(d)
        return GaussianMeasure(np.zeros(d), S1), GaussianMeasure(m2, S2)

    def _plan_gaps(self) -> None:
        cfg = self.cfg
        self._step("Plan gap to the exact optimum as eps decreases")
        rng = np.random.default_rng(cfg.seed)
        epsilons = sorted(cfg.epsilons, reverse=True)
        rows, gaps = [], {}
        for n in cfg.plan_sizes:
            C, _ = planted_permutation_costs(n, rng)
            w = np.full(n, 1.0 / n)
            exact = exact_ot_simplex(w, w, C)
            seq = []
            for eps in epsilons:
                sk = sinkhorn(w, w, C, eps, max_iters=cfg.sinkhorn_max_iters, tol=1e-10)
                gap = plan_l1_distance(sk.plan, exact.plan)
                seq.append(gap)
                rows.append({"n": n, "epsilon": eps, "plan_l1_gap": gap, "sinkhorn_converged": sk.converged})
            gaps[str(n)] = seq
            print(f"  → n={n}: gaps {', '.join(f'{g:.2e}' for g in seq)}")
        self.report.tables["plan_gaps"] = pd.DataFrame(rows)
        self.report.metrics["plan_gaps"] = gaps
        self.report.metrics["plan_gap_at_smallest_eps"] = max(seq[-1] for seq in gaps.values())

    def _crosscheck(self) -> None:
        cfg = self.cfg
        if cfg.crosscheck_instances == 0:
            return
        self._step("Simplex vs permutation brute force")
        rng = np.random.default_rng(cfg.seed + 1)
        diffs = []
        for k in range(cfg.crosscheck_instances):
            n = 2 + k % 6
            C = rng.uniform(size=(n, n))
            w = np.full(n, 1.0 / n)
            _, brute = exact_assignment_bruteforce(C)
            diffs.append(abs(exact_ot_simplex(w, w, C).cost - brute))
        self.report.metrics["exact_crosscheck_max_diff"] = float(max(diffs))
        print(f"  → max |simplex − brute force| = {max(diffs):.2e} over {len(diffs)} instances")

    def _assignment(self) -> None:
        cfg = self.cfg
        self._step("Barycentric map vs optimal assignment")
        rng = np.random.default_rng(cfg.seed + 2)
        n = cfg.assignment_n
        Y = rng.uniform(size=(n, 2))
        X = Y[rng.permutation(n)] + 0.05 * rng.standard_normal((n, 2))
        C = cost_matrix(CostFn.squared_euclidean(), X, Y)
        perm, _ = exact_assignment_bruteforce(C)
        w = np.full(n, 1.0 / n)
        sk = sinkhorn(w, w, C, cfg.assignment_epsilon, max_iters=cfg.sinkhorn_max_iters)
        projected = barycentric_projection_discrete(sk.plan, Y)
        deviation = float(np.mean(np.linalg.norm(projected - Y[perm], axis=1)))
        scale = float(cdist(Y, Y).max())
        self.report.metrics["assignment_relative_deviation"] = deviation / scale
        print(f"  → mean deviation {deviation:.3e} ({deviation / scale:.2%} of target diameter)")

    def _gaussian(self) -> None:
        cfg = self.cfg
        if not cfg.gaussian_sizes:
            return
        self._step("Gaussian case: projection vs closed-form map")
        source, target = self._gaussian_problem()
        closed = gaussian_monge_closed_form(source.mean, source.covariance, target.mean, target.covariance)
        cost = CostFn.squared_euclidean()
        rng = np.random.default_rng(cfg.seed + 4)

        rows, errors = [], []
        for n in sorted(cfg.gaussian_sizes):
            X = sample_batch(source, n, rng).points
            Y = sample_batch(target, n, rng).points
            w = np.full(n, 1.0 / n)
            sk = sinkhorn(
                w, w, cost_matrix(cost, X, Y), cfg.gaussian_epsilon,
                max_iters=cfg.gaussian_max_iters, tol=1e-6,
            )
            T = closed(X)
            err = float(
                np.mean(np.sum((barycentric_projection_discrete(sk.plan, Y) - T) ** 2, axis=1))
                / np.mean(np.sum((T - X) ** 2, axis=1))
            )
            errors.append(err)
            rows.append({"n": n, "relative_map_error": err, "sinkhorn_converged": sk.converged})
            print(f"  → n={n}: relative map error {err:.4f}")
        self.report.tables["gaussian"] = pd.DataFrame(rows)
        self.report.metrics["gaussian_map_errors"] = errors

    def _learned_map(self) -> None:
        """Dual SGD then a neural map on Gaussian samples, scored on fresh source draws."""
        cfg = self.cfg
        self._step("Gaussian case: learned map vs closed-form map")
        source, target = self._gaussian_problem()
        closed = gaussian_monge_closed_form(source.mean, source.covariance, target.mean, target.covariance)
        rng = np.random.default_rng(cfg.seed + 5)
        mu = DiscreteMeasure.uniform(sample_batch(source, cfg.learned_map_samples, rng).points)
        nu = DiscreteMeasure.uniform(sample_batch(target, cfg.learned_map_samples, rng).points)
        holdout = sample_batch(source, cfg.learned_map_holdout, rng).points
        T = closed(holdout)
        displacement = float(np.mean(np.sum((T - holdout) ** 2, axis=1)))
        cost = CostFn.squared_euclidean()

        epsilons = sorted({cfg.gaussian_epsilon, *cfg.learned_map_epsilons}, reverse=True)
        rows = []
        for eps in epsilons:
            reg = Regularization.entropy(eps)
            u, v, trace = solve_dual(mu, nu, cost, reg, cfg.solver.build())
            f, _ = train_map(mu, nu, u, v, cost, reg, cfg.map.build())
            mapped = apply_map(f, holdout)
            errors = moment_errors(mapped, target.mean, target.covariance)
            rows.append({
                "epsilon": eps,
                "relative_map_error": float(np.mean(np.sum((mapped - T) ** 2, axis=1))) / displacement,
                "pushforward_mean_error": errors.mean,
                "pushforward_covariance_error": errors.covariance,
                "worst_moment_error": errors.worst,
                "clamp_events": trace.clamp_events,
            })
            print(
                f"  → eps={eps:g}: map error {rows[-1]['relative_map_error']:.4f}, "
                f"moments {errors.mean:.3f}/{errors.covariance:.3f}"
            )

        table = pd.DataFrame(rows)
        self.report.tables["learned_map"] = table
        at = table[table["epsilon"] == cfg.gaussian_epsilon].iloc[0]
        metrics = self.report.metrics
        metrics["learned_map_error"] = float(at["relative_map_error"])
        metrics["learned_map_pushforward_mean_error"] = float(at["pushforward_mean_error"])
        metrics["learned_map_pushforward_covariance_error"] = float(at["pushforward_covariance_error"])
        sweep = table[table["epsilon"].isin(cfg.learned_map_epsilons)]
        metrics["learned_map_moment_errors"] = [float(x) for x in sweep["worst_moment_error"]]

    def _summary_lines(self):
        m = self.report.metrics
        lines = [f"Plan gap (min ε): {m['plan_gap_at_smallest_eps']:.2e}"]
        if "assignment_relative_deviation" in m:
            lines.append(f"Assignment dev.:  {m['assignment_relative_deviation']:.2%}")
        if "learned_map_error" in m:
            lines.append(f"Learned map err.: {m['learned_map_error']:.2%}")
        return lines


# =============================================================================
# Commands
# =============================================================================


def cmd_solve(cfg: SolveConfig, settings: RuntimeSettings | None = None, output_dir=None) -> ExperimentReport:
    return SolveRunner(cfg, settings, output_dir).run()


def cmd_map_train(
    cfg: MapTrainConfigModel, dual_checkpoint, settings: RuntimeSettings | None = None, output_dir=None
) -> ExperimentReport:
    return MapTrainRunner(cfg, dual_checkpoint, settings, output_dir).run()


def cmd_generate(
    cfg: GenerateConfig, map_checkpoint, settings: RuntimeSettings | None = None, output_dir=None
) -> ExperimentReport:
    return GenerateRunner(cfg, map_checkpoint, settings, output_dir).run()


def cmd_da(cfg: DaConfig, settings: RuntimeSettings | None = None, output_dir=None) -> ExperimentReport:
    return DaRunner(cfg, settings, output_dir).run()


def cmd_benchmark(
    cfg: BenchmarkConfig, settings: RuntimeSettings | None = None, output_dir=None
) -> ExperimentReport:
    return BenchmarkRunner(cfg, settings, output_dir).run()


def cmd_converge(
    cfg: ConvergeConfig, settings: RuntimeSettings | None = None, output_dir=None
) -> ExperimentReport:
    return ConvergeRunner(cfg, settings, output_dir).run()
