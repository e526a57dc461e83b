"""
Reference solvers and oracles.

    sinkhorn                     log-domain entropic OT on discrete supports
    sinkhorn_blockwise           same iteration with cost rows rebuilt per block (large n)
    semi_dual_sgd                entropic semi-dual (u eliminated), O(m) per sample
    exact_ot_simplex             transportation simplex (Bland's rule) for unregularized OT
    exact_assignment             uniform n×n OT as a linear assignment (scipy)
    exact_ot                     assignment when marginals are uniform and square, simplex otherwise
    exact_assignment_bruteforce  exhaustive permutations for n <= 8
    gaussian_monge_closed_form   affine Monge map between Gaussians

Sinkhorn potentials follow the same convention as the stochastic dual, so
π_ij = a_i b_j exp((u_i + v_j − C_ij)/ε) and they can be handed straight to the plan
and map-learning modules.
"""

from __future__ import annotations

import itertools
import logging
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp
from tenacity import Retrying, after_log, retry_if_exception_type, stop_after_attempt

from otmap.dual_solver import DualSolverConfig, RunningAverage, TrainTrace
from otmap.exceptions import NumericalError, SimplexCyclingError
from otmap.measures import CostFn, DiscreteMeasure, MeasureSource, cost_matrix, sample_batch
from otmap.plan import TransportPlan

logger = logging.getLogger("otmap.baselines")

EXACT_SIZE_LIMIT = 1_000_000
BRUTE_FORCE_LIMIT = 8
EIGEN_FLOOR = 1e-12
# cost entries materialized at once by the semi-dual
SEMI_DUAL_CHUNK = 1 << 22


def _simplex_vector(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < 1 or np.any(x < 0) or abs(x.sum() - 1.0) > 1e-9:
        raise ValueError(f"{name} must be a nonnegative vector summing to 1")
    return x


def _check_problem(a, b, C) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = _simplex_vector(a, "a")
    b = _simplex_vector(b, "b")
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise ValueError(f"cost matrix shape {C.shape} does not match ({a.size}, {b.size})")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    return a, b, C


# =============================================================================
# Sinkhorn
# =============================================================================


@dataclass(eq=False)
class SinkhornResult:
    plan: TransportPlan
    u: np.ndarray
    v: np.ndarray
    iterations_used: int
    final_marginal_residual: float
    converged: bool
    epsilon: float

    @property
    def dual_objective(self) -> float:
        """Σ a u + Σ b v − ε·(plan mass): the entropic dual at these potentials."""
        P = self.plan
        return float(
            P.row_marginal_target @ self.u
            + P.col_marginal_target @ self.v
            - self.epsilon * P.matrix.sum()
        )


def sinkhorn(
    a, b, C, eps: float, max_iters: int = 10_000, tol: float = 1e-9
) -> SinkhornResult:
    """Alternating log-domain scaling until the marginal L1 residual is <= tol."""
    a, b, C = _check_problem(a, b, C)
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    u = np.zeros(a.size)
    v = np.zeros(b.size)
    residual = np.inf
    iteration = 0
    for iteration in range(1, max_iters + 1):
        u = -eps * logsumexp((v[None, :] - C) / eps, b=b[None, :], axis=1)
        v = -eps * logsumexp((u[:, None] - C) / eps, b=a[:, None], axis=0)
        log_rows = np.log(a, where=a > 0, out=np.full(a.size, -np.inf)) + logsumexp(
            (u[:, None] + v[None, :] - C) / eps, b=b[None, :], axis=1
        )
        residual = float(np.abs(np.exp(log_rows) - a).sum())
        if not np.isfinite(residual):
            raise NumericalError(f"Sinkhorn diverged at iteration {iteration} (eps={eps})")
        if residual <= tol:
            break

    plan = np.exp((u[:, None] + v[None, :] - C) / eps) * a[:, None] * b[None, :]
    transport_plan = TransportPlan(plan, a, b)
    col_residual = float(np.abs(transport_plan.col_sums - b).sum())
    converged = residual <= tol
    if not converged:
        logger.warning(
            f"Sinkhorn stopped after {iteration} iterations with residual {residual:.3e} "
            f"(tol {tol:.1e}, eps={eps})"
        )
    return SinkhornResult(
        plan=transport_plan,
        u=u,
        v=v,
        iterations_used=iteration,
        final_marginal_residual=residual + col_residual,
        converged=converged,
        epsilon=float(eps),
    )


@dataclass(eq=False)
class BlockSinkhornResult:
    """Potentials and dual value of a Sinkhorn run whose cost matrix was never stored."""

    u: np.ndarray
    v: np.ndarray
    iterations_used: int
    row_residual: float
    converged: bool
    epsilon: float
    dual_objective: float


def _row_blocks(n: int, block_size: int):
    for start in range(0, n, block_size):
        yield slice(start, min(start + block_size, n))


def sinkhorn_blockwise(
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
    cost: CostFn,
    eps: float,
    max_iters: int = 2_000,
    tol: float = 1e-6,
    block_size: int = 1024,
) -> BlockSinkhornResult:
    """
    Log-domain Sinkhorn that rebuilds cost rows block by block.

    Memory stays at O(block_size · m), so n = m = 10⁴ runs on a desk machine. Same
    potential convention and stopping rule (row L1 residual) as ``sinkhorn``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    if mu.dim != nu.dim:
        raise ValueError(f"source dimension {mu.dim} differs from target dimension {nu.dim}")

    a, b = mu.weights, nu.weights
    u = np.zeros(mu.n)
    v = np.zeros(nu.n)

    def row_lse(v_cur: np.ndarray) -> np.ndarray:
        out = np.empty(mu.n)
        for rows in _row_blocks(mu.n, block_size):
            C = cost_matrix(cost, mu.points[rows], nu.points)
            out[rows] = logsumexp((v_cur[None, :] - C) / eps, b=b[None, :], axis=1)
        return out

    def col_lse(u_cur: np.ndarray) -> np.ndarray:
        acc = np.full(nu.n, -np.inf)
        for rows in _row_blocks(mu.n, block_size):
            C = cost_matrix(cost, mu.points[rows], nu.points)
            part = logsumexp((u_cur[rows, None] - C) / eps, b=a[rows, None], axis=0)
            acc = np.logaddexp(acc, part)
        return acc

    residual = np.inf
    iteration = 0
    lse = row_lse(v)
    for iteration in range(1, max_iters + 1):
        # rows of the current plan are a·exp(u/ε + lse)
        rows_mass = a * np.exp(u / eps + lse)
        residual = float(np.abs(rows_mass - a).sum())
        if not np.isfinite(residual):
            raise NumericalError(f"Sinkhorn diverged at iteration {iteration} (eps={eps})")
        if residual <= tol:
            break
        u = -eps * lse
        v = -eps * col_lse(u)
        lse = row_lse(v)

    mass = float((a * np.exp(u / eps + lse)).sum())
    converged = residual <= tol
    if not converged:
        logger.warning(
            f"Blockwise Sinkhorn stopped after {iteration} iterations with residual "
            f"{residual:.3e} (tol {tol:.1e}, eps={eps})"
        )
    return BlockSinkhornResult(
        u=u,
        v=v,
        iterations_used=iteration,
        row_residual=residual,
        converged=converged,
        epsilon=float(eps),
        dual_objective=float(a @ u + b @ v - eps * mass),
    )


# =============================================================================
# Semi-dual SGD
# =============================================================================


def _semi_dual_terms(v, xb, nu: DiscreteMeasure, cost: CostFn, eps: float, with_chi: bool = True):
    """
    Per-sample semi-dual values and, when asked, Σ_x χ(x, ·), the summed softmax weights
    over target atoms. Source rows go through in chunks of SEMI_DUAL_CHUNK / m.
    """
    rows = max(1, SEMI_DUAL_CHUNK // max(nu.n, 1))
    values = np.empty(xb.shape[0])
    chi_sum = np.zeros(nu.n) if with_chi else None
    base = nu.weights @ v
    for start in range(0, xb.shape[0], rows):
        block = slice(start, start + rows)
        z = (v[None, :] - cost_matrix(cost, xb[block], nu.points)) / eps
        lse = logsumexp(z, b=nu.weights[None, :], axis=1)
        values[block] = base - eps * lse - eps
        if with_chi:
            z -= lse[:, None]
            np.exp(z, out=z)
            chi_sum += nu.weights * z.sum(axis=0)
    return values, chi_sum


def semi_dual_objective(
    v,
    mu: MeasureSource,
    nu: DiscreteMeasure,
    cost: CostFn,
    eps: float,
    eval_batches: int = 4,
    p: int = 256,
    seed: int = 0,
    exact_limit: int = EXACT_SIZE_LIMIT,
) -> float:
    """E_X[Σ_j v_j b_j − ε·log Σ_j b_j exp((v_j − c(X, y_j))/ε) − ε]."""
    v = np.asarray(v, dtype=np.float64)
    if isinstance(mu, DiscreteMeasure) and mu.n * nu.n <= exact_limit:
        values, _ = _semi_dual_terms(v, mu.points, nu, cost, eps, with_chi=False)
        return float(mu.weights @ values)
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(eval_batches):
        xb = sample_batch(mu, p, rng).points
        values, _ = _semi_dual_terms(v, xb, nu, cost, eps, with_chi=False)
        total += values.mean()
    return float(total / eval_batches)


def semi_dual_sgd(
    mu: MeasureSource,
    nu: DiscreteMeasure,
    cost: CostFn,
    eps: float,
    cfg: DualSolverConfig,
    v0=None,
) -> tuple[np.ndarray, TrainTrace]:
    """Stochastic ascent on the entropic semi-dual over X-batches; every step touches all of v."""
    if not isinstance(nu, DiscreteMeasure):
        raise ValueError("semi-dual requires a discrete target measure")
    if mu.dim != nu.dim:
        raise ValueError(f"source dimension {mu.dim} differs from target dimension {nu.dim}")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")

    rng = np.random.default_rng(cfg.seed)
    v = np.zeros(nu.n) if v0 is None else np.array(v0, dtype=np.float64)
    trace = TrainTrace(label="semi_dual")
    averager = RunningAverage(cfg.averaging_start)
    elapsed = 0.0
    eval_p = cfg.eval_batch_size or cfg.batch_size

    logger.info(
        f"Semi-dual solve: eps={eps}, p={cfg.batch_size}, lr={cfg.learning_rate}, m={nu.n}"
    )
    for k in range(1, cfg.iterations + 1):
        t0 = time.perf_counter()
        xb = sample_batch(mu, cfg.batch_size, rng).points
        _, chi_sum = _semi_dual_terms(v, xb, nu, cost, eps)
        grad = nu.weights - chi_sum / xb.shape[0]
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite semi-dual gradient at iteration {k}")
        v += cfg.step_size(k) * grad
        averager.update(k, v)
        elapsed += time.perf_counter() - t0

        if k % cfg.log_every == 0 or k == cfg.iterations:
            (current,) = averager.resolve(v)
            objective = semi_dual_objective(
                current, mu, nu, cost, eps, cfg.eval_batches, eval_p, seed=cfg.seed
            )
            trace.append(k, elapsed * 1000.0, objective)
            logger.debug(f"  iter {k:>7}: semi-dual objective={objective:.6f}")

    final = np.array(averager.resolve(v)[0], copy=True)
    logger.info(f"Semi-dual done: objective={trace.final_objective:.6f} in {elapsed:.2f}s")
    return final, trace


# =============================================================================
# Exact OT
# =============================================================================


class ExactMethod(str, Enum):
    SIMPLEX = "simplex"
    ASSIGNMENT_BRUTE_FORCE = "assignment_bruteforce"
    ASSIGNMENT = "assignment"


@dataclass(eq=False)
class ExactOtResult:
    plan: TransportPlan
    cost: float
    method: ExactMethod
    pivots: int = 0


class _TransportationSimplex:
    """
    Transportation simplex on a spanning-tree basis of n + m − 1 cells.

    Rows are tree nodes 0..n−1 and columns n..n+m−1. Potentials satisfy
    u_i + v_j = C_ij on basic cells; a nonbasic cell with negative reduced cost enters,
    the unique tree cycle it closes is shifted by θ, and one minus-cell leaves.
    """

    def __init__(self, supply, demand, C, pivot_rule: str = "bland", degenerate_limit=None):
        self.n, self.m = C.shape
        self.C = C
        self.pivot_rule = pivot_rule
        self.flow: dict[tuple[int, int], float] = {}
        self.row_adj: list[set[int]] = [set() for _ in range(self.n)]
        self.col_adj: list[set[int]] = [set() for _ in range(self.m)]
        self.cost_tol = 1e-12 * max(1.0, float(np.abs(C).max()))
        self.flow_tol = 1e-14
        self.degenerate_limit = degenerate_limit or 50 * (self.n + self.m)
        self.pivots = 0
        self._northwest_corner(supply, demand)

    def _add(self, cell, value) -> None:
        i, j = cell
        self.flow[cell] = value
        self.row_adj[i].add(j)
        self.col_adj[j].add(i)

    def _remove(self, cell) -> None:
        i, j = cell
        del self.flow[cell]
        self.row_adj[i].discard(j)
        self.col_adj[j].discard(i)

    def _northwest_corner(self, supply, demand) -> None:
        s, d = supply.copy(), demand.copy()
        i = j = 0
        while True:
            x = min(s[i], d[j])
            self._add((i, j), max(x, 0.0))
            s[i] -= x
            d[j] -= x
            if i == self.n - 1 and j == self.m - 1:
                break
            if i == self.n - 1:
                j += 1
            elif j == self.m - 1:
                i += 1
            elif s[i] <= self.flow_tol:
                i += 1
            else:
                j += 1

    def potentials(self) -> tuple[np.ndarray, np.ndarray]:
        u = np.full(self.n, np.nan)
        v = np.full(self.m, np.nan)
        u[0] = 0.0
        queue = deque([("r", 0)])
        while queue:
            side, k = queue.popleft()
            if side == "r":
                for j in self.row_adj[k]:
                    if np.isnan(v[j]):
                        v[j] = self.C[k, j] - u[k]
                        queue.append(("c", j))
            else:
                for i in self.col_adj[k]:
                    if np.isnan(u[i]):
                        u[i] = self.C[i, k] - v[k]
                        queue.append(("r", i))
        if np.isnan(u).any() or np.isnan(v).any():
            raise RuntimeError("transportation basis is not a spanning tree")
        return u, v

    def entering(self, u, v) -> tuple[int, int] | None:
        reduced = self.C - u[:, None] - v[None, :]
        if self.pivot_rule == "dantzig":
            flat = int(np.argmin(reduced))
            if reduced.flat[flat] >= -self.cost_tol:
                return None
        else:
            candidates = np.flatnonzero(reduced.ravel() < -self.cost_tol)
            if candidates.size == 0:
                return None
            flat = int(candidates[0])
        return divmod(flat, self.m)

    def cycle(self, i: int, j: int) -> list[tuple[int, int]]:
        """Entering cell followed by the tree path from column j back to row i."""
        start, goal = i, self.n + j
        parent = {start: None}
        queue = deque([start])
        while queue:
            node = queue.popleft()
            if node == goal:
                break
            neighbors = (
                (self.n + c for c in self.row_adj[node])
                if node < self.n
                else self.col_adj[node - self.n]
            )
            for nxt in neighbors:
                if nxt not in parent:
                    parent[nxt] = node
                    queue.append(nxt)

        path = []
        node = goal
        while parent[node] is not None:
            prev = parent[node]
            path.append((prev, node - self.n) if prev < self.n else (node, prev - self.n))
            node = prev
        return [(i, j), *path]

    def pivot(self, cycle) -> float:
        minus = cycle[1::2]
        theta = min(self.flow[c] for c in minus)
        leaving = min(
            (c for c in minus if self.flow[c] <= theta + self.flow_tol),
            key=lambda c: c[0] * self.m + c[1],
        )
        for k, cell in enumerate(cycle[1:], start=1):
            if k % 2:
                self.flow[cell] = max(self.flow[cell] - theta, 0.0)
            else:
                self.flow[cell] += theta
        self._remove(leaving)
        self._add(cycle[0], theta)
        self.pivots += 1
        return theta

    def solve(self) -> None:
        degenerate = 0
        while True:
            u, v = self.potentials()
            cell = self.entering(u, v)
            if cell is None:
                return
            theta = self.pivot(self.cycle(*cell))
            degenerate = degenerate + 1 if theta <= self.flow_tol else 0
            if degenerate > self.degenerate_limit:
                raise SimplexCyclingError(
                    f"{degenerate} consecutive degenerate pivots after {self.pivots} pivots"
                )

    def basic_flows(self, supply, demand) -> dict[tuple[int, int], float]:
        """Solve the basis for new marginals by peeling leaves off the spanning tree."""
        s, d = supply.astype(np.float64).copy(), demand.astype(np.float64).copy()
        row_adj = [set(x) for x in self.row_adj]
        col_adj = [set(x) for x in self.col_adj]
        flows: dict[tuple[int, int], float] = {}
        stack = [("r", i) for i in range(self.n) if len(row_adj[i]) == 1]
        stack += [("c", j) for j in range(self.m) if len(col_adj[j]) == 1]
        while stack:
            side, k = stack.pop()
            if side == "r":
                if len(row_adj[k]) != 1:
                    continue
                j = row_adj[k].pop()
                col_adj[j].discard(k)
                flows[(k, j)] = s[k]
                d[j] -= s[k]
                s[k] = 0.0
                if len(col_adj[j]) == 1:
                    stack.append(("c", j))
            else:
                if len(col_adj[k]) != 1:
                    continue
                i = col_adj[k].pop()
                row_adj[i].discard(k)
                flows[(i, k)] = d[k]
                s[i] -= d[k]
                d[k] = 0.0
                if len(row_adj[i]) == 1:
                    stack.append(("r", i))
        return flows

    def plan_matrix(self, flows=None) -> np.ndarray:
        P = np.zeros((self.n, self.m))
        for (i, j), x in (flows or self.flow).items():
            P[i, j] = x
        return P


def exact_ot_simplex(
    a, b, C, pivot_rule: str = "bland", max_restarts: int = 3, perturbation: float = 1e-10
) -> ExactOtResult:
    """
    Unregularized discrete OT by the transportation simplex.

    If degenerate pivots stall, the solve restarts on supplies perturbed by δ (growing
    tenfold per restart); the final basis is then re-solved for the true marginals.
    """
    a, b, C = _check_problem(a, b, C)
    n, m = C.shape
    if n * m > EXACT_SIZE_LIMIT:
        raise ValueError(f"exact OT limited to n·m <= {EXACT_SIZE_LIMIT}, got {n * m}")
    if pivot_rule not in ("bland", "dantzig"):
        raise ValueError(f"unknown pivot rule {pivot_rule!r}")
    b = b * (a.sum() / b.sum())

    for attempt in Retrying(
        retry=retry_if_exception_type(SimplexCyclingError),
        stop=stop_after_attempt(max_restarts + 1),
        after=after_log(logger, logging.WARNING),
        reraise=True,
    ):
        with attempt:
            number = attempt.retry_state.attempt_number
            delta = 0.0 if number == 1 else perturbation * 10 ** (number - 2)
            supply = a + delta
            demand = b.copy()
            demand[-1] += n * delta
            solver = _TransportationSimplex(supply, demand, C, pivot_rule)
            solver.solve()

    if delta > 0:
        logger.warning(f"Simplex solved with supply perturbation {delta:.1e}; re-solving basis")
        flows = solver.basic_flows(a, b)
        worst = min(flows.values()) if flows else 0.0
        if worst < -1e-9:
            logger.warning(f"Unperturbed basis slightly infeasible (min flow {worst:.2e}); clipped")
        P = np.maximum(solver.plan_matrix(flows), 0.0)
    else:
        P = solver.plan_matrix()

    plan = TransportPlan(P, a, b / b.sum())
    cost = float(np.sum(P * C))
    logger.debug(f"Simplex optimum {cost:.10f} after {solver.pivots} pivots ({n}×{m})")
    return ExactOtResult(plan=plan, cost=cost, method=ExactMethod.SIMPLEX, pivots=solver.pivots)


def exact_assignment_bruteforce(C) -> tuple[np.ndarray, float]:
    """Minimum of (1/n)·Σ C[i, σ(i)] over all permutations; first minimizer wins ties."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"assignment needs a square cost matrix, got {C.shape}")
    n = C.shape[0]
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute-force assignment limited to n <= {BRUTE_FORCE_LIMIT}, got {n}")
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    costs = C[np.arange(n), perms].sum(axis=1) / n
    best = int(np.argmin(costs))
    return perms[best].copy(), float(costs[best])


def assignment_plan(permutation) -> TransportPlan:
    """Uniform permutation coupling π_{i, σ(i)} = 1/n."""
    perm = np.asarray(permutation, dtype=np.int64)
    n = perm.size
    P = np.zeros((n, n))
    P[np.arange(n), perm] = 1.0 / n
    w = np.full(n, 1.0 / n)
    return TransportPlan(P, w, w)


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.allclose(w, 1.0 / w.size, rtol=0.0, atol=1e-12))


def exact_assignment(C) -> ExactOtResult:
    """Uniform n×n OT as a linear assignment; an optimal vertex is a permutation."""
    C = np.asarray(C, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"assignment needs a square cost matrix, got {C.shape}")
    rows, cols = linear_sum_assignment(C)
    perm = np.empty(C.shape[0], dtype=np.int64)
    perm[rows] = cols
    plan = assignment_plan(perm)
    return ExactOtResult(plan=plan, cost=float(np.sum(plan.matrix * C)), method=ExactMethod.ASSIGNMENT)


def exact_ot(a, b, C) -> ExactOtResult:
    """Linear assignment for uniform equal-size marginals, transportation simplex otherwise."""
    a, b, C = _check_problem(a, b, C)
    if a.size == b.size and _is_uniform(a) and _is_uniform(b):
        return exact_assignment(C)
    return exact_ot_simplex(a, b, C)


# =============================================================================
# Gaussian closed form
# =============================================================================


@dataclass(eq=False)
class AffineMap:
    """x ↦ A x + b."""

    A: np.ndarray
    b: np.ndarray

    def __call__(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.A.T + self.b


def _check_spd(S, name: str) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if np.max(np.abs(S - S.T)) > 1e-10 * max(1.0, np.max(np.abs(S))):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(S).min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    return 0.5 * (S + S.T)


def sym_matrix_power(S: np.ndarray, power: float) -> np.ndarray:
    """S^power via symmetric eigendecomposition with eigenvalues floored at 1e-12."""
    w, V = eigh(S)
    w = np.maximum(w, EIGEN_FLOOR)
    return (V * w**power) @ V.T


def gaussian_monge_closed_form(m1, S1, m2, S2) -> AffineMap:
    """A = S1^{-1/2}(S1^{1/2} S2 S1^{1/2})^{1/2} S1^{-1/2}, b = m2 − A m1."""
    m1 = np.asarray(m1, dtype=np.float64).ravel()
    m2 = np.asarray(m2, dtype=np.float64).ravel()
    S1 = _check_spd(S1, "S1")
    S2 = _check_spd(S2, "S2")
    if not (S1.shape[0] == S2.shape[0] == m1.size == m2.size):
        raise ValueError("means and covariances must share one dimension")

    root = sym_matrix_power(S1, 0.5)
    inv_root = sym_matrix_power(S1, -0.5)
    middle = sym_matrix_power(root @ S2 @ root, 0.5)
    A = inv_root @ middle @ inv_root
    A = 0.5 * (A + A.T)
    return AffineMap(A=A, b=m2 - A @ m1)
