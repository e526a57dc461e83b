"""
Minimal feedforward network core: He init, forward/backward, Adam and gradient checks.

Used for continuous dual potentials (scalar output) and Monge maps (d → d). Everything
runs in float64 on numpy arrays. Weights are stored (fan_in, fan_out) so a layer is
``h @ W + b``.

Usage:
    from otmap.nn import MlpSpec, adam_init, adam_step, backward, forward, init

    spec = MlpSpec((2, 64, 64, 1))
    params = init(spec, seed=0)
    out, cache = forward(params, xb)
    grads, _ = backward(params, cache, np.ones_like(out))
    params, state = adam_step(params, grads, adam_init(params), lr=1e-3)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable

import numpy as np

from otmap.exceptions import NumericalError

logger = logging.getLogger("otmap.nn")


class Activation(str, Enum):
    RELU = "relu"
    IDENTITY = "identity"
    TANH = "tanh"


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes input → hidden… → output; ReLU hidden units, identity or tanh output."""

    layer_sizes: tuple[int, ...]
    hidden_activation: Activation = Activation.RELU
    output_activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("layer_sizes needs at least an input and an output size")
        if any(s < 1 for s in sizes):
            raise ValueError(f"all layer sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "hidden_activation", Activation(self.hidden_activation))
        object.__setattr__(self, "output_activation", Activation(self.output_activation))
        if self.hidden_activation != Activation.RELU:
            raise ValueError("hidden layers use ReLU")
        if self.output_activation == Activation.RELU:
            raise ValueError("output activation must be identity or tanh")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation.value,
            "output_activation": self.output_activation.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MlpSpec:
        return cls(
            layer_sizes=tuple(data["layer_sizes"]),
            hidden_activation=Activation(data.get("hidden_activation", "relu")),
            output_activation=Activation(data.get("output_activation", "identity")),
        )


@dataclass
class MlpParams:
    """Per-layer weights (fan_in × fan_out) and biases, tied to their spec."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.weights) != self.spec.n_layers or len(self.biases) != self.spec.n_layers:
            raise ValueError("number of weight/bias arrays does not match spec")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64).ravel() for b in self.biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ValueError(
                    f"layer {k}: expected W{(sizes[k], sizes[k + 1])} b({sizes[k + 1]},), "
                    f"got W{w.shape} b{b.shape}"
                )

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> MlpParams:
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> MlpParams:
        return MlpParams(
            self.spec, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases]
        )

    def scaled(self, factor: float) -> MlpParams:
        return MlpParams(
            self.spec, [factor * w for w in self.weights], [factor * b for b in self.biases]
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays())

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "weights": [np.ascontiguousarray(w) for w in self.weights],
            "biases": [np.ascontiguousarray(b) for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MlpParams:
        spec = MlpSpec.from_dict(data["spec"])
        sizes = spec.layer_sizes
        weights = [
            np.asarray(w, dtype=np.float64).reshape(sizes[k], sizes[k + 1])
            for k, w in enumerate(data["weights"])
        ]
        biases = [np.asarray(b, dtype=np.float64).reshape(-1) for b in data["biases"]]
        return cls(spec, weights, biases)


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations recorded by forward for backward."""

    inputs: list[np.ndarray]
    pre_activations: list[np.ndarray]
    output: np.ndarray


# =============================================================================
# Forward / backward
# =============================================================================


def init(spec: MlpSpec, seed: int) -> MlpParams:
    """He-scaled Gaussian weights (std sqrt(2/fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    sizes = spec.layer_sizes
    weights = [
        rng.standard_normal((sizes[k], sizes[k + 1])) * np.sqrt(2.0 / sizes[k])
        for k in range(spec.n_layers)
    ]
    biases = [np.zeros(sizes[k + 1]) for k in range(spec.n_layers)]
    return MlpParams(spec, weights, biases)


def zeros(spec: MlpSpec) -> MlpParams:
    sizes = spec.layer_sizes
    return MlpParams(
        spec,
        [np.zeros((sizes[k], sizes[k + 1])) for k in range(spec.n_layers)],
        [np.zeros(sizes[k + 1]) for k in range(spec.n_layers)],
    )


def _activate(z: np.ndarray, act: Activation) -> np.ndarray:
    if act == Activation.RELU:
        return np.maximum(z, 0.0)
    if act == Activation.TANH:
        return np.tanh(z)
    return z


def _activation_grad(z: np.ndarray, a: np.ndarray, act: Activation) -> np.ndarray:
    if act == Activation.RELU:
        # subgradient 0 at the kink
        return (z > 0).astype(np.float64)
    if act == Activation.TANH:
        return 1.0 - a * a
    return np.ones_like(z)


def forward(params: MlpParams, xb: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    spec = params.spec
    h = np.asarray(xb, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != spec.input_dim:
        raise ValueError(f"expected input of shape (p, {spec.input_dim}), got {h.shape}")

    inputs, pre = [], []
    last = spec.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = _activate(z, spec.output_activation if k == last else spec.hidden_activation)

    if not np.all(np.isfinite(h)):
        raise NumericalError("network forward pass produced non-finite output")
    return h, ForwardCache(inputs=inputs, pre_activations=pre, output=h)


def backward(
    params: MlpParams, cache: ForwardCache, out_grad: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradients of sum(out * out_grad) w.r.t. parameters and inputs."""
    spec = params.spec
    g = np.asarray(out_grad, dtype=np.float64)
    if g.shape != cache.output.shape:
        raise ValueError(f"out_grad shape {g.shape} does not match output {cache.output.shape}")

    n = spec.n_layers
    grad_w: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    grad_b: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for k in reversed(range(n)):
        z = cache.pre_activations[k]
        act = spec.output_activation if k == n - 1 else spec.hidden_activation
        a = cache.output if k == n - 1 else cache.inputs[k + 1]
        gz = g * _activation_grad(z, a, act)
        grad_w[k] = cache.inputs[k].T @ gz
        grad_b[k] = gz.sum(axis=0)
        g = gz @ params.weights[k].T

    return MlpParams(spec, grad_w, grad_b), g


# =============================================================================
# Adam
# =============================================================================


@dataclass
class AdamState:
    """First/second moment accumulators shaped like the parameters."""

    m: MlpParams
    v: MlpParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("Adam step counter must be >= 0")


def adam_init(params: MlpParams) -> AdamState:
    return AdamState(m=params.zeros_like(), v=params.zeros_like())


def adam_update(
    value: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    delta: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One bias-corrected Adam descent update of a single array (step counts from 1)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**step)
    v_hat = v / (1.0 - beta2**step)
    return value - lr * m_hat / (np.sqrt(v_hat) + delta), m, v


def adam_step(
    params: MlpParams, grads: MlpParams, state: AdamState, lr: float
) -> tuple[MlpParams, AdamState]:
    """Descent step params − lr·m̂/(√v̂ + δ); returns new params and state."""
    if not grads.all_finite():
        raise NumericalError("non-finite gradient passed to Adam")
    if [a.shape for a in grads.arrays()] != [a.shape for a in params.arrays()]:
        raise ValueError("gradient shapes do not match parameters")

    step = state.step + 1
    new_vals, new_m, new_v = [], [], []
    for value, grad, m, v in zip(params.arrays(), grads.arrays(), state.m.arrays(), state.v.arrays()):
        value, m, v = adam_update(value, grad, m, v, step, lr, state.beta1, state.beta2, state.delta)
        new_vals.append(value)
        new_m.append(m)
        new_v.append(v)

    n = params.spec.n_layers

    def _pack(arrays):
        return MlpParams(params.spec, arrays[:n], arrays[n:])

    new_state = AdamState(
        m=_pack(new_m), v=_pack(new_v), step=step,
        beta1=state.beta1, beta2=state.beta2, delta=state.delta,
    )
    return _pack(new_vals), new_state


# =============================================================================
# Gradient check
# =============================================================================


@dataclass
class GradCheckReport:
    """Worst relative disagreement between analytic and central-difference gradients."""

    max_relative_error: float
    n_checked: int
    tol: float
    worst: str = ""
    errors: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= self.tol


def grad_check(
    params: MlpParams,
    loss_fn: Callable[[MlpParams], tuple[float, MlpParams]],
    tol: float = 1e-5,
    n_checks: int = 30,
    seed: int = 0,
    step: float = 1e-5,
    floor: float = 1e-6,
) -> GradCheckReport:
    """
    Compare the gradients returned by ``loss_fn`` with central differences.

    ``loss_fn(params)`` returns ``(loss, grads)``. A random subset of parameter entries
    is checked; relative error is |analytic − numeric| / max(|analytic|, |numeric|, floor).
    """
    _, analytic = loss_fn(params)
    arrays = params.arrays()
    analytic_arrays = analytic.arrays()
    offsets = np.cumsum([0] + [a.size for a in arrays])
    total = int(offsets[-1])

    rng = np.random.default_rng(seed)
    chosen = rng.choice(total, size=min(n_checks, total), replace=False)
    n = params.spec.n_layers

    errors, worst, worst_err = [], "", 0.0
    for flat in chosen:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        pos = np.unravel_index(int(flat - offsets[k]), arrays[k].shape)

        def _loss_at(delta: float) -> float:
            perturbed = params.copy()
            target = perturbed.weights[k] if k < n else perturbed.biases[k - n]
            target[pos] += delta
            return float(loss_fn(perturbed)[0])

        numeric = (_loss_at(step) - _loss_at(-step)) / (2 * step)
        exact = float(analytic_arrays[k][pos])
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
        errors.append(err)
        if err > worst_err:
            kind = "W" if k < n else "b"
            worst, worst_err = f"{kind}[{k % n}]{tuple(int(i) for i in pos)}", err

    report = GradCheckReport(
        max_relative_error=max(errors) if errors else 0.0,
        n_checked=len(errors),
        tol=tol,
        worst=worst,
        errors=errors,
    )
    if not report.passed:
        logger.warning(
            f"Gradient check failed: max relative error {report.max_relative_error:.3e} at {worst}"
        )
    return report
