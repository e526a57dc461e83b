"""
Checkpoint documents for dual potentials and Monge maps.

A checkpoint is one JSON document:

    {"format": "otmap-checkpoint", "version": 1, "kind": "...",
     "metadata": {...}, "payload": {...}}

Arrays are written by orjson's numpy serializer, whose shortest round-trip float
representation makes save → load bitwise stable. Writes go to a temporary file in the
destination directory and are moved into place with os.replace, so a failed write never
leaves a truncated checkpoint behind.

Usage:
    from otmap.checkpoints import load_checkpoint, potentials_checkpoint, save_checkpoint

    save_checkpoint(potentials_checkpoint(u, v, problem_metadata(reg, cost, 2, seed=0)), path)
    u, v = potentials_from_checkpoint(load_checkpoint(path))
"""

from __future__ import annotations

import hashlib
import logging
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import orjson

from otmap import nn
from otmap.dual_solver import DualPotential, NetworkPotential, Regularization, VectorPotential
from otmap.exceptions import CheckpointError, ConfigError
from otmap.map_learn import MongeMap
from otmap.measures import CostFn, CostKind, DiscreteMeasure, MeasureSource

logger = logging.getLogger("otmap.checkpoints")

CHECKPOINT_FORMAT = "otmap-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointKind(str, Enum):
    DUAL_POTENTIALS = "dual_potentials"
    MONGE_MAP = "monge_map"


@dataclass
class Checkpoint:
    kind: CheckpointKind
    metadata: dict[str, Any] = field(default_factory=dict)
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = CheckpointKind(self.kind)

    def to_document(self) -> dict[str, Any]:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "kind": self.kind.value,
            "metadata": self.metadata,
            "payload": self.payload,
        }


# =============================================================================
# Metadata
# =============================================================================


def problem_metadata(
    reg: Regularization, cost: CostFn, dim: int, seed: int, **extra: Any
) -> dict[str, Any]:
    """Regularization, cost and dimension needed to reuse a checkpoint consistently."""
    return {
        "reg_kind": reg.kind.value,
        "epsilon": reg.epsilon,
        "cost_kind": cost.kind.value,
        "cost_scale": cost.scale,
        "dim": int(dim),
        "seed": int(seed),
        **extra,
    }


def regularization_from_metadata(metadata: dict[str, Any]) -> Regularization:
    try:
        return Regularization(metadata["reg_kind"], float(metadata["epsilon"]))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint metadata lacks a valid regularization: {e}") from e


def cost_from_metadata(metadata: dict[str, Any]) -> CostFn:
    try:
        kind = CostKind(metadata["cost_kind"])
        scale = float(metadata.get("cost_scale", 1.0))
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"checkpoint metadata lacks a valid cost: {e}") from e
    if kind == CostKind.CUSTOM:
        raise CheckpointError("checkpoints with a custom cost cannot be rebuilt from metadata")
    return CostFn(kind, scale=scale)


def check_compatible(
    checkpoint: Checkpoint, reg: Regularization, cost: CostFn, rel_tol: float = 1e-12
) -> None:
    """Raise ConfigError when the checkpoint was solved for another (reg, cost)."""
    meta = checkpoint.metadata
    saved_reg = regularization_from_metadata(meta)
    if saved_reg.kind != reg.kind:
        raise ConfigError(
            f"checkpoint regularization {saved_reg.kind.value} does not match config {reg.kind.value}"
        )
    if not np.isclose(saved_reg.epsilon, reg.epsilon, rtol=rel_tol, atol=0.0):
        raise ConfigError(
            f"checkpoint epsilon {saved_reg.epsilon} does not match config epsilon {reg.epsilon}"
        )
    if meta.get("cost_kind") != cost.kind.value:
        raise ConfigError(
            f"checkpoint cost {meta.get('cost_kind')} does not match config cost {cost.kind.value}"
        )


def support_digest(measure: MeasureSource) -> str | None:
    """sha256 over the points and weights of a discrete measure; None for continuous laws."""
    if not isinstance(measure, DiscreteMeasure):
        return None
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(measure.points, dtype=np.float64).tobytes())
    digest.update(np.ascontiguousarray(measure.weights, dtype=np.float64).tobytes())
    return digest.hexdigest()


def check_supports(checkpoint: Checkpoint, mu: MeasureSource, nu: MeasureSource) -> None:
    """Raise ConfigError when rebuilt measures differ from the ones the potentials were solved on."""
    meta = checkpoint.metadata
    for role, measure in (("source", mu), ("target", nu)):
        # checkpoints written before digests were recorded carry no key
        if f"{role}_digest" not in meta:
            continue
        saved = meta[f"{role}_digest"]
        current = support_digest(measure)
        if saved != current:
            raise ConfigError(
                f"{role} support does not match the solve run "
                f"(checkpoint {str(saved)[:12]}, config {str(current)[:12]})"
            )


# =============================================================================
# Payload conversion
# =============================================================================


def _potential_payload(pot: DualPotential) -> dict[str, Any]:
    if isinstance(pot, VectorPotential):
        return {"type": "vector", "values": np.ascontiguousarray(pot.values)}
    return {"type": "network", "params": pot.params.to_dict()}


def _potential_from_payload(data: dict[str, Any]) -> DualPotential:
    kind = data.get("type")
    if kind == "vector":
        return VectorPotential(np.asarray(data["values"], dtype=np.float64))
    if kind == "network":
        return NetworkPotential(nn.MlpParams.from_dict(data["params"]))
    raise CheckpointError(f"unknown potential type {kind!r}")


def potentials_checkpoint(u: DualPotential, v: DualPotential, metadata: dict[str, Any]) -> Checkpoint:
    return Checkpoint(
        CheckpointKind.DUAL_POTENTIALS,
        metadata,
        {"u": _potential_payload(u), "v": _potential_payload(v)},
    )


def potentials_from_checkpoint(checkpoint: Checkpoint) -> tuple[DualPotential, DualPotential]:
    if checkpoint.kind != CheckpointKind.DUAL_POTENTIALS:
        raise CheckpointError(f"expected a dual potentials checkpoint, got {checkpoint.kind.value}")
    try:
        return (
            _potential_from_payload(checkpoint.payload["u"]),
            _potential_from_payload(checkpoint.payload["v"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed potentials payload: {e}") from e


def map_checkpoint(f: MongeMap, metadata: dict[str, Any]) -> Checkpoint:
    return Checkpoint(CheckpointKind.MONGE_MAP, metadata, {"map": f.to_dict()})


def map_from_checkpoint(checkpoint: Checkpoint) -> MongeMap:
    if checkpoint.kind != CheckpointKind.MONGE_MAP:
        raise CheckpointError(f"expected a Monge map checkpoint, got {checkpoint.kind.value}")
    try:
        return MongeMap.from_dict(checkpoint.payload["map"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed Monge map payload: {e}") from e


# =============================================================================
# Save / load
# =============================================================================


def dumps(document: Any) -> bytes:
    return orjson.dumps(document, option=orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_INDENT_2)


def write_atomic(path, data: bytes) -> Path:
    """Write bytes next to ``path`` and move them into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def save_checkpoint(checkpoint: Checkpoint, path) -> Path:
    path = write_atomic(path, dumps(checkpoint.to_document()))
    logger.info(f"Saved {checkpoint.kind.value} checkpoint to {path}")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        document = orjson.loads(path.read_bytes())
    except orjson.JSONDecodeError as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e

    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an otmap checkpoint")
    version = document.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )
    try:
        checkpoint = Checkpoint(
            kind=document["kind"],
            metadata=dict(document.get("metadata") or {}),
            payload=dict(document["payload"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"malformed checkpoint {path}: {e}") from e

    logger.debug(f"Loaded {checkpoint.kind.value} checkpoint from {path}")
    return checkpoint
