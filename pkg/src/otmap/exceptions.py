"""
Error hierarchy for otmap.

Every error raised on purpose by the library derives from OtmapError. The CLI maps
families of errors onto exit codes (see otmap.main):

    ConfigError, MeasureFormatError, CheckpointError  → exit code 2
    NumericalError, AcceptanceCheckError              → exit code 1
"""

from __future__ import annotations


class OtmapError(Exception):
    """Base class for all otmap errors."""


class ConfigError(OtmapError, ValueError):
    """Invalid experiment configuration, flag override or checkpoint/config mismatch."""


class MeasureFormatError(OtmapError, ValueError):
    """Malformed measure file: non-numeric cell, ragged rows, empty file, missing column."""


class NumericalError(OtmapError, ArithmeticError):
    """Non-finite value produced during optimization or evaluation."""


class UnmatchedAtomError(OtmapError, ValueError):
    """A source atom carries no mass in the plan, so it has no barycentric image."""


class CheckpointError(OtmapError, ValueError):
    """Checkpoint document is malformed, truncated or has an unsupported version."""


class SimplexCyclingError(OtmapError, RuntimeError):
    """Transportation simplex stalled on degenerate pivots."""


class AcceptanceCheckError(OtmapError):
    """Acceptance checks failed while strict checking is on."""
