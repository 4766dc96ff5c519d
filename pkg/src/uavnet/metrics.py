"""Shared scalar metrics and run summarization."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


def jain_index(values) -> float:
    """Jain's fairness index (sum x)^2 / (n * sum x^2) over nonnegative values.

    1.0 means perfectly even shares, 1/n means a single value holds everything.
    The all-zero input is defined as 1.0 (no inequality exists among zeros).
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("jain_index needs at least one value")
    if np.any(x < 0):
        raise ValueError("jain_index is defined for nonnegative values")
    sq = float(np.dot(x, x))
    if sq == 0.0:
        return 1.0
    s = float(x.sum())
    return s * s / (x.size * sq)


def energy_efficiency(bits_delivered: float, joules: float) -> float:
    """Delivered bits per joule of energy drawn."""
    if joules <= 0:
        raise ValueError(f"energy must be positive, got {joules}")
    if bits_delivered == 0:
        return 0.0
    return bits_delivered / joules


def config_hash(fields: dict) -> str:
    """Stable short hash of a flat config mapping, independent of key order."""
    canonical = "\n".join(f"{k}={fields[k]!r}" for k in sorted(fields))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunSummary:
    """One experiment run: identifying info, headline scalars, and series handles.

    `series` maps a series name to (header, rows); each series serializes to its
    own CSV file next to the summary row.
    """

    experiment: str
    seed: int
    config_fields: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    @property
    def config_digest(self) -> str:
        return config_hash(self.config_fields)

    def summary_row(self) -> tuple[list[str], list]:
        header = ["experiment", "config_hash", "seed"] + sorted(self.metrics)
        row = [self.experiment, self.config_digest, self.seed]
        row += [self.metrics[k] for k in sorted(self.metrics)]
        return header, row
