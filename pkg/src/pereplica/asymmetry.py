"""Downside compression of returns: negative returns are scaled by ``af``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timeseries import ReturnSeries

APPLICATION_POINTS = ("on_output", "on_target")


@dataclass(frozen=True)
class AsymmetryConfig:
    """``af`` in (0, 1]; ``application_point`` picks whether the decoded
    replication (``on_output``) or the proxy before training (``on_target``)
    is transformed."""

    af: float = 0.9
    application_point: str = "on_output"

    def __post_init__(self):
        if not 0.0 < self.af <= 1.0:
            raise ValueError(f"asymmetry.af must be in (0, 1], got {self.af}")
        if self.application_point not in APPLICATION_POINTS:
            raise ValueError(f"asymmetry.application_point must be one of {APPLICATION_POINTS}")


def asymmetric_values(values: np.ndarray, af: float) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return np.where(v < 0.0, af * v, v)


def apply_asymmetry(r: ReturnSeries, cfg: AsymmetryConfig) -> ReturnSeries:
    return ReturnSeries(r.index, asymmetric_values(r.values, cfg.af), r.name)
