"""Geometric reconstruction metrics and the benchmark report row."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class MetricsReport:
    compression_rate: float = 0.0
    encode_fps: float = 0.0
    decode_fps: float = 0.0
    max_err: float = 0.0
    rmse: float = 0.0
    dropped_points: int = 0
    timings: Dict[str, float] = field(default_factory=dict)


def cloud_error(source: np.ndarray, decoded: np.ndarray):
    """Nearest-neighbor point-to-point error of decoded against source.

    Returns (max, rmse) in meters; (inf, inf) when one side is empty and
    the other is not, (0, 0) when both are empty.
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dec = np.asarray(decoded, dtype=np.float64).reshape(-1, 3)
    if dec.shape[0] == 0 and src.shape[0] == 0:
        return 0.0, 0.0
    if dec.shape[0] == 0 or src.shape[0] == 0:
        return np.inf, np.inf
    dists, _ = cKDTree(src).query(dec, k=1)
    return float(np.max(dists)), float(np.sqrt(np.mean(dists**2)))
