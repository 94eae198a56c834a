"""Point-cloud evaluation: accuracy, completeness, F1 at a distance
threshold, using an exact nearest-neighbor test (k-d tree).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .scene_io import PointCloud


@dataclass(frozen=True)
class EvalReport:
    accuracy: float       # % of reconstructed points within tau of GT
    completeness: float   # % of GT points within tau of the reconstruction
    f1: float
    tau: float


def fraction_within(queries: np.ndarray, reference: np.ndarray, tau: float) -> float:
    """Fraction of query points whose nearest reference point is within
    tau (inclusive)."""
    queries = np.asarray(queries, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if len(queries) == 0:
        return 0.0
    tree = cKDTree(reference)
    _, idx = tree.query(queries, k=1)
    # squared distances avoid a lossy sqrt at the inclusive boundary
    d2 = ((reference[idx] - queries) ** 2).sum(axis=1)
    return float((d2 <= tau * tau).mean())


def fraction_within_brute(queries, reference, tau: float) -> float:
    """Brute-force oracle for fraction_within (quadratic; small inputs)."""
    queries = np.asarray(queries, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if len(queries) == 0:
        return 0.0
    hits = 0
    for q in queries:
        d2 = ((reference - q) ** 2).sum(axis=1)
        if d2.min() <= tau * tau:
            hits += 1
    return hits / len(queries)


def evaluate(recon: PointCloud, gt: PointCloud, tau: float) -> EvalReport:
    """Accuracy / completeness / F1 (percent) at threshold tau."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    if len(gt.positions) == 0:
        raise ValueError("ground-truth cloud is empty")
    if len(recon.positions) == 0:
        return EvalReport(0.0, 0.0, 0.0, tau)
    acc = 100.0 * fraction_within(recon.positions, gt.positions, tau)
    comp = 100.0 * fraction_within(gt.positions, recon.positions, tau)
    f1 = 0.0 if acc + comp == 0 else 2.0 * acc * comp / (acc + comp)
    return EvalReport(acc, comp, f1, tau)
