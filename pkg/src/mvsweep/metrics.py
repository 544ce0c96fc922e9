"""Point-cloud quality metrics against a ground-truth cloud.

Two complementary families:

* distance-based: accuracy (mean reconstruction-to-truth nearest
  distance) and completeness (mean truth-to-reconstruction nearest
  distance), both truncated at a cap so single stray points cannot
  dominate, and their mean as a single overall number;
* threshold-based: precision/recall as the fraction of points within a
  distance threshold of the other cloud, combined into an f-score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloudError, EmptyReferenceError
from .fusion import PointCloud

__all__ = [
    "EvalReport",
    "accuracy_completeness",
    "evaluate_clouds",
    "fscore",
    "nearest_distance",
]


def nearest_distance(query: PointCloud, reference: PointCloud,
                     method: str = "kdtree") -> np.ndarray:
    """Distance from each query point to its nearest reference point.

    ``method`` selects the k-d tree implementation or a brute-force
    pairwise scan (identical results; the scan exists as an oracle and
    for tiny inputs).
    """
    if len(reference) == 0:
        raise EmptyReferenceError("nearest-distance query against an empty cloud")
    if len(query) == 0:
        return np.zeros(0, dtype=np.float64)
    if method == "kdtree":
        dists, _ = cKDTree(reference.xyz).query(query.xyz)
        return np.asarray(dists, dtype=np.float64)
    if method == "brute":
        out = np.empty(len(query), dtype=np.float64)
        # Chunked so the pairwise matrix stays small.
        step = 512
        for start in range(0, len(query), step):
            block = query.xyz[start:start + step]
            diff = block[:, None, :] - reference.xyz[None, :, :]
            out[start:start + len(block)] = np.sqrt(
                np.square(diff).sum(axis=2)).min(axis=1)
        return out
    raise ValueError(f"unknown method {method!r}")


def accuracy_completeness(recon: PointCloud, truth: PointCloud,
                          max_dist: float) -> tuple[float, float]:
    """Truncated mean nearest distances (reconstruction->truth, truth->reconstruction).

    Distances are clipped to ``max_dist`` before averaging.  Both clouds
    must be non-empty.
    """
    if len(recon) == 0 or len(truth) == 0:
        raise EmptyCloudError("accuracy/completeness need non-empty clouds")
    if max_dist <= 0:
        raise ValueError(f"max_dist must be positive, got {max_dist}")
    acc = float(np.minimum(nearest_distance(recon, truth), max_dist).mean())
    comp = float(np.minimum(nearest_distance(truth, recon), max_dist).mean())
    return acc, comp


def fscore(recon: PointCloud, truth: PointCloud, threshold: float,
           ) -> tuple[float, float, float]:
    """Precision, recall, and f-score at a distance threshold.

    Precision is the fraction of reconstructed points within
    ``threshold`` of the truth; recall the fraction of truth points
    within ``threshold`` of the reconstruction; the f-score is their
    harmonic mean (0 when both vanish).
    """
    if len(recon) == 0 or len(truth) == 0:
        raise EmptyCloudError("f-score needs non-empty clouds")
    if threshold < 0:
        raise ValueError(f"threshold must be non-negative, got {threshold}")
    precision = float((nearest_distance(recon, truth) <= threshold).mean())
    recall = float((nearest_distance(truth, recon) <= threshold).mean())
    if precision + recall == 0.0:
        return 0.0, 0.0, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class EvalReport:
    """All metrics of one reconstruction/truth comparison."""

    accuracy: float
    completeness: float
    overall: float
    precision: float
    recall: float
    f_score: float
    threshold: float
    max_dist: float

    def to_text(self) -> str:
        """Line-oriented ``key=value`` rendering, one metric per line."""
        return "\n".join(
            f"{key}={getattr(self, key):.6f}"
            for key in ("accuracy", "completeness", "overall",
                        "precision", "recall", "f_score", "threshold", "max_dist")
        )

    def to_json(self) -> str:
        return json.dumps(
            {key: getattr(self, key)
             for key in ("accuracy", "completeness", "overall",
                         "precision", "recall", "f_score", "threshold", "max_dist")},
            indent=2, sort_keys=True)


def evaluate_clouds(recon: PointCloud, truth: PointCloud, threshold: float,
                    max_dist: float | None = None) -> EvalReport:
    """Full report; ``max_dist`` defaults to 20x the f-score threshold."""
    if max_dist is None:
        max_dist = 20.0 * threshold
    acc, comp = accuracy_completeness(recon, truth, max_dist)
    precision, recall, f = fscore(recon, truth, threshold)
    return EvalReport(
        accuracy=acc,
        completeness=comp,
        overall=0.5 * (acc + comp),
        precision=precision,
        recall=recall,
        f_score=f,
        threshold=threshold,
        max_dist=max_dist,
    )
