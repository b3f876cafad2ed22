"""Evaluation metrics: top-k accuracy, n-way protocols, Chamfer distance, F1.

Conventions (recorded in every report): Chamfer is the sum of the two
directed means of squared nearest-neighbor distances, reported x100; F1 uses
a distance threshold tau in the unit-max-radius normalized frame; score ties
always break toward the lowest class index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .pointcloud import PointCloud, as_points

CHAMFER_CONVENTION = "sum of directed means of squared NN distances, reported x100"
DEFAULT_F1_TAU = 0.05
REPORT_SCHEMA_VERSION = 1


def topk_accuracy(scores: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Percent of trials whose true label ranks in the k best scores.

    Equal scores rank by ascending class index, so ties favor low classes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise ValueError("scores must be a non-empty (trials, classes) matrix")
    if k > scores.shape[1]:
        raise ValueError("k cannot exceed the number of classes")
    order = np.argsort(-scores, axis=1, kind="stable")
    hits = (order[:, :k] == labels[:, None]).any(axis=1)
    return float(hits.mean() * 100.0)


def chamfer(a: "PointCloud | np.ndarray", b: "PointCloud | np.ndarray") -> float:
    """Symmetric Chamfer distance (raw; multiply by 100 for reporting)."""
    pa, pb = as_points(a), as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("chamfer distance needs non-empty clouds")
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    return float((d_ab**2).mean() + (d_ba**2).mean())


def f1_score(a: "PointCloud | np.ndarray", b: "PointCloud | np.ndarray", tau: float) -> float:
    """Point-cloud F1 in percent at distance threshold ``tau``.

    Precision: fraction of a-points within tau of some b-point; recall is the
    symmetric fraction; F1 = 2PR/(P+R) * 100 (0 when P + R = 0).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    pa, pb = as_points(a), as_points(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("f1 score needs non-empty clouds")
    d_ab, _ = cKDTree(pb).query(pa, k=1)
    d_ba, _ = cKDTree(pa).query(pb, k=1)
    precision = float((d_ab <= tau).mean())
    recall = float((d_ba <= tau).mean())
    if precision + recall == 0:
        return 0.0
    return 200.0 * precision * recall / (precision + recall)


def _restricted_rank(scores: np.ndarray, candidates: np.ndarray, gt_label: int, k: int) -> bool:
    """Rank the truth among candidate classes; ties favor low class index."""
    sub = scores[candidates]
    order = np.argsort(-sub, kind="stable")
    top = candidates[order[:k]]
    return bool(np.isin(gt_label, top))


def draw_distractors(
    rng: np.random.Generator, gt_label: int, n_way: int, class_pool: np.ndarray
) -> np.ndarray:
    """Candidate set: the truth plus n_way - 1 uniform distractors without
    replacement, drawn from the pool excluding the truth."""
    pool = np.asarray([c for c in class_pool if c != gt_label])
    if len(pool) < n_way - 1:
        raise ValueError(f"class pool too small for {n_way}-way evaluation")
    distractors = rng.choice(pool, size=n_way - 1, replace=False)
    return np.concatenate([[gt_label], distractors])


def nway_topk(
    generated: "PointCloud | np.ndarray",
    gt_label: int,
    classifier,
    n_way: int,
    k: int,
    seed: int,
    class_pool,
) -> bool:
    """Classify a generated cloud among n_way candidate classes; hit iff the
    truth ranks within the top k."""
    rng = np.random.default_rng(seed)
    candidates = draw_distractors(rng, gt_label, n_way, np.asarray(class_pool))
    scores = np.asarray(classifier(as_points(generated)), dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("classifier produced non-finite scores")
    return _restricted_rank(scores, candidates, gt_label, k)


@dataclass
class FiveSampleResult:
    average: dict[str, float]
    best: dict[str, float]
    best_index: int


def protocol_5sample(
    samples: list,
    gt_label: int,
    classifier,
    class_pool,
    seed: int,
    configs: tuple[tuple[int, int], ...] = ((2, 1), (10, 3)),
    gt_cloud: "PointCloud | np.ndarray | None" = None,
    tau: float = DEFAULT_F1_TAU,
) -> FiveSampleResult:
    """Five-inference protocol: average hit rate over all samples plus the
    metrics of the sample the classifier scores highest on the true class.

    The distractor draw is seeded per (stimulus seed, protocol config) and
    shared across the five samples so the columns are comparable.
    """
    if len(samples) != 5:
        raise ValueError(f"protocol requires exactly 5 samples, got {len(samples)}")
    pool = np.asarray(class_pool)
    all_scores = [np.asarray(classifier(as_points(s)), dtype=np.float64) for s in samples]
    best_index = int(np.argmax([s[gt_label] for s in all_scores]))

    average: dict[str, float] = {}
    best: dict[str, float] = {}
    for ci, (n_way, k) in enumerate(configs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, ci]))
        candidates = draw_distractors(rng, gt_label, n_way, pool)
        hits = [_restricted_rank(s, candidates, gt_label, k) for s in all_scores]
        key = f"{n_way}way_top{k}"
        average[key] = 100.0 * float(np.mean(hits))
        best[key] = 100.0 * float(hits[best_index])
    if gt_cloud is not None:
        best["chamfer_x100"] = 100.0 * chamfer(samples[best_index], gt_cloud)
        best["f1"] = f1_score(samples[best_index], gt_cloud, tau)
    return FiveSampleResult(average=average, best=best, best_index=best_index)


@dataclass
class EvalReport:
    """Serializable metric report with provenance metadata."""

    metadata: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    schema_version: int = REPORT_SCHEMA_VERSION

    def validate(self) -> None:
        for key, value in self.metrics.items():
            if not np.isfinite(value):
                raise ValueError(f"metric {key!r} is not finite")
            if "top" in key and not 0 <= value <= 100:
                raise ValueError(f"accuracy {key!r}={value} outside [0, 100]")
            if key.startswith("f1") and not 0 <= value <= 100:
                raise ValueError(f"f1 {key!r}={value} outside [0, 100]")
            if "chamfer" in key and value < 0:
                raise ValueError(f"chamfer {key!r}={value} negative")

    def to_json(self, path: str | Path) -> None:
        self.validate()
        doc = {
            "schema_version": self.schema_version,
            "metadata": self.metadata,
            "metrics": {k: float(v) for k, v in sorted(self.metrics.items())},
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path: str | Path) -> "EvalReport":
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            metadata=doc["metadata"],
            metrics=doc["metrics"],
            schema_version=doc["schema_version"],
        )


def chance_calibration(
    n_trials: int, n_classes: int, ks: tuple[int, ...], seed: int
) -> dict[int, float]:
    """Top-k accuracy of uniformly random scores with uniformly random labels
    (the chance-level self-test)."""
    rng = np.random.default_rng(seed)
    scores = rng.random((n_trials, n_classes))
    labels = rng.integers(0, n_classes, size=n_trials)
    return {k: topk_accuracy(scores, labels, k) for k in ks}
