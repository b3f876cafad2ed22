"""Channel and brain-region ablation saliency for a trained encoder.

Saliency of a channel (or region) is the drop in classification accuracy
when that channel (or every channel of the region) is zeroed in the test
epochs. Region ablation additionally sweeps the signal condition
(static / dynamic / fused).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .metrics import topk_accuracy
from .montage import validate_region_map
from .pipeline import NeuralDecodingModel, batched_class_scores, epochs_to_tensor
from .signals import EpochSet


@dataclass
class TrainedEncoderBundle:
    """Model plus training provenance; ablation refuses untrained models."""

    model: NeuralDecodingModel
    step: int = 0

    def require_trained(self) -> None:
        if self.step <= 0:
            raise ValueError("ablation requires a trained model (checkpoint step > 0)")


@dataclass
class AblationTestSet:
    static: EpochSet
    dynamic: EpochSet

    def __post_init__(self) -> None:
        if self.static.n_trials != self.dynamic.n_trials:
            raise ValueError("static/dynamic trial counts must match (paired trials)")
        labels_s = [(l.stimulus_id, l.repetition) for l in self.static.labels]
        labels_d = [(l.stimulus_id, l.repetition) for l in self.dynamic.labels]
        if labels_s != labels_d:
            raise ValueError("static/dynamic trials must be aligned by stimulus and repetition")

    @property
    def object_labels(self) -> np.ndarray:
        return np.array([l.object_class for l in self.static.labels])


def _accuracy(
    model: NeuralDecodingModel,
    e_s: torch.Tensor,
    e_d: torch.Tensor,
    labels: np.ndarray,
    mode: str,
    k: int,
) -> float:
    obj_scores, _ = batched_class_scores(model, e_s, e_d, mode=mode)
    return topk_accuracy(obj_scores, labels, k)


def channel_ablation(
    bundle: TrainedEncoderBundle, testset: AblationTestSet, k: int = 1
) -> list[dict]:
    """Per-channel saliency: accuracy drop after zeroing each channel.

    Returns one record per channel, ordered by electrode name; each record
    carries the channel index, electrode name, baseline/ablated accuracy, and
    the saliency (baseline - ablated).
    """
    bundle.require_trained()
    names = list(testset.static.channel_names)
    labels = testset.object_labels
    e_s = epochs_to_tensor(testset.static)
    e_d = epochs_to_tensor(testset.dynamic)
    baseline = _accuracy(bundle.model, e_s, e_d, labels, "fused", k)
    records = []
    for c, name in enumerate(names):
        s = e_s.clone()
        d = e_d.clone()
        s[:, c, :] = 0.0
        d[:, c, :] = 0.0
        acc = _accuracy(bundle.model, s, d, labels, "fused", k)
        records.append(
            {
                "channel": c,
                "electrode": name,
                "baseline_topk": baseline,
                "ablated_topk": acc,
                "saliency": baseline - acc,
            }
        )
    return sorted(records, key=lambda r: r["electrode"])


def region_ablation(
    bundle: TrainedEncoderBundle,
    testset: AblationTestSet,
    region_map: dict[str, list[str]],
    k: int = 5,
) -> dict[str, dict[str, float]]:
    """Top-k accuracy per (region removed, signal condition) cell."""
    bundle.require_trained()
    names = list(testset.static.channel_names)
    validate_region_map(region_map, names)
    labels = testset.object_labels
    e_s = epochs_to_tensor(testset.static)
    e_d = epochs_to_tensor(testset.dynamic)
    index_of = {n: i for i, n in enumerate(names)}
    out: dict[str, dict[str, float]] = {}
    for region, members in region_map.items():
        s = e_s.clone()
        d = e_d.clone()
        for name in members:
            s[:, index_of[name], :] = 0.0
            d[:, index_of[name], :] = 0.0
        out[region] = {
            mode: _accuracy(bundle.model, s, d, labels, mode, k)
            for mode in ("static", "dynamic", "fused")
        }
    return out
