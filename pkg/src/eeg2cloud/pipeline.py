"""Assembled trainable model: fusion encoder + decoupled heads + classifiers.

This is the unit that gets trained, checkpointed, and evaluated for the
classification benchmark and the ablation analyses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .encoder import FusionEncoder
from .features import AlignmentObjective, ClassHeads, DecoupleHeads, LossConfig
from .signals import EpochSet


@dataclass(frozen=True)
class EncoderArch:
    n_channels: int = 64
    d_model: int = 256
    n_heads: int = 4
    n_layers: int = 4
    patch: int = 25
    agg_heads: int = 1
    feature_dim: int = 1024
    decouple_hidden: int = 1024

    def to_dict(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "patch": self.patch,
            "agg_heads": self.agg_heads,
            "feature_dim": self.feature_dim,
            "decouple_hidden": self.decouple_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderArch":
        return cls(**d)


class NeuralDecodingModel(nn.Module):
    """Encoder stack producing decoupled features and class scores."""

    def __init__(self, arch: EncoderArch, loss_cfg: LossConfig):
        super().__init__()
        self.arch = arch
        self.encoder = FusionEncoder(
            n_channels=arch.n_channels,
            d_model=arch.d_model,
            n_heads=arch.n_heads,
            n_layers=arch.n_layers,
            patch=arch.patch,
            agg_heads=arch.agg_heads,
        )
        self.decouple = DecoupleHeads(
            arch.d_model, feature_dim=arch.feature_dim, hidden=arch.decouple_hidden
        )
        self.class_heads = ClassHeads(feature_dim=arch.feature_dim)
        self.objective = AlignmentObjective(loss_cfg)

    def features(
        self, e_s: torch.Tensor, e_d: torch.Tensor, mode: str = "fused"
    ) -> tuple[torch.Tensor, torch.Tensor]:
        pooled = self.encoder(e_s, e_d, mode=mode)
        return self.decouple(pooled)

    def class_scores(
        self, e_s: torch.Tensor, e_d: torch.Tensor, mode: str = "fused"
    ) -> tuple[torch.Tensor, torch.Tensor]:
        f_g, f_a = self.features(e_s, e_d, mode=mode)
        return self.class_heads(f_g, f_a)

    def training_loss(
        self,
        e_s: torch.Tensor,
        e_d: torch.Tensor,
        f_v: torch.Tensor,
        object_labels: torch.Tensor,
        color_labels: torch.Tensor,
        mode: str = "fused",
    ) -> tuple[torch.Tensor, dict[str, float]]:
        f_g, f_a = self.features(e_s, e_d, mode=mode)
        return self.objective(f_g, f_a, f_v, object_labels, color_labels, self.class_heads)


def epochs_to_tensor(x: EpochSet, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.ascontiguousarray(x.epochs), dtype=dtype)


@torch.no_grad()
def batched_class_scores(
    model: NeuralDecodingModel,
    e_s: torch.Tensor,
    e_d: torch.Tensor,
    mode: str = "fused",
    batch_size: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """Object and color score matrices over a paired trial set."""
    model.eval()
    obj, col = [], []
    for i in range(0, e_s.shape[0], batch_size):
        o, c = model.class_scores(e_s[i : i + batch_size], e_d[i : i + batch_size], mode=mode)
        obj.append(o.numpy())
        col.append(c.numpy())
    return np.concatenate(obj).astype(np.float64), np.concatenate(col).astype(np.float64)
