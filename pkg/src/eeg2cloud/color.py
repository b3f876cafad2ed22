"""Dominant-color labeling and the single-step coloring model.

Color generation is simplified to predicting one of six palette classes for
the whole object: the ground-truth label is the plurality palette class of
the true colored cloud (nearest-centroid vote), and the coloring model maps
(generated cloud, appearance feature) to a 6-way class whose palette RGB is
painted onto every point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .pointcloud import PointCloud

DEFAULT_PALETTE_ANCHORS: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.15, 0.15),
    "green": (0.15, 0.65, 0.20),
    "blue": (0.15, 0.25, 0.80),
    "yellow": (0.90, 0.85, 0.20),
    "gray": (0.82, 0.82, 0.82),
    "black": (0.10, 0.10, 0.10),
}


@dataclass(frozen=True)
class ColorPalette:
    """Six named RGB anchors; class index = position in ``names``."""

    names: tuple[str, ...] = tuple(DEFAULT_PALETTE_ANCHORS)
    anchors: np.ndarray = field(
        default_factory=lambda: np.array(list(DEFAULT_PALETTE_ANCHORS.values()))
    )

    def __post_init__(self) -> None:
        anchors = np.asarray(self.anchors, dtype=np.float64)
        object.__setattr__(self, "anchors", anchors)
        if anchors.shape != (6, 3):
            raise ValueError("palette must define exactly 6 RGB anchors")
        if anchors.min() < 0 or anchors.max() > 1:
            raise ValueError("palette anchors must lie in [0, 1]^3")
        if len(self.names) != 6:
            raise ValueError("palette must name exactly 6 classes")
        d = np.linalg.norm(anchors[:, None] - anchors[None, :], axis=-1)
        if np.any(d[~np.eye(6, dtype=bool)] < 1e-6):
            raise ValueError("palette anchors must be pairwise distinct")

    def to_json(self, path: str | Path) -> None:
        data = {name: [float(v) for v in rgb] for name, rgb in zip(self.names, self.anchors)}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, path: str | Path) -> "ColorPalette":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        names = tuple(data.keys())
        anchors = np.array([data[n] for n in names], dtype=np.float64)
        return cls(names=names, anchors=anchors)


def nearest_palette_class(colors: np.ndarray, palette: ColorPalette) -> np.ndarray:
    """Per-point nearest anchor (Euclidean in RGB)."""
    d = np.linalg.norm(colors[:, None, :] - palette.anchors[None, :, :], axis=-1)
    return d.argmin(axis=1)  # argmin breaks ties toward the lowest class index


def dominant_color(cloud: PointCloud, palette: ColorPalette) -> int:
    """Plurality palette class of a colored cloud; ties break to the lowest
    class index."""
    if len(cloud) == 0:
        raise ValueError("cannot vote on an empty cloud")
    if cloud.colors is None:
        raise ValueError("cloud has no colors to vote on")
    assigned = nearest_palette_class(cloud.colors, palette)
    counts = np.bincount(assigned, minlength=6)
    return int(counts.argmax())


class ColorModel(nn.Module):
    """Single-step coloring model: per-point features are max-pooled into a
    global shape descriptor, combined with the projected appearance feature,
    and classified into a 6-way palette class. Permutation-invariant."""

    def __init__(self, cond_dim: int = 1024, hidden: int = 128):
        super().__init__()
        self.point_mlp = nn.Sequential(
            nn.Linear(3, hidden), nn.SiLU(), nn.Linear(hidden, hidden)
        )
        self.cond_proj = nn.Linear(cond_dim, hidden)
        self.head = nn.Sequential(
            nn.Linear(2 * hidden, hidden), nn.SiLU(), nn.Linear(hidden, 6)
        )

    def forward(self, points: torch.Tensor, f_a: torch.Tensor) -> torch.Tensor:
        squeeze = points.ndim == 2
        if squeeze:
            points = points.unsqueeze(0)
        if f_a.ndim == 1:
            f_a = f_a.unsqueeze(0)
        pooled = self.point_mlp(points).max(dim=1).values
        logits = self.head(torch.cat([pooled, self.cond_proj(f_a)], dim=-1))
        return logits.squeeze(0) if squeeze else logits


def colorize(
    cloud: PointCloud, f_a: torch.Tensor, model: ColorModel, palette: ColorPalette
) -> PointCloud:
    """Predict the object's palette class and paint every point with it."""
    model.eval()
    with torch.no_grad():
        pts = torch.as_tensor(cloud.points, dtype=next(model.parameters()).dtype)
        logits = model(pts, f_a)
    cls = int(logits.argmax())
    colors = np.tile(palette.anchors[cls], (len(cloud), 1))
    return PointCloud(points=cloud.points.copy(), colors=colors, dominant_color=cls)


def color_loss(logits: torch.Tensor, label: "int | torch.Tensor") -> torch.Tensor:
    """6-way cross-entropy on the dominant-color label."""
    if not torch.is_tensor(label):
        label = torch.tensor(label)
    if logits.ndim == 1:
        logits = logits.unsqueeze(0)
    label = label.reshape(-1)
    if label.min() < 0 or label.max() >= 6:
        raise ValueError("color label out of range [0, 6)")
    return F.cross_entropy(logits, label)
