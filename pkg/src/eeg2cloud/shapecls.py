"""Pluggable point-cloud classifier used by the reconstruction benchmark.

The benchmark only requires a deterministic callable PointCloud -> class
scores. ``PointNetClassifier`` is a small permutation-invariant network that
can be trained on synthetic shapes; any externally trained model satisfying
the same contract can be plugged in instead.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


class PointNetClassifier(nn.Module):
    """Per-point MLP + global max pool + fully connected head."""

    def __init__(self, n_classes: int = 72, widths: tuple[int, int, int] = (64, 128, 256)):
        super().__init__()
        w0, w1, w2 = widths
        self.n_classes = n_classes
        self.point_mlp = nn.Sequential(
            nn.Linear(3, w0), nn.SiLU(), nn.Linear(w0, w1), nn.SiLU(), nn.Linear(w1, w2)
        )
        self.head = nn.Sequential(nn.Linear(w2, 128), nn.SiLU(), nn.Linear(128, n_classes))

    def forward(self, points: torch.Tensor) -> torch.Tensor:
        squeeze = points.ndim == 2
        if squeeze:
            points = points.unsqueeze(0)
        pooled = self.point_mlp(points).max(dim=1).values
        logits = self.head(pooled)
        return logits.squeeze(0) if squeeze else logits

    def __call__(self, points) -> "torch.Tensor | np.ndarray":
        if isinstance(points, np.ndarray):
            self.eval()
            with torch.no_grad():
                dtype = next(self.parameters()).dtype
                logits = super().__call__(torch.as_tensor(points, dtype=dtype))
            return logits.numpy().astype(np.float64)
        return super().__call__(points)


def train_shape_classifier(
    clouds: list[np.ndarray],
    labels: list[int],
    n_classes: int = 72,
    steps: int = 600,
    batch_size: int = 16,
    n_points: int = 256,
    lr: float = 1e-3,
    seed: int = 0,
) -> PointNetClassifier:
    """Fit the classifier on (cloud, label) pairs; deterministic per seed.

    Each step subsamples ``n_points`` per cloud for speed and mild
    augmentation.
    """
    torch.manual_seed(seed)
    model = PointNetClassifier(n_classes=n_classes)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    tensors = [torch.as_tensor(c, dtype=torch.float32) for c in clouds]
    label_arr = torch.as_tensor(labels, dtype=torch.long)
    for _ in range(steps):
        idx = rng.integers(0, len(tensors), size=min(batch_size, len(tensors)))
        batch = torch.stack(
            [
                t[rng.integers(0, t.shape[0], size=min(n_points, t.shape[0]))]
                for t in (tensors[i] for i in idx)
            ]
        )
        logits = model(batch)
        loss = F.cross_entropy(logits, label_arr[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    model.eval()
    return model
