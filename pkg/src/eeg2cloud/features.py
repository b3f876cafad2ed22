"""Decoupled geometry/appearance features, visual targets, and training losses.

The pooled encoder output is projected by two independent MLP heads into a
geometry feature and an appearance feature (1024-d each). Both are aligned to
the same visual target vector with a weighted sum of a symmetric InfoNCE term
and an MSE term, and auxiliary linear classifiers supply a categorical loss.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

FEATURE_DIM = 1024
N_OBJECT_CLASSES = 72
N_COLOR_CLASSES = 6


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.01
    gamma: float = 0.1
    temperature: float = 0.07  # initial value of the learnable temperature

    def __post_init__(self) -> None:
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


class DecoupleHeads(nn.Module):
    """Two independent 2-layer MLPs projecting the pooled embedding to
    geometry and appearance features. The heads share no parameters."""

    def __init__(self, d_model: int, feature_dim: int = FEATURE_DIM, hidden: int = 1024):
        super().__init__()
        self.geometry = nn.Sequential(
            nn.Linear(d_model, hidden), nn.GELU(), nn.Linear(hidden, feature_dim)
        )
        self.appearance = nn.Sequential(
            nn.Linear(d_model, hidden), nn.GELU(), nn.Linear(hidden, feature_dim)
        )

    def forward(self, pooled: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.geometry(pooled), self.appearance(pooled)


class ClassHeads(nn.Module):
    """Linear classifiers: 72-way shape from geometry, 6-way color from
    appearance."""

    def __init__(self, feature_dim: int = FEATURE_DIM):
        super().__init__()
        self.shape_head = nn.Linear(feature_dim, N_OBJECT_CLASSES)
        self.color_head = nn.Linear(feature_dim, N_COLOR_CLASSES)

    def forward(
        self, f_g: torch.Tensor, f_a: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        return self.shape_head(f_g), self.color_head(f_a)


# ---------------------------------------------------------------------------
# Visual feature providers
# ---------------------------------------------------------------------------


def select_frame_indices(n_total: int, n: int = 4) -> list[int]:
    """Uniform-inclusive frame selection: evenly spaced with step
    n_total/(n-1), clipped so the last frame stays in range."""
    if n_total < 1:
        raise ValueError("video must have at least one frame")
    if n == 1:
        return [0]
    step = n_total / (n - 1)
    return [min(int(round(i * step)), n_total - 1) for i in range(n)]


def visual_feature(frame_features: np.ndarray) -> np.ndarray:
    """Mean of per-frame feature vectors, unit-normalized."""
    feats = np.asarray(frame_features, dtype=np.float64)
    if feats.ndim != 2:
        raise ValueError("expected (n_frames, dim) frame features")
    mean = feats.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-8:
        raise ValueError("degenerate visual feature: frame features cancel to zero")
    return mean / norm


class PrecomputedVisualFeatures:
    """Reads per-stimulus frame features from a JSON index + float32 blob.

    The index maps stimulus_id -> {"offset": o, "frames": n}; the blob stores
    n * dim little-endian float32 per stimulus at byte offset o.
    """

    def __init__(self, index_path: str | Path, blob_path: str | Path | None = None):
        index_path = Path(index_path)
        with open(index_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        self.dim = int(meta["dim"])
        self.index = meta["stimuli"]
        blob_path = Path(blob_path) if blob_path else index_path.with_suffix(".bin")
        self._blob = blob_path.read_bytes()

    def frame_features(self, stimulus_id: str) -> np.ndarray:
        try:
            entry = self.index[stimulus_id]
        except KeyError:
            raise KeyError(f"no visual features for stimulus {stimulus_id!r}") from None
        n, off = int(entry["frames"]), int(entry["offset"])
        count = n * self.dim
        data = np.frombuffer(self._blob, dtype="<f4", count=count, offset=off)
        return data.reshape(n, self.dim).astype(np.float64)

    def __call__(self, stimulus_id: str) -> np.ndarray:
        return visual_feature(self.frame_features(stimulus_id))


def write_visual_features(
    features: dict[str, np.ndarray], index_path: str | Path, dim: int = FEATURE_DIM
) -> None:
    """Write the precomputed visual-feature pair (JSON index + .bin blob)."""
    index_path = Path(index_path)
    blob_path = index_path.with_suffix(".bin")
    index: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for sid in sorted(features):
        arr = np.ascontiguousarray(features[sid], dtype="<f4")
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ValueError(f"features for {sid!r} must be (frames, {dim})")
        raw = arr.tobytes()
        index[sid] = {"offset": offset, "frames": arr.shape[0]}
        chunks.append(raw)
        offset += len(raw)
    blob_path.write_bytes(b"".join(chunks))
    with open(index_path, "w", encoding="utf-8") as fh:
        json.dump({"dim": dim, "stimuli": index}, fh, sort_keys=True, separators=(",", ":"))


class StubVisualFeatures:
    """Deterministic stand-in for a pretrained vision encoder.

    Each (object_class, color_class, frame) triple seeds a latent vector that
    is pushed through one fixed random orthogonal projection, so features are
    reproducible, unit-norm, and linearly separable by class.
    """

    def __init__(self, seed: int = 0, dim: int = FEATURE_DIM, n_frames: int = 4):
        self.dim = dim
        self.n_frames = n_frames
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        self._proj = q

    def _seed_vector(self, tag: int, value: int) -> np.ndarray:
        rng = np.random.default_rng(np.random.SeedSequence([tag, value]))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)

    def frame_features(self, object_class: int, color_class: int) -> np.ndarray:
        base = self._seed_vector(1, object_class) + 0.6 * self._seed_vector(2, color_class)
        frames = []
        for i in range(self.n_frames):
            v = base + 0.15 * self._seed_vector(3, i)
            frames.append(self._proj @ (v / np.linalg.norm(v)))
        return np.stack(frames)

    def __call__(self, object_class: int, color_class: int) -> np.ndarray:
        return visual_feature(self.frame_features(object_class, color_class))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def contrastive_loss(
    f: torch.Tensor, f_v: torch.Tensor, temperature: "torch.Tensor | float"
) -> torch.Tensor:
    """Symmetric InfoNCE over the batch cosine-similarity matrix.

    Both directions (feature->target and target->feature) are averaged; the
    i-th row's positive is the i-th target. Requires batch size >= 2.
    """
    if f.shape[0] < 2:
        raise ValueError("contrastive term needs batch size >= 2")
    fn = F.normalize(f, dim=-1)
    vn = F.normalize(f_v, dim=-1)
    logits = fn @ vn.T / temperature
    labels = torch.arange(f.shape[0], device=f.device)
    return 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels))


def mse_loss_normalized(f: torch.Tensor, f_v: torch.Tensor) -> torch.Tensor:
    """MSE between unit-normalized vectors (same geometry as the cosine
    logits of the contrastive term)."""
    return F.mse_loss(F.normalize(f, dim=-1), F.normalize(f_v, dim=-1))


def align_loss(
    f: torch.Tensor,
    f_v: torch.Tensor,
    alpha: float,
    temperature: "torch.Tensor | float" = 0.07,
) -> torch.Tensor:
    """Weighted combination: alpha * InfoNCE + (1 - alpha) * MSE."""
    if f.ndim != 2 or f.shape != f_v.shape:
        raise ValueError("features and targets must be matching (batch, dim)")
    if alpha > 0 and f.shape[0] < 2:
        raise ValueError("alpha > 0 requires batch size >= 2 for the contrastive term")
    loss = (1.0 - alpha) * mse_loss_normalized(f, f_v)
    if alpha > 0:
        loss = loss + alpha * contrastive_loss(f, f_v, temperature)
    return loss


def categorical_loss(
    f_g: torch.Tensor,
    f_a: torch.Tensor,
    object_labels: torch.Tensor,
    color_labels: torch.Tensor,
    heads: ClassHeads,
) -> torch.Tensor:
    """Sum of shape (72-way) and color (6-way) cross-entropies."""
    if object_labels.min() < 0 or object_labels.max() >= N_OBJECT_CLASSES:
        raise ValueError("object labels out of range [0, 72)")
    if color_labels.min() < 0 or color_labels.max() >= N_COLOR_CLASSES:
        raise ValueError("color labels out of range [0, 6)")
    shape_logits, color_logits = heads(f_g, f_a)
    return F.cross_entropy(shape_logits, object_labels) + F.cross_entropy(
        color_logits, color_labels
    )


class AlignmentObjective(nn.Module):
    """Total training objective with a learnable contrastive temperature.

    total = align(f_g, f_v) + align(f_a, f_v) + gamma * categorical
    """

    def __init__(self, cfg: LossConfig):
        super().__init__()
        self.alpha = cfg.alpha
        self.gamma = cfg.gamma
        self.log_inv_temp = nn.Parameter(torch.tensor(math.log(1.0 / cfg.temperature)))

    @property
    def temperature(self) -> torch.Tensor:
        # clamp keeps logits bounded as in standard contrastive training
        return torch.exp(-self.log_inv_temp.clamp(math.log(1e-2), math.log(1e2)))

    def forward(
        self,
        f_g: torch.Tensor,
        f_a: torch.Tensor,
        f_v: torch.Tensor,
        object_labels: torch.Tensor,
        color_labels: torch.Tensor,
        heads: ClassHeads,
    ) -> tuple[torch.Tensor, dict[str, float]]:
        temp = self.temperature
        l_g = align_loss(f_g, f_v, self.alpha, temp)
        l_a = align_loss(f_a, f_v, self.alpha, temp)
        total = l_g + l_a
        l_c_val = 0.0
        if self.gamma != 0:  # gamma == 0 must not route gradients into the heads
            l_c = categorical_loss(f_g, f_a, object_labels, color_labels, heads)
            total = total + self.gamma * l_c
            l_c_val = float(l_c.detach())
        parts = {
            "align_geometry": float(l_g.detach()),
            "align_appearance": float(l_a.detach()),
            "categorical": l_c_val,
            "total": float(total.detach()),
        }
        return total, parts
