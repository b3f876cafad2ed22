"""Point cloud container, normalization, and ASCII PLY I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class PointCloud:
    """N x 3 coordinates with optional per-point RGB in [0, 1]."""

    points: np.ndarray
    colors: np.ndarray | None = None
    dominant_color: int | None = None

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError("points must be N x 3")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64)
            if self.colors.shape != self.points.shape:
                raise ValueError("colors must match points shape")
            if self.colors.min() < 0 or self.colors.max() > 1:
                raise ValueError("colors must lie in [0, 1]")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class CloudTransform:
    """Centering + scaling applied by ``normalize_cloud``; invertible."""

    centroid: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.centroid) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.centroid


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, CloudTransform]:
    """Center at the centroid and scale so the max radius is 1.

    A degenerate cloud (all points coincident) is centered with scale 1.
    """
    if len(cloud) < 1:
        raise ValueError("cannot normalize an empty cloud")
    centroid = cloud.points.mean(axis=0)
    radius = float(np.linalg.norm(cloud.points - centroid, axis=1).max())
    scale = radius if radius > 1e-12 else 1.0
    tf = CloudTransform(centroid=centroid, scale=scale)
    return (
        PointCloud(
            points=tf.apply(cloud.points),
            colors=None if cloud.colors is None else cloud.colors.copy(),
            dominant_color=cloud.dominant_color,
        ),
        tf,
    )


def as_points(cloud: "PointCloud | np.ndarray") -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected an N x 3 point array")
    return pts


def save_ply(cloud: PointCloud, path: str | Path) -> None:
    """Write an ASCII PLY with float x,y,z and optional uchar red,green,blue."""
    lines = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}"]
    lines += ["property float x", "property float y", "property float z"]
    has_color = cloud.colors is not None
    if has_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    if has_color:
        rgb = np.clip(np.round(cloud.colors * 255), 0, 255).astype(np.uint8)
        for p, c in zip(cloud.points, rgb):
            lines.append(
                f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r} {c[0]} {c[1]} {c[2]}"
            )
    else:
        for p in cloud.points:
            lines.append(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_ply(path: str | Path) -> PointCloud:
    """Read the ASCII PLY subset written by ``save_ply``."""
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n_vertex = None
    props: list[str] = []
    body_at = None
    for i, line in enumerate(text[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ValueError(f"{path}: only ascii PLY is supported")
        elif tok[0] == "element" and tok[1] == "vertex":
            n_vertex = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[2])
        elif tok[0] == "end_header":
            body_at = i + 1
            break
    if n_vertex is None or body_at is None:
        raise ValueError(f"{path}: malformed PLY header")
    if props[:3] != ["x", "y", "z"]:
        raise ValueError(f"{path}: expected x,y,z as the first vertex properties")
    has_color = props[3:6] == ["red", "green", "blue"]
    rows = [text[body_at + j].split() for j in range(n_vertex)]
    pts = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows])
    colors = None
    if has_color:
        colors = np.array([[int(r[3]), int(r[4]), int(r[5])] for r in rows]) / 255.0
    return PointCloud(points=pts, colors=colors)
