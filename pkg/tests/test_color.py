"""Palette voting and coloring-model tests."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from eeg2cloud.color import (
    ColorModel,
    ColorPalette,
    color_loss,
    colorize,
    dominant_color,
    nearest_palette_class,
)
from eeg2cloud.pointcloud import PointCloud


def cloud_with_classes(palette, counts):
    """Cloud with `counts[i]` points colored exactly at anchor i."""
    colors = np.concatenate([np.tile(palette.anchors[i], (c, 1)) for i, c in enumerate(counts)])
    pts = np.random.default_rng(0).normal(size=(len(colors), 3))
    return PointCloud(points=pts, colors=colors)


class TestPalette:
    def test_default_palette_valid(self):
        p = ColorPalette()
        assert len(p.names) == 6 and p.anchors.shape == (6, 3)

    def test_duplicate_anchors_rejected(self):
        anchors = np.tile([0.5, 0.5, 0.5], (6, 1))
        with pytest.raises(ValueError, match="distinct"):
            ColorPalette(names=("a", "b", "c", "d", "e", "f"), anchors=anchors)

    def test_json_round_trip(self, tmp_path):
        p = ColorPalette()
        p.to_json(tmp_path / "palette.json")
        back = ColorPalette.from_json(tmp_path / "palette.json")
        assert back.names == p.names
        assert np.allclose(back.anchors, p.anchors)


class TestDominantColor:
    def test_plurality_wins(self):
        p = ColorPalette()
        cloud = cloud_with_classes(p, [5, 3, 2, 0, 0, 0])
        assert dominant_color(cloud, p) == 0

    def test_exact_anchor_cloud(self):
        p = ColorPalette()
        cloud = cloud_with_classes(p, [0, 0, 0, 7, 0, 0])
        assert dominant_color(cloud, p) == 3

    def test_tie_breaks_to_lowest_class(self):
        p = ColorPalette()
        cloud = cloud_with_classes(p, [4, 0, 4, 0, 0, 0])
        assert dominant_color(cloud, p) == 0
        cloud = cloud_with_classes(p, [0, 4, 4, 0, 0, 0])
        assert dominant_color(cloud, p) == 1

    def test_empty_or_colorless_rejected(self):
        p = ColorPalette()
        with pytest.raises(ValueError):
            dominant_color(PointCloud(points=np.zeros((3, 3))), p)

    @given(extra=st.integers(min_value=0, max_value=50))
    @settings(max_examples=20, deadline=None)
    def test_duplicating_winner_never_changes_winner(self, extra):
        p = ColorPalette()
        base = [6, 3, 2, 1, 0, 0]
        winner = int(np.argmax(base))
        base[winner] += extra
        cloud = cloud_with_classes(p, base)
        assert dominant_color(cloud, p) == winner

    def test_jittered_colors_assigned_to_nearest(self):
        p = ColorPalette()
        rng = np.random.default_rng(1)
        colors = np.clip(p.anchors[4] + rng.normal(0, 0.02, size=(40, 3)), 0, 1)
        assert np.all(nearest_palette_class(colors, p) == 4)


class TestColorModel:
    def test_deterministic_class(self):
        torch.manual_seed(0)
        model = ColorModel(cond_dim=8, hidden=16)
        pts = torch.randn(32, 3)
        f_a = torch.randn(8)
        with torch.no_grad():
            a = model(pts, f_a)
            b = model(pts, f_a)
        assert torch.equal(a, b)

    def test_colorize_paints_single_palette_color(self):
        torch.manual_seed(1)
        p = ColorPalette()
        model = ColorModel(cond_dim=8, hidden=16)
        cloud = PointCloud(points=np.random.default_rng(2).normal(size=(64, 3)))
        out = colorize(cloud, torch.randn(8), model, p)
        assert out.colors is not None
        assert len(np.unique(out.colors, axis=0)) == 1
        assert any(np.allclose(out.colors[0], a) for a in p.anchors)

    def test_object_level_permutation_invariance(self):
        torch.manual_seed(2)
        p = ColorPalette()
        model = ColorModel(cond_dim=8, hidden=16)
        pts = np.random.default_rng(3).normal(size=(64, 3))
        f_a = torch.randn(8)
        a = colorize(PointCloud(points=pts), f_a, model, p)
        perm = np.random.default_rng(4).permutation(64)
        b = colorize(PointCloud(points=pts[perm]), f_a, model, p)
        assert a.dominant_color == b.dominant_color

    def test_paint_then_vote_idempotent(self):
        torch.manual_seed(3)
        p = ColorPalette()
        model = ColorModel(cond_dim=8, hidden=16)
        cloud = PointCloud(points=np.random.default_rng(5).normal(size=(32, 3)))
        painted = colorize(cloud, torch.randn(8), model, p)
        assert dominant_color(painted, p) == painted.dominant_color


class TestColorModelTraining:
    def test_color_perfectly_encoded_in_features_learned(self):
        # appearance features deterministically encode the color class, so a
        # short training run must reach >= 95% held-out accuracy
        from eeg2cloud.features import StubVisualFeatures
        from eeg2cloud.synth import gen_cloud

        torch.manual_seed(4)
        stub = StubVisualFeatures(seed=2, dim=64)
        rng = np.random.default_rng(6)
        model = ColorModel(cond_dim=64, hidden=32)
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        features = {c: torch.as_tensor(stub(0, c), dtype=torch.float32) for c in range(6)}
        clouds = [torch.as_tensor(gen_cloud(i % 8, deform_seed=i, n_points=64).points,
                                  dtype=torch.float32) for i in range(24)]
        for step in range(400):
            cols = rng.integers(0, 6, size=8)
            pts = torch.stack([clouds[rng.integers(0, len(clouds))] for _ in cols])
            f_a = torch.stack([features[c] + 0.01 * torch.randn(64) for c in cols])
            loss = color_loss(model(pts, f_a), torch.as_tensor(cols))
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.eval()
        hits = []
        for c in range(6):
            for j in range(8):
                pts = clouds[(c * 8 + j) % len(clouds)]
                with torch.no_grad():
                    pred = int(model(pts, features[c] + 0.01 * torch.randn(64)).argmax())
                hits.append(pred == c)
        assert np.mean(hits) >= 0.95


class TestColorLoss:
    def test_uniform_logits_analytic(self):
        loss = color_loss(torch.zeros(6), 3)
        assert float(loss) == pytest.approx(math.log(6), abs=1e-7)

    def test_confident_correct_approaches_zero(self):
        logits = torch.full((6,), -50.0)
        logits[2] = 50.0
        assert float(color_loss(logits, 2)) < 1e-6

    def test_bad_label_rejected(self):
        with pytest.raises(ValueError):
            color_loss(torch.zeros(6), 6)
        with pytest.raises(ValueError):
            color_loss(torch.zeros(6), -1)
