"""Synthetic-data generator tests: shapes, EEG statistics, dataset layout."""

import json

import numpy as np
import pytest

from eeg2cloud.metrics import chamfer
from eeg2cloud.synth import (
    SHAPE_FAMILIES,
    SynthConfig,
    class_waveforms,
    gen_cloud,
    gen_dataset,
    gen_eeg,
    gen_raw_recording,
    mixing_matrix,
    pink_noise,
)


class TestGenCloud:
    def test_sphere_radii_within_deformation_bound(self):
        # a multiplicative ripple of amplitude a keeps pre-normalization radii
        # in [1-a, 1+a] and shifts the centroid by at most a, so normalized
        # radii stay above (1-2a)/(1+2a)
        a = 0.05
        cloud = gen_cloud(0, deform_seed=1, n_points=512, deform_amplitude=a)
        radii = np.linalg.norm(cloud.points, axis=1)
        delta = 4 * a / (1.0 + 2 * a)
        assert radii.max() == pytest.approx(1.0)
        assert radii.min() >= 1.0 - delta - 1e-9

    def test_fixed_seed_bit_identical(self):
        a = gen_cloud(2, deform_seed=7, n_points=256)
        b = gen_cloud(2, deform_seed=7, n_points=256)
        assert np.array_equal(a.points, b.points)

    def test_inter_class_exceeds_intra_class_chamfer(self):
        sphere1 = gen_cloud(0, 1, 512)
        sphere2 = gen_cloud(0, 2, 512)
        box = gen_cloud(1, 3, 512)
        assert chamfer(sphere1, box) > chamfer(sphere1, sphere2)

    def test_all_families_generate_normalized(self):
        for cls in range(len(SHAPE_FAMILIES)):
            cloud = gen_cloud(cls, deform_seed=cls, n_points=256)
            radii = np.linalg.norm(cloud.points, axis=1)
            assert radii.max() == pytest.approx(1.0)
            assert np.allclose(cloud.points.mean(axis=0), 0.0, atol=1e-9)

    def test_painted_color_close_to_anchor(self):
        cloud = gen_cloud(0, 1, 256, color=(0.85, 0.15, 0.15), color_jitter=0.02)
        assert cloud.colors is not None
        assert np.abs(cloud.colors - [0.85, 0.15, 0.15]).mean() < 0.05


class TestGenEeg:
    def test_shapes_and_rate(self):
        s, d = gen_eeg(0, 0, 4.0, seed=0)
        assert s.shape == (64, 250) and d.shape == (64, 1500)

    def test_snr_zero_has_no_signal_structure(self):
        # pure-noise trials: no amplitude difference between informative and
        # noise channels, and trials from different classes are uncorrelated
        s0, _ = gen_eeg(0, 0, 0.0, seed=1)
        s1, _ = gen_eeg(5, 3, 0.0, seed=1)
        assert np.array_equal(s0, s1)  # class does not enter at snr = 0

    def test_high_snr_is_clean_template(self):
        s, _ = gen_eeg(2, 1, 1e9, seed=2)
        s2, _ = gen_eeg(2, 1, 1e9, seed=3)
        # informative channels nearly identical across trials (noise ~ 1e-9)
        assert np.allclose(s[:8], s2[:8], atol=1e-6)
        # non-informative channels carry only the vanishing noise
        assert np.abs(s[8:]).max() < 1e-6

    def test_same_class_trials_correlated_at_snr4(self):
        a, _ = gen_eeg(3, 2, 4.0, seed=10)
        b, _ = gen_eeg(3, 2, 4.0, seed=11)
        corr = np.corrcoef(a.ravel(), b.ravel())[0, 1]
        assert corr > 0.5

    def test_different_seeds_different_noise(self):
        a, _ = gen_eeg(3, 2, 4.0, seed=10)
        b, _ = gen_eeg(3, 2, 4.0, seed=11)
        assert not np.allclose(a, b)

    def test_negative_snr_rejected(self):
        with pytest.raises(ValueError):
            gen_eeg(0, 0, -1.0, seed=0)


def test_classifier_accuracy_monotone_in_snr():
    # mutual-information proxy: a template-matching classifier gets monotone
    # nondecreasing accuracy as snr grows, averaged over 3 seeds
    t = np.arange(1500) / 250.0
    mix = mixing_matrix()
    templates = {c: mix @ class_waveforms(c, t) for c in range(8)}

    def classify(trial_dynamic):
        obs = trial_dynamic[:8]
        scores = [
            float(np.sum(obs * tpl)) / (np.linalg.norm(tpl) + 1e-12)
            for tpl in templates.values()
        ]
        return int(np.argmax(scores))

    mean_acc = []
    for snr in (0.0, 1.0, 4.0, 16.0):
        accs = []
        for seed in range(3):
            hits = []
            for c in range(8):
                for j in range(6):
                    _, d = gen_eeg(c, 0, snr, seed=9000 + 100 * seed + 8 * c + j)
                    hits.append(classify(d) == c)
            accs.append(np.mean(hits))
        mean_acc.append(float(np.mean(accs)))
    assert all(b >= a - 1e-9 for a, b in zip(mean_acc, mean_acc[1:])), mean_acc
    assert mean_acc[0] < 0.4 and mean_acc[-1] > 0.9  # ends anchored


def test_pink_noise_spectrum_slope():
    rng = np.random.default_rng(0)
    x = pink_noise(rng, 4, 4096)
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2
    freqs = np.fft.rfftfreq(4096)
    lo = spec[:, (freqs > 0.01) & (freqs < 0.05)].mean()
    hi = spec[:, (freqs > 0.2) & (freqs < 0.4)].mean()
    assert lo > 4 * hi  # power falls with frequency
    assert np.allclose((x**2).mean(axis=-1), 1.0, atol=1e-9)


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    cfg = SynthConfig(
        n_classes=3,
        instances_per_class=3,
        train_instances=2,
        points_per_cloud=128,
        snr=4.0,
        seed=11,
    )
    manifest = gen_dataset(cfg, out)
    return cfg, out, manifest


class TestGenDataset:
    def test_split_counts(self, small_dataset):
        cfg, out, _ = small_dataset
        with open(out / "labels.json") as fh:
            labels = json.load(fh)
        train = [s for s, v in labels.items() if v["split"] == "train"]
        test = [s for s, v in labels.items() if v["split"] == "test"]
        assert len(train) == 3 * 2 and len(test) == 3 * 1

    def test_default_split_ratio_is_8_2(self):
        cfg = SynthConfig()
        assert cfg.train_instances == 8 and cfg.instances_per_class == 10
        assert cfg.train_repetitions == 2 and cfg.test_repetitions == 4

    def test_repetition_counts(self, small_dataset):
        cfg, out, _ = small_dataset
        from eeg2cloud.epoch_io import load_epochs

        train = load_epochs(out / "train_static.epochs")
        test = load_epochs(out / "test_static.epochs")
        assert train.n_trials == 3 * 2 * cfg.train_repetitions
        assert test.n_trials == 3 * 1 * cfg.test_repetitions
        reps = {l.repetition for l in test.labels}
        assert reps == set(range(cfg.test_repetitions))

    def test_manifest_stable_across_regeneration(self, small_dataset, tmp_path):
        cfg, out, manifest = small_dataset
        manifest2 = gen_dataset(cfg, tmp_path / "again")
        assert manifest["files"] == manifest2["files"]

    def test_refuses_overwrite_without_force(self, small_dataset):
        cfg, out, _ = small_dataset
        with pytest.raises(FileExistsError):
            gen_dataset(cfg, out)
        gen_dataset(cfg, out, force=True)  # allowed explicitly

    def test_visual_features_readable(self, small_dataset):
        _, out, _ = small_dataset
        from eeg2cloud.features import PrecomputedVisualFeatures

        reader = PrecomputedVisualFeatures(out / "visual_features.json")
        vec = reader("c00_i00")
        assert vec.shape == (1024,)
        assert np.linalg.norm(vec) == pytest.approx(1.0)


def test_raw_recording_layout():
    rec = gen_raw_recording([("s0", 0, 1), ("s1", 1, 0)], repetitions=2, snr=4.0, seed=0)
    kinds = [e.kind for e in rec.events]
    assert kinds == ["static", "dynamic"] * 4
    assert rec.data.shape[0] == 64
    last = rec.events[-1]
    assert last.sample + 6000 <= rec.data.shape[1]
    assert rec.stimulus_labels == {"s0": (0, 1), "s1": (1, 0)}
