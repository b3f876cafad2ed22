"""Synthetic paired data: parametric colored point clouds and class-coded EEG.

Shapes are sampled uniformly from parametric surfaces, mildly deformed, and
painted with a palette color. Synthetic EEG mixes class- and color-specific
latent waveforms into a fixed set of informative channels (indices 0-7, the
occipital electrodes of the default montage) on top of 1/f noise, so the
decoding task is learnable, channel saliency is interpretable, and an
snr = 0 dataset is provably class-independent.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .color import ColorPalette
from .epoch_io import save_epochs
from .features import StubVisualFeatures, write_visual_features
from .montage import DEFAULT_MONTAGE
from .pointcloud import PointCloud, normalize_cloud, save_ply
from .signals import EPOCH_SECONDS, EpochSet, Event, RawRecording, TrialLabel

SHAPE_FAMILIES = (
    "sphere",
    "box",
    "torus",
    "cylinder",
    "cone",
    "pyramid",
    "capsule",
    "dumbbell",
)

N_INFORMATIVE = 8
_MIX_TAG = 0xA11C
_CLASS_TAG = 0xC1A5
_COLOR_TAG = 0xC010
_TRIAL_TAG = 0x7121


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 8
    instances_per_class: int = 10
    train_instances: int = 8
    points_per_cloud: int = 8192
    snr: float = 4.0
    channels: int = 64
    rate: float = 250.0
    train_repetitions: int = 2
    test_repetitions: int = 4
    subject_id: int = 0
    seed: int = 0
    deform_amplitude: float = 0.05
    color_jitter: float = 0.02

    def __post_init__(self) -> None:
        if not 2 <= self.n_classes <= len(SHAPE_FAMILIES):
            raise ValueError(f"n_classes must be in [2, {len(SHAPE_FAMILIES)}]")
        if self.snr < 0:
            raise ValueError("snr must be >= 0")
        if not 1 <= self.train_instances < self.instances_per_class:
            raise ValueError("need 1 <= train_instances < instances_per_class")
        if self.channels < N_INFORMATIVE:
            raise ValueError(f"need at least {N_INFORMATIVE} channels")
        if min(self.train_repetitions, self.test_repetitions) < 1:
            raise ValueError("repetition counts must be >= 1")


def _seed_int(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# Parametric surface samplers (uniform by surface area)
# ---------------------------------------------------------------------------


def _sample_sphere(rng, n, radius=1.0, center=(0.0, 0.0, 0.0)):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius + np.asarray(center)


def _sample_triangles(rng, n, tris):
    tris = np.asarray(tris)
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    areas = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    idx = rng.choice(len(tris), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    return a[idx] + u[:, None] * (b[idx] - a[idx]) + v[:, None] * (c[idx] - a[idx])


def _box_triangles(half=(1.0, 1.0, 1.0)):
    hx, hy, hz = half
    corners = np.array(
        [[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
    )
    faces = [
        (0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
        (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3),
    ]
    tris = []
    for q in faces:
        tris.append(corners[[q[0], q[1], q[2]]])
        tris.append(corners[[q[0], q[2], q[3]]])
    return np.array(tris)


def _sample_torus(rng, n, major=1.0, minor=0.4):
    # rejection on the tube angle keeps the sampling uniform in area
    pts = np.empty((0, 3))
    while len(pts) < n:
        m = 2 * (n - len(pts)) + 16
        theta = rng.random(m) * 2 * np.pi
        phi = rng.random(m) * 2 * np.pi
        accept = rng.random(m) < (major + minor * np.cos(phi)) / (major + minor)
        theta, phi = theta[accept], phi[accept]
        r = major + minor * np.cos(phi)
        batch = np.stack([r * np.cos(theta), r * np.sin(theta), minor * np.sin(phi)], axis=1)
        pts = np.concatenate([pts, batch])
    return pts[:n]


def _sample_disc(rng, n, radius, z):
    r = radius * np.sqrt(rng.random(n))
    th = rng.random(n) * 2 * np.pi
    return np.stack([r * np.cos(th), r * np.sin(th), np.full(n, float(z))], axis=1)


def _sample_cylinder(rng, n, radius=0.7, half_height=1.0):
    side = 2 * np.pi * radius * 2 * half_height
    cap = np.pi * radius**2
    kind = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    th = rng.random(n) * 2 * np.pi
    z = rng.random(n) * 2 * half_height - half_height
    pts = np.stack([radius * np.cos(th), radius * np.sin(th), z], axis=1)
    for which, zc in ((1, -half_height), (2, half_height)):
        m = kind == which
        pts[m] = _sample_disc(rng, int(m.sum()), radius, zc)
    return pts


def _sample_cone(rng, n, radius=0.9, height=2.0):
    lateral = np.pi * radius * np.hypot(radius, height)
    base = np.pi * radius**2
    on_base = rng.random(n) < base / (lateral + base)
    pts = np.empty((n, 3))
    nb = int(on_base.sum())
    pts[on_base] = _sample_disc(rng, nb, radius, -height / 2)
    m = n - nb
    s = np.sqrt(rng.random(m))  # area element grows linearly from the apex
    th = rng.random(m) * 2 * np.pi
    r = radius * s
    z = height / 2 - height * s
    pts[~on_base] = np.stack([r * np.cos(th), r * np.sin(th), z], axis=1)
    return pts


def _pyramid_triangles(half_base=0.9, height=2.0):
    b = half_base
    apex = np.array([0.0, 0.0, height / 2])
    base = np.array(
        [[-b, -b, -height / 2], [b, -b, -height / 2], [b, b, -height / 2], [-b, b, -height / 2]]
    )
    tris = [np.array([base[i], base[(i + 1) % 4], apex]) for i in range(4)]
    tris.append(np.array([base[0], base[1], base[2]]))
    tris.append(np.array([base[0], base[2], base[3]]))
    return np.array(tris)


def _sample_capsule(rng, n, radius=0.5, half_height=0.6):
    side = 2 * np.pi * radius * 2 * half_height
    hemi = 2 * np.pi * radius**2
    kind = rng.choice(3, size=n, p=np.array([side, hemi, hemi]) / (side + 2 * hemi))
    th = rng.random(n) * 2 * np.pi
    z = rng.random(n) * 2 * half_height - half_height
    pts = np.stack([radius * np.cos(th), radius * np.sin(th), z], axis=1)
    for which, sign in ((1, -1.0), (2, 1.0)):
        m = kind == which
        sph = _sample_sphere(rng, int(m.sum()), radius=radius)
        sph[:, 2] = sign * np.abs(sph[:, 2]) + sign * half_height
        pts[m] = sph
    return pts


def _sample_dumbbell(rng, n, radius=0.55, offset=0.75):
    top = rng.random(n) < 0.5
    pts = _sample_sphere(rng, n, radius=radius)
    pts[:, 2] += np.where(top, offset, -offset)
    return pts


def _surface_points(shape: str, rng: np.random.Generator, n: int) -> np.ndarray:
    if shape == "sphere":
        return _sample_sphere(rng, n)
    if shape == "box":
        return _sample_triangles(rng, n, _box_triangles())
    if shape == "torus":
        return _sample_torus(rng, n)
    if shape == "cylinder":
        return _sample_cylinder(rng, n)
    if shape == "cone":
        return _sample_cone(rng, n)
    if shape == "pyramid":
        return _sample_triangles(rng, n, _pyramid_triangles())
    if shape == "capsule":
        return _sample_capsule(rng, n)
    if shape == "dumbbell":
        return _sample_dumbbell(rng, n)
    raise ValueError(f"unknown shape family {shape!r}")


def gen_cloud(
    object_class: int,
    deform_seed: int,
    n_points: int = 8192,
    deform_amplitude: float = 0.05,
    color: "tuple[float, float, float] | None" = None,
    color_jitter: float = 0.02,
) -> PointCloud:
    """Sample one deformed instance of a shape family, normalized to the
    zero-centroid unit-max-radius frame; optionally painted."""
    if not 0 <= object_class < len(SHAPE_FAMILIES):
        raise ValueError(f"object_class must index {SHAPE_FAMILIES}")
    rng = np.random.default_rng(np.random.SeedSequence([_TRIAL_TAG, 3, deform_seed]))
    pts = _surface_points(SHAPE_FAMILIES[object_class], rng, n_points)
    # smooth multiplicative radial ripple, bounded by deform_amplitude
    k = rng.normal(0.0, 1.5, size=3)
    phase = rng.random() * 2 * np.pi
    ripple = 1.0 + deform_amplitude * np.sin(pts @ k + phase)
    pts = pts * ripple[:, None]
    colors = None
    if color is not None:
        jitter = rng.normal(0.0, color_jitter, size=(n_points, 3))
        colors = np.clip(np.asarray(color) + jitter, 0.0, 1.0)
    cloud, _ = normalize_cloud(PointCloud(points=pts, colors=colors))
    return cloud


# ---------------------------------------------------------------------------
# Synthetic EEG
# ---------------------------------------------------------------------------


def _waveform_bank(tag: int, index: int, n_latents: int, f_lo: float, f_hi: float):
    """Deterministic per-(tag, index) bank of smooth latent waveforms."""
    rng = np.random.default_rng(np.random.SeedSequence([tag, index]))
    params = []
    for _ in range(n_latents):
        freqs = rng.uniform(f_lo, f_hi, size=3)
        amps = rng.uniform(0.5, 1.5, size=3)
        phases = rng.uniform(0, 2 * np.pi, size=3)
        rms = np.sqrt(np.sum(amps**2) / 2.0)
        params.append((freqs, amps / rms, phases))
    return params


def _render_waveforms(params, t: np.ndarray) -> np.ndarray:
    out = np.zeros((len(params), len(t)))
    for j, (freqs, amps, phases) in enumerate(params):
        for f, a, p in zip(freqs, amps, phases):
            out[j] += a * np.sin(2 * np.pi * f * t + p)
    return out


def class_waveforms(object_class: int, t: np.ndarray) -> np.ndarray:
    return _render_waveforms(
        _waveform_bank(_CLASS_TAG, object_class, N_INFORMATIVE, 4.0, 40.0), t
    )


def color_waveforms(color_class: int, t: np.ndarray) -> np.ndarray:
    return 0.6 * _render_waveforms(
        _waveform_bank(_COLOR_TAG, color_class, N_INFORMATIVE, 6.0, 30.0), t
    )


def mixing_matrix() -> np.ndarray:
    """Fixed seeded mixing of latent waveforms into the informative channels."""
    rng = np.random.default_rng(np.random.SeedSequence([_MIX_TAG]))
    return np.eye(N_INFORMATIVE) + 0.15 * rng.standard_normal((N_INFORMATIVE, N_INFORMATIVE))


def pink_noise(rng: np.random.Generator, channels: int, n: int) -> np.ndarray:
    """1/f-power noise, unit RMS per channel."""
    white = rng.standard_normal((channels, n))
    spec = np.fft.rfft(white, axis=-1)
    freqs = np.fft.rfftfreq(n)
    spec[:, 0] = 0.0
    spec[:, 1:] /= np.sqrt(freqs[1:] / freqs[1])
    x = np.fft.irfft(spec, n=n, axis=-1)
    rms = np.sqrt((x**2).mean(axis=-1, keepdims=True))
    return x / rms


def _onset_envelope(t: np.ndarray, ramp: float = 0.1) -> np.ndarray:
    return np.clip(t / ramp, 0.0, 1.0)


def gen_eeg(
    object_class: int,
    color_class: int,
    snr: float,
    seed: int,
    rate: float = 250.0,
    channels: int = 64,
) -> tuple[np.ndarray, np.ndarray]:
    """One paired (static, dynamic) trial.

    The class and color waveform banks are fixed per label, mixed into the
    informative channels and scaled by an onset envelope; noise is per-trial
    pink noise at amplitude 1/snr. ``snr = 0`` yields pure noise, carrying no
    class information at all.
    """
    if snr < 0:
        raise ValueError("snr must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([_TRIAL_TAG, seed]))
    mix = mixing_matrix()
    out = []
    for kind in ("static", "dynamic"):
        n = int(round(EPOCH_SECONDS[kind] * rate))
        t = np.arange(n) / rate
        noise = pink_noise(rng, channels, n)
        if snr == 0:
            out.append(noise)
            continue
        latents = class_waveforms(object_class, t) + color_waveforms(color_class, t)
        trial = noise / snr
        trial[:N_INFORMATIVE] += (mix @ latents) * _onset_envelope(t)
        out.append(trial)
    return out[0], out[1]


def gen_raw_recording(
    stimuli: list[tuple[str, int, int]],
    repetitions: int,
    snr: float,
    seed: int,
    rate: float = 1000.0,
    channels: int = 64,
    gap_seconds: float = 1.0,
    subject_id: int = 0,
) -> RawRecording:
    """Continuous synthetic recording with onset events, for exercising the
    preprocessing pipeline end to end.

    Background is continuous pink noise at amplitude 1/snr (unit amplitude
    when snr = 0); each (stimulus, repetition) contributes a static then a
    dynamic event whose clean signal component is added at the event window.
    """
    if snr < 0:
        raise ValueError("snr must be >= 0")
    rng = np.random.default_rng(np.random.SeedSequence([_TRIAL_TAG, 11, seed]))
    gap = int(round(gap_seconds * rate))
    win_s = int(round(EPOCH_SECONDS["static"] * rate))
    win_d = int(round(EPOCH_SECONDS["dynamic"] * rate))
    total = gap
    events: list[Event] = []
    spans: list[tuple[int, int, int, str]] = []  # (start, obj, col, kind)
    for _ in range(repetitions):
        for sid, obj, col in stimuli:
            events.append(Event(sample=total, stimulus_id=sid, kind="static"))
            spans.append((total, obj, col, "static"))
            total += win_s + gap
            events.append(Event(sample=total, stimulus_id=sid, kind="dynamic"))
            spans.append((total, obj, col, "dynamic"))
            total += win_d + gap
    data = pink_noise(rng, channels, total)
    if snr > 0:
        data /= snr
        mix = mixing_matrix()
        for start, obj, col, kind in spans:
            n = win_s if kind == "static" else win_d
            t = np.arange(n) / rate
            latents = class_waveforms(obj, t) + color_waveforms(col, t)
            data[:N_INFORMATIVE, start : start + n] += (mix @ latents) * _onset_envelope(t)
    return RawRecording(
        data=data,
        sample_rate=rate,
        events=events,
        channel_names=list(DEFAULT_MONTAGE[:channels]),
        subject_id=subject_id,
        stimulus_labels={sid: (obj, col) for sid, obj, col in stimuli},
    )


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------


def _stimulus_id(object_class: int, instance: int) -> str:
    return f"c{object_class:02d}_i{instance:02d}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _generation_self_check(cfg: SynthConfig) -> None:
    """Cheap sanity check: shapes are closer to their own family than to
    another family."""
    n = 256
    a0 = gen_cloud(0, _seed_int(cfg.seed, 991), n)
    a1 = gen_cloud(0, _seed_int(cfg.seed, 992), n)
    b0 = gen_cloud(1, _seed_int(cfg.seed, 993), n)
    from .metrics import chamfer

    intra = chamfer(a0, a1)
    inter = chamfer(a0, b0)
    if not inter > intra:
        raise RuntimeError(
            f"generation self-check failed: inter-class chamfer {inter:.4f} "
            f"<= intra-class {intra:.4f}"
        )


def gen_dataset(cfg: SynthConfig, out_dir: str | Path, force: bool = False) -> dict:
    """Write a complete paired dataset; returns the manifest.

    Per class, the first ``train_instances`` instances form the training
    split and the rest the test split; training stimuli get
    ``train_repetitions`` EEG repetitions, test stimuli ``test_repetitions``.
    Deterministic per ``cfg.seed``: regenerating produces identical bytes.
    """
    out = Path(out_dir)
    manifest_path = out / "manifest.json"
    if manifest_path.exists() and not force:
        raise FileExistsError(f"{out} already holds a dataset; pass force=True to overwrite")
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    _generation_self_check(cfg)

    palette = ColorPalette()
    palette.to_json(out / "palette.json")
    stub = StubVisualFeatures(seed=cfg.seed)

    labels_doc: dict[str, dict] = {}
    visual: dict[str, np.ndarray] = {}
    trials: dict[tuple[str, str], list] = {
        (split, kind): [] for split in ("train", "test") for kind in ("static", "dynamic")
    }
    channel_names = list(DEFAULT_MONTAGE[: cfg.channels])

    for c in range(cfg.n_classes):
        for i in range(cfg.instances_per_class):
            sid = _stimulus_id(c, i)
            split = "train" if i < cfg.train_instances else "test"
            color_class = (c + i) % 6
            cloud = gen_cloud(
                c,
                deform_seed=_seed_int(cfg.seed, 5, c, i),
                n_points=cfg.points_per_cloud,
                deform_amplitude=cfg.deform_amplitude,
                color=tuple(palette.anchors[color_class]),
                color_jitter=cfg.color_jitter,
            )
            cloud.dominant_color = color_class
            save_ply(cloud, out / "clouds" / f"{sid}.ply")
            labels_doc[sid] = {
                "object_class": c,
                "color_class": color_class,
                "split": split,
                "shape": SHAPE_FAMILIES[c],
            }
            visual[sid] = stub.frame_features(c, color_class)
            reps = cfg.train_repetitions if split == "train" else cfg.test_repetitions
            for rep in range(reps):
                static, dynamic = gen_eeg(
                    c,
                    color_class,
                    cfg.snr,
                    seed=_seed_int(cfg.seed, 7, c, i, rep),
                    rate=cfg.rate,
                    channels=cfg.channels,
                )
                label = TrialLabel(
                    stimulus_id=sid,
                    object_class=c,
                    color_class=color_class,
                    subject_id=cfg.subject_id,
                    repetition=rep,
                )
                trials[(split, "static")].append((static, label))
                trials[(split, "dynamic")].append((dynamic, label))

    for (split, kind), items in trials.items():
        eps = EpochSet(
            epochs=np.stack([x for x, _ in items]),
            kind=kind,
            rate=cfg.rate,
            labels=[lab for _, lab in items],
            channel_names=channel_names,
        )
        save_epochs(eps, out / f"{split}_{kind}.epochs")

    with open(out / "labels.json", "w", encoding="utf-8") as fh:
        json.dump(labels_doc, fh, indent=2, sort_keys=True)
    write_visual_features(visual, out / "visual_features.json")

    files = sorted(
        str(p.relative_to(out)).replace("\\", "/")
        for p in out.rglob("*")
        if p.is_file() and p != manifest_path
    )
    manifest = {
        "schema_version": 1,
        "config": asdict(cfg),
        "files": {f: _sha256(out / f) for f in files},
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
