"""EEG preprocessing: epoching, resampling, filtering, whitening, averaging.

Pipeline order: segment (with baseline correction) -> resample -> band-pass ->
notch -> multivariate noise normalization. Repetition averaging is applied by
the caller (identity for training data, 4-repetition mean for test data).
All operations are pure functions over value data and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .montage import DEFAULT_MONTAGE

EPOCH_SECONDS = {"static": 1.0, "dynamic": 6.0}


@dataclass(frozen=True)
class Event:
    """Stimulus onset marker inside a continuous recording."""

    sample: int
    stimulus_id: str
    kind: str  # "static" | "dynamic"


@dataclass(frozen=True)
class TrialLabel:
    stimulus_id: str
    object_class: int = -1
    color_class: int = -1
    subject_id: int = 0
    repetition: int = 0

    def to_dict(self) -> dict:
        return {
            "stimulus_id": self.stimulus_id,
            "object_class": self.object_class,
            "color_class": self.color_class,
            "subject_id": self.subject_id,
            "repetition": self.repetition,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialLabel":
        return cls(
            stimulus_id=str(d["stimulus_id"]),
            object_class=int(d["object_class"]),
            color_class=int(d["color_class"]),
            subject_id=int(d["subject_id"]),
            repetition=int(d["repetition"]),
        )


@dataclass
class RawRecording:
    """Continuous multi-channel recording (channels x samples, microvolts).

    ``stimulus_labels`` maps stimulus_id -> (object_class, color_class); ids
    without an entry produce trials labeled (-1, -1).
    """

    data: np.ndarray
    sample_rate: float
    events: list[Event]
    channel_names: list[str] = field(default_factory=lambda: list(DEFAULT_MONTAGE))
    subject_id: int = 0
    stimulus_labels: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("recording data must be channels x samples with >= 1 channel")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if len(self.channel_names) != self.data.shape[0]:
            raise ValueError("channel_names length must match channel count")
        n = self.data.shape[1]
        for ev in self.events:
            if not 0 <= ev.sample < n:
                raise ValueError(f"event at sample {ev.sample} outside recording of {n} samples")
            if ev.kind not in EPOCH_SECONDS:
                raise ValueError(f"unknown event kind {ev.kind!r}")


@dataclass
class EpochSet:
    """Stimulus-locked trials as a (trials x channels x time) tensor."""

    epochs: np.ndarray
    kind: str
    rate: float
    labels: list[TrialLabel]
    channel_names: list[str] = field(default_factory=lambda: list(DEFAULT_MONTAGE))

    def __post_init__(self) -> None:
        self.epochs = np.asarray(self.epochs, dtype=np.float64)
        if self.epochs.ndim != 3:
            raise ValueError("epochs must be trials x channels x time")
        if self.kind not in EPOCH_SECONDS:
            raise ValueError(f"unknown epoch kind {self.kind!r}")
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        expected_t = self.rate * EPOCH_SECONDS[self.kind]
        if abs(self.epochs.shape[2] - expected_t) >= 1.0:
            raise ValueError(
                f"{self.kind} epochs at {self.rate} Hz must have ~{expected_t:.0f} samples, "
                f"got {self.epochs.shape[2]}"
            )
        if len(self.labels) != self.epochs.shape[0]:
            raise ValueError("labels length must equal trial count")
        if len(self.channel_names) != self.epochs.shape[1]:
            raise ValueError("channel_names length must match channel count")

    @property
    def n_trials(self) -> int:
        return self.epochs.shape[0]

    @property
    def n_channels(self) -> int:
        return self.epochs.shape[1]

    @property
    def n_samples(self) -> int:
        return self.epochs.shape[2]

    def copy_with(self, epochs: np.ndarray, labels: list[TrialLabel] | None = None) -> "EpochSet":
        return EpochSet(
            epochs=epochs,
            kind=self.kind,
            rate=self.rate,
            labels=list(self.labels) if labels is None else labels,
            channel_names=list(self.channel_names),
        )


@dataclass(frozen=True)
class PreprocessConfig:
    band_lo: float = 0.1
    band_hi: float = 100.0
    notch: float = 50.0
    target_rate: float = 250.0
    baseline_window: float = 0.2  # seconds before onset
    shrinkage: float = 0.1

    def __post_init__(self) -> None:
        if not 0 < self.band_lo < self.band_hi:
            raise ValueError("require 0 < band_lo < band_hi")
        if not self.band_lo < self.notch < self.band_hi:
            raise ValueError("notch frequency must lie inside the pass band")
        if self.target_rate <= 0:
            raise ValueError("target_rate must be positive")
        if self.baseline_window < 0:
            raise ValueError("baseline_window must be non-negative")
        if not 0 <= self.shrinkage <= 1:
            raise ValueError("shrinkage must be in [0, 1]")


def segment_epochs(
    rec: RawRecording, cfg: PreprocessConfig, kind: str
) -> tuple[EpochSet, list[str]]:
    """Cut fixed-length, onset-locked epochs of one kind out of a recording.

    Each epoch is baseline-corrected by subtracting the per-channel mean over
    the ``baseline_window`` seconds preceding onset. Events whose epoch or
    baseline window does not fit inside the recording are rejected and
    reported, never truncated.

    Returns the epoch set and a list of human-readable rejection entries.
    """
    if kind not in EPOCH_SECONDS:
        raise ValueError(f"unknown epoch kind {kind!r}")
    win = int(round(EPOCH_SECONDS[kind] * rec.sample_rate))
    base = int(round(cfg.baseline_window * rec.sample_rate))
    n = rec.data.shape[1]

    epochs: list[np.ndarray] = []
    labels: list[TrialLabel] = []
    rejected: list[str] = []
    rep_counter: dict[str, int] = {}
    for ev in sorted((e for e in rec.events if e.kind == kind), key=lambda e: e.sample):
        start, stop = ev.sample, ev.sample + win
        if stop > n or start - base < 0:
            rejected.append(
                f"event stimulus={ev.stimulus_id} sample={ev.sample}: "
                f"window [{start - base}, {stop}) exceeds recording bounds [0, {n})"
            )
            continue
        epoch = rec.data[:, start:stop].copy()
        if base > 0:
            epoch -= rec.data[:, start - base : start].mean(axis=1, keepdims=True)
        rep = rep_counter.get(ev.stimulus_id, 0)
        rep_counter[ev.stimulus_id] = rep + 1
        obj, col = rec.stimulus_labels.get(ev.stimulus_id, (-1, -1))
        epochs.append(epoch)
        labels.append(
            TrialLabel(
                stimulus_id=ev.stimulus_id,
                object_class=obj,
                color_class=col,
                subject_id=rec.subject_id,
                repetition=rep,
            )
        )

    data = np.stack(epochs) if epochs else np.zeros((0, rec.data.shape[0], win))
    out = EpochSet(
        epochs=data,
        kind=kind,
        rate=rec.sample_rate,
        labels=labels,
        channel_names=list(rec.channel_names),
    )
    return out, rejected


def resample(x: EpochSet, target_rate: float) -> EpochSet:
    """Polyphase windowed-sinc resampling along the time axis."""
    if target_rate <= 0:
        raise ValueError("target_rate must be positive")
    if target_rate == x.rate:
        return x.copy_with(x.epochs.copy())
    ratio = Fraction(target_rate / x.rate).limit_denominator(1000)
    data = sps.resample_poly(x.epochs, ratio.numerator, ratio.denominator, axis=-1)
    return EpochSet(
        epochs=data,
        kind=x.kind,
        rate=target_rate,
        labels=list(x.labels),
        channel_names=list(x.channel_names),
    )


def bandpass_sos(lo: float, hi: float, rate: float, order: int = 4) -> np.ndarray:
    """Design the band-pass filter (Butterworth, second-order sections)."""
    if not 0 < lo < hi:
        raise ValueError("require 0 < lo < hi")
    if hi >= rate / 2:
        raise ValueError(f"upper cutoff {hi} Hz must be below Nyquist ({rate / 2} Hz)")
    sos = sps.butter(order, [lo, hi], btype="bandpass", fs=rate, output="sos")
    _check_stable_sos(sos)
    return sos


def notch_ba(freq: float, rate: float, quality: float = 30.0) -> tuple[np.ndarray, np.ndarray]:
    """Design the line-noise notch filter (second-order IIR)."""
    if not 0 < freq < rate / 2:
        raise ValueError("notch frequency must be in (0, Nyquist)")
    b, a = sps.iirnotch(freq, quality, fs=rate)
    if np.any(np.abs(np.roots(a)) >= 1.0):
        raise RuntimeError("unstable notch filter coefficients")
    return b, a


def _check_stable_sos(sos: np.ndarray) -> None:
    _, poles, _ = sps.sos2zpk(sos)
    if np.any(np.abs(poles) >= 1.0):
        raise RuntimeError("unstable filter coefficients; adjust cutoffs or order")


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise RuntimeError(f"{what} produced non-finite output")


def bandpass_filter(x: EpochSet, lo: float, hi: float) -> EpochSet:
    """Zero-phase band-pass (filter applied forward and backward)."""
    sos = bandpass_sos(lo, hi, x.rate)
    data = sps.sosfiltfilt(sos, x.epochs, axis=-1)
    _check_finite(data, "band-pass filter")
    return x.copy_with(data)


def notch_filter(x: EpochSet, freq: float) -> EpochSet:
    """Zero-phase notch at ``freq`` (e.g. 50 Hz line noise)."""
    b, a = notch_ba(freq, x.rate)
    data = sps.filtfilt(b, a, x.epochs, axis=-1)
    _check_finite(data, "notch filter")
    return x.copy_with(data)


def channel_covariance(x: EpochSet) -> np.ndarray:
    """Shrinkage-free channel covariance, estimated per condition and averaged.

    Conditions are stimulus ids; per condition the per-epoch covariances of
    time-demeaned trials are averaged, then condition covariances are averaged
    with equal weight.
    """
    by_condition: dict[str, list[int]] = {}
    for i, lab in enumerate(x.labels):
        by_condition.setdefault(lab.stimulus_id, []).append(i)
    c = x.n_channels
    cond_covs = []
    for idx in by_condition.values():
        acc = np.zeros((c, c))
        for i in idx:
            e = x.epochs[i] - x.epochs[i].mean(axis=1, keepdims=True)
            acc += e @ e.T / max(e.shape[1] - 1, 1)
        cond_covs.append(acc / len(idx))
    return np.mean(cond_covs, axis=0)


def noise_normalize(x: EpochSet, shrinkage: float) -> EpochSet:
    """Whiten channels by the inverse square root of the channel covariance.

    The covariance is shrunk toward a scaled identity:
    ``(1 - s) * cov + s * (trace(cov) / C) * I``. With ``shrinkage == 0`` a
    singular covariance is an error rather than a silent pseudo-inverse.
    """
    if x.n_trials < 2:
        raise ValueError("noise normalization needs at least 2 trials")
    if not 0 <= shrinkage <= 1:
        raise ValueError("shrinkage must be in [0, 1]")
    cov = channel_covariance(x)
    c = cov.shape[0]
    target = np.trace(cov) / c
    cov = (1.0 - shrinkage) * cov + shrinkage * target * np.eye(c)
    vals, vecs = np.linalg.eigh(cov)
    if vals[0] <= vals[-1] * c * np.finfo(np.float64).eps:
        raise ValueError(
            "channel covariance is singular; set a nonzero shrinkage to regularize"
        )
    w = (vecs / np.sqrt(vals)) @ vecs.T  # symmetric inverse square root
    data = np.einsum("ij,tjk->tik", w, x.epochs)
    return x.copy_with(data)


def average_repetitions(x: EpochSet, mode: str) -> EpochSet:
    """Training keeps repetitions as independent trials; testing averages 4.

    Test mode groups trials by stimulus and averages exactly 4 repetitions
    per stimulus; averaged trials carry ``repetition == -1``.
    """
    if mode == "train":
        return x.copy_with(x.epochs.copy())
    if mode != "test":
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    order: list[str] = []
    groups: dict[str, list[int]] = {}
    for i, lab in enumerate(x.labels):
        if lab.stimulus_id not in groups:
            order.append(lab.stimulus_id)
        groups.setdefault(lab.stimulus_id, []).append(i)
    epochs = []
    labels = []
    for sid in order:
        idx = groups[sid]
        if len(idx) != 4:
            raise ValueError(
                f"stimulus {sid!r} has {len(idx)} repetitions in test mode, expected 4"
            )
        epochs.append(x.epochs[idx].mean(axis=0))
        first = x.labels[idx[0]]
        labels.append(
            TrialLabel(
                stimulus_id=sid,
                object_class=first.object_class,
                color_class=first.color_class,
                subject_id=first.subject_id,
                repetition=-1,
            )
        )
    return EpochSet(
        epochs=np.stack(epochs) if epochs else x.epochs[:0],
        kind=x.kind,
        rate=x.rate,
        labels=labels,
        channel_names=list(x.channel_names),
    )


def preprocess_recording(
    rec: RawRecording, cfg: PreprocessConfig
) -> tuple[dict[str, EpochSet], list[str]]:
    """Run the full preprocessing chain on one recording.

    Returns epoch sets keyed by kind ("static", "dynamic"; only kinds with
    events present) plus the combined rejection report.
    """
    out: dict[str, EpochSet] = {}
    report: list[str] = []
    for kind in ("static", "dynamic"):
        if not any(e.kind == kind for e in rec.events):
            continue
        eps, rejected = segment_epochs(rec, cfg, kind)
        report.extend(rejected)
        if eps.n_trials == 0:
            continue
        eps = resample(eps, cfg.target_rate)
        eps = bandpass_filter(eps, cfg.band_lo, cfg.band_hi)
        eps = notch_filter(eps, cfg.notch)
        eps = noise_normalize(eps, cfg.shrinkage)
        out[kind] = eps
    return out, report
