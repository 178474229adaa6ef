"""Synthetic EEG with known ground truth: lateralized motor imagery and seizure timelines."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EpochDataset
from .preprocess import INTERICTAL, PREDICTION_CLASSES, PREICTAL, LabelingPolicy
from .signal_io import Recording, SeizureInterval

MI_CLASSES = ("left", "right")


@dataclass(frozen=True)
class SynthSpec:
    n_trials: int = 400              # per class
    n_channels: int = 3
    fs: float = 250.0
    window_s: float = 2.0
    band: tuple[float, float] = (8.0, 12.0)
    snr: float = 2.0                 # rhythm RMS over background RMS
    seed: int = 0
    n_subjects: int = 1
    n_seizures: int = 4              # per subject, seizure generator only

    def __post_init__(self):
        if self.snr < 0:
            raise ValueError("snr must be nonnegative")
        if not 0 < self.band[0] < self.band[1] < self.fs / 2:
            raise ValueError(f"band {self.band} must lie inside (0, {self.fs / 2}) Hz")
        if self.n_trials < 1 or self.n_subjects < 1:
            raise ValueError("need at least one trial and one subject")


def pink_noise(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Unit-RMS noise with power falling as 1/f along the last axis."""
    n = shape[-1]
    spectrum = np.fft.rfft(rng.standard_normal(shape), axis=-1)
    f = np.arange(spectrum.shape[-1], dtype=np.float64)
    shaping = np.zeros_like(f)
    shaping[1:] = 1 / np.sqrt(f[1:])
    x = np.fft.irfft(spectrum * shaping, n=n, axis=-1)
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True))


def _rhythm(rng, n: int, fs: float, band, amplitude) -> np.ndarray:
    freq = rng.uniform(*band)
    phase = rng.uniform(0, 2 * np.pi)
    t = np.arange(n) / fs
    return np.sqrt(2) * amplitude * np.sin(2 * np.pi * freq * t + phase)


def gen_mi(spec: SynthSpec) -> EpochDataset:
    """Balanced two-class set; the in-band rhythm sits on channel 0 or on the last channel."""
    if spec.n_channels < 2:
        raise ValueError("motor-imagery synthesis needs at least two channels")
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.window_s * spec.fs))
    labels = np.tile([0, 1], spec.n_trials)
    epochs = pink_noise(rng, (len(labels), spec.n_channels, n))
    for i, label in enumerate(labels):
        channel = 0 if label == 0 else spec.n_channels - 1
        epochs[i, channel] += _rhythm(rng, n, spec.fs, spec.band, spec.snr)
    subjects = [f"S{(i // 2) % spec.n_subjects + 1:02d}" for i in range(len(labels))]
    return EpochDataset(epochs.astype(np.float32), labels, subjects, subjects, np.zeros(len(labels)),
                        spec.fs, spec.window_s, tuple(f"ch{c}" for c in range(spec.n_channels)),
                        MI_CLASSES)


@dataclass
class SeizureSynth:
    recordings: dict[str, Recording]     # keyed by recording id (one per subject)
    subjects: dict[str, str]             # recording id -> subject id
    dataset: EpochDataset                # the generator's intended labels, unnormalized epochs
    policy: LabelingPolicy


def seizure_policy(window_s: float, preictal_epochs: int) -> LabelingPolicy:
    """Timeline constants scaled down from the clinical protocol to desk size."""
    preictal = preictal_epochs * window_s
    sph = 2 * window_s
    return LabelingPolicy(preictal_s=preictal, sph_s=sph, buffer_s=preictal + sph + 4 * window_s,
                          postictal_s=2 * window_s)


def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _seizure_count(counts: list[int], wanted: int) -> tuple[int, int]:
    """Seizures per subject and full preictal epochs per seizure.

    Every seizure but the first gets a full window; the first one's window is cut by the
    recording start, so it must still hold at least one epoch.
    """
    for k in range(max(1, min(wanted, min(counts))), 0, -1):
        per = -(-max(counts) // k)
        if all(c - (k - 1) * per >= 1 for c in counts):
            return k, per
    return 1, max(counts)


def gen_seizure(spec: SynthSpec) -> SeizureSynth:
    """Continuous per-subject recordings with annotated seizures.

    Each subject contributes ``n_trials`` preictal and ``n_trials`` interictal epochs in
    total (split evenly across subjects with the remainder going to the first ones).
    Per seizure the timeline reads: buffer, preictal window, SPH gap, seizure,
    postictal and buffer tail, interictal. The recording starts inside the first
    seizure's preictal window so that class counts come out exact. The preictal window
    carries a 3-8 Hz rhythm shared by all channels whose amplitude grows towards onset.
    """
    rng = np.random.default_rng(spec.seed)
    w = spec.window_s
    n_win = int(round(w * spec.fs))
    recordings, subjects, parts = {}, {}, []
    per_subject = _split(spec.n_trials, spec.n_subjects)
    n_seizures, preictal_epochs = _seizure_count(per_subject, spec.n_seizures)
    policy = seizure_policy(w, preictal_epochs)
    pre_gap = int(round((policy.buffer_s - policy.preictal_s - policy.sph_s) / w))
    sph_epochs = int(round(policy.sph_s / w))
    ictal_epochs = 4
    post_epochs = int(round(policy.buffer_s / w))
    for s, count in enumerate(per_subject):
        subject = f"S{s + 1:02d}"
        rec_id = f"{subject}_r01"
        inter = _split(count, n_seizures)
        first = count - (n_seizures - 1) * preictal_epochs
        layout = []
        for j in range(n_seizures):
            if j:
                layout += [("gap", pre_gap), ("preictal", preictal_epochs)]
            else:
                layout.append(("preictal", first))
            layout += [("gap", sph_epochs), ("ictal", ictal_epochs), ("gap", post_epochs),
                       ("interictal", inter[j])]
        total = sum(e for _, e in layout)
        x = pink_noise(rng, (spec.n_channels, total * n_win))
        gains = rng.uniform(0.7, 1.3, size=(spec.n_channels, 1))
        labels, starts, annotations = [], [], []
        cursor = 0
        for kind, epochs in layout:
            lo, hi = cursor * n_win, (cursor + epochs) * n_win
            if kind == "preictal" and epochs:
                ramp = np.linspace(0.5, 1.0, hi - lo)
                x[:, lo:hi] += gains * (ramp * _rhythm(rng, hi - lo, spec.fs, (3.0, 8.0), spec.snr))
            if kind == "ictal":
                x[:, lo:hi] += gains * _rhythm(rng, hi - lo, spec.fs, (3.0, 4.0), 4 * max(spec.snr, 1.0))
                annotations.append(SeizureInterval(cursor * w, (cursor + epochs) * w))
            if kind in ("interictal", "preictal"):
                labels += [INTERICTAL if kind == "interictal" else PREICTAL] * epochs
                starts += [(cursor + e) * w for e in range(epochs)]
            cursor += epochs
        rec = Recording(tuple(f"ch{c}" for c in range(spec.n_channels)), spec.fs, x, annotations)
        recordings[rec_id] = rec
        subjects[rec_id] = subject
        index = (np.array(starts) / w).round().astype(int)
        epochs_arr = x.reshape(spec.n_channels, total, n_win)[:, index].transpose(1, 0, 2)
        parts.append(EpochDataset(epochs_arr.astype(np.float32), labels, [subject] * len(labels),
                                  [rec_id] * len(labels), starts, spec.fs, w, rec.channels,
                                  PREDICTION_CLASSES))
    return SeizureSynth(recordings, subjects, EpochDataset.concatenate(parts), policy)
