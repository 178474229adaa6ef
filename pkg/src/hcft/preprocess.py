"""Filtering, normalization, epoching, seizure-prediction labeling and data splits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as _signal

from .data import UNLABELED, EpochDataset
from .errors import (ClassTooSmall, EdgeOutOfRange, OrderUnsupported, SeriesTooShort, SingleSubject,
                     UnsortedAnnotations, WindowTooLong)
from .signal_io import DEFAULT_BIPOLAR_MONTAGE, Recording, SeizureInterval

log = logging.getLogger(__name__)

INTERICTAL, PREICTAL = 0, 1
PREDICTION_CLASSES = ("interictal", "preictal")


# -- Butterworth design --------------------------------------------------------
@dataclass(frozen=True)
class FilterSpec:
    kind: str                      # "highpass" or "bandstop"
    order: int                     # total number of poles
    edges: tuple[float, ...]       # (fc,) or (f_lo, f_hi) in Hz
    fs: float

    def validate(self) -> None:
        if self.kind not in ("highpass", "bandstop"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if self.order < 1:
            raise OrderUnsupported(f"order must be positive, got {self.order}")
        if self.kind == "bandstop" and self.order % 2:
            raise OrderUnsupported(f"band-stop order must be even, got {self.order}")
        want = 1 if self.kind == "highpass" else 2
        if len(self.edges) != want:
            raise ValueError(f"{self.kind} takes {want} edge frequencies")
        nyq = self.fs / 2
        for f in self.edges:
            if not 0 < f < nyq:
                raise EdgeOutOfRange(f"edge {f} Hz outside (0, {nyq}) Hz")
        if want == 2 and not self.edges[0] < self.edges[1]:
            raise EdgeOutOfRange(f"band edges must increase, got {self.edges}")


def _prototype_poles(n: int) -> np.ndarray:
    """Left-half-plane poles of the unit-cutoff analog Butterworth lowpass."""
    k = np.arange(n)
    return np.exp(1j * np.pi * (2 * k + n + 1) / (2 * n))


def _analog_zpk(spec: FilterSpec):
    warp = lambda f: 2 * spec.fs * math.tan(math.pi * f / spec.fs)
    if spec.kind == "highpass":
        p = _prototype_poles(spec.order)
        wc = warp(spec.edges[0])
        poles = wc / p
        zeros = np.zeros(spec.order, dtype=complex)
        gain = float(np.real(1 / np.prod(-p)))
        return zeros, poles, gain
    p = _prototype_poles(spec.order // 2)
    w1, w2 = warp(spec.edges[0]), warp(spec.edges[1])
    bw, w0 = w2 - w1, math.sqrt(w1 * w2)
    hp = (bw / 2) / p
    root = np.sqrt(hp * hp - w0 * w0)
    poles = np.concatenate([hp + root, hp - root])
    zeros = np.concatenate([np.full(len(p), 1j * w0), np.full(len(p), -1j * w0)])
    gain = float(np.real(1 / np.prod(-p)))
    return zeros, poles, gain


def _bilinear(zeros, poles, gain, fs):
    fs2 = 2 * fs
    zd = (fs2 + zeros) / (fs2 - zeros)
    pd = (fs2 + poles) / (fs2 - poles)
    kd = gain * float(np.real(np.prod(fs2 - zeros) / np.prod(fs2 - poles)))
    return zd, pd, kd


def _split_roots(roots: np.ndarray, tol: float = 1e-9):
    """Group roots into conjugate pairs (upper-half member) and real roots."""
    pairs = sorted((r for r in roots if r.imag > tol), key=lambda r: abs(r))
    reals = sorted((r.real for r in roots if abs(r.imag) <= tol), key=abs)
    return pairs, reals


def design_butterworth(spec: FilterSpec) -> np.ndarray:
    """Second-order sections (n_sections, 6) as [b0, b1, b2, 1, a1, a2].

    Sections are ordered from the pole furthest from the unit circle to the nearest.
    """
    spec.validate()
    zd, pd, kd = _bilinear(*_analog_zpk(spec), spec.fs)
    pole_pairs, pole_reals = _split_roots(pd)
    zero_pairs, zero_reals = _split_roots(zd)
    denominators = []
    for i in range(0, len(pole_reals), 2):
        chunk = pole_reals[i:i + 2]
        a = np.poly(chunk) if len(chunk) == 2 else [1.0, -chunk[0], 0.0]
        denominators.append(list(np.real(a)))
    denominators += [[1.0, -2 * p.real, abs(p) ** 2] for p in pole_pairs]
    # every Butterworth variant here has identical zeros, so assignment order does not matter
    numerators = [[1.0, -2 * z.real, abs(z) ** 2] for z in zero_pairs]
    for i in range(0, len(zero_reals), 2):
        chunk = zero_reals[i:i + 2]
        b = np.poly(chunk) if len(chunk) == 2 else [1.0, -chunk[0], 0.0]
        numerators.append(list(np.real(b)))
    if len(numerators) != len(denominators):
        raise OrderUnsupported("could not pair zeros with poles")
    sos = np.array([num + den for num, den in zip(numerators, denominators)], dtype=np.float64)
    sos[0, :3] *= kd
    return sos


def sos_response(sos: np.ndarray, freqs, fs: float) -> np.ndarray:
    """Complex frequency response of a section cascade at the given frequencies."""
    z = np.exp(1j * 2 * np.pi * np.asarray(freqs, dtype=np.float64) / fs)
    zi = 1 / z
    h = np.ones_like(z)
    for b0, b1, b2, a0, a1, a2 in sos:
        h = h * (b0 + b1 * zi + b2 * zi * zi) / (a0 + a1 * zi + a2 * zi * zi)
    return h


def section_poles(sos: np.ndarray) -> np.ndarray:
    return np.concatenate([np.roots(row[3:]) if row[5] else np.roots(row[3:5]) for row in sos])


def apply_zero_phase(sos: np.ndarray, x: np.ndarray, order: int | None = None) -> np.ndarray:
    """Forward-backward application along the last axis with odd edge extension."""
    x = np.asarray(x, dtype=np.float64)
    order = 2 * len(sos) if order is None else order
    pad = 3 * order
    if x.shape[-1] <= pad:
        raise SeriesTooShort(f"series of length {x.shape[-1]} needs more than {pad} samples")
    return _signal.sosfiltfilt(sos, x, axis=-1, padtype="odd", padlen=pad)


# -- normalization and epoching ------------------------------------------------
def zscore_per_channel(epochs: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Standardize every (epoch, channel) series along time (population variance)."""
    x = np.asarray(epochs, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    std = np.sqrt((centered * centered).mean(axis=-1, keepdims=True))
    return centered / np.where(std > eps, std, 1.0)


def segment_epochs(recording: Recording, window_s: float, stride_s: float | None = None,
                   subject: str = "", recording_id: str = "") -> EpochDataset:
    stride_s = window_s if stride_s is None else stride_s
    win = int(round(window_s * recording.fs))
    step = int(round(stride_s * recording.fs))
    if win < 1 or step < 1:
        raise ValueError("window and stride must cover at least one sample")
    n_total = recording.n_samples
    if win > n_total:
        raise WindowTooLong(f"{window_s} s window exceeds the {recording.duration} s recording")
    count = (n_total - win) // step + 1
    index = np.arange(count)[:, None] * step + np.arange(win)[None, :]
    epochs = recording.samples[:, index].transpose(1, 0, 2)
    starts = np.arange(count) * step / recording.fs
    return EpochDataset(epochs, np.full(count, UNLABELED), [subject] * count, [recording_id] * count,
                        starts, recording.fs, window_s, recording.channels)


# -- seizure-prediction labeling -----------------------------------------------
@dataclass(frozen=True)
class LabelingPolicy:
    preictal_s: float = 1800.0
    sph_s: float = 180.0
    buffer_s: float = 4 * 3600.0
    postictal_s: float = 30.0
    sph_mode: str = "gap"          # "gap" or "horizon"

    def __post_init__(self):
        if self.preictal_s <= 0:
            raise ValueError("preictal window must be positive")
        if min(self.sph_s, self.buffer_s, self.postictal_s) < 0:
            raise ValueError("policy durations must be nonnegative")
        if self.sph_mode not in ("gap", "horizon"):
            raise ValueError(f"unknown SPH mode {self.sph_mode!r}")

    def preictal_zone(self, onset: float) -> tuple[float, float]:
        end = onset - self.sph_s if self.sph_mode == "gap" else onset
        return end - self.preictal_s, end


def normalize_annotations(intervals) -> list[SeizureInterval]:
    """Sort and merge overlapping or touching intervals."""
    merged: list[SeizureInterval] = []
    for iv in sorted(intervals):
        if merged and iv.onset <= merged[-1].offset:
            last = merged.pop()
            iv = SeizureInterval(last.onset, max(last.offset, iv.offset))
        merged.append(iv)
    return merged


def _check_normalized(intervals) -> None:
    for a, b in zip(intervals, intervals[1:]):
        if b.onset <= a.offset:
            raise UnsortedAnnotations(f"intervals {a} and {b} are unsorted or overlapping")


def classify_epoch(start: float, length: float, intervals, policy: LabelingPolicy) -> str:
    """One of 'preictal', 'interictal' or an exclusion reason ('ictal', 'postictal', 'buffer')."""
    end = start + length
    hits = lambda lo, hi: start < hi and lo < end
    if any(hits(iv.onset, iv.offset) for iv in intervals):
        return "ictal"
    if any(hits(iv.offset, iv.offset + policy.postictal_s) for iv in intervals):
        return "postictal"
    for iv in intervals:
        lo, hi = policy.preictal_zone(iv.onset)
        if lo <= start and end <= hi:
            return "preictal"
    if any(hits(iv.onset - policy.buffer_s, iv.offset + policy.buffer_s) for iv in intervals):
        return "buffer"
    return "interictal"


def label_prediction_epochs(dataset: EpochDataset, annotations, policy: LabelingPolicy = LabelingPolicy(),
                            ) -> EpochDataset:
    """Assign preictal/interictal labels, dropping excluded epochs with counted reasons.

    ``annotations`` is a list of intervals shared by every epoch, or a mapping from
    recording id to that recording's intervals.
    """
    per_recording = annotations if isinstance(annotations, dict) else None
    for ivs in (per_recording.values() if per_recording is not None else [annotations]):
        _check_normalized(list(ivs))
    keep, labels = [], []
    exclusions = dict(dataset.exclusions)
    for i in range(len(dataset)):
        ivs = per_recording.get(str(dataset.recordings[i]), []) if per_recording is not None else annotations
        verdict = classify_epoch(float(dataset.starts[i]), dataset.window_s, ivs, policy)
        if verdict in ("preictal", "interictal"):
            keep.append(i)
            labels.append(PREICTAL if verdict == "preictal" else INTERICTAL)
        else:
            exclusions[verdict] = exclusions.get(verdict, 0) + 1
    out = dataset.subset(np.array(keep, dtype=np.int64))
    out.labels = np.array(labels, dtype=np.int64)
    out.class_names = PREDICTION_CLASSES
    out.exclusions = exclusions
    return out


# -- splits --------------------------------------------------------------------
def loso_split(dataset: EpochDataset) -> list[tuple[list[str], str]]:
    subjects = sorted(set(map(str, dataset.subjects)))
    if len(subjects) < 2:
        raise SingleSubject("leave-one-subject-out needs at least two subjects")
    return [([s for s in subjects if s != held], held) for held in subjects]


def fold_indices(dataset: EpochDataset, test_subject: str) -> tuple[np.ndarray, np.ndarray]:
    mask = dataset.subjects == test_subject
    return np.flatnonzero(~mask), np.flatnonzero(mask)


def _train_count(n: int, fraction: float) -> int:
    return min(max(int(math.floor(fraction * n + 0.5)), 1), n - 1)


def subject_split_70_30(dataset: EpochDataset, seed: int = 0, fraction: float = 0.7,
                        chronological: bool = False) -> tuple[EpochDataset, EpochDataset]:
    """Per-subject, per-class split; the chronological option puts the earliest epochs in train."""
    rng = np.random.default_rng(seed)
    train, test = [], []
    for subject in sorted(set(map(str, dataset.subjects))):
        for label in sorted(set(dataset.labels[dataset.subjects == subject].tolist())):
            idx = np.flatnonzero((dataset.subjects == subject) & (dataset.labels == label))
            if len(idx) < 2:
                raise ClassTooSmall(f"subject {subject!r} has {len(idx)} epoch(s) of class {label}")
            if chronological:
                idx = idx[np.lexsort((dataset.starts[idx], dataset.recordings[idx]))]
            else:
                idx = rng.permutation(idx)
            k = _train_count(len(idx), fraction)
            train.extend(idx[:k])
            test.extend(idx[k:])
    return dataset.subset(np.sort(train)), dataset.subset(np.sort(test))


def stratified_holdout(labels: np.ndarray, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stratified (keep, held_out) index split; each class keeps at least one."""
    rng = np.random.default_rng(seed)
    keep, held = [], []
    for label in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == label))
        n_held = int(math.floor(fraction * len(idx) + 0.5)) if len(idx) > 1 else 0
        n_held = min(n_held, len(idx) - 1)
        held.extend(idx[:n_held])
        keep.extend(idx[n_held:])
    return np.sort(np.array(keep, dtype=np.int64)), np.sort(np.array(held, dtype=np.int64))


# -- whole-recording pipeline --------------------------------------------------
@dataclass
class PrepConfig:
    window_s: float = 5.0
    stride_s: float | None = None
    notch_bands: tuple[tuple[float, float], ...] = ((57.0, 63.0), (117.0, 123.0))
    notch_order: int = 6
    highpass_hz: float = 1.0
    highpass_order: int = 4
    channels: tuple[str, ...] = DEFAULT_BIPOLAR_MONTAGE
    policy: LabelingPolicy = field(default_factory=LabelingPolicy)
    zscore: bool = True

    def filters(self, fs: float) -> list[FilterSpec]:
        specs = []
        for lo, hi in self.notch_bands:
            if hi >= fs / 2:
                log.info("skipping %s-%s Hz band-stop above Nyquist at fs=%s", lo, hi, fs)
                continue
            specs.append(FilterSpec("bandstop", self.notch_order, (lo, hi), fs))
        if self.highpass_hz:
            specs.append(FilterSpec("highpass", self.highpass_order, (self.highpass_hz,), fs))
        return specs


def filter_recording(rec: Recording, config: PrepConfig) -> Recording:
    samples = rec.samples
    for spec in config.filters(rec.fs):
        samples = apply_zero_phase(design_butterworth(spec), samples, spec.order)
    return Recording(rec.channels, rec.fs, samples, list(rec.annotations))


def prepare_recording(rec: Recording, config: PrepConfig, subject: str, recording_id: str) -> EpochDataset:
    """Channel selection, filtering, epoching, labeling and per-epoch z-scoring."""
    if config.channels:
        rec = rec.select(config.channels)
    rec = filter_recording(rec, config)
    ds = segment_epochs(rec, config.window_s, config.stride_s, subject, recording_id)
    ds = label_prediction_epochs(ds, normalize_annotations(rec.annotations), config.policy)
    if config.zscore and len(ds):
        ds.epochs = zscore_per_channel(ds.epochs)
    ds.epochs = ds.epochs.astype(np.float32)
    return ds
