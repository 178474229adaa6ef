"""Epoch datasets and their on-disk archive.

Archive layout (all little-endian)::

    b"EPD1"
    u32 n_epochs, u32 n_channels, u32 n_samples
    f64 window_seconds, f64 fs
    u16 label length + utf-8 bytes, once per channel
    f32 epochs[n_epochs, n_channels, n_samples]
    provenance block, once per epoch:
        i32 label, f64 start_second,
        u16 len + utf-8 subject id, u16 len + utf-8 recording id
    optional trailer:
        u32 class count, u16 len + utf-8 name per class
        u32 exclusion count, (u16 len + utf-8 reason, u32 epochs) per reason

Split manifests are plain text, one ``subject<TAB>fold`` line per subject.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, SignalIOError

MAGIC = b"EPD1"
UNLABELED = -1


@dataclass
class EpochDataset:
    epochs: np.ndarray                      # (N, C, L)
    labels: np.ndarray                      # (N,) int, UNLABELED when not yet labeled
    subjects: np.ndarray                    # (N,) str
    recordings: np.ndarray                  # (N,) str
    starts: np.ndarray                      # (N,) float seconds from recording start
    fs: float
    window_s: float
    channels: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()
    exclusions: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.epochs = np.asarray(self.epochs)
        n = len(self.epochs)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.subjects = np.asarray(self.subjects, dtype=str).reshape(n)
        self.recordings = np.asarray(self.recordings, dtype=str).reshape(n)
        self.starts = np.asarray(self.starts, dtype=np.float64).reshape(n)
        if not self.channels and self.epochs.ndim == 3:
            self.channels = tuple(f"ch{i}" for i in range(self.epochs.shape[1]))
        self.channels = tuple(self.channels)
        self.class_names = tuple(self.class_names)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def n_channels(self) -> int:
        return self.epochs.shape[1]

    @property
    def n_samples(self) -> int:
        return self.epochs.shape[2]

    def subset(self, index) -> "EpochDataset":
        index = np.asarray(index)
        return EpochDataset(self.epochs[index], self.labels[index], self.subjects[index],
                            self.recordings[index], self.starts[index], self.fs, self.window_s,
                            self.channels, self.class_names, dict(self.exclusions))

    def label_counts(self) -> dict[int, int]:
        values, counts = np.unique(self.labels, return_counts=True)
        return {int(v): int(c) for v, c in zip(values, counts)}

    @staticmethod
    def concatenate(parts: list["EpochDataset"]) -> "EpochDataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        first = parts[0]
        exclusions: dict[str, int] = {}
        for p in parts:
            for k, v in p.exclusions.items():
                exclusions[k] = exclusions.get(k, 0) + v
        return EpochDataset(
            np.concatenate([p.epochs for p in parts]), np.concatenate([p.labels for p in parts]),
            np.concatenate([p.subjects for p in parts]), np.concatenate([p.recordings for p in parts]),
            np.concatenate([p.starts for p in parts]), first.fs, first.window_s, first.channels,
            first.class_names, exclusions)


def _put_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _get_str(view: memoryview, pos: int) -> tuple[str, int]:
    (n,) = struct.unpack_from("<H", view, pos)
    pos += 2
    if pos + n > len(view):
        raise SignalIOError("archive truncated inside a string field")
    return bytes(view[pos:pos + n]).decode("utf-8"), pos + n


def dumps(ds: EpochDataset) -> bytes:
    buf = io.BytesIO()
    n, c, l = ds.epochs.shape
    buf.write(MAGIC)
    buf.write(struct.pack("<IIIdd", n, c, l, float(ds.window_s), float(ds.fs)))
    for ch in ds.channels:
        _put_str(buf, ch)
    buf.write(np.ascontiguousarray(ds.epochs, dtype="<f4").tobytes())
    for i in range(n):
        buf.write(struct.pack("<id", int(ds.labels[i]), float(ds.starts[i])))
        _put_str(buf, str(ds.subjects[i]))
        _put_str(buf, str(ds.recordings[i]))
    # optional trailer: class names, then exclusion counts
    buf.write(struct.pack("<I", len(ds.class_names)))
    for name in ds.class_names:
        _put_str(buf, name)
    buf.write(struct.pack("<I", len(ds.exclusions)))
    for reason, count in sorted(ds.exclusions.items()):
        _put_str(buf, reason)
        buf.write(struct.pack("<I", int(count)))
    return buf.getvalue()


def loads(raw: bytes) -> EpochDataset:
    view = memoryview(raw)
    if bytes(view[:4]) != MAGIC:
        raise BadMagic("not an epoch archive")
    header = struct.calcsize("<IIIdd")
    if len(view) < 4 + header:
        raise SignalIOError("archive header truncated")
    n, c, l, window_s, fs = struct.unpack_from("<IIIdd", view, 4)
    pos = 4 + header
    channels = []
    for _ in range(c):
        name, pos = _get_str(view, pos)
        channels.append(name)
    nbytes = n * c * l * 4
    if pos + nbytes > len(view):
        raise SignalIOError("archive truncated inside the epoch block")
    epochs = np.frombuffer(view[pos:pos + nbytes], dtype="<f4").reshape(n, c, l).astype(np.float32)
    pos += nbytes
    labels, starts, subjects, recordings = [], [], [], []
    for _ in range(n):
        if pos + 12 > len(view):
            raise SignalIOError("archive truncated inside the provenance block")
        label, start = struct.unpack_from("<id", view, pos)
        pos += 12
        subject, pos = _get_str(view, pos)
        recording, pos = _get_str(view, pos)
        labels.append(label)
        starts.append(start)
        subjects.append(subject)
        recordings.append(recording)
    class_names, exclusions = [], {}
    if pos < len(view):
        try:
            (k,) = struct.unpack_from("<I", view, pos)
            pos += 4
            for _ in range(k):
                name, pos = _get_str(view, pos)
                class_names.append(name)
            (k,) = struct.unpack_from("<I", view, pos)
            pos += 4
            for _ in range(k):
                reason, pos = _get_str(view, pos)
                (exclusions[reason],) = struct.unpack_from("<I", view, pos)
                pos += 4
        except struct.error:
            raise SignalIOError("archive truncated inside the trailer") from None
    return EpochDataset(epochs, labels, subjects, recordings, starts, fs, window_s, tuple(channels),
                        tuple(class_names), exclusions)


def save(ds: EpochDataset, path) -> Path:
    path = Path(path)
    path.write_bytes(dumps(ds))
    return path


def load(path) -> EpochDataset:
    return loads(Path(path).read_bytes())


def write_manifest(folds: dict[str, str], path) -> Path:
    path = Path(path)
    path.write_text("".join(f"{subject}\t{fold}\n" for subject, fold in folds.items()))
    return path


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            subject, _, fold = line.partition("\t")
            out[subject] = fold
    return out
