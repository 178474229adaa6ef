"""Reading and writing EEG recordings: EDF, CSV and seizure annotation sidecars."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import (BadMagic, DegenerateScale, InconsistentHeader, NonNumericCell, RaggedRows,
                     SignalIOError, TruncatedRecord, Unquantizable)

# 18-channel bipolar montage shared by most CHB-MIT recordings.
DEFAULT_BIPOLAR_MONTAGE = (
    "FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4",
    "F4-C4", "C4-P4", "P4-O2", "FP2-F8", "F8-T8", "T8-P8", "P8-O2", "FZ-CZ", "CZ-PZ",
)


@dataclass(frozen=True, order=True)
class SeizureInterval:
    onset: float
    offset: float

    def __post_init__(self):
        if self.onset < 0 or self.offset <= self.onset:
            raise ValueError(f"invalid seizure interval [{self.onset}, {self.offset})")


@dataclass
class EdfSignalHeader:
    label: str
    transducer: str = ""
    physical_dimension: str = "uV"
    physical_min: float = -1.0
    physical_max: float = 1.0
    digital_min: int = -32768
    digital_max: int = 32767
    prefiltering: str = ""
    samples_per_record: int = 1
    reserved: str = ""


@dataclass
class EdfHeader:
    version: str = "0"
    patient_id: str = ""
    recording_id: str = ""
    start_date: str = "01.01.00"
    start_time: str = "00.00.00"
    header_bytes: int = 256
    reserved: str = ""
    n_records: int = 0
    record_duration: float = 1.0
    signals: list[EdfSignalHeader] = field(default_factory=list)

    @property
    def ns(self) -> int:
        return len(self.signals)


@dataclass
class Recording:
    channels: tuple[str, ...]
    fs: float
    samples: np.ndarray                      # (C, N) physical units
    annotations: list[SeizureInterval] = field(default_factory=list)
    header: EdfHeader | None = None

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.fs <= 0:
            raise ValueError("sampling rate must be positive")
        if self.samples.shape[0] != len(self.channels):
            raise ValueError(f"{len(self.channels)} labels for {self.samples.shape[0]} channels")

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.fs

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def select(self, labels) -> "Recording":
        """Keep the listed channels in the listed order (case-insensitive match)."""
        index = {c.upper(): i for i, c in enumerate(self.channels)}
        missing = [lab for lab in labels if lab.upper() not in index]
        if missing:
            raise SignalIOError(f"channels not present in recording: {missing}")
        rows = [index[lab.upper()] for lab in labels]
        return Recording(tuple(self.channels[r] for r in rows), self.fs, self.samples[rows],
                         list(self.annotations))


# -- EDF -----------------------------------------------------------------------
_MAIN_FIELDS = (("version", 8), ("patient_id", 80), ("recording_id", 80), ("start_date", 8),
                ("start_time", 8), ("header_bytes", 8), ("reserved", 44), ("n_records", 8),
                ("record_duration", 8), ("ns", 4))
_SIGNAL_FIELDS = (("label", 16), ("transducer", 80), ("physical_dimension", 8), ("physical_min", 8),
                  ("physical_max", 8), ("digital_min", 8), ("digital_max", 8), ("prefiltering", 80),
                  ("samples_per_record", 8), ("reserved", 32))


def _number(text: str, name: str, kind=float):
    try:
        value = kind(text.strip()) if kind is float else int(float(text.strip()))
    except (ValueError, OverflowError):
        raise InconsistentHeader(f"header field {name!r} is not numeric: {text!r}") from None
    if kind is float and not math.isfinite(value):
        raise InconsistentHeader(f"header field {name!r} is not finite")
    return value


def _ascii(raw: bytes) -> str:
    return raw.decode("ascii", errors="replace").rstrip(" ")


def parse_edf_header(raw: bytes) -> EdfHeader:
    if len(raw) < 256:
        raise InconsistentHeader(f"file holds {len(raw)} bytes, shorter than the 256-byte header")
    if raw[:8] != b"0       ":
        raise BadMagic(f"EDF version field must be '0', got {raw[:8]!r}")
    pos = 0
    main = {}
    for name, width in _MAIN_FIELDS:
        main[name] = _ascii(raw[pos:pos + width])
        pos += width
    ns = _number(main["ns"], "ns", int)
    header_bytes = _number(main["header_bytes"], "header_bytes", int)
    if ns < 1:
        raise InconsistentHeader(f"number of signals must be positive, got {ns}")
    if header_bytes != 256 + 256 * ns:
        raise InconsistentHeader(f"header size {header_bytes} != 256 + 256*{ns}")
    if len(raw) < header_bytes:
        raise InconsistentHeader(f"file too short for {ns} signal headers")
    columns: dict[str, list[str]] = {}
    for name, width in _SIGNAL_FIELDS:
        columns[name] = [_ascii(raw[pos + i * width:pos + (i + 1) * width]) for i in range(ns)]
        pos += width * ns
    signals = []
    for i in range(ns):
        sig = EdfSignalHeader(
            label=columns["label"][i], transducer=columns["transducer"][i],
            physical_dimension=columns["physical_dimension"][i],
            physical_min=_number(columns["physical_min"][i], "physical_min"),
            physical_max=_number(columns["physical_max"][i], "physical_max"),
            digital_min=_number(columns["digital_min"][i], "digital_min", int),
            digital_max=_number(columns["digital_max"][i], "digital_max", int),
            prefiltering=columns["prefiltering"][i],
            samples_per_record=_number(columns["samples_per_record"][i], "samples_per_record", int),
            reserved=columns["reserved"][i])
        if sig.digital_max <= sig.digital_min:
            raise DegenerateScale(f"signal {sig.label!r}: digital_max <= digital_min")
        if sig.physical_max == sig.physical_min:
            raise DegenerateScale(f"signal {sig.label!r}: physical_max == physical_min")
        if sig.samples_per_record < 1:
            raise InconsistentHeader(f"signal {sig.label!r}: samples per record must be positive")
        signals.append(sig)
    duration = _number(main["record_duration"], "record_duration")
    if duration <= 0:
        raise InconsistentHeader("record duration must be positive")
    return EdfHeader(version=main["version"], patient_id=main["patient_id"],
                     recording_id=main["recording_id"], start_date=main["start_date"],
                     start_time=main["start_time"], header_bytes=header_bytes, reserved=main["reserved"],
                     n_records=_number(main["n_records"], "n_records", int), record_duration=duration,
                     signals=signals)


def parse_edf(raw: bytes) -> Recording:
    """Decode an EDF byte buffer into a Recording in physical units."""
    header = parse_edf_header(raw)
    spr = {s.samples_per_record for s in header.signals}
    if len(spr) != 1:
        raise InconsistentHeader("signals with different sampling rates are not supported")
    per_record = sum(s.samples_per_record for s in header.signals)
    record_bytes = 2 * per_record
    body = len(raw) - header.header_bytes
    if header.n_records < 0:
        n_records = body // record_bytes
        if body % record_bytes:
            raise TruncatedRecord(n_records)
    else:
        n_records = header.n_records
        if body < n_records * record_bytes:
            raise TruncatedRecord(body // record_bytes)
    data = np.frombuffer(raw, dtype="<i2", count=n_records * per_record, offset=header.header_bytes)
    data = data.reshape(n_records, per_record)
    n = header.signals[0].samples_per_record
    samples = np.empty((header.ns, n_records * n), dtype=np.float64)
    for i, sig in enumerate(header.signals):
        digital = data[:, i * n:(i + 1) * n].reshape(-1).astype(np.float64)
        scale = (sig.physical_max - sig.physical_min) / (sig.digital_max - sig.digital_min)
        samples[i] = (digital - sig.digital_min) * scale + sig.physical_min
    fs = n / header.record_duration
    return Recording(tuple(s.label for s in header.signals), fs, samples, header=header)


def _fit(text: str, width: int) -> bytes:
    raw = text.encode("ascii", errors="replace")[:width]
    return raw.ljust(width, b" ")


def _format_number(x: float, width: int = 8, direction: int = 0) -> str:
    """Shortest decimal text of at most ``width`` chars; rounds outward if ``direction`` != 0."""
    if float(x).is_integer() and len(str(int(x))) <= width:
        return str(int(x))
    for decimals in range(width, -1, -1):
        q = 10.0 ** decimals
        if direction < 0:
            v = math.floor(x * q) / q
        elif direction > 0:
            v = math.ceil(x * q) / q
        else:
            v = round(x, decimals)
        text = f"{v:.{decimals}f}" if decimals else str(int(v))
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        if text in ("-0", ""):
            text = "0"
        if len(text) <= width:
            return text
    raise Unquantizable(f"value {x} does not fit in {width} characters")


def _default_header(rec: Recording, record_duration: float) -> EdfHeader:
    if rec.n_samples == 0:
        raise Unquantizable("recording holds no samples")
    spr = rec.fs * record_duration
    if abs(spr - round(spr)) > 1e-9:
        raise Unquantizable(f"fs={rec.fs} does not give whole samples per {record_duration}-s record")
    spr = int(round(spr))
    if rec.n_samples % spr:
        raise Unquantizable(f"{rec.n_samples} samples do not fill whole {spr}-sample records")
    signals = []
    for label, series in zip(rec.channels, rec.samples):
        lo, hi = float(series.min()), float(series.max())
        if hi <= lo:
            raise Unquantizable(f"channel {label!r} has a degenerate physical range")
        signals.append(EdfSignalHeader(label=label, physical_min=float(_format_number(lo, direction=-1)),
                                       physical_max=float(_format_number(hi, direction=1)),
                                       samples_per_record=spr))
    return EdfHeader(header_bytes=256 + 256 * len(signals), n_records=rec.n_samples // spr,
                     record_duration=record_duration, signals=signals)


def write_edf(rec: Recording, record_duration: float = 1.0) -> bytes:
    """Encode a Recording as EDF; reuses ``rec.header`` when present."""
    header = rec.header if rec.header is not None else _default_header(rec, record_duration)
    if rec.n_samples == 0:
        raise Unquantizable("recording holds no samples")
    if header.ns != len(rec.channels):
        raise InconsistentHeader("header signal count disagrees with the recording")
    spr = header.signals[0].samples_per_record
    if any(s.samples_per_record != spr for s in header.signals) or rec.n_samples % spr:
        raise Unquantizable("samples do not divide into whole records")
    n_records = rec.n_samples // spr
    out = bytearray()
    main_values = {
        "version": header.version, "patient_id": header.patient_id, "recording_id": header.recording_id,
        "start_date": header.start_date, "start_time": header.start_time,
        "header_bytes": str(256 + 256 * header.ns), "reserved": header.reserved,
        "n_records": str(n_records), "record_duration": _format_number(header.record_duration),
        "ns": str(header.ns),
    }
    for name, width in _MAIN_FIELDS:
        out += _fit(main_values[name], width)
    for name, width in _SIGNAL_FIELDS:
        for sig in header.signals:
            value = getattr(sig, name)
            text = _format_number(value) if isinstance(value, float) else str(value)
            out += _fit(text, width)
    digital = np.empty((n_records, header.ns * spr), dtype="<i2")
    for i, (sig, series) in enumerate(zip(header.signals, rec.samples)):
        pmin, pmax = float(_format_number(sig.physical_min)), float(_format_number(sig.physical_max))
        if pmax == pmin or sig.digital_max <= sig.digital_min:
            raise Unquantizable(f"channel {sig.label!r} has a degenerate scale")
        d = (series - pmin) * (sig.digital_max - sig.digital_min) / (pmax - pmin) + sig.digital_min
        d = np.clip(np.rint(d), sig.digital_min, sig.digital_max)
        digital[:, i * spr:(i + 1) * spr] = d.reshape(n_records, spr)
    out += digital.tobytes()
    return bytes(out)


def read_edf(path) -> Recording:
    return parse_edf(Path(path).read_bytes())


def quantization_step(sig: EdfSignalHeader) -> float:
    return (sig.physical_max - sig.physical_min) / (sig.digital_max - sig.digital_min)


# -- CSV -----------------------------------------------------------------------
def read_csv_recording(path, fs: float, channel_labels=None) -> Recording:
    """Read a comma-separated table with a header row of channel labels.

    ``channel_labels`` selects and orders columns; by default all columns are kept.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SignalIOError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    values = []
    for r, row in enumerate(rows[1:], start=1):
        if not row:
            continue
        if len(row) != len(header):
            raise RaggedRows(r)
        parsed = []
        for c, cell in enumerate(row):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise NonNumericCell(r, c, cell) from None
        values.append(parsed)
    samples = np.array(values, dtype=np.float64).reshape(len(values), len(header)).T
    rec = Recording(tuple(header), fs, samples)
    return rec.select(channel_labels) if channel_labels else rec


def write_csv_recording(rec: Recording, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(rec.channels)
        for row in rec.samples.T:
            writer.writerow([repr(float(v)) for v in row])
    return path


# -- annotations ---------------------------------------------------------------
def parse_annotations(text: str) -> list[SeizureInterval]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise SignalIOError(f"annotation line {lineno}: expected onset<TAB>offset")
        try:
            out.append(SeizureInterval(float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise SignalIOError(f"annotation line {lineno}: {exc}") from None
    return out


def read_annotations(path) -> list[SeizureInterval]:
    return parse_annotations(Path(path).read_text())


def format_annotations(intervals) -> str:
    return "".join(f"{iv.onset!r}\t{iv.offset!r}\n" for iv in intervals)


def header_fields(header: EdfHeader) -> dict:
    """Flat field dictionary, handy for field-by-field header comparison."""
    flat = {f.name: getattr(header, f.name) for f in fields(header) if f.name != "signals"}
    for i, sig in enumerate(header.signals):
        for f in fields(sig):
            flat[f"signal{i}.{f.name}"] = getattr(sig, f.name)
    return flat
