"""Run configuration: flat ``section.key=value`` text covering every pipeline stage."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig, _format_value, _parse_like
from .preprocess import LabelingPolicy, PrepConfig
from .synth import SynthSpec
from .train import TrainConfig

PREP_DEFAULTS = {
    "window_s": 5.0,
    "stride_s": 0.0,                 # 0 means stride == window
    "notch_bands": "57-63;117-123",
    "notch_order": 6,
    "highpass_hz": 1.0,
    "highpass_order": 4,
    "channels": ",".join(PrepConfig().channels),
    "csv_fs": 256.0,
    "zscore": True,
    "preictal_s": 1800.0,
    "sph_s": 180.0,
    "buffer_s": 14400.0,
    "postictal_s": 30.0,
    "sph_mode": "gap",
}

DATA_DEFAULTS = {
    "input": "",                     # directory of recordings for preprocess
    "archive": "",                   # epoch archive for train/eval/ablate/export-attn
    "checkpoint": "",
    "split": "holdout",              # holdout, chronological or loso
    "eval_split": "test",            # test or all
    "train_fraction": 0.7,
}

SYNTH_DEFAULTS = {
    "task": "mi",                    # mi or seizure
    "n_trials": 400,
    "n_channels": 3,
    "fs": 250.0,
    "window_s": 2.0,
    "band": "8,12",
    "snr": 2.0,
    "n_subjects": 1,
    "n_seizures": 4,
}


def _section_defaults() -> dict[str, dict]:
    model = {f.name: getattr(ModelConfig(), f.name) for f in dataclasses.fields(ModelConfig)}
    train = {f.name: getattr(TrainConfig(), f.name) for f in dataclasses.fields(TrainConfig)}
    return {"model": model, "train": train, "prep": dict(PREP_DEFAULTS), "data": dict(DATA_DEFAULTS),
            "synth": dict(SYNTH_DEFAULTS), "run": {"seed": 0, "out": "runs"}}


class RunConfig:
    """Typed view over the flat key space; remembers which keys were set explicitly."""

    def __init__(self, values: dict[str, object] | None = None, explicit: set[str] | None = None):
        self.defaults = _section_defaults()
        self.values = {f"{s}.{k}": v for s, keys in self.defaults.items() for k, v in keys.items()}
        self.explicit: set[str] = set(explicit or ())
        for key, raw in (values or {}).items():
            self.set(key, raw)

    def set(self, key: str, raw) -> None:
        key = key.strip()
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            self.values[key] = _parse_like(self.values[key], raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
        self.explicit.add(key)

    def get(self, key: str):
        return self.values[key]

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    # -- parsing and rendering -------------------------------------------------
    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, _, raw = line.partition("=")
            cfg.set(key, raw.strip())
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def to_text(self) -> str:
        return "".join(f"{k}={_format_value(v)}\n" for k, v in sorted(self.values.items()))

    # -- typed sections --------------------------------------------------------
    def model_config(self) -> ModelConfig:
        values = self.section("model")
        try:
            config = ModelConfig(**values)
            config.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model config: {exc}") from None
        return config

    def train_config(self) -> TrainConfig:
        config = TrainConfig(**self.section("train"))
        try:
            config.validate()
        except ValueError as exc:
            raise ConfigError(f"invalid train config: {exc}") from None
        return config

    def prep_config(self) -> PrepConfig:
        p = self.section("prep")
        try:
            bands = tuple(tuple(float(e) for e in band.split("-")) for band in p["notch_bands"].split(";")
                          if band.strip())
            policy = LabelingPolicy(p["preictal_s"], p["sph_s"], p["buffer_s"], p["postictal_s"], p["sph_mode"])
        except ValueError as exc:
            raise ConfigError(f"invalid preprocessing config: {exc}") from None
        channels = tuple(c.strip() for c in p["channels"].split(",") if c.strip())
        if channels == ("all",):
            channels = ()
        return PrepConfig(window_s=p["window_s"], stride_s=p["stride_s"] or None, notch_bands=bands,
                          notch_order=p["notch_order"], highpass_hz=p["highpass_hz"],
                          highpass_order=p["highpass_order"], channels=channels, policy=policy,
                          zscore=p["zscore"])

    def synth_spec(self) -> SynthSpec:
        s = self.section("synth")
        try:
            band = tuple(float(v) for v in s["band"].split(","))
            return SynthSpec(n_trials=s["n_trials"], n_channels=s["n_channels"], fs=s["fs"],
                             window_s=s["window_s"], band=band, snr=s["snr"], seed=self.get("run.seed"),
                             n_subjects=s["n_subjects"], n_seizures=s["n_seizures"])
        except ValueError as exc:
            raise ConfigError(f"invalid synth config: {exc}") from None
