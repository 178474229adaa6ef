"""Command-line entry point.

Usage::

    hcft <command> [--config PATH] [--seed N] [--out DIR] [--set key=value ...]

Commands: preprocess, synth, train, eval, ablate, gradcheck, paramcount, export-attn.
Every run writes into a fresh timestamped directory under ``--out`` and stores the
fully resolved configuration there as ``run.cfg``.

Exit codes: 0 success, 1 unexpected error, 2 configuration error, 3 data error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, data
from .config import RunConfig
from .errors import ConfigError, GeometryMismatch, HCFTError, MissingCheckpoint, NoRecordings
from .model import ABLATION_SWITCHES, HCFT, export_attention, param_report, write_attention_csv
from .preprocess import PREDICTION_CLASSES, prepare_recording, subject_split_70_30
from .tensor import Tensor, precision

log = logging.getLogger("hcft")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3, 4
COMMANDS = ("preprocess", "synth", "train", "eval", "ablate", "gradcheck", "paramcount", "export-attn")


class VerificationFailed(HCFTError):
    pass


# -- helpers -------------------------------------------------------------------
def run_directory(root, command: str) -> Path:
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    path = Path(root) / f"{command}-{stamp}"
    suffix = 1
    while path.exists():
        path = Path(root) / f"{command}-{stamp}-{suffix}"
        suffix += 1
    path.mkdir(parents=True)
    return path


def _require(cfg: RunConfig, key: str) -> Path:
    value = cfg.get(key)
    if not value:
        raise ConfigError(f"{key} must be set")
    return Path(value)


def _load_archive(cfg: RunConfig) -> data.EpochDataset:
    path = _require(cfg, "data.archive")
    if not path.is_file():
        raise FileNotFoundError(f"no epoch archive at {path}")
    return data.load(path)


def _resolve_geometry(cfg: RunConfig, ds: data.EpochDataset) -> None:
    """Fill model geometry and task-dependent defaults from the dataset unless set explicitly."""
    auto = {"model.in_channels": ds.n_channels, "model.in_length": ds.n_samples,
            "model.n_classes": max(2, int(ds.labels.max()) + 1)}
    if tuple(ds.class_names) == PREDICTION_CLASSES:
        auto["train.monitor"] = "auc"
        auto["train.class_weights"] = True
    for key, value in auto.items():
        if key not in cfg.explicit:
            cfg.values[key] = value


def _split(cfg: RunConfig, ds: data.EpochDataset):
    mode = cfg.get("data.split")
    if mode not in ("holdout", "chronological"):
        raise ConfigError(f"data.split={mode!r} is not a holdout mode")
    return subject_split_70_30(ds, cfg.get("run.seed"), cfg.get("data.train_fraction"),
                               chronological=mode == "chronological")


def _train_and_report(cfg, ds, out: Path, tag: str = ""):
    from .train import evaluate, run_loso, train

    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    name = f"{tag}_" if tag else ""
    if cfg.get("data.split") == "loso":
        report, results = run_loso(model_cfg, ds, train_cfg)
        for i, result in enumerate(results):
            checkpoint.save(result.model, out / f"{name}fold{i}.hcft")
            result.write_history(out / f"{name}fold{i}_history.csv")
        report.save(out / f"{name}metrics")
        return report, results[0].model
    train_set, test_set = _split(cfg, ds)
    result = train(model_cfg, train_set, train_cfg)
    checkpoint.save(result.model, out / f"{name}model.hcft")
    result.write_history(out / f"{name}history.csv")
    report = evaluate(result.model, test_set, train_cfg.batch_size)
    report.save(out / f"{name}metrics")
    return report, result.model


# -- commands ------------------------------------------------------------------
def cmd_preprocess(cfg: RunConfig, out: Path) -> int:
    from .signal_io import read_annotations, read_csv_recording, read_edf

    source = _require(cfg, "data.input")
    files = sorted(p for p in source.glob("*") if p.suffix.lower() in (".edf", ".csv")) if source.is_dir() else []
    if not files:
        raise NoRecordings(f"no .edf or .csv recordings in {source}")
    prep = cfg.prep_config()
    parts = []
    for path in files:
        try:
            if path.suffix.lower() == ".edf":
                rec = read_edf(path)
            else:
                rec = read_csv_recording(path, cfg.get("prep.csv_fs"))
            sidecar = path.with_suffix(".seizures")
            if sidecar.is_file():
                rec.annotations = read_annotations(sidecar)
            subject = path.stem.split("_")[0]
            parts.append(prepare_recording(rec, prep, subject, path.stem))
        except HCFTError as exc:
            exc.source = path
            raise
    ds = data.EpochDataset.concatenate(parts)
    data.save(ds, out / "epochs.epd")
    subjects = sorted(set(map(str, ds.subjects)))
    data.write_manifest({s: str(i) for i, s in enumerate(subjects)}, out / "manifest.txt")
    lines = [f"recordings={len(files)}", f"epochs={len(ds)}"]
    lines += [f"label.{ds.class_names[k] if k < len(ds.class_names) else k}={v}"
              for k, v in sorted(ds.label_counts().items())]
    lines += [f"excluded.{k}={v}" for k, v in sorted(ds.exclusions.items())]
    (out / "preprocess_report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_synth(cfg: RunConfig, out: Path) -> int:
    from .preprocess import zscore_per_channel
    from .signal_io import format_annotations, write_edf
    from .synth import gen_mi, gen_seizure

    spec = cfg.synth_spec()
    task = cfg.get("synth.task")
    if task == "mi":
        ds = gen_mi(spec)
        ds.epochs = zscore_per_channel(ds.epochs).astype(np.float32)
        data.save(ds, out / "epochs.epd")
        print(f"wrote {len(ds)} motor-imagery epochs to {out / 'epochs.epd'}")
    elif task == "seizure":
        synth = gen_seizure(spec)
        rec_dir = out / "recordings"
        rec_dir.mkdir()
        for rec_id, rec in synth.recordings.items():
            (rec_dir / f"{rec_id}.edf").write_bytes(write_edf(rec))
            (rec_dir / f"{rec_id}.seizures").write_text(format_annotations(rec.annotations))
        data.save(synth.dataset, out / "intended_labels.epd")
        policy = synth.policy
        (out / "prep_overrides.cfg").write_text(
            f"prep.preictal_s={policy.preictal_s}\nprep.sph_s={policy.sph_s}\nprep.buffer_s={policy.buffer_s}\n"
            f"prep.postictal_s={policy.postictal_s}\nprep.window_s={spec.window_s}\nprep.channels=all\n")
        counts = synth.dataset.label_counts()
        print(f"wrote {len(synth.recordings)} recordings to {rec_dir}; intended labels {counts}")
    else:
        raise ConfigError(f"synth.task must be 'mi' or 'seizure', got {task!r}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, out: Path) -> int:
    ds = _load_archive(cfg)
    _resolve_geometry(cfg, ds)
    (out / "run.cfg").write_text(cfg.to_text())
    report, _ = _train_and_report(cfg, ds, out)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, out: Path) -> int:
    from .train import evaluate

    path = Path(cfg.get("data.checkpoint")) if cfg.get("data.checkpoint") else None
    if path is None or not path.is_file():
        raise MissingCheckpoint(f"no checkpoint at {path}" if path else "data.checkpoint is not set")
    model = checkpoint.load(path)
    ds = _load_archive(cfg)
    if cfg.get("data.eval_split") == "test" and cfg.get("data.split") != "loso":
        ds = _split(cfg, ds)[1]
    report = evaluate(model, ds)
    report.save(out / "metrics")
    print(report.to_text(), end="")
    return EXIT_OK


def ablation_configs(cfg: RunConfig) -> list[tuple[str, dict]]:
    """All-on plus one configuration per disabled switch."""
    rows = [("all_on", {})]
    rows += [(f"no_{switch}", {f"model.{switch}": False}) for switch in ABLATION_SWITCHES]
    return rows


def cmd_ablate(cfg: RunConfig, out: Path) -> int:
    from .model import param_count

    ds = _load_archive(cfg)
    _resolve_geometry(cfg, ds)
    (out / "run.cfg").write_text(cfg.to_text())
    rows = []
    for tag, overrides in ablation_configs(cfg):
        variant = RunConfig(dict(cfg.values), set(cfg.explicit))
        for key, value in overrides.items():
            variant.values[key] = value
        params = param_count(variant.model_config())
        report, _ = _train_and_report(variant, ds, out, tag)
        rows.append({"config": tag, "params": params, "accuracy": report.accuracy, "kappa": report.kappa,
                     "auc": report.auc if report.auc is not None else float("nan")})
        log.info("ablation %s: params=%d acc=%.4f", tag, params, report.accuracy)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    width = max(len(r["config"]) for r in rows)
    print(f"{'config':<{width}}  {'params':>8}  {'accuracy':>8}  {'kappa':>7}  {'auc':>6}")
    for r in rows:
        print(f"{r['config']:<{width}}  {r['params']:>8d}  {r['accuracy']:>8.4f}  {r['kappa']:>7.4f}  "
              f"{r['auc']:>6.4f}")
    return EXIT_OK


def cmd_gradcheck(cfg: RunConfig, out: Path) -> int:
    from .gradcheck import run_suite, summarize

    seed = cfg.get("run.seed")
    results = run_suite(range(seed, seed + 20))
    lines = []
    failed = []
    for name, worst, passed in summarize(results):
        lines.append(f"{'PASS' if passed else 'FAIL'} {name} worst_rel_err={worst:.3e}")
        if not passed:
            failed.append(name)
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if failed:
        raise VerificationFailed(f"gradient check failed for: {', '.join(failed)}")
    return EXIT_OK


def cmd_paramcount(cfg: RunConfig, out: Path) -> int:
    config = cfg.model_config()
    model = HCFT(config)
    report = param_report(model, depth=3)
    total = sum(report.values())
    width = max(len(k) for k in report)
    lines = [f"{name:<{width}}  {count:>8d}" for name, count in report.items()]
    lines.append(f"{'total':<{width}}  {total:>8d}")
    lines.append(f"# embed_dim={config.embed_dim} n_heads={config.n_heads} "
                 f"stage_depths={','.join(map(str, config.stage_depths))} "
                 f"intermediate_filters={config.intermediate_filters} ffn_expansion={config.ffn_expansion}")
    (out / "paramcount.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_export_attn(cfg: RunConfig, out: Path) -> int:
    path = cfg.get("data.checkpoint")
    if path:
        model = checkpoint.load(path)
    else:
        with precision(np.float32):
            model = HCFT(cfg.model_config())
    c = model.config
    if cfg.get("data.archive"):
        ds = _load_archive(cfg)
        if ds.epochs.shape[1:] != (c.in_channels, c.in_length):
            raise GeometryMismatch("archive geometry does not match the model")
        x = ds.epochs[:16]
    else:
        x = np.random.default_rng(cfg.get("run.seed")).standard_normal((4, c.in_channels, c.in_length))
    maps = export_attention(model, Tensor(x, dtype=model.head.weight.dtype))
    paths = write_attention_csv(maps, out / "attention")
    for m, p in zip(maps, paths):
        print(f"stage {m['stage']} block {m['block']}: {m['raw'].shape[0]}x{m['raw'].shape[1]} -> {p.name}")
    return EXIT_OK


HANDLERS = {
    "preprocess": cmd_preprocess, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval,
    "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "paramcount": cmd_paramcount,
    "export-attn": cmd_export_attn,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hcft", description="HCFT EEG decoding pipeline")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key=value run configuration file")
    parser.add_argument("--seed", type=int, help="overrides run.seed (and model/train seeds)")
    parser.add_argument("--out", help="parent directory for the timestamped run directory")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, value = item.partition("=")
        cfg.set(key, value)
    if args.seed is not None:
        cfg.set("run.seed", args.seed)
    if args.out:
        cfg.set("run.out", args.out)
    for key in ("model.seed", "train.seed"):
        if key not in cfg.explicit:
            cfg.values[key] = cfg.get("run.seed")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        out = run_directory(cfg.get("run.out"), args.command)
        (out / "run.cfg").write_text(cfg.to_text())
        code = HANDLERS[args.command](cfg, out)
        print(f"outputs: {out}")
        return code
    except (ConfigError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VerificationFailed as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (HCFTError, OSError) as exc:
        where = f"{exc.source}: " if getattr(exc, "source", None) else ""
        print(f"data error: {where}{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
