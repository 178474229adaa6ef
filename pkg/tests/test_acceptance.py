"""The ten acceptance criteria, each at its stated tolerance. Every test prints one PASS/FAIL line."""

import csv
import json
import time

import numpy as np
import pytest
from scipy import signal

from hcft import data
from hcft import tensor as T
from hcft.cli import main
from hcft.errors import SignalIOError
from hcft.gradcheck import MODEL_CHECKS, OP_CHECKS, TOLERANCE, summarize, timed_suite
from hcft.metrics import ConfusionMatrix, accuracy, cohen_kappa, fpr_per_hour, roc_auc, sens_spec
from hcft.model import ABLATION_SWITCHES, HCFT, ModelConfig, export_attention, miniature_config, param_count, \
    token_chain
from hcft.preprocess import FilterSpec, apply_zero_phase, design_butterworth, section_poles, \
    subject_split_70_30, zscore_per_channel
from hcft.signal_io import EdfHeader, EdfSignalHeader, Recording, header_fields, parse_edf, \
    quantization_step, write_edf
from hcft.synth import SynthSpec, gen_mi
from hcft.tensor import Tensor
from hcft.train import TrainConfig, evaluate, train
from oracles import labeling_disagreements, pairwise_auc

BUDGET_S = 300.0


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def gradcheck_run():
    results, seconds = timed_suite(range(20))
    return results, seconds


@pytest.fixture(scope="module")
def mi_runs():
    ds = gen_mi(SynthSpec(n_trials=400, n_channels=3, fs=250.0, window_s=2.0, snr=2.0, seed=0))
    ds.epochs = zscore_per_channel(ds.epochs).astype(np.float32)
    train_set, test_set = subject_split_70_30(ds, seed=0)
    runs = {}
    for norm in ("dyt", "ln"):
        start = time.perf_counter()
        result = train(ModelConfig(norm_strategy=norm), train_set,
                       TrainConfig(max_epochs=20, patience=20, target=0.95))
        acc = evaluate(result.model, test_set).accuracy
        runs[norm] = {"accuracy": acc, "epochs": len(result.history), "seconds": time.perf_counter() - start}
    return runs


def run_cli(tmp_path, *argv):
    out = tmp_path / "runs"
    code = main([*argv, "--out", str(out)])
    return code, sorted(out.glob(f"{argv[0]}-*"), key=lambda p: p.stat().st_mtime)[-1]


def test_criterion_1_gradient_correctness(gradcheck_run, verdict):
    results, seconds = gradcheck_run
    rows = summarize(results)
    failed = [name for name, _, ok in rows if not ok]
    worst = max(w for _, w, _ in rows)
    dead = sorted({f"{r.name}:{k}" for name in MODEL_CHECKS for r in results[name] for k in r.zero_grad_inputs})
    covered = set(results) == set(OP_CHECKS) | set(MODEL_CHECKS)
    ok = not failed and not dead and covered and seconds <= BUDGET_S and worst <= TOLERANCE
    verdict(1, ok, f"{len(rows)} checks x 20 seeds, worst rel err {worst:.2e}, {seconds:.0f}s, "
                   f"failed={failed} zero-grad={dead}")


def test_criterion_2_shape_chain(verdict):
    chain = token_chain(ModelConfig(in_channels=3, in_length=500))
    formula, p = [], 500
    for k, s in ((10, 2), (10, 2), (10, 2), (4, 2)):
        p = (p - k) // s + 1
        formula.append(p)
    concat = sum(formula)
    final = (concat - 75) // 15 + 1
    model = HCFT(ModelConfig(in_channels=3, in_length=500))
    with T.no_grad():
        maps = export_attention(model, Tensor(np.zeros((1, 3, 500))))
    live = [m["raw"].shape[0] for m in maps]
    ok = (chain["block"] == [500, 246, 119, 55] and chain["pooled"] == [246, 119, 55, 26] == formula
          and chain["concat"] == 446 == concat and chain["final"] == 25 == final
          and sorted(set(live), reverse=True) == [500, 246, 119, 55])
    verdict(2, ok, f"blocks {chain['block']} pooled {chain['pooled']} concat {chain['concat']} "
                   f"final {chain['final']}")


def test_criterion_3_parameter_anchor(verdict):
    base = ModelConfig(stage_depths=(1, 1, 2, 1))
    total = param_count(base)
    wide = param_count(ModelConfig(stage_depths=(1, 1, 2, 1), embed_dim=64, n_heads=4))
    rel = total / 88_987 - 1
    ratio = wide / total
    ok = abs(rel) <= 0.15 and 2.5 <= ratio <= 5
    verdict(3, ok, f"total {total} ({rel:+.2%} vs 88,987) with F={base.intermediate_filters} "
                   f"ffn_expansion={base.ffn_expansion}; D=64/H=4 gives {wide}, ratio {ratio:.2f}")


def test_criterion_4_desk_scale_learning(mi_runs, tmp_path, verdict):
    mi_ok = all(r["accuracy"] >= 0.9 and r["epochs"] <= 20 and r["seconds"] <= BUDGET_S for r in mi_runs.values())
    synth = ["--set", "synth.task=seizure", "--set", "synth.n_trials=100", "--set", "synth.n_subjects=2",
             "--set", "synth.n_channels=4", "--set", "synth.fs=128", "--set", "synth.window_s=5",
             "--set", "synth.snr=1.0"]
    code_s, synth_dir = run_cli(tmp_path, "synth", *synth)
    code_p, prep_dir = run_cli(tmp_path, "preprocess", "--config", str(synth_dir / "prep_overrides.cfg"),
                               "--set", f"data.input={synth_dir / 'recordings'}")
    code_t, train_dir = run_cli(tmp_path, "train", "--set", f"data.archive={prep_dir / 'epochs.epd'}",
                                "--set", "train.max_epochs=6")
    report = json.loads((train_dir / "metrics.json").read_text())
    auc, fpr = report["auc"], report["fpr_per_hour"]
    pipeline_ok = (code_s, code_p, code_t) == (0, 0, 0) and auc is not None and auc >= 0.95 and \
        fpr is not None and fpr >= 0
    mi_text = ", ".join(f"{n}: acc {r['accuracy']:.3f} in {r['epochs']} epochs {r['seconds']:.0f}s"
                        for n, r in mi_runs.items())
    verdict(4, mi_ok and pipeline_ok, f"MI [{mi_text}]; seizure pipeline AUC {auc}, FPR/h {fpr}, "
                                      f"smoothed {report['fpr_per_hour_smoothed']}")


def test_criterion_5_metric_oracles(verdict):
    cm = ConfusionMatrix(np.array([[45, 5], [10, 40]]))
    hand = [accuracy(cm) == 0.85, abs(cohen_kappa(cm) - 0.70) < 1e-15,
            accuracy(ConfusionMatrix(np.array([[5, 5], [5, 5]]))) == 0.5,
            cohen_kappa(ConfusionMatrix(np.array([[25, 25], [25, 25]]))) == 0.0,
            cohen_kappa(ConfusionMatrix(np.diag([4, 6]))) == 1.0,
            sens_spec(ConfusionMatrix(np.array([[98, 2], [1, 99]]))) == (0.99, 0.98),
            fpr_per_hour(0, 10) == 0.0, fpr_per_hour(2, 4) == 0.5, fpr_per_hour(1, 42.4) == 1 / 42.4,
            roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75]
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(300):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.integers(0, rng.integers(2, 50), n) / 7.0 if rng.random() < 0.5 else rng.random(n)
        worst = max(worst, abs(roc_auc(scores, labels) - pairwise_auc(scores, labels)))
    ok = all(hand) and worst <= 1e-12
    verdict(5, ok, f"{sum(hand)}/{len(hand)} hand cases exact; AUC vs pairwise oracle max diff {worst:.1e} "
                   f"over 300 draws, n<=200")


def test_criterion_6_filter_anchors(verdict):
    fs = 256.0
    t = np.arange(int(600 * fs)) / fs
    tone = np.sin(2 * np.pi * 60 * t)
    notch = design_butterworth(FilterSpec("bandstop", 6, (57.0, 63.0), fs))
    residual = np.sqrt(np.mean(apply_zero_phase(notch, tone) ** 2)) / np.sqrt(np.mean(tone ** 2))
    hp = design_butterworth(FilterSpec("highpass", 4, (1.0,), fs))
    offset = 100.0
    noise = np.random.default_rng(0).standard_normal(len(t))
    dc = abs(np.mean(apply_zero_phase(hp, offset + noise))) / offset
    designs = [notch, hp, design_butterworth(FilterSpec("bandstop", 6, (117.0, 123.0), fs)),
               design_butterworth(FilterSpec("highpass", 1, (1.0,), fs))]
    radius = max(np.max(np.abs(section_poles(sos))) for sos in designs)
    # independent check of the notch against scipy's own design
    ref = signal.sosfiltfilt(signal.butter(3, [57, 63], "bandstop", fs=fs, output="sos"), tone,
                             padtype="odd", padlen=18)
    agree = np.max(np.abs(apply_zero_phase(notch, tone) - ref)) < 1e-8
    ok = residual <= 0.01 and dc <= 1e-3 and radius < 1 and agree
    verdict(6, ok, f"60 Hz residual {residual:.2e} of RMS; DC {dc:.2e} of offset; max pole radius {radius:.6f}")


def test_criterion_7_labeling_oracle(verdict):
    bad, checked = labeling_disagreements(200, seed=7)
    verdict(7, bad == 0, f"{bad} disagreements over {checked} epochs on 200 random timelines")


def edf_case(rng):
    spr = int(rng.integers(2, 64))
    signals = []
    for i in range(int(rng.integers(1, 6))):
        lo = float(rng.uniform(-5000, -10))
        hi = float(rng.uniform(10, 5000))
        signals.append(EdfSignalHeader(f"CH{i}", "AgAgCl", "uV", round(lo, 1), round(hi, 1), -32768, 32767,
                                       "HP:0.5Hz", spr, ""))
    n_rec = int(rng.integers(1, 6))
    header = EdfHeader("0", "P X X X", "R X X X", "16.10.26", "10.00.00", 256 * (1 + len(signals)), "",
                       n_rec, 1.0, signals)
    samples = np.array([rng.uniform(s.physical_min, s.physical_max, spr * n_rec) for s in signals])
    return Recording(tuple(s.label for s in signals), float(spr), samples, header=header)


def test_criterion_8_edf_round_trip(verdict):
    rng = np.random.default_rng(8)
    header_ok = samples_ok = True
    worst = 0.0
    blobs = []
    for _ in range(50):
        rec = edf_case(rng)
        raw = write_edf(rec)
        blobs.append(raw)
        back = parse_edf(raw)
        header_ok &= header_fields(back.header) == header_fields(rec.header)
        steps = np.array([quantization_step(s) for s in rec.header.signals])[:, None]
        err = np.max(np.abs(back.samples - rec.samples) / steps)
        worst = max(worst, err)
        samples_ok &= err <= 1.0
    crashes = 0
    for raw in blobs[:10]:
        for cut in range(len(raw)):
            try:
                parse_edf(raw[:cut])
            except SignalIOError:
                pass
            except Exception:
                crashes += 1
        for _ in range(200):
            mutated = bytearray(raw)
            for pos in rng.integers(0, len(raw), int(rng.integers(1, 8))):
                mutated[pos] = int(rng.integers(0, 256))
            try:
                parse_edf(bytes(mutated))
            except SignalIOError:
                pass
            except Exception:
                crashes += 1
    ok = header_ok and samples_ok and crashes == 0
    verdict(8, ok, f"50 files field-exact={header_ok}, worst sample error {worst:.3f} steps; "
                   f"{crashes} crashes over every truncation and 2000 corruptions")


def test_criterion_9_ablation_harness(tmp_path, verdict):
    code, out = run_cli(tmp_path, "synth", "--set", "synth.n_trials=40")
    archive = out / "epochs.epd"
    code_a, abl = run_cli(tmp_path, "ablate", "--set", f"data.archive={archive}", "--set", "train.max_epochs=2",
                          "--set", "train.batch_size=32")
    with open(abl / "ablation.csv") as fh:
        rows = list(csv.DictReader(fh))
    names = [r["config"] for r in rows]
    params = {r["config"]: int(r["params"]) for r in rows}
    reports = [abl / f"{n}_metrics.json" for n in names]
    ok = (code, code_a) == (0, 0) and names == ["all_on"] + [f"no_{s}" for s in ABLATION_SWITCHES] and \
        len(rows) == 5 and all(p.is_file() for p in reports) and \
        all(params[f"no_{s}"] < params["all_on"] for s in ABLATION_SWITCHES)
    verdict(9, ok, "rows " + ", ".join(f"{n}={params[n]}" for n in names))


def test_criterion_10_norm_toggle(gradcheck_run, mi_runs, verdict):
    rng = np.random.default_rng(10)
    shapes = {}
    for norm in ("dyt", "ln"):
        for config in (ModelConfig(norm_strategy=norm), miniature_config(norm_strategy=norm)):
            model = HCFT(config).eval()
            x = Tensor(rng.standard_normal((2, config.in_channels, config.in_length)))
            with T.no_grad():
                out = model(x).data.shape
                maps = [m["raw"].shape for m in export_attention(model, x)]
            shapes.setdefault(config.in_length, []).append((out, maps, token_chain(config)))
    same_shapes = all(a == b for a, b in shapes.values())
    results, _ = gradcheck_run
    grads = {n: all(r.passed for r in results[n]) for n in
             ("cft_block_dyt", "cft_block_ln", "hcft_miniature_dyt", "hcft_miniature_ln")}
    learns = {n: r["accuracy"] >= 0.9 and r["epochs"] <= 20 and r["seconds"] <= BUDGET_S for n, r in mi_runs.items()}
    ok = same_shapes and all(grads.values()) and all(learns.values())
    verdict(10, ok, f"shapes identical={same_shapes}; gradcheck {grads}; MI run {learns}")
