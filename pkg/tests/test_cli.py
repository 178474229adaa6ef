import json

import numpy as np
import pytest

import hcft.gradcheck
from hcft import data
from hcft.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, EXIT_VERIFY, main
from hcft.config import RunConfig
from hcft.gradcheck import CheckResult

FAST = ["--set", "train.max_epochs=2", "--set", "train.batch_size=16"]


def run(tmp_path, *argv):
    out = tmp_path / "runs"
    code = main([*argv, "--out", str(out)])
    dirs = sorted(out.glob(f"{argv[0]}-*"), key=lambda p: p.stat().st_mtime) if out.exists() else []
    return code, dirs[-1] if dirs else None


@pytest.fixture
def mi_archive(tmp_path):
    code, out = run(tmp_path, "synth", "--set", "synth.n_trials=24", "--set", "synth.window_s=2.0")
    assert code == EXIT_OK
    return out / "epochs.epd"


def test_paramcount_itemizes(tmp_path, capsys):
    code, out = run(tmp_path, "paramcount", "--set", "model.stage_depths=1,1,2,1")
    assert code == EXIT_OK
    rows = dict(line.rsplit(None, 1) for line in (out / "paramcount.txt").read_text().splitlines()
                if not line.startswith("#"))
    total = int(rows.pop("total"))
    assert total == sum(int(v) for v in rows.values()) and abs(total / 88_987 - 1) <= 0.15
    _, deeper = run(tmp_path, "paramcount", "--set", "model.stage_depths=1,1,4,1")
    deeper_total = int(deeper.joinpath("paramcount.txt").read_text().split("total")[1].split()[0])
    assert deeper_total > total
    assert (out / "run.cfg").is_file()


def test_config_and_data_errors(tmp_path, capsys):
    assert run(tmp_path, "paramcount", "--set", "model.nope=1")[0] == EXIT_CONFIG
    assert run(tmp_path, "paramcount", "--set", "model.embed_dim")[0] == EXIT_CONFIG
    assert run(tmp_path, "train", "--set", f"data.archive={tmp_path / 'none.epd'}")[0] == EXIT_DATA
    assert run(tmp_path, "train")[0] == EXIT_CONFIG                       # archive unset
    empty = tmp_path / "empty"
    empty.mkdir()
    assert run(tmp_path, "preprocess", "--set", f"data.input={empty}")[0] == EXIT_DATA
    assert "NoRecordings" in capsys.readouterr().err
    assert run(tmp_path, "eval", "--set", "data.checkpoint=nowhere.hcft")[0] == EXIT_DATA


def test_train_then_eval_reproduces_metrics(tmp_path, mi_archive):
    code, out = run(tmp_path, "train", "--set", f"data.archive={mi_archive}", *FAST)
    assert code == EXIT_OK
    trained = json.loads((out / "metrics.json").read_text())
    assert (out / "model.hcft").is_file() and (out / "history.csv").read_text().startswith("epoch,lr")
    resolved = RunConfig.load(out / "run.cfg")
    assert resolved.get("model.in_length") == 500 and resolved.get("model.in_channels") == 3
    code, ev = run(tmp_path, "eval", "--set", f"data.archive={mi_archive}",
                   "--set", f"data.checkpoint={out / 'model.hcft'}")
    assert code == EXIT_OK
    assert json.loads((ev / "metrics.json").read_text())["accuracy"] == trained["accuracy"]


def test_loso_train_reports_every_fold(tmp_path):
    code, out = run(tmp_path, "synth", "--set", "synth.n_trials=18", "--set", "synth.n_subjects=3")
    assert code == EXIT_OK
    code, tr = run(tmp_path, "train", "--set", f"data.archive={out / 'epochs.epd'}", "--set", "data.split=loso",
                   "--set", "train.max_epochs=1", "--set", "train.batch_size=16")
    assert code == EXIT_OK
    report = json.loads((tr / "metrics.json").read_text())
    assert len(report["folds"]) == 3 and len(list(tr.glob("fold*.hcft"))) == 3


def test_seizure_preprocess_matches_generator(tmp_path):
    synth_args = ["--set", "synth.task=seizure", "--set", "synth.n_trials=12", "--set", "synth.n_subjects=2",
                  "--set", "synth.fs=64", "--set", "synth.n_channels=2", "--set", "synth.window_s=2"]
    code, out = run(tmp_path, "synth", *synth_args)
    assert code == EXIT_OK
    intended = data.load(out / "intended_labels.epd")
    prep = ["--config", str(out / "prep_overrides.cfg"), "--set", f"data.input={out / 'recordings'}",
            "--set", "prep.highpass_order=2"]
    code, pre = run(tmp_path, "preprocess", *prep)
    assert code == EXIT_OK
    ds = data.load(pre / "epochs.epd")
    assert np.array_equal(ds.labels, intended.labels) and np.array_equal(ds.starts, intended.starts)
    report = (pre / "preprocess_report.txt").read_text()
    assert "label.interictal=12" in report and "label.preictal=12" in report
    _, again = run(tmp_path, "preprocess", *prep)
    assert (again / "epochs.epd").read_bytes() == (pre / "epochs.epd").read_bytes()


def test_export_attention(tmp_path, mi_archive, capsys):
    code, out = run(tmp_path, "export-attn", "--set", f"data.archive={mi_archive}",
                    "--set", "model.in_length=500")
    assert code == EXIT_OK
    files = sorted((out).glob("attention*"))
    assert files and "stage" in capsys.readouterr().out


def test_gradcheck_failure_exits_with_verification_code(tmp_path, monkeypatch):
    fake = {"tanh": [CheckResult("tanh", 0, 0.5, [])], "add": [CheckResult("add", 0, 1e-9, [])]}
    monkeypatch.setattr(hcft.gradcheck, "run_suite", lambda seeds: fake)
    code, out = run(tmp_path, "gradcheck")
    assert code == EXIT_VERIFY
    lines = (out / "gradcheck.txt").read_text().splitlines()
    assert lines[0].startswith("FAIL tanh") and lines[1].startswith("PASS add")
