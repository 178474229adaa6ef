import numpy as np
import pytest
from scipy import signal

from hcft.data import dumps
from hcft.metrics import roc_auc
from hcft.preprocess import PREICTAL, label_prediction_epochs, normalize_annotations, segment_epochs
from hcft.synth import SynthSpec, gen_mi, gen_seizure, pink_noise


def bandpower(x, fs, lo, hi):
    f, p = signal.periodogram(x, fs=fs, axis=-1)
    return p[..., (f >= lo) & (f <= hi)].sum(-1)


def mi_oracle_accuracy(ds):
    power = bandpower(ds.epochs.astype(np.float64), ds.fs, 8, 12)
    guess = (power[:, -1] > power[:, 0]).astype(int)
    return float(np.mean(guess == ds.labels))


def test_mi_is_deterministic_and_balanced():
    spec = SynthSpec(n_trials=20, seed=4)
    a, b = gen_mi(spec), gen_mi(spec)
    assert dumps(a) == dumps(b)
    assert dumps(gen_mi(SynthSpec(n_trials=20, seed=5))) != dumps(a)
    assert a.label_counts() == {0: 20, 1: 20} and a.epochs.shape == (40, 3, 500)


def test_mi_bandpower_oracle_limits():
    assert mi_oracle_accuracy(gen_mi(SynthSpec(n_trials=200, snr=50.0))) == 1.0
    chance = mi_oracle_accuracy(gen_mi(SynthSpec(n_trials=500, snr=0.0, seed=1)))
    assert abs(chance - 0.5) <= 0.05


def test_mi_classes_differ_only_in_band():
    ds = gen_mi(SynthSpec(n_trials=400, snr=2.0, seed=2))
    f, p = signal.periodogram(ds.epochs[:, 0].astype(np.float64), fs=ds.fs, axis=-1)
    mean0, mean1 = p[ds.labels == 0].mean(0), p[ds.labels == 1].mean(0)
    outside = (f >= 1) & ((f < 6) | (f > 14))
    ratio_db = 10 * np.log10(mean0[outside] / mean1[outside])
    assert np.max(np.abs(ratio_db)) <= 3.0
    inside = (f >= 8) & (f <= 12)
    assert mean0[inside].sum() > 4 * mean1[inside].sum()


def test_pink_noise_slope():
    x = pink_noise(np.random.default_rng(0), (200, 4096))
    assert np.allclose(np.sqrt(np.mean(x * x, axis=-1)), 1.0)
    f, p = signal.periodogram(x, axis=-1)
    p = p.mean(0)
    slope = np.polyfit(np.log(f[10:1000]), np.log(p[10:1000]), 1)[0]
    assert -1.15 < slope < -0.85


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(snr=-1.0)
    with pytest.raises(ValueError):
        SynthSpec(band=(8.0, 200.0))
    with pytest.raises(ValueError):
        gen_mi(SynthSpec(n_channels=1))


@pytest.mark.parametrize("n_trials, n_subjects, n_seizures", [(30, 1, 4), (40, 3, 2), (7, 2, 5), (1, 1, 3)])
def test_seizure_labels_survive_relabeling(n_trials, n_subjects, n_seizures):
    synth = gen_seizure(SynthSpec(n_trials=n_trials, n_subjects=n_subjects, n_seizures=n_seizures,
                                  n_channels=2, fs=64.0, seed=3))
    ds = synth.dataset
    assert int(np.sum(ds.labels == PREICTAL)) == n_trials and int(np.sum(ds.labels == 0)) == n_trials
    for rec_id, rec in synth.recordings.items():
        epochs = segment_epochs(rec, ds.window_s)
        relabeled = label_prediction_epochs(epochs, normalize_annotations(rec.annotations), synth.policy)
        mine = ds.recordings == rec_id
        assert np.array_equal(relabeled.starts, ds.starts[mine])
        assert np.array_equal(relabeled.labels, ds.labels[mine])
        assert np.array_equal(relabeled.epochs.astype(np.float32), ds.epochs[mine])


def test_seizure_bandpower_separates_at_high_snr():
    synth = gen_seizure(SynthSpec(n_trials=40, n_channels=2, fs=128.0, snr=20.0, seed=0))
    ds = synth.dataset
    power = bandpower(ds.epochs.astype(np.float64), ds.fs, 3, 8).sum(-1)
    assert roc_auc(power, ds.labels == PREICTAL) == 1.0


def test_seizure_is_deterministic():
    spec = SynthSpec(n_trials=10, n_channels=2, fs=64.0, seed=9)
    assert dumps(gen_seizure(spec).dataset) == dumps(gen_seizure(spec).dataset)
