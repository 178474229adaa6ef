"""Independent reference checkers shared by the unit and acceptance tests.

Each one recomputes a quantity the slow, obvious way and never touches the code it checks.
"""

import numpy as np


def pairwise_auc(scores, labels):
    """Count positive-over-negative pairs directly, ties worth half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_force_label(start, length, seizures, policy):
    """Sample each second of the epoch at its midpoint and test zone membership directly."""
    ticks = [start + i + 0.5 for i in range(int(length))]
    inside = lambda t, lo, hi: lo <= t < hi
    if any(inside(t, on, off) for t in ticks for on, off in seizures):
        return "ictal"
    if any(inside(t, off, off + policy.postictal_s) for t in ticks for _, off in seizures):
        return "postictal"
    for on, _ in seizures:
        hi = on - (policy.sph_s if policy.sph_mode == "gap" else 0)
        if all(inside(t, hi - policy.preictal_s, hi) for t in ticks):
            return "preictal"
    if any(inside(t, on - policy.buffer_s, off + policy.buffer_s) for t in ticks for on, off in seizures):
        return "buffer"
    return "interictal"


def random_timeline(rng):
    """Integer-second policy, seizure list and duration; ticks at t + 0.5 never sit on a boundary."""
    from hcft.preprocess import LabelingPolicy

    policy = LabelingPolicy(preictal_s=float(rng.integers(10, 60)), sph_s=float(rng.integers(0, 10)),
                            buffer_s=float(rng.integers(0, 120)), postictal_s=float(rng.integers(0, 20)),
                            sph_mode=str(rng.choice(["gap", "horizon"])))
    seizures, t = [], int(rng.integers(0, 200))
    for _ in range(int(rng.integers(0, 5))):
        onset = t + int(rng.integers(1, 300))
        offset = onset + int(rng.integers(1, 60))
        seizures.append((onset, offset))
        t = offset
    return policy, seizures, t + 300


def labeling_disagreements(n_timelines, seed):
    """Epochs where label_prediction_epochs and the brute-force labeler differ, over random timelines."""
    from hcft.preprocess import INTERICTAL, PREICTAL, label_prediction_epochs, normalize_annotations, \
        segment_epochs
    from hcft.signal_io import Recording, SeizureInterval

    rng = np.random.default_rng(seed)
    bad = checked = 0
    for _ in range(n_timelines):
        policy, seizures, duration = random_timeline(rng)
        window, stride = int(rng.integers(1, 8)), int(rng.integers(1, 8))
        rec = Recording(("c0",), 1.0, np.zeros((1, duration)))
        ds = segment_epochs(rec, float(window), float(stride))
        ivs = normalize_annotations([SeizureInterval(float(a), float(b)) for a, b in seizures])
        labeled = label_prediction_epochs(ds, ivs, policy)
        got = dict(zip(labeled.starts.tolist(), labeled.labels.tolist()))
        excluded = dict(labeled.exclusions)
        for s in ds.starts.tolist():
            want = brute_force_label(s, window, seizures, policy)
            checked += 1
            if want in ("preictal", "interictal"):
                bad += got.get(s) != (PREICTAL if want == "preictal" else INTERICTAL)
            else:
                bad += s in got
                excluded[want] = excluded.get(want, 0) - 1
        bad += sum(abs(v) for v in excluded.values())
    return bad, checked
