"""Loss, optimizer, schedule and the training/evaluation loops."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import nn
from . import tensor as T
from .data import EpochDataset
from .errors import GeometryMismatch, LabelOutOfRange, ShapeMismatch
from .metrics import MetricsReport, aggregate_folds, report_from_predictions, roc_auc
from .model import HCFT, ModelConfig
from .preprocess import PREDICTION_CLASSES, fold_indices, loso_split, stratified_holdout
from .tensor import Tensor

log = logging.getLogger(__name__)


# -- loss ----------------------------------------------------------------------
def cross_entropy(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Mean negative log-likelihood; weighted runs normalize by the summed weights."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} and labels {labels.shape} disagree")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"labels must lie in [0, {k})")
    picked = T.log_softmax_lastdim(logits)[np.arange(len(labels)), labels]
    if class_weights is None:
        return -picked.mean()
    w = np.asarray(class_weights, dtype=logits.dtype)[labels]
    return -(picked * Tensor(w / w.sum(), dtype=logits.dtype)).sum()


def inverse_frequency_weights(labels, n_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes).astype(np.float64)
    weights = np.where(counts > 0, counts.sum() / (n_classes * np.maximum(counts, 1)), 0.0)
    return weights


# -- optimizer and schedule ----------------------------------------------------
@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.00125
    betas: tuple[float, float] = (0.675, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray], state: OptimizerState,
               lr: float | None = None) -> None:
    """One in-place AdamW update with decoupled weight decay and bias correction."""
    if len(params) != len(grads):
        raise ShapeMismatch("one gradient per parameter is required")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    lr = state.lr if lr is None else lr
    b1, b2 = state.betas
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeMismatch(f"gradient {g.shape} does not match parameter {p.shape}")
        p *= 1 - lr * state.weight_decay
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class AdamW:
    def __init__(self, params: list[Tensor], lr: float = 1e-3, weight_decay: float = 0.00125,
                 betas=(0.675, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(lr, weight_decay, tuple(betas), eps)

    def step(self, lr: float | None = None) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        adamw_step([p.data for p in self.params], grads, self.state, lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(t: int, t_max: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine annealing with warm restarts every ``t_max`` epochs."""
    if t_max < 1:
        raise ValueError("t_max must be at least 1")
    return lr_min + 0.5 * (lr0 - lr_min) * (1 + math.cos(math.pi * (t % t_max) / t_max))


# -- training ------------------------------------------------------------------
@dataclass
class TrainConfig:
    max_epochs: int = 250
    batch_size: int = 64
    t_max: int = 32
    lr: float = 1e-3
    lr_min: float = 0.0
    weight_decay: float = 0.00125
    beta1: float = 0.675
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 20
    monitor: str = "accuracy"           # accuracy, auc or loss
    val_fraction: float = 0.1
    class_weights: bool = False
    target: float = 0.0                 # stop once the monitored metric reaches this (0 disables)
    bn_recalibration: int = 128         # training epochs used to refresh BN statistics (0 disables)
    seed: int = 0

    def validate(self) -> None:
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ValueError("batch_size, patience and max_epochs must be at least 1")
        if self.monitor not in ("accuracy", "auc", "loss"):
            raise ValueError(f"unknown monitor {self.monitor!r}")
        if self.bn_recalibration < 0:
            raise ValueError("bn_recalibration must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")

    @classmethod
    def from_strings(cls, values: dict[str, str]) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise KeyError(f"unknown train keys: {sorted(unknown)}")
        default = cls()
        parsed = {}
        for k, raw in values.items():
            kind = type(getattr(default, k))
            if kind is bool:
                parsed[k] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            else:
                parsed[k] = kind(raw)
        return cls(**parsed)


@dataclass
class TrainResult:
    model: HCFT
    history: list[dict]
    best_epoch: int
    best_metric: float
    seconds: float

    def write_history(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["epoch", "lr", "train_loss", "val_metric"])
            writer.writeheader()
            for row in self.history:
                writer.writerow({k: row[k] for k in writer.fieldnames})
        return path


def check_geometry(config: ModelConfig, dataset: EpochDataset) -> None:
    if dataset.epochs.shape[1:] != (config.in_channels, config.in_length):
        raise GeometryMismatch(f"dataset epochs are {dataset.epochs.shape[1:]}, model expects "
                               f"({config.in_channels}, {config.in_length})")


def predict_proba(model: HCFT, epochs: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Eval-mode class probabilities, (N, n_classes)."""
    was_training = model.training
    model.eval()
    out = []
    dtype = model.head.weight.dtype
    try:
        with T.no_grad():
            for i in range(0, len(epochs), batch_size):
                logits = model(Tensor(epochs[i:i + batch_size], dtype=dtype)).data.astype(np.float64)
                logits -= logits.max(axis=1, keepdims=True)
                p = np.exp(logits)
                out.append(p / p.sum(axis=1, keepdims=True))
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros((0, model.config.n_classes))


def _monitor_value(monitor: str, probs: np.ndarray, labels: np.ndarray) -> float:
    if monitor == "accuracy":
        return float(np.mean(probs.argmax(axis=1) == labels))
    if monitor == "auc":
        try:
            return roc_auc(probs[:, 1], labels == 1)
        except ValueError:
            return float(np.mean(probs.argmax(axis=1) == labels))
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-12))))


def recalibrate_batch_norm(model: HCFT, x: np.ndarray, batch_size: int = 64) -> None:
    """Overwrite BN running statistics with a cumulative average over ``x`` at the current weights.

    With only a handful of batches per epoch, the exponential running average still
    remembers statistics from much earlier weights and evaluation suffers for it.
    """
    bns = [m for m in model.modules() if isinstance(m, nn.BatchNorm)]
    if not bns or len(x) < 2:
        return
    saved = [m.momentum for m in bns]
    model.train()
    try:
        with T.no_grad():
            for k, i in enumerate(range(0, len(x), batch_size)):
                chunk = x[i:i + batch_size]
                if len(chunk) < 2:
                    break
                for m in bns:
                    m.momentum = 1.0 / (k + 1)
                model(Tensor(chunk, dtype=x.dtype))
    finally:
        for m, momentum in zip(bns, saved):
            m.momentum = momentum


def train(model_config: ModelConfig, dataset: EpochDataset, config: TrainConfig = TrainConfig(),
          validation: EpochDataset | None = None, dtype=np.float32, progress=None) -> TrainResult:
    """Mini-batch AdamW training with early stopping on a held-out validation split.

    Without an explicit ``validation`` set, a stratified ``val_fraction`` of the
    training epochs is carved off deterministically. Best-validation weights are
    restored before returning; ties on the monitored metric go to the lower
    validation loss.
    """
    config.validate()
    check_geometry(model_config, dataset)
    if validation is None and config.val_fraction > 0:
        keep, held = stratified_holdout(dataset.labels, config.val_fraction, config.seed)
        dataset, validation = dataset.subset(keep), dataset.subset(held)
    with T.precision(dtype):
        model = HCFT(model_config)
    model.to_dtype(dtype)
    optimizer = AdamW(model.parameters(), config.lr, config.weight_decay, (config.beta1, config.beta2),
                      config.eps)
    weights = inverse_frequency_weights(dataset.labels, model_config.n_classes) if config.class_weights else None
    x_all = dataset.epochs.astype(dtype, copy=False)
    y_all = dataset.labels
    higher_is_better = config.monitor != "loss"
    best, best_epoch, best_state, since_best = (-math.inf, -math.inf), -1, None, 0
    history = []
    rng = np.random.default_rng(config.seed)
    start = time.perf_counter()
    for epoch in range(config.max_epochs):
        lr = cosine_lr(epoch, config.t_max, config.lr, config.lr_min)
        model.train()
        order = rng.permutation(len(dataset))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            if len(idx) < 2 and len(order) > 1:
                continue                    # batch norm needs more than one sample
            optimizer.zero_grad()
            loss = cross_entropy(model(Tensor(x_all[idx], dtype=dtype)), y_all[idx], weights)
            T.backward(loss)
            optimizer.step(lr)
            losses.append(loss.item())
        train_loss = float(np.mean(losses)) if losses else float("nan")
        if config.bn_recalibration:
            recalibrate_batch_norm(model, x_all[order[:config.bn_recalibration]], config.batch_size)
        if validation is not None and len(validation):
            probs = predict_proba(model, validation.epochs.astype(dtype, copy=False), config.batch_size)
            metric = _monitor_value(config.monitor, probs, validation.labels)
            val_loss = _monitor_value("loss", probs, validation.labels)
        else:
            metric = val_loss = -train_loss
        history.append({"epoch": epoch + 1, "lr": lr, "train_loss": train_loss, "val_metric": metric})
        # a saturated metric (AUC stuck at 1.0, say) still improves through the validation loss
        score = (metric if higher_is_better else -metric, -val_loss)
        if score > best:
            best, best_epoch, since_best = score, epoch + 1, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            since_best += 1
        if progress:
            progress(history[-1])
        log.info("epoch %d lr=%.6f loss=%.4f val=%.4f", epoch + 1, lr, train_loss, metric)
        if since_best >= config.patience:
            break
        if config.target and higher_is_better and metric >= config.target:
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    best_metric = best[0] if higher_is_better else -best[0]
    return TrainResult(model, history, best_epoch, best_metric, time.perf_counter() - start)


# -- evaluation ----------------------------------------------------------------
def evaluate(model: HCFT, dataset: EpochDataset, batch_size: int = 64,
             smoothing: tuple[int, int] = (2, 3)) -> MetricsReport:
    """Eval-mode metric suite; seizure-prediction sets also report FPR/h."""
    check_geometry(model.config, dataset)
    dtype = model.head.weight.dtype
    probs = predict_proba(model, dataset.epochs.astype(dtype, copy=False), batch_size)
    pred = probs.argmax(axis=1)
    hours = None
    if tuple(dataset.class_names) == PREDICTION_CLASSES:
        hours = float(np.sum(dataset.labels == 0)) * dataset.window_s / 3600.0
    scores = probs[:, 1] if model.config.n_classes == 2 else None
    return report_from_predictions(dataset.labels, pred, scores, hours, dataset.recordings,
                                   dataset.starts, dataset.window_s, smoothing, model.config.n_classes)


def run_loso(model_config: ModelConfig, dataset: EpochDataset, config: TrainConfig = TrainConfig(),
             dtype=np.float32) -> tuple[MetricsReport, list[TrainResult]]:
    """Leave-one-subject-out: train per fold, evaluate on the held-out subject, aggregate."""
    reports, results = [], []
    for _, held_out in loso_split(dataset):
        train_idx, test_idx = fold_indices(dataset, held_out)
        result = train(model_config, dataset.subset(train_idx), config, dtype=dtype)
        reports.append(evaluate(result.model, dataset.subset(test_idx), config.batch_size))
        results.append(result)
    return aggregate_folds(reports), results
