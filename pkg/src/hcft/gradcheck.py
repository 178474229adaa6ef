"""Finite-difference verification of every differentiable operation and the miniature model.

Each check builds random float64 inputs for one seed, projects the op output onto a
random direction to get a scalar, and compares ``backward`` gradients against central
differences. Entries are compared with
``|a - n| / max(|a|, |n|, floor)`` where ``floor = 1e-3 * max|n|`` keeps
near-zero entries from amplifying rounding noise.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from . import tensor as T
from .model import CFTBlock, HCFT, dyt, miniature_config
from .tensor import Tensor

TOLERANCE = 1e-4
ABS_FLOOR = 1e-6           # central-difference rounding noise sits near 1e-11 at eps=1e-5


@dataclass
class CheckResult:
    name: str
    seed: int
    worst: float
    zero_grad_inputs: list[str]

    @property
    def passed(self) -> bool:
        return self.worst <= TOLERANCE


def _scale_aware_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = float(np.max(np.abs(numeric))) if numeric.size else 0.0
    return T.relative_error(analytic, numeric, floor=max(1e-3 * scale, ABS_FLOOR))


def directional_difference(f: Callable[[Tensor], Tensor], x: Tensor, direction: np.ndarray,
                           eps: float = 1e-5) -> float:
    """Central difference of scalar ``f`` along ``direction``; compares against ``grad . direction``."""
    base = x.data.copy()
    with T.no_grad():
        x.data = base + eps * direction
        hi = float(f(x).data.reshape(-1)[0])
        x.data = base - eps * direction
        lo = float(f(x).data.reshape(-1)[0])
    x.data = base
    return (hi - lo) / (2.0 * eps)


def check_function(name: str, build: Callable[[np.random.Generator], tuple], seed: int,
                   max_probes: int | None = None, eps: float = 1e-5) -> CheckResult:
    """``build(rng)`` returns (forward, inputs) where forward maps the input tensors to a tensor.

    Without ``max_probes`` every entry of every input is differenced. With it, each
    input gets one random-direction difference (covers all entries at once) plus
    ``max_probes`` coordinate probes.
    """
    rng = np.random.default_rng(seed)
    with T.precision(np.float64):
        forward, inputs = build(rng)
        named = list(inputs.items())
        out = forward(**inputs)
        direction = Tensor(rng.standard_normal(out.shape))

        def scalar(**kw):
            return (forward(**kw) * direction).sum()

        for _, t in named:
            t.grad = None
        T.backward(scalar(**inputs))
        worst, zero = 0.0, []
        for key, t in named:
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            if not np.any(analytic):
                zero.append(key)
            f = lambda x, key=key: scalar(**{**inputs, key: x})
            probes = None
            if max_probes is not None and t.size > max_probes:
                u = rng.standard_normal(t.shape)
                numeric_dir = directional_difference(f, t, u, eps)
                worst = max(worst, _scale_aware_error(np.array([np.sum(analytic * u)]), np.array([numeric_dir])))
                probes = rng.choice(t.size, size=max_probes, replace=False)
            numeric = T.finite_diff_grad(f, t, eps, probes)
            if probes is not None:
                analytic = analytic.reshape(-1)[probes]
                numeric = numeric.reshape(-1)[probes]
            worst = max(worst, _scale_aware_error(analytic, numeric))
    return CheckResult(name, seed, worst, zero)


def _leaf(rng, *shape, scale=1.0):
    return T.parameter(scale * rng.standard_normal(shape))


# -- per-op builders -----------------------------------------------------------
def _binary(op):
    def build(rng):
        return (lambda a, b: op(a, b)), {"a": _leaf(rng, 3, 4), "b": _leaf(rng, 4)}
    return build


def _unary(op, scale=1.0):
    def build(rng):
        return (lambda a: op(a)), {"a": _leaf(rng, 3, 5, scale=scale)}
    return build


def _matmul(rng):
    return (lambda a, b: T.matmul(a, b)), {"a": _leaf(rng, 2, 3, 4), "b": _leaf(rng, 4, 5)}


def _matmul_batched(rng):
    return (lambda a, b: T.matmul(a, b)), {"a": _leaf(rng, 2, 3, 4), "b": _leaf(rng, 2, 4, 2)}


def _getitem(rng):
    idx = (np.array([0, 2, 2]), np.array([1, 0, 1]))
    return (lambda a: a[idx]), {"a": _leaf(rng, 3, 2)}


def _concat(rng):
    return (lambda a, b: T.concat([a, b], axis=1)), {"a": _leaf(rng, 2, 3), "b": _leaf(rng, 2, 4)}


def _conv1d(groups, cin, cout, k, padding="same", stride=1):
    def build(rng):
        shape = {"depthwise": (cin, k), "pointwise": (cout, cin), "full": (cout, cin, k)}[groups]
        return ((lambda x, w, b: nn.conv1d(x, w, b, stride, padding, groups)),
                {"x": _leaf(rng, 2, cin, 9), "w": _leaf(rng, *shape), "b": _leaf(rng, cout)})
    return build


def _conv2d(groups, cin, cout, kernel, padding):
    def build(rng):
        kh, kw = kernel
        shape = {"depthwise": (cin, kh, kw), "pointwise": (cout, cin), "full": (cout, cin, kh, kw)}[groups]
        return ((lambda x, w, b: nn.conv2d(x, w, b, 1, padding, groups)),
                {"x": _leaf(rng, 2, cin, 3, 8), "w": _leaf(rng, *shape), "b": _leaf(rng, cout)})
    return build


def _avg_pool(rng):
    return (lambda x: nn.avg_pool(x, 3, 2)), {"x": _leaf(rng, 2, 3, 10)}


def _batch_norm(rng):
    def forward(x, g, b):
        return nn.batch_norm(x, g, b, np.zeros(3), np.ones(3), True, 0.1, 1e-5)
    return forward, {"x": _leaf(rng, 4, 3, 5), "g": _leaf(rng, 3), "b": _leaf(rng, 3)}


def _layer_norm(rng):
    return (lambda x, g, b: nn.layer_norm(x, g, b)), {"x": _leaf(rng, 2, 3, 6), "g": _leaf(rng, 6),
                                                      "b": _leaf(rng, 6)}


def _dropout(rng):
    mask_seed = int(rng.integers(1 << 30))
    forward = lambda x: nn.dropout(x, 0.25, True, np.random.default_rng(mask_seed))
    return forward, {"x": _leaf(rng, 4, 6)}


def _attention(cross: bool):
    def build(rng):
        D, H = 4, 2
        ws = {k: _leaf(rng, D, D, scale=0.5) for k in ("wq", "wk", "wv", "wo")}
        bs = {k: _leaf(rng, D, scale=0.1) for k in ("bq", "bv", "bo")}
        inputs = {"q": _leaf(rng, 2, 3, D), **ws, **bs}
        if cross:
            inputs["kv"] = _leaf(rng, 2, 5, D)

        def forward(q, wq, wk, wv, wo, bq, bv, bo, kv=None):
            return nn.multi_head_attention(q, q if kv is None else kv, wq, wk, wv, wo, H, bq, None, bv, bo)
        return forward, inputs
    return build


def _positional(rng):
    return (lambda x, table: nn.positional_encoding_add(x, table)), {"x": _leaf(rng, 2, 3, 4),
                                                                     "table": _leaf(rng, 5, 4)}


def _dyt(rng):
    return ((lambda x, alpha, gamma, beta: dyt(x, alpha, gamma, beta)),
            {"x": _leaf(rng, 2, 3, 4, scale=2.0), "alpha": _leaf(rng, 1), "gamma": _leaf(rng, 4),
             "beta": _leaf(rng, 4)})


def _cross_entropy(rng):
    from .train import cross_entropy

    labels = rng.integers(0, 3, size=5)
    return (lambda logits: cross_entropy(logits, labels).reshape(1)), {"logits": _leaf(rng, 5, 3)}


def _module_builder(make_module, make_input):
    """Check input and every parameter tensor of a module in one pass."""
    def build(rng):
        module = make_module(rng)
        params = dict(module.named_parameters())
        x = make_input(rng)
        keys = {name: f"p{i}" for i, name in enumerate(params)}

        def forward(x, **kw):
            for name, key in keys.items():
                _set_attr(module, name, kw[key])
            return module(x)
        return forward, {"x": x, **{keys[n]: p for n, p in params.items()}}
    return build


def _set_attr(module, dotted: str, value) -> None:
    parts = dotted.split(".")
    target = module
    for p in parts[:-1]:
        target = target[int(p)] if p.isdigit() else getattr(target, p)
    last = parts[-1]
    if last.isdigit():
        target[int(last)] = value
    else:
        setattr(target, last, value)


def _cft_block(norm: str):
    def make(rng):
        config = miniature_config(in_channels=3, in_length=32, norm_strategy=norm,
                                  seed=int(rng.integers(1 << 30)))
        return CFTBlock(config, 3, 32, True, np.random.default_rng(config.seed))
    return _module_builder(make, lambda rng: _leaf(rng, 1, 3, 32))


def _model(norm: str):
    def make(rng):
        return HCFT(miniature_config(norm_strategy=norm, seed=int(rng.integers(1 << 30))))
    return _module_builder(make, lambda rng: _leaf(rng, 2, 2, 64))


OP_CHECKS: dict[str, Callable] = {
    "add": _binary(T.add),
    "sub": _binary(T.sub),
    "mul": _binary(T.mul),
    "neg": _unary(T.neg),
    "scale": _unary(lambda a: T.scale(a, -1.7)),
    "tanh": _unary(T.tanh),
    "exp": _unary(T.exp),
    "gelu": _unary(T.gelu, scale=2.0),
    "sum": _unary(lambda a: T.sum_(a, axis=1, keepdims=True)),
    "mean": _unary(lambda a: T.mean(a, axis=0)),
    "reshape": _unary(lambda a: T.reshape(a, (5, 3))),
    "transpose": _unary(lambda a: T.transpose(a, (1, 0))),
    "getitem": _getitem,
    "concat": _concat,
    "matmul": _matmul,
    "matmul_batched": _matmul_batched,
    "softmax": _unary(T.softmax_lastdim, scale=2.0),
    "log_softmax": _unary(T.log_softmax_lastdim, scale=2.0),
    "conv1d_depthwise": _conv1d("depthwise", 3, 3, 5),
    "conv1d_pointwise": _conv1d("pointwise", 3, 4, 1),
    "conv1d_full_valid_stride2": _conv1d("full", 2, 3, 3, "valid", 2),
    "conv2d_full": _conv2d("full", 1, 3, (1, 5), "same"),
    "conv2d_depthwise": _conv2d("depthwise", 3, 3, (3, 1), "valid"),
    "conv2d_pointwise": _conv2d("pointwise", 3, 2, (1, 1), "same"),
    "avg_pool": _avg_pool,
    "batch_norm": _batch_norm,
    "layer_norm": _layer_norm,
    "dropout": _dropout,
    "self_attention": _attention(False),
    "cross_attention": _attention(True),
    "positional_encoding": _positional,
    "dyt": _dyt,
    "cross_entropy": _cross_entropy,
}

MODEL_CHECKS: dict[str, Callable] = {
    "cft_block_dyt": _cft_block("dyt"),
    "cft_block_ln": _cft_block("ln"),
    "hcft_miniature_dyt": _model("dyt"),
    "hcft_miniature_ln": _model("ln"),
}


def run_suite(seeds=range(20), checks: dict | None = None, model_probes: int = 1,
              progress: Callable[[CheckResult], None] | None = None) -> dict[str, list[CheckResult]]:
    """Run every check for every seed; returns results grouped by check name."""
    checks = checks if checks is not None else {**OP_CHECKS, **MODEL_CHECKS}
    results: dict[str, list[CheckResult]] = {}
    for name, build in checks.items():
        probes = model_probes if name in MODEL_CHECKS else None
        for seed in seeds:
            r = check_function(name, build, seed, probes)
            results.setdefault(name, []).append(r)
            if progress:
                progress(r)
    return results


def summarize(results: dict[str, list[CheckResult]]) -> list[tuple[str, float, bool]]:
    """(name, worst relative error over seeds, passed) per check."""
    return [(name, max(r.worst for r in rs), all(r.passed for r in rs)) for name, rs in results.items()]


def timed_suite(seeds=range(20)) -> tuple[dict, float]:
    start = time.perf_counter()
    results = run_suite(seeds)
    return results, time.perf_counter() - start
