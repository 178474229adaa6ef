"""Neural-network building blocks on top of :mod:`hcft.tensor`.

Functional ops (``conv2d``, ``avg_pool``, ``batch_norm`` ...) carry their own
backward rules; thin :class:`Module` wrappers own the parameters.
Convolutions use the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ChannelMismatch, HeadDivisibility, InvalidRate, KernelTooLarge, SequenceTooLong
from .tensor import Tensor

GROUPS = ("full", "depthwise", "pointwise")


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _pad_amount(mode: str, k: int) -> tuple[int, int]:
    if mode == "valid":
        return 0, 0
    if mode == "same":
        return (k - 1) // 2, k // 2
    raise ValueError(f"unknown padding mode {mode!r}")


def output_length(length: int, kernel: int, stride: int) -> int:
    """Valid-padding output length ``floor((L - k) / s) + 1``."""
    if kernel > length:
        raise KernelTooLarge(f"kernel {kernel} exceeds input length {length}")
    return (length - kernel) // stride + 1


# -- convolution -------------------------------------------------------------
def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1,
           padding="same", groups: str = "full") -> Tensor:
    """2D cross-correlation of ``x`` (B, Cin, H, W).

    Weight layouts: full ``(Cout, Cin, kh, kw)``, depthwise ``(C, kh, kw)``,
    pointwise ``(Cout, Cin)``. ``padding`` is ``"same"``, ``"valid"`` or a
    per-axis pair of those.
    """
    if groups not in GROUPS:
        raise ValueError(f"groups must be one of {GROUPS}")
    xd, wd = x.data, weight.data
    if xd.ndim != 4:
        raise ChannelMismatch(f"conv2d expects (B, C, H, W), got {xd.shape}")
    B, C, H, W = xd.shape
    if groups == "pointwise":
        if wd.ndim != 2 or wd.shape[1] != C:
            raise ChannelMismatch(f"pointwise weight {wd.shape} does not match {C} input channels")
        return _pointwise2d(x, weight, bias)
    if groups == "depthwise":
        if wd.ndim != 3 or wd.shape[0] != C:
            raise ChannelMismatch(f"depthwise weight {wd.shape} does not match {C} input channels")
        kh, kw = wd.shape[1:]
    else:
        if wd.ndim != 4 or wd.shape[1] != C:
            raise ChannelMismatch(f"full weight {wd.shape} does not match {C} input channels")
        kh, kw = wd.shape[2:]
    sh, sw = _pair(stride)
    pad_modes = (padding, padding) if isinstance(padding, str) else tuple(padding)
    ph = _pad_amount(pad_modes[0], kh)
    pw = _pad_amount(pad_modes[1], kw)
    Hp, Wp = H + sum(ph), W + sum(pw)
    Ho = output_length(Hp, kh, sh)
    Wo = output_length(Wp, kw, sw)
    xp = np.pad(xd, ((0, 0), (0, 0), ph, pw)) if (sum(ph) or sum(pw)) else xd

    def window(arr, i, j):
        return arr[:, :, i:i + sh * (Ho - 1) + 1:sh, j:j + sw * (Wo - 1) + 1:sw]

    if groups == "depthwise":
        out = np.zeros((B, C, Ho, Wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                out += window(xp, i, j) * wd[None, :, i, j, None, None]
    else:
        acc = np.zeros((wd.shape[0], B, Ho, Wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                acc += np.tensordot(wd[:, :, i, j], window(xp, i, j), axes=([1], [1]))
        out = acc.transpose(1, 0, 2, 3)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        gx = gw = gb = None
        if x.requires_grad:
            gxp = np.zeros(xp.shape, dtype=g.dtype)
        if groups == "depthwise":
            if weight.requires_grad:
                gw = np.empty_like(wd)
            for i in range(kh):
                for j in range(kw):
                    if weight.requires_grad:
                        gw[:, i, j] = (g * window(xp, i, j)).sum(axis=(0, 2, 3))
                    if x.requires_grad:
                        window(gxp, i, j)[...] += g * wd[None, :, i, j, None, None]
        else:
            if weight.requires_grad:
                gw = np.empty_like(wd)
            for i in range(kh):
                for j in range(kw):
                    if weight.requires_grad:
                        gw[:, :, i, j] = np.tensordot(g, window(xp, i, j), axes=([0, 2, 3], [0, 2, 3]))
                    if x.requires_grad:
                        window(gxp, i, j)[...] += np.tensordot(
                            wd[:, :, i, j], g, axes=([0], [1])).transpose(1, 0, 2, 3)
        if x.requires_grad:
            gx = gxp[:, :, ph[0]:ph[0] + H, pw[0]:pw[0] + W]
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return T._node(out, parents, back, f"conv2d_{groups}")


def _pointwise2d(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    B, C, H, W = x.shape
    out = x.reshape(B, C, H * W)
    out = T.matmul(weight.reshape(1, *weight.shape), out)
    out = out.reshape(B, weight.shape[0], H, W)
    if bias is not None:
        out = out + bias.reshape(weight.shape[0], 1, 1)
    return out


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: str = "same", groups: str = "full") -> Tensor:
    """1D cross-correlation of ``x`` (B, Cin, L).

    Weight layouts: full ``(Cout, Cin, k)``, depthwise ``(C, k)``, pointwise
    ``(Cout, Cin)``.
    """
    if x.ndim != 3:
        raise ChannelMismatch(f"conv1d expects (B, C, L), got {x.shape}")
    B, C, L = x.shape
    x4 = x.reshape(B, C, 1, L)
    if groups == "depthwise":
        w4 = weight.reshape(weight.shape[0], 1, weight.shape[1])
    elif groups == "full":
        w4 = weight.reshape(weight.shape[0], weight.shape[1], 1, weight.shape[2])
    else:
        w4 = weight
    out = conv2d(x4, w4, bias, stride=(1, stride), padding=("valid", padding), groups=groups)
    return out.reshape(B, out.shape[1], out.shape[3])


# -- pooling -----------------------------------------------------------------
def avg_pool(x: Tensor, kernel: int, stride: int) -> Tensor:
    """Mean over sliding windows of the last axis (valid padding)."""
    L = x.shape[-1]
    Lo = output_length(L, kernel, stride)
    xd = x.data
    span = stride * (Lo - 1) + 1
    out = np.zeros(xd.shape[:-1] + (Lo,), dtype=xd.dtype)
    for j in range(kernel):
        out += xd[..., j:j + span:stride]
    out /= kernel

    def back(g):
        gx = np.zeros(xd.shape, dtype=g.dtype)
        share = g / kernel
        for j in range(kernel):
            gx[..., j:j + span:stride] += share
        return (gx,)

    return T._node(out, (x,), back, "avg_pool")


# -- normalization -----------------------------------------------------------
def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization of ``x`` (B, C, ...) over every other axis.

    In training mode the running statistics are updated in place.
    """
    xd = x.data
    axes = (0,) + tuple(range(2, xd.ndim))
    bshape = (1, -1) + (1,) * (xd.ndim - 2)
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        n = xd.size // xd.shape[1]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
        n = None
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * inv.reshape(bshape)
    gd, bd = gamma.data.reshape(bshape), beta.data.reshape(bshape)
    out = xhat * gd + bd

    def back(g):
        gg = (g * xhat).sum(axis=axes) if gamma.requires_grad else None
        gb = g.sum(axis=axes) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gd
            if training:
                gx = (inv.reshape(bshape) / n) * (
                    n * gxhat
                    - gxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape))
            else:
                gx = gxhat * inv.reshape(bshape)
        return gx, gg, gb

    return T._node(out, (x, gamma, beta), back, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    D = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    var = xd.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = (inv / D) * (D * gxhat - gxhat.sum(axis=-1, keepdims=True)
                              - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        return gx, gg, gb

    return T._node(out, (x, gamma, beta), back, "layer_norm")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = rng if rng is not None else np.random.default_rng()
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return T._node(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# -- attention ---------------------------------------------------------------
def scaled_dot_product(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q kᵀ / sqrt(d)) v over the last two axes; returns (out, weights)."""
    d = q.shape[-1]
    scores = T.matmul(q, k.transpose(*range(k.ndim - 2), k.ndim - 1, k.ndim - 2)) * (1.0 / math.sqrt(d))
    weights = T.softmax_lastdim(scores)
    return T.matmul(weights, v), weights


def multi_head_attention(q_src: Tensor, kv_src: Tensor, w_q: Tensor, w_k: Tensor, w_v: Tensor,
                         w_o: Tensor, n_heads: int, b_q: Tensor | None = None, b_k: Tensor | None = None,
                         b_v: Tensor | None = None, b_o: Tensor | None = None,
                         return_weights: bool = False):
    """Multi-head attention with queries from ``q_src`` and keys/values from ``kv_src``.

    Projection weights are (D, D) and applied on the right (``x @ W``).
    """
    B, Pq, D = q_src.shape
    Bk, Pk, Dk = kv_src.shape
    if D % n_heads:
        raise HeadDivisibility(f"model dim {D} is not divisible by {n_heads} heads")
    if (Bk, Dk) != (B, D):
        raise ChannelMismatch(f"query source {q_src.shape} and key/value source {kv_src.shape} disagree")
    dh = D // n_heads

    def project(x, w, b, P):
        y = T.matmul(x, w)
        if b is not None:
            y = y + b
        return y.reshape(B, P, n_heads, dh).transpose(0, 2, 1, 3)

    q = project(q_src, w_q, b_q, Pq)
    k = project(kv_src, w_k, b_k, Pk)
    v = project(kv_src, w_v, b_v, Pk)
    heads, weights = scaled_dot_product(q, k, v)
    merged = heads.transpose(0, 2, 1, 3).reshape(B, Pq, D)
    out = T.matmul(merged, w_o)
    if b_o is not None:
        out = out + b_o
    return (out, weights) if return_weights else out


def positional_encoding_add(x: Tensor, table: Tensor) -> Tensor:
    P = x.shape[1]
    if P > table.shape[0]:
        raise SequenceTooLong(f"sequence of {P} tokens exceeds positional table of {table.shape[0]}")
    rows = table if P == table.shape[0] else table[:P]
    return x + rows


# -- modules -----------------------------------------------------------------
class Module:
    """Minimal parameter container.

    Trainable parameters are ``Tensor`` attributes with ``requires_grad``;
    other ``Tensor`` attributes are buffers (e.g. batch-norm statistics).
    Child modules may live in attributes or in lists.
    """

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Module, Tensor)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif value.requires_grad:
                yield prefix + name, value

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")
            elif not value.requires_grad:
                yield prefix + name, value

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b.data for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        own.update(self.named_buffers())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, t in own.items():
            value = np.asarray(state[name])
            if value.shape != t.shape:
                raise ValueError(f"{name}: shape {value.shape} does not match {t.shape}")
            t.data = value.astype(t.dtype).copy()

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def to_dtype(self, dtype) -> "Module":
        for _, t in list(self.named_parameters()) + list(self.named_buffers()):
            t.data = t.data.astype(dtype)
        return self


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return T.parameter(rng.uniform(-bound, bound, size=shape))


class Conv1d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel: int, groups: str = "full",
                 padding: str = "same", stride: int = 1, rng: np.random.Generator | None = None,
                 bias: bool = True):
        rng = rng or np.random.default_rng(0)
        if groups == "depthwise" and in_channels != out_channels:
            raise ChannelMismatch("depthwise convolution keeps the channel count")
        if groups == "pointwise" and kernel != 1:
            raise ValueError("pointwise convolution has kernel 1")
        self.groups, self.padding, self.stride = groups, padding, stride
        if groups == "depthwise":
            self.weight = uniform_init(rng, (in_channels, kernel), kernel)
        elif groups == "pointwise":
            self.weight = uniform_init(rng, (out_channels, in_channels), in_channels)
        else:
            self.weight = uniform_init(rng, (out_channels, in_channels, kernel), in_channels * kernel)
        self.bias = T.parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel, groups: str = "full",
                 padding="same", stride=1, rng: np.random.Generator | None = None, bias: bool = True):
        rng = rng or np.random.default_rng(0)
        kh, kw = _pair(kernel)
        if groups == "depthwise" and in_channels != out_channels:
            raise ChannelMismatch("depthwise convolution keeps the channel count")
        if groups == "pointwise" and (kh, kw) != (1, 1):
            raise ValueError("pointwise convolution has kernel (1, 1)")
        self.groups, self.padding, self.stride = groups, padding, stride
        if groups == "depthwise":
            self.weight = uniform_init(rng, (in_channels, kh, kw), kh * kw)
        elif groups == "pointwise":
            self.weight = uniform_init(rng, (out_channels, in_channels), in_channels)
        else:
            self.weight = uniform_init(rng, (out_channels, in_channels, kh, kw), in_channels * kh * kw)
        self.bias = T.parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class BatchNorm(Module):
    def __init__(self, num_features: int, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(num_features))
        self.beta = T.parameter(np.zeros(num_features))
        self.running_mean = Tensor(np.zeros(num_features), dtype=np.float64)
        self.running_var = Tensor(np.ones(num_features), dtype=np.float64)
        self.momentum, self.eps = momentum, eps

    def forward(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.running_mean.data, self.running_var.data,
                          self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = T.parameter(np.ones(dim))
        self.beta = T.parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        if not 0.0 <= rate < 1.0:
            raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng or np.random.default_rng(0)

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.rate, self.training, self.rng)


class Linear(Module):
    """``x @ W + b`` with ``W`` of shape (in, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        self.weight = uniform_init(rng, (in_features, out_features), in_features)
        self.bias = T.parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        return T.matmul(x, self.weight) + self.bias


class MultiHeadAttention(Module):
    """No key bias: it shifts every score in a row equally, so softmax cancels it."""

    def __init__(self, dim: int, n_heads: int, rng: np.random.Generator | None = None):
        if dim % n_heads:
            raise HeadDivisibility(f"model dim {dim} is not divisible by {n_heads} heads")
        rng = rng or np.random.default_rng(0)
        self.n_heads = n_heads
        self.w_q = uniform_init(rng, (dim, dim), dim)
        self.w_k = uniform_init(rng, (dim, dim), dim)
        self.w_v = uniform_init(rng, (dim, dim), dim)
        self.w_o = uniform_init(rng, (dim, dim), dim)
        self.b_q = T.parameter(np.zeros(dim))
        self.b_v = T.parameter(np.zeros(dim))
        self.b_o = T.parameter(np.zeros(dim))

    def forward(self, q_src: Tensor, kv_src: Tensor | None = None, return_weights: bool = False):
        kv_src = q_src if kv_src is None else kv_src
        return multi_head_attention(q_src, kv_src, self.w_q, self.w_k, self.w_v, self.w_o, self.n_heads,
                                    self.b_q, None, self.b_v, self.b_o, return_weights)


class PositionalEncoding(Module):
    def __init__(self, max_len: int, dim: int):
        self.table = T.parameter(np.zeros((max_len, dim)))

    def forward(self, x: Tensor) -> Tensor:
        return positional_encoding_add(x, self.table)
