"""The Hierarchical Convolutional Fusion Transformer.

Layout conventions: raw EEG enters as (B, C, T). Between blocks and stages the
sequence travels channel-first as (B, D, P) so pooling and pointwise maps act
on the last axis; blocks emit tokens as (B, P, D).
"""

from __future__ import annotations

import dataclasses
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .errors import ConfigIncompatible, HeadDivisibility, ShapeMismatch
from .nn import Module
from .tensor import Tensor

NORM_STRATEGIES = ("dyt", "ln")
ABLATION_SWITCHES = ("self_attn", "cross_attn", "stage_concat", "final_mha")


@dataclass
class ModelConfig:
    in_channels: int = 3
    in_length: int = 500
    n_classes: int = 2
    embed_dim: int = 32
    n_heads: int = 2
    stage_depths: tuple[int, ...] = (1, 1, 4, 1)
    intermediate_filters: int = 8
    ffn_expansion: float = 1.5
    norm_strategy: str = "dyt"
    dropout: float = 0.25
    conv_kernel: int = 15
    stage_pools: tuple[tuple[int, int], ...] = ((10, 2), (10, 2), (10, 2), (4, 2))
    final_pool: tuple[int, int] = (75, 15)
    positional: str = "first_block"
    dyt_alpha: float = 0.5
    self_attn: bool = True
    cross_attn: bool = True
    stage_concat: bool = True
    final_mha: bool = True
    seed: int = 0

    def __post_init__(self):
        self.stage_depths = tuple(int(d) for d in self.stage_depths)
        self.stage_pools = tuple((int(k), int(s)) for k, s in self.stage_pools)
        self.final_pool = (int(self.final_pool[0]), int(self.final_pool[1]))
        self.norm_strategy = self.norm_strategy.lower()

    def validate(self) -> None:
        if self.embed_dim % self.n_heads:
            raise HeadDivisibility(f"embed_dim {self.embed_dim} is not divisible by n_heads {self.n_heads}")
        if any(d < 0 for d in self.stage_depths) or not any(self.stage_depths):
            raise ConfigIncompatible("stage depths must be >= 0 with at least one nonzero stage")
        if len(self.stage_pools) != len(self.stage_depths):
            raise ConfigIncompatible("one pooling spec per stage is required")
        if self.norm_strategy not in NORM_STRATEGIES:
            raise ConfigIncompatible(f"norm_strategy must be one of {NORM_STRATEGIES}")
        if self.positional not in ("first_block", "every_block"):
            raise ConfigIncompatible("positional must be 'first_block' or 'every_block'")
        if self.in_length < 1 or self.in_channels < 1 or self.n_classes < 2:
            raise ConfigIncompatible("in_length, in_channels >= 1 and n_classes >= 2 are required")
        token_chain(self)

    @property
    def ffn_hidden(self) -> int:
        return int(round(self.ffn_expansion * self.embed_dim))

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    # canonical key=value text, used by checkpoints and run configs
    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            lines.append(f"{f.name}={_format_value(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = raw.strip()
        return cls.from_strings(values)

    @classmethod
    def from_strings(cls, values: dict[str, str]) -> "ModelConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise KeyError(f"unknown model keys: {sorted(unknown)}")
        default = cls()
        parsed = {k: _parse_like(getattr(default, k), v) for k, v in values.items()}
        return cls(**parsed)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        if v and isinstance(v[0], tuple):
            return ";".join(",".join(str(i) for i in item) for item in v)
        return ",".join(str(i) for i in v)
    return str(v)


def _parse_like(default, raw: str):
    if isinstance(raw, type(default)) and not isinstance(default, tuple):
        return raw
    if isinstance(default, tuple) and isinstance(raw, (tuple, list)):
        return tuple(tuple(int(p) for p in item) if isinstance(item, (tuple, list)) else int(item)
                     for item in raw)
    raw = str(raw).strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        if default and isinstance(default[0], tuple):
            return tuple(tuple(int(p) for p in item.split(",")) for item in raw.split(";") if item)
        return tuple(int(p) for p in raw.split(",") if p)
    return raw


def token_chain(config: ModelConfig) -> dict:
    """Closed-form token counts: block lengths per stage, pooled lengths, concat and final."""
    length = config.in_length
    block_lengths, pooled = [], []
    for i, (k, s) in enumerate(config.stage_pools):
        block_lengths.append(length)
        if k > length:
            raise ConfigIncompatible(f"stage {i + 1} pooling kernel {k} exceeds {length} tokens")
        length = (length - k) // s + 1
        pooled.append(length)
    if config.stage_concat:
        concat = sum(pooled)
        k, s = config.final_pool
        if k > concat:
            raise ConfigIncompatible(f"long-context pooling kernel {k} exceeds {concat} tokens")
        final = (concat - k) // s + 1
    else:
        concat = pooled[-1]
        final = concat
    return {"block": block_lengths, "pooled": pooled, "concat": concat, "final": final}


# -- components --------------------------------------------------------------
class DyT(Module):
    """``gamma * tanh(alpha * x) + beta`` with scalar alpha and per-feature gamma, beta."""

    def __init__(self, dim: int, alpha: float = 0.5):
        self.alpha = T.parameter(np.full(1, alpha))
        self.gamma = T.parameter(np.ones(dim))
        self.beta = T.parameter(np.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        return dyt(x, self.alpha, self.gamma, self.beta)


def dyt(x: Tensor, alpha: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return T.tanh(x * alpha) * gamma + beta


def make_norm(config: ModelConfig, dim: int) -> Module:
    if config.norm_strategy == "ln":
        return nn.LayerNorm(dim)
    return DyT(dim, config.dyt_alpha)


class TemporalBranch(Module):
    """Depthwise k-tap conv per input channel, then pointwise projection to D."""

    def __init__(self, in_channels: int, dim: int, kernel: int, dropout: float, rng):
        self.depthwise = nn.Conv1d(in_channels, in_channels, kernel, groups="depthwise", rng=rng, bias=False)
        self.bn1 = nn.BatchNorm(in_channels)
        self.pointwise = nn.Conv1d(in_channels, dim, 1, groups="pointwise", rng=rng, bias=False)
        self.bn2 = nn.BatchNorm(dim)
        self.drop = nn.Dropout(dropout, rng)

    def depthwise_features(self, x: Tensor) -> Tensor:
        return T.gelu(self.bn1(self.depthwise(x)))

    def forward(self, x: Tensor) -> Tensor:
        t1 = self.depthwise_features(x)
        y = T.gelu(self.bn2(self.pointwise(t1)))
        return self.drop(y).transpose(0, 2, 1)


class SpatioTemporalBranch(Module):
    """(1, k) temporal conv into F maps, (C, 1) depthwise spatial collapse, pointwise to D."""

    def __init__(self, in_channels: int, dim: int, filters: int, kernel: int, dropout: float, rng):
        self.temporal = nn.Conv2d(1, filters, (1, kernel), groups="full", padding="same", rng=rng,
                                  bias=False)
        self.bn1 = nn.BatchNorm(filters)
        self.spatial = nn.Conv2d(filters, filters, (in_channels, 1), groups="depthwise",
                                 padding="valid", rng=rng, bias=False)
        self.bn2 = nn.BatchNorm(filters)
        self.pointwise = nn.Conv2d(filters, dim, 1, groups="pointwise", rng=rng, bias=False)
        self.bn3 = nn.BatchNorm(dim)
        self.drop = nn.Dropout(dropout, rng)

    def feature_maps(self, x: Tensor) -> list[Tensor]:
        B, C, L = x.shape
        ts1 = T.gelu(self.bn1(self.temporal(x.reshape(B, 1, C, L))))
        ts2 = T.gelu(self.bn2(self.spatial(ts1)))
        ts3 = T.gelu(self.bn3(self.pointwise(ts2)))
        return [ts1, ts2, ts3]

    def forward(self, x: Tensor) -> Tensor:
        B = x.shape[0]
        ts3 = self.feature_maps(x)[-1]
        y = ts3.reshape(B, ts3.shape[1], ts3.shape[3])
        return self.drop(y).transpose(0, 2, 1)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng):
        self.fc1 = nn.Linear(dim, hidden, rng)
        self.fc2 = nn.Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class CFTBlock(Module):
    """Dual-branch extractor followed by self-attention, cross-attention and FFN."""

    def __init__(self, config: ModelConfig, in_channels: int, length: int, positional: bool, rng):
        D = config.embed_dim
        self.config = config
        self.temporal = TemporalBranch(in_channels, D, config.conv_kernel, config.dropout, rng)
        self.spatiotemporal = SpatioTemporalBranch(in_channels, D, config.intermediate_filters,
                                                   config.conv_kernel, config.dropout, rng)
        self.pos = nn.PositionalEncoding(length, D) if positional else None
        if config.self_attn:
            self.norm_self = make_norm(config, D)
            self.self_attn = nn.MultiHeadAttention(D, config.n_heads, rng)
        if config.cross_attn:
            self.norm_cross = make_norm(config, D)
            self.cross_attn = nn.MultiHeadAttention(D, config.n_heads, rng)
        self.norm_ffn = make_norm(config, D)
        self.ffn = FeedForward(D, config.ffn_hidden, rng)
        self.keep_attention = False
        self.last_attention: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        z_main = self.spatiotemporal(x)
        z_cond = self.temporal(x)
        return self.fuse(z_main, z_cond)

    def fuse(self, z_main: Tensor, z_cond: Tensor) -> Tensor:
        if z_main.shape != z_cond.shape:
            raise ShapeMismatch(f"branch outputs differ: {z_main.shape} vs {z_cond.shape}")
        if self.pos is not None:
            z_main = self.pos(z_main)
        z1 = z_main
        if self.config.self_attn:
            normed = self.norm_self(z_main)
            attended, weights = self.self_attn(normed, normed, return_weights=True)
            if self.keep_attention:
                self.last_attention = weights.data.copy()
            z1 = attended + z_main
        z2 = z1
        if self.config.cross_attn:
            z2 = self.cross_attn(z_cond, self.norm_cross(z1)) + z1
        return self.ffn(self.norm_ffn(z2)) + z2 + z_cond


class Downsample(Module):
    """Average pooling along tokens followed by a pointwise channel map to D."""

    def __init__(self, in_channels: int, dim: int, kernel: int, stride: int, rng):
        self.kernel, self.stride = kernel, stride
        self.proj = nn.Conv1d(in_channels, dim, 1, groups="pointwise", rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.proj(nn.avg_pool(x, self.kernel, self.stride))


class Stage(Module):
    def __init__(self, blocks: list[CFTBlock], downsample: Downsample):
        self.blocks = blocks
        self.downsample = downsample


class HCFT(Module):
    def __init__(self, config: ModelConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed)
        D = config.embed_dim
        chain = token_chain(config)
        channels = config.in_channels
        first = True
        self.stages = []
        for depth, length, (k, s) in zip(config.stage_depths, chain["block"], config.stage_pools):
            blocks = []
            for _ in range(depth):
                positional = first or config.positional == "every_block"
                blocks.append(CFTBlock(config, channels, length, positional, rng))
                channels, first = D, False
            self.stages.append(Stage(blocks, Downsample(channels, D, k, s, rng)))
            channels = D
        n = len(self.stages)
        projected = range(n) if config.stage_concat else [n - 1]
        self.stage_proj = [nn.Conv1d(D, D, 1, groups="pointwise", rng=rng) if i in projected else None
                           for i in range(n)]
        if config.final_mha:
            self.final_attn = nn.MultiHeadAttention(D, config.n_heads, rng)
        self.final_norm = make_norm(config, D)
        self.head = nn.Linear(D, config.n_classes, rng)

    def blocks(self) -> list[CFTBlock]:
        return [b for stage in self.stages for b in stage.blocks]

    def stage_outputs(self, x: Tensor) -> list[Tensor]:
        if x.ndim != 3 or x.shape[1:] != (self.config.in_channels, self.config.in_length):
            raise ShapeMismatch(
                f"expected (B, {self.config.in_channels}, {self.config.in_length}), got {x.shape}")
        stream = x
        outputs = []
        for stage in self.stages:
            for block in stage.blocks:
                stream = block(stream).transpose(0, 2, 1)
            stream = stage.downsample(stream)
            outputs.append(stream)
        return outputs

    def features(self, x: Tensor) -> Tensor:
        """Pooled representation fed to the classifier, shape (B, D)."""
        outputs = self.stage_outputs(x)
        if self.config.stage_concat:
            fused = T.concat([proj(s) for proj, s in zip(self.stage_proj, outputs)], axis=2)
            fused = nn.avg_pool(fused, *self.config.final_pool)
        else:
            fused = self.stage_proj[-1](outputs[-1])
        tokens = fused.transpose(0, 2, 1)
        if self.config.final_mha:
            tokens = self.final_attn(tokens)
        return self.final_norm(tokens).mean(axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.head(self.features(x))


# -- reporting ---------------------------------------------------------------
def param_report(model: Module, depth: int = 3) -> "OrderedDict[str, int]":
    """Trainable scalars grouped by the first ``depth`` components of each name."""
    report: OrderedDict[str, int] = OrderedDict()
    for name, p in model.named_parameters():
        key = ".".join(name.split(".")[:depth])
        report[key] = report.get(key, 0) + p.size
    return report


def param_count(config: ModelConfig) -> int:
    model = HCFT(config)
    return sum(p.size for p in model.parameters())


def export_attention(model: HCFT, x: Tensor) -> list[dict]:
    """Head- and batch-averaged self-attention maps for every block, scaled to [0, 1].

    Each entry holds ``stage``, ``block`` (1-based), ``raw`` (rows sum to 1)
    and ``normalized`` (divided by its maximum).
    """
    was_training = model.training
    model.eval()
    blocks = [(si, bi, b) for si, st in enumerate(model.stages) for bi, b in enumerate(st.blocks)]
    try:
        for _, _, b in blocks:
            b.keep_attention, b.last_attention = True, None
        with T.no_grad():
            model(x)
        maps = []
        for si, bi, b in blocks:
            if b.last_attention is None:
                continue
            raw = b.last_attention.astype(np.float64).mean(axis=(0, 1))
            maps.append({"stage": si + 1, "block": bi + 1, "raw": raw, "normalized": raw / raw.max()})
        return maps
    finally:
        for _, _, b in blocks:
            b.keep_attention, b.last_attention = False, None
        model.train(was_training)


def write_attention_csv(maps: list[dict], directory) -> list:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for m in maps:
        path = directory / f"attention_stage{m['stage']}_block{m['block']}.csv"
        with open(path, "w") as fh:
            fh.write(f"stage={m['stage']},block={m['block']}\n")
            for row in m["normalized"]:
                fh.write(",".join(f"{v:.8g}" for v in row) + "\n")
        paths.append(path)
    return paths


def miniature_config(**overrides) -> ModelConfig:
    """Small geometry used by the end-to-end gradient check (C=2, T=64, D=8, H=2)."""
    base = ModelConfig(in_channels=2, in_length=64, embed_dim=8, n_heads=2, stage_depths=(1, 1, 1, 1),
                       intermediate_filters=4, ffn_expansion=2.0, dropout=0.0, conv_kernel=15,
                       stage_pools=((4, 2), (4, 2), (4, 2), (2, 2)), final_pool=(8, 4))
    return base.replace(**overrides)


__all__ = [
    "ABLATION_SWITCHES", "CFTBlock", "DyT", "HCFT", "ModelConfig", "NORM_STRATEGIES", "dyt",
    "export_attention", "miniature_config", "param_count", "param_report", "token_chain",
    "write_attention_csv",
]
