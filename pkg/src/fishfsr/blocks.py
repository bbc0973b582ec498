"""Composite layers of the super-resolver and the parsing estimator."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .nn import Conv2d, Module
from .rng import Rng
from .tensor import (
    ContractError,
    Tensor,
    channel_stats,
    concat_channels,
    global_avg_pool,
    nearest_resize,
    pixel_shuffle,
    pixel_unshuffle,
    relu,
    sigmoid,
)


class ConfigError(ValueError):
    """A block or model was configured with inconsistent hyperparameters."""


def reduction_ratio(channels: int) -> int:
    return 16 if channels >= 32 else 4


def _check_channels(x: Tensor, c: int, who: str):
    if x.shape[1] != c:
        raise ContractError(f"{who}: expected C={c} channels, got {x.shape[1]}")


class ResBlock(Module):
    """conv3x3 -> ReLU -> conv3x3, plus identity skip."""

    def __init__(self, c: int, rng: Rng, dtype=np.float32):
        self.c = c
        self.conv1 = Conv2d(c, c, 3, rng, dtype)
        self.conv2 = Conv2d(c, c, 3, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.c, "ResBlock")
        return self.conv2(relu(self.conv1(x))) + x


class ChannelAttention(Module):
    """Squeeze-and-excitation gate: pool -> 1x1 reduce -> ReLU -> 1x1 expand
    -> sigmoid, multiplied into the input."""

    def __init__(self, c: int, rng: Rng, dtype=np.float32, reduction: int | None = None):
        r = reduction or reduction_ratio(c)
        if c % r:
            raise ConfigError(f"channel attention: C={c} not divisible by reduction ratio {r}")
        self.c = c
        self.reduce = Conv2d(c, c // r, 1, rng, dtype)
        self.expand = Conv2d(c // r, c, 1, rng, dtype)

    def gate(self, x: Tensor) -> Tensor:
        return sigmoid(self.expand(relu(self.reduce(global_avg_pool(x)))))

    def forward(self, x: Tensor) -> Tensor:
        _check_channels(x, self.c, "ChannelAttention")
        return x * self.gate(x)


class SpatialAttention(Module):
    """Channel mean+max map -> 7x7 conv -> sigmoid, multiplied into the input."""

    def __init__(self, rng: Rng, dtype=np.float32):
        self.conv = Conv2d(2, 1, 7, rng, dtype)

    def gate(self, x: Tensor) -> Tensor:
        return sigmoid(self.conv(channel_stats(x)))

    def forward(self, x: Tensor) -> Tensor:
        return x * self.gate(x)


class UpModule(Module):
    def __init__(self, c: int, rng: Rng, dtype=np.float32):
        self.conv = Conv2d(c, 4 * c, 3, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return pixel_shuffle(self.conv(x))


class DownModule(Module):
    # unshuffle first so the conv maps 4C -> C and every feature stays at width C
    def __init__(self, c: int, rng: Rng, dtype=np.float32):
        self.conv = Conv2d(4 * c, c, 3, rng, dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(pixel_unshuffle(x))


class RefineBlock(Module):
    """Error feedback against one preserved feature.

    The previous feature is nearest-resized to the current resolution, the
    difference is projected by conv-ReLU-conv and added back to the current
    feature.
    """

    def __init__(self, c: int, rng: Rng, dtype=np.float32):
        self.c = c
        self.proj1 = Conv2d(c, c, 3, rng, dtype)
        self.proj2 = Conv2d(c, c, 3, rng, dtype)

    def error(self, f_current: Tensor, f_prev: Tensor) -> Tensor:
        _check_channels(f_current, self.c, "RefineBlock")
        _check_channels(f_prev, self.c, "RefineBlock")
        resized = nearest_resize(f_prev, f_current.shape[2], f_current.shape[3])
        return f_current - resized

    def forward(self, f_current: Tensor, f_prev: Tensor) -> Tensor:
        err = self.error(f_current, f_prev)
        return self.proj2(relu(self.proj1(err))) + f_current


class MSRB(Module):
    """Multi-scale refine block over ``k`` preserved features."""

    def __init__(self, c: int, k: int, rng: Rng, dtype=np.float32):
        self.c, self.k = c, k
        self.refine = [RefineBlock(c, rng, dtype) for _ in range(k)]
        self.attention = ChannelAttention(k * c, rng, dtype)
        self.fuse = Conv2d(k * c, c, 1, rng, dtype)

    def forward(self, f_current: Tensor, f_prevs: Sequence[Tensor]) -> Tensor:
        if len(f_prevs) != self.k:
            raise ContractError(f"MSRB: expected {self.k} preserved features, got {len(f_prevs)}")
        refined = [rb(f_current, fp) for rb, fp in zip(self.refine, f_prevs)]
        return f_current + self.fuse(self.attention(concat_channels(refined)))


class PAFB(Module):
    """Parsing-map attention fusion block.

    Attention branch: two 3x3 convs, then channel and/or spatial attention
    (concatenated and fused by a 1x1 conv when both are on). Parsing branch:
    3x3 projections of the feature and of the resized parsing map,
    concatenated and fused by a 1x1 conv. Both branches present: a final 1x1
    fusion over their concatenation. The block input is added back.

    Sub-layers of disabled branches are not built, so ablated blocks carry no
    parameters for them. With every toggle off the block is
    ``f + conv(relu(conv(f)))``.
    """

    def __init__(self, c: int, rng: Rng, dtype=np.float32,
                 use_ca: bool = True, use_sa: bool = True, use_pmb: bool = True):
        self.c = c
        self.use_ca, self.use_sa, self.use_pmb = use_ca, use_sa, use_pmb
        attention = use_ca or use_sa
        if attention or not use_pmb:
            self.front1 = Conv2d(c, c, 3, rng, dtype)
            self.front2 = Conv2d(c, c, 3, rng, dtype)
        if use_ca:
            self.ca = ChannelAttention(c, rng, dtype)
        if use_sa:
            self.sa = SpatialAttention(rng, dtype)
        if use_ca and use_sa:
            self.attention_fuse = Conv2d(2 * c, c, 1, rng, dtype)
        if use_pmb:
            self.feature_proj = Conv2d(c, c, 3, rng, dtype)
            self.parsing_proj = Conv2d(1, c, 3, rng, dtype)
            self.parsing_fuse = Conv2d(2 * c, c, 1, rng, dtype)
        if attention and use_pmb:
            self.final_fuse = Conv2d(2 * c, c, 1, rng, dtype)

    @property
    def has_attention(self) -> bool:
        return self.use_ca or self.use_sa

    def attention_branch(self, f: Tensor) -> Tensor:
        h = self.front2(relu(self.front1(f)))
        if self.use_ca and self.use_sa:
            return self.attention_fuse(concat_channels([self.ca(h), self.sa(h)]))
        if self.use_ca:
            return self.ca(h)
        if self.use_sa:
            return self.sa(h)
        return h

    def parsing_branch(self, f: Tensor, parsing: Tensor) -> Tensor:
        if parsing.shape[1] != 1:
            raise ContractError(f"PAFB: parsing map must be single-channel, got C={parsing.shape[1]}")
        p = nearest_resize(parsing, f.shape[2], f.shape[3])
        return self.parsing_fuse(concat_channels([self.feature_proj(f), self.parsing_proj(p)]))

    def forward(self, f: Tensor, parsing: Tensor | None) -> Tensor:
        _check_channels(f, self.c, "PAFB")
        if not self.use_pmb:
            return f + self.attention_branch(f)
        f_p = self.parsing_branch(f, parsing)
        if not self.has_attention:
            return f + f_p
        f_a = self.attention_branch(f)
        return f + self.final_fuse(concat_channels([f_a, f_p]))


class ResGroup(Module):
    """Cascaded ResBlocks standing in for a PAFB group (parsing map ignored)."""

    def __init__(self, c: int, rng: Rng, dtype=np.float32, count: int = 2):
        self.blocks = [ResBlock(c, rng, dtype) for _ in range(count)]

    def forward(self, f: Tensor, parsing: Tensor | None = None) -> Tensor:
        for b in self.blocks:
            f = b(f)
        return f


class PAFBGroup(Module):
    # cascaded blocks keep independent parameters
    def __init__(self, c: int, rng: Rng, dtype=np.float32, count: int = 2, **toggles):
        self.blocks = [PAFB(c, rng, dtype, **toggles) for _ in range(count)]

    def forward(self, f: Tensor, parsing: Tensor | None) -> Tensor:
        for b in self.blocks:
            f = b(f, parsing)
        return f
