"""ParsingNet and FishFSRNet assembly."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .blocks import (
    MSRB,
    ConfigError,
    DownModule,
    PAFBGroup,
    ResBlock,
    ResGroup,
    UpModule,
    reduction_ratio,
)
from .nn import Conv2d, Module, ParameterStore
from .rng import Rng
from .tensor import ContractError, Tensor, sigmoid

SCALES = (4, 8, 16)

# ablation model -> (use_sa, use_ca, use_pmb, use_msrb)
ABLATIONS = {
    1: (False, False, False, False),
    2: (False, False, False, True),
    3: (True, True, False, False),
    4: (False, False, True, False),
    5: (True, False, True, False),
    6: (False, True, True, False),
    7: (True, True, True, False),
    8: (True, True, True, True),
}


@dataclass(frozen=True)
class ModelConfig:
    scale: int = 8
    channels: int = 64
    pafb_per_stage: int = 2
    parsingnet_resblocks: int = 8
    use_msrb: bool = True
    use_ca: bool = True
    use_sa: bool = True
    use_pmb: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.channels < 1 or self.pafb_per_stage < 1 or self.parsingnet_resblocks < 0:
            raise ConfigError("channels and block counts must be positive")
        # every channel attention in the model must divide evenly
        widths = [self.channels] if (self.use_pafb and self.use_ca) else []
        if self.use_msrb:
            widths.append(self.n_stages * self.channels)
        for c in widths:
            if c % reduction_ratio(c):
                raise ConfigError(f"width {c} not divisible by reduction ratio {reduction_ratio(c)}")

    @property
    def n_stages(self) -> int:
        return int(np.log2(self.scale))

    @property
    def use_pafb(self) -> bool:
        """False when every PAFB toggle is off: the groups become ResBlocks."""
        return self.use_ca or self.use_sa or self.use_pmb

    @classmethod
    def ablation(cls, model: int, **kwargs) -> "ModelConfig":
        """Configuration of ablation model 1-8 (8 is the full network)."""
        if model not in ABLATIONS:
            raise ConfigError(f"ablation model must be 1-8, got {model}")
        sa, ca, pmb, msrb = ABLATIONS[model]
        return cls(use_sa=sa, use_ca=ca, use_pmb=pmb, use_msrb=msrb, **kwargs)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


class ParsingNet(Module):
    """conv 3->C, ResBlocks, conv C->1, sigmoid."""

    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=np.float32):
        c = cfg.channels
        self.head = Conv2d(3, c, 3, rng, dtype)
        self.body = [ResBlock(c, rng, dtype) for _ in range(cfg.parsingnet_resblocks)]
        self.tail = Conv2d(c, 1, 3, rng, dtype)

    def forward(self, lr: Tensor) -> Tensor:
        if lr.shape[1] != 3:
            raise ContractError(f"ParsingNet: expected 3 input channels, got {lr.shape[1]}")
        x = self.head(lr)
        for blk in self.body:
            x = blk(x)
        return sigmoid(self.tail(x))


class FishFSRNet(Module):
    """Up - down - up hourglass with preserved multi-scale features.

    head:  F0 = conv(LR); F1 = Up(F0); F_{s+1} = Up(G(F_s)); out = G(F_n)
    body:  B_s = Down(MSRB(x, [F1..Fn])); x = G(B_s)
    tail:  x = G(Up(MSRB(x, [B_n..B_1])))
    SR = conv(x)
    where ``G`` is a group of cascaded PAFBs (ResBlocks for ablation
    models without any PAFB branch) and ``n = log2(scale)``.
    """

    def __init__(self, cfg: ModelConfig, rng: Rng, dtype=np.float32):
        self.cfg = cfg
        c, n = cfg.channels, cfg.n_stages

        def group():
            if cfg.use_pafb:
                return PAFBGroup(c, rng, dtype, count=cfg.pafb_per_stage,
                                 use_ca=cfg.use_ca, use_sa=cfg.use_sa, use_pmb=cfg.use_pmb)
            return ResGroup(c, rng, dtype, count=cfg.pafb_per_stage)

        def msrbs():
            return [MSRB(c, n, rng, dtype) for _ in range(n)] if cfg.use_msrb else []

        self.extract = Conv2d(3, c, 3, rng, dtype)
        self.head_ups = [UpModule(c, rng, dtype) for _ in range(n)]
        self.head_groups = [group() for _ in range(n)]
        self.body_msrbs = msrbs()
        self.body_downs = [DownModule(c, rng, dtype) for _ in range(n)]
        self.body_groups = [group() for _ in range(n)]
        self.tail_msrbs = msrbs()
        self.tail_ups = [UpModule(c, rng, dtype) for _ in range(n)]
        self.tail_groups = [group() for _ in range(n)]
        self.reconstruct = Conv2d(c, 3, 3, rng, dtype)

    def _refine(self, msrbs, i, x, prevs):
        return msrbs[i](x, prevs) if msrbs else x

    def forward_features(self, lr: Tensor, parsing: Tensor | None):
        """Run the network; return ``(sr, preserved)`` where ``preserved``
        maps ``"head"``/``"body"`` to the lists of preserved features."""
        cfg = self.cfg
        if lr.shape[1] != 3:
            raise ContractError(f"FishFSRNet: expected 3 input channels, got {lr.shape[1]}")
        if parsing is not None and parsing.shape[2:] != lr.shape[2:]:
            raise ContractError(
                f"FishFSRNet: parsing map size {parsing.shape[2:]} != LR size {lr.shape[2:]}")
        if parsing is None and cfg.use_pmb:
            raise ContractError("FishFSRNet: parsing map required when the parsing branch is on")
        n = cfg.n_stages

        x = self.head_ups[0](self.extract(lr))
        head = [x]
        for s in range(1, n):
            x = self.head_ups[s](self.head_groups[s - 1](x, parsing))
            head.append(x)
        x = self.head_groups[n - 1](x, parsing)

        body = []
        for s in range(n):
            x = self.body_downs[s](self._refine(self.body_msrbs, s, x, head))
            body.append(x)
            x = self.body_groups[s](x, parsing)

        skips = body[::-1]
        for s in range(n):
            x = self.tail_ups[s](self._refine(self.tail_msrbs, s, x, skips))
            x = self.tail_groups[s](x, parsing)

        return self.reconstruct(x), {"head": head, "body": body}

    def forward(self, lr: Tensor, parsing: Tensor | None) -> Tensor:
        return self.forward_features(lr, parsing)[0]


def build_model(cfg: ModelConfig, rng: Rng | None = None, dtype=np.float32):
    """Construct ``(parsingnet, fishnet, params)``; the parameters are drawn
    from ``rng`` (default ``Rng(cfg.seed)``) in construction order."""
    rng = rng if rng is not None else Rng(cfg.seed)
    parsingnet = ParsingNet(cfg, rng, dtype)
    fishnet = FishFSRNet(cfg, rng, dtype)
    store = ParameterStore.from_modules(parsing=parsingnet, fish=fishnet)
    return parsingnet, fishnet, store


def count_stage_resolutions(cfg: ModelConfig) -> list[tuple[str, int]]:
    """Resolution multiplier (relative to LR) after each resampling module."""
    n = cfg.n_stages
    head = [("head", 2 ** (s + 1)) for s in range(n)]
    body = [("body", 2 ** (n - s - 1)) for s in range(n)]
    tail = [("tail", 2 ** (s + 1)) for s in range(n)]
    return head + body + tail


def _conv(cin: int, cout: int, k: int) -> int:
    return cout * cin * k * k + cout


def expected_parameter_count(cfg: ModelConfig) -> dict[str, int]:
    """Closed-form parameter counts (see README, "Parameter count")."""
    c, n, g = cfg.channels, cfg.n_stages, cfg.pafb_per_stage
    res = 2 * _conv(c, c, 3)
    parsing = _conv(3, c, 3) + cfg.parsingnet_resblocks * res + _conv(c, 1, 3)

    def ca(w):
        r = reduction_ratio(w)
        return _conv(w, w // r, 1) + _conv(w // r, w, 1)

    if cfg.use_pafb:
        attention = cfg.use_ca or cfg.use_sa
        block = 0
        if attention or not cfg.use_pmb:
            block += 2 * _conv(c, c, 3)
        if cfg.use_ca:
            block += ca(c)
        if cfg.use_sa:
            block += _conv(2, 1, 7)
        if cfg.use_ca and cfg.use_sa:
            block += _conv(2 * c, c, 1)
        if cfg.use_pmb:
            block += _conv(c, c, 3) + _conv(1, c, 3) + _conv(2 * c, c, 1)
        if attention and cfg.use_pmb:
            block += _conv(2 * c, c, 1)
    else:
        block = res
    msrb = n * 2 * _conv(c, c, 3) + ca(n * c) + _conv(n * c, c, 1)
    fish = (
        _conv(3, c, 3)
        + 2 * n * _conv(c, 4 * c, 3)          # head and tail up modules
        + n * _conv(4 * c, c, 3)              # body down modules
        + 3 * n * g * block                   # head/body/tail groups
        + (2 * n * msrb if cfg.use_msrb else 0)
        + _conv(c, 3, 3)
    )
    return {"parsing": parsing, "fish": fish, "total": parsing + fish}
