"""Finite-difference verification of the autograd engine and the blocks.

Central differences in double precision are compared against the autograd
gradient of a random projection ``sum(R * f())``. Two guards keep the
comparison away from relu / max / L1 kinks:

* the unperturbed forward pass must keep every kink input at least
  ``min_margin`` (default ``10 * eps``) away from its kink, otherwise
  :class:`KinkError` is raised and the caller resamples;
* a coordinate is skipped when either perturbed forward pass takes a
  different side of any kink than the unperturbed one (kink signatures
  differ), since the difference quotient then straddles a corner.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .blocks import (
    MSRB,
    PAFB,
    ChannelAttention,
    DownModule,
    RefineBlock,
    ResBlock,
    SpatialAttention,
    UpModule,
)
from .networks import FishFSRNet, ModelConfig
from .rng import Rng
from .tensor import ContractError, Tensor, backward, l1_loss, mul, no_grad, track_kinks
from .tensor import sum as tsum

BLOCK_TOLERANCE = 1e-5
END_TO_END_TOLERANCE = 1e-4
MAX_RESAMPLES = 25


class KinkError(ContractError):
    """The base point sits too close to a non-differentiable point."""


@dataclass
class GradCheckReport:
    error: float
    checked: int
    skipped: int
    margin: float


def grad_check_report(f: Callable[[], Tensor], wrt: Sequence[Tensor], eps: float = 1e-4,
                      seed: int = 0, max_coords: int | None = None,
                      min_margin: float | None = None) -> GradCheckReport:
    """Compare autograd and central-difference gradients of ``f`` with
    respect to the float64 tensors ``wrt`` (perturbed in place, restored).

    ``max_coords`` samples that many coordinates uniformly over all of
    ``wrt``; by default every coordinate is checked.
    """
    for t in wrt:
        if t.dtype != np.float64:
            raise ContractError(f"grad_check runs in float64, got {t.dtype}")
        t.requires_grad = True
        t.grad = None
    min_margin = 10 * eps if min_margin is None else min_margin
    rng = Rng(seed)

    with track_kinks() as base:
        out = f()
    if base.margin < min_margin:
        raise KinkError(f"kink margin {base.margin:.3g} below {min_margin:.3g}")
    proj = rng.normal(size=out.shape)
    backward(tsum(mul(out, Tensor(proj))))
    grads = [np.zeros_like(t.data) if t.grad is None else t.grad for t in wrt]

    sizes = [t.numel for t in wrt]
    total = int(np.sum(sizes))
    picks = np.arange(total) if max_coords is None or max_coords >= total else \
        np.sort(rng.permutation(total)[:max_coords])
    offsets = np.cumsum([0] + sizes)

    def evaluate():
        with no_grad(), track_kinks() as tr:
            y = f().data
        return float(np.sum(y * proj)), tr.signature

    worst, checked, skipped = 0.0, 0, 0
    for flat_index in picks:
        ti = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        j = int(flat_index - offsets[ti])
        data = wrt[ti].data.reshape(-1)
        orig = data[j]
        data[j] = orig + eps
        fp, sig_p = evaluate()
        data[j] = orig - eps
        fm, sig_m = evaluate()
        data[j] = orig
        if sig_p != base.signature or sig_m != base.signature:
            skipped += 1
            continue
        g_fd = (fp - fm) / (2 * eps)
        g_ad = float(grads[ti].reshape(-1)[j])
        worst = max(worst, abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd)))
        checked += 1
    if checked == 0:
        raise KinkError("every sampled coordinate straddles a kink")
    for t in wrt:
        t.grad = None
    return GradCheckReport(worst, checked, skipped, base.margin)


def grad_check(f: Callable[[], Tensor], wrt: Sequence[Tensor], eps: float = 1e-4, **kwargs) -> float:
    """Max over coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|)."""
    return grad_check_report(f, wrt, eps, **kwargs).error


# ---------------------------------------------------------------- oracle suite

F64 = np.float64
SUITE_CHANNELS = 4
SUITE_SIZE = 6


def _input(rng: Rng, c: int, h: int, w: int | None = None) -> Tensor:
    return Tensor(rng.normal(size=(1, c, h, w or h)), requires_grad=True)


def _with_params(module, *inputs):
    return list(inputs) + module.parameters()


def _resblock(rng):
    m, x = ResBlock(SUITE_CHANNELS, rng, F64), _input(rng, SUITE_CHANNELS, SUITE_SIZE)
    return (lambda: m(x)), _with_params(m, x)


def _channel_attention(rng):
    m, x = ChannelAttention(SUITE_CHANNELS, rng, F64), _input(rng, SUITE_CHANNELS, SUITE_SIZE)
    return (lambda: m(x)), _with_params(m, x)


def _spatial_attention(rng):
    m, x = SpatialAttention(rng, F64), _input(rng, SUITE_CHANNELS, SUITE_SIZE)
    return (lambda: m(x)), _with_params(m, x)


def _refine(rng):
    m = RefineBlock(SUITE_CHANNELS, rng, F64)
    x, prev = _input(rng, SUITE_CHANNELS, SUITE_SIZE), _input(rng, SUITE_CHANNELS, SUITE_SIZE // 2)
    return (lambda: m(x, prev)), _with_params(m, x, prev)


def _msrb(k):
    def build(rng):
        m = MSRB(SUITE_CHANNELS, k, rng, F64)
        x = _input(rng, SUITE_CHANNELS, SUITE_SIZE)
        # preserved features at coarser, equal and finer resolutions
        sizes = [SUITE_SIZE // 2, SUITE_SIZE, SUITE_SIZE * 2, SUITE_SIZE // 2][:k]
        prevs = [_input(rng, SUITE_CHANNELS, s) for s in sizes]
        return (lambda: m(x, prevs)), _with_params(m, x, *prevs)
    return build


def _pafb(use_ca, use_sa, use_pmb):
    def build(rng):
        m = PAFB(SUITE_CHANNELS, rng, F64, use_ca=use_ca, use_sa=use_sa, use_pmb=use_pmb)
        x = _input(rng, SUITE_CHANNELS, SUITE_SIZE)
        parsing = Tensor((rng.random((1, 1, SUITE_SIZE // 2, SUITE_SIZE // 2)) >= 0.5).astype(F64))
        return (lambda: m(x, parsing)), _with_params(m, x)
    return build


def _up(rng):
    m, x = UpModule(SUITE_CHANNELS, rng, F64), _input(rng, SUITE_CHANNELS, SUITE_SIZE)
    return (lambda: m(x)), _with_params(m, x)


def _down(rng):
    m, x = DownModule(SUITE_CHANNELS, rng, F64), _input(rng, SUITE_CHANNELS, SUITE_SIZE)
    return (lambda: m(x)), _with_params(m, x)


def _end_to_end(rng):
    cfg = ModelConfig(scale=4, channels=4)
    net = FishFSRNet(cfg, rng, F64)
    lr = Tensor(rng.random((1, 3, 4, 4)))
    parsing = Tensor((rng.random((1, 1, 4, 4)) >= 0.5).astype(F64))
    target = Tensor(rng.random((1, 3, 16, 16)))
    return (lambda: l1_loss(net(lr, parsing), target)), net.parameters()


def _pafb_name(ca, sa, pmb):
    return f"pafb_ca{int(ca)}_sa{int(sa)}_pmb{int(pmb)}"


SUITE: dict[str, Callable] = {
    "resblock": _resblock,
    "channel_attention": _channel_attention,
    "spatial_attention": _spatial_attention,
    "refine": _refine,
    "msrb2": _msrb(2),
    "msrb3": _msrb(3),
    "msrb4": _msrb(4),
    **{_pafb_name(*t): _pafb(*t) for t in itertools.product((False, True), repeat=3)},
    "up": _up,
    "down": _down,
    "end_to_end": _end_to_end,
}
TOLERANCES = {name: END_TO_END_TOLERANCE if name == "end_to_end" else BLOCK_TOLERANCE for name in SUITE}
# end-to-end graphs hold thousands of relu inputs; only per-coordinate exclusion applies there
_MARGIN = {"end_to_end": 0.0}
_COORDS = {"end_to_end": 300}


@dataclass
class SuiteResult:
    name: str
    error: float
    tolerance: float
    checked: int
    skipped: int
    attempts: int

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def run_check(name: str, seed: int = 0) -> SuiteResult:
    if name not in SUITE:
        raise KeyError(f"unknown block {name!r}; choose from {sorted(SUITE)} or 'all'")
    rng = Rng(seed)
    for attempt in range(1, MAX_RESAMPLES + 1):
        sub = rng.spawn()
        f, wrt = SUITE[name](sub)
        try:
            rep = grad_check_report(f, wrt, seed=int(sub.randbelow(2 ** 31)),
                                    max_coords=_COORDS.get(name), min_margin=_MARGIN.get(name))
        except KinkError:
            continue
        return SuiteResult(name, rep.error, TOLERANCES[name], rep.checked, rep.skipped, attempt)
    raise KinkError(f"{name}: no kink-free sample in {MAX_RESAMPLES} draws")


def run_suite(names: Sequence[str] | None = None, seed: int = 0) -> list[SuiteResult]:
    return [run_check(n, seed) for n in (names or list(SUITE))]
