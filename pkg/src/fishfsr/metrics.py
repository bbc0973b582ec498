"""PSNR / SSIM on the Y channel and parsing accuracy."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .data import rgb_to_y
from .tensor import ContractError, Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


def _array(x) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def _check_shapes(a, b, who):
    if a.shape != b.shape:
        raise ContractError(f"{who}: shapes differ, {a.shape} vs {b.shape}")


def psnr(a, b, peak: float = 255.0) -> float:
    """10 log10(peak^2 / MSE); ``math.inf`` when the inputs are identical."""
    a, b = _array(a), _array(b)
    _check_shapes(a, b, "psnr")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=-1, mode="constant"), g, axis=-2, mode="constant")
    return out[..., r:img.shape[-2] - r, r:img.shape[-1] - r]


def ssim(a, b, peak: float = 255.0) -> float:
    """Mean single-scale SSIM over valid-mode 11x11 Gaussian windows
    (sigma 1.5, K1 = 0.01, K2 = 0.03) of two single-channel images."""
    a, b = _array(a), _array(b)
    _check_shapes(a, b, "ssim")
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise ContractError(f"ssim: image {a.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def parsing_accuracy(pred, gt) -> float:
    """Fraction of pixels where ``pred >= 0.5`` agrees with the binary ``gt``."""
    pred, gt = _array(pred), _array(gt)
    _check_shapes(pred, gt, "parsing_accuracy")
    return float(np.mean((pred >= 0.5) == (gt >= 0.5)))


def y_255(img) -> np.ndarray:
    """[0, 1] RGB (N, 3, H, W) -> Y channel scaled to [0, 255]."""
    return rgb_to_y(np.clip(_array(img), 0.0, 1.0)) * 255.0


def sr_metrics(sr, hr) -> tuple[float, float]:
    ys, yh = y_255(sr), y_255(hr)
    return psnr(ys, yh), ssim(ys[0, 0], yh[0, 0])


@dataclass
class MetricReport:
    ids: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)
    parsing_acc: list[float] = field(default_factory=list)

    def add(self, sample_id: str, psnr_db: float, ssim_val: float, acc: float = math.nan):
        self.ids.append(sample_id)
        self.psnr.append(psnr_db)
        self.ssim.append(ssim_val)
        self.parsing_acc.append(acc)

    @property
    def psnr_infinite_count(self) -> int:
        return sum(math.isinf(p) for p in self.psnr)

    @property
    def mean_psnr(self) -> float:
        """Mean over finite values; infinite entries are counted separately."""
        finite = [p for p in self.psnr if not math.isinf(p)]
        if not finite:
            return math.inf if self.psnr else math.nan
        return float(np.mean(finite))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    @property
    def mean_parsing_acc(self) -> float:
        vals = [a for a in self.parsing_acc if not math.isnan(a)]
        return float(np.mean(vals)) if vals else math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["id", "psnr", "ssim", "parsing_acc"])
        for row in zip(self.ids, self.psnr, self.ssim, self.parsing_acc):
            out.writerow([row[0], *(_fmt(v) for v in row[1:])])
        out.writerow(["mean", _fmt(self.mean_psnr), _fmt(self.mean_ssim), _fmt(self.mean_parsing_acc)])
        return buf.getvalue()


def _fmt(v: float) -> str:
    return repr(float(v))
