import math

import numpy as np
import pytest

from fishfsr.metrics import MetricReport, gaussian_window, parsing_accuracy, psnr, sr_metrics, ssim
from fishfsr.rng import Rng
from fishfsr.tensor import ContractError


def ssim_loop(a, b, peak=255.0):
    g = gaussian_window()
    w2 = np.outer(g, g)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = np.sum(w2 * pa), np.sum(w2 * pb)
            va = np.sum(w2 * (pa - ma) ** 2)
            vb = np.sum(w2 * (pb - mb) ** 2)
            cov = np.sum(w2 * (pa - ma) * (pb - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return np.mean(vals)


def test_psnr_uniform_mse_256():
    a = np.zeros((1, 1, 8, 8))
    assert psnr(a, a + 16.0) == pytest.approx(24.048, abs=1e-3)


def test_psnr_identical_is_infinite():
    a = Rng(1).random((1, 1, 4, 4))
    assert psnr(a, a) == math.inf


def test_ssim_identity_exact():
    a = Rng(2).random((20, 24)) * 255
    assert ssim(a, a) == 1.0


@pytest.mark.parametrize("ca,cb", [(100.0, 100.0), (50.0, 200.0), (0.0, 255.0), (17.5, 18.0)])
def test_ssim_constants_closed_form(ca, cb):
    c1 = (0.01 * 255) ** 2
    expected = (2 * ca * cb + c1) / (ca * ca + cb * cb + c1)
    got = ssim(np.full((16, 16), ca), np.full((16, 16), cb))
    assert got == pytest.approx(expected, abs=1e-6)


def test_ssim_matches_window_loop_oracle():
    rng = Rng(3)
    a = rng.random((15, 17)) * 255
    b = np.clip(a + rng.normal(0, 20, (15, 17)), 0, 255)
    assert ssim(a, b) == pytest.approx(ssim_loop(a, b), abs=1e-10)


def test_ssim_too_small():
    with pytest.raises(ContractError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))


def test_shape_mismatch():
    with pytest.raises(ContractError):
        psnr(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


def test_gaussian_window():
    g = gaussian_window()
    assert g.shape == (11,) and g.sum() == pytest.approx(1.0) and g.argmax() == 5


def test_parsing_accuracy_threshold():
    pred = np.array([0.49, 0.5, 0.9, 0.1]).reshape(1, 1, 2, 2)
    gt = np.array([0.0, 1.0, 0.0, 0.0]).reshape(1, 1, 2, 2)
    assert parsing_accuracy(pred, gt) == 0.75


def test_sr_metrics_on_y_channel():
    hr = Rng(4).random((1, 3, 16, 16))
    p, s = sr_metrics(hr, hr)
    assert p == math.inf and s == 1.0


def test_report_csv_mean_row():
    rep = MetricReport()
    rep.add("a", 30.0, 0.9, 0.95)
    rep.add("b", 20.0, 0.7, 0.85)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "id,psnr,ssim,parsing_acc"
    assert lines[1] == "a,30.0,0.9,0.95"
    mean = lines[-1].split(",")
    assert mean[0] == "mean"
    assert float(mean[1]) == 25.0 and float(mean[2]) == pytest.approx(0.8) and float(mean[3]) == pytest.approx(0.9)


def test_report_excludes_infinite_psnr():
    rep = MetricReport()
    rep.add("a", math.inf, 1.0)
    rep.add("b", 30.0, 0.5)
    assert rep.mean_psnr == 30.0 and rep.psnr_infinite_count == 1
    only_inf = MetricReport()
    only_inf.add("a", math.inf, 1.0)
    assert only_inf.mean_psnr == math.inf
