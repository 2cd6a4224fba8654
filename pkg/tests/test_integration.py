import numpy as np
import pytest
from scipy.stats import spearmanr

from histlayer.binning import BinningConfig
from histlayer.colorspace import rgb_to_yuv, yuv_to_rgb
from histlayer.histogram import channel_histogram
from histlayer.metrics import LossWeights, reference_histograms, total_loss
from histlayer.optim import OptimizationConfig, classical_emd, color_transfer, optimize
from tests.images import gray_ramp, scene, solid

pytestmark = [pytest.mark.integration, pytest.mark.slow]

BINNING = BinningConfig(32)
EMD_ONLY = LossWeights(emd=1, mi=0)


def rank_correlations(out, src):
    return [spearmanr(o.ravel(), s.ravel()).statistic for o, s in zip(out.channels, src.channels)]


def test_color_transfer_converges():
    src = rgb_to_yuv(scene(1), BINNING)
    ref = rgb_to_yuv(scene(2), BINNING)
    ref_hists = reference_histograms(ref, BINNING)
    cfg = OptimizationConfig(max_steps=2000, binning=BINNING)

    out, trace = optimize(src, ref_hists, cfg)

    assert trace[-1].emd < 1e-2
    assert trace[-1].emd < trace[0].emd
    assert all(r > 0.9 for r in rank_correlations(out, src))
    # classical CDF matching as the floor
    assert classical_emd(src, ref, ref_hists, BINNING) <= trace[-1].emd


def test_delta_reference():
    target = BINNING.centers[BINNING.bins // 2]
    delta = channel_histogram(np.full((2, 2), target), BINNING)
    src = rgb_to_yuv(gray_ramp(size=64), BINNING)
    cfg = OptimizationConfig(max_steps=2000, lr=0.01, binning=BINNING, weights=EMD_ONLY)

    out, trace = optimize(src, (delta, delta, delta), cfg)

    assert trace[-1].emd < 1e-3
    for channel in out.channels:
        assert abs(np.median(channel) - target) < BINNING.width


@pytest.mark.parametrize("seed", range(5))
def test_mi_term_ties_output_to_source(seed):
    src = rgb_to_yuv(scene(10 + seed), BINNING)
    ref = reference_histograms(rgb_to_yuv(scene(20 + seed), BINNING), BINNING)

    final = {}
    for mi in (0.0, 1.0):
        cfg = OptimizationConfig(max_steps=2000, binning=BINNING, weights=LossWeights(emd=1, mi=mi))
        out, _ = optimize(src, ref, cfg)
        final[mi] = total_loss(out, src, ref, LossWeights(), BINNING).mi_per_channel

    # lower D_MI means more information shared with the source
    for without, with_mi in zip(final[0.0], final[1.0]):
        assert with_mi < without


def test_gray_ramp_to_red():
    red = solid((220, 30, 30), size=32)
    src = rgb_to_yuv(gray_ramp(size=32), BINNING)
    ref_hists = reference_histograms(rgb_to_yuv(red, BINNING), BINNING)
    cfg = OptimizationConfig(max_steps=2000, binning=BINNING, weights=EMD_ONLY)

    out, _ = optimize(src, ref_hists, cfg)

    report = total_loss(out, src, ref_hists, EMD_ONLY, BINNING)
    assert all(d < 1e-2 for d in report.emd_per_channel)
    rgb = yuv_to_rgb(out).astype(float)
    r, g, b = (rgb[..., c].mean() for c in range(3))
    assert r > g + 40
    assert r > b + 40


def test_self_transfer_default_binning():
    src = scene(1, size=32)
    out, _ = color_transfer(src, src, OptimizationConfig(max_steps=300))
    assert np.abs(out.astype(int) - src.astype(int)).mean() <= 2
