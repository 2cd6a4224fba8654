import logging
import math

import numpy as np
import pytest

from histlayer.binning import BinningConfig
from histlayer.colorspace import ImageYUV, rgb_to_yuv
from histlayer.core import OptimizationError, ShapeMismatch
from histlayer.metrics import LossReport, LossWeights, TotalLoss, reference_histograms, total_loss
from histlayer.optim import (
    AdamState,
    InitMode,
    LossTrace,
    OptimizationConfig,
    TraceRecord,
    adam_step,
    color_transfer,
    colorize,
    classical_emd,
    histogram_match_classical,
    initial_image,
    optimize,
)
from tests.images import gray_ramp, scene, solid


def small_config(**kwargs):
    return OptimizationConfig(**{"max_steps": 5, "binning": BinningConfig(16), **kwargs})


def random_yuv(rng, config, size=6):
    return ImageYUV.from_stack(rng.uniform(config.vmin, config.vmax, size=(3, size, size)))


def test_adam_zero_gradient():
    state = AdamState((2, 3))
    params = np.arange(6.0).reshape(2, 3)
    updated = adam_step(state, params, np.zeros((2, 3)))
    np.testing.assert_array_equal(updated, params)
    assert state.step == 1
    np.testing.assert_array_equal(state.m, np.zeros((2, 3)))


def test_adam_first_step():
    state = AdamState((4,), lr=0.01)
    grads = np.array([3.0, -0.5, 1e-3, -200.0])
    updated = adam_step(state, np.zeros(4), grads)
    np.testing.assert_allclose(updated, -0.01 * grads / (np.abs(grads) + 1e-8), rtol=1e-12)
    np.testing.assert_allclose(updated, -0.01 * np.sign(grads), rtol=1e-4)


def test_adam_constant_gradient():
    state = AdamState((2,), lr=0.01)
    params = np.zeros(2)
    grads = np.array([0.7, -2.0])
    for _ in range(200):
        previous = params
        params = adam_step(state, params, grads)
    np.testing.assert_allclose(params - previous, -0.01 * np.sign(grads), rtol=1e-6)


def test_adam_minimizes_quadratic():
    state = AdamState((3,), lr=0.05)
    target = np.array([0.3, -0.2, 0.5])
    params = np.zeros(3)
    for _ in range(2000):
        params = adam_step(state, params, 2 * (params - target))
    np.testing.assert_allclose(params, target, atol=1e-2)


def test_adam_validation():
    with pytest.raises(ValueError):
        AdamState((2,), lr=0)
    with pytest.raises(ValueError):
        AdamState((2,), beta1=1.0)
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState((2,)), np.zeros(3), np.zeros(3))


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizationConfig(max_steps=0)
    with pytest.raises(ValueError):
        OptimizationConfig(lr=-1)
    with pytest.raises(ValueError):
        OptimizationConfig(init_mode="from_nowhere")
    with pytest.raises(ValueError, match="log_every"):
        OptimizationConfig(log_every=0)
    with pytest.raises(ValueError):
        OptimizationConfig(threads=0)
    assert OptimizationConfig(init_mode="from_noise").init_mode is InitMode.FROM_NOISE


def test_trace():
    trace = LossTrace()
    trace.append(TraceRecord(0, 1.5, 0.5, 1.0))
    trace.append(TraceRecord(1, 0.25, 0.125, 0.125))
    with pytest.raises(ValueError):
        trace.append(TraceRecord(1, 0.0, 0.0, 0.0))
    assert len(trace) == 2
    assert trace.to_csv() == "step,total,emd,mi\n0,1.5,0.5,1.0\n1,0.25,0.125,0.125\n"


def test_initial_image(rng):
    config = small_config()
    src = random_yuv(rng, config.binning)

    np.testing.assert_array_equal(initial_image(src, config), src.stack())

    gray = initial_image(src, small_config(init_mode=InitMode.FROM_GRAY))
    np.testing.assert_array_equal(gray[0], src.y)
    assert not gray[1:].any()

    noise = initial_image(src, small_config(init_mode=InitMode.FROM_NOISE, seed=7))
    again = initial_image(src, small_config(init_mode=InitMode.FROM_NOISE, seed=7))
    other = initial_image(src, small_config(init_mode=InitMode.FROM_NOISE, seed=8))
    np.testing.assert_array_equal(noise, again)
    assert not np.array_equal(noise, other)
    assert noise.min() >= config.binning.vmin and noise.max() <= config.binning.vmax


def test_optimize_trace(rng):
    config = small_config()
    src = random_yuv(rng, config.binning)
    ref = reference_histograms(random_yuv(rng, config.binning), config.binning)
    out, trace = optimize(src, ref, config)

    assert [r.step for r in trace] == list(range(6))
    assert out.shape == src.shape
    initial = total_loss(src, src, ref, config.weights, config.binning)
    assert trace[0].total == pytest.approx(initial.total, rel=1e-12)
    final = total_loss(out, src, ref, config.weights, config.binning)
    assert trace[-1].total == pytest.approx(final.total, rel=1e-12)


def test_optimize_deterministic(rng):
    config = small_config(init_mode=InitMode.FROM_NOISE, seed=3)
    src = random_yuv(rng, config.binning)
    ref = reference_histograms(random_yuv(rng, config.binning), config.binning)

    first, first_trace = optimize(src, ref, config)
    second, second_trace = optimize(src, ref, config)
    np.testing.assert_array_equal(first.stack(), second.stack())
    assert first_trace.to_csv() == second_trace.to_csv()


def test_optimize_threads_identical(rng):
    src = random_yuv(rng, BinningConfig(16), size=9)
    ref = reference_histograms(random_yuv(rng, BinningConfig(16), size=9), BinningConfig(16))
    single, _ = optimize(src, ref, small_config(threads=1))
    threaded, _ = optimize(src, ref, small_config(threads=3))
    np.testing.assert_array_equal(single.stack(), threaded.stack())


def test_optimize_clamps(rng):
    config = small_config(lr=1.0)
    src = random_yuv(rng, config.binning)
    ref = reference_histograms(random_yuv(rng, config.binning), config.binning)
    out, _ = optimize(src, ref, config)
    stacked = out.stack()
    assert stacked.min() >= config.binning.vmin
    assert stacked.max() <= config.binning.vmax


def test_self_transfer_is_fixed_point(rng):
    config = small_config(weights=LossWeights(emd=1, mi=0))
    src = random_yuv(rng, config.binning)
    out, trace = optimize(src, reference_histograms(src, config.binning), config)
    np.testing.assert_array_equal(out.stack(), src.stack())
    assert all(r.total == 0 for r in trace)


def test_optimize_decreases_emd(rng):
    config = small_config(max_steps=100, lr=0.02, weights=LossWeights(emd=1, mi=0))
    src = random_yuv(rng, config.binning, size=8)
    ref = reference_histograms(
        rgb_to_yuv(solid((200, 40, 40), size=8), config.binning), config.binning
    )
    _, trace = optimize(src, ref, config)
    assert trace[-1].emd < trace[0].emd


def test_optimize_logs(rng, caplog):
    config = small_config(max_steps=4, log_every=2)
    src = random_yuv(rng, config.binning)
    with caplog.at_level(logging.INFO, logger="histlayer"):
        optimize(src, reference_histograms(src, config.binning), config)
    steps = [r.getMessage().split(":")[0] for r in caplog.records if r.name == "histlayer.optim"]
    assert steps == ["step 0", "step 2", "step 4"]


def test_optimize_logs_every_step(rng, caplog):
    config = small_config(max_steps=3, log_every=1)
    src = random_yuv(rng, config.binning)
    with caplog.at_level(logging.INFO, logger="histlayer"):
        optimize(src, reference_histograms(src, config.binning), config)
    steps = [r.getMessage().split(":")[0] for r in caplog.records if r.name == "histlayer.optim"]
    assert steps == ["step 0", "step 1", "step 2", "step 3"]


def test_optimize_non_finite(rng, monkeypatch):
    config = small_config()
    src = random_yuv(rng, config.binning)

    def broken(self, out, with_grad=False, skip_degenerate=False):
        report = LossReport(math.nan, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
        return report, np.zeros((3,) + out.shape)

    monkeypatch.setattr(TotalLoss, "evaluate", broken)
    with pytest.raises(OptimizationError):
        optimize(src, reference_histograms(src, config.binning), config)


def test_color_transfer():
    config = small_config(max_steps=3)
    src = scene(1, size=8)
    out, trace = color_transfer(src, solid((20, 200, 60), size=8), config)
    assert out.shape == src.shape
    assert out.dtype == np.uint8
    assert len(trace) == 4


def test_colorize():
    config = small_config(max_steps=3)
    gray = gray_ramp(size=8)
    ref = reference_histograms(rgb_to_yuv(solid((220, 30, 30), size=8), config.binning), config.binning)
    out, trace = colorize(gray, ref, config)
    assert out.shape == gray.shape
    assert len(trace) == 4
    assert trace[0].emd > 0


def test_histogram_match_classical(rng):
    source = rng.permutation(10).reshape(2, 5).astype(float)
    reference = np.arange(10) * 2.0
    np.testing.assert_array_equal(histogram_match_classical(source, reference), source * 2)


def test_histogram_match_classical_monotone(rng):
    source = rng.uniform(-1, 1, size=(20, 20))
    reference = rng.normal(0, 0.2, size=(10, 10))
    matched = histogram_match_classical(source, reference)
    order = np.argsort(source.ravel())
    assert np.all(np.diff(matched.ravel()[order]) >= 0)
    assert matched.min() >= reference.min() and matched.max() <= reference.max()


def test_classical_emd_self(config16):
    src = rgb_to_yuv(scene(5, size=8), config16)
    assert classical_emd(src, src, reference_histograms(src, config16), config16) == 0


def test_classical_emd_reaches_reference(rng, config16):
    src = random_yuv(rng, config16, size=8)
    ref = random_yuv(rng, config16, size=8)
    ref_hists = reference_histograms(ref, config16)

    raw = total_loss(src, src, ref_hists, LossWeights(emd=1, mi=0), config16).emd
    assert raw > 1e-4
    # distinct values: the remap hands every source pixel one reference value
    assert classical_emd(src, ref, ref_hists, config16) < 1e-12
