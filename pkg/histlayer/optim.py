import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import numpy.typing as npt

from .binning import BinningConfig, FloatArray, activation_stack
from .colorspace import ImageRGB8, ImageYUV, rgb_to_yuv, to_grayscale_yuv, yuv_to_rgb
from .core import OptimizationError, ShapeMismatch
from .histogram import SoftHistogram, soft_histogram
from .metrics import LossWeights, TotalLoss, emd, reference_histograms
from .serialization import csv_dump

logger = logging.getLogger(__name__)


class InitMode(str, enum.Enum):
    FROM_SOURCE = "from_source"
    FROM_NOISE = "from_noise"
    FROM_GRAY = "from_gray"


@dataclass
class AdamState:
    """Adam moments for a 3 x H x W image."""

    shape: tuple[int, ...]
    lr: float = 0.01
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: FloatArray = field(init=False, repr=False)
    v: FloatArray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("Adam eps must be positive")
        self.m = np.zeros(self.shape)
        self.v = np.zeros(self.shape)


def adam_step(state: AdamState, params: npt.ArrayLike, grads: npt.ArrayLike) -> FloatArray:
    """
    Apply one bias-corrected Adam update.

    The moments in `state` are updated in place.

    Returns:
        The updated parameters
    """

    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != state.m.shape or grads.shape != state.m.shape:
        raise ShapeMismatch(
            f"Adam state has shape {state.m.shape}, got {params.shape} and {grads.shape}"
        )

    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (grads * grads)

    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    denom = np.sqrt(state.v / bc2) + state.eps
    return params - (state.lr / bc1) * state.m / denom


@dataclass(frozen=True)
class OptimizationConfig:
    max_steps: int = 2000
    weights: LossWeights = field(default_factory=LossWeights)
    binning: BinningConfig = field(default_factory=BinningConfig)
    lr: float = 0.01
    seed: int = 0
    log_every: int = 100
    init_mode: InitMode = InitMode.FROM_SOURCE
    beta1: float = 0.5
    beta2: float = 0.999
    threads: int = 1

    def __post_init__(self):
        if self.max_steps <= 0:
            raise ValueError(f"max_steps must be positive, got {self.max_steps}")
        if not self.lr > 0:
            raise ValueError(f"Learning rate must be positive, got {self.lr}")
        if self.log_every < 1:
            raise ValueError(f"log_every must be at least 1, got {self.log_every}")
        if self.threads < 1:
            raise ValueError(f"threads must be at least 1, got {self.threads}")
        object.__setattr__(self, "init_mode", InitMode(self.init_mode))


@dataclass(frozen=True)
class TraceRecord:
    step: int
    total: float
    emd: float
    mi: float


@dataclass
class LossTrace:
    records: list[TraceRecord] = field(default_factory=list)
    warnings: list[tuple[int, str]] = field(default_factory=list)

    def append(self, record: TraceRecord) -> None:
        if self.records and record.step <= self.records[-1].step:
            raise ValueError("Trace steps must be strictly increasing")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, index: int) -> TraceRecord:
        return self.records[index]

    def to_csv(self) -> str:
        return csv_dump(
            ("step", "total", "emd", "mi"),
            ((r.step, r.total, r.emd, r.mi) for r in self.records),
        )


def initial_image(src: ImageYUV, cfg: OptimizationConfig) -> FloatArray:
    binning = cfg.binning
    match cfg.init_mode:
        case InitMode.FROM_SOURCE:
            start = src.stack()
        case InitMode.FROM_GRAY:
            start = to_grayscale_yuv(src).stack()
        case InitMode.FROM_NOISE:
            rng = np.random.default_rng(cfg.seed)
            start = rng.uniform(binning.vmin, binning.vmax, size=(3,) + src.shape)
    return binning.clamp(start)


def optimize(
    src: ImageYUV, ref_hists: Sequence[SoftHistogram], cfg: OptimizationConfig
) -> tuple[ImageYUV, LossTrace]:
    """
    Minimize the total loss over the output pixels.

    Args:
        src: Content source, also the starting point unless initialized from noise
        ref_hists: Target Y, U and V histograms
        cfg: Optimizer settings

    Returns:
        The optimized image and the loss of every step, the final one included
    """

    objective = TotalLoss(src, ref_hists, cfg.weights, cfg.binning, cfg.threads)
    state = AdamState((3,) + src.shape, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    params = initial_image(src, cfg)
    trace = LossTrace()

    for step in range(cfg.max_steps + 1):
        last = step == cfg.max_steps
        report, grads = objective.evaluate(
            ImageYUV.from_stack(params), with_grad=not last, skip_degenerate=True
        )
        if not math.isfinite(report.total):
            raise OptimizationError(f"Loss is not finite at step {step}")

        trace.append(TraceRecord(step, report.total, report.emd, report.mi))
        for name in report.skipped:
            trace.warnings.append((step, f"degenerate joint histogram on channel {name}, MI term skipped"))

        if step % cfg.log_every == 0 or last:
            logger.info(
                "step %d: total %.6g emd %.6g mi %.6g", step, report.total, report.emd, report.mi
            )
        if last:
            break

        params = cfg.binning.clamp(adam_step(state, params, grads))

    return ImageYUV.from_stack(params), trace


def color_transfer(
    src_rgb: ImageRGB8, ref_rgb: ImageRGB8, cfg: OptimizationConfig
) -> tuple[ImageRGB8, LossTrace]:
    """Paint the source image with the colors of the reference image."""
    src = rgb_to_yuv(src_rgb, cfg.binning)
    ref = rgb_to_yuv(ref_rgb, cfg.binning)
    out, trace = optimize(src, reference_histograms(ref, cfg.binning, cfg.threads), cfg)
    return yuv_to_rgb(out), trace


def colorize(
    gray_rgb: ImageRGB8, ref_hists: Sequence[SoftHistogram], cfg: OptimizationConfig
) -> tuple[ImageRGB8, LossTrace]:
    """Color a gray image so its histograms follow the given ones."""
    cfg = replace(cfg, init_mode=InitMode.FROM_GRAY)
    out, trace = optimize(rgb_to_yuv(gray_rgb, cfg.binning), ref_hists, cfg)
    return yuv_to_rgb(out), trace


def histogram_match_classical(source: npt.ArrayLike, reference: npt.ArrayLike) -> FloatArray:
    """
    Exact histogram matching of one channel: a monotone remap of the source
    values through the empirical CDFs onto the reference values.
    """

    source = np.asarray(source, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)

    src_values, src_index, src_counts = np.unique(
        source.ravel(), return_inverse=True, return_counts=True
    )
    ref_values, ref_counts = np.unique(reference.ravel(), return_counts=True)

    src_quantiles = np.cumsum(src_counts) / source.size
    ref_quantiles = np.cumsum(ref_counts) / reference.size

    matched = np.interp(src_quantiles, ref_quantiles, ref_values)
    return matched[src_index].reshape(source.shape)


def classical_emd(
    src: ImageYUV, ref: ImageYUV, ref_hists: Sequence[SoftHistogram], config: BinningConfig
) -> float:
    """Channel-averaged EMD reached by exact CDF histogram matching."""
    total = 0.0
    for s, r, h in zip(src.channels, ref.channels, ref_hists):
        matched = config.clamp(histogram_match_classical(s, r))
        total += emd(h, soft_histogram(activation_stack(matched, config)))
    return total / 3
