import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Sequence

import numpy as np

from .binning import ActivationStack, BinningConfig, FloatArray, activation_stack
from .colorspace import ImageYUV
from .core import ConfigMismatch, DegenerateJoint, EmptyDistribution, ShapeMismatch
from .histogram import SoftHistogram, histogram_backward, soft_histogram
from .joint import JointHistogram, joint_backward_first, joint_histogram

logger = logging.getLogger(__name__)

EPS = 1e-12
CHANNELS = ("y", "u", "v")


@dataclass(frozen=True)
class LossWeights:
    emd: float = 1.0
    mi: float = 1.0
    adv: float = 0.0

    def __post_init__(self):
        for name in ("emd", "mi", "adv"):
            value = getattr(self, name)
            if not value >= 0 or not math.isfinite(value):
                raise ValueError(f"Loss weight {name} must be a non-negative number, got {value}")
        if self.adv != 0:
            raise ValueError("The adversarial loss is not available, its weight must be 0")


@dataclass(frozen=True)
class LossReport:
    total: float
    emd_per_channel: tuple[float, float, float]
    mi_per_channel: tuple[float, float, float]
    skipped: tuple[str, ...] = field(default=())

    @property
    def emd(self) -> float:
        return sum(self.emd_per_channel) / 3

    @property
    def mi(self) -> float:
        """Channel average of D_MI; skipped channels count as zero."""
        return sum(0.0 if math.isnan(d) else d for d in self.mi_per_channel) / 3

    def to_dict(self) -> Dict[str, Any]:
        return {
            "total": self.total,
            "emd": self.emd,
            "mi": self.mi,
            "emd_per_channel": dict(zip(CHANNELS, self.emd_per_channel)),
            "mi_per_channel": {
                name: None if math.isnan(d) else d for name, d in zip(CHANNELS, self.mi_per_channel)
            },
            "skipped": list(self.skipped),
        }


def _check_same_config(h1, h2) -> None:
    if h1.config != h2.config:
        raise ConfigMismatch(f"Histograms use different binning: {h1.config} vs {h2.config}")


def emd(h1: SoftHistogram, h2: SoftHistogram) -> float:
    """Sum over bins of the squared difference of the cumulative histograms."""
    _check_same_config(h1, h2)
    diff = np.cumsum(h1.mass) - np.cumsum(h2.mass)
    return float(np.dot(diff, diff))


def emd_backward(h1: SoftHistogram, h2: SoftHistogram) -> tuple[FloatArray, FloatArray]:
    _check_same_config(h1, h2)
    diff = np.cumsum(h1.mass) - np.cumsum(h2.mass)
    # grad1[k] = 2 * sum_{i >= k} diff[i]
    grad1 = 2.0 * np.cumsum(diff[::-1])[::-1]
    return grad1, -grad1


def entropy(hist: SoftHistogram) -> float:
    p = hist.mass[hist.mass >= EPS]
    return float(-np.sum(p * np.log(p)))


def _check_nonempty(j: JointHistogram) -> None:
    if not j.total > 0:
        raise EmptyDistribution("empty distribution")


def _information_terms(j: JointHistogram):
    p = j.mass
    p1 = j.row_marginal
    p2 = j.column_marginal
    mask = p >= EPS
    log_p = np.log(np.where(mask, p, 1.0))
    log_p1 = np.log(np.where(p1 >= EPS, p1, 1.0))
    log_p2 = np.log(np.where(p2 >= EPS, p2, 1.0))
    return p, p1, p2, mask, log_p, log_p1, log_p2


def mutual_information(j: JointHistogram) -> float:
    _check_nonempty(j)
    p, _, _, mask, log_p, log_p1, log_p2 = _information_terms(j)
    terms = p * (log_p - log_p1[:, np.newaxis] - log_p2[np.newaxis, :])
    return float(np.sum(terms[mask]))


def joint_entropy(j: JointHistogram) -> float:
    _check_nonempty(j)
    mask = j.mass >= EPS
    p = j.mass[mask]
    return float(-np.sum(p * np.log(p)))


def d_mi(j: JointHistogram) -> float:
    """1 - I / H, with marginals taken as the row and column sums of the joint."""
    h = joint_entropy(j)
    if h <= EPS:
        raise DegenerateJoint("degenerate joint distribution")
    return 1.0 - mutual_information(j) / h


def mi_backward(j: JointHistogram) -> FloatArray:
    """Gradient of D_MI with respect to every joint cell, marginals included."""
    h = joint_entropy(j)
    if h <= EPS:
        raise DegenerateJoint("degenerate joint distribution")
    i = mutual_information(j)

    p, p1, p2, mask, log_p, log_p1, log_p2 = _information_terms(j)
    masked = np.where(mask, p, 0.0)
    # d/dp1[a] of -sum_b p[a, b] log p1[a], spread over row a (and likewise columns)
    row = np.divide(masked.sum(axis=1), p1, out=np.zeros_like(p1), where=p1 >= EPS)
    column = np.divide(masked.sum(axis=0), p2, out=np.zeros_like(p2), where=p2 >= EPS)

    grad_i = (
        log_p + 1.0 - log_p1[:, np.newaxis] - log_p2[np.newaxis, :]
        - row[:, np.newaxis]
        - column[np.newaxis, :]
    )
    grad_h = -(log_p + 1.0)
    grad = -(grad_i * h - i * grad_h) / (h * h)
    return np.where(mask, grad, 0.0)


def reference_histograms(
    img: ImageYUV, config: BinningConfig, threads: int = 1
) -> tuple[SoftHistogram, SoftHistogram, SoftHistogram]:
    y, u, v = (soft_histogram(activation_stack(c, config, threads)) for c in img.channels)
    return y, u, v


class TotalLoss:
    """
    Weighted sum of the color loss against reference histograms and the
    content loss against a source image.

    The source activation stacks are built once and reused by every
    evaluation.
    """

    def __init__(
        self,
        source: ImageYUV,
        references: Sequence[SoftHistogram],
        weights: LossWeights,
        config: BinningConfig,
        threads: int = 1,
    ):
        if len(references) != 3:
            raise ShapeMismatch(f"Expected 3 reference histograms, got {len(references)}")
        for hist in references:
            if hist.config != config:
                raise ConfigMismatch(f"Reference histogram binning {hist.config} is not {config}")

        self.source = source
        self.references = tuple(references)
        self.weights = weights
        self.config = config
        self.threads = threads

    @cached_property
    def source_stacks(self) -> tuple[ActivationStack, ...]:
        return tuple(activation_stack(c, self.config, self.threads) for c in self.source.channels)

    def evaluate(
        self, out: ImageYUV, with_grad: bool = False, skip_degenerate: bool = False
    ) -> tuple[LossReport, FloatArray | None]:
        """
        Evaluate the loss, and optionally its gradient, at an output image.

        Args:
            out: Output image, same shape as the source
            with_grad: Also compute the 3 x H x W pixel gradient
            skip_degenerate: Drop the MI term of channels with a degenerate
                joint histogram instead of raising

        Returns:
            The loss report and the gradient (None unless requested)
        """

        if out.shape != self.source.shape:
            raise ShapeMismatch(f"Output shape {out.shape} differs from source {self.source.shape}")

        emds, mis, skipped = [], [], []
        grads = np.zeros((3,) + out.shape) if with_grad else None

        for c, (name, values, src_stack, ref) in enumerate(
            zip(CHANNELS, out.channels, self.source_stacks, self.references)
        ):
            out_stack = activation_stack(values, self.config, self.threads)
            out_hist = soft_histogram(out_stack)
            emds.append(emd(ref, out_hist))

            joint = joint_histogram(out_stack, src_stack)
            try:
                mis.append(d_mi(joint))
            except DegenerateJoint:
                if not skip_degenerate:
                    raise
                logger.warning("Degenerate joint histogram on channel %s, MI term skipped", name)
                mis.append(math.nan)
                skipped.append(name)

            if grads is not None:
                if self.weights.emd > 0:
                    _, grad_out = emd_backward(ref, out_hist)
                    grads[c] += self.weights.emd / 3 * histogram_backward(out_stack, grad_out)
                if self.weights.mi > 0 and name not in skipped:
                    grad_joint = joint_backward_first(out_stack, src_stack, mi_backward(joint))
                    grads[c] += self.weights.mi / 3 * grad_joint

        report = _report(emds, mis, skipped, self.weights)
        return report, grads


def _report(emds, mis, skipped, weights: LossWeights) -> LossReport:
    partial = LossReport(0.0, tuple(emds), tuple(mis), tuple(skipped))  # type: ignore[arg-type]
    total = weights.emd * partial.emd + weights.mi * partial.mi
    return LossReport(total, partial.emd_per_channel, partial.mi_per_channel, partial.skipped)


def total_loss(
    out: ImageYUV,
    src: ImageYUV,
    ref_hists: Sequence[SoftHistogram],
    weights: LossWeights,
    config: BinningConfig,
) -> LossReport:
    report, _ = TotalLoss(src, ref_hists, weights, config).evaluate(out)
    return report
