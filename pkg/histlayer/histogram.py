from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
import numpy.typing as npt

from .binning import ActivationStack, BinningConfig, Channel, FloatArray, activation_stack
from .core import HistogramFormatError, ShapeMismatch


@dataclass(frozen=True, eq=False)
class SoftHistogram:
    """Differentiable histogram: mass[k] is the soft share of pixels in bin k."""

    config: BinningConfig
    mass: FloatArray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        if mass.shape != (self.config.bins,):
            raise ShapeMismatch(f"Expected {self.config.bins} bins, got shape {mass.shape}")
        object.__setattr__(self, "mass", mass)

    @property
    def centers(self) -> FloatArray:
        return self.config.centers

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.config.bins,
            "centers": self.centers.tolist(),
            "mass": self.mass.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Any, bandwidth_ratio: float = 2.5) -> "SoftHistogram":
        """
        Build a histogram from its serialized form.

        Args:
            data: Mapping with "k", "mass" and optionally "centers"
            bandwidth_ratio: Bandwidth ratio of the binning the mass refers to

        Returns:
            The histogram
        """

        try:
            k = data["k"]
            mass = np.asarray(data["mass"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise HistogramFormatError(f"Invalid histogram: {e}")

        if not isinstance(k, int) or k <= 0 or mass.shape != (k,):
            raise HistogramFormatError(f"Histogram must have k={k} mass values")
        if not np.all(np.isfinite(mass)) or np.any(mass < 0):
            raise HistogramFormatError("Histogram mass must be finite and non-negative")

        config = BinningConfig(k, bandwidth_ratio)
        if "centers" in data and not np.allclose(data["centers"], config.centers, atol=1e-9):
            raise HistogramFormatError("Histogram centers do not match a uniform partition of [-1, 1]")

        return cls(config, mass)


@dataclass(frozen=True, eq=False)
class CumulativeHistogram:
    config: BinningConfig
    cdf: FloatArray


def soft_histogram(stack: ActivationStack) -> SoftHistogram:
    """Average each activation map over the pixels."""
    # numpy's pairwise summation has a fixed order for a given shape
    mass = stack.matrix.sum(axis=1) / stack.size
    return SoftHistogram(stack.config, mass)


def channel_histogram(
    channel: Channel | npt.ArrayLike, config: BinningConfig, threads: int = 1
) -> SoftHistogram:
    return soft_histogram(activation_stack(channel, config, threads))


def cumulative(hist: SoftHistogram) -> CumulativeHistogram:
    return CumulativeHistogram(hist.config, np.cumsum(hist.mass))


def histogram_backward(stack: ActivationStack, grad_mass: npt.ArrayLike) -> FloatArray:
    """
    Pixel gradient of a loss given its gradient with respect to the histogram.

    Args:
        stack: Activation stack the histogram was built from
        grad_mass: dLoss/dmass, one value per bin

    Returns:
        H x W grid of dLoss/dI(x)
    """

    grad_mass = np.asarray(grad_mass, dtype=np.float64)
    if grad_mass.shape != (stack.config.bins,):
        raise ShapeMismatch(f"Expected {stack.config.bins} gradient values, got {grad_mass.shape}")

    return np.tensordot(grad_mass, stack.derivatives, axes=1) / stack.size
