from dataclasses import dataclass
from typing import Any, Dict

import numpy as np
import numpy.typing as npt

from .binning import ActivationStack, BinningConfig, FloatArray
from .core import ShapeMismatch
from .serialization import csv_dump


@dataclass(frozen=True, eq=False)
class JointHistogram:
    """K x K soft co-occurrence of bin pairs at corresponding pixels."""

    config: BinningConfig
    mass: FloatArray

    def __post_init__(self):
        mass = np.asarray(self.mass, dtype=np.float64)
        k = self.config.bins
        if mass.shape != (k, k):
            raise ShapeMismatch(f"Expected a {k}x{k} joint histogram, got shape {mass.shape}")
        object.__setattr__(self, "mass", mass)

    @property
    def row_marginal(self) -> FloatArray:
        return self.mass.sum(axis=1)

    @property
    def column_marginal(self) -> FloatArray:
        return self.mass.sum(axis=0)

    @property
    def total(self) -> float:
        return float(self.mass.sum())

    def transpose(self) -> "JointHistogram":
        return JointHistogram(self.config, self.mass.T.copy())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "k": self.config.bins,
            "centers": self.config.centers.tolist(),
            "mass": self.mass.tolist(),
        }

    def to_csv(self) -> str:
        return csv_dump(None, (list(map(float, row)) for row in self.mass))


def joint_histogram(stack1: ActivationStack, stack2: ActivationStack) -> JointHistogram:
    """J = P1 P2^T / N with P_j the K x N activation matrices."""
    stack1.check_compatible(stack2)
    mass = stack1.matrix @ stack2.matrix.T / stack1.size
    return JointHistogram(stack1.config, mass)


def _check_grad_shape(stack: ActivationStack, grad_mass: FloatArray) -> None:
    k = stack.config.bins
    if grad_mass.shape != (k, k):
        raise ShapeMismatch(f"Expected a {k}x{k} gradient, got shape {grad_mass.shape}")


def joint_backward_first(
    stack1: ActivationStack, stack2: ActivationStack, grad_mass: npt.ArrayLike
) -> FloatArray:
    """Pixel gradient dLoss/dI1(x) only, with the second channel held fixed."""
    stack1.check_compatible(stack2)
    grad_mass = np.asarray(grad_mass, dtype=np.float64)
    _check_grad_shape(stack1, grad_mass)

    weights = (grad_mass @ stack2.matrix).reshape(stack1.maps.shape)
    return np.einsum("khw,khw->hw", stack1.derivatives, weights) / stack1.size


def joint_backward(
    stack1: ActivationStack, stack2: ActivationStack, grad_mass: npt.ArrayLike
) -> tuple[FloatArray, FloatArray]:
    """
    Pixel gradients of a loss given its gradient with respect to the joint histogram.

    Args:
        stack1: Activation stack of the first channel
        stack2: Activation stack of the second channel
        grad_mass: K x K dLoss/dmass

    Returns:
        H x W grids of dLoss/dI1(x) and dLoss/dI2(x)
    """

    grad_mass = np.asarray(grad_mass, dtype=np.float64)
    stack1.check_compatible(stack2)
    _check_grad_shape(stack1, grad_mass)
    return (
        joint_backward_first(stack1, stack2, grad_mass),
        joint_backward_first(stack2, stack1, grad_mass.T),
    )
