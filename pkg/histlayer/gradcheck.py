import math
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict

import numpy as np
import numpy.typing as npt

from .binning import BinningConfig, FloatArray
from .colorspace import ImageYUV
from .core import NonFiniteValue, ShapeMismatch
from .metrics import LossWeights, TotalLoss, reference_histograms

DEFAULT_STEP = 1e-4
DENOMINATOR_FLOOR = 1e-8


@dataclass(frozen=True)
class GradCheckReport:
    op_name: str
    max_rel_error: float
    num_points: int
    step: float

    def passed(self, threshold: float) -> bool:
        return self.max_rel_error < threshold

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _evaluate(fn: Callable[[FloatArray], float], x: FloatArray) -> float:
    value = float(fn(x))
    if not math.isfinite(value):
        raise NonFiniteValue(f"Function value is not finite: {value}")
    return value


def numerical_gradient(
    fn: Callable[[FloatArray], float], point: npt.ArrayLike, step: float = DEFAULT_STEP
) -> FloatArray:
    """Central differences (fn(x + h e_i) - fn(x - h e_i)) / 2h for every coordinate."""
    if not step > 0:
        raise ValueError(f"Step must be positive, got {step}")

    x = np.array(point, dtype=np.float64)
    _evaluate(fn, x)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)

    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        up = _evaluate(fn, x)
        flat[i] = original - step
        down = _evaluate(fn, x)
        flat[i] = original
        grad.flat[i] = (up - down) / (2 * step)

    return grad


def relative_error(analytic: npt.ArrayLike, numeric: npt.ArrayLike) -> FloatArray:
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denominator = np.maximum(np.maximum(np.abs(a), np.abs(b)), DENOMINATOR_FLOOR)
    return np.abs(a - b) / denominator


def check_scalar_fn(
    fn: Callable[[FloatArray], float],
    analytic_grad: Callable[[FloatArray], npt.ArrayLike],
    point: npt.ArrayLike,
    step: float = DEFAULT_STEP,
    op_name: str = "fn",
) -> GradCheckReport:
    """
    Compare an analytic gradient with central finite differences.

    Args:
        fn: Scalar function of a parameter grid
        analytic_grad: Function returning the gradient grid of `fn`
        point: Where to compare
        step: Finite-difference step
        op_name: Name reported back

    Returns:
        The largest relative error over all coordinates
    """

    x = np.asarray(point, dtype=np.float64)
    numeric = numerical_gradient(fn, x, step)
    analytic = np.asarray(analytic_grad(x.copy()), dtype=np.float64)
    if analytic.shape != x.shape:
        raise ShapeMismatch(f"Gradient shape {analytic.shape} differs from point {x.shape}")

    return GradCheckReport(
        op_name=op_name,
        max_rel_error=float(relative_error(analytic, numeric).max()),
        num_points=x.size,
        step=step,
    )


def random_image(rng: np.random.Generator, size: int, config: BinningConfig) -> ImageYUV:
    return ImageYUV.from_stack(rng.uniform(config.vmin, config.vmax, size=(3, size, size)))


def check_total_loss(
    size: int = 8,
    bins: int = 16,
    seed: int = 42,
    step: float = DEFAULT_STEP,
    bandwidth_ratio: float = 2.5,
    weights: LossWeights | None = None,
) -> GradCheckReport:
    """End-to-end check of the total-loss pixel gradient on random images."""
    config = BinningConfig(bins, bandwidth_ratio)
    if step >= config.width / 2:
        # perturbed pixels would leave [-1, 1]
        raise ValueError(f"Step must be below half a bin width ({config.width / 2:g}), got {step:g}")

    rng = np.random.default_rng(seed)
    source = random_image(rng, size, config)
    reference = random_image(rng, size, config)
    out = random_image(rng, size, config)

    objective = TotalLoss(
        source, reference_histograms(reference, config), weights or LossWeights(), config
    )

    def fn(x: FloatArray) -> float:
        report, _ = objective.evaluate(ImageYUV.from_stack(x))
        return report.total

    def analytic(x: FloatArray) -> FloatArray:
        _, grad = objective.evaluate(ImageYUV.from_stack(x), with_grad=True)
        return grad  # type: ignore[return-value]

    return check_scalar_fn(fn, analytic, out.stack(), step, op_name="total_loss")
