from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from .core import BinningError, ConfigMismatch, ShapeMismatch

FloatArray = npt.NDArray[np.float64]


@dataclass(frozen=True)
class BinningConfig:
    """Bin count and kernel bandwidth, expressed as a fraction of the bin width."""

    bins: int = 256
    bandwidth_ratio: float = 2.5

    def __post_init__(self):
        if int(self.bins) != self.bins or self.bins <= 0:
            raise BinningError(f"Bin count must be a positive integer, got {self.bins}")
        if not self.bandwidth_ratio > 0 or not np.isfinite(self.bandwidth_ratio):
            raise BinningError(
                f"Bandwidth ratio must be a positive number, got {self.bandwidth_ratio}"
            )

    @property
    def width(self) -> float:
        """Bin width L."""
        return 2.0 / self.bins

    @property
    def bandwidth(self) -> float:
        """Kernel bandwidth B."""
        return self.width / self.bandwidth_ratio

    @cached_property
    def centers(self) -> FloatArray:
        """Bin centers mu_k."""
        centers = -1.0 + self.width * (np.arange(self.bins, dtype=np.float64) + 0.5)
        centers.flags.writeable = False
        return centers

    @property
    def vmin(self) -> float:
        return -1.0 + self.width / 2

    @property
    def vmax(self) -> float:
        return 1.0 - self.width / 2

    def clamp(self, values: npt.ArrayLike) -> FloatArray:
        """Clamp values into [vmin, vmax], where bins keep their full mass."""
        return np.clip(np.asarray(values, dtype=np.float64), self.vmin, self.vmax)

    def check_same(self, other: "BinningConfig") -> None:
        if self != other:
            raise ConfigMismatch(f"Binning mismatch: {self} vs {other}")


def sigmoid(z: npt.ArrayLike) -> FloatArray:
    """Logistic function, stable for large |z|."""
    return expit(z)


def _unwrap(x):
    # 0-d arrays back to numpy scalars
    return x[()] if isinstance(x, np.ndarray) and x.ndim == 0 else x


def sigmoid_kernel(z: npt.ArrayLike) -> FloatArray:
    """Derivative of the logistic function, sigmoid(z) * sigmoid(-z)."""
    z = np.asarray(z, dtype=np.float64)
    return expit(z) * expit(-z)


def _offsets(z: npt.ArrayLike, k: npt.ArrayLike, config: BinningConfig) -> FloatArray:
    k = np.asarray(k)
    if np.any((k < 0) | (k >= config.bins)):
        raise BinningError(f"Bin index out of range [0, {config.bins}): {k}")
    return np.asarray(z, dtype=np.float64) - config.centers[k]


def _membership(d: FloatArray, config: BinningConfig) -> FloatArray:
    # Pi is even in d; on -|d| both sigmoids stay small in the tails
    a = -np.abs(d)
    half = config.width / 2
    return expit((a + half) / config.bandwidth) - expit((a - half) / config.bandwidth)


def _membership_derivative(d: FloatArray, config: BinningConfig) -> FloatArray:
    # odd in d
    a = -np.abs(d)
    half = config.width / 2
    b = config.bandwidth
    g = (sigmoid_kernel((a + half) / b) - sigmoid_kernel((a - half) / b)) / b
    return np.where(d > 0, -g, g)


def pi_k(z: npt.ArrayLike, k: npt.ArrayLike, config: BinningConfig) -> FloatArray:
    """
    Soft membership of value(s) z in bin k:

        sigmoid((z - mu_k + L/2) / B) - sigmoid((z - mu_k - L/2) / B)
    """
    return _unwrap(_membership(_offsets(z, k, config), config))


def pi_k_deriv(z: npt.ArrayLike, k: npt.ArrayLike, config: BinningConfig) -> FloatArray:
    """Derivative of pi_k with respect to z."""
    return _unwrap(_membership_derivative(_offsets(z, k, config), config))


@dataclass(frozen=True, eq=False)
class Channel:
    """One color channel: an H x W grid of values in [-1, 1]."""

    values: FloatArray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise ShapeMismatch(f"Channel must be a non-empty 2D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("Channel values must be finite")
        if values.min() < -1.0 or values.max() > 1.0:
            raise ValueError("Channel values must lie in [-1, 1]")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return self.values.size


def _evaluate_maps(function, values: FloatArray, config: BinningConfig, threads: int) -> FloatArray:
    d = values[np.newaxis, :, :] - config.centers[:, np.newaxis, np.newaxis]
    if threads <= 1 or values.shape[0] < 2:
        return function(d, config)

    maps = np.empty_like(d)
    chunks = np.array_split(np.arange(values.shape[0]), min(threads, values.shape[0]))

    def fill(rows):
        maps[:, rows, :] = function(d[:, rows, :], config)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(fill, chunks))
    return maps


class ActivationStack:
    """
    The K activation maps of a channel, maps[k] = Pi_k(I).

    The channel values are kept along with the maps; the derivative maps
    needed by backward passes are computed once, on first use.
    """

    def __init__(self, channel: Channel, config: BinningConfig, maps: FloatArray, threads: int = 1):
        self.channel = channel
        self.config = config
        self.maps = maps
        self.threads = threads

    @property
    def shape(self) -> tuple[int, int]:
        return self.channel.shape

    @property
    def size(self) -> int:
        return self.channel.size

    @property
    def matrix(self) -> FloatArray:
        """The K x N matrix whose rows are the flattened activation maps."""
        return self.maps.reshape(self.config.bins, -1)

    @cached_property
    def derivatives(self) -> FloatArray:
        """K x H x W maps of Pi_k'(I)."""
        return activation_derivatives(self.channel, self.config, self.threads)

    def check_compatible(self, other: "ActivationStack") -> None:
        self.config.check_same(other.config)
        if self.shape != other.shape:
            raise ShapeMismatch(f"Channel shapes differ: {self.shape} vs {other.shape}")


def _as_channel(channel: Channel | npt.ArrayLike) -> Channel:
    return channel if isinstance(channel, Channel) else Channel(np.asarray(channel))


def activation_stack(
    channel: Channel | npt.ArrayLike, config: BinningConfig, threads: int = 1
) -> ActivationStack:
    """Apply the K membership functions to every pixel of a channel."""
    channel = _as_channel(channel)
    maps = _evaluate_maps(_membership, channel.values, config, threads)
    return ActivationStack(channel, config, maps, threads)


def activation_derivatives(
    channel: Channel | npt.ArrayLike, config: BinningConfig, threads: int = 1
) -> FloatArray:
    channel = _as_channel(channel)
    return _evaluate_maps(_membership_derivative, channel.values, config, threads)
