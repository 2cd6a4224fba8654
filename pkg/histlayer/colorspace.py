from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from PIL import Image, UnidentifiedImageError

from .binning import BinningConfig, FloatArray
from .core import ImageReadError, ShapeMismatch

ImageRGB8 = npt.NDArray[np.uint8]

# full-range BT.601, U and V in [-0.5, 0.5] before scaling to [-1, 1]
KR, KG, KB = 0.299, 0.587, 0.114
# U = (B - Y) / (2 (1 - KB)), V = (R - Y) / (2 (1 - KR))
U_SCALE = 0.5 / (1.0 - KB)
V_SCALE = 0.5 / (1.0 - KR)


@dataclass(frozen=True, eq=False)
class ImageYUV:
    y: FloatArray
    u: FloatArray
    v: FloatArray

    def __post_init__(self):
        shapes = {np.shape(c) for c in self.channels}
        if len(shapes) != 1 or len(next(iter(shapes))) != 2:
            raise ShapeMismatch(f"YUV channels must be 2D grids of one shape, got {shapes}")
        for name in ("y", "u", "v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))

    @property
    def channels(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        return (self.y, self.u, self.v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.y.shape  # type: ignore[return-value]

    def stack(self) -> FloatArray:
        """3 x H x W array."""
        return np.stack(self.channels)

    @classmethod
    def from_stack(cls, array: npt.ArrayLike) -> "ImageYUV":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3 or array.shape[0] != 3:
            raise ShapeMismatch(f"Expected a 3 x H x W array, got shape {array.shape}")
        return cls(array[0].copy(), array[1].copy(), array[2].copy())


def validate_rgb(img: npt.ArrayLike) -> ImageRGB8:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise ShapeMismatch(f"Expected an H x W x 3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 255:
        raise ValueError("RGB components must lie in [0, 255]")
    return img.astype(np.uint8)


def rgb_to_yuv(img: npt.ArrayLike, config: BinningConfig) -> ImageYUV:
    rgb = validate_rgb(img).astype(np.float64) / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]

    y = KR * r + KG * g + KB * b
    u = np.clip(U_SCALE * (b - y), -0.5, 0.5)
    v = np.clip(V_SCALE * (r - y), -0.5, 0.5)

    return ImageYUV(config.clamp(2 * y - 1), config.clamp(2 * u), config.clamp(2 * v))


def yuv_to_rgb(img: ImageYUV) -> ImageRGB8:
    y = (img.y + 1) / 2
    u = img.u / 2
    v = img.v / 2

    r = y + v / V_SCALE
    b = y + u / U_SCALE
    g = (y - KR * r - KB * b) / KG

    rgb = np.stack([r, g, b], axis=-1)
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def to_grayscale_yuv(img: ImageYUV) -> ImageYUV:
    """Keep the luma, drop the chroma."""
    return ImageYUV(img.y.copy(), np.zeros_like(img.u), np.zeros_like(img.v))


def read_png(path: str | Path) -> ImageRGB8:
    """Read an image as 8-bit RGB, dropping any alpha channel."""
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ImageReadError(f"Cannot read image {path}: {e}")


def write_png(path: str | Path, img: npt.ArrayLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(validate_rgb(img)).save(path, format="PNG")
