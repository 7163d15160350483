"""Grayscale raster operations.

Images are 2D float64 numpy arrays indexed ``[row, col]`` with values in
[0, 1]. Pixel ``(u, v)`` means column ``u``, row ``v``; integer coordinates are
pixel centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import correlate1d

from .geometry import EPS, check_invertible


def gaussian_sigma(kernel_size: int) -> float:
    return 0.3 * ((kernel_size - 1) * 0.5 - 1) + 0.8


def gaussian_kernel(kernel_size: int) -> np.ndarray:
    """Normalized 1D Gaussian taps for an odd ``kernel_size``."""
    sigma = gaussian_sigma(kernel_size)
    x = np.arange(kernel_size) - (kernel_size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _check_kernel_size(kernel_size: int) -> int:
    kernel_size = int(kernel_size)
    if kernel_size < 0 or (kernel_size >= 2 and kernel_size % 2 == 0):
        raise ValueError(f"kernel size must be 0 or a positive odd integer, got {kernel_size}")
    return kernel_size


def gaussian_blur(img: np.ndarray, kernel_size: int) -> np.ndarray:
    """Separable Gaussian blur with replicate-edge borders.

    Sizes 0 and 1 return an unchanged copy.
    """
    kernel_size = _check_kernel_size(kernel_size)
    img = np.asarray(img, dtype=float)
    if kernel_size <= 1:
        return img.copy()
    k = gaussian_kernel(kernel_size)
    out = correlate1d(img, k, axis=1, mode="nearest")
    return correlate1d(out, k, axis=0, mode="nearest")


@dataclass(frozen=True)
class BlurSpec:
    """Template blur pyramid: ``kernel_count`` Gaussians built from ``base_size``.

    >>> BlurSpec(7, 5).sizes
    (0, 5, 9, 13, 17, 21, 25)
    """

    kernel_count: int
    base_size: int = 5

    def __post_init__(self):
        if self.kernel_count < 0:
            raise ValueError("kernel_count must be non-negative")
        if self.kernel_count >= 1 and (self.base_size < 3 or self.base_size % 2 == 0):
            raise ValueError(f"base_size must be odd and >= 3, got {self.base_size}")

    @property
    def sizes(self) -> tuple[int, ...]:
        n, b = self.kernel_count, self.base_size
        if n == 0:
            return ()
        if n == 1:
            return (b,)
        return (0, b) + tuple(1 + i * (b - 1) for i in range(2, n))


def build_blurred_template(field_raster: np.ndarray, spec: BlurSpec) -> np.ndarray:
    """Sum of the raster blurred at every pyramid size, clipped to 1."""
    field_raster = np.asarray(field_raster, dtype=float)
    if not spec.sizes:
        return field_raster.copy()
    total = np.zeros_like(field_raster)
    for size in spec.sizes:
        total += gaussian_blur(field_raster, size)
    return np.minimum(total, 1.0)


def threshold_mask(img: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Binary {0, 1} image of pixels strictly above ``tau``."""
    return (np.asarray(img) > tau).astype(float)


def bilinear_sample(src: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample ``src`` at continuous pixel coordinates; 0 outside ``[0, w-1] x [0, h-1]``."""
    h, w = src.shape
    if h < 2 or w < 2:
        raise ValueError("source image must be at least 2x2")
    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    sx = np.where(inside, sx, 0.0)
    sy = np.where(inside, sy, 0.0)
    x0 = np.minimum(np.floor(sx).astype(np.intp), w - 2)
    y0 = np.minimum(np.floor(sy).astype(np.intp), h - 2)
    fx = sx - x0
    fy = sy - y0
    top = (1.0 - fx) * src[y0, x0] + fx * src[y0, x0 + 1]
    bottom = (1.0 - fx) * src[y0 + 1, x0] + fx * src[y0 + 1, x0 + 1]
    val = (1.0 - fy) * top + fy * bottom
    return np.where(inside, val, 0.0)


def warp_to_topview(src: np.ndarray, h, frame, out_w: int, out_h: int) -> np.ndarray:
    """Resample a camera image onto the top-view raster described by ``frame``.

    ``h`` maps world-plane meters to source pixels. Every output pixel is
    mapped to the world with ``frame.pixel_to_world``, then into the source
    with ``h`` and bilinearly sampled. World points whose homogeneous scale
    under ``h`` is not positive lie behind the camera and read as 0.
    """
    h = check_invertible(h)
    u, v = np.meshgrid(np.arange(out_w, dtype=float), np.arange(out_h, dtype=float))
    x, y = frame.pixel_to_world(u, v)
    qw = h[2, 0] * x + (h[2, 1] * y + h[2, 2])
    front = qw > EPS
    inv = 1.0 / np.where(front, qw, 1.0)
    sx = np.where(front, (h[0, 0] * x + (h[0, 1] * y + h[0, 2])) * inv, -1.0)
    sy = np.where(front, (h[1, 0] * x + (h[1, 1] * y + h[1, 2])) * inv, -1.0)
    return bilinear_sample(np.asarray(src, dtype=float), sx, sy)


def draw_segments(canvas: np.ndarray, a: np.ndarray, b: np.ndarray, half_width) -> None:
    """Set to 1 every pixel whose center is within ``half_width`` of a segment.

    ``a`` and ``b`` are ``(n, 2)`` arrays of ``(u, v)`` endpoints in pixels;
    ``half_width`` is a scalar or per-segment array. Modifies ``canvas`` in place.
    """
    h, w = canvas.shape
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    hw = np.broadcast_to(np.asarray(half_width, dtype=float), (len(a),))
    for (ax, ay), (bx, by), r in zip(a, b, hw):
        u0 = max(int(np.floor(min(ax, bx) - r)), 0)
        u1 = min(int(np.ceil(max(ax, bx) + r)), w - 1)
        v0 = max(int(np.floor(min(ay, by) - r)), 0)
        v1 = min(int(np.ceil(max(ay, by) + r)), h - 1)
        if u0 > u1 or v0 > v1:
            continue
        uu, vv = np.meshgrid(np.arange(u0, u1 + 1, dtype=float), np.arange(v0, v1 + 1, dtype=float))
        dx, dy = bx - ax, by - ay
        len2 = dx * dx + dy * dy
        if len2 > 0:
            s = np.clip(((uu - ax) * dx + (vv - ay) * dy) / len2, 0.0, 1.0)
        else:
            s = 0.0
        ex = uu - (ax + s * dx)
        ey = vv - (ay + s * dy)
        hit = ex * ex + ey * ey <= r * r
        canvas[v0 : v1 + 1, u0 : u1 + 1][hit] = 1.0


def read_png(path) -> np.ndarray:
    """Load a grayscale PNG as floats in [0, 1] (8- or 16-bit)."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64)
            return np.clip(arr / 65535.0, 0.0, 1.0)
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def write_png(path, img: np.ndarray, bits: int = 8) -> None:
    """Write ``img`` (values clipped to [0, 1]) as 8- or 16-bit grayscale, or RGB for 3-channel input."""
    img = np.clip(np.asarray(img, dtype=float), 0.0, 1.0)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    top = 255 if bits == 8 else 65535
    q = np.floor(img * top + 0.5)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if img.ndim == 3:
        Image.fromarray(q.astype(np.uint8) if bits == 8 else (q / 257).round().astype(np.uint8), "RGB").save(path)
    elif bits == 8:
        Image.fromarray(q.astype(np.uint8), "L").save(path)
    else:
        Image.fromarray(q.astype(np.uint16)).save(path)
