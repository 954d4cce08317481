"""Dense tensor helpers, seeded randomness and the 3x3 Gaussian blur.

Tensors are plain ``numpy.ndarray`` values in C (row-major) order with
dtype ``float32`` or ``float64``. Every helper here returns a fresh array and
leaves its arguments untouched.

Random numbers come from :class:`SeededRng`, a thin wrapper over the PCG64
bit generator. Uniforms are built from the raw 64-bit outputs (top 53 bits)
and normals use the Box-Muller transform, so the streams depend only on
PCG64 and the transform below, never on numpy's distribution code.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

DTYPES = {32: np.float32, 64: np.float64}

_TWO_POW_M53 = 2.0 ** -53


def dtype_for(precision: int) -> type:
    try:
        return DTYPES[int(precision)]
    except (KeyError, ValueError):
        raise ValueError(f"precision must be 32 or 64, got {precision!r}") from None


def precision_of(t: np.ndarray) -> int:
    if t.dtype == np.float32:
        return 32
    if t.dtype == np.float64:
        return 64
    raise TypeError(f"unsupported tensor dtype {t.dtype}")


def as_tensor(values, precision: int = 64) -> np.ndarray:
    """Copy ``values`` into a contiguous float tensor of the given precision."""
    return np.array(values, dtype=dtype_for(precision), order="C", copy=True)


def _shape(shape) -> tuple[int, ...]:
    if isinstance(shape, (int, np.integer)):
        shape = (int(shape),)
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"shape dimensions must be positive, got {shape}")
    return shape


def derive_seed(seed: int, *keys: int) -> int:
    """Split ``seed`` into an independent 64-bit sub-seed addressed by ``keys``."""
    ss = np.random.SeedSequence(int(seed) % 2**64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class SeededRng:
    """PCG64 stream owned by exactly one run."""

    def __init__(self, seed: int):
        self.seed = int(seed) % 2**64
        self._bits = np.random.PCG64(np.random.SeedSequence(self.seed))

    def uniform01(self, n: int) -> np.ndarray:
        """``n`` float64 values on [0, 1) with 53 random bits each."""
        raw = self._bits.random_raw(int(n))
        return (raw >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def uniform(self, shape, lo: float, hi: float, precision: int = 64) -> np.ndarray:
        shape = _shape(shape)
        u = self.uniform01(math.prod(shape)).reshape(shape)
        return (lo + (hi - lo) * u).astype(dtype_for(precision))

    def standard_normal(self, n: int) -> np.ndarray:
        n = int(n)
        pairs = (n + 1) // 2
        u1 = self.uniform01(pairs)
        u2 = self.uniform01(pairs)
        # 1 - u1 lies in (0, 1], so the log is finite
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        angle = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = radius * np.cos(angle)
        z[1::2] = radius * np.sin(angle)
        return z[:n]

    def integers(self, n: int, high: int) -> np.ndarray:
        """``n`` integers uniform on [0, high)."""
        return np.floor(self.uniform01(n) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        # Fisher-Yates driven by our own uniforms
        out = np.arange(n)
        u = self.uniform01(max(n - 1, 0))
        for i in range(n - 1, 0, -1):
            j = int(u[n - 1 - i] * (i + 1))
            out[i], out[j] = out[j], out[i]
        return out


def gaussian_draw(rng: SeededRng, shape, mu: float, sigma: float, precision: int = 64) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    shape = _shape(shape)
    z = rng.standard_normal(math.prod(shape)).reshape(shape)
    return (mu + sigma * z).astype(dtype_for(precision))


def gaussian_kernel_3x3(sigma: float) -> np.ndarray:
    """Normalized 3x3 Gaussian kernel on offsets {-1, 0, 1}^2 (float64)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    d = np.array([-1.0, 0.0, 1.0])
    k = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Convolve each channel of a [C, H, W] image with the 3x3 Gaussian.

    Edges use replicate padding, so a constant image is a fixed point.
    """
    if image.ndim != 3:
        raise ValueError(f"blur expects a [C, H, W] tensor, got shape {image.shape}")
    k = gaussian_kernel_3x3(sigma).astype(image.dtype)
    padded = np.pad(image, ((0, 0), (1, 1), (1, 1)), mode="edge")
    h, w = image.shape[1:]
    out = np.zeros_like(image)
    for dy in range(3):
        for dx in range(3):
            out += k[dy, dx] * padded[:, dy:dy + h, dx:dx + w]
    return out


# -- structural plumbing -----------------------------------------------------

def _same_precision(a: np.ndarray, b: np.ndarray) -> None:
    if a.dtype != b.dtype:
        raise TypeError(f"precision mismatch: {a.dtype} vs {b.dtype}")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_precision(a, b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_precision(a, b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a + b


def subtract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_precision(a, b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a - b


def scale(a: np.ndarray, alpha: float) -> np.ndarray:
    return (a * a.dtype.type(alpha)).astype(a.dtype)


def reshape(a: np.ndarray, shape) -> np.ndarray:
    shape = _shape(shape)
    if math.prod(shape) != a.size:
        raise ValueError(f"cannot reshape {a.shape} into {shape}")
    return np.ascontiguousarray(a).reshape(shape).copy()


def l1_sum(a: np.ndarray) -> float:
    return float(np.abs(a).sum(dtype=np.float64))


def l2_norm(a: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    return float(math.sqrt(a @ a))


def clamp(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if lo > hi:
        raise ValueError("clamp requires lo <= hi")
    return np.clip(a, lo, hi).astype(a.dtype)


def precision_cast(a: np.ndarray, precision: int) -> np.ndarray:
    return np.array(a, dtype=dtype_for(precision), copy=True)


def bilinear_downsample(image: np.ndarray, out_hw: Sequence[int]) -> np.ndarray:
    """Resize a [C, H, W] image with bilinear interpolation (align_corners=False).

    Works for up- and down-sampling; sample positions are pixel centres.
    """
    if image.ndim != 3:
        raise ValueError(f"expected [C, H, W], got {image.shape}")
    oh, ow = (int(v) for v in out_hw)
    if oh <= 0 or ow <= 0:
        raise ValueError("output size must be positive")
    _, h, w = image.shape

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        i0 = np.floor(pos).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, fy = axis(h, oh)
    x0, x1, fx = axis(w, ow)
    src = image.astype(np.float64)
    top = src[:, y0][:, :, x0] * (1 - fx) + src[:, y0][:, :, x1] * fx
    bot = src[:, y1][:, :, x0] * (1 - fx) + src[:, y1][:, :, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return out.astype(image.dtype)
