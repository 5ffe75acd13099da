"""Grayscale image and mask value types, PGM file I/O, raster arithmetic.

Images are immutable wrappers around read-only float64 arrays with
intensities in [0, 1]; masks wrap read-only boolean arrays.  All functions
here are pure, so values can be shared freely across threads.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PgmFormatError(ValueError):
    """Raised for a malformed or unsupported PGM header or raster."""


class PgmDepthError(PgmFormatError):
    """Raised when a file's maxval does not match the declared bit depth."""


class DimensionMismatchError(ValueError):
    """Raised when two rasters that must share dimensions do not."""


@dataclass(frozen=True)
class GrayImage:
    """A 2D grayscale raster, row-major, intensities nominally in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64, copy=True)
        if p.ndim != 2:
            raise ValueError(f"image must be 2D, got shape {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"image dimensions must be positive, got {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("image intensities must all be finite")
        p.flags.writeable = False
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BinaryMask:
    """A per-pixel boolean labeling (True = hand) matching some raster."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.array(self.pixels, dtype=bool, copy=True)
        if p.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"mask dimensions must be positive, got {p.shape}")
        p.flags.writeable = False
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def count(self) -> int:
        return int(self.pixels.sum())


def _read_pgm_tokens(data: bytes, n: int) -> tuple[list[bytes], int]:
    """Read n whitespace-separated header tokens, skipping # comments.

    Returns the tokens and the offset of the first raster byte (one
    whitespace character past the last token).
    """
    tokens = []
    i = 0
    while len(tokens) < n:
        if i >= len(data):
            raise PgmFormatError("truncated PGM header")
        c = data[i : i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            j = data.find(b"\n", i)
            if j < 0:
                raise PgmFormatError("unterminated comment in PGM header")
            i = j + 1
        else:
            j = i
            while j < len(data) and data[j : j + 1] not in b" \t\r\n#":
                j += 1
            tokens.append(data[i:j])
            i = j
    if i >= len(data) or data[i : i + 1] not in b" \t\r\n":
        raise PgmFormatError("missing whitespace before PGM raster")
    return tokens, i + 1


def load_image(path, bit_depth: int) -> GrayImage:
    """Load a binary PGM (P5) of the declared depth, scaled to [0, 1].

    8-bit rasters are one byte per pixel; 16-bit rasters are big-endian
    two-byte samples per the PGM convention.  Raises FileNotFoundError for
    a missing file, PgmFormatError for a bad header or short raster, and
    PgmDepthError when the file's maxval disagrees with `bit_depth`.
    """
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise PgmFormatError(f"{path}: not a binary PGM (P5) file")
    tokens, start = _read_pgm_tokens(data[2:], 3)
    start += 2
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PgmFormatError(f"{path}: non-numeric PGM header fields") from None
    if width < 1 or height < 1:
        raise PgmFormatError(f"{path}: bad dimensions {width}x{height}")
    expected_max = (1 << bit_depth) - 1
    if maxval != expected_max:
        raise PgmDepthError(
            f"{path}: maxval {maxval} does not match declared {bit_depth}-bit depth"
        )
    dtype = np.dtype(">u2") if bit_depth == 16 else np.dtype("u1")
    count = width * height
    raster = data[start : start + count * dtype.itemsize]
    if len(raster) != count * dtype.itemsize:
        raise PgmFormatError(f"{path}: raster shorter than header promises")
    values = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return GrayImage(values.astype(np.float64) / expected_max)


def save_image(image: GrayImage, path, bit_depth: int) -> None:
    """Write a binary PGM (P5) at the given depth, quantizing from [0, 1]."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    maxval = (1 << bit_depth) - 1
    quant = np.rint(np.clip(image.pixels, 0.0, 1.0) * maxval)
    dtype = np.dtype(">u2") if bit_depth == 16 else np.dtype("u1")
    header = f"P5\n{image.width} {image.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + quant.astype(dtype).tobytes())


def save_mask(mask: BinaryMask, path) -> None:
    """Write a mask as an 8-bit PGM with True = 255."""
    save_image(GrayImage(mask.pixels.astype(np.float64)), path, 8)


def load_mask(path) -> BinaryMask:
    """Read a mask from an 8-bit PGM; any value above half scale is True."""
    img = load_image(path, 8)
    return BinaryMask(img.pixels > 0.5)


def apply_mask(image: GrayImage, mask: BinaryMask) -> GrayImage:
    """Zero out pixels where the mask is False."""
    if image.pixels.shape != mask.pixels.shape:
        raise DimensionMismatchError(
            f"image {image.pixels.shape} vs mask {mask.pixels.shape}"
        )
    return GrayImage(np.where(mask.pixels, image.pixels, 0.0))


def warp_nearest(data: np.ndarray, a: np.ndarray, b: np.ndarray,
                 out_shape: tuple[int, int]) -> np.ndarray:
    """Inverse-map affine warp with nearest-neighbor sampling.

    For each output pixel (x, y), samples the source at a @ (x, y) + b.
    Out-of-bounds samples become the array's zero value (False for bools).
    """
    out_h, out_w = out_shape
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    sx = a[0, 0] * xs + a[0, 1] * ys + b[0]
    sy = a[1, 0] * xs + a[1, 1] * ys + b[1]
    # Half-up rounding: exact .5 lattices (integer scales) stay stable.
    ix = np.floor(sx + 0.5).astype(np.int64)
    iy = np.floor(sy + 0.5).astype(np.int64)
    h, w = data.shape
    valid = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out = np.zeros(out_shape, dtype=data.dtype)
    out[valid] = data[iy[valid], ix[valid]]
    return out


def warp_bilinear(data: np.ndarray, a: np.ndarray, b: np.ndarray,
                  out_shape: tuple[int, int], fill: float = 0.0) -> np.ndarray:
    """Inverse-map affine warp with bilinear sampling; outside -> fill."""
    out_h, out_w = out_shape
    xs, ys = np.meshgrid(np.arange(out_w, dtype=np.float64),
                         np.arange(out_h, dtype=np.float64))
    sx = a[0, 0] * xs + a[0, 1] * ys + b[0]
    sy = a[1, 0] * xs + a[1, 1] * ys + b[1]
    h, w = data.shape
    valid = (sx >= 0.0) & (sx <= w - 1.0) & (sy >= 0.0) & (sy <= h - 1.0)
    x0 = np.clip(np.floor(sx), 0, w - 1).astype(np.int64)
    y0 = np.clip(np.floor(sy), 0, h - 1).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = np.clip(sx, 0, w - 1) - x0
    fy = np.clip(sy, 0, h - 1) - y0
    top = data[y0, x0] * (1.0 - fx) + data[y0, x1] * fx
    bot = data[y1, x0] * (1.0 - fx) + data[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return np.where(valid, out, fill)
