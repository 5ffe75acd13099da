"""2D discrete cosine transform and low-frequency coefficient selection.

The transform is the orthonormal DCT-II: coefficients

    C(u, v) = a(u) a(v) sum_x sum_y f(x, y)
              cos(pi (2x + 1) u / 2N) cos(pi (2y + 1) v / 2N)

with a(0) = sqrt(1/N) and a(i != 0) = sqrt(2/N).  Rectangular inputs use
the separable generalization with per-axis weights, so the transform stays
orthonormal and energy-preserving in every case.  Functions here operate on
plain 2D float arrays (use GrayImage.pixels at the call site).
"""

import numpy as np


def _basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis matrix: rows indexed by frequency."""
    k = np.arange(n, dtype=np.float64)
    mat = np.cos(np.pi * np.outer(k, 2.0 * k + 1.0) / (2.0 * n))
    mat *= np.sqrt(2.0 / n)
    mat[0, :] = np.sqrt(1.0 / n)
    return mat


def dct2(image: np.ndarray) -> np.ndarray:
    """Forward 2D DCT-II of a 2D array; output has the input's shape."""
    f = np.asarray(image, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 1 or f.shape[1] < 1:
        raise ValueError(f"dct2 needs a nonempty 2D array, got shape {f.shape}")
    ah = _basis(f.shape[0])
    aw = _basis(f.shape[1])
    return ah @ f @ aw.T


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of dct2; idct2(dct2(x)) == x to floating precision."""
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
        raise ValueError(f"idct2 needs a nonempty 2D array, got shape {c.shape}")
    ah = _basis(c.shape[0])
    aw = _basis(c.shape[1])
    return ah.T @ c @ aw


def zigzag_indices(height: int, width: int) -> list[tuple[int, int]]:
    """The JPEG zigzag scan order over a height x width grid.

    Starts at (0, 0); odd anti-diagonals run toward the lower left, even
    ones toward the upper right, clipped at the matrix edges.
    """
    order = []
    for d in range(height + width - 1):
        if d % 2:
            i0 = max(0, d - width + 1)
            rng = range(i0, min(d, height - 1) + 1)
        else:
            i0 = min(d, height - 1)
            rng = range(i0, max(0, d - width + 1) - 1, -1)
        order.extend((i, d - i) for i in rng)
    return order


def zigzag_select(coeffs: np.ndarray, count: int, order: str = "zigzag") -> np.ndarray:
    """First `count` coefficients in the chosen low-frequency-first scan.

    `order` is "zigzag" (default) or "raster" for a row-major scan kept
    around for sensitivity experiments.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"expected a 2D coefficient array, got shape {c.shape}")
    if not 1 <= count <= c.size:
        raise ValueError(f"count must be in [1, {c.size}], got {count}")
    if order == "zigzag":
        idx = zigzag_indices(*c.shape)[:count]
        return np.array([c[i, j] for i, j in idx])
    if order == "raster":
        return c.ravel()[:count].copy()
    raise ValueError(f"unknown scan order {order!r}")
