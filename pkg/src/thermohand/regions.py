"""Hand normalization and the three analysis regions.

A masked hand is normalized by rotating its principal axis to vertical,
cropping to the mask bounding box, and fitting the crop into a fixed square
frame (aspect-preserving, zero-padded).  From the normalized hand three
regions can be pulled: the whole hand, a central palm zone below the
fingers, and the index finger alone.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import ndimage

from .imagecore import BinaryMask, GrayImage, warp_bilinear, warp_nearest


class MaskTooSmallError(ValueError):
    """Raised when the mask has too few pixels to normalize."""


class IsotropicMaskError(ValueError):
    """Raised when the mask has no usable principal axis."""


class FingerSeparationError(RuntimeError):
    """Raised when finger components cannot be isolated; callers should
    fall back to the whole-hand region."""


class RegionKind(Enum):
    FINGER = "finger"
    CENTRAL_ZONE = "central"
    WHOLE_HAND = "hand"


DEFAULT_OUT_SIZE = 128
MIN_MASK_PIXELS = 100
# Fractions of the normalized frame; invented constants, overridable.
CENTRAL_ROWS = (0.45, 1.0)
CENTRAL_COLS = (0.20, 0.80)
FINGER_LINE_FRAC = 0.34
FINGER_FRAME = (96, 32)  # rows x cols
MIN_FINGER_PIXELS = 15


@dataclass(frozen=True)
class NormalizedHand:
    """A hand image in the canonical upright frame.

    `applied_rotation` is the angle the source was rotated by (about
    `rotation_center`, in source coordinates); `crop_origin` is the mask
    bounding-box corner in the rotated frame; `content_scale` and
    `content_offset` place the isotropically resized crop inside the
    square output frame.
    """

    image: GrayImage
    mask: BinaryMask
    applied_rotation: float
    crop_origin: tuple[float, float]
    rotation_center: tuple[float, float]
    content_scale: float
    content_offset: tuple[float, float]

    def source_point(self, nx: float, ny: float) -> tuple[float, float]:
        """Map normalized-frame coordinates back to source coordinates."""
        ox, oy = self.content_offset
        x0, y0 = self.crop_origin
        xr = x0 + (nx - ox + 0.5) / self.content_scale - 0.5
        yr = y0 + (ny - oy + 0.5) / self.content_scale - 0.5
        gx, gy = self.rotation_center
        c, s = math.cos(-self.applied_rotation), math.sin(-self.applied_rotation)
        dx, dy = xr - gx, yr - gy
        return (gx + c * dx - s * dy, gy + s * dx + c * dy)


def _principal_axis_angle(mask: np.ndarray) -> tuple[float, tuple[float, float]]:
    """Angle of the largest-variance axis, measured from vertical."""
    ys, xs = np.nonzero(mask)
    gx, gy = float(xs.mean()), float(ys.mean())
    coords = np.stack([xs - gx, ys - gy])
    cov = coords @ coords.T / coords.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0 or (evals[1] - evals[0]) <= 0.01 * evals[1]:
        raise IsotropicMaskError(
            f"mask axis undefined: eigenvalues {evals[0]:.4g}, {evals[1]:.4g} within 1%"
        )
    vx, vy = evecs[0, 1], evecs[1, 1]
    alpha = math.atan2(vx, vy)
    if alpha <= -math.pi / 2:
        alpha += math.pi
    elif alpha > math.pi / 2:
        alpha -= math.pi
    return alpha, (gx, gy)


def normalize_hand(image: GrayImage, mask: BinaryMask,
                   out_size: int = DEFAULT_OUT_SIZE) -> NormalizedHand:
    """Rotate the principal axis vertical, crop to the mask, fit to a square.

    The crop keeps its aspect ratio (isotropic rescale) and is centered in
    the out_size x out_size frame with zero padding, so the principal axis
    stays vertical and re-normalizing is nearly a no-op.
    """
    if image.pixels.shape != mask.pixels.shape:
        raise ValueError("image and mask dimensions must match")
    if mask.count() < MIN_MASK_PIXELS:
        raise MaskTooSmallError(
            f"mask has {mask.count()} true pixels, need >= {MIN_MASK_PIXELS}"
        )
    alpha, (gx, gy) = _principal_axis_angle(mask.pixels)

    # Inverse map of the verticalizing rotation (about the centroid).
    c, s = math.cos(-alpha), math.sin(-alpha)
    rot_inv = np.array([[c, -s], [s, c]])
    center = np.array([gx, gy])
    b_rot = center - rot_inv @ center
    rotated_mask = warp_nearest(mask.pixels, rot_inv, b_rot, mask.pixels.shape)
    ys, xs = np.nonzero(rotated_mask)
    if ys.size == 0:
        raise MaskTooSmallError("mask left the frame during rotation")
    y0, y1 = int(ys.min()), int(ys.max())
    x0, x1 = int(xs.min()), int(xs.max())
    bh, bw = y1 - y0 + 1, x1 - x0 + 1

    scale = out_size / max(bh, bw)
    ch, cw = min(out_size, round(bh * scale)), min(out_size, round(bw * scale))
    oy, ox = (out_size - ch) // 2, (out_size - cw) // 2

    # Compose (normalized frame -> rotated frame -> source frame) into one
    # affine so intensities are resampled exactly once.
    a_zoom = np.eye(2) / scale
    b_zoom = np.array([
        x0 + (0.5 - ox) / scale - 0.5,
        y0 + (0.5 - oy) / scale - 0.5,
    ])
    a_total = rot_inv @ a_zoom
    b_total = rot_inv @ b_zoom + b_rot

    out_shape = (out_size, out_size)
    norm_image = warp_bilinear(image.pixels, a_total, b_total, out_shape)
    norm_mask = warp_nearest(mask.pixels, a_total, b_total, out_shape)
    return NormalizedHand(
        image=GrayImage(norm_image),
        mask=BinaryMask(norm_mask),
        applied_rotation=alpha,
        crop_origin=(float(x0), float(y0)),
        rotation_center=(gx, gy),
        content_scale=float(scale),
        content_offset=(float(ox), float(oy)),
    )


def index_finger_component(hand: NormalizedHand,
                           line_frac: float = FINGER_LINE_FRAC,
                           min_pixels: int = MIN_FINGER_PIXELS) -> np.ndarray:
    """Boolean mask of the index finger inside the normalized frame.

    Finger blobs are the connected components of the mask above the finger
    line.  The thumb is the component whose topmost pixel sits lowest; the
    index finger is its neighbor in left-to-right order.  Needs at least
    four separable components.
    """
    size = hand.mask.height
    line_row = round(line_frac * size)
    band = np.zeros_like(hand.mask.pixels)
    band[:line_row] = hand.mask.pixels[:line_row]
    labels, n = ndimage.label(band, structure=np.ones((3, 3), dtype=int))
    comps = []
    for lab in range(1, n + 1):
        comp = labels == lab
        if comp.sum() < min_pixels:
            continue
        ys, xs = np.nonzero(comp)
        comps.append((float(xs.mean()), int(ys.min()), comp))
    if len(comps) < 4:
        raise FingerSeparationError(
            f"only {len(comps)} finger components above the palm line "
            "(need >= 4); fall back to the whole-hand region"
        )
    comps.sort(key=lambda item: item[0])
    thumb_pos = max(range(len(comps)), key=lambda i: comps[i][1])
    if thumb_pos == 0:
        chosen = comps[1][2]
    elif thumb_pos == len(comps) - 1:
        chosen = comps[-2][2]
    else:
        raise FingerSeparationError(
            "thumb component is not at the hand's edge; "
            "fall back to the whole-hand region"
        )
    return chosen


def extract_region(hand: NormalizedHand, kind: RegionKind,
                   central_rows: tuple[float, float] = CENTRAL_ROWS,
                   central_cols: tuple[float, float] = CENTRAL_COLS,
                   finger_line_frac: float = FINGER_LINE_FRAC,
                   finger_frame: tuple[int, int] = FINGER_FRAME) -> GrayImage:
    """Pull one analysis region out of a normalized hand."""
    if kind is RegionKind.WHOLE_HAND:
        return hand.image
    size = hand.image.height
    if kind is RegionKind.CENTRAL_ZONE:
        r0, r1 = (round(f * size) for f in central_rows)
        c0, c1 = (round(f * size) for f in central_cols)
        return GrayImage(hand.image.pixels[r0:r1, c0:c1])
    if kind is RegionKind.FINGER:
        comp = index_finger_component(hand, finger_line_frac)
        ys, xs = np.nonzero(comp)
        y0, y1 = int(ys.min()), int(ys.max())
        x0, x1 = int(xs.min()), int(xs.max())
        isolated = np.where(comp, hand.image.pixels, 0.0)
        out_h, out_w = finger_frame
        a = np.array([[(x1 - x0 + 1) / out_w, 0.0],
                      [0.0, (y1 - y0 + 1) / out_h]])
        b = np.array([
            x0 + 0.5 * (x1 - x0 + 1) / out_w - 0.5,
            y0 + 0.5 * (y1 - y0 + 1) / out_h - 0.5,
        ])
        return GrayImage(warp_bilinear(isolated, a, b, (out_h, out_w)))
    raise ValueError(f"unknown region kind {kind!r}")
