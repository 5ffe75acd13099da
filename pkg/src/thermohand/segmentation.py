"""VIS-mask extraction and transfer into thermal coordinates.

The thermal segmentation pipeline binarizes the visible image with Otsu's
threshold, optionally cleans the mask, and maps it into the thermal frame
through a similarity transform (rotation + translation + isotropic scale).
The transform comes either from a fixed calibration or from a derivative-free
simplex search that maximizes mask overlap against an Otsu-binarized thermal
image.  Transferring the visible mask keeps finger regions whose temperature
matches the background, which direct thermal thresholding would drop.
"""

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .imagecore import (
    BinaryMask,
    GrayImage,
    apply_mask,
    warp_bilinear,
    warp_nearest,
)


class DegenerateImageError(ValueError):
    """Raised when an operation is undefined on a constant image."""


class RegistrationError(RuntimeError):
    """Raised when the registration search cannot be run or evaluated."""


HAND_ABOVE = "hand_above"
HAND_BELOW = "hand_below"


class OtsuResult(NamedTuple):
    threshold: float
    degenerate: bool


def otsu_threshold(image: GrayImage, bins: int = 256) -> OtsuResult:
    """Threshold maximizing between-class variance of the histogram split.

    Intensities are binned over the image's own value range; the returned
    level is the center of the last bin of the lower class, with ties
    broken toward the lowest level.  Splits within 1e-9 relative of the
    best variance count as tied, so the winner does not depend on
    accumulation order.  A constant image has no split: its single
    intensity comes back with `degenerate` set.
    """
    if bins < 2:
        raise ValueError(f"bins must be >= 2, got {bins}")
    values = image.pixels.ravel()
    if values.min() == values.max():
        return OtsuResult(float(values[0]), True)
    hist, edges = np.histogram(values, bins=bins,
                               range=(float(values.min()), float(values.max())))
    centers = 0.5 * (edges[:-1] + edges[1:])
    counts = hist.astype(np.float64)
    w0 = np.cumsum(counts)[:-1]
    m0 = np.cumsum(counts * centers)[:-1]
    total_n = counts.sum()
    total_m = float(np.sum(counts * centers))
    w1 = total_n - w0
    between = np.zeros(bins - 1)
    valid = (w0 > 0) & (w1 > 0)
    mu0 = np.divide(m0, w0, out=np.zeros_like(m0), where=valid)
    mu1 = np.divide(total_m - m0, w1, out=np.zeros_like(m0), where=valid)
    between[valid] = (w0 * w1)[valid] * (mu0 - mu1)[valid] ** 2
    k = int(np.argmax(between >= between.max() * (1.0 - 1e-9)))
    return OtsuResult(float(centers[k]), False)


def binarize(image: GrayImage, threshold: float, polarity: str = HAND_ABOVE) -> BinaryMask:
    """Label pixels strictly above (or at/below) the threshold as hand."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    if polarity == HAND_ABOVE:
        return BinaryMask(image.pixels > threshold)
    if polarity == HAND_BELOW:
        return BinaryMask(image.pixels <= threshold)
    raise ValueError(f"unknown polarity {polarity!r}")


def majority_filter(mask: BinaryMask) -> BinaryMask:
    """Single-pass 3x3 majority vote (zero padded); suppresses salt noise."""
    p = np.pad(mask.pixels.astype(np.int8), 1)
    acc = np.zeros(mask.pixels.shape, dtype=np.int8)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            acc += p[dy : dy + mask.height, dx : dx + mask.width]
    return BinaryMask(acc >= 5)


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """Overlap measure 2|A&B| / (|A| + |B|); 1.0 when both masks are empty."""
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"mask shapes differ: {a.pixels.shape} vs {b.pixels.shape}")
    na, nb = a.count(), b.count()
    if na + nb == 0:
        return 1.0
    inter = int(np.sum(a.pixels & b.pixels))
    return 2.0 * inter / (na + nb)


@dataclass(frozen=True)
class SimilarityTransform:
    """Rotation + translation + isotropic scale mapping VIS to TH coordinates.

    A source point p maps to scale * R(rotation) * (p - c) + c + (dx, dy),
    where c is the center of the source raster and R rotates (x, y) with
    x = column, y = row.
    """

    rotation: float = 0.0
    dx: float = 0.0
    dy: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        if not all(math.isfinite(v) for v in (self.rotation, self.dx, self.dy)):
            raise ValueError("transform parameters must be finite")
        r = (self.rotation + math.pi) % (2.0 * math.pi) - math.pi
        if r <= -math.pi:
            r += 2.0 * math.pi
        object.__setattr__(self, "rotation", r)

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    def inverse(self) -> "SimilarityTransform":
        """The transform undoing this one (for equal source/output frames)."""
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        tx = -(c * self.dx - s * self.dy) / self.scale
        ty = -(s * self.dx + c * self.dy) / self.scale
        return SimilarityTransform(-self.rotation, tx, ty, 1.0 / self.scale)

    def inverse_map(self, source_shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Affine (a, b) such that source point = a @ output_point + b."""
        h, w = source_shape
        cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
        cos_t, sin_t = math.cos(-self.rotation), math.sin(-self.rotation)
        a = np.array([[cos_t, -sin_t], [sin_t, cos_t]]) / self.scale
        center = np.array([cx, cy])
        b = center - a @ (center + np.array([self.dx, self.dy]))
        return a, b


def apply_similarity(mask: BinaryMask, t: SimilarityTransform,
                     out_width: int, out_height: int) -> BinaryMask:
    """Resample a mask under the transform with nearest-neighbor lookup.

    Output pixels whose inverse-mapped source location falls outside the
    mask are False.
    """
    if out_width < 1 or out_height < 1:
        raise ValueError("output dimensions must be positive")
    a, b = t.inverse_map(mask.pixels.shape)
    return BinaryMask(warp_nearest(mask.pixels, a, b, (out_height, out_width)))


def transform_to_text(t: SimilarityTransform) -> str:
    """One-line serialization: rotation_rad dx dy scale."""
    return f"{t.rotation:.17g} {t.dx:.17g} {t.dy:.17g} {t.scale:.17g}\n"


def transform_from_text(text: str) -> SimilarityTransform:
    parts = text.split()
    if len(parts) != 4:
        raise ValueError(f"expected 4 fields (rotation dx dy scale), got {len(parts)}")
    rot, dx, dy, scale = (float(p) for p in parts)
    return SimilarityTransform(rot, dx, dy, scale)


@dataclass(frozen=True)
class RegistrationResult:
    transform: SimilarityTransform
    objective_value: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class RegistrationConfig:
    """Simplex-search settings for register_masks.

    The search runs over (rotation, dx, dy, scale) normalized to
    commensurate units: radians, pixels / image width, and log-scale.
    `objective` is "soft_dice" (bilinear mask resampling, smooth in the
    parameters), "dice" (hard nearest-neighbor overlap), or a callable
    (vis_mask, th_image, transform) -> loss.
    """

    max_iterations: int = 500
    diameter_tol: float = 1e-4
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    rotation_step: float = 0.08
    translation_step: float = 4.0
    log_scale_step: float = 0.08
    objective: str | Callable[[BinaryMask, GrayImage, SimilarityTransform], float] = "dice"
    bins: int = 256


def _soft_dice_loss(vis_soft: np.ndarray, th_soft: np.ndarray,
                    t: SimilarityTransform) -> float:
    a, b = t.inverse_map(vis_soft.shape)
    warped = warp_bilinear(vis_soft, a, b, th_soft.shape)
    denom = warped.sum() + th_soft.sum()
    if denom == 0.0:
        return 1.0
    return 1.0 - 2.0 * float(np.sum(warped * th_soft)) / float(denom)


def _make_objective(cfg: RegistrationConfig, vis_mask: BinaryMask,
                    th_image: GrayImage) -> Callable[[SimilarityTransform], float]:
    if callable(cfg.objective):
        user_fn = cfg.objective
        return lambda t: float(user_fn(vis_mask, th_image, t))
    level, degenerate = otsu_threshold(th_image, cfg.bins)
    if degenerate:
        raise RegistrationError("thermal image is constant; registration undefined")
    th_mask = binarize(th_image, level, HAND_ABOVE)
    if cfg.objective == "dice":
        return lambda t: 1.0 - dice(
            apply_similarity(vis_mask, t, th_image.width, th_image.height), th_mask
        )
    if cfg.objective == "soft_dice":
        vis_soft = vis_mask.pixels.astype(np.float64)
        th_soft = th_mask.pixels.astype(np.float64)
        return lambda t: _soft_dice_loss(vis_soft, th_soft, t)
    raise ValueError(f"unknown objective {cfg.objective!r}")


def _principal_angle(mask: np.ndarray) -> float | None:
    ys, xs = np.nonzero(mask)
    coords = np.stack([xs - xs.mean(), ys - ys.mean()])
    cov = coords @ coords.T / coords.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    if evals[1] <= 0 or (evals[1] - evals[0]) <= 0.05 * evals[1]:
        return None
    return math.atan2(evecs[1, 1], evecs[0, 1])


def moment_seed(vis_mask: BinaryMask, th_mask: BinaryMask) -> SimilarityTransform | None:
    """Closed-form transform estimate from mask moments.

    Scale from the area ratio, rotation from the principal-axis angle
    difference (folded to the half-turn with the smaller magnitude), and
    translation from the centroid displacement under that rotation and
    scale.  None when either mask is empty or has no usable axis.
    """
    n_vis, n_th = vis_mask.count(), th_mask.count()
    if n_vis == 0 or n_th == 0:
        return None
    angle_vis = _principal_angle(vis_mask.pixels)
    angle_th = _principal_angle(th_mask.pixels)
    if angle_vis is None or angle_th is None:
        return None
    rotation = angle_th - angle_vis
    rotation = (rotation + math.pi / 2) % math.pi - math.pi / 2
    scale = math.sqrt(n_th / n_vis)
    ys, xs = np.nonzero(vis_mask.pixels)
    centroid_vis = np.array([xs.mean(), ys.mean()])
    ys, xs = np.nonzero(th_mask.pixels)
    centroid_th = np.array([xs.mean(), ys.mean()])
    h, w = vis_mask.pixels.shape
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    c, s = math.cos(rotation), math.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    t = centroid_th - center - scale * (rot @ (centroid_vis - center))
    return SimilarityTransform(rotation, float(t[0]), float(t[1]), scale)


def _nelder_mead(f, x0: np.ndarray, steps: np.ndarray,
                 cfg: RegistrationConfig) -> tuple[np.ndarray, float, int, bool]:
    simplex = [x0] + [x0 + steps[i] * np.eye(len(x0))[i] for i in range(len(x0))]
    fvals = [f(x) for x in simplex]
    iterations = 0
    converged = False
    while iterations < cfg.max_iterations:
        order = np.argsort(fvals, kind="stable")
        simplex = [simplex[i] for i in order]
        fvals = [fvals[i] for i in order]
        diameter = max(
            float(np.linalg.norm(simplex[i] - simplex[j]))
            for i in range(len(simplex)) for j in range(i + 1, len(simplex))
        )
        if diameter < cfg.diameter_tol:
            converged = True
            break
        iterations += 1
        centroid = np.mean(simplex[:-1], axis=0)
        xr = centroid + cfg.reflection * (centroid - simplex[-1])
        fr = f(xr)
        if fr < fvals[0]:
            xe = centroid + cfg.expansion * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + cfg.contraction * (xr - centroid)
                fc = f(xc)
                if fc <= fr:
                    simplex[-1], fvals[-1] = xc, fc
                else:
                    simplex, fvals = _shrink(simplex, fvals, cfg.shrink, f)
            else:
                xc = centroid + cfg.contraction * (simplex[-1] - centroid)
                fc = f(xc)
                if fc < fvals[-1]:
                    simplex[-1], fvals[-1] = xc, fc
                else:
                    simplex, fvals = _shrink(simplex, fvals, cfg.shrink, f)
    best = int(np.argmin(fvals))
    return simplex[best], float(fvals[best]), iterations, converged


def _shrink(simplex, fvals, sigma, f):
    best = simplex[0]
    out = [best] + [best + sigma * (x - best) for x in simplex[1:]]
    return out, [fvals[0]] + [f(x) for x in out[1:]]


def register_masks(vis_mask: BinaryMask, th_image: GrayImage,
                   init: SimilarityTransform | None = None,
                   config: RegistrationConfig | None = None) -> RegistrationResult:
    """Find the similarity transform aligning the VIS mask to the TH image.

    Runs the Nelder-Mead simplex search (reflection/expansion/contraction/
    shrink) over the normalized 4-parameter vector, minimizing the
    configured overlap loss.  The overlap landscape has finger-aliasing
    local minima, so a second search starts from a closed-form mask-moment
    seed and the better result wins; the first search starts exactly at
    `init`, so the returned objective never exceeds the objective there.
    Convergence means the simplex diameter fell below `diameter_tol` in
    normalized units before `max_iterations` (per search).
    """
    cfg = config or RegistrationConfig()
    init = init or SimilarityTransform.identity()
    if vis_mask.count() == 0:
        raise RegistrationError("VIS mask has no true pixels")
    loss = _make_objective(cfg, vis_mask, th_image)
    width = float(th_image.width)

    def to_transform(u: np.ndarray) -> SimilarityTransform:
        return SimilarityTransform(u[0], u[1] * width, u[2] * width, math.exp(u[3]))

    def to_vector(t: SimilarityTransform) -> np.ndarray:
        return np.array([t.rotation, t.dx / width, t.dy / width, math.log(t.scale)])

    def f(u: np.ndarray) -> float:
        value = loss(to_transform(u))
        if not math.isfinite(value):
            raise RegistrationError(f"non-finite objective at {u}")
        return value

    starts = [init]
    try:
        level, degenerate = otsu_threshold(th_image, cfg.bins)
        if not degenerate:
            seed = moment_seed(vis_mask, binarize(th_image, level, HAND_ABOVE))
            if seed is not None:
                starts.append(seed)
    except ValueError:
        pass

    steps = np.array([cfg.rotation_step, cfg.translation_step / width,
                      cfg.translation_step / width, cfg.log_scale_step])
    best = None
    for start in starts:
        x, fx, iterations, converged = _nelder_mead(f, to_vector(start), steps, cfg)
        if best is None or fx < best[1]:
            best = (x, fx, iterations, converged)
    return RegistrationResult(
        transform=to_transform(best[0]),
        objective_value=best[1],
        iterations=best[2],
        converged=best[3],
    )


def segment_thermal(vis: GrayImage, th: GrayImage, t: SimilarityTransform,
                    bins: int = 256, vis_threshold: float | None = None,
                    polarity: str = HAND_ABOVE,
                    clean: bool = True) -> tuple[BinaryMask, GrayImage]:
    """Segment the thermal image using the visible-spectrum mask.

    Binarizes the VIS image (Otsu level unless `vis_threshold` overrides
    it), optionally applies the 3x3 majority cleanup, maps the mask into
    thermal coordinates under `t`, and masks the thermal image.  Cold
    finger regions survive because the mask comes from the visible image.
    """
    if vis_threshold is None:
        level, _ = otsu_threshold(vis, bins)
    else:
        level = vis_threshold
    vis_mask = binarize(vis, level, polarity)
    if clean:
        vis_mask = majority_filter(vis_mask)
    th_mask = apply_similarity(vis_mask, t, th.width, th.height)
    return th_mask, apply_mask(th, th_mask)
