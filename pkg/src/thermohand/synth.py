"""Synthetic dual-spectrum hand dataset generation.

Each user gets a persistent parametric silhouette: a palm ellipse plus five
digit capsules (thumb shorter, attached at the side).  Samples render the
shape into a visible frame under per-sample pose jitter and into a thermal
frame seen through the VIS->TH sensor transform, with a warm per-user heat
pattern over a cool background.  Digits can render cold (background
temperature) with a configured probability, which is the failure mode that
thermal-only segmentation cannot handle.  Everything is a deterministic
function of the seed.

Ground truth per sample: the hand mask in both frames (cold digits
included), a digit label map plus a strict above-the-knuckle finger mask in
the visible frame, and the exact VIS->TH transform.
"""

import csv
import math
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .imagecore import BinaryMask, GrayImage, save_image, save_mask
from .segmentation import SimilarityTransform, transform_to_text


class ConfigError(ValueError):
    """Raised for an unusable synthetic-dataset configuration."""


VIS_BACKGROUND = 0.15
TH_BACKGROUND = 0.20
TH_HAND_BASE = 0.65


@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs for the synthetic dataset.

    Samples per user are train_samples + test_samples, two per session.
    `sensor_*` is the base VIS->TH calibration; `jitter_*` bounds the
    per-sample deviation from it.  `pose_*` bounds how the hand itself
    moves between acquisitions.  `th_session_drift` models changing user
    and environment conditions: later sessions run cooler and their heat
    patterns pick up growing per-sample perturbations, so thermal tests
    degrade the further they sit from enrollment.  `shape_spread` scales
    how much user anatomy varies, and `edge_softness` is the anti-aliasing
    ramp width in pixels for the visible rendering.
    """

    num_users: int = 20
    train_samples: int = 5
    test_samples: int = 5
    image_size: int = 128
    cold_finger_prob: float = 0.0
    heat_wave_amp: float = 0.055
    sensor_rotation: float = 0.05
    sensor_dx: float = 4.0
    sensor_dy: float = -3.0
    sensor_scale: float = 1.0
    jitter_rotation: float = 0.0
    jitter_translation: float = 0.0
    jitter_scale: float = 0.0
    pose_rotation: float = 0.05
    pose_translation: float = 3.0
    pose_log_scale: float = 0.02
    shape_spread: float = 1.0
    vis_noise: float = 0.01
    th_noise: float = 0.01
    th_session_drift: float = 0.0
    edge_softness: float = 1.5
    rng_seed: int = 0

    def __post_init__(self):
        if self.num_users < 2:
            raise ConfigError(f"need >= 2 users, got {self.num_users}")
        if self.train_samples < 1 or self.test_samples < 0:
            raise ConfigError("bad sample counts")
        if not 0.0 <= self.cold_finger_prob <= 1.0:
            raise ConfigError("cold_finger_prob must be in [0, 1]")
        if self.image_size < 48:
            raise ConfigError(f"image_size {self.image_size} too small for a hand")

    @property
    def samples_per_user(self) -> int:
        return self.train_samples + self.test_samples


@dataclass(frozen=True)
class HandShape:
    """Per-user anatomy in a canonical frame (hand up, y toward wrist)."""

    palm_w: float
    palm_h: float
    palm_center: tuple[float, float]
    digits: tuple  # (base_x, base_y, tip_x, tip_y, radius), thumb first
    knuckle_y: float
    albedo: float
    heat_waves: tuple   # (amp, freq_x, freq_y, phase) per wave
    vis_waves: tuple


@dataclass(frozen=True)
class SyntheticSample:
    """One acquisition: both frames plus ground truth.

    `label_map` labels the visible frame with digits owning their full
    capsules (0 bg, 1 palm, 2 thumb, 3..6 index..little); `finger_mask`
    restricts digit pixels to above the knuckle line.  `th_label_map`
    labels the thermal frame with the palm taking priority, so digit
    labels there mean flesh outside the palm ellipse (the part that
    actually runs cold).
    """

    user_id: int
    index: int
    session: int
    split: str
    test_number: int
    vis: GrayImage
    th: GrayImage
    vis_mask: BinaryMask
    th_mask: BinaryMask
    label_map: np.ndarray
    finger_mask: np.ndarray
    th_label_map: np.ndarray
    transform: SimilarityTransform
    cold_digits: tuple


@dataclass(frozen=True)
class SyntheticDataset:
    config: SyntheticConfig
    base_transform: SimilarityTransform
    samples: tuple

    def user_samples(self, user_id: int) -> list:
        return [s for s in self.samples if s.user_id == user_id]

    def train_split(self) -> list:
        return [s for s in self.samples if s.split == "train"]

    def test_split(self, test_number: int) -> list:
        return [s for s in self.samples if s.test_number == test_number]


def _draw_shape(rng: np.random.Generator, cfg: SyntheticConfig) -> HandShape:
    unit = cfg.image_size / 128.0
    spread = cfg.shape_spread

    def u(lo, hi):
        return float(rng.uniform(lo, hi))

    palm_w = (23.0 + spread * u(-2.5, 2.5)) * unit
    palm_h = (31.0 + spread * u(-2.5, 2.5)) * unit

    digits = []
    # Thumb: attached at the palm's side, leaning out, shorter reach.
    t_angle = -0.55 + spread * u(-0.03, 0.03)
    t_len = palm_h * (1.0 + spread * u(-0.03, 0.03))
    bx, by = -0.80 * palm_w, -0.45 * palm_h
    digits.append((bx, by, bx + t_len * math.sin(t_angle),
                   by - t_len * math.cos(t_angle), 0.145 * palm_w))
    length_frac = (0.56, 0.62, 0.58, 0.46)
    radius_frac = (0.155, 0.165, 0.155, 0.135)
    base_frac = (-0.70, -0.235, 0.235, 0.70)
    fan = (-0.05, -0.017, 0.017, 0.05)
    for k in range(4):
        frac = length_frac[k] + spread * u(-0.022, 0.022)
        length = frac * 2.0 * palm_h
        radius = (radius_frac[k] + spread * u(-0.008, 0.008)) * palm_w
        bx = (base_frac[k] + spread * u(-0.03, 0.03)) * palm_w
        by = -0.88 * palm_h
        angle = fan[k] + spread * u(-0.02, 0.02)
        digits.append((bx, by, bx + length * math.sin(angle),
                       by - length * math.cos(angle), radius))

    # Recenter so the whole-hand bounding box is centered on the origin.
    xs, ys = [], []
    for bx, by, tx, ty, r in digits:
        xs += [bx - r, bx + r, tx - r, tx + r]
        ys += [by - r, by + r, ty - r, ty + r]
    xs += [-palm_w, palm_w]
    ys += [-palm_h, palm_h]
    cx = (min(xs) + max(xs)) / 2.0
    cy = (min(ys) + max(ys)) / 2.0
    digits = tuple((bx - cx, by - cy, tx - cx, ty - cy, r)
                   for bx, by, tx, ty, r in digits)

    grow = math.exp(cfg.pose_log_scale) * max(cfg.sensor_scale, 1.0) \
        * math.exp(cfg.jitter_scale)
    for half, drift in ((max(max(xs) - cx, cx - min(xs)), abs(cfg.sensor_dx)),
                        (max(max(ys) - cy, cy - min(ys)), abs(cfg.sensor_dy))):
        need = half * grow + cfg.pose_translation + drift \
            + cfg.jitter_translation + 1.0
        if need > cfg.image_size / 2.0:
            raise ConfigError(
                f"image_size {cfg.image_size} too small: hand needs "
                f"{2 * need:.0f}px including pose and sensor shifts"
            )

    return HandShape(
        palm_w=palm_w,
        palm_h=palm_h,
        palm_center=(-cx, -cy),
        digits=digits,
        knuckle_y=-0.95 * palm_h - cy,
        albedo=0.70 + u(0.0, 0.15),
        heat_waves=_draw_waves(rng, 4, cfg.heat_wave_amp, unit),
        vis_waves=_draw_waves(rng, 3, 0.02, unit),
    )


def _draw_waves(rng: np.random.Generator, n: int, amp: float, unit: float) -> tuple:
    out = []
    for _ in range(n):
        wavelength = float(rng.uniform(22.0, 60.0)) * unit
        theta = float(rng.uniform(0.0, math.pi))
        out.append((float(rng.uniform(-amp, amp)),
                    2.0 * math.pi * math.cos(theta) / wavelength,
                    2.0 * math.pi * math.sin(theta) / wavelength,
                    float(rng.uniform(0.0, 2.0 * math.pi))))
    return tuple(out)


def _eval_wave(waves, cx, cy):
    total = np.zeros_like(cx)
    for amp, fx, fy, phase in waves:
        total += amp * np.cos(fx * cx + fy * cy + phase)
    return total


def _part_distances(shape: HandShape, cx: np.ndarray, cy: np.ndarray) -> list[np.ndarray]:
    """Signed distances (negative inside) to the palm and each digit."""
    px, py = shape.palm_center
    ex = (cx - px) / shape.palm_w
    ey = (cy - py) / shape.palm_h
    radial = np.sqrt(ex * ex + ey * ey)
    dists = [(radial - 1.0) * min(shape.palm_w, shape.palm_h)]
    for bx, by, tx, ty, r in shape.digits:
        vx, vy = tx - bx, ty - by
        seg_sq = vx * vx + vy * vy
        t = np.clip(((cx - bx) * vx + (cy - by) * vy) / seg_sq, 0.0, 1.0)
        dx = cx - (bx + t * vx)
        dy = cy - (by + t * vy)
        dists.append(np.sqrt(dx * dx + dy * dy) - r)
    return dists


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = np.meshgrid(np.arange(size, dtype=np.float64),
                         np.arange(size, dtype=np.float64))
    return xs, ys


def _canonical_coords(xs, ys, pose_rot, pose_tx, pose_ty, pose_scale, size):
    """Map image coordinates back into the hand's canonical frame."""
    center = (size - 1) / 2.0
    ux = xs - center - pose_tx
    uy = ys - center - pose_ty
    c, s = math.cos(-pose_rot), math.sin(-pose_rot)
    return ((c * ux - s * uy) / pose_scale, (s * ux + c * uy) / pose_scale)


def generate_dataset(cfg: SyntheticConfig) -> SyntheticDataset:
    """Render the full dataset; bit-identical for identical configs."""
    rng = np.random.default_rng(cfg.rng_seed)
    base_transform = SimilarityTransform(
        cfg.sensor_rotation, cfg.sensor_dx, cfg.sensor_dy, cfg.sensor_scale
    )
    shapes = [_draw_shape(rng, cfg) for _ in range(cfg.num_users)]
    size = cfg.image_size
    xs, ys = _grid(size)

    samples = []
    for user in range(cfg.num_users):
        shape = shapes[user]
        for index in range(cfg.samples_per_user):
            session = index // 2 + 1
            pose_rot = float(rng.uniform(-cfg.pose_rotation, cfg.pose_rotation))
            pose_tx = float(rng.uniform(-cfg.pose_translation, cfg.pose_translation))
            pose_ty = float(rng.uniform(-cfg.pose_translation, cfg.pose_translation))
            pose_scale = math.exp(float(rng.uniform(-cfg.pose_log_scale,
                                                    cfg.pose_log_scale)))
            transform = SimilarityTransform(
                cfg.sensor_rotation + float(rng.uniform(-1, 1)) * cfg.jitter_rotation,
                cfg.sensor_dx + float(rng.uniform(-1, 1)) * cfg.jitter_translation,
                cfg.sensor_dy + float(rng.uniform(-1, 1)) * cfg.jitter_translation,
                cfg.sensor_scale * math.exp(float(rng.uniform(-1, 1)) * cfg.jitter_scale),
            )
            cold = tuple(int(d) for d in np.nonzero(
                rng.random(5) < cfg.cold_finger_prob)[0])
            temp_wobble = float(rng.uniform(-1, 1)) * cfg.th_session_drift / 3.0
            # Condition drift: the heat pattern destabilizes in sessions
            # further from enrollment, beyond what training can discount.
            drift_waves = _draw_waves(
                rng, 3, cfg.th_session_drift * (session - 1) * 0.5,
                cfg.image_size / 128.0,
            )
            vis_noise = rng.normal(0.0, cfg.vis_noise, (size, size))
            th_noise = rng.normal(0.0, cfg.th_noise, (size, size))

            # Visible frame.
            cx, cy = _canonical_coords(xs, ys, pose_rot, pose_tx, pose_ty,
                                       pose_scale, size)
            dists = _part_distances(shape, cx, cy)
            d_all = np.minimum.reduce(dists)
            soft = cfg.edge_softness / pose_scale
            coverage = np.clip(0.5 - d_all / (2.0 * soft), 0.0, 1.0)
            vis_mask = d_all <= 0.0
            shade = 0.04 * cy / shape.palm_h
            tone = shape.albedo + shade + _eval_wave(shape.vis_waves, cx, cy)
            vis = VIS_BACKGROUND + (tone - VIS_BACKGROUND) * coverage + vis_noise
            vis = np.clip(vis, 0.0, 1.0)

            label_map = np.zeros((size, size), dtype=np.uint8)
            label_map[dists[0] <= 0.0] = 1
            digit_owner = np.argmin(np.stack(dists[1:]), axis=0)
            for d in range(5):
                inside = (dists[1 + d] <= 0.0) & (digit_owner == d)
                label_map[inside] = 2 + d
            finger_mask = (label_map >= 2) & (cy < shape.knuckle_y)

            # Thermal frame: same scene through the sensor transform.
            a_inv, b_inv = transform.inverse_map((size, size))
            tx_vis = a_inv[0, 0] * xs + a_inv[0, 1] * ys + b_inv[0]
            ty_vis = a_inv[1, 0] * xs + a_inv[1, 1] * ys + b_inv[1]
            center = (size - 1) / 2.0
            ux = tx_vis - center - pose_tx
            uy = ty_vis - center - pose_ty
            c, s = math.cos(-pose_rot), math.sin(-pose_rot)
            tcx = (c * ux - s * uy) / pose_scale
            tcy = (s * ux + c * uy) / pose_scale
            tdists = _part_distances(shape, tcx, tcy)
            th_mask = np.minimum.reduce(tdists) <= 0.0
            warm_parts = [tdists[0]] + [tdists[1 + d] for d in range(5)
                                        if d not in cold]
            warm = np.minimum.reduce(warm_parts) <= 0.0
            th_label_map = np.zeros((size, size), dtype=np.uint8)
            th_digit_owner = np.argmin(np.stack(tdists[1:]), axis=0)
            for d in range(5):
                inside = (tdists[1 + d] <= 0.0) & (th_digit_owner == d)
                th_label_map[inside] = 2 + d
            th_label_map[tdists[0] <= 0.0] = 1
            hand_temp = (TH_HAND_BASE + _eval_wave(shape.heat_waves, tcx, tcy)
                         + _eval_wave(drift_waves, tcx, tcy)
                         - cfg.th_session_drift * (session - 1) + temp_wobble)
            th = np.where(warm, hand_temp, TH_BACKGROUND) + th_noise
            th = np.clip(th, 0.0, 1.0)

            split = "train" if index < cfg.train_samples else "test"
            samples.append(SyntheticSample(
                user_id=user,
                index=index,
                session=session,
                split=split,
                test_number=(index - cfg.train_samples + 1) if split == "test" else 0,
                vis=GrayImage(vis),
                th=GrayImage(th),
                vis_mask=BinaryMask(vis_mask),
                th_mask=BinaryMask(th_mask),
                label_map=label_map,
                finger_mask=finger_mask,
                th_label_map=th_label_map,
                transform=transform,
                cold_digits=cold,
            ))
    return SyntheticDataset(cfg, base_transform, tuple(samples))


MANIFEST_COLUMNS = ["user_id", "session", "sample",
                    "vis_path", "th_path", "mask_path", "transform_path"]


def write_dataset(dataset: SyntheticDataset, out_dir) -> Path:
    """Dump VIS (8-bit) and TH (16-bit) PGMs, thermal ground-truth masks,
    transform records, and the manifest CSV; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for s in dataset.samples:
            stem = f"u{s.user_id:03d}_s{s.index + 1:02d}"
            vis_path = f"{stem}_vis.pgm"
            th_path = f"{stem}_th.pgm"
            mask_path = f"{stem}_thmask.pgm"
            tr_path = f"{stem}_transform.txt"
            save_image(s.vis, out / vis_path, 8)
            save_image(s.th, out / th_path, 16)
            save_mask(s.th_mask, out / mask_path)
            (out / tr_path).write_text(transform_to_text(s.transform))
            writer.writerow([s.user_id, s.session, s.index + 1,
                             vis_path, th_path, mask_path, tr_path])
    return manifest


def config_from_dict(doc: dict) -> SyntheticConfig:
    """Build a config from a parsed TOML/JSON mapping; unknown keys fail."""
    known = {f.name for f in fields(SyntheticConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown dataset config keys: {sorted(unknown)}")
    return SyntheticConfig(**doc)
