"""Frame ingestion, normalization, augmentation and synthetic scenes.

Manifest format: UTF-8 text, one frame per line,
``<relative-image-path> <ball-count> [<x> <y>]...`` with integer pixel
coordinates, origin top-left.  PNG (8-bit RGB) and binary PPM are
accepted.

Augmentation applies jitter -> flip -> scale -> crop; ball coordinates
ride along through the same geometric maps and balls falling outside the
crop are dropped.  All randomness comes from the generator handed in, so
equal seeds reproduce byte-identical results.

The synthetic generator renders green-textured pitches with white lines,
player-like rectangles (including small white sock blobs), off-pitch
clutter and anti-aliased white balls; annotations are the true disc
centers.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ManifestError


@dataclass
class AnnotatedFrame:
    image: np.ndarray             # uint8 (H, W, 3)
    balls: list                   # [(x, y)] pixel centers
    source_id: str = ""

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"frame {self.source_id!r}: expected an "
                             f"(H, W, 3) buffer, got {self.image.shape}")
        if self.image.shape[0] < 64 or self.image.shape[1] < 64:
            raise ValueError(f"frame {self.source_id!r}: frames must be at "
                             f"least 64x64, got {self.image.shape[:2]}")
        h, w = self.image.shape[:2]
        for x, y in self.balls:
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"frame {self.source_id!r}: ball ({x}, {y}) "
                                 f"outside {w}x{h} image")

    @property
    def hw(self):
        return self.image.shape[0], self.image.shape[1]


@dataclass
class FrameRecord:
    """Lazy frame descriptor: path plus annotation."""

    image_path: str
    balls: list
    source_id: str


def load_annotations(manifest_path):
    """Parse a manifest into frame descriptors; zero-ball frames kept."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    records = []
    with open(manifest_path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) < 2:
                raise ManifestError("expected '<path> <count> [<x> <y>]...'",
                                    line=lineno)
            try:
                count = int(tokens[1])
            except ValueError:
                raise ManifestError(f"ball count {tokens[1]!r} is not an "
                                    f"integer", line=lineno) from None
            if count < 0 or len(tokens) != 2 + 2 * count:
                raise ManifestError(
                    f"ball count {count} does not match "
                    f"{len(tokens) - 2} coordinate fields", line=lineno)
            try:
                coords = [int(t) for t in tokens[2:]]
            except ValueError:
                raise ManifestError("coordinates must be integers",
                                    line=lineno) from None
            balls = list(zip(coords[0::2], coords[1::2]))
            path = os.path.join(base, tokens[0])
            if not os.path.isfile(path):
                raise ManifestError(f"image file not found: {path}",
                                    line=lineno)
            records.append(FrameRecord(image_path=path, balls=balls,
                                       source_id=tokens[0]))
    return records


def load_frame(record):
    with Image.open(record.image_path) as img:
        arr = np.asarray(img.convert("RGB"))
    return AnnotatedFrame(image=arr.copy(), balls=list(record.balls),
                          source_id=record.source_id)


def save_frame_png(frame, path):
    Image.fromarray(frame.image).save(path, format="PNG")


def normalize_image(frame, offset=0.5, scale=0.5):
    """uint8 frame -> (1, 3, H, W) float32 via (p/255 - offset) / scale."""
    image = frame.image if isinstance(frame, AnnotatedFrame) else frame
    arr = image.astype(np.float32) / np.float32(255.0)
    arr = (arr - np.float32(offset)) / np.float32(scale)
    return np.ascontiguousarray(arr.transpose(2, 0, 1)[None])


# --------------------------------------------------------------------------
# Augmentation


@dataclass
class AugmentConfig:
    brightness: tuple = (0.8, 1.2)
    contrast: tuple = (0.8, 1.2)
    saturation: tuple = (0.8, 1.2)
    hue_shift_max: float = 0.04   # fraction of the hue circle
    flip_prob: float = 0.5
    crop_hw: tuple = (224, 224)
    scale_range: tuple = (0.5, 1.1)
    jitter: bool = True

    def __post_init__(self):
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise ValueError(f"bad scale range {self.scale_range}")


@dataclass
class GeometricTransform:
    """Record of the geometric part of one augmentation draw."""

    src_hw: tuple
    flipped: bool
    scaled_hw: tuple
    crop_xy: tuple                # (left, top)
    crop_hw: tuple

    def apply_point(self, x, y):
        """Forward-map a source pixel; None when it leaves the crop."""
        h, w = self.src_hw
        if self.flipped:
            x = w - 1 - x
        sh, sw = self.scaled_hw
        x = math.floor((x + 0.5) * sw / w)
        y = math.floor((y + 0.5) * sh / h)
        left, top = self.crop_xy
        x, y = x - left, y - top
        ch, cw = self.crop_hw
        if 0 <= x < cw and 0 <= y < ch:
            return (x, y)
        return None

    def invert_point(self, x, y):
        h, w = self.src_hw
        sh, sw = self.scaled_hw
        left, top = self.crop_xy
        x, y = x + left, y + top
        x = math.floor((x + 0.5) * w / sw)
        y = math.floor((y + 0.5) * h / sh)
        if self.flipped:
            x = w - 1 - x
        return (x, y)


def _rgb_to_hsv(rgb):
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.maximum(maxc, 1e-12), 0.0)
    safe = np.maximum(span, 1e-12)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc,
                 np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def _hsv_to_rgb(hsv):
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    r = np.select([i == k for k in range(6)], [c[0] for c in choices])
    g = np.select([i == k for k in range(6)], [c[1] for c in choices])
    b = np.select([i == k for k in range(6)], [c[2] for c in choices])
    return np.stack([r, g, b], axis=-1)


def _color_jitter(image, cfg, rng):
    brightness = rng.uniform(*cfg.brightness)
    contrast = rng.uniform(*cfg.contrast)
    saturation = rng.uniform(*cfg.saturation)
    hue_shift = rng.uniform(-cfg.hue_shift_max, cfg.hue_shift_max)

    arr = image.astype(np.float64) / 255.0
    arr = arr * brightness
    luma = (arr @ np.array([0.299, 0.587, 0.114]))
    arr = luma.mean() + (arr - luma.mean()) * contrast
    arr = luma[..., None] + (arr - luma[..., None]) * saturation
    arr = np.clip(arr, 0.0, 1.0)
    if hue_shift:
        hsv = _rgb_to_hsv(arr)
        hsv[..., 0] = (hsv[..., 0] + hue_shift) % 1.0
        arr = _hsv_to_rgb(hsv)
    return np.clip(arr * 255.0 + 0.5, 0.0, 255.0).astype(np.uint8)


def augment_with_transform(frame, cfg, rng):
    """Run the full pipeline; returns (frame, geometric transform record)."""
    h, w = frame.hw
    crop_h, crop_w = cfg.crop_hw
    lo = cfg.scale_range[0]
    if math.floor(h * lo + 0.5) < crop_h or math.floor(w * lo + 0.5) < crop_w:
        raise ValueError(
            f"crop {crop_h}x{crop_w} infeasible: scale {lo} of {h}x{w} "
            f"can undershoot the crop")

    image = frame.image
    if cfg.jitter:
        image = _color_jitter(image, cfg, rng)

    flipped = bool(rng.random() < cfg.flip_prob)
    if flipped:
        image = image[:, ::-1]

    scale = rng.uniform(*cfg.scale_range)
    scaled_h = math.floor(h * scale + 0.5)
    scaled_w = math.floor(w * scale + 0.5)
    if (scaled_h, scaled_w) != (h, w):
        pil = Image.fromarray(np.ascontiguousarray(image))
        image = np.asarray(pil.resize((scaled_w, scaled_h), Image.BILINEAR))

    top = int(rng.integers(0, scaled_h - crop_h + 1))
    left = int(rng.integers(0, scaled_w - crop_w + 1))
    image = np.ascontiguousarray(image[top:top + crop_h, left:left + crop_w])

    transform = GeometricTransform(src_hw=(h, w), flipped=flipped,
                                   scaled_hw=(scaled_h, scaled_w),
                                   crop_xy=(left, top), crop_hw=(crop_h, crop_w))
    balls = []
    for x, y in frame.balls:
        mapped = transform.apply_point(x, y)
        if mapped is not None:
            balls.append(mapped)
    out = AnnotatedFrame(image=image, balls=balls, source_id=frame.source_id)
    return out, transform


def augment(frame, cfg, rng):
    out, _ = augment_with_transform(frame, cfg, rng)
    return out


# --------------------------------------------------------------------------
# Synthetic pitch scenes


@dataclass
class SynthConfig:
    image_hw: tuple = (256, 256)
    ball_radius_range: tuple = (8.0, 16.0)
    ball_count_probs: tuple = (0.30, 0.55, 0.15)   # P(0), P(1), P(2) balls
    line_count_range: tuple = (2, 5)
    player_count_range: tuple = (2, 6)
    clutter_count_range: tuple = (2, 8)
    motion_blur_prob: float = 0.3
    occluder_prob: float = 0.25
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.ball_radius_range
        if lo < 2 or hi > 64 or hi < lo:
            raise ValueError(f"ball radius range {self.ball_radius_range} "
                             f"outside [2, 64]")
        if abs(sum(self.ball_count_probs) - 1.0) > 1e-9:
            raise ValueError("ball count probabilities must sum to 1")


def _paint_disc(canvas, cx, cy, radius, color, elongation=None):
    """Anti-aliased disc (or capsule when elongation=(ux, uy, L))."""
    h, w = canvas.shape[:2]
    reach = radius + (elongation[2] if elongation else 0.0) + 2.0
    x0, x1 = max(0, int(cx - reach)), min(w, int(cx + reach) + 2)
    y0, y1 = max(0, int(cy - reach)), min(h, int(cy + reach) + 2)
    if x0 >= x1 or y0 >= y1:
        return
    ys, xs = np.mgrid[y0:y1, x0:x1]
    dx = xs - cx
    dy = ys - cy
    if elongation:
        ux, uy, length = elongation
        t = np.clip(dx * ux + dy * uy, -length, length)
        dx = dx - t * ux
        dy = dy - t * uy
    dist = np.sqrt(dx * dx + dy * dy)
    alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
    region = canvas[y0:y1, x0:x1].astype(np.float64)
    canvas[y0:y1, x0:x1] = (region * (1.0 - alpha)
                            + np.asarray(color, dtype=np.float64) * alpha
                            + 0.5).astype(np.uint8)


def _paint_rect(canvas, x0, y0, rw, rh, color, noise, rng):
    h, w = canvas.shape[:2]
    x0, y0 = max(0, x0), max(0, y0)
    x1, y1 = min(w, x0 + rw), min(h, y0 + rh)
    if x0 >= x1 or y0 >= y1:
        return
    block = np.asarray(color, dtype=np.float64) + rng.normal(
        0.0, noise, size=(y1 - y0, x1 - x0, 3))
    canvas[y0:y1, x0:x1] = np.clip(block, 0, 255).astype(np.uint8)


def _paint_segment(canvas, p0, p1, width, color):
    samples = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]), 1)) * 2
    h, w = canvas.shape[:2]
    ts = np.linspace(0.0, 1.0, samples)
    xs = np.clip((p0[0] + ts * (p1[0] - p0[0])).astype(np.int64), 0, w - 1)
    ys = np.clip((p0[1] + ts * (p1[1] - p0[1])).astype(np.int64), 0, h - 1)
    half = max(0, int(width) // 2)
    for ddy in range(-half, half + 1):
        for ddx in range(-half, half + 1):
            canvas[np.clip(ys + ddy, 0, h - 1), np.clip(xs + ddx, 0, w - 1)] = color


def synthesize_frame(cfg, rng):
    """Render one pitch scene; annotations are the exact disc centers."""
    h, w = cfg.image_hw
    canvas = np.empty((h, w, 3), dtype=np.uint8)

    # Grass with mowing stripes and texture noise.
    base = np.array([rng.uniform(35, 60), rng.uniform(95, 130),
                     rng.uniform(38, 62)])
    rows = np.arange(h)
    stripe_h = int(rng.integers(10, 25))
    stripes = ((rows // stripe_h) % 2) * rng.uniform(4, 10)
    grass = base[None, None, :] + stripes[:, None, None]
    grass = grass + rng.normal(0.0, 5.0, size=(h, w, 3))
    canvas[:] = np.clip(grass, 0, 255).astype(np.uint8)

    # Off-pitch band at the top: gray stands with bright clutter.
    band_h = int(rng.integers(0, h // 6 + 1))
    if band_h >= 4:
        band = rng.uniform(90, 140) + rng.normal(0, 8, size=(band_h, w, 3))
        canvas[:band_h] = np.clip(band, 0, 255).astype(np.uint8)
        for _ in range(int(rng.integers(*cfg.clutter_count_range))):
            cw = int(rng.integers(2, 7))
            ch = int(rng.integers(2, min(7, band_h + 1)))
            _paint_rect(canvas, int(rng.integers(0, w - cw)),
                        int(rng.integers(0, max(1, band_h - ch))),
                        cw, ch, [rng.uniform(200, 255)] * 3, 6.0, rng)

    # White pitch lines.
    line_color = np.clip(rng.uniform(195, 240) + rng.normal(0, 4, 3), 0, 255)
    for _ in range(int(rng.integers(*cfg.line_count_range))):
        kind = rng.random()
        if kind < 0.4:    # horizontal
            y = int(rng.integers(band_h, h))
            p0, p1 = (0, y), (w - 1, y + int(rng.integers(-6, 7)))
        elif kind < 0.8:  # vertical
            x = int(rng.integers(0, w))
            p0, p1 = (x, band_h), (x + int(rng.integers(-6, 7)), h - 1)
        else:             # diagonal
            p0 = (int(rng.integers(0, w)), int(rng.integers(band_h, h)))
            p1 = (int(rng.integers(0, w)), int(rng.integers(band_h, h)))
        _paint_segment(canvas, p0, p1, int(rng.integers(1, 4)),
                       line_color.astype(np.uint8))

    # Two team colors; one team may be near-white (a known confuser).
    teams = [np.array([rng.uniform(150, 230), rng.uniform(20, 70),
                       rng.uniform(20, 70)]),
             np.array([rng.uniform(20, 70), rng.uniform(20, 80),
                       rng.uniform(150, 230)])]
    if rng.random() < 0.35:
        teams[int(rng.integers(0, 2))] = np.full(3, rng.uniform(185, 225))

    def draw_player(px, py):
        jw = int(rng.integers(6, 15))
        jh = int(rng.integers(10, 22))
        team = teams[int(rng.integers(0, 2))]
        _paint_rect(canvas, px, py, jw, jh, team, 8.0, rng)
        _paint_rect(canvas, px + 1, py + jh, max(2, jw - 2),
                    int(rng.integers(5, 10)),
                    np.clip(team * rng.uniform(0.5, 0.9), 0, 255), 8.0, rng)
        if rng.random() < 0.7:  # white socks
            for sock_dx in (1, max(2, jw - 4)):
                _paint_rect(canvas, px + sock_dx,
                            py + jh + int(rng.integers(5, 10)),
                            int(rng.integers(2, 4)), int(rng.integers(2, 5)),
                            [rng.uniform(190, 240)] * 3, 5.0, rng)

    for _ in range(int(rng.integers(*cfg.player_count_range))):
        draw_player(int(rng.integers(0, w - 16)),
                    int(rng.integers(band_h, max(band_h + 1, h - 36))))

    # Balls: bright, round, anti-aliased; optionally motion-blurred.
    n_balls = int(rng.choice(len(cfg.ball_count_probs), p=cfg.ball_count_probs))
    balls = []
    r_hi = cfg.ball_radius_range[1]
    for _ in range(n_balls):
        radius = float(rng.uniform(*cfg.ball_radius_range))
        for _attempt in range(50):
            margin = int(math.ceil(radius)) + 2
            if w - margin <= margin or h - margin <= band_h + margin:
                break
            cx = int(rng.integers(margin, w - margin))
            cy = int(rng.integers(band_h + margin, h - margin))
            if all((cx - bx) ** 2 + (cy - by) ** 2 >= (6 * r_hi) ** 2
                   for bx, by in balls):
                break
        else:
            continue
        if w - margin <= margin or h - margin <= band_h + margin:
            continue
        elongation = None
        if rng.random() < cfg.motion_blur_prob:
            angle = rng.uniform(0, 2 * math.pi)
            elongation = (math.cos(angle), math.sin(angle),
                          rng.uniform(0.2, 0.8) * radius)
        shade = rng.uniform(185, 250)
        _paint_disc(canvas, cx, cy, radius, [shade, shade, shade * 0.985],
                    elongation)
        if rng.random() < cfg.occluder_prob:  # partial occlusion by a player
            side = 1 if rng.random() < 0.5 else -1
            draw_player(cx + side * int(radius * rng.uniform(0.6, 1.0)),
                        cy - int(rng.integers(8, 20)))
        balls.append((cx, cy))

    return AnnotatedFrame(image=canvas, balls=balls,
                          source_id=f"synth-{cfg.seed}")


def frame_rng(seed, index, stream=0x5):
    """Per-frame generator so frames are independent and order-free."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), stream,
                                                         int(index))))


def write_synth_dataset(out_dir, count, cfg):
    """Write count frames plus manifest.txt; byte-deterministic in cfg.seed."""
    images_dir = os.path.join(out_dir, "images")
    os.makedirs(images_dir, exist_ok=True)
    lines = []
    for i in range(count):
        frame = synthesize_frame(cfg, frame_rng(cfg.seed, i))
        name = f"images/f{i:05d}.png"
        save_frame_png(frame, os.path.join(out_dir, name))
        coords = " ".join(f"{x} {y}" for x, y in frame.balls)
        entry = f"{name} {len(frame.balls)}"
        lines.append(entry + (f" {coords}" if coords else ""))
    manifest = os.path.join(out_dir, "manifest.txt")
    with open(manifest, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    return manifest
