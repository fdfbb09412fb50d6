"""Confidence-map decoding: peak extraction, pixel mapping, calibration.

A peak is accepted while its confidence clears theta; after each
acceptance a (2r+1)-square neighbourhood is zeroed so one object yields
one detection.  Cell (x_f, y_f) maps to pixel
(floor(k*(x_f - 0.5)), floor(k*(y_f - 0.5))), clipped into the frame.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass
class DecodeConfig:
    theta: float = 0.5
    max_detections: int = 1
    suppression_radius: int = 3

    def __post_init__(self):
        if self.suppression_radius < 1:
            raise ValueError("suppression radius must be >= 1")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")


@dataclass
class Detection:
    x_p: int
    y_p: int
    confidence: float
    cell: tuple  # (x_f, y_f)


def map_to_pixels(x_f, y_f, image_h, image_w, k=4):
    """Cell -> pixel coordinates, clipped to [0, W-1] x [0, H-1]."""
    x_p = (2 * k * int(x_f) - k) // 2  # floor(k * (x_f - 0.5)) exactly
    y_p = (2 * k * int(y_f) - k) // 2
    return (min(max(x_p, 0), image_w - 1), min(max(y_p, 0), image_h - 1))


def extract_peaks(conf_map, cfg, image_hw=None):
    """Iterative global-max decoding of one confidence map.

    conf_map is (2, map_h, map_w); suppression works on a copy.  Returns
    detections in confidence-descending order (ties toward the lowest
    flat index).
    """
    if conf_map.ndim != 3 or conf_map.shape[0] != 2:
        raise ShapeError(f"expected a single-image (2, h, w) confidence map, "
                         f"got {conf_map.shape}")
    map_h, map_w = conf_map.shape[1], conf_map.shape[2]
    if image_hw is None:
        image_hw = (map_h * 4, map_w * 4)
    ball = conf_map[1].copy()
    r = cfg.suppression_radius
    detections = []
    while len(detections) < cfg.max_detections:
        flat = int(ball.argmax())
        conf = float(ball.flat[flat])
        if conf < cfg.theta:
            break
        y_f, x_f = divmod(flat, map_w)
        x_p, y_p = map_to_pixels(x_f, y_f, image_hw[0], image_hw[1])
        detections.append(Detection(x_p=x_p, y_p=y_p, confidence=conf,
                                    cell=(x_f, y_f)))
        ball[max(0, y_f - r):y_f + r + 1, max(0, x_f - r):x_f + r + 1] = 0.0
    return detections


def calibrate_threshold(val_outputs, tolerance_px, suppression_radius=3):
    """Pick theta from {0.00, 0.01, ..., 1.00} maximizing accuracy.

    val_outputs is a list of (conf_map, ball_pixels, image_hw); ties
    resolve toward the larger theta.
    """
    from . import evaluate  # local import; evaluate depends on this module

    if not val_outputs:
        raise ValueError("threshold calibration needs a non-empty "
                         "validation set")
    best_theta, best_acc = 0.0, -1.0
    for i in range(101):
        theta = i / 100.0
        acc, _ = evaluate.accuracy(val_outputs, theta, tolerance_px,
                                   suppression_radius=suppression_radius)
        if acc >= best_acc:
            best_acc, best_theta = acc, theta
    return best_theta
