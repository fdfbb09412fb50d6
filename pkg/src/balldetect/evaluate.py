"""Average precision (11-point interpolated), frame accuracy, throughput.

Detections are pooled across frames and ranked by confidence; a detection
is a true positive when it lies within the pixel tolerance of a
still-unmatched ground-truth ball in its frame (greedy, nearest first).
Accuracy follows the at-most-one-ball rule: a frame counts as correct
when the ball is found at the right place, or correctly reported absent.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import decode, model as model_mod

RECALL_LEVELS = [i / 10.0 for i in range(11)]
DEFAULT_TOLERANCE_PX = 16  # maximum ball radius in the footage


@dataclass
class RankedDetections:
    """Pooled (confidence, x, y, frame_id) detections plus ground truth."""

    detections: list
    ground_truth: dict            # frame_id -> [(x, y)]
    tolerance_px: float = DEFAULT_TOLERANCE_PX


@dataclass
class EvalReport:
    ap: float
    accuracy: float
    theta: float
    tolerance_px: float
    fps: float
    frames: int
    frames_with_ball: int
    outcomes: list = field(repr=False, default_factory=list)

    def lines(self):
        out = []
        for key in ("ap", "accuracy", "theta", "tolerance_px", "fps"):
            out.append(f"{key} = {getattr(self, key):.6g}")
        out.append(f"frames = {self.frames}")
        out.append(f"frames_with_ball = {self.frames_with_ball}")
        return out

    def per_frame_csv(self):
        rows = ["frame_id,outcome,conf,x,y"]
        for frame_id, outcome, det in self.outcomes:
            if det is None:
                rows.append(f"{frame_id},{outcome},,,")
            else:
                rows.append(f"{frame_id},{outcome},{det.confidence:.6g},"
                            f"{det.x_p},{det.y_p}")
        return rows


def _match_outcomes(ranked):
    """Greedy confidence-ordered matching; returns per-detection TP flags."""
    order = sorted(range(len(ranked.detections)),
                   key=lambda i: -ranked.detections[i][0])
    matched = {fid: [False] * len(balls)
               for fid, balls in ranked.ground_truth.items()}
    tol2 = ranked.tolerance_px ** 2
    flags = [False] * len(ranked.detections)
    for i in order:
        conf, x, y, fid = ranked.detections[i]
        balls = ranked.ground_truth.get(fid, [])
        best_j, best_d2 = -1, None
        for j, (bx, by) in enumerate(balls):
            if matched[fid][j]:
                continue
            d2 = (x - bx) ** 2 + (y - by) ** 2
            if d2 <= tol2 and (best_d2 is None or d2 < best_d2):
                best_j, best_d2 = j, d2
        if best_j >= 0:
            matched[fid][best_j] = True
            flags[i] = True
    return [flags[i] for i in order]


def average_precision(ranked, interpolate=True):
    """11-point AP per the 2007 VOC protocol (interpolated by default)."""
    total_gt = sum(len(b) for b in ranked.ground_truth.values())
    if total_gt == 0:
        raise ValueError("average precision is undefined without any "
                         "ground-truth balls")
    tp_flags = _match_outcomes(ranked)
    precisions, recalls = [], []
    tp = 0
    for i, is_tp in enumerate(tp_flags, start=1):
        tp += int(is_tp)
        precisions.append(tp / i)
        recalls.append(tp / total_gt)
    ap = 0.0
    for r in RECALL_LEVELS:
        candidates = [p for p, rec in zip(precisions, recalls) if rec >= r - 1e-12]
        if not candidates:
            p_r = 0.0
        elif interpolate:
            p_r = max(candidates)
        else:
            p_r = candidates[0]
        ap += p_r
    return ap / len(RECALL_LEVELS)


def accuracy(frames, theta, tolerance_px, suppression_radius=3):
    """Fraction of frames classified correctly under the single-ball rule.

    frames is a list of (conf_map, ball_pixels, image_hw) triples (an
    optional fourth element is used as the frame id).  Returns
    (accuracy, outcomes) with one (frame_id, outcome, detection) each.
    """
    cfg = decode.DecodeConfig(theta=theta, max_detections=1,
                              suppression_radius=suppression_radius)
    outcomes = []
    correct = 0
    for i, frame in enumerate(frames):
        conf_map, balls, image_hw = frame[0], frame[1], frame[2]
        frame_id = frame[3] if len(frame) > 3 else str(i)
        dets = decode.extract_peaks(conf_map, cfg, image_hw=image_hw)
        det = dets[0] if dets else None
        if balls:
            if det is None:
                outcome = "FN"
            else:
                d2 = min((det.x_p - bx) ** 2 + (det.y_p - by) ** 2
                         for bx, by in balls)
                outcome = "TP" if d2 <= tolerance_px ** 2 else "FP"
        else:
            outcome = "FP" if det is not None else "TN"
        correct += outcome in ("TP", "TN")
        outcomes.append((frame_id, outcome, det))
    acc = correct / len(frames) if frames else 0.0
    return acc, outcomes


@dataclass
class BenchResult:
    fps: float
    seconds: float
    iters: int
    backend: str


def benchmark(model, h, w, warmup=1, iters=4, decode_cfg=None):
    """Time forward + decode on a fixed random input (I/O excluded)."""
    from . import kernels

    if iters < 1:
        raise ValueError("iters must be >= 1")
    cfg = decode_cfg or decode.DecodeConfig(theta=0.5)
    rng = np.random.default_rng(np.random.SeedSequence((0xBE, h, w)))
    images = rng.standard_normal((1, 3, h, w), dtype=np.float32)
    for _ in range(warmup):
        conf = model_mod.forward(model, images, "infer")
        decode.extract_peaks(conf[0], cfg, image_hw=(h, w))
    start = time.perf_counter()
    for _ in range(iters):
        conf = model_mod.forward(model, images, "infer")
        decode.extract_peaks(conf[0], cfg, image_hw=(h, w))
    elapsed = time.perf_counter() - start
    return BenchResult(fps=iters / elapsed, seconds=elapsed, iters=iters,
                       backend=kernels.active_backend())
