"""Training targets, hard-negative mining and the detection loss.

Cells are addressed as (x_f, y_f) map coordinates; channel 0 of a
logit/confidence map is background, channel 1 is ball.  A ball at pixel
(x, y) marks cell (x // 4, y // 4) and its 8-connected neighbours as
positive.  Negatives are mined per image: candidates ranked by
-log(c_bg) descending, the hardest min(3 * |Pos|, available) selected
(32 hardest on ball-free frames so they still contribute gradient).

The loss is cross entropy over the selected cells, normalized by
N = |Pos| + |Neg|, computed from pre-softmax logits through log-sum-exp.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

BALL_FREE_NEGATIVES = 32


@dataclass
class TargetSet:
    """Positive-cell mask plus the originating cell centers."""

    pos_mask: np.ndarray          # bool (map_h, map_w)
    ball_cells: list              # [(x_f, y_f)] one per ball

    @property
    def pos_count(self):
        return int(self.pos_mask.sum())

    @property
    def map_hw(self):
        return self.pos_mask.shape


@dataclass
class LossOutput:
    value: float
    grad_logits: np.ndarray       # (2, map_h, map_w) float32
    pos_count: int
    neg_count: int


def build_targets(ball_pixels, map_h, map_w, k=4):
    """Mark each ball's cell and its clipped 3x3 neighbourhood positive."""
    pos = np.zeros((map_h, map_w), dtype=bool)
    cells = []
    for x, y in ball_pixels:
        cx = min(max(int(x) // k, 0), map_w - 1)
        cy = min(max(int(y) // k, 0), map_h - 1)
        cells.append((cx, cy))
        pos[max(0, cy - 1):cy + 2, max(0, cx - 1):cx + 2] = True
    return TargetSet(pos_mask=pos, ball_cells=cells)


def mine_negatives(conf_map, targets):
    """Select the hardest background cells, ranked by -log(c_bg).

    Ties resolve toward lower flat index; the selection equals the top-m
    of a full stable sort.  Returns a boolean mask.
    """
    if conf_map.shape[0] != 2 or conf_map.shape[1:] != targets.map_hw:
        raise ShapeError(f"confidence map shape {conf_map.shape} does not "
                         f"match targets {targets.map_hw}")
    with np.errstate(divide="ignore"):
        score = -np.log(conf_map[0].astype(np.float64))
    flat = score.ravel().copy()
    pos_flat = targets.pos_mask.ravel()
    flat[pos_flat] = -np.inf  # positives are never candidates
    npos = targets.pos_count
    available = flat.size - npos
    m = min(3 * npos if npos > 0 else BALL_FREE_NEGATIVES, available)
    mask = np.zeros(flat.size, dtype=bool)
    if m > 0:
        order = np.argsort(-flat, kind="stable")
        mask[order[:m]] = True
    return mask.reshape(targets.map_hw)


def detection_loss(logit_map, targets, selected_neg):
    """Cross-entropy over ball cells and mined background cells.

    logit_map is pre-softmax (2, map_h, map_w); the value and the exact
    logit gradient (softmax minus one-hot, scaled by 1/N) are returned.
    """
    if logit_map.shape[0] != 2 or logit_map.shape[1:] != targets.map_hw:
        raise ShapeError(f"logit map shape {logit_map.shape} does not match "
                         f"targets {targets.map_hw}")
    if selected_neg.shape != targets.map_hw:
        raise ShapeError(f"negative mask shape {selected_neg.shape} does not "
                         f"match targets {targets.map_hw}")
    pos = targets.pos_mask
    npos = targets.pos_count
    nneg = int(selected_neg.sum())
    n_total = npos + nneg
    grad = np.zeros_like(logit_map, dtype=np.float32)
    if n_total == 0:
        return LossOutput(value=0.0, grad_logits=grad, pos_count=0, neg_count=0)

    z = logit_map.astype(np.float64)
    zmax = z.max(axis=0)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=0))
    log_p = z - lse                      # log softmax, both channels
    p = np.exp(log_p)

    value = -(log_p[1][pos].sum() + log_p[0][selected_neg].sum()) / n_total

    g = np.zeros_like(z)
    g[:, pos] = p[:, pos]
    g[1, pos] -= 1.0
    g[:, selected_neg] += p[:, selected_neg]
    g[0, selected_neg] -= 1.0
    grad = (g / n_total).astype(np.float32)
    return LossOutput(value=float(value), grad_logits=grad,
                      pos_count=npos, neg_count=nneg)
