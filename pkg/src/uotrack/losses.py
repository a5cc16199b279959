"""Training objective at desk scale: detection loss, dynamic-k label assignment,
contrastive ReID loss and a central-difference gradient checker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .geometry import BinaryMask, Box, box_giou, box_iou
from .neural import upsample_bilinear

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
DYNAMIC_K_CANDIDATES = 10


@dataclass
class Prediction:
    box: Box
    class_logits: np.ndarray
    mask_logits: np.ndarray | None = None
    embedding: np.ndarray | None = None


@dataclass
class GroundTruth:
    box: Box
    class_id: int
    mask: BinaryMask | None = None

    def __post_init__(self) -> None:
        if self.class_id < 0:
            raise ValueError("class_id must be non-negative")


@dataclass
class AssignmentResult:
    # assigned[g] lists prediction indices assigned to ground truth g
    assigned: list[list[int]]
    cost: np.ndarray
    dynamic_k: list[int]

    def owner(self, n_preds: int) -> list[int]:
        """Ground-truth index per prediction, -1 for background."""
        out = [-1] * n_preds
        for g, preds in enumerate(self.assigned):
            for p in preds:
                out[p] = g
        return out


@dataclass
class LossWeights:
    box: float = 2.0
    mask: float = 2.0
    reid: float = 10.0
    positives: int = 1
    negatives: int = 10

    def __post_init__(self) -> None:
        if min(self.box, self.mask, self.reid, self.positives, self.negatives) < 0:
            raise ValueError("loss weights and sample counts must be non-negative")


@dataclass
class DetectionLoss:
    total: float
    cls: float
    box: float
    mask: float


def classification_loss(logits: Sequence[float], target_class: int | None) -> float:
    """Mean sigmoid cross-entropy against a one-hot target; ``None`` means background."""
    x = np.asarray(logits, dtype=float)
    y = np.zeros_like(x)
    if target_class is not None:
        y[target_class] = 1.0
    return float(np.mean(np.logaddexp(0.0, x) - x * y))


def box_loss(pred: Box, gt: Box, image_size: tuple[float, float]) -> float:
    """Image-normalized L1 over the corners plus ``1 - GIoU``."""
    w, h = image_size
    scale = np.array([w, h, w, h], dtype=float)
    l1 = np.abs(np.subtract(pred.as_xyxy(), gt.as_xyxy())) / scale
    return float(l1.sum() + 1.0 - box_giou(pred, gt))


def box_loss_grad(pred: np.ndarray, gt: np.ndarray, image_size: tuple[float, float]) -> np.ndarray:
    """Gradient of ``box_loss`` with respect to the predicted ``(x1, y1, x2, y2)``.

    Valid where the loss is differentiable: no coordinate ties between the
    boxes and no L1 term exactly at zero.
    """
    x1, y1, x2, y2 = (float(v) for v in pred)
    gx1, gy1, gx2, gy2 = (float(v) for v in gt)
    w, h = image_size
    g_l1 = np.sign(np.subtract(pred, gt)) / np.array([w, h, w, h])

    iw = min(x2, gx2) - max(x1, gx1)
    ih = min(y2, gy2) - max(y1, gy1)
    overlap = iw > 0 and ih > 0
    inter = iw * ih if overlap else 0.0
    d_inter = np.zeros(4)
    if overlap:
        d_inter = np.array([-ih * (x1 > gx1), -iw * (y1 > gy1), ih * (x2 < gx2), iw * (y2 < gy2)])
    pw, ph = x2 - x1, y2 - y1
    d_area = np.array([-ph, -pw, ph, pw])
    union = pw * ph + (gx2 - gx1) * (gy2 - gy1) - inter
    d_union = d_area - d_inter
    cw = max(x2, gx2) - min(x1, gx1)
    ch = max(y2, gy2) - min(y1, gy1)
    enclose = cw * ch
    d_enclose = np.array([-ch * (x1 < gx1), -cw * (y1 < gy1), ch * (x2 > gx2), cw * (y2 > gy2)])
    # loss = 2 - I/U - U/C
    g_giou = -(d_inter * union - inter * d_union) / union**2 - (d_union * enclose - union * d_enclose) / enclose**2
    return g_l1 + g_giou


def _resize_logits(pred_logits: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    x = np.asarray(pred_logits, dtype=float)
    if x.ndim == 3:
        if x.shape[0] != 1:
            raise ValueError(f"mask logits must have one channel, got {x.shape[0]}")
        x = x[0]
    if x.shape != shape:
        x = upsample_bilinear(x, *shape)
    return x


def mask_loss(
    pred_logits: np.ndarray,
    gt: BinaryMask,
    smooth: float = 0.0,
    alpha: float = FOCAL_ALPHA,
    gamma: float = FOCAL_GAMMA,
) -> float:
    """Dice plus mean sigmoid focal loss.

    Logits at a lower resolution are bilinearly resized to the mask first.
    ``smooth`` is added to the dice numerator and denominator; with none, an
    empty prediction against an empty mask counts as a perfect overlap.
    """
    x = _resize_logits(pred_logits, gt.data.shape)
    g = gt.data.astype(float)
    p = expit(x)
    denom = p.sum() + g.sum() + smooth
    dice = 1.0 - (2.0 * (p * g).sum() + smooth) / denom if denom > 0 else 0.0
    ce = np.logaddexp(0.0, x) - x * g
    p_t = p * g + (1 - p) * (1 - g)
    alpha_t = alpha * g + (1 - alpha) * (1 - g)
    focal = np.mean(alpha_t * (1 - p_t) ** gamma * ce)
    return float(dice + focal)


def ota_assign(preds: Sequence[Prediction], gts: Sequence[GroundTruth]) -> AssignmentResult:
    """Dynamic-k assignment on a classification + (1 - GIoU) transport cost.

    Each ground truth gets ``k = clamp(round(sum of its top-10 IoUs), 1, P)``
    cheapest predictions; a prediction claimed twice stays with its
    cheapest claimant.
    """
    if not preds:
        raise ValueError("need at least one prediction")
    n_p = len(preds)
    cost = np.zeros((len(gts), n_p))
    ious = np.zeros((len(gts), n_p))
    for g, gt in enumerate(gts):
        for p, pr in enumerate(preds):
            cost[g, p] = classification_loss(pr.class_logits, gt.class_id) + 1.0 - box_giou(pr.box, gt.box)
            ious[g, p] = box_iou(pr.box, gt.box)
    ks = []
    claims: dict[int, int] = {}
    for g in range(len(gts)):
        top = np.sort(ious[g])[::-1][:DYNAMIC_K_CANDIDATES]
        k = int(min(max(np.floor(top.sum() + 0.5), 1), n_p))
        ks.append(k)
        for p in np.argsort(cost[g], kind="stable")[:k]:
            p = int(p)
            if p not in claims or cost[g, p] < cost[claims[p], p]:
                claims[p] = g
    assigned: list[list[int]] = [[] for _ in gts]
    for p in sorted(claims):
        assigned[claims[p]].append(p)
    return AssignmentResult(assigned, cost, ks)


def detection_loss(
    preds: Sequence[Prediction],
    gts: Sequence[GroundTruth],
    assignment: AssignmentResult,
    weights: LossWeights,
    image_size: tuple[float, float],
) -> DetectionLoss:
    """Classification averaged over all predictions; box and mask averaged over assigned pairs."""
    owner = assignment.owner(len(preds))
    cls = float(
        np.mean([classification_loss(p.class_logits, None if o < 0 else gts[o].class_id) for p, o in zip(preds, owner)])
    )
    pairs = [(p, o) for p, o in enumerate(owner) if o >= 0]
    box = float(np.mean([box_loss(preds[p].box, gts[g].box, image_size) for p, g in pairs])) if pairs else 0.0
    mask_terms = [
        mask_loss(preds[p].mask_logits, gts[g].mask)
        for p, g in pairs
        if preds[p].mask_logits is not None and gts[g].mask is not None
    ]
    mask = float(np.mean(mask_terms)) if mask_terms else 0.0
    return DetectionLoss(cls + weights.box * box + weights.mask * mask, cls, box, mask)


def _pairwise_gaps(e_t: np.ndarray, positives: np.ndarray, negatives: np.ndarray) -> np.ndarray:
    return (negatives @ e_t)[None, :] - (positives @ e_t)[:, None]


def _as_matrix(vectors: Sequence[np.ndarray] | np.ndarray, dim: int) -> np.ndarray:
    m = np.asarray(vectors, dtype=float)
    if m.size == 0:
        return m.reshape(0, dim)
    if m.ndim != 2 or m.shape[1] != dim:
        raise ValueError(f"embeddings must have dimension {dim}, got shape {m.shape}")
    return m


def reid_contrastive_loss(e_t: np.ndarray, positives: Sequence[np.ndarray], negatives: Sequence[np.ndarray]) -> float:
    """``log(1 + sum_{+,-} exp(e.e- - e.e+))`` evaluated with log-sum-exp."""
    e_t = np.asarray(e_t, dtype=float)
    pos = _as_matrix(positives, e_t.size)
    neg = _as_matrix(negatives, e_t.size)
    if len(pos) == 0:
        raise ValueError("the contrastive loss needs at least one positive")
    if len(neg) == 0:
        return 0.0
    return float(np.logaddexp(0.0, logsumexp(_pairwise_gaps(e_t, pos, neg))))


def reid_contrastive_grad(e_t: np.ndarray, positives: Sequence[np.ndarray], negatives: Sequence[np.ndarray]) -> np.ndarray:
    e_t = np.asarray(e_t, dtype=float)
    pos = _as_matrix(positives, e_t.size)
    neg = _as_matrix(negatives, e_t.size)
    if len(pos) == 0:
        raise ValueError("the contrastive loss needs at least one positive")
    if len(neg) == 0:
        return np.zeros_like(e_t)
    gaps = _pairwise_gaps(e_t, pos, neg)
    # weight of each pair is exp(gap) / (1 + sum exp(gap))
    w = np.exp(gaps - np.logaddexp(0.0, logsumexp(gaps)))
    return w.sum(axis=0) @ neg - w.sum(axis=1) @ pos


def select_reid_samples(ref_cost: np.ndarray, n_pos: int, n_neg: int) -> tuple[list[int], list[int]]:
    """Reference-frame predictions for one identity: ``n_pos`` cheapest, ``n_neg`` costliest."""
    order = np.argsort(np.asarray(ref_cost, dtype=float), kind="stable")
    pos = order[:n_pos].tolist()
    remaining = [i for i in order[::-1].tolist() if i not in pos]
    return pos, remaining[:n_neg]


def total_loss(det: DetectionLoss | float, reid_terms: Sequence[float], beta: float) -> float:
    """Detection loss plus ``beta`` times the mean ReID loss over anchors."""
    det_total = det.total if isinstance(det, DetectionLoss) else float(det)
    reid = float(np.mean(reid_terms)) if len(reid_terms) else 0.0
    return det_total + beta * reid


def finite_diff_grad(loss_fn: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences ``(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step.flat[i] = eps
        hi, lo = loss_fn(theta + step), loss_fn(theta - step)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise FloatingPointError(f"non-finite loss while differencing coordinate {i}")
        grad.flat[i] = (hi - lo) / (2 * eps)
    return grad
