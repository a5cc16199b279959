"""Tracking metrics: CLEAR-MOT, IDF1, sMOTSA, J&F and single-object scores."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .assignment import hungarian
from .geometry import BinaryMask, RleMask, box_iou, mask_boundary, mask_iou, rle_decode
from .structures import SequenceAnnotation, TrackedObject

Similarity = Callable[[TrackedObject, TrackedObject], float]

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PRECISION_PIXELS = 20.0
NORM_PRECISION_THRESHOLD = 0.2
BOUNDARY_TOLERANCE = 1


def box_similarity(a: TrackedObject, b: TrackedObject) -> float:
    return box_iou(a.box, b.box)


class _MaskCache:
    def __init__(self) -> None:
        self._cache: dict[int, BinaryMask] = {}

    def get(self, rle: RleMask) -> BinaryMask:
        key = id(rle)
        if key not in self._cache:
            self._cache[key] = rle_decode(rle)
        return self._cache[key]


def mask_similarity_fn() -> Similarity:
    cache = _MaskCache()

    def sim(a: TrackedObject, b: TrackedObject) -> float:
        if a.mask is None or b.mask is None:
            raise ValueError("mask metric needs masks on both sides")
        return mask_iou(cache.get(a.mask), cache.get(b.mask))

    return sim


def _check_aligned(gt: SequenceAnnotation, pred: SequenceAnnotation) -> None:
    if len(gt) != len(pred):
        raise ValueError(f"ground truth has {len(gt)} frames, prediction has {len(pred)}")
    if sum(len(f) for f in gt) == 0:
        raise ValueError("ground truth is empty; the metric is undefined")


@dataclass
class ClearMotResult:
    mota: float
    fp: int
    fn: int
    ids: int
    tp: int
    gt_count: int
    tp_similarity: float
    # per-frame (gt, tp, fp, fn, ids) counts, for curve export
    per_frame: list[tuple[int, int, int, int, int]] = field(default_factory=list)


def clear_mot(
    gt: SequenceAnnotation,
    pred: SequenceAnnotation,
    iou_threshold: float = 0.5,
    similarity: Similarity = box_similarity,
) -> ClearMotResult:
    """CLEAR-MOT counts with match persistence.

    A ground-truth object keeps last frame's partner when the pair still
    clears the threshold; the rest are matched by min-cost assignment on
    ``1 - similarity``. An identity switch is counted whenever an object is
    matched to a different prediction id than at its previous match.
    """
    _check_aligned(gt, pred)
    last_match: dict[int, int] = {}
    prev_frame: dict[int, int] = {}
    fp = fn = ids = tp = 0
    tp_sim = 0.0
    per_frame = []
    for g_objs, p_objs in zip(gt, pred):
        g_index = {o.obj_id: k for k, o in enumerate(g_objs)}
        p_index = {o.obj_id: k for k, o in enumerate(p_objs)}
        sim = np.array([[similarity(g, p) for p in p_objs] for g in g_objs]).reshape(len(g_objs), len(p_objs))
        matched: dict[int, int] = {}
        for g_id, p_id in prev_frame.items():
            if g_id in g_index and p_id in p_index and sim[g_index[g_id], p_index[p_id]] >= iou_threshold:
                matched[g_id] = p_id
        free_g = [k for k, o in enumerate(g_objs) if o.obj_id not in matched]
        used_p = set(matched.values())
        free_p = [k for k, o in enumerate(p_objs) if o.obj_id not in used_p]
        if free_g and free_p:
            sub = sim[np.ix_(free_g, free_p)]
            for r, c in hungarian(1.0 - sub, sub >= iou_threshold):
                matched[g_objs[free_g[r]].obj_id] = p_objs[free_p[c]].obj_id
        frame_ids = 0
        for g_id, p_id in matched.items():
            if g_id in last_match and last_match[g_id] != p_id:
                frame_ids += 1
            last_match[g_id] = p_id
            tp_sim += sim[g_index[g_id], p_index[p_id]]
        frame_fn = len(g_objs) - len(matched)
        frame_fp = len(p_objs) - len(matched)
        fp += frame_fp
        fn += frame_fn
        ids += frame_ids
        tp += len(matched)
        prev_frame = matched
        per_frame.append((len(g_objs), len(matched), frame_fp, frame_fn, frame_ids))
    total = sum(len(f) for f in gt)
    return ClearMotResult(1.0 - (fp + fn + ids) / total, fp, fn, ids, tp, total, float(tp_sim), per_frame)


def idf1(gt: SequenceAnnotation, pred: SequenceAnnotation, iou_threshold: float = 0.5) -> float:
    """Identity F1 from the identity matching that maximizes IDTP."""
    _check_aligned(gt, pred)
    gt_ids = sorted({o.obj_id for f in gt for o in f})
    pred_ids = sorted({o.obj_id for f in pred for o in f})
    n_gt = sum(len(f) for f in gt)
    n_pred = sum(len(f) for f in pred)
    if not pred_ids:
        return 0.0
    gi = {g: k for k, g in enumerate(gt_ids)}
    pi = {p: k for k, p in enumerate(pred_ids)}
    overlap = np.zeros((len(gt_ids), len(pred_ids)))
    for g_objs, p_objs in zip(gt, pred):
        for g in g_objs:
            for p in p_objs:
                if box_iou(g.box, p.box) >= iou_threshold:
                    overlap[gi[g.obj_id], pi[p.obj_id]] += 1
    pairs = hungarian(-overlap, overlap > 0)
    idtp = sum(overlap[r, c] for r, c in pairs)
    idfp = n_pred - idtp
    idfn = n_gt - idtp
    return float(2 * idtp / (2 * idtp + idfp + idfn))


def smotsa(gt: SequenceAnnotation, pred: SequenceAnnotation, iou_threshold: float = 0.5) -> float:
    """``(sum of TP mask IoUs - FP - IDS) / #GT`` with mask-IoU matching."""
    for frames in (gt, pred):
        if any(o.mask is None for f in frames for o in f):
            raise ValueError("sMOTSA needs masks on every object")
    res = clear_mot(gt, pred, iou_threshold, mask_similarity_fn())
    return (res.tp_similarity - res.fp - res.ids) / res.gt_count


def boundary_f(pred: BinaryMask, gt: BinaryMask, tolerance: int = BOUNDARY_TOLERANCE) -> float:
    pb = mask_boundary(pred).data
    gb = mask_boundary(gt).data
    n_pb, n_gb = pb.sum(), gb.sum()
    if n_pb == 0 and n_gb == 0:
        return 1.0
    if n_pb == 0 or n_gb == 0:
        return 0.0
    disk = ndimage.generate_binary_structure(2, 1)
    gb_dil = ndimage.binary_dilation(gb, disk, iterations=tolerance)
    pb_dil = ndimage.binary_dilation(pb, disk, iterations=tolerance)
    precision = (pb & gb_dil).sum() / n_pb
    recall = (gb & pb_dil).sum() / n_gb
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def j_and_f(gt: SequenceAnnotation, pred: SequenceAnnotation) -> tuple[float, float, float]:
    """Region Jaccard and boundary F per object, averaged over frames then objects."""
    _check_aligned(gt, pred)
    gt_ids = sorted({o.obj_id for f in gt for o in f})
    pred_ids = {o.obj_id for f in pred for o in f}
    if pred_ids - set(gt_ids):
        raise ValueError(f"prediction ids {sorted(pred_ids - set(gt_ids))} are not in the annotation")
    if any(o.mask is None for frames in (gt, pred) for f in frames for o in f):
        raise ValueError("J&F needs masks on every object")
    shape = next((o.mask.height, o.mask.width) for f in gt for o in f)
    j_means, f_means = [], []
    for obj_id in gt_ids:
        js, fs = [], []
        for g_objs, p_objs in zip(gt, pred):
            g = next((o for o in g_objs if o.obj_id == obj_id), None)
            p = next((o for o in p_objs if o.obj_id == obj_id), None)
            gm = rle_decode(g.mask) if g else BinaryMask.zeros(*shape)
            pm = rle_decode(p.mask) if p else BinaryMask.zeros(*shape)
            js.append(mask_iou(pm, gm))
            fs.append(boundary_f(pm, gm))
        j_means.append(np.mean(js))
        f_means.append(np.mean(fs))
    j, f = float(np.mean(j_means)), float(np.mean(f_means))
    return j, f, (j + f) / 2


def sot_metrics(gt: SequenceAnnotation, pred: SequenceAnnotation) -> tuple[float, float, float]:
    """Success AUC, precision at 20 px, and size-normalized precision at 0.2."""
    if len(gt) != len(pred):
        raise ValueError(f"ground truth has {len(gt)} frames, prediction has {len(pred)}")
    if any(len(f) > 1 for f in gt) or any(len(f) > 1 for f in pred):
        raise ValueError("single-object metrics need at most one object per frame")
    ious, dists, norm_dists = [], [], []
    for g_objs, p_objs in zip(gt, pred):
        if not g_objs:
            continue
        g = g_objs[0].box
        if not p_objs:
            ious.append(0.0)
            dists.append(np.inf)
            norm_dists.append(np.inf)
            continue
        p = p_objs[0].box
        ious.append(box_iou(g, p))
        (gx, gy), (px, py) = g.center, p.center
        dists.append(float(np.hypot(px - gx, py - gy)))
        norm_dists.append(float(np.hypot((px - gx) / g.width, (py - gy) / g.height)))
    if not ious:
        raise ValueError("ground truth is empty; the metric is undefined")
    ious_a = np.array(ious)
    success = float(np.mean([(ious_a > t).mean() for t in SUCCESS_THRESHOLDS]))
    precision = float((np.array(dists) < PRECISION_PIXELS).mean())
    norm_precision = float((np.array(norm_dists) < NORM_PRECISION_THRESHOLD).mean())
    return success, precision, norm_precision


@dataclass
class MetricsReport:
    mode: str
    mota: float | None = None
    idf1: float | None = None
    fp: int | None = None
    fn: int | None = None
    ids: int | None = None
    smotsa: float | None = None
    j_mean: float | None = None
    f_mean: float | None = None
    j_and_f: float | None = None
    sot_success_auc: float | None = None
    sot_precision: float | None = None
    sot_norm_precision: float | None = None

    def to_json(self) -> str:
        """Populated fields only, in declaration order."""
        return json.dumps({k: v for k, v in asdict(self).items() if v is not None}, indent=2) + "\n"


def evaluate(mode: str, gt: SequenceAnnotation, pred: SequenceAnnotation) -> tuple[MetricsReport, ClearMotResult | None]:
    """Metrics appropriate to a task mode; also returns the CLEAR-MOT detail when computed."""
    if mode not in ("sot", "vos", "mot", "mots", "vis"):
        raise ValueError(f"unknown mode {mode!r}")
    report = MetricsReport(mode)
    detail = None
    if mode == "sot":
        report.sot_success_auc, report.sot_precision, report.sot_norm_precision = sot_metrics(gt, pred)
    if mode == "vos":
        report.j_mean, report.f_mean, report.j_and_f = j_and_f(gt, pred)
    if mode in ("mot", "mots", "vis"):
        detail = clear_mot(gt, pred)
        report.mota, report.fp, report.fn, report.ids = detail.mota, detail.fp, detail.fn, detail.ids
        report.idf1 = idf1(gt, pred)
    if mode in ("mots", "vis"):
        report.smotsa = smotsa(gt, pred)
    return report, detail
