"""Segmentation metrics: semantic mIoU, instance AP and precision/recall at IoU 0.5."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

AP_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


def semantic_miou(pred, gt, classes) -> tuple[dict[int, float], float]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    classes = list(classes)
    if not classes:
        raise ValueError("classes must be non-empty")
    ious = {}
    for c in classes:
        p, g = pred == c, gt == c
        union = np.count_nonzero(p | g)
        if union == 0:
            continue
        ious[int(c)] = np.count_nonzero(p & g) / union
    mean = float(np.mean(list(ious.values()))) if ious else 0.0
    return ious, mean


def _masks(labels: np.ndarray):
    ids = np.unique(labels)
    ids = ids[ids >= 0]
    return ids


def iou_matrix(pred: np.ndarray, pred_ids, gt: np.ndarray, gt_ids) -> np.ndarray:
    """IoU between every predicted and ground-truth instance mask over all points."""
    pred_ids = np.asarray(pred_ids, dtype=np.int64)
    gt_ids = np.asarray(gt_ids, dtype=np.int64)
    if pred_ids.size == 0 or gt_ids.size == 0:
        return np.zeros((pred_ids.size, gt_ids.size))
    p_sort, g_sort = np.argsort(pred_ids), np.argsort(gt_ids)
    if (np.diff(p_sort) != 1).any() or (np.diff(g_sort) != 1).any():
        m = iou_matrix(pred, pred_ids[p_sort], gt, gt_ids[g_sort])
        return m[np.argsort(p_sort)][:, np.argsort(g_sort)]
    pi = np.full(pred.shape, -1, dtype=np.int64)
    gi = np.full(gt.shape, -1, dtype=np.int64)
    pi[np.isin(pred, pred_ids)] = np.searchsorted(pred_ids, pred[np.isin(pred, pred_ids)])
    gi[np.isin(gt, gt_ids)] = np.searchsorted(gt_ids, gt[np.isin(gt, gt_ids)])
    both = (pi >= 0) & (gi >= 0)
    inter = np.zeros((pred_ids.size, gt_ids.size))
    np.add.at(inter, (pi[both], gi[both]), 1)
    psize = np.bincount(pi[pi >= 0], minlength=pred_ids.size)
    gsize = np.bincount(gi[gi >= 0], minlength=gt_ids.size)
    union = psize[:, None] + gsize[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _match(order: np.ndarray, ious: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy matching in ``order``: each prediction takes the free GT with highest IoU >= threshold."""
    tp = np.zeros(order.size, dtype=bool)
    free = np.ones(ious.shape[1], dtype=bool)
    for rank, p in enumerate(order):
        if not free.any():
            break
        cand = np.where(free, ious[p], -1.0)
        g = int(np.argmax(cand))
        if cand[g] >= threshold:
            tp[rank] = True
            free[g] = False
    return tp


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP of a ranked TP/FP sequence."""
    if n_gt == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, tp.size + 1)
    recall = ctp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev) * envelope))


@dataclass
class _ClassData:
    ious: np.ndarray  # preds x gts
    order: np.ndarray  # preds ranked by confidence


def _class_data(pred_labels, confidence, pred_class, gt_labels, gt_class, c) -> _ClassData:
    present = set(_masks(np.asarray(pred_labels)).tolist())
    p_ids = np.array(sorted(i for i, k in pred_class.items() if k == c and i in confidence and i in present), dtype=np.int64)
    g_ids = np.array(sorted(i for i, k in gt_class.items() if k == c), dtype=np.int64)
    if g_ids.size:
        gids, gfirst = np.unique(np.asarray(gt_labels), return_index=True)
        pos = np.searchsorted(gids, g_ids)
        found = (pos < gids.size) & (gids[np.minimum(pos, gids.size - 1)] == g_ids)
        key = np.where(found, gfirst[np.minimum(pos, gids.size - 1)], np.iinfo(np.int64).max)
        g_ids = g_ids[np.lexsort((g_ids, key))]
    ious = iou_matrix(pred_labels, p_ids, gt_labels, g_ids)
    conf = np.array([confidence[int(i)] for i in p_ids], dtype=np.float64)
    if p_ids.size == 0:
        return _ClassData(ious, np.empty(0, dtype=np.int64))
    # equal confidences rank by the mask's first point, which survives relabeling
    ids, first = np.unique(pred_labels, return_index=True)
    first_point = first[np.searchsorted(ids, p_ids)]
    order = np.lexsort((first_point, -conf))
    return _ClassData(ious, order)


def gt_instance_classes(gt_instance: np.ndarray, gt_semantic: np.ndarray) -> dict[int, int]:
    """Majority ground-truth class of each ground-truth instance."""
    out = {}
    for i in _masks(gt_instance):
        vals, counts = np.unique(gt_semantic[gt_instance == i], return_counts=True)
        out[int(i)] = int(vals[np.argmax(counts)])
    return out


def instance_ap(
    pred_labels,
    confidence: dict[int, float],
    pred_class: dict[int, int],
    gt_labels,
    gt_class: dict[int, int],
    classes,
    thresholds=AP_THRESHOLDS,
) -> dict[int, dict[str, float]]:
    """Per-class AP (mean over ``thresholds``), AP50 and AP25.

    Classes without ground truth instances are left out.
    """
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    for i in _masks(pred_labels):
        if int(i) not in confidence:
            raise ValueError(f"missing confidence for predicted instance {int(i)}")
    out = {}
    for c in classes:
        d = _class_data(pred_labels, confidence, pred_class, gt_labels, gt_class, c)
        n_gt = d.ious.shape[1]
        if n_gt == 0:
            continue

        def ap_at(t):
            return average_precision(_match(d.order, d.ious, t), n_gt)

        out[int(c)] = {
            "AP": float(np.mean([ap_at(t) for t in thresholds])),
            "AP50": ap_at(0.5),
            "AP25": ap_at(0.25),
        }
    return out


def precision_recall_at_iou(pred_labels, confidence, pred_class, gt_labels, gt_class, classes, iou: float = 0.5):
    """Per-class precision and recall under greedy matching; returns ``(per_class, mPre, mRec)``."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    per = {}
    for c in classes:
        d = _class_data(pred_labels, confidence, pred_class, gt_labels, gt_class, c)
        n_pred, n_gt = d.ious.shape
        if n_pred == 0 and n_gt == 0:
            continue
        tp = int(_match(d.order, d.ious, iou).sum())
        entry = {"precision": tp / n_pred if n_pred else 0.0}
        if n_gt:
            entry["recall"] = tp / n_gt
        per[int(c)] = entry
    pres = [v["precision"] for v in per.values()]
    recs = [v["recall"] for v in per.values() if "recall" in v]
    return per, float(np.mean(pres)) if pres else 0.0, float(np.mean(recs)) if recs else 0.0


@dataclass
class EvalReport:
    classes: list[int]
    iou: dict[int, float] = field(default_factory=dict)
    miou: float = 0.0
    ap: dict[int, dict[str, float]] = field(default_factory=dict)
    mAP: float = 0.0
    mAP50: float = 0.0
    mAP25: float = 0.0
    precision_recall: dict[int, dict[str, float]] = field(default_factory=dict)
    mPre: float = 0.0
    mRec: float = 0.0
    scenes: int = 1
    gt_instances: int = 0
    pred_instances: int = 0

    def to_json(self) -> str:
        d = asdict(self)
        for key in ("iou", "ap", "precision_recall"):
            d[key] = {str(k): v for k, v in d[key].items()}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    def rows(self, algo: str = "") -> list[tuple]:
        """Flat ``(algo, class, metric, value)`` rows; class ``mean`` holds the averages."""
        rows = []
        for c, v in sorted(self.iou.items()):
            rows.append((algo, c, "IoU", v))
        for c, m in sorted(self.ap.items()):
            for k in ("AP", "AP50", "AP25"):
                rows.append((algo, c, k, m[k]))
        for c, m in sorted(self.precision_recall.items()):
            for k, v in sorted(m.items()):
                rows.append((algo, c, k, v))
        for k in ("miou", "mAP", "mAP50", "mAP25", "mPre", "mRec"):
            rows.append((algo, "mean", k, getattr(self, k)))
        return rows


def evaluate(
    pred_labels,
    confidence,
    pred_class,
    gt_instance,
    gt_semantic,
    classes,
    pred_semantic=None,
) -> EvalReport:
    classes = sorted(int(c) for c in classes)
    gt_class = gt_instance_classes(np.asarray(gt_instance), np.asarray(gt_semantic))
    rep = EvalReport(classes=classes)
    if pred_semantic is not None:
        rep.iou, rep.miou = semantic_miou(pred_semantic, gt_semantic, classes)
    rep.ap = instance_ap(pred_labels, confidence, pred_class, gt_instance, gt_class, classes)
    if rep.ap:
        rep.mAP = float(np.mean([v["AP"] for v in rep.ap.values()]))
        rep.mAP50 = float(np.mean([v["AP50"] for v in rep.ap.values()]))
        rep.mAP25 = float(np.mean([v["AP25"] for v in rep.ap.values()]))
    rep.precision_recall, rep.mPre, rep.mRec = precision_recall_at_iou(
        pred_labels, confidence, pred_class, gt_instance, gt_class, classes
    )
    rep.gt_instances = sum(1 for k in gt_class.values() if k in classes)
    rep.pred_instances = len(_masks(np.asarray(pred_labels)))
    return rep


def rows_to_csv(rows, header=("algo", "class", "metric", "value")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()
