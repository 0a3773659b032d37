"""Detection, tracking and classification metrics."""

from __future__ import annotations

import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .tracklog import UNKNOWN_CLASS, by_frame, by_track

IOU_THRESHOLDS = np.round(np.arange(1, 10) / 10, 1)


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix = np.minimum(a[:, None, 0] + a[:, None, 2], b[None, :, 0] + b[None, :, 2]) - \
        np.maximum(a[:, None, 0], b[None, :, 0])
    iy = np.minimum(a[:, None, 1] + a[:, None, 3], b[None, :, 1] + b[None, :, 3]) - \
        np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    union = (a[:, 2] * a[:, 3])[:, None] + (b[:, 2] * b[:, 3])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return out


def greedy_match(pred_boxes, gt_boxes, min_iou: float = 0.0) -> list[tuple[int, int, float]]:
    """One-to-one matching by descending IoU; pairs need IoU > ``min_iou``."""
    m = iou_matrix(pred_boxes, gt_boxes)
    if m.size == 0:
        return []
    pi, gi = np.nonzero(m > min_iou)
    order = np.lexsort((gi, pi, -m[pi, gi]))
    used_p, used_g, pairs = set(), set(), []
    for k in order:
        p, g = int(pi[k]), int(gi[k])
        if p in used_p or g in used_g:
            continue
        used_p.add(p)
        used_g.add(g)
        pairs.append((p, g, float(m[p, g])))
    return pairs


class PRF(NamedTuple):
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


def f1_score(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def _frame_pairs(rows, gt):
    pf, gf = by_frame(rows), by_frame(gt)
    for k in sorted(set(pf) | set(gf)):
        p, g = pf.get(k, []), gf.get(k, [])
        yield k, p, g, greedy_match([r.box for r in p], [r.box for r in g])


def detection_f1(rows, gt, iou_th: float) -> PRF:
    """Pooled precision/recall over the recording; a matched pair counts as a
    true positive when its IoU exceeds ``iou_th``."""
    return f1_curve(rows, gt, [iou_th])[0]


def f1_curve(rows, gt, thresholds=IOU_THRESHOLDS) -> list[PRF]:
    if len(gt) == 0:
        raise ValueError("empty ground truth: recall is undefined")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    n_pred, n_gt = len(rows), len(gt)
    ious = [v for *_, pairs in _frame_pairs(rows, gt) for (_, _, v) in pairs]
    ious = np.asarray(ious)
    out = []
    for th in thresholds:
        tp = int(np.count_nonzero(ious > th))
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_gt
        out.append(PRF(prec, rec, f1_score(prec, rec), tp, n_pred - tp, n_gt - tp))
    return out


def f1_auc(f1s, thresholds=IOU_THRESHOLDS) -> float:
    """Trapezoidal area under an F1-vs-IoU threshold curve."""
    return float(np.trapezoid(np.asarray(f1s, dtype=np.float64), np.asarray(thresholds)))


def weighted_f1(f1s, counts) -> float:
    """Track-count weighted mean of per-recording F1 scores."""
    f1s = np.asarray(f1s, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if len(f1s) == 0 or counts.sum() <= 0:
        raise ValueError("weighted F1 needs at least one recording with tracks")
    return float((counts * f1s).sum() / counts.sum())


def longest_matches(rows, gt) -> dict[int, int | None]:
    """For each GT track, the predicted track overlapping it (IoU > 0) in the
    most frames; ties go to the lowest track id."""
    pf = by_frame(rows)
    out = {}
    for gid, grows in by_track(gt).items():
        votes = Counter()
        for g in grows:
            for r in pf.get(g.frame_idx, []):
                if iou(r.box, g.box) > 0:
                    votes[r.track_id] += 1
        out[gid] = min(votes, key=lambda t: (-votes[t], t)) if votes else None
    return out


def eao(rows, gt) -> float:
    """Expected average overlap against each GT track's longest matching
    track; frames where that track is absent score zero."""
    gtracks = by_track(gt)
    if not gtracks:
        raise ValueError("no ground-truth tracks")
    matches = longest_matches(rows, gt)
    ptracks = by_track(rows)
    per_track = []
    for gid, grows in gtracks.items():
        pid = matches[gid]
        pboxes = {r.frame_idx: r.box for r in ptracks.get(pid, [])} if pid is not None else {}
        per_track.append(np.mean([iou(pboxes[g.frame_idx], g.box) if g.frame_idx in pboxes else 0.0
                                  for g in grows]))
    return float(np.mean(per_track))


def mode_class(classes) -> int:
    """Statistical mode, ties to the smaller class id; empty -> unknown."""
    votes = Counter(c for c in classes if c != UNKNOWN_CLASS)
    if not votes:
        return UNKNOWN_CLASS
    return min(votes, key=lambda c: (-votes[c], c))


class Accuracy(NamedTuple):
    balanced: float
    unbalanced: float
    per_class: dict
    n: int


def accuracy(true, pred, n_classes: int | None = None) -> Accuracy:
    true = np.asarray(true, dtype=int)
    pred = np.asarray(pred, dtype=int)
    if len(true) == 0:
        return Accuracy(float("nan"), float("nan"), {}, 0)
    per_class = {int(c): float(np.mean(pred[true == c] == c)) for c in np.unique(true)}
    stray = set(np.unique(pred).tolist()) - set(per_class) - {UNKNOWN_CLASS}
    if stray:
        warnings.warn(f"predicted classes {sorted(stray)} absent from ground truth; "
                      "excluded from the balanced mean", stacklevel=2)
    return Accuracy(float(np.mean(list(per_class.values()))), float(np.mean(true == pred)),
                    per_class, len(true))


@dataclass
class ClassificationReport:
    per_sample: Accuracy
    per_track: Accuracy
    confusion: np.ndarray  # rows: GT class, cols: predicted class, last col = unknown


def classification_report(rows, gt, n_classes: int = 5, track_classes: dict | None = None,
                          min_iou: float = 0.0) -> ClassificationReport:
    """Per-sample accuracy over per-frame matched (row, GT) pairs (occluded
    rows excluded) and per-track accuracy of each predicted track's class
    (``track_classes`` or the mode of its rows) against the GT track it
    overlaps most often."""
    s_true, s_pred = [], []
    p_gt = {}  # predicted track -> Counter of GT track ids
    g_cls = {}
    for _, p, g, pairs in _frame_pairs(rows, gt):
        for pi, gi, v in pairs:
            if v <= min_iou:
                continue
            r, a = p[pi], g[gi]
            g_cls[a.track_id] = a.class_id
            p_gt.setdefault(r.track_id, Counter())[a.track_id] += 1
            if not r.occluded:
                s_true.append(a.class_id)
                s_pred.append(r.class_id)
    if track_classes is None:
        track_classes = {tid: mode_class(r.class_id for r in trs if not r.occluded)
                         for tid, trs in by_track(rows).items()}
    t_true, t_pred = [], []
    for tid, votes in sorted(p_gt.items()):
        gid = min(votes, key=lambda k: (-votes[k], k))
        t_true.append(g_cls[gid])
        t_pred.append(track_classes.get(tid, UNKNOWN_CLASS))
    conf = np.zeros((n_classes, n_classes + 1), dtype=int)
    for t, q in zip(s_true, s_pred):
        conf[t, q if q != UNKNOWN_CLASS else n_classes] += 1
    return ClassificationReport(accuracy(s_true, s_pred), accuracy(t_true, t_pred), conf)


@dataclass
class MetricReport:
    recording: str
    thresholds: list
    precision: list
    recall: list
    f1: list
    auc: float
    eao: float
    n_tracks: int
    classification: ClassificationReport | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "recording": self.recording,
            "thresholds": [float(t) for t in self.thresholds],
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "auc": self.auc, "eao": self.eao, "n_tracks": self.n_tracks,
        }
        if self.classification is not None:
            c = self.classification
            d["classification"] = {
                "per_sample": {"balanced": c.per_sample.balanced, "unbalanced": c.per_sample.unbalanced,
                               "n": c.per_sample.n},
                "per_track": {"balanced": c.per_track.balanced, "unbalanced": c.per_track.unbalanced,
                              "n": c.per_track.n},
                "confusion": c.confusion.tolist(),
            }
        d.update(self.extra)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def csv_rows(self) -> list[str]:
        return [f"{self.recording},{t:.1f},{p:.6f},{r:.6f},{f:.6f}"
                for t, p, r, f in zip(self.thresholds, self.precision, self.recall, self.f1)]


CSV_HEADER = "recording,iou_th,precision,recall,f1"


def evaluate(rows, gt, recording: str = "rec", n_classes: int = 5,
             track_classes: dict | None = None, classify: bool = True) -> MetricReport:
    curve = f1_curve(rows, gt)
    f1s = [c.f1 for c in curve]
    return MetricReport(
        recording, IOU_THRESHOLDS.tolist(), [c.precision for c in curve],
        [c.recall for c in curve], f1s, f1_auc(f1s), eao(rows, gt), len(by_track(gt)),
        classification_report(rows, gt, n_classes, track_classes) if classify else None)
