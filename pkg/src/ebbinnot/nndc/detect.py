"""Anchor-based position correction and greedy non-maximal suppression."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..eval import iou
from ..regionprop import BoundingBox
from .network import CLASS_NAMES

BACKGROUND = 0


@dataclass
class AnchorSet:
    """Per-class prior (w, h), indexed by class id; row 0 is background."""
    sizes: np.ndarray
    names: tuple = CLASS_NAMES

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=np.float64).reshape(-1, 2)
        if np.any(self.sizes <= 0):
            raise ValueError("anchor sizes must be positive")

    def __len__(self) -> int:
        return len(self.sizes)

    def __getitem__(self, k: int) -> tuple[float, float]:
        w, h = self.sizes[k]
        return float(w), float(h)


def compute_anchors(annotations, n_classes: int = len(CLASS_NAMES),
                    names: tuple = CLASS_NAMES) -> AnchorSet:
    """Mean ground-truth (w, h) per object class.  The background row gets
    the global mean size so every argmax has a prior."""
    sums = np.zeros((n_classes, 2))
    counts = np.zeros(n_classes, dtype=int)
    for a in annotations:
        if a.class_id <= 0 or a.class_id >= n_classes:
            continue
        sums[a.class_id] += (a.box.w, a.box.h)
        counts[a.class_id] += 1
    for k in range(1, n_classes):
        if counts[k] == 0:
            raise ValueError(f"no ground-truth boxes for class {k} ({names[k]})")
    sizes = np.zeros((n_classes, 2))
    sizes[1:] = sums[1:] / counts[1:, None]
    sizes[0] = sums[1:].sum(axis=0) / counts[1:].sum()
    return AnchorSet(sizes, tuple(names))


def write_anchors(path, anchors: AnchorSet) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("class_id,class_name,w,h\n")
        for k, (w, h) in enumerate(anchors.sizes):
            fh.write(f"{k},{anchors.names[k]},{w:.6g},{h:.6g}\n")


def read_anchors(path) -> AnchorSet:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["class_id"]))
    if [int(r["class_id"]) for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: class ids must be 0..C-1")
    sizes = [(float(r["w"]), float(r["h"])) for r in rows]
    return AnchorSet(sizes, tuple(r["class_name"] for r in rows))


@dataclass
class Detection:
    class_conf: np.ndarray
    bb_conf: float
    t: np.ndarray
    box: BoundingBox
    class_id: int
    rp_box: BoundingBox | None = field(default=None, repr=False)


def corrected_boxes(t: np.ndarray, rp_xy: np.ndarray, anchor_wh: np.ndarray,
                    A: int, B: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised box correction.

    ``t`` (N, 4), ``rp_xy`` (N, 2), ``anchor_wh`` (N, 2).  Returns the
    corrected boxes (N, 4) and the unclipped values (for gradients).
    """
    raw = np.empty_like(t, dtype=np.float64)
    raw[:, 0] = np.tanh(t[:, 0]) * (A - 1) + rp_xy[:, 0]
    raw[:, 1] = np.tanh(t[:, 1]) * (B - 1) + rp_xy[:, 1]
    raw[:, 2] = anchor_wh[:, 0] * np.exp(t[:, 2])
    raw[:, 3] = anchor_wh[:, 1] * np.exp(t[:, 3])
    hi = np.array([A - 1, B - 1, A, B], dtype=np.float64)
    return np.clip(raw, 0.0, hi), raw


def correct_position(class_conf, bb_conf, t, rp_xy, anchors: AnchorSet, A: int, B: int,
                     thr: float = 0.1, reject_background: bool = True) -> Detection | None:
    """Apply the anchor correction to one raw network output.

    Returns ``None`` when the box is rejected (objectness below ``thr``, or
    the winning class is background and ``reject_background`` is set).
    """
    if bb_conf < thr:
        return None
    class_conf = np.asarray(class_conf, dtype=np.float64)
    j = int(np.argmax(class_conf))
    if reject_background and j == BACKGROUND:
        return None
    t = np.asarray(t, dtype=np.float64)
    box, _ = corrected_boxes(t[None], np.asarray(rp_xy, dtype=np.float64)[None],
                             np.asarray(anchors[j])[None], A, B)
    return Detection(class_conf, float(bb_conf), t, BoundingBox(*box[0].tolist()), j)


def nms(dets: list[Detection], thr_ns: float = 0.3) -> list[Detection]:
    """Greedy NMS: visit boxes by descending objectness and drop any box whose
    IoU with an already kept box exceeds ``thr_ns``."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i].bb_conf)
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(iou(d.box, k.box) <= thr_ns for k in kept):
            kept.append(d)
    return kept
