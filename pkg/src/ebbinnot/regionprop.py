"""Region proposals on the downsized, median-filtered 1B1C frame.

``ccl_rp`` is a two-pass 8-connected component labelling with union-find
equivalences and bounding-box corners maintained during both raster scans.
``hist_rp`` is the 1-D projection baseline.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

# per active pixel: 4 neighbour compares + 1 label write + 4 corner updates
# (first pass) + 1 root lookup + 4 corner merges (second pass)
CCL_OPS_PER_ACTIVE = 14


class BoundingBox(NamedTuple):
    x: float
    y: float
    w: float
    h: float

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def scaled(self, s1: int, s2: int) -> "BoundingBox":
        return BoundingBox(self.x * s1, self.y * s2, self.w * s1, self.h * s2)

    def clipped(self, width: int, height: int) -> "BoundingBox":
        x = min(max(self.x, 0.0), width - 1)
        y = min(max(self.y, 0.0), height - 1)
        x2 = min(max(self.x2, x), width)
        y2 = min(max(self.y2, y), height)
        return BoundingBox(x, y, x2 - x, y2 - y)


def enclosing_box(boxes) -> BoundingBox:
    boxes = list(boxes)
    x = min(b.x for b in boxes)
    y = min(b.y for b in boxes)
    x2 = max(b.x2 for b in boxes)
    y2 = max(b.y2 for b in boxes)
    return BoundingBox(x, y, x2 - x, y2 - y)


class RegionProposal(NamedTuple):
    box: BoundingBox  # full-resolution coordinates
    pixel_count: int  # active downsized pixels in the component


class Components(NamedTuple):
    labels: np.ndarray    # int32 label image, 0 = background, 1..n components
    boxes: list           # BoundingBox per component (downsized coords), label order
    counts: list          # active pixel count per component
    ops: int              # instrumented operation count (excluding downsizing)


def _find(parent: list, a: int) -> int:
    root = a
    while parent[root] != root:
        root = parent[root]
    while parent[a] != root:
        parent[a], a = root, parent[a]
    return root


def label_components(frame: np.ndarray) -> Components:
    """Two-pass 8-connectivity labelling.

    Pass one assigns provisional labels from the W, NW, N, NE neighbours,
    records equivalences in a union-find forest and grows each provisional
    label's box; pass two resolves every pixel to its root and merges the
    provisional boxes into their root's box.
    """
    img = np.asarray(frame, dtype=bool)
    H, W = img.shape
    capacity = math.ceil(H * W / 2) + 1
    labels = np.zeros((H + 1, W + 2), dtype=np.int32)  # guard row on top, guard cols
    parent = [0]
    # provisional box corners: x_min, y_min, x_max, y_max
    x_min, y_min, x_max, y_max = [0], [0], [0], [0]
    ys, xs = np.nonzero(img)
    n_active = len(ys)
    lab = labels
    for y, x in zip(ys.tolist(), xs.tolist()):
        r, c = y + 1, x + 1
        nbrs = [v for v in (lab[r, c - 1], lab[r - 1, c - 1], lab[r - 1, c], lab[r - 1, c + 1]) if v]
        if not nbrs:
            cur = len(parent)
            if cur >= capacity:
                raise RuntimeError("label capacity exceeded")
            parent.append(cur)
            x_min.append(x); y_min.append(y); x_max.append(x); y_max.append(y)
        else:
            cur = int(min(nbrs))
            for v in nbrs:
                if v != cur:
                    ra, rb = _find(parent, cur), _find(parent, int(v))
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
            if x < x_min[cur]:
                x_min[cur] = x
            if x > x_max[cur]:
                x_max[cur] = x
            if y > y_max[cur]:
                y_max[cur] = y
        lab[r, c] = cur

    # second pass: resolve roots, merge corner records, compact the label ids
    n_prov = len(parent)
    final = [0] * n_prov
    boxes, counts = [], []
    corners = []
    for p in range(1, n_prov):
        root = _find(parent, p)
        if root == p:
            final[p] = len(corners) + 1
            corners.append([x_min[p], y_min[p], x_max[p], y_max[p]])
            counts.append(0)
    for p in range(1, n_prov):
        root = _find(parent, p)
        if root != p:
            c = corners[final[root] - 1]
            c[0] = min(c[0], x_min[p]); c[1] = min(c[1], y_min[p])
            c[2] = max(c[2], x_max[p]); c[3] = max(c[3], y_max[p])
            final[p] = final[root]
    out = np.zeros((H, W), dtype=np.int32)
    if n_active:
        lut = np.asarray(final, dtype=np.int32)
        out = lut[labels[1:, 1:W + 1]]
        counts = np.bincount(out.ravel(), minlength=len(corners) + 1)[1:].tolist()
    boxes = [BoundingBox(c[0], c[1], c[2] - c[0] + 1, c[3] - c[1] + 1) for c in corners]
    return Components(out, boxes, counts, n_active * CCL_OPS_PER_ACTIVE)


def _cap(proposals: list, max_rp: int, key) -> list:
    proposals = sorted(proposals, key=key)
    return proposals[:max(max_rp, 0)]


def component_proposals(comps: Components, s1: int, s2: int, max_rp: int) -> list[RegionProposal]:
    """Scale component boxes to full resolution and keep the ``max_rp``
    largest components (ties: topmost, then leftmost)."""
    rps = [RegionProposal(b.scaled(s1, s2), n) for b, n in zip(comps.boxes, comps.counts)]
    return _cap(rps, max_rp, key=lambda rp: (-rp.pixel_count, rp.box.y, rp.box.x))


def ccl_rp(frame: np.ndarray, s1: int = 6, s2: int = 3, max_rp: int = 8) -> list[RegionProposal]:
    """Connected-component region proposals on an already downsized frame,
    scaled to full resolution and capped to the ``max_rp`` largest."""
    return component_proposals(label_components(frame), s1, s2, max_rp)


def _runs(hist: np.ndarray, threshold: int) -> list[tuple[int, int]]:
    on = np.concatenate([[False], hist >= threshold, [False]])
    edges = np.flatnonzero(np.diff(on.astype(np.int8)))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def hist_rp(frame: np.ndarray, s1: int = 6, s2: int = 3, threshold: int = 1,
            max_rp: int = 8) -> list[RegionProposal]:
    """Histogram proposals: runs of the column and row activity histograms,
    crossed into boxes; only crossings containing activity are kept, largest
    boxes first."""
    img = np.asarray(frame, dtype=bool)
    xs = _runs(img.sum(axis=0), threshold)
    ys = _runs(img.sum(axis=1), threshold)
    rps = []
    for y0, y1 in ys:
        for x0, x1 in xs:
            n = int(np.count_nonzero(img[y0:y1, x0:x1]))
            if n:
                rps.append(RegionProposal(BoundingBox(x0, y0, x1 - x0, y1 - y0).scaled(s1, s2), n))
    return _cap(rps, max_rp, key=lambda rp: (-rp.box.area, rp.box.y, rp.box.x))


class ActivePixelFactor(NamedTuple):
    alpha: float   # weighted active-pixel factor used by the CCL cost model
    ratio: float   # raw fraction of active pixels


def active_pixel_factor(frame: np.ndarray, weight: float = CCL_OPS_PER_ACTIVE) -> ActivePixelFactor:
    img = np.asarray(frame, dtype=bool)
    ratio = np.count_nonzero(img) / img.size if img.size else 0.0
    return ActivePixelFactor(ratio * weight, ratio)


def write_proposals_csv(path, rows) -> None:
    """``rows``: iterable of (frame_idx, RegionProposal)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("frame_idx,x,y,w,h,pixel_count\n")
        for k, rp in rows:
            b = rp.box
            fh.write(f"{k},{b.x:g},{b.y:g},{b.w:g},{b.h:g},{rp.pixel_count}\n")
