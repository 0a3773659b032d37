"""Per-frame box rows shared by ground-truth annotations and tracker output.

CSV schema: ``frame_idx,track_id,class_id,x,y,w,h[,occluded]``.  Ground
truth files omit the ``occluded`` column.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import NamedTuple

from .regionprop import BoundingBox

UNKNOWN_CLASS = -1


class TrackRow(NamedTuple):
    frame_idx: int
    track_id: int
    class_id: int
    box: BoundingBox
    occluded: bool = False


# ground-truth rows use the same record
Annotation = TrackRow


def _num(v: float) -> str:
    s = f"{float(v):.3f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def write_rows(path, rows, with_occluded: bool = True) -> None:
    header = "frame_idx,track_id,class_id,x,y,w,h" + (",occluded" if with_occluded else "")
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(header + "\n")
        for r in rows:
            b = r.box
            line = f"{r.frame_idx},{r.track_id},{r.class_id},{_num(b.x)},{_num(b.y)},{_num(b.w)},{_num(b.h)}"
            if with_occluded:
                line += f",{int(bool(r.occluded))}"
            fh.write(line + "\n")


def write_annotations(path, rows) -> None:
    write_rows(path, rows, with_occluded=False)


def read_rows(path) -> list[TrackRow]:
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            box = BoundingBox(float(rec["x"]), float(rec["y"]), float(rec["w"]), float(rec["h"]))
            occ = bool(int(rec.get("occluded") or 0))
            rows.append(TrackRow(int(rec["frame_idx"]), int(rec["track_id"]),
                                 int(rec["class_id"]), box, occ))
    return rows


read_annotations = read_rows


def by_frame(rows) -> dict[int, list[TrackRow]]:
    out = defaultdict(list)
    for r in rows:
        out[r.frame_idx].append(r)
    return out


def by_track(rows) -> dict[int, list[TrackRow]]:
    out = defaultdict(list)
    for r in rows:
        out[r.track_id].append(r)
    for v in out.values():
        v.sort(key=lambda r: r.frame_idx)
    return out
