"""Per-frame class from matched detections and per-track voting."""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..tracklog import UNKNOWN_CLASS


def frame_class(conf_vectors, background: int | None = 0) -> int:
    """Class of the single highest confidence across all matched detections'
    confidence vectors (the background entry is ignored)."""
    best, best_c = -np.inf, UNKNOWN_CLASS
    for vec in conf_vectors:
        vec = np.asarray(vec, dtype=np.float64)
        for c, v in enumerate(vec):
            if c == background:
                continue
            if v > best:
                best, best_c = v, c
    return best_c


class ClassVotes:
    """Running class tally of one track; occluded frames do not vote."""

    def __init__(self):
        self.votes = Counter()

    def add(self, class_id: int, occluded: bool = False) -> None:
        if occluded or class_id == UNKNOWN_CLASS:
            return
        self.votes[class_id] += 1

    def mode(self) -> int:
        if not self.votes:
            return UNKNOWN_CLASS
        return min(self.votes, key=lambda c: (-self.votes[c], c))


def assign_track_class(frame_classes, occluded=None) -> tuple[list[int], int]:
    """Per-frame classes (unchanged) and the track class: the mode over
    non-occluded frames, unknown when no frame can vote."""
    occluded = occluded if occluded is not None else [False] * len(frame_classes)
    v = ClassVotes()
    for c, o in zip(frame_classes, occluded):
        v.add(c, o)
    return list(frame_classes), v.mode()
