"""Overlap-based tracker (OT).

Each frame: extrapolate every active tracker with its constant velocity,
match predictions to detections by overlap area, seed probationary
(tracking-mode) trackers from unmatched detections, promote them to locked
on their next match, merge fragmented detections, and resolve one detection
touching several trackers either as a dynamic occlusion (the trackers coast)
or as fragmentation of one object (the eldest tracker survives).

Op accounting mirrors the analytic model in :mod:`ebbinnot.cost` branch by
branch, so the counter and the formula agree exactly when fed the tallies.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .. import cost
from ..regionprop import BoundingBox, enclosing_box
from ..tracklog import UNKNOWN_CLASS, TrackRow
from .classes import ClassVotes, frame_class

FREE, TRACKING, LOCKED = "free", "tracking", "locked"


@dataclass
class OTConfig:
    max_trackers: int = 8
    t_ov: float = 0.2
    n_occl: int = 2
    kappa_pos: float = 0.5
    kappa_vel: float = 0.5
    max_invisible: int = 5
    min_visibility: float = 0.6
    min_locked_frames: int = 3     # lifetime before the visibility ratio applies
    occl_min_rel_speed: float = 0.5  # px/frame; slower pairs are fragments, not crossings
    A: int = 240
    B: int = 180

    def __post_init__(self):
        for name in ("t_ov", "kappa_pos", "kappa_vel"):
            v = getattr(self, name)
            if not 0 <= v <= 1 or (name == "t_ov" and v == 0):
                raise ValueError(f"{name} must lie in (0, 1]" if name == "t_ov" else f"{name} must lie in [0, 1]")
        if self.max_trackers < 1 or self.n_occl < 1:
            raise ValueError("max_trackers and n_occl must be >= 1")


@dataclass
class TrackerSlot:
    id: int
    box: np.ndarray = field(default_factory=lambda: np.zeros(4))
    vel: np.ndarray = field(default_factory=lambda: np.zeros(2))
    mode: str = FREE
    track_count: int | None = None
    invisible_frames: int = 0
    lifetime_frames: int = 0
    visible_frames: int = 0
    seeded_frame: int = -1
    class_votes: ClassVotes = field(default_factory=ClassVotes)
    class_conf_best: np.ndarray | None = None

    def predicted(self, steps: int = 1) -> np.ndarray:
        p = self.box.copy()
        p[:2] += steps * self.vel
        return p

    def reset(self) -> None:
        self.__init__(self.id)


def overlap_area(a, b) -> float:
    iw = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    ih = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    return float(iw * ih) if iw > 0 and ih > 0 else 0.0


def overlaps(a, b, t_ov: float) -> bool:
    """Overlap above ``t_ov`` times the smaller of the two areas."""
    inter = overlap_area(a, b)
    return inter > 0 and inter > t_ov * min(a[2] * a[3], b[2] * b[3])


def clip_box(box, A: int, B: int) -> np.ndarray:
    b = BoundingBox(*box).clipped(A, B)
    return np.array(b, dtype=np.float64)


class OverlapTracker:
    def __init__(self, config: OTConfig = OTConfig(), counters: cost.OpCounters | None = None):
        self.cfg = config
        self.slots = [TrackerSlot(i) for i in range(config.max_trackers)]
        self.counters = counters if counters is not None else cost.OpCounters()
        self.next_track = 0
        self.frame = -1
        self.coasting: set[int] = set()    # slot ids inside an occlusion last frame
        self.track_classes: dict[int, int] = {}

    # -- helpers -----------------------------------------------------------
    def _ops(self, n: int) -> None:
        self.counters.add("ot", n)

    def active(self) -> list[TrackerSlot]:
        return [s for s in self.slots if s.mode != FREE]

    def snapshot(self) -> list[TrackerSlot]:
        return copy.deepcopy(self.slots)

    def _occluding(self, trackers: list[TrackerSlot]) -> bool:
        """True when the trackers' extrapolations overlap at each of the
        ``n_occl`` steps after this frame's prediction: two objects crossing
        each other.  A pair already coasting through an occlusion stays in it
        for as long as it shares a detection, since the merged blob outlasts
        the overlap of the extrapolated boxes near the end of a crossing.
        Only locked trackers take part: a freshly seeded one has no velocity
        estimate to extrapolate with."""
        for a_i in range(len(trackers)):
            for b_i in range(a_i + 1, len(trackers)):
                a, b = trackers[a_i], trackers[b_i]
                if a.mode != LOCKED or b.mode != LOCKED:
                    continue
                if np.hypot(*(a.vel - b.vel)) < self.cfg.occl_min_rel_speed:
                    continue  # moving together: fragments of one object
                if a.id in self.coasting and b.id in self.coasting:
                    return True
                if all(overlap_area(a.predicted(k), b.predicted(k)) > 0
                       for k in range(2, self.cfg.n_occl + 2)):
                    return True
        return False

    def _free(self, s: TrackerSlot) -> None:
        if s.track_count is not None:
            self.track_classes[s.track_count] = s.class_votes.mode()
        s.reset()

    # -- main step ---------------------------------------------------------
    def step(self, detections) -> list[TrackRow]:
        """Advance one frame with NMS-filtered ``detections`` (objects with
        ``box``, ``bb_conf`` and ``class_conf``).  Returns the rows emitted by
        locked trackers for this frame."""
        cfg, c, tally = self.cfg, self.counters, self.counters.tally
        self.frame += 1
        frame = self.frame
        dets = sorted(detections, key=lambda d: -d.bb_conf)[:cfg.max_trackers]
        dboxes = [np.array(tuple(d.box), dtype=np.float64) for d in dets]
        tally("ot.frames")
        self._ops(cost.OT_MISC)

        active = self.active()
        preds = {s.id: s.predicted() for s in active}
        n_locked = sum(s.mode == LOCKED for s in active)
        n_tracking = len(active) - n_locked

        # 1-2: overlap tests of every detection against every active tracker
        match = {s.id: [] for s in active}
        det_trackers = [[] for _ in dets]
        for j, db in enumerate(dboxes):
            tally("ot.objects")
            tally("ot.locked_seen", n_locked)
            tally("ot.tracking_seen", n_tracking)
            self._ops(cost.OT_LOCKED_TEST * n_locked + cost.OT_TRACKING_TEST * n_tracking + cost.OT_OBJECT)
            for s in active:
                if overlaps(preds[s.id], db, cfg.t_ov):
                    match[s.id].append(j)
                    det_trackers[j].append(s)

        # per-tracker branch: locked/tracking x matched/unmatched
        for s in active:
            k = (2 if match[s.id] else 1) + (0 if s.mode == LOCKED else 2)
            tally(f"ot.P{k}")
            self._ops(cost.OT_BRANCH[k - 1])

        # 5: detections touching several trackers
        coasting: set[int] = set()
        occluded: set[int] = set()
        freed: set[int] = set()
        extra: dict[int, list[int]] = {}
        for j, trs in enumerate(det_trackers):
            if not trs:
                continue
            tally("ot.matched_rp")
            self._ops(cost.OT_MATCHED)
            trs = [s for s in trs if s.id not in freed]
            if len(trs) < 2:
                continue
            if self._occluding(trs):
                tally("ot.P6")
                self._ops(cost.OT_OCCLUSION)
                for s in trs:
                    coasting.add(s.id)
                    if s.mode == LOCKED:
                        occluded.add(s.id)
            else:
                tally("ot.P7")
                self._ops(cost.OT_MULTI)
                eldest = min(trs, key=lambda s: (s.seeded_frame, s.id))
                for s in trs:
                    if s is not eldest and s.mode != FREE and s.id not in coasting:
                        extra.setdefault(eldest.id, []).extend(match[s.id])
                        freed.add(s.id)
                        if eldest.mode != LOCKED and s.mode == LOCKED:
                            # the surviving slot inherits the established identity
                            eldest.mode, eldest.track_count = LOCKED, s.track_count
                            eldest.class_votes = s.class_votes
                            s.track_count = None
                        self._free(s)

        rows: list[TrackRow] = []
        # 3-4: update surviving trackers
        for s in active:
            if s.id in freed or s.mode == FREE:
                continue
            pred = preds[s.id]
            mine = sorted(set(match[s.id]) | set(extra.get(s.id, [])))
            s.lifetime_frames += 1
            if s.id in coasting:
                s.box = clip_box(pred, cfg.A, cfg.B)  # velocity retained
                s.visible_frames += 1
                s.invisible_frames = 0
            elif mine:
                merged = np.array(enclosing_box(BoundingBox(*dboxes[j]) for j in mine))
                prev = s.box.copy()
                new = (1 - cfg.kappa_pos) * pred + cfg.kappa_pos * merged
                s.vel = (1 - cfg.kappa_vel) * s.vel + cfg.kappa_vel * (new[:2] - prev[:2])
                s.box = clip_box(new, cfg.A, cfg.B)
                s.visible_frames += 1
                s.invisible_frames = 0
                if s.mode == TRACKING and frame > s.seeded_frame:
                    s.mode = LOCKED
                    s.track_count = self.next_track
                    self.next_track += 1
            else:
                tally("ot.unmatched")
                self._ops(cost.OT_UNMATCHED)
                s.box = clip_box(pred, cfg.A, cfg.B)
                s.invisible_frames += 1
            if (s.invisible_frames > cfg.max_invisible
                    or (s.lifetime_frames >= cfg.min_locked_frames
                        and s.visible_frames / s.lifetime_frames < cfg.min_visibility)
                    or s.box[2] <= 0 or s.box[3] <= 0):
                self._free(s)
                continue
            if s.mode != LOCKED:
                continue
            is_occ = s.id in occluded
            if is_occ:
                rows.append(TrackRow(frame, s.track_count, s.class_votes.mode(), BoundingBox(*s.box), True))
            elif mine:
                cls = frame_class([dets[j].class_conf for j in mine])
                s.class_votes.add(cls)
                rows.append(TrackRow(frame, s.track_count, cls, BoundingBox(*s.box), False))
            self.track_classes[s.track_count] = s.class_votes.mode()

        self.coasting = {i for i in coasting if self.slots[i].mode != FREE}

        # 3: seed free slots from unmatched detections
        for j, trs in enumerate(det_trackers):
            if trs:
                continue
            slot = next((s for s in self.slots if s.mode == FREE), None)
            if slot is None:
                break
            tally("ot.P5")
            self._ops(cost.OT_BRANCH[4])
            slot.reset()
            slot.mode = TRACKING
            slot.box = clip_box(dboxes[j], cfg.A, cfg.B)
            slot.seeded_frame = frame
            slot.lifetime_frames = slot.visible_frames = 1
        return rows

    def finish(self) -> dict[int, int]:
        """Final class per track id (mode of its non-occluded votes)."""
        for s in self.slots:
            if s.track_count is not None:
                self.track_classes[s.track_count] = s.class_votes.mode()
        return dict(self.track_classes)


def run_ot(frames_detections, config: OTConfig = OTConfig(), counters=None):
    """Track a sequence of per-frame detection lists.  Returns (rows,
    track_classes, tracker)."""
    tr = OverlapTracker(config, counters)
    rows = []
    for dets in frames_detections:
        rows.extend(tr.step(dets))
    return rows, tr.finish(), tr


__all__ = ["OTConfig", "TrackerSlot", "OverlapTracker", "run_ot", "overlaps", "overlap_area",
           "FREE", "TRACKING", "LOCKED", "UNKNOWN_CLASS"]
