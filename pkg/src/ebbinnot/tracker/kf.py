"""Constant-velocity Kalman-filter tracker with Hungarian assignment.

State ``[cx, cy, vx, vy, w, h]``, measurement ``[cx, cy, w, h]``.  Unlike
OT there is no probation: an unassigned detection opens a track at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .. import cost
from ..eval import iou_matrix
from ..regionprop import BoundingBox
from ..tracklog import TrackRow
from .classes import ClassVotes, frame_class


@dataclass
class KFConfig:
    max_trackers: int = 8
    max_invisible: int = 5
    min_visibility: float = 0.6
    min_locked_frames: int = 3
    process_noise: tuple = (1.0, 1.0, 4.0, 4.0, 1.0, 1.0)
    measurement_noise: tuple = (4.0, 4.0, 4.0, 4.0)
    initial_cov: float = 10.0
    A: int = 240
    B: int = 180


F = np.eye(6)
F[0, 2] = F[1, 3] = 1.0
H = np.zeros((4, 6))
H[0, 0] = H[1, 1] = H[2, 4] = H[3, 5] = 1.0


@dataclass
class KFTrack:
    track_id: int
    x: np.ndarray
    P: np.ndarray
    invisible_frames: int = 0
    lifetime_frames: int = 1
    visible_frames: int = 1
    votes: ClassVotes = field(default_factory=ClassVotes)

    def box(self) -> np.ndarray:
        cx, cy, _, _, w, h = self.x
        return np.array([cx - w / 2, cy - h / 2, w, h])


def assign(track_boxes, det_boxes) -> list[tuple[int, int]]:
    """Minimum total (1 - IoU) pairing; pairs without any overlap are dropped."""
    track_boxes = np.asarray(track_boxes, dtype=np.float64).reshape(-1, 4)
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    if not len(track_boxes) or not len(det_boxes):
        return []
    ious = iou_matrix(track_boxes, det_boxes)
    rows, cols = linear_sum_assignment(1.0 - ious)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if ious[r, c] > 0]


def box_to_meas(box) -> np.ndarray:
    x, y, w, h = box
    return np.array([x + w / 2, y + h / 2, w, h], dtype=np.float64)


class KalmanTracker:
    def __init__(self, config: KFConfig = KFConfig(), counters: cost.OpCounters | None = None,
                 m: int = 6, n: int = 4):
        self.cfg = config
        self.Q = np.diag(config.process_noise)
        self.R = np.diag(config.measurement_noise)
        self.tracks: list[KFTrack] = []
        self.counters = counters if counters is not None else cost.OpCounters()
        self.next_track = 0
        self.frame = -1
        self.track_classes: dict[int, int] = {}
        # op charges follow the analytic model for this state/measurement size
        self.m, self.n = m, n

    def _ops(self, v) -> None:
        self.counters.add("kf", v)

    def _close(self, t: KFTrack) -> None:
        self.track_classes[t.track_id] = t.votes.mode()

    def step(self, detections) -> list[TrackRow]:
        cfg, tally = self.cfg, self.counters.tally
        m, n = self.m, self.n
        self.frame += 1
        dets = sorted(detections, key=lambda d: -d.bb_conf)[:cfg.max_trackers]
        dboxes = np.array([tuple(d.box) for d in dets], dtype=np.float64).reshape(-1, 4)

        # predict + cost rows for every live track
        for t in self.tracks:
            t.x = F @ t.x
            t.P = F @ t.P @ F.T + self.Q
        n_t, n_obj = len(self.tracks), len(dets)
        tally("kf.frames")
        tally("kf.tracks", n_t)
        tally("kf.objects", n_obj)
        self._ops(n_t * (cost.kf_predict_ops(m, n) + cost.kf_cost_ops(m, n)))
        ha = cost.hungarian_ops(n_obj)
        tally("kf.hungarian_ops", ha)
        self._ops(ha)

        pairs = assign([t.box() for t in self.tracks], dboxes)
        assigned_t = {r for r, _ in pairs}
        assigned_d = {c for _, c in pairs}

        out: list[TrackRow] = []
        for r, c in pairs:
            t = self.tracks[r]
            z = box_to_meas(dboxes[c])
            S = H @ t.P @ H.T + self.R
            K = t.P @ H.T @ np.linalg.inv(S)
            t.x = t.x + K @ (z - H @ t.x)
            t.P = (np.eye(6) - K @ H) @ t.P
            t.invisible_frames = 0
            t.visible_frames += 1
            t.lifetime_frames += 1
        tally("kf.assigned", len(pairs))
        self._ops(len(pairs) * cost.kf_correct_ops(m, n))

        n_unassigned = n_t - len(assigned_t)
        tally("kf.unassigned_tracks", n_unassigned)
        self._ops(n_unassigned * cost.KF_UPDATE_OPS)
        for i, t in enumerate(self.tracks):
            if i not in assigned_t:
                t.invisible_frames += 1
                t.lifetime_frames += 1

        for r, c in pairs:
            t = self.tracks[r]
            cls = frame_class([dets[c].class_conf])
            t.votes.add(cls)
            out.append(TrackRow(self.frame, t.track_id, cls,
                                BoundingBox(*t.box()).clipped(cfg.A, cfg.B)))

        keep = []
        for t in self.tracks:
            b = BoundingBox(*t.box()).clipped(cfg.A, cfg.B)
            dead = (t.invisible_frames > cfg.max_invisible
                    or (t.lifetime_frames >= cfg.min_locked_frames
                        and t.visible_frames / t.lifetime_frames < cfg.min_visibility)
                    or b.w <= 0 or b.h <= 0)
            if dead:
                self._close(t)
            else:
                keep.append(t)
        self.tracks = keep

        new = [c for c in range(n_obj) if c not in assigned_d]
        tally("kf.unassigned_dets", len(new))
        self._ops(len(new) * cost.KF_NEW_OPS)
        for c in new:
            if len(self.tracks) >= cfg.max_trackers:
                break
            z = box_to_meas(dboxes[c])
            x = np.array([z[0], z[1], 0.0, 0.0, z[2], z[3]])
            t = KFTrack(self.next_track, x, cfg.initial_cov * np.eye(6))
            self.next_track += 1
            cls = frame_class([dets[c].class_conf])
            t.votes.add(cls)
            self.tracks.append(t)
            out.append(TrackRow(self.frame, t.track_id, cls, BoundingBox(*dboxes[c]).clipped(cfg.A, cfg.B)))
        return out

    def finish(self) -> dict[int, int]:
        for t in self.tracks:
            self._close(t)
        return dict(self.track_classes)


def run_kf(frames_detections, config: KFConfig = KFConfig(), counters=None):
    tr = KalmanTracker(config, counters)
    rows = []
    for dets in frames_detections:
        rows.extend(tr.step(dets))
    return rows, tr.finish(), tr
