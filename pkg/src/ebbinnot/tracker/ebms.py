"""Event-based mean-shift cluster tracker (baseline).

Every event is assigned to the nearest live cluster whose centre lies within
``max_radius``; otherwise it seeds a new candidate cluster.  Centres follow
the events through an exponential blend, a cluster becomes visible after
``min_events`` events and expires after ``timeout`` without support.  Cluster
boxes are sampled into track rows at every frame boundary.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .. import cost
from ..framegen import DEFAULT_FRAME_US
from ..regionprop import BoundingBox
from ..tracklog import UNKNOWN_CLASS, TrackRow


@dataclass
class EBMSConfig:
    max_radius: float = 130.0
    min_events: int = 8
    timeout: int = 100_000        # us
    blend: float = 0.02
    shrink: float = 0.002         # per-event shrink of the support extent
    merge_distance: float = 10.0  # centres closer than this merge
    max_clusters: int = 8
    history: int = 10
    A: int = 240
    B: int = 180


@dataclass
class Cluster:
    id: int
    cx: float
    cy: float
    hx: float = 1.0
    hy: float = 1.0
    n_events: int = 0
    last_t: int = 0
    visible: bool = False
    track_id: int | None = None
    centres: deque = field(default_factory=lambda: deque(maxlen=10))
    vel: tuple = (0.0, 0.0)

    def box(self, A: int, B: int) -> BoundingBox:
        return BoundingBox(self.cx - self.hx, self.cy - self.hy, 2 * self.hx, 2 * self.hy).clipped(A, B)


def lsq_velocity(times, xs) -> float:
    """Slope of the least-squares line through (t, x)."""
    if len(times) < 2:
        return 0.0
    return float(np.polyfit(np.asarray(times, dtype=np.float64), np.asarray(xs, dtype=np.float64), 1)[0])


class EBMSTracker:
    def __init__(self, config: EBMSConfig = EBMSConfig(), counters: cost.OpCounters | None = None):
        self.cfg = config
        self.clusters: list[Cluster] = []
        self.counters = counters if counters is not None else cost.OpCounters()
        self.next_cluster = 0
        self.next_track = 0

    def _expire(self, t: int) -> None:
        self.clusters = [c for c in self.clusters if t - c.last_t <= self.cfg.timeout]

    def step(self, t: int, x: int, y: int) -> None:
        """Process one event."""
        cfg, tally = self.cfg, self.counters.tally
        self._expire(t)
        n_cl = len(self.clusters)
        merge_checked = n_cl >= 2
        tally("ebms.events")
        tally("ebms.clusters_seen", n_cl)
        tally("ebms.clusters_sq", n_cl * n_cl)
        if merge_checked:
            tally("ebms.merge_clusters", n_cl)
        self.counters.add("ebms", cost.ebms_event_ops(n_cl, merge_checked))

        best, best_d = None, np.inf
        for c in self.clusters:
            d = np.hypot(x - c.cx, y - c.cy)
            if d < best_d:
                best, best_d = c, d
        if best is None or best_d > cfg.max_radius:
            if len(self.clusters) >= cfg.max_clusters:
                return
            best = Cluster(self.next_cluster, float(x), float(y), last_t=t,
                           centres=deque(maxlen=cfg.history))
            self.next_cluster += 1
            self.clusters.append(best)
        c = best
        c.cx += cfg.blend * (x - c.cx)
        c.cy += cfg.blend * (y - c.cy)
        c.hx = max(c.hx * (1 - cfg.shrink), abs(x - c.cx), 1.0)
        c.hy = max(c.hy * (1 - cfg.shrink), abs(y - c.cy), 1.0)
        c.n_events += 1
        c.last_t = t
        if not c.visible and c.n_events >= cfg.min_events:
            c.visible = True
            c.track_id = self.next_track
            self.next_track += 1
        if merge_checked:
            for o in self.clusters:
                if o is not c and np.hypot(o.cx - c.cx, o.cy - c.cy) < cfg.merge_distance:
                    keep, drop = (o, c) if o.id < c.id else (c, o)
                    w = keep.n_events / (keep.n_events + drop.n_events)
                    keep.cx = w * keep.cx + (1 - w) * drop.cx
                    keep.cy = w * keep.cy + (1 - w) * drop.cy
                    keep.hx, keep.hy = max(keep.hx, drop.hx), max(keep.hy, drop.hy)
                    keep.n_events += drop.n_events
                    keep.last_t = max(keep.last_t, drop.last_t)
                    if not keep.visible and drop.visible:
                        keep.visible, keep.track_id = True, drop.track_id
                    self.clusters.remove(drop)
                    break

    def sample(self, frame_idx: int, t: int) -> list[TrackRow]:
        """Rows for the visible clusters at frame boundary ``t``."""
        self._expire(t)
        rows = []
        for c in self.clusters:
            c.centres.append((t, c.cx, c.cy))
            ts = [p[0] for p in c.centres]
            c.vel = (lsq_velocity(ts, [p[1] for p in c.centres]), lsq_velocity(ts, [p[2] for p in c.centres]))
            if c.visible:
                b = c.box(self.cfg.A, self.cfg.B)
                if b.w > 0 and b.h > 0:
                    rows.append(TrackRow(frame_idx, c.track_id, UNKNOWN_CLASS, b))
        return rows


def run_ebms(stream, config: EBMSConfig | None = None, t_F: int = DEFAULT_FRAME_US,
             start: int | None = None, n_frames: int | None = None, counters=None) -> list[TrackRow]:
    """Track an event stream; rows are sampled at the end of each frame
    window so they share the frame index grid with the frame pipeline."""
    if config is None:
        config = EBMSConfig(A=stream.geometry.A, B=stream.geometry.B)
    tr = EBMSTracker(config, counters)
    ev = stream.events
    if start is None:
        start = (int(ev["t"][0]) // t_F) * t_F if len(ev) else 0
    if n_frames is None:
        n_frames = (int(ev["t"][-1]) - start) // t_F + 1 if len(ev) else 0
    rows = []
    ts, xs, ys = ev["t"].tolist(), ev["x"].tolist(), ev["y"].tolist()
    i = 0
    for k in range(n_frames):
        end = start + (k + 1) * t_F
        while i < len(ts) and ts[i] < end:
            if ts[i] >= start:
                tr.step(ts[i], xs[i], ys[i])
            i += 1
        rows.extend(tr.sample(k, end))
    return rows
