"""Synthetic stationary-sensor traffic scenes with exact ground truth.

Objects are axis-aligned boxes moving horizontally at constant speed.  The
simulation runs on 1 ms ticks.  While an object moves, the pixels of its
leading edge band fire ON events and those of its trailing band fire OFF
events (brightness change where the object arrives / leaves), interior
pixels fire sparse events of either polarity, and uniform background noise
is added everywhere.  Counts per tick are Poisson; a tick's events are
spread uniformly over the tick's microseconds.

Rates are per pixel per second: ``edge_event_rate`` applies to each pixel
of an edge band while the object is moving, ``interior_event_rate`` to each
interior pixel of a moving object and ``noise_rate`` to every sensor pixel.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .events import EVENT_DTYPE, OFF, ON, EventStream, SensorGeometry
from .framegen import DEFAULT_FRAME_US
from .regionprop import BoundingBox
from .tracklog import TrackRow

# mean object sizes (w, h) in pixels at the reference site, by class id
CLASS_SIZES = {1: (16, 42), 2: (31, 94), 3: (15, 21), 4: (22, 50)}
TICK_US = 1000


@dataclass
class ObjectSpec:
    class_id: int
    size: tuple = (16, 42)
    entry_time: float = 0.0     # s
    entry_x: float = 0.0        # left edge at entry_time, px
    velocity: float = 75.0      # px/s, sign gives direction
    lane_y: float = 60.0        # top edge, px

    def box_at(self, t: float) -> BoundingBox:
        """Exact box at time ``t`` (seconds); before entry the object sits at
        its entry position."""
        dt = max(t - self.entry_time, 0.0)
        return BoundingBox(self.entry_x + self.velocity * dt, self.lane_y, *self.size)


@dataclass
class SceneSpec:
    width: int = 240
    height: int = 180
    duration: float = 10.0       # s
    objects: list = field(default_factory=list)
    edge_event_rate: float = 30.0
    interior_event_rate: float = 3.0
    noise_rate: float = 0.05
    edge_width: int = 2          # px depth of each edge band
    visibility: float = 0.5      # in-frame area fraction for a GT row
    t_frame: int = DEFAULT_FRAME_US
    seed: int = 0

    def __post_init__(self):
        for name in ("edge_event_rate", "interior_event_rate", "noise_rate", "duration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("invalid geometry")

    @property
    def geometry(self) -> SensorGeometry:
        return SensorGeometry(self.width, self.height)


def _edge_bands(box: BoundingBox, velocity: float, edge_width: int):
    """(leading, trailing) column ranges [x0, x1) of the edge bands."""
    x0, x1 = math.floor(box.x), math.floor(box.x + box.w)
    ew = max(1, min(edge_width, x1 - x0))
    front_right = ((x1 - ew, x1), (x0, x0 + ew))
    return front_right if velocity > 0 else (front_right[1], front_right[0])


def _sample_region(rng, lam_per_px: float, cols, rows, W: int, H: int):
    """Poisson events over the pixels [c0,c1) x [r0,r1) clipped to the frame."""
    c0, c1 = max(cols[0], 0), min(cols[1], W)
    r0, r1 = max(rows[0], 0), min(rows[1], H)
    if c1 <= c0 or r1 <= r0 or lam_per_px <= 0:
        return np.zeros(0, int), np.zeros(0, int)
    n_pix = (c1 - c0) * (r1 - r0)
    k = rng.poisson(lam_per_px * n_pix)
    if k == 0:
        return np.zeros(0, int), np.zeros(0, int)
    idx = rng.integers(0, n_pix, size=k)
    return c0 + idx % (c1 - c0), r0 + idx // (c1 - c0)


def expected_event_count(scene: SceneSpec) -> float:
    """Analytic mean event count of :func:`generate` (same tick grid)."""
    W, H = scene.width, scene.height
    dt = TICK_US / 1e6
    n_ticks = int(round(scene.duration * 1e6 / TICK_US))
    total = scene.noise_rate * W * H * n_ticks * dt
    for k in range(n_ticks):
        t = k * dt
        for ob in scene.objects:
            if ob.velocity == 0 or t < ob.entry_time:
                continue
            box = ob.box_at(t)
            r0, r1 = math.floor(box.y), math.floor(box.y + box.h)
            rows = max(0, min(r1, H) - max(r0, 0))
            for cols in _edge_bands(box, ob.velocity, scene.edge_width):
                c = max(0, min(cols[1], W) - max(cols[0], 0))
                total += scene.edge_event_rate * dt * c * rows
            inner = (math.floor(box.x) + scene.edge_width, math.floor(box.x + box.w) - scene.edge_width)
            c = max(0, min(inner[1], W) - max(inner[0], 0))
            total += scene.interior_event_rate * dt * c * rows
    return total


def generate(scene: SceneSpec) -> tuple[EventStream, list[TrackRow]]:
    """Simulate ``scene``; returns the event stream and per-frame GT rows
    (track id = object index)."""
    rng = np.random.default_rng(scene.seed)
    W, H = scene.width, scene.height
    dt = TICK_US / 1e6
    n_ticks = int(round(scene.duration * 1e6 / TICK_US))
    chunks = []
    for k in range(n_ticks):
        t_us = k * TICK_US
        t = k * dt
        xs, ys, ps = [], [], []
        for ob in scene.objects:
            if ob.velocity == 0 or t < ob.entry_time:
                continue
            box = ob.box_at(t)
            if box.x >= W or box.x + box.w <= 0:
                continue
            rows = (math.floor(box.y), math.floor(box.y + box.h))
            lead, trail = _edge_bands(box, ob.velocity, scene.edge_width)
            for cols, pol in ((lead, ON), (trail, OFF)):
                x, y = _sample_region(rng, scene.edge_event_rate * dt, cols, rows, W, H)
                xs.append(x), ys.append(y), ps.append(np.full(len(x), pol))
            inner = (math.floor(box.x) + scene.edge_width, math.floor(box.x + box.w) - scene.edge_width)
            x, y = _sample_region(rng, scene.interior_event_rate * dt, inner, rows, W, H)
            xs.append(x), ys.append(y), ps.append(rng.integers(0, 2, len(x)))
        x, y = _sample_region(rng, scene.noise_rate * dt, (0, W), (0, H), W, H)
        xs.append(x), ys.append(y), ps.append(rng.integers(0, 2, len(x)))
        x = np.concatenate(xs)
        if len(x) == 0:
            continue
        ev = np.zeros(len(x), EVENT_DTYPE)
        ev["x"], ev["y"], ev["p"] = x, np.concatenate(ys), np.concatenate(ps)
        ev["t"] = t_us + rng.integers(0, TICK_US, len(x))
        chunks.append(ev)
    events = np.concatenate(chunks) if chunks else np.zeros(0, EVENT_DTYPE)
    events = events[np.argsort(events["t"], kind="stable")]
    return EventStream(scene.geometry, events), annotations(scene)


def annotations(scene: SceneSpec) -> list[TrackRow]:
    """GT rows: frame k is annotated with each object's box at the end of
    its window, (k+1)*t_F, while at least ``visibility`` of it is in frame."""
    W, H = scene.width, scene.height
    n_frames = int(scene.duration * 1e6 // scene.t_frame)
    rows = []
    for k in range(n_frames):
        t = (k + 1) * scene.t_frame / 1e6
        for i, ob in enumerate(scene.objects):
            if t < ob.entry_time:
                continue
            box = ob.box_at(t)
            inside = box.clipped(W, H)
            if box.area <= 0 or inside.area < scene.visibility * box.area:
                continue
            rows.append(TrackRow(k, i, ob.class_id, inside))
    return rows


# ---------------------------------------------------------------------------
# scene builders
# ---------------------------------------------------------------------------

def occlusion_scene(seed: int = 0, duration: float = 5.0, **kw) -> SceneSpec:
    """Two vehicles in opposing lanes whose boxes overlap for several frames
    mid-recording; speed, class and lane offset vary with ``seed``."""
    rng = np.random.default_rng(seed)
    W, H = kw.get("width", 240), kw.get("height", 180)
    v1, v2 = rng.uniform(55, 75), rng.uniform(55, 75)
    c1, c2 = (int(c) for c in rng.choice([1, 4], size=2))
    s1, s2 = CLASS_SIZES[c1], CLASS_SIZES[c2]
    y1 = float(rng.integers(40, 60))
    y2 = y1 + float(rng.integers(10, 20))
    # choose entries so that both centres meet at the middle of the recording
    t_meet = duration / 2
    xm = W / 2 + float(rng.uniform(-10, 10))
    a = ObjectSpec(c1, s1, 0.0, xm - s1[0] / 2 - v1 * t_meet, v1, y1)
    b = ObjectSpec(c2, s2, 0.0, xm - s2[0] / 2 + v2 * t_meet, -v2, y2)
    return SceneSpec(width=W, height=H, duration=duration, objects=[a, b], seed=seed,
                     **{k: v for k, v in kw.items() if k not in ("width", "height")})


def random_scene(seed: int, duration: float = 20.0, rate: float = 0.5,
                 classes=(1, 2, 3, 4), width: int = 240, height: int = 180,
                 speed=(60.0, 130.0), margin: int = 4, lane_jitter: float = 60.0,
                 **kw) -> SceneSpec:
    """Random traffic: Poisson arrivals at ``rate`` vehicles/s on two
    opposing lanes, one near the top of the frame (moving right) and one
    near the bottom (moving left).  Each vehicle sits up to ``lane_jitter``
    pixels away from its lane's frame edge.  A vehicle enters a lane only
    when it cannot catch up with the previous one before leaving the frame,
    so same-lane boxes never overlap."""
    rng = np.random.default_rng(seed)
    # per direction: (time the last vehicle's tail cleared the entry side plus
    # a gap, its speed, time its tail leaves the frame)
    lanes = {+1: (-1.0, 0.0, -1.0), -1: (-1.0, 0.0, -1.0)}
    objects = []
    t = float(rng.exponential(1 / rate))
    while t < duration - 1.0:
        cls = int(rng.choice(classes))
        w, h = CLASS_SIZES[cls]
        v = float(rng.uniform(*speed))
        d = int(rng.choice([1, -1]))
        clear, prev_v, prev_exit = lanes[d]
        # a faster vehicle waits until the previous one has left the frame
        t_enter = max(t, clear if v <= prev_v else prev_exit)
        off = float(rng.uniform(0, lane_jitter))
        y = margin + off if d > 0 else max(height - h - margin - off, 0.0)
        enter_x = -w if d > 0 else width
        objects.append(ObjectSpec(cls, (w, h), t_enter, enter_x, d * v, float(y)))
        lanes[d] = (t_enter + (w + 12) / v, v, t_enter + (width + w) / v)
        t = max(t, t_enter) + float(rng.exponential(1 / rate))
    return SceneSpec(width=width, height=height, duration=duration, objects=objects, seed=seed, **kw)


# ---------------------------------------------------------------------------
# config I/O
# ---------------------------------------------------------------------------

_SCENE_KEYS = {f.name for f in fields(SceneSpec)} - {"objects"}
_OBJECT_KEYS = {"class_id", "size", "entry_time", "entry_x", "velocity", "lane_y"}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str):
    if key == "size":
        m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*[xX,]\s*(\d+(?:\.\d+)?)\s*", raw)
        if not m:
            raise ConfigError(f"size must look like WxH, got {raw!r}")
        return (float(m.group(1)), float(m.group(2)))
    if key in ("width", "height", "seed", "t_frame", "edge_width", "class_id"):
        return int(raw)
    return float(raw)


def parse_scene(text: str, source: str = "<scene>") -> SceneSpec:
    """``key = value`` lines; each ``[object]`` header starts an object
    block.  Unknown keys are errors."""
    scene_kv, objects, cur = {}, [], None
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[object]":
                raise ConfigError(f"{source}:{ln}: unknown section {line}")
            cur = {}
            objects.append(cur)
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        allowed = _OBJECT_KEYS if cur is not None else _SCENE_KEYS
        if key not in allowed:
            raise ConfigError(f"{source}:{ln}: unknown key {key!r}")
        try:
            (cur if cur is not None else scene_kv)[key] = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{source}:{ln}: {exc}") from None
    obs = []
    for o in objects:
        if "class_id" not in o:
            raise ConfigError(f"{source}: object block without class_id")
        o.setdefault("size", CLASS_SIZES.get(o["class_id"], (16, 42)))
        obs.append(ObjectSpec(**o))
    return SceneSpec(objects=obs, **scene_kv)


def read_scene(path) -> SceneSpec:
    return parse_scene(Path(path).read_text(), str(path))


def format_scene(scene: SceneSpec) -> str:
    lines = [f"{k} = {getattr(scene, k)}" for k in sorted(_SCENE_KEYS)]
    for o in scene.objects:
        lines += ["", "[object]", f"class_id = {o.class_id}", f"size = {o.size[0]:g}x{o.size[1]:g}",
                  f"entry_time = {o.entry_time!r}", f"entry_x = {o.entry_x!r}",
                  f"velocity = {o.velocity!r}", f"lane_y = {o.lane_y!r}"]
    return "\n".join(lines) + "\n"


def with_zero_velocity(scene: SceneSpec) -> SceneSpec:
    return replace(scene, objects=[replace(o, velocity=0.0) for o in scene.objects])
