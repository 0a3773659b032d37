"""Address-event data model, file I/O and event-domain noise filters.

Events are held in a numpy structured array (``EVENT_DTYPE``) so that a
recording of millions of events stays compact and vectorisable.  Timestamps
are 64-bit microseconds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<i8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
# packed on-disk record: u64 t, u16 x, u16 y, u8 p
_BIN_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1")])
_BIN_MAGIC = b"EVT1"

OFF, ON = 0, 1


class EventFormatError(ValueError):
    """Raised when an event file cannot be parsed or violates the contract."""


class Event(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass(frozen=True)
class SensorGeometry:
    A: int  # width (columns)
    B: int  # height (rows)

    def __post_init__(self):
        if self.A < 1 or self.B < 1:
            raise ValueError(f"invalid sensor geometry {self.A}x{self.B}")

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (rows, cols) of a frame with this geometry."""
        return (self.B, self.A)


@dataclass
class EventStream:
    geometry: SensorGeometry
    events: np.ndarray = field(default_factory=lambda: np.zeros(0, EVENT_DTYPE))

    def __post_init__(self):
        self.events = np.asarray(self.events, dtype=EVENT_DTYPE)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self):
        for e in self.events:
            yield Event(int(e["t"]), int(e["x"]), int(e["y"]), int(e["p"]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.events, other.events)

    def select(self, mask: np.ndarray) -> "EventStream":
        return EventStream(self.geometry, self.events[mask])

    def validate(self) -> None:
        ev = self.events
        if len(ev) == 0:
            return
        bad = np.flatnonzero((ev["x"] >= self.geometry.A) | (ev["y"] >= self.geometry.B))
        if len(bad):
            e = ev[bad[0]]
            raise EventFormatError(
                f"event {bad[0]} out of bounds: x={e['x']}, y={e['y']} "
                f"for geometry {self.geometry.A}x{self.geometry.B}")
        if np.any(ev["p"] > 1):
            raise EventFormatError("polarity must be 0 or 1")
        if np.any(ev["t"] < 0):
            raise EventFormatError("negative timestamp")
        dec = np.flatnonzero(np.diff(ev["t"]) < 0)
        if len(dec):
            raise EventFormatError(f"decreasing timestamp at event {dec[0] + 1}")


def make_events(t, x, y, p) -> np.ndarray:
    """Build an ``EVENT_DTYPE`` array from column sequences."""
    t = np.asarray(t, dtype=np.int64)
    ev = np.zeros(len(t), EVENT_DTYPE)
    ev["t"], ev["x"], ev["y"], ev["p"] = t, x, y, p
    return ev


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("csv", "bin"):
            raise ValueError(f"unknown event format {fmt!r}")
        return fmt
    return "bin" if path.suffix.lower() in (".bin", ".evt") else "csv"


def _finish(stream: EventStream, sort: bool) -> EventStream:
    ev = stream.events
    if sort and len(ev) and np.any(np.diff(ev["t"]) < 0):
        stream.events = ev[np.argsort(ev["t"], kind="stable")]
    stream.validate()
    return stream


def _read_csv(path: Path) -> EventStream:
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if not header.startswith("# geometry="):
            raise EventFormatError(f"{path}:1: missing '# geometry=<A>x<B>' header")
        try:
            a, b = header.split("=", 1)[1].lower().split("x")
            geometry = SensorGeometry(int(a), int(b))
        except ValueError as exc:
            raise EventFormatError(f"{path}:1: bad geometry header {header!r}") from exc
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise EventFormatError(f"{path}:{lineno}: expected 't,x,y,p', got {line!r}")
            try:
                t, x, y, p = (int(v) for v in parts)
            except ValueError as exc:
                raise EventFormatError(f"{path}:{lineno}: non-integer field in {line!r}") from exc
            if t < 0 or p not in (0, 1):
                raise EventFormatError(f"{path}:{lineno}: invalid t or p in {line!r}")
            if not (0 <= x < geometry.A) or not (0 <= y < geometry.B):
                raise EventFormatError(
                    f"{path}:{lineno}: out-of-bounds coordinate x={x}, y={y} "
                    f"for geometry {geometry.A}x{geometry.B}")
            rows.append((t, x, y, p))
    ev = np.array(rows, dtype=EVENT_DTYPE) if rows else np.zeros(0, EVENT_DTYPE)
    return EventStream(geometry, ev)


def _read_bin(path: Path) -> EventStream:
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != _BIN_MAGIC:
        raise EventFormatError(f"{path}: bad magic, expected {_BIN_MAGIC!r}")
    a, b = struct.unpack_from("<HH", raw, 4)
    body = raw[8:]
    if len(body) % _BIN_DTYPE.itemsize:
        raise EventFormatError(
            f"{path}: truncated record at byte offset "
            f"{8 + (len(body) // _BIN_DTYPE.itemsize) * _BIN_DTYPE.itemsize}")
    rec = np.frombuffer(body, dtype=_BIN_DTYPE)
    ev = np.zeros(len(rec), EVENT_DTYPE)
    for name in ("t", "x", "y", "p"):
        ev[name] = rec[name]
    return EventStream(SensorGeometry(a, b), ev)


def read_events(path, format: str | None = None, sort: bool = False) -> EventStream:
    """Read an event file.

    ``format`` is ``"csv"`` or ``"bin"`` (inferred from the suffix when
    omitted).  Decreasing timestamps are an error unless ``sort`` is set, in
    which case the events are stably sorted by time.
    """
    path = Path(path)
    fmt = _infer_format(path, format)
    stream = _read_bin(path) if fmt == "bin" else _read_csv(path)
    return _finish(stream, sort)


def write_events(stream: EventStream, path, format: str | None = None) -> None:
    path = Path(path)
    fmt = _infer_format(path, format)
    stream.validate()
    ev = stream.events
    g = stream.geometry
    if fmt == "bin":
        rec = np.zeros(len(ev), _BIN_DTYPE)
        for name in ("t", "x", "y", "p"):
            rec[name] = ev[name]
        with open(path, "wb") as fh:
            fh.write(_BIN_MAGIC + struct.pack("<HH", g.A, g.B))
            fh.write(rec.tobytes())
        return
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"# geometry={g.A}x{g.B}\n")
        if len(ev):
            body = np.column_stack([ev["t"], ev["x"].astype(np.int64),
                                    ev["y"].astype(np.int64), ev["p"].astype(np.int64)])
            np.savetxt(fh, body, fmt="%d", delimiter=",")


# ---------------------------------------------------------------------------
# filters
# ---------------------------------------------------------------------------

def refractory_filter(stream: EventStream, t_refr: int) -> EventStream:
    """Per-pixel dead time: drop events closer than ``t_refr`` µs to the
    previous *kept* event at the same pixel."""
    if t_refr <= 0:
        raise ValueError("t_refr must be positive")
    ev = stream.events
    A = stream.geometry.A
    last = {}
    keep = np.zeros(len(ev), dtype=bool)
    for i, (t, pix) in enumerate(zip(ev["t"].tolist(),
                                     (ev["y"].astype(np.int64) * A + ev["x"]).tolist())):
        prev = last.get(pix)
        if prev is None or t - prev >= t_refr:
            keep[i] = True
            last[pix] = t
    return stream.select(keep)


def nn_filter(stream: EventStream, t_corr: int = 5000, radius: int = 1) -> EventStream:
    """Nearest-neighbour (background-activity) filter.

    An event passes if any earlier event, of either polarity, hit the
    (2r+1)x(2r+1) neighbourhood (own pixel included) within the last
    ``t_corr`` µs.  Every event, passed or not, refreshes the timestamp map.
    """
    if t_corr <= 0:
        raise ValueError("t_corr must be positive")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    ev = stream.events
    g = stream.geometry
    r = radius
    # padded map so neighbourhood slices never go out of bounds
    never = np.iinfo(np.int64).min // 2
    ts = np.full((g.B + 2 * r, g.A + 2 * r), never, dtype=np.int64)
    keep = np.zeros(len(ev), dtype=bool)
    for i, (t, x, y) in enumerate(zip(ev["t"].tolist(), ev["x"].tolist(), ev["y"].tolist())):
        window = ts[y:y + 2 * r + 1, x:x + 2 * r + 1]
        if t - window.max() <= t_corr:
            keep[i] = True
        ts[y + r, x + r] = t
    return stream.select(keep)


def nn_filter_ops(n_events: int, radius: int = 1) -> int:
    """Operation count of :func:`nn_filter`: one compare per neighbourhood
    cell, one decision and one timestamp write per event."""
    return n_events * ((2 * radius + 1) ** 2 + 2)
