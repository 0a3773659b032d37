"""Event-based binary images (EBBI): temporal collapse, median filtering,
logical-OR downsizing and fixed-size patch extraction.

Frames are numpy ``bool`` arrays indexed ``[row, col]`` = ``[y, x]``.  A
1B2C frame is a ``(2, H, W)`` bool array with channel 0 = ON and
channel 1 = OFF.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .events import EventStream

DEFAULT_FRAME_US = 66_000


@dataclass(frozen=True)
class FramePlan:
    t_F: int = DEFAULT_FRAME_US
    # None anchors frame 0 at the first event, rounded down to a multiple of t_F
    start: int | None = None

    def __post_init__(self):
        if self.t_F <= 0:
            raise ValueError("t_F must be positive")

    def resolve_start(self, stream: EventStream) -> int:
        if self.start is not None:
            return self.start
        if len(stream) == 0:
            return 0
        return int(stream.events["t"][0]) // self.t_F * self.t_F


class Frame(NamedTuple):
    index: int
    single: np.ndarray  # 1B1C, (H, W) bool
    dual: np.ndarray    # 1B2C, (2, H, W) bool


def pack_bits(frame: np.ndarray) -> bytes:
    """Row-major bit-packed representation of a binary frame."""
    return np.packbits(np.asarray(frame, dtype=bool), axis=None).tobytes()


def unpack_bits(data: bytes, shape: tuple[int, int]) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=shape[0] * shape[1])
    return bits.reshape(shape).astype(bool)


def iter_frames(stream: EventStream, plan: FramePlan = FramePlan(),
                emit_empty: bool = False, n_frames: int | None = None) -> Iterator[Frame]:
    """Stream EBBI frames; frame k collects events with
    ``start + k*t_F <= t < start + (k+1)*t_F``.

    With ``emit_empty`` every frame index up to the last event (or up to
    ``n_frames``) is produced; otherwise frames without events are skipped.
    Events before ``start`` are ignored.
    """
    ev = stream.events
    shape = stream.geometry.shape
    start = plan.resolve_start(stream)
    t = ev["t"]
    first = np.searchsorted(t, start, side="left")
    ev, t = ev[first:], t[first:]
    idx = (t - start) // plan.t_F
    if n_frames is not None:
        keep = idx < n_frames
        ev, idx = ev[keep], idx[keep]
        last = n_frames
    else:
        last = int(idx[-1]) + 1 if len(idx) else 0
    bounds = np.searchsorted(idx, np.arange(last + 1), side="left")
    for k in range(last):
        lo, hi = bounds[k], bounds[k + 1]
        if lo == hi and not emit_empty:
            continue
        chunk = ev[lo:hi]
        dual = np.zeros((2,) + shape, dtype=bool)
        ys = chunk["y"].astype(np.intp)
        xs = chunk["x"].astype(np.intp)
        on = chunk["p"] == 1
        dual[0, ys[on], xs[on]] = True
        dual[1, ys[~on], xs[~on]] = True
        single = np.zeros(shape, dtype=bool)
        single[ys, xs] = True
        yield Frame(k, single, dual)


def accumulate(stream: EventStream, plan: FramePlan = FramePlan(),
               emit_empty: bool = False) -> list[Frame]:
    """Materialised form of :func:`iter_frames`."""
    return list(iter_frames(stream, plan, emit_empty))


def window_sum(frame: np.ndarray, p: int) -> np.ndarray:
    """p x p box sum with zero extension, via an integral image."""
    r = p // 2
    f = np.pad(np.asarray(frame, dtype=np.int32), r)
    ii = np.zeros((f.shape[0] + 1, f.shape[1] + 1), dtype=np.int32)
    ii[1:, 1:] = f.cumsum(0).cumsum(1)
    H, W = frame.shape
    return ii[p:p + H, p:p + W] - ii[:H, p:p + W] - ii[p:p + H, :W] + ii[:H, :W]


def median_filter(frame: np.ndarray, p: int = 3) -> np.ndarray:
    """Binary median: a pixel is set iff its p x p window sum exceeds floor(p^2/2)."""
    if p < 3 or p % 2 == 0:
        raise ValueError(f"median window must be odd and >= 3, got {p}")
    return window_sum(frame, p) > (p * p) // 2


def median_filter_ops(frame: np.ndarray, p: int = 3) -> int:
    """Instrumented op count of a scatter-style median filter: every active
    pixel adds into its p x p window, then every pixel is read and
    thresholded once.  An all-zero frame costs exactly 2*H*W (the
    window-scan floor)."""
    return int(2 * frame.size + np.count_nonzero(frame) * p * p)


def downsize(frame: np.ndarray, s1: int, s2: int) -> np.ndarray:
    """Logical-OR downsizing by ``s1`` along x and ``s2`` along y; trailing
    partial blocks are discarded."""
    if s1 < 1 or s2 < 1:
        raise ValueError("scale factors must be >= 1")
    H, W = frame.shape
    h, w = H // s2, W // s1
    blocks = np.asarray(frame, dtype=bool)[:h * s2, :w * s1].reshape(h, s2, w, s1)
    return blocks.any(axis=(1, 3))


def _axis_plan(start: int, size: int, side: int) -> tuple[int, int, int]:
    """Return (source offset, destination offset, length) along one axis."""
    if size > side:
        return start + (size - side) // 2, 0, side
    return start, (side - size) // 2, size


def extract_patch(dual: np.ndarray, box, side: int = 42) -> np.ndarray:
    """Crop or zero-pad the content of ``box`` into a ``side`` x ``side``
    patch, independently per axis (centroid crop when larger, centred copy
    with the odd padding pixel at the bottom/right when smaller)."""
    x, y, w, h = (int(round(v)) for v in box)
    if w <= 0 or h <= 0:
        raise ValueError(f"degenerate box {box}")
    H, W = dual.shape[-2:]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, W), min(y + h, H)
    if x1 <= x0 or y1 <= y0:
        raise ValueError(f"box {box} does not intersect the {W}x{H} frame")
    sx, dx, lx = _axis_plan(x0, x1 - x0, side)
    sy, dy, ly = _axis_plan(y0, y1 - y0, side)
    patch = np.zeros(dual.shape[:-2] + (side, side), dtype=dual.dtype)
    patch[..., dy:dy + ly, dx:dx + lx] = dual[..., sy:sy + ly, sx:sx + lx]
    return patch


# ---------------------------------------------------------------------------
# PGM dump
# ---------------------------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    """Write a binary P5 PGM; bool images map to 0/255."""
    img = np.asarray(image)
    if img.dtype == bool:
        img = img.astype(np.uint8) * 255
    img = img.astype(np.uint8)
    H, W = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    fields = []
    pos = 2
    while len(fields) < 3:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(int(data[pos:end]))
        pos = end
    W, H, _ = fields
    pos += 1
    return np.frombuffer(data[pos:pos + W * H], dtype=np.uint8).reshape(H, W).copy()


def dump_frame(stem, frame: Frame) -> None:
    """Write ``<stem>.pgm`` (1B1C) and ``<stem>.on.pgm`` / ``<stem>.off.pgm``."""
    stem = str(stem)
    write_pgm(stem + ".pgm", frame.single)
    write_pgm(stem + ".on.pgm", frame.dual[0])
    write_pgm(stem + ".off.pgm", frame.dual[1])
