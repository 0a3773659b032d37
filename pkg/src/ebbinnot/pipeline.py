"""End-to-end frame pipeline.

events -> (optional refractory / NN filter) -> binary frames -> median
filter -> downsize -> CCL proposals -> patches -> NNDC -> position
correction -> NMS -> tracker -> track rows, plus metrics and a cost report.

Frames are produced by a generator and processed one at a time, so memory
does not grow with the recording length (apart from the output rows).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cost
from .config import PipelineConfig
from .eval import MetricReport, evaluate
from .events import EventStream, nn_filter, nn_filter_ops, read_events, refractory_filter
from .framegen import (FramePlan, downsize, extract_patch, iter_frames, median_filter,
                       median_filter_ops, write_pgm)
from .nndc.detect import AnchorSet, Detection, correct_position, nms, read_anchors
from .nndc.io import load_weights
from .nndc.network import forward, infer_architecture
from .nndc.train import SampleSet, build_samples
from .regionprop import BoundingBox, RegionProposal, component_proposals, label_components
from .tracker.kf import KalmanTracker, KFConfig
from .tracker.ot import OverlapTracker
from .tracklog import TrackRow, by_frame, read_rows

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    """Inputs are present but inconsistent (missing weights, geometry mismatch)."""


@dataclass
class FrameOutput:
    index: int
    proposals: list
    detections: list
    rows: list


@dataclass
class RunResult:
    rows: list
    track_classes: dict
    counters: cost.OpCounters
    n_frames: int
    n_busy_frames: int            # frames with at least one proposal
    metrics: MetricReport | None = None
    cost_report: cost.CostReport | None = None
    frames: list = field(default_factory=list)  # FrameOutput, only when kept

    @property
    def alpha_T(self) -> float:
        return self.n_busy_frames / self.n_frames if self.n_frames else 0.0


def proposals(frame: np.ndarray, s1: int, s2: int, max_rp: int,
              counters: cost.OpCounters | None = None) -> list[RegionProposal]:
    """CCL proposals on the downsized frame, charging downsizing (one op per
    source pixel) and labelling to the ``ccl`` counter."""
    small = downsize(frame, s1, s2)
    comps = label_components(small)
    if counters is not None:
        counters.add("ccl", frame.size + comps.ops)
        counters.tally("ccl.weighted_active", comps.ops)
    return component_proposals(comps, s1, s2, max_rp)


def detect(dual: np.ndarray, rps, weights: dict, anchors: AnchorSet, thr: float, thr_ns: float,
           side: int = 42, arch=None, counters: cost.OpCounters | None = None) -> list[Detection]:
    """Classify and refine the proposals of one frame; returns NMS survivors."""
    if not rps:
        return []
    H, W = dual.shape[-2:]
    patches = np.stack([extract_patch(dual, rp.box, side) for rp in rps])
    out = forward(weights, patches, arch, counter=counters)
    if counters is not None:
        counters.tally("nndc.patches", len(rps))
    dets = []
    for i, rp in enumerate(rps):
        d = correct_position(out.class_conf[i], float(out.bb_conf[i]), out.t[i],
                             (rp.box.x, rp.box.y), anchors, W, H, thr)
        if d is not None and d.box.w > 0 and d.box.h > 0:
            d.rp_box = rp.box
            dets.append(d)
    return nms(dets, thr_ns)


def bare_detections(rps) -> list[Detection]:
    """Proposals passed straight to the tracker (no network, class unknown)."""
    return [Detection(np.zeros(0), float(rp.pixel_count), np.zeros(4), rp.box, -1, rp.box) for rp in rps]


def preprocess(stream: EventStream, config: PipelineConfig,
               counters: cost.OpCounters | None = None) -> EventStream:
    fs = config.frames
    if fs.refractory_us > 0:
        stream = refractory_filter(stream, fs.refractory_us)
    if fs.nn_filter:
        if counters is not None:
            counters.add("nn_filter", nn_filter_ops(len(stream)))
        stream = nn_filter(stream, fs.t_corr)
    return stream


def run_stream(stream: EventStream, config: PipelineConfig = PipelineConfig(),
               weights: dict | None = None, anchors: AnchorSet | None = None,
               gt: list | None = None, n_frames: int | None = None,
               counters: cost.OpCounters | None = None, dump_dir=None,
               keep_frames: bool = False) -> RunResult:
    """Run the pipeline over an in-memory stream.

    ``weights`` and ``anchors`` are required for ``proposals.method = nndc``.
    When ``gt`` is given the returned result carries a :class:`MetricReport`.
    """
    counters = counters if counters is not None else cost.OpCounters()
    ps, ds, fs = config.proposals, config.detector, config.frames
    A, B = stream.geometry.A, stream.geometry.B
    arch = None
    if ps.method == "nndc":
        if weights is None or anchors is None:
            raise DataError("NNDC weights and anchors are required; run `train` first")
        arch = infer_architecture(weights, ps.side)
    if ps.max_rp == 0:
        warnings.warn("max_rp = 0: no proposals, the track log will be empty", stacklevel=2)

    if config.tracker.kind == "ot":
        tracker = OverlapTracker(config.tracker.ot_config(A, B), counters)
    else:
        t = config.tracker
        tracker = KalmanTracker(KFConfig(max_trackers=t.max_trackers, max_invisible=t.max_invisible,
                                         min_visibility=t.min_visibility,
                                         min_locked_frames=t.min_locked_frames, A=A, B=B), counters)

    stream = preprocess(stream, config, counters)
    dump = Path(dump_dir) if dump_dir is not None else None
    if dump is not None:
        dump.mkdir(parents=True, exist_ok=True)

    rows: list[TrackRow] = []
    kept: list[FrameOutput] = []
    n_seen = busy = 0
    plan = FramePlan(fs.t_F, fs.start)
    for frame in iter_frames(stream, plan, emit_empty=True, n_frames=n_frames):
        n_seen += 1
        img = frame.single
        if fs.median:
            counters.add("median", median_filter_ops(img, fs.p))
            counters.tally("median.active", int(np.count_nonzero(img)))
            img = median_filter(img, fs.p)
        rps = proposals(img, ps.s1, ps.s2, ps.max_rp, counters)
        busy += bool(rps)
        if ps.method == "nndc":
            dets = detect(frame.dual, rps, weights, anchors, ds.thr, ds.thr_ns, ps.side, arch, counters)
        else:
            dets = bare_detections(rps)
        frame_rows = tracker.step(dets)
        rows.extend(frame_rows)
        if dump is not None:
            write_pgm(dump / f"frame_{frame.index:06d}.pgm", img)
        if keep_frames:
            kept.append(FrameOutput(frame.index, rps, dets, frame_rows))
    track_classes = tracker.finish()

    result = RunResult(rows, track_classes, counters, n_seen, busy, frames=kept)
    if n_seen:
        result.cost_report = cost.cost_report(counters, n_seen)
    if gt is not None and gt:
        result.metrics = evaluate(rows, gt, track_classes=track_classes,
                                  classify=ps.method == "nndc")
    return result


def load_model(config: PipelineConfig, geometry: tuple[int, int]) -> tuple[dict, AnchorSet]:
    """Weights and anchors named in ``config``, checked against ``geometry``."""
    ds = config.detector
    if ds.weights is None or not Path(ds.weights).exists():
        raise DataError(f"weights file {ds.weights!r} not found; run `train` first")
    if ds.anchors is None or not Path(ds.anchors).exists():
        raise DataError(f"anchors file {ds.anchors!r} not found; run `train` first")
    weights, wgeom = load_weights(ds.weights)
    if wgeom is not None and tuple(wgeom) != tuple(geometry):
        raise DataError(f"weights were trained for a {wgeom[0]}x{wgeom[1]} sensor, "
                        f"events are {geometry[0]}x{geometry[1]}")
    anchors = read_anchors(ds.anchors)
    for w, h in anchors.sizes:
        if w > geometry[0] or h > geometry[1]:
            raise DataError(f"anchor {w}x{h} exceeds the {geometry[0]}x{geometry[1]} sensor")
    return weights, anchors


def run(config: PipelineConfig, dump_dir=None) -> RunResult:
    """File-level entry point: reads ``paths.events`` (and
    ``paths.annotations`` when set) and runs :func:`run_stream`."""
    if config.paths.events is None:
        raise DataError("paths.events is not set")
    config.check_paths("paths.events", "paths.annotations")
    stream = read_events(config.paths.events)
    weights = anchors = None
    if config.proposals.method == "nndc":
        weights, anchors = load_model(config, (stream.geometry.A, stream.geometry.B))
    gt = read_rows(config.paths.annotations) if config.paths.annotations else None
    return run_stream(stream, config, weights, anchors, gt, dump_dir=dump_dir)


def collect_samples(stream: EventStream, gt, config: PipelineConfig = PipelineConfig(),
                    iou_th: float = 0.1, n_frames: int | None = None) -> SampleSet:
    """Training samples from the proposals the pipeline itself would make,
    labelled against the ground truth of the same frame."""
    fs, ps = config.frames, config.proposals
    stream = preprocess(stream, config)
    gt_frames = by_frame(gt)
    sets = []
    for frame in iter_frames(stream, FramePlan(fs.t_F, fs.start), n_frames=n_frames):
        img = median_filter(frame.single, fs.p) if fs.median else frame.single
        rps = proposals(img, ps.s1, ps.s2, ps.max_rp)
        if rps:
            sets.append(build_samples(frame.dual, [rp.box for rp in rps],
                                      gt_frames.get(frame.index, []), iou_th, ps.side))
    return SampleSet.concat(sets) if sets else SampleSet.empty(ps.side)


# ---------------------------------------------------------------------------
# overlays
# ---------------------------------------------------------------------------

# 3x5 bitmaps for the digits drawn next to each box
_DIGITS = {
    "0": ("111", "101", "101", "101", "111"), "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"), "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"), "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"), "7": ("111", "001", "010", "010", "010"),
    "8": ("111", "101", "111", "101", "111"), "9": ("111", "101", "111", "001", "111"),
}
OUTLINE = 128


def draw_box(img: np.ndarray, box, value: int = OUTLINE) -> None:
    H, W = img.shape
    x0, y0 = int(np.floor(box[0])), int(np.floor(box[1]))
    x1, y1 = int(np.ceil(box[0] + box[2])) - 1, int(np.ceil(box[1] + box[3])) - 1
    x0, y0, x1, y1 = max(x0, 0), max(y0, 0), min(x1, W - 1), min(y1, H - 1)
    if x1 < x0 or y1 < y0:
        return
    img[y0, x0:x1 + 1] = img[y1, x0:x1 + 1] = value
    img[y0:y1 + 1, x0] = img[y0:y1 + 1, x1] = value


def draw_text(img: np.ndarray, x: int, y: int, text: str, value: int = OUTLINE) -> None:
    H, W = img.shape
    for k, ch in enumerate(text):
        glyph = _DIGITS.get(ch)
        if glyph is None:
            continue
        for r, line in enumerate(glyph):
            for c, bit in enumerate(line):
                yy, xx = y + r, x + 4 * k + c
                if bit == "1" and 0 <= yy < H and 0 <= xx < W:
                    img[yy, xx] = value


def overlay(frame: np.ndarray, rows) -> np.ndarray:
    """0/255 frame with each row's box outlined and its track id written
    above the top-left corner, both at grey level 128."""
    img = np.where(np.asarray(frame, dtype=bool), 255, 0).astype(np.uint8)
    for r in rows:
        draw_box(img, r.box)
        draw_text(img, int(r.box.x), max(int(r.box.y) - 6, 0), str(r.track_id))
    return img


def render(stream: EventStream, rows, out_dir, t_F: int = 66_000, start: int | None = None) -> list[Path]:
    """Write one overlay PGM per frame that has events or rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_frame: dict = {}
    for r in rows:
        per_frame.setdefault(r.frame_idx, []).append(r)
    paths = []
    for frame in iter_frames(stream, FramePlan(t_F, start), emit_empty=True):
        fr = per_frame.get(frame.index, [])
        if not fr and not frame.single.any():
            continue
        p = out / f"overlay_{frame.index:06d}.pgm"
        write_pgm(p, overlay(frame.single, fr))
        paths.append(p)
    return paths


__all__ = ["DataError", "RunResult", "FrameOutput", "proposals", "detect", "bare_detections",
           "preprocess", "collect_samples", "run_stream", "load_model", "run", "overlay", "render", "draw_box",
           "BoundingBox"]
