"""Command-line interface: ``ebbinnot {synth,train,run,eval,cost,render}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import cost, synth
from .config import PipelineConfig, read_config
from .eval import CSV_HEADER, evaluate
from .events import EventFormatError, read_events, write_events
from .nndc.detect import compute_anchors, write_anchors
from .nndc.io import WeightsFormatError, save_weights
from .nndc.train import SampleSet, train
from .pipeline import DataError, collect_samples, load_model, render, run_stream
from .tracklog import read_rows, write_annotations, write_rows

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("ebbinnot")


def _config(args) -> PipelineConfig:
    cfg = read_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train = replace(cfg.train, seed=args.seed)
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> int:
    seed = cfg.seed
    if args.scene:
        scene = synth.read_scene(args.scene)
    elif args.kind == "occlusion":
        scene = synth.occlusion_scene(seed, duration=args.duration or 5.0)
    else:
        scene = synth.random_scene(seed, duration=args.duration or 20.0)
    stream, gt = synth.generate(scene)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_events(stream, out)
    gt_path = Path(args.annotations) if args.annotations else out.with_name(out.stem + ".gt.csv")
    write_annotations(gt_path, gt)
    if args.save_scene:
        Path(args.save_scene).write_text(synth.format_scene(scene))
    print(f"{len(stream)} events, {len(gt)} annotations -> {out}, {gt_path}")
    return EXIT_OK


def _pairs(events, annotations):
    if annotations and len(annotations) != len(events):
        raise DataError("give one annotation file per event file")
    if not annotations:
        annotations = [str(Path(e).with_name(Path(e).stem + ".gt.csv")) for e in events]
    return list(zip(events, annotations))


def cmd_train(args, cfg: PipelineConfig) -> int:
    sets, gts, geometry = [], [], None
    for ev_path, gt_path in _pairs(args.events, args.annotations):
        stream = read_events(ev_path)
        g = (stream.geometry.A, stream.geometry.B)
        if geometry is not None and g != geometry:
            raise DataError(f"{ev_path}: geometry {g} differs from {geometry}")
        geometry = g
        gt = read_rows(gt_path)
        gts += gt
        sets.append(collect_samples(stream, gt, cfg))
    samples = SampleSet.concat(sets)
    print(f"{len(samples)} samples, class counts {np.bincount(samples.target_class).tolist()}")
    try:
        anchors = compute_anchors(gts)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    try:
        res = train(samples, anchors, cfg.train, geometry=geometry)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    weights_path = Path(args.weights or cfg.detector.weights or "nndc.weights")
    anchors_path = Path(args.anchors or cfg.detector.anchors or weights_path.with_suffix(".anchors.csv"))
    save_weights(weights_path, res.weights, geometry)
    write_anchors(anchors_path, anchors)
    last = res.history[-1]
    print(f"best epoch {res.best_epoch}, last loss {last['total']:.4f}, "
          f"val accuracy {max(h['val_accuracy'] for h in res.history):.4f}")
    print(f"weights -> {weights_path}, anchors -> {anchors_path}")
    return EXIT_OK


def _run_one(job):
    ev_path, gt_path, cfg, out_dir, dump_dir = job
    stream = read_events(ev_path)
    weights = anchors = None
    if cfg.proposals.method == "nndc":
        weights, anchors = load_model(cfg, (stream.geometry.A, stream.geometry.B))
    gt = read_rows(gt_path) if gt_path and Path(gt_path).exists() else None
    stem = Path(ev_path).stem
    dump = Path(dump_dir) / stem if dump_dir else None
    res = run_stream(stream, cfg, weights, anchors, gt, dump_dir=dump)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / f"{stem}.tracks.csv", res.rows)
    if res.cost_report is not None:
        (out / f"{stem}.cost.csv").write_text(res.cost_report.to_csv())
    summary = {"recording": stem, "frames": res.n_frames, "rows": len(res.rows),
               "tracks": len({r.track_id for r in res.rows})}
    if res.metrics is not None:
        res.metrics.recording = stem
        (out / f"{stem}.metrics.json").write_text(res.metrics.to_json())
        summary["f1@0.1"] = res.metrics.f1[0]
        summary["auc"] = res.metrics.auc
    return summary


def cmd_run(args, cfg: PipelineConfig) -> int:
    if args.weights:
        cfg.detector.weights = args.weights
    if args.anchors:
        cfg.detector.anchors = args.anchors
    if args.bare:
        cfg.proposals.method = "ccl"
    events = args.events or ([cfg.paths.events] if cfg.paths.events else [])
    if not events:
        raise DataError("no event files given")
    anns = args.annotations or ([cfg.paths.annotations] if cfg.paths.annotations else None)
    pairs = _pairs(events, anns)
    out_dir = args.out_dir or cfg.paths.output or "."
    jobs = [(e, g, cfg, out_dir, args.dump_dir) for e, g in pairs]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for r in results:
        print(json.dumps(r))
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    rows = read_rows(args.tracks)
    gt = read_rows(args.gt)
    if not gt:
        raise DataError(f"{args.gt}: no ground-truth rows")
    report = evaluate(rows, gt, Path(args.tracks).stem, classify=not args.no_classes)
    print(CSV_HEADER)
    for line in report.csv_rows():
        print(line)
    print(f"# auc={report.auc:.6f} eao={report.eao:.6f}")
    if args.json:
        Path(args.json).write_text(report.to_json())
    return EXIT_OK


def cmd_cost(args, cfg: PipelineConfig) -> int:
    if args.reports:
        for path in args.reports:
            print(f"# {path}")
            print(cost.CostReport.from_csv(Path(path).read_text()))
        return EXIT_OK
    model = cost.CostModel()
    ccl = cost.c_ccl(model)
    nndc = cost.c_nndc(cost.DATASET_MODEL)
    ebms = cost.c_ebms(model)
    filters = cost.filter_costs(model)
    print(f"ccl            ops/frame {ccl.ops:>14,.0f}   memory {ccl.memory:>10,.0f}")
    print(f"nndc bound     ops/frame {nndc.bound:>14,.0f}")
    print(f"nndc average   ops/frame {nndc.average:>14,.0f}   (alpha_T {cost.DATASET_MODEL.alpha_T}, n_rp {cost.DATASET_MODEL.n_rp})")
    print(f"ebms           ops/frame {ebms.ops:>14,.0f}   memory {ebms.memory:>10,.0f}")
    print(f"median filter  ops/frame {filters.median:>14,.0f}")
    print(f"nn filter      ops/frame {filters.nn_filter:>14,.0f}")
    rows, avg = cost.tracker_table()
    print(f"{'site':<10}{'OT':>10}{'KF':>10}{'KF/OT':>8}")
    for r in rows + [avg]:
        print(f"{r.site:<10}{r.ot:>10.2f}{r.kf:>10.2f}{r.ratio:>8.1f}")
    return EXIT_OK


def cmd_render(args, cfg: PipelineConfig) -> int:
    stream = read_events(args.events)
    rows = read_rows(args.tracks)
    paths = render(stream, rows, args.out_dir, cfg.frames.t_F, cfg.frames.start)
    print(f"{len(paths)} overlay frames -> {args.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebbinnot", description="Event-based binary-image traffic tracking")
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="recordings processed in parallel")
    p.add_argument("--dump-dir", help="write intermediate frames here")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic recording and its annotations")
    s.add_argument("--scene", help="scene file (key = value with [object] blocks)")
    s.add_argument("--kind", choices=("random", "occlusion"), default="random")
    s.add_argument("--duration", type=float)
    s.add_argument("--out", required=True, help="event file (.csv or .bin)")
    s.add_argument("--annotations", help="annotation CSV (default <out stem>.gt.csv)")
    s.add_argument("--save-scene", help="also write the scene description")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train the detector/classifier")
    t.add_argument("--events", nargs="+", required=True)
    t.add_argument("--annotations", nargs="+")
    t.add_argument("--weights", help="output weights file")
    t.add_argument("--anchors", help="output anchors CSV")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="run the pipeline on event files")
    r.add_argument("--events", nargs="+")
    r.add_argument("--annotations", nargs="+")
    r.add_argument("--weights")
    r.add_argument("--anchors")
    r.add_argument("--bare", action="store_true", help="track raw CCL proposals, no network")
    r.add_argument("--out-dir")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score a track log against ground truth")
    e.add_argument("--tracks", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--json", help="also write the full report as JSON")
    e.add_argument("--no-classes", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("cost", help="analytic cost tables or saved run reports")
    c.add_argument("reports", nargs="*", help="cost CSVs written by `run`")
    c.set_defaults(func=cmd_cost)

    d = sub.add_parser("render", help="draw track boxes over the frames as PGM")
    d.add_argument("--events", required=True)
    d.add_argument("--tracks", required=True)
    d.add_argument("--out-dir", required=True)
    d.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except synth.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, EventFormatError, WeightsFormatError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # anything else is a bug or a broken invariant
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
