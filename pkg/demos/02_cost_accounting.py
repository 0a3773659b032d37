"""Where the operations go.

First the analytic per-frame costs at the reference operating point, then an
instrumented run over a synthetic recording: every module charges its work to
an op counter, and the cost report sets the measured ops per frame beside the
formula evaluated with the statistics of that same run.

    python demos/02_cost_accounting.py --seconds 30
"""

import argparse

from ebbinnot import cost, synth
from ebbinnot.config import PipelineConfig
from ebbinnot.nndc.network import init_weights
from ebbinnot.nndc.detect import AnchorSet
from ebbinnot.pipeline import run_stream


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seconds", type=float, default=20.0)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    m = cost.CostModel()
    nndc = cost.c_nndc(cost.DATASET_MODEL)
    print("analytic per-frame costs")
    print(f"  CCL proposals        {cost.c_ccl(m).ops:>12,.0f} ops   {cost.c_ccl(m).memory:>8,.0f} bits")
    print(f"  one NNDC inference   {cost.NNDC_OPS:>12,.0f} ops")
    print(f"  NNDC, 8 proposals    {nndc.bound:>12,.0f} ops   (upper bound)")
    print(f"  NNDC, typical load   {nndc.average:>12,.0f} ops   (busy fraction 0.57, 2.38 proposals)")
    print(f"  EBMS baseline        {cost.c_ebms(m).ops:>12,.0f} ops   {cost.c_ebms(m).memory:>8,.0f} bits")
    rows, avg = cost.tracker_table()
    print(f"  overlap tracker      {avg.ot:>12,.0f} ops   vs Kalman tracker {avg.kf:,.0f} ({avg.ratio:.1f}x)")

    stream, _ = synth.generate(synth.random_scene(args.seed, duration=args.seconds))
    # untrained weights are enough to exercise every counter
    anchors = AnchorSet([(20, 40), (16, 42), (31, 94), (15, 21), (22, 50)])
    print(f"\ninstrumented run: {args.seconds:.0f} s synthetic recording, {len(stream)} events")
    for kind in ("ot", "kf"):
        cfg = PipelineConfig()
        cfg.tracker.kind = kind
        res = run_stream(stream, cfg, init_weights(), anchors)
        print(f"\ntracker = {kind}, {res.n_frames} frames, busy fraction {res.alpha_T:.2f}")
        print(res.cost_report)
        shares = res.cost_report.shares()
        print("  share of measured ops: " + ", ".join(f"{k} {v:.1%}" for k, v in shares.items()))
    print("\nThe network dominates whenever a frame has proposals; the tracker is a\n"
          "rounding error next to it, and the overlap tracker is several times\n"
          "cheaper than the Kalman one for the same detections.")


if __name__ == "__main__":
    main()
