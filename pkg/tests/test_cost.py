import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ebbinnot import cost
from ebbinnot.cost import (CostModel, CostReport, OpCounters, c_ccl, c_ebms, c_kf, c_median, c_nndc,
                           c_ot, cost_report, filter_costs, tracker_table)
from ebbinnot.framegen import median_filter, median_filter_ops
from ebbinnot.nndc.network import inference_ops
from ebbinnot.tracker import run_ot


def test_ccl_examples():
    assert c_ccl(CostModel()).ops == 54_000
    assert c_ccl(CostModel(alpha=0)).ops == 43_200
    # 40x60 downsized grid: one bit per cell plus corner labels of 6 bits per axis
    assert c_ccl(CostModel()).memory == 2400 + 1200 * 6 + 1200 * 6 == 16_800


def test_nndc_bound_and_average():
    n = c_nndc(CostModel())
    assert n.bound == 8 * inference_ops() + 54_000
    assert abs(n.bound - 17.302e6) / 17.302e6 < 2e-3
    avg = c_nndc(cost.DATASET_MODEL)
    assert avg.nndc_average == pytest.approx(0.57 * 2.38 * inference_ops())
    assert abs(avg.average - 3.057e6) / 3.057e6 < 3e-3
    zero = c_nndc(CostModel(alpha_T=0))
    assert zero.nndc_average == 0 and zero.average == zero.overhead


def test_ebms_examples():
    v = c_ebms(CostModel())
    assert v.ops == pytest.approx(650 * 388.2) and round(v.ops) == 252_330
    assert v.memory == 3_320
    assert c_ebms(CostModel(N_bar=0)).ops == 0


def test_filter_constants():
    f = filter_costs(CostModel())
    assert f.median == 125_280           # 125.2 K
    assert f.nn_filter == 276_480        # 276.4 K
    # the reference figures truncate to one decimal of a Kop
    assert (f.median // 100, f.nn_filter // 100) == (1252, 2764)


def test_median_counter_on_empty_frame_is_scan_floor():
    frame = np.zeros((180, 240), bool)
    assert median_filter_ops(frame) == c_median(CostModel(activation=0.0)) == 2 * 240 * 180
    median_filter(frame)


def test_tracker_formulas_limits():
    assert c_ot(CostModel()).ops == 4
    m = CostModel(kf_N_T=0, kf_N_obj=0)
    assert c_kf(m).ops == 0


def test_kf_component_formulas():
    # closed forms at m=6, n=4
    assert cost.kf_predict_ops(6, 4) == 4 * 216 + 3 * 36 + 48
    assert cost.kf_correct_ops(6, 4) == 6 * 216 + 6 * 36 * 4 + 2 * 6 * 16 + 3 * 36 + 7 * 24 + 10
    assert cost.kf_cost_ops(6, 4) == 4 * 64 + 2 * 36 * 4 + 2 * 6 * 16 + 5 * 16 + 5
    assert cost.hungarian_ops(1) == 9
    assert cost.hungarian_ops(2) == (88 + 48 + 62) / 6


def test_tracker_table_reproduces_reference_averages():
    rows, avg = tracker_table()
    assert [r.site for r in rows] == ["site1", "site2"]
    assert abs(avg.ot - 235) < 1
    assert abs(avg.kf - 1585) < 1
    assert avg.ratio == pytest.approx(6.5)
    assert (round(rows[0].ot), round(rows[0].kf)) == (119, 698)
    assert (round(rows[1].ot), round(rows[1].kf)) == (351, 2472)


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(alpha_T=1.5)
    with pytest.raises(ValueError):
        CostModel(P=(0.1,) * 6)
    with pytest.raises(ValueError):
        CostModel(n_rp=-1)


def test_counters_are_monotone_and_merge_additively():
    a, b = OpCounters(), OpCounters()
    a.add("ot", 5)
    b.add("ot", 7)
    b.add("kf", 0)
    with pytest.raises(ValueError):
        a.add("ot", -1)
    m = a.merge(b)
    assert m["ot"] == 12 and "kf" in m.ops
    assert b.merge(a).ops == m.ops


@given(st.lists(st.tuples(st.sampled_from(["ot", "kf", "ccl"]), st.integers(0, 1000)), max_size=30))
def test_counter_merge_is_order_independent(items):
    halves = [OpCounters(), OpCounters()]
    for i, (k, n) in enumerate(items):
        halves[i % 2].add(k, n)
    whole = OpCounters()
    for k, n in items:
        whole.add(k, n)
    merged = halves[0].merge(halves[1])
    for k in set(merged.ops) | set(whole.ops):
        assert merged[k] == whole[k]
    assert merged.ops == halves[1].merge(halves[0]).ops


def test_report_round_trip_and_shares():
    rep = CostReport([("nndc", 2.0e6, 2.1e6, 0.05), ("ot", 200.0, 200.0, 0.0), ("ccl", 5e4, 5e4, 0.0)])
    back = CostReport.from_csv(rep.to_csv())
    assert back.rows == rep.rows
    assert rep.to_csv().splitlines()[0] == "module,analytic_ops,measured_ops,rel_error"
    assert rep.shares()["nndc"] > 0.9
    with pytest.raises(ValueError):
        CostReport.from_csv("a,b\n1,2\n")


def test_ot_counter_matches_formula_on_random_detections(rng):
    from ebbinnot.nndc.detect import Detection
    from ebbinnot.regionprop import BoundingBox
    frames = []
    for k in range(300):
        n = int(rng.integers(0, 5))
        frames.append([Detection(np.array([0, .9, 0, 0, 0]), float(rng.random()), np.zeros(4),
                                 BoundingBox(*rng.uniform(0, 200, 2), *rng.uniform(5, 40, 2)), 1)
                       for _ in range(n)])
    c = OpCounters()
    run_ot(frames, counters=c)
    rep = cost_report(c, len(frames))
    (mod, analytic, measured, err), = rep.rows
    assert mod == "ot" and abs(err) < 1e-9


def test_zero_detection_run_sits_on_misc_floor():
    c = OpCounters()
    run_ot([[] for _ in range(50)], counters=c)
    assert c["ot"] / 50 == cost.OT_MISC
    assert cost_report(c, 50).rows[0][1] == cost.OT_MISC


def test_cost_report_needs_frames():
    with pytest.raises(ValueError):
        cost_report(OpCounters(), 0)


def test_nn_filter_reference_rate_reproduces_constant():
    assert cost.c_nn_filter(CostModel()) == 0.1 * 240 * 180 * 64
    assert math.isclose(cost.NNDC_OPS, inference_ops())
