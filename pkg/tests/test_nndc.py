import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ebbinnot.eval import iou
from ebbinnot.nndc.detect import (AnchorSet, Detection, compute_anchors, correct_position,
                                  corrected_boxes, nms, read_anchors, write_anchors)
from ebbinnot.nndc.io import WeightsFormatError, load_weights, save_weights
from ebbinnot.nndc.network import (DEFAULT_ARCH, TINY_ARCH, Architecture, forward, inference_ops,
                                   infer_architecture, init_weights, param_count, zero_weights, Outputs)
from ebbinnot.nndc.train import (SampleSet, TrainConfig, assign_targets, loss, loss_and_grad,
                                 loss_terms, predict_classes, train)
from ebbinnot.regionprop import BoundingBox
from ebbinnot.tracklog import TrackRow
from oracles import ANCHORS, finite_difference_check, random_samples


# ---------------------------------------------------------------------------
# network shape and cost
# ---------------------------------------------------------------------------

def test_parameter_count_matches_hand_sum():
    hand = (5 * 5 * 2 * 6 + 6) + (5 * 5 * 6 * 16 + 16) + (784 * 120 + 120) + (120 * 84 + 84) + (84 * 10 + 10)
    assert hand == 107_936
    assert param_count(DEFAULT_ARCH) == hand
    assert param_count(init_weights()) == hand
    assert param_count(zero_weights()) == hand


def test_spatial_plan():
    assert DEFAULT_ARCH.spatial() == [38, 19, 15, 7]
    assert DEFAULT_ARCH.flat == 784


def test_inference_ops_close_to_reference():
    ops = inference_ops()
    # independent sum: 2 ops per MAC over both conv layers and the dense chain
    macs = 38 * 38 * 6 * 2 * 25 + 15 * 15 * 16 * 6 * 25 + 784 * 120 + 120 * 84 + 84 * 10
    assert ops == 2 * macs
    assert abs(ops - 2.16e6) / 2.16e6 < 0.02


def test_forward_charges_counter_with_inference_ops():
    from ebbinnot.cost import OpCounters
    c = OpCounters()
    forward(init_weights(), np.zeros((3, 2, 42, 42)), counter=c)
    assert c.ops["nndc"] == 3 * inference_ops()


def test_zero_weights_give_neutral_outputs():
    out = forward(zero_weights(), np.ones((2, 2, 42, 42)))
    np.testing.assert_array_equal(out.class_conf, 0.5)
    np.testing.assert_array_equal(out.bb_conf, 0.0)
    np.testing.assert_array_equal(out.t, 0.0)


def test_forward_rejects_wrong_patch_shape():
    with pytest.raises(ValueError):
        forward(init_weights(), np.zeros((1, 2, 40, 40)))


def test_infer_architecture_round_trip():
    assert infer_architecture(init_weights(TINY_ARCH)) == TINY_ARCH
    w = init_weights()
    w["fc1.w"] = w["fc1.w"][:-1]
    with pytest.raises(ValueError):
        infer_architecture(w)


def test_forward_is_deterministic_and_batch_independent(rng):
    w = init_weights(seed=3)
    p = (rng.random((4, 2, 42, 42)) < 0.3).astype(np.uint8)
    a = forward(w, p).raw
    b = forward(w, p).raw
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(forward(w, p[2]).raw[0], a[2], rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# position correction
# ---------------------------------------------------------------------------

def test_zero_correction_returns_anchor_at_rp_corner():
    conf = np.array([0.1, 0.9, 0.2, 0.1, 0.1])
    d = correct_position(conf, 0.5, np.zeros(4), (10, 20), ANCHORS, 240, 180)
    assert tuple(d.box) == (10, 20, 16, 42)
    assert d.class_id == 1


def test_low_objectness_is_rejected():
    conf = np.array([0.1, 0.9, 0.2, 0.1, 0.1])
    assert correct_position(conf, 0.05, np.zeros(4), (10, 20), ANCHORS, 240, 180, thr=0.1) is None


def test_background_argmax_is_rejected():
    conf = np.array([0.9, 0.2, 0.2, 0.1, 0.1])
    assert correct_position(conf, 0.8, np.zeros(4), (10, 20), ANCHORS, 240, 180) is None
    assert correct_position(conf, 0.8, np.zeros(4), (10, 20), ANCHORS, 240, 180,
                            reject_background=False) is not None


def test_width_is_clipped_to_sensor():
    anchors = AnchorSet([(1, 1), (150, 10), (1, 1), (1, 1), (1, 1)])
    conf = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
    d = correct_position(conf, 1.0, np.array([0, 0, math.log(2), 0]), (0, 0), anchors, 240, 180)
    assert d.box.w == 240


@settings(max_examples=200)
@given(st.lists(st.floats(-100, 100), min_size=4, max_size=4),
       st.floats(-50, 300), st.floats(-50, 250))
def test_corrected_boxes_always_within_bounds(t, rx, ry):
    box, _ = corrected_boxes(np.array([t]), np.array([[rx, ry]]), np.array([[22.0, 50.0]]), 240, 180)
    x, y, w, h = box[0]
    assert 0 <= x <= 239 and 0 <= y <= 179 and 0 <= w <= 240 and 0 <= h <= 180


@given(st.integers(0, 4))
def test_zero_size_correction_keeps_anchor_exactly(k):
    t = np.array([[0.3, -0.2, 0.0, 0.0]])
    box, _ = corrected_boxes(t, np.array([[50.0, 60.0]]), ANCHORS.sizes[[k]], 240, 180)
    assert tuple(box[0, 2:]) == ANCHORS[k]


# ---------------------------------------------------------------------------
# NMS
# ---------------------------------------------------------------------------

def det(box, conf):
    return Detection(np.zeros(5), conf, np.zeros(4), BoundingBox(*box), 1)


def test_nms_identical_boxes_keep_best():
    kept = nms([det((0, 0, 10, 10), 0.8), det((0, 0, 10, 10), 0.9)])
    assert [d.bb_conf for d in kept] == [0.9]


def test_nms_disjoint_boxes_all_survive():
    assert len(nms([det((0, 0, 5, 5), 0.5), det((20, 20, 5, 5), 0.4), det((50, 0, 5, 5), 0.9)])) == 3


def test_nms_chain():
    # widths 30 shifted by 15: neighbours have IoU 1/3 > 0.3, A and C are disjoint
    a, b, c = det((0, 0, 30, 1), 0.9), det((15, 0, 30, 1), 0.8), det((30, 0, 30, 1), 0.7)
    assert iou(a.box, b.box) > 0.3 and iou(b.box, c.box) > 0.3 and iou(a.box, c.box) == 0
    assert [d.bb_conf for d in nms([c, b, a])] == [0.9, 0.7]


@settings(max_examples=300)
@given(st.lists(st.tuples(st.integers(0, 60), st.integers(0, 60), st.integers(1, 30),
                          st.integers(1, 30), st.floats(0, 1)), max_size=12))
def test_nms_survivors_never_overlap_above_threshold(items):
    kept = nms([det(b[:4], b[4]) for b in items], 0.3)
    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            assert iou(kept[i].box, kept[j].box) <= 0.3


# ---------------------------------------------------------------------------
# targets and anchors
# ---------------------------------------------------------------------------

def gt_row(box, cls=1):
    return TrackRow(0, 0, cls, BoundingBox(*box))


def test_assign_targets_examples():
    gts = [gt_row((0, 0, 10, 10), 2), gt_row((100, 100, 10, 10), 3)]
    t = assign_targets([BoundingBox(0, 0, 10, 10), BoundingBox(50, 50, 5, 5)], gts)
    assert t[0] == (2, 1.0, (0, 0, 10, 10))
    assert t[1].class_id == 0 and t[1].bb_conf == 0 and t[1].box is None


def test_assign_targets_takes_max_iou():
    rp = BoundingBox(0, 0, 10, 10)
    g1 = gt_row((0, 0, 10, 4), 1)            # IoU 0.4
    g2 = gt_row((0, 0, 10, 2), 4)            # IoU 0.2
    t = assign_targets([rp], [g2, g1])
    assert t[0].class_id == 1 and t[0].bb_conf == pytest.approx(0.4)


def test_assign_targets_threshold_is_strict():
    rp = BoundingBox(0, 0, 10, 10)
    t = assign_targets([rp], [gt_row((0, 0, 10, 1))], iou_th=0.1)   # IoU exactly 0.1
    assert t[0].class_id == 0


def test_compute_anchors_means_and_errors():
    gts = [gt_row((0, 0, 10, 10), 1), gt_row((0, 0, 30, 30), 1)] + \
          [gt_row((0, 0, 5, 6), k) for k in (2, 3, 4)]
    a = compute_anchors(gts)
    assert a[1] == (20, 20) and a[2] == (5, 6)
    with pytest.raises(ValueError, match="bike"):
        compute_anchors([g for g in gts if g.class_id != 3])


def test_anchor_file_round_trip(tmp_path):
    write_anchors(tmp_path / "a.csv", ANCHORS)
    back = read_anchors(tmp_path / "a.csv")
    np.testing.assert_array_equal(back.sizes, ANCHORS.sizes)
    assert back.names == ANCHORS.names


# ---------------------------------------------------------------------------
# loss and gradient
# ---------------------------------------------------------------------------

def test_noise_sample_has_no_box_loss(rng):
    s = random_samples(rng, 6, positive=0.0)
    parts = loss(init_weights(seed=1, dtype=np.float64), s, ANCHORS)
    assert parts.loss3 == 0.0


def test_lambda_zero_drops_box_term(rng):
    s = random_samples(rng, 6)
    w = init_weights(seed=1, dtype=np.float64)
    p0 = loss(w, s, ANCHORS, lam=0.0)
    assert p0.total == pytest.approx(p0.loss1 + p0.loss2, rel=1e-12)
    p5 = loss(w, s, ANCHORS, lam=5.0)
    assert p5.total == pytest.approx(p5.loss1 + p5.loss2 + 5 * p5.loss3, rel=1e-12)


def test_box_gradient_is_linear_in_lambda(rng):
    s = random_samples(rng, 6)
    w = init_weights(TINY_ARCH, seed=2, dtype=np.float64)
    g0 = loss_and_grad(w, s, ANCHORS, 0.0, arch=TINY_ARCH)[1]
    g1 = loss_and_grad(w, s, ANCHORS, 1.0, arch=TINY_ARCH)[1]
    g5 = loss_and_grad(w, s, ANCHORS, 5.0, arch=TINY_ARCH)[1]
    for k in g0:
        np.testing.assert_allclose(g5[k] - g0[k], 5 * (g1[k] - g0[k]), rtol=1e-9, atol=1e-12)


def test_perfect_prediction_gives_zero_loss_and_gradient():
    """A network whose output layer is all bias reproduces one sample exactly."""
    arch = TINY_ARCH
    w = zero_weights(arch)
    A, B = 240, 180
    rp = np.array([[40.0, 50.0, 16.0, 42.0]])
    t = np.array([0.01, -0.02, 0.1, -0.05])
    box, _ = corrected_boxes(t[None], rp[:, :2], ANCHORS.sizes[[1]], A, B)
    z = np.full(arch.n_outputs, 0.0)
    z[:arch.n_classes] = -60.0
    z[1] = 60.0
    z[arch.n_classes] = 0.7
    z[arch.n_classes + 1:] = t
    w["out.b"] = z
    s = SampleSet(np.zeros((1, 2, 42, 42), np.uint8), rp, np.array([1]), np.array([0.7]), box)
    parts, grads = loss_and_grad(w, s, ANCHORS, arch=arch)
    assert parts.total < 1e-20
    for g in grads.values():
        assert np.max(np.abs(g)) < 1e-12


def test_gradient_tiny_network(rng):
    w = init_weights(TINY_ARCH, seed=5, dtype=np.float64)
    for k in w:
        if k.endswith(".b"):
            w[k] = rng.normal(0, 0.1, w[k].shape)
    s = random_samples(rng, 4, TINY_ARCH)
    worst, checked = finite_difference_check(w, s, TINY_ARCH, 40, rng)
    assert checked > 100
    assert worst < 1e-4


def test_gradient_full_network(rng):
    w = init_weights(DEFAULT_ARCH, seed=6, dtype=np.float64)
    for k in w:
        if k.endswith(".b"):
            w[k] = rng.normal(0, 0.1, w[k].shape)
    s = random_samples(rng, 5)
    worst, checked = finite_difference_check(w, s, DEFAULT_ARCH, 12, rng)
    assert checked > 80
    assert worst < 1e-3


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def test_training_rejects_set_without_positives(rng):
    with pytest.raises(ValueError):
        train(random_samples(rng, 8, positive=0.0), ANCHORS)
    with pytest.raises(ValueError):
        train(SampleSet.empty(), ANCHORS)


def test_training_is_deterministic(rng):
    s = random_samples(rng, 40, TINY_ARCH)
    cfg = TrainConfig(epochs=2, batch_size=16, dtype="float64", early_stop=False)
    a = train(s, ANCHORS, cfg, arch=TINY_ARCH)
    b = train(s, ANCHORS, cfg, arch=TINY_ARCH)
    for k in a.weights:
        np.testing.assert_array_equal(a.weights[k], b.weights[k])
    assert a.history == b.history


def test_overfit_small_set(rng):
    s = random_samples(rng, 32, density=0.2)
    cfg = TrainConfig(epochs=200, batch_size=32, learning_rate=0.001, early_stop=False,
                      val_fraction=0.0, dtype="float64")
    before = loss(init_weights(seed=cfg.seed), s, ANCHORS)
    res = train(s, ANCHORS, cfg)
    after = loss(res.weights, s, ANCHORS)
    assert np.array_equal(predict_classes(res.weights, s.patches), s.target_class)
    assert after.loss1 < 0.05 and after.loss2 < 1e-3
    # box targets are only partly learnable: see the saturation test below
    assert after.loss3 < before.loss3
    assert after.total < 0.15 * before.total


def test_saturated_box_coordinate_gets_no_gradient():
    s = random_samples(np.random.default_rng(0), 2, positive=1.0)
    s.target_bb[:] = 1.0
    raw = np.zeros((2, 10))
    raw[:, 1] = 5.0                       # argmax class 1
    raw[0, 6] = -20.0                     # x far left of the frame: clipped to 0
    raw[1, 6] = 0.01                      # x inside the frame
    out = Outputs(raw, None, None, None)
    _, dz = loss_terms(out, s, ANCHORS, 5.0, (240, 180), 5)
    assert dz[0, 6] == 0.0
    assert dz[1, 6] != 0.0


def test_early_stop_on_plateau(rng):
    s = random_samples(rng, 40, TINY_ARCH)
    # a learning rate this small cannot change the argmax class on the validation set
    cfg = TrainConfig(epochs=20, learning_rate=1e-12, patience=3, batch_size=16)
    res = train(s, ANCHORS, cfg, arch=TINY_ARCH)
    assert res.stopped_early
    assert len(res.history) == 4          # plateau from epoch 0, stop after 3 more
    assert res.best_epoch == 0


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(thr_ns=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay=1.5)


def test_sample_set_round_trip(tmp_path, rng):
    s = random_samples(rng, 5)
    s.save(tmp_path / "s.npz")
    t = SampleSet.load(tmp_path / "s.npz")
    np.testing.assert_array_equal(t.patches, s.patches)
    np.testing.assert_array_equal(t.target_box, s.target_box)
    assert len(SampleSet.concat([s, t])) == 10


# ---------------------------------------------------------------------------
# weights file
# ---------------------------------------------------------------------------

def test_weights_round_trip(tmp_path):
    w = init_weights(seed=9)
    save_weights(tmp_path / "w.bin", w, (240, 180))
    back, geom = load_weights(tmp_path / "w.bin")
    assert geom == (240, 180)
    assert set(back) == set(w)
    for k in w:
        np.testing.assert_array_equal(back[k], w[k].astype(np.float32))


def test_weights_file_starts_with_magic(tmp_path):
    save_weights(tmp_path / "w.bin", zero_weights(TINY_ARCH))
    assert (tmp_path / "w.bin").read_bytes()[:4] == b"NNDC"
    _, geom = load_weights(tmp_path / "w.bin")
    assert geom is None


@pytest.mark.parametrize("damage", ["magic", "flip", "truncate"])
def test_corrupt_weights_are_rejected(tmp_path, damage):
    p = tmp_path / "w.bin"
    save_weights(p, init_weights(TINY_ARCH))
    data = bytearray(p.read_bytes())
    if damage == "magic":
        data[0] = ord("X")
    elif damage == "flip":
        data[40] ^= 0xFF
    else:
        data = data[:len(data) // 2]
    p.write_bytes(bytes(data))
    with pytest.raises(WeightsFormatError):
        load_weights(p)


def test_architecture_variants_count_parameters():
    arch = Architecture(conv=(4, 8), hidden=(32,), n_classes=3)
    assert param_count(arch) == param_count(init_weights(arch))
