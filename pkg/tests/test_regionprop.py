import numpy as np
import pytest
from hypothesis import given, strategies as st

from ebbinnot.regionprop import (CCL_OPS_PER_ACTIVE, BoundingBox, active_pixel_factor, ccl_rp,
                                 enclosing_box, hist_rp, label_components, write_proposals_csv)
from oracles import flood_fill


def check_against_oracle(frame):
    c = label_components(frame)
    oracle = flood_fill(frame)
    assert len(c.boxes) == len(oracle)
    got = {}
    for k in range(1, len(c.boxes) + 1):
        ys, xs = np.nonzero(c.labels == k)
        got[frozenset(zip(ys.tolist(), xs.tolist()))] = (tuple(c.boxes[k - 1]), c.counts[k - 1])
    for pix, box in oracle:
        assert got[pix] == (box, len(pix))


class TestCCL:
    def test_diagonal_pixels_join(self):
        f = np.zeros((4, 4), bool)
        f[0, 0] = f[1, 1] = True
        (rp,) = ccl_rp(f, 1, 1)
        assert tuple(rp.box) == (0, 0, 2, 2)

    def test_empty(self):
        assert ccl_rp(np.zeros((60, 40), bool)) == []

    def test_u_shape_resolved(self):
        f = np.zeros((6, 7), bool)
        f[0:5, 1] = f[0:5, 5] = True
        f[4, 1:6] = True
        c = label_components(f)
        assert len(c.boxes) == 1 and tuple(c.boxes[0]) == (1, 0, 5, 5)

    def test_scaling(self):
        f = np.zeros((60, 40), bool)
        f[2:4, 3:5] = True
        (rp,) = ccl_rp(f, 6, 3)
        assert tuple(rp.box) == (18, 6, 12, 6) and rp.pixel_count == 4

    def test_cap_keeps_largest(self):
        f = np.zeros((20, 40), bool)
        for i in range(10):
            f[1, 4 * i:4 * i + 1 + i % 3] = True
        rps = ccl_rp(f, 1, 1, max_rp=3)
        assert [rp.pixel_count for rp in rps] == [3, 3, 3]
        assert [rp.box.x for rp in rps] == [8, 20, 32]

    def test_ops_charge(self):
        f = np.zeros((10, 10), bool)
        f[:3, :3] = True
        assert label_components(f).ops == 9 * CCL_OPS_PER_ACTIVE

    def test_random_frames_match_flood_fill(self, rng):
        for _ in range(200):
            check_against_oracle(rng.random((60, 40)) < rng.uniform(0.05, 0.6))

    @given(st.integers(0, 2**31), st.floats(0.05, 0.7))
    def test_partition_property(self, seed, density):
        frame = np.random.default_rng(seed).random((15, 20)) < density
        c = label_components(frame)
        # every active pixel has exactly one label and lies in its box
        assert np.array_equal(c.labels > 0, frame)
        for k, b in enumerate(c.boxes, 1):
            ys, xs = np.nonzero(c.labels == k)
            assert xs.min() >= b.x and xs.max() < b.x + b.w
            assert ys.min() >= b.y and ys.max() < b.y + b.h


class TestHist:
    def test_single_rectangle_tight(self):
        f = np.zeros((20, 20), bool)
        f[3:8, 5:12] = True
        (rp,) = hist_rp(f, 1, 1)
        assert tuple(rp.box) == (5, 3, 7, 5)

    def test_small_object_inherits_large_y_segment(self):
        f = np.zeros((30, 40), bool)
        f[2:20, 2:12] = True      # large object
        f[8:10, 25:27] = True     # small object sharing the y-extent
        rps = hist_rp(f, 1, 1)
        small = next(rp for rp in rps if rp.box.x == 25)
        assert (small.box.y, small.box.h) == (2, 18)

    def test_empty(self):
        assert hist_rp(np.zeros((10, 10), bool)) == []

    @given(st.integers(0, 2**31))
    def test_covers_active_pixels(self, seed):
        f = np.random.default_rng(seed).random((15, 20)) < 0.1
        rps = hist_rp(f, 1, 1, max_rp=1000)
        cover = np.zeros_like(f)
        for rp in rps:
            b = rp.box
            cover[int(b.y):int(b.y + b.h), int(b.x):int(b.x + b.w)] = True
        assert np.all(cover[f])


class TestBoxes:
    def test_clipped(self):
        assert tuple(BoundingBox(-5, 170, 20, 20).clipped(240, 180)) == (0, 170, 15, 10)

    def test_enclosing(self):
        b = enclosing_box([BoundingBox(0, 0, 2, 2), BoundingBox(5, 1, 1, 4)])
        assert tuple(b) == (0, 0, 6, 5)

    def test_active_pixel_factor(self):
        assert active_pixel_factor(np.zeros((6, 4), bool)) == (0.0, 0.0)
        full = active_pixel_factor(np.ones((6, 4), bool))
        assert full.alpha == CCL_OPS_PER_ACTIVE and full.ratio == 1.0

    def test_proposal_csv(self, tmp_path):
        f = np.zeros((4, 4), bool)
        f[1, 1] = True
        write_proposals_csv(tmp_path / "rp.csv", [(7, rp) for rp in ccl_rp(f, 6, 3)])
        lines = (tmp_path / "rp.csv").read_text().splitlines()
        assert lines[0] == "frame_idx,x,y,w,h,pixel_count"
        assert lines[1].split(",")[0] == "7"


def test_median_survivors_inside_scaled_boxes(rng):
    from ebbinnot.framegen import downsize, median_filter
    for _ in range(20):
        frame = median_filter(rng.random((180, 240)) < 0.3)
        rps = ccl_rp(downsize(frame, 6, 3), 6, 3, max_rp=10**6)
        cover = np.zeros_like(frame)
        for rp in rps:
            b = rp.box
            cover[int(b.y):int(b.y + b.h), int(b.x):int(b.x + b.w)] = True
        assert np.all(cover[frame])
