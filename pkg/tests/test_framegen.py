import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_stream, stream_of
from ebbinnot.framegen import (FramePlan, accumulate, downsize, dump_frame, extract_patch, iter_frames,
                               median_filter, median_filter_ops, pack_bits, read_pgm, unpack_bits,
                               write_pgm)
from oracles import sort_median


class TestAccumulate:
    def test_polarity_channels(self):
        s = stream_of([(1000, 5, 5, 1), (2000, 5, 5, 1), (2000, 5, 5, 0)])
        (f,) = accumulate(s, FramePlan(66_000, 0))
        assert f.index == 0
        assert np.count_nonzero(f.single) == 1 and f.single[5, 5]
        assert f.dual[0, 5, 5] and f.dual[1, 5, 5]

    def test_half_open_windows(self):
        s = stream_of([(0, 1, 1, 1), (66_000, 2, 2, 1)])
        frames = accumulate(s, FramePlan(66_000, 0))
        assert [f.index for f in frames] == [0, 1]
        assert frames[1].single[2, 2] and not frames[1].single[1, 1]

    def test_empty_stream(self):
        assert accumulate(stream_of([]), FramePlan(66_000, 0)) == []
        assert list(iter_frames(stream_of([]), FramePlan(66_000, 0), emit_empty=True, n_frames=3))[2].single.sum() == 0

    def test_skip_versus_emit_empty(self):
        s = stream_of([(0, 1, 1, 1), (200_000, 1, 1, 1)])
        assert [f.index for f in accumulate(s, FramePlan(66_000, 0))] == [0, 3]
        assert [f.index for f in accumulate(s, FramePlan(66_000, 0), emit_empty=True)] == [0, 1, 2, 3]

    def test_default_start_rounds_down_first_event(self):
        s = stream_of([(140_000, 1, 1, 1)])
        assert FramePlan().resolve_start(s) == 132_000
        assert [f.index for f in accumulate(s)] == [0]

    def test_rejects_nonpositive_t_F(self):
        with pytest.raises(ValueError):
            FramePlan(0)

    @given(st.integers(0, 2**31))
    def test_or_of_channels_is_single(self, seed):
        s = random_stream(np.random.default_rng(seed), 500)
        for f in accumulate(s, FramePlan(10_000, 0)):
            assert np.array_equal(f.dual[0] | f.dual[1], f.single)


class TestMedian:
    def test_all_zero(self):
        assert not median_filter(np.zeros((8, 8), bool)).any()

    def test_isolated_pixel_cleared(self):
        f = np.zeros((5, 5), bool)
        f[2, 2] = True
        assert not median_filter(f).any()

    def test_block_corners_cleared(self):
        f = np.zeros((9, 9), bool)
        f[2:7, 2:7] = True
        out = median_filter(f)
        expect = f.copy()
        for y, x in [(2, 2), (2, 6), (6, 2), (6, 6)]:
            expect[y, x] = False
        assert np.array_equal(out, expect)
        assert np.array_equal(out, sort_median(f))

    def test_even_window_rejected(self):
        with pytest.raises(ValueError):
            median_filter(np.zeros((4, 4), bool), 4)

    def test_matches_sort_median_on_random_frames(self, rng):
        for _ in range(50):
            f = rng.random((32, 32)) < rng.uniform(0.1, 0.9)
            assert np.array_equal(median_filter(f), sort_median(f))

    @given(st.integers(0, 2**31), st.sampled_from([3, 5]))
    def test_threshold_predicate(self, seed, p):
        f = np.random.default_rng(seed).random((12, 15)) < 0.5
        assert np.array_equal(median_filter(f, p), sort_median(f, p))

    def test_ops_model(self):
        f = np.zeros((180, 240), bool)
        assert median_filter_ops(f) == 2 * 180 * 240
        f[0, :10] = True
        assert median_filter_ops(f) == 2 * 180 * 240 + 10 * 9


class TestDownsize:
    def test_sensor_to_grid(self):
        assert downsize(np.zeros((180, 240), bool), 6, 3).shape == (60, 40)

    def test_identity(self, rng):
        f = rng.random((7, 9)) < 0.5
        assert np.array_equal(downsize(f, 1, 1), f)

    def test_index_arithmetic(self):
        f = np.zeros((180, 240), bool)
        f[2, 7] = True
        out = downsize(f, 6, 3)
        assert out[0, 1] and out.sum() == 1

    def test_floor_discards_partial_blocks(self):
        f = np.zeros((10, 10), bool)
        f[9, 9] = True
        assert downsize(f, 3, 3).shape == (3, 3) and not downsize(f, 3, 3).any()

    @given(st.integers(0, 2**31))
    def test_monotone(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.random((18, 24)) < 0.2
        b = a | (rng.random((18, 24)) < 0.2)
        assert np.all(downsize(a, 6, 3) <= downsize(b, 6, 3))


class TestPatch:
    def test_small_box_centred(self):
        dual = np.zeros((2, 60, 60), bool)
        dual[0, 20:30, 20:30] = True
        p = extract_patch(dual, (20, 20, 10, 10))
        assert p.shape == (2, 42, 42)
        assert p[0, 16:26, 16:26].all() and p[0].sum() == 100

    def test_exact_size_copy(self, rng):
        dual = rng.random((2, 50, 50)) < 0.5
        assert np.array_equal(extract_patch(dual, (3, 4, 42, 42)), dual[:, 4:46, 3:45])

    def test_per_axis_rule(self):
        dual = np.zeros((2, 100, 200), bool)
        dual[0, 10:30, 0:100] = True
        p = extract_patch(dual, (0, 10, 100, 20))
        # x: 42-wide crop centred on the box, y: 20 rows with 11/11 padding
        assert p[0, 11:31, :].all()
        assert not p[0, :11].any() and not p[0, 31:].any()

    def test_odd_padding_goes_bottom_right(self):
        dual = np.ones((2, 50, 50), bool)
        p = extract_patch(dual, (0, 0, 11, 11))
        assert p[0, 15:26, 15:26].all() and p[0].sum() == 121

    def test_degenerate_box(self):
        with pytest.raises(ValueError):
            extract_patch(np.zeros((2, 10, 10), bool), (1, 1, 0, 3))

    @given(st.integers(0, 2**31))
    def test_preserves_count_when_box_fits(self, seed):
        rng = np.random.default_rng(seed)
        dual = rng.random((2, 80, 80)) < 0.3
        w, h = rng.integers(1, 43, 2)
        x, y = rng.integers(0, 80 - w), rng.integers(0, 80 - h)
        p = extract_patch(dual, (x, y, w, h))
        assert p.sum() == dual[:, y:y + h, x:x + w].sum()


class TestDumps:
    def test_bit_packing_round_trip(self, rng):
        f = rng.random((17, 23)) < 0.5
        assert np.array_equal(unpack_bits(pack_bits(f), f.shape), f)

    def test_pgm_round_trip(self, tmp_path, rng):
        f = rng.random((6, 9)) < 0.5
        write_pgm(tmp_path / "a.pgm", f)
        assert (tmp_path / "a.pgm").read_bytes()[:2] == b"P5"
        assert np.array_equal(read_pgm(tmp_path / "a.pgm"), f * 255)

    def test_dual_dump(self, tmp_path):
        (f,) = accumulate(stream_of([(0, 1, 2, 1), (5, 3, 4, 0)], 8, 8), FramePlan(66_000, 0))
        dump_frame(tmp_path / "k", f)
        assert read_pgm(tmp_path / "k.on.pgm")[2, 1] == 255
        assert read_pgm(tmp_path / "k.off.pgm")[4, 3] == 255
        assert read_pgm(tmp_path / "k.pgm").sum() == 2 * 255
