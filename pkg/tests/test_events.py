import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_stream, stream_of
from ebbinnot.events import (EventFormatError, EventStream, SensorGeometry, make_events, nn_filter,
                             nn_filter_ops, read_events, refractory_filter, write_events)
from ebbinnot.framegen import iter_frames, median_filter, window_sum


def write_text(tmp_path, text, name="ev.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestRead:
    def test_minimal_csv(self, tmp_path):
        s = read_events(write_text(tmp_path, "# geometry=240x180\n0,3,4,1\n10,3,4,0\n"))
        assert s.geometry == SensorGeometry(240, 180)
        assert [tuple(e) for e in s] == [(0, 3, 4, 1), (10, 3, 4, 0)]

    def test_empty_body(self, tmp_path):
        s = read_events(write_text(tmp_path, "# geometry=240x180\n"))
        assert len(s) == 0

    def test_out_of_bounds_names_coordinate(self, tmp_path):
        with pytest.raises(EventFormatError, match="x=300"):
            read_events(write_text(tmp_path, "# geometry=240x180\n5,300,4,1\n"))

    def test_malformed_line_reports_line_number(self, tmp_path):
        with pytest.raises(EventFormatError, match=":3:"):
            read_events(write_text(tmp_path, "# geometry=240x180\n0,1,1,1\n5,1,x,1\n"))

    def test_missing_header(self, tmp_path):
        with pytest.raises(EventFormatError, match="geometry"):
            read_events(write_text(tmp_path, "0,1,1,1\n"))

    def test_decreasing_timestamps_rejected_or_sorted(self, tmp_path):
        p = write_text(tmp_path, "# geometry=10x10\n5,1,1,1\n3,2,2,0\n")
        with pytest.raises(EventFormatError, match="decreasing"):
            read_events(p)
        s = read_events(p, sort=True)
        assert s.events["t"].tolist() == [3, 5]

    def test_truncated_binary(self, tmp_path):
        s = stream_of([(0, 1, 1, 1), (4, 2, 2, 0)])
        p = tmp_path / "ev.bin"
        write_events(s, p)
        p.write_bytes(p.read_bytes()[:-3])
        with pytest.raises(EventFormatError, match="offset"):
            read_events(p)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "ev.bin"
        p.write_bytes(b"XXXX\x01\x00\x01\x00")
        with pytest.raises(EventFormatError, match="magic"):
            read_events(p)


class TestRoundTrip:
    @pytest.mark.parametrize("suffix", [".csv", ".bin"])
    def test_random_round_trip(self, tmp_path, rng, suffix):
        s = random_stream(rng, 1000, 240, 180)
        p = tmp_path / f"ev{suffix}"
        write_events(s, p)
        assert read_events(p) == s

    def test_empty_stream_header_only(self, tmp_path):
        p = tmp_path / "ev.csv"
        write_events(EventStream(SensorGeometry(240, 180)), p)
        assert p.read_text() == "# geometry=240x180\n"

    def test_csv_bin_csv_byte_identical(self, tmp_path, rng):
        s = random_stream(rng, 300)
        write_events(s, tmp_path / "a.csv")
        write_events(read_events(tmp_path / "a.csv"), tmp_path / "b.bin")
        write_events(read_events(tmp_path / "b.bin"), tmp_path / "c.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()

    def test_large_timestamps_survive(self, tmp_path):
        t = 5 * 3600 * 10**6  # five hours in microseconds, beyond 32 bits
        s = stream_of([(t, 0, 0, 1), (t + 1, 1, 1, 0)])
        for suffix in (".csv", ".bin"):
            write_events(s, tmp_path / f"x{suffix}")
            assert read_events(tmp_path / f"x{suffix}") == s


def refractory_oracle(events, t_refr):
    last, keep = {}, []
    for t, x, y, _ in events:
        if (x, y) not in last or t - last[(x, y)] >= t_refr:
            last[(x, y)] = t
            keep.append(True)
        else:
            keep.append(False)
    return keep


def nn_oracle(events, t_corr, r):
    """Brute-force scan over all earlier events."""
    keep = []
    for i, (t, x, y, _) in enumerate(events):
        keep.append(any(abs(x - x2) <= r and abs(y - y2) <= r and t - t2 <= t_corr
                        for t2, x2, y2, _ in events[:i]))
    return keep


class TestRefractory:
    def test_single_pixel_example(self):
        s = stream_of([(0, 5, 5, 1), (30_000, 5, 5, 1), (80_000, 5, 5, 0)])
        assert refractory_filter(s, 50_000).events["t"].tolist() == [0, 80_000]

    def test_distinct_pixels_all_kept(self):
        s = stream_of([(i, i, 0, 1) for i in range(10)])
        assert len(refractory_filter(s, 10**6)) == 10

    def test_empty(self):
        assert len(refractory_filter(stream_of([]), 100)) == 0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            refractory_filter(stream_of([]), 0)

    @given(st.integers(0, 2**31), st.integers(1, 50_000))
    def test_matches_oracle_and_idempotent(self, seed, t_refr):
        s = random_stream(np.random.default_rng(seed), 200, 4, 4)
        out = refractory_filter(s, t_refr)
        keep = refractory_oracle(list(s), t_refr)
        assert np.array_equal(out.events, s.events[np.array(keep, dtype=bool)])
        assert refractory_filter(out, t_refr) == out


class TestNNFilter:
    def test_lone_event_dropped(self):
        assert len(nn_filter(stream_of([(0, 10, 10, 1)]), 5000)) == 0

    def test_adjacent_within_t_corr_kept(self):
        s = stream_of([(0, 10, 10, 1), (1000, 11, 10, 0)])
        assert nn_filter(s, 5000).events["t"].tolist() == [1000]

    def test_outside_t_corr_dropped(self):
        s = stream_of([(0, 10, 10, 1), (6000, 11, 10, 0)])
        assert len(nn_filter(s, 5000)) == 0

    def test_empty(self):
        assert len(nn_filter(stream_of([]))) == 0

    @given(st.integers(0, 2**31), st.integers(1, 2), st.integers(1, 30_000))
    def test_matches_brute_force(self, seed, r, t_corr):
        s = random_stream(np.random.default_rng(seed), 150, 8, 8)
        out = nn_filter(s, t_corr, r)
        keep = np.array(nn_oracle(list(s), t_corr, r), dtype=bool)
        assert np.array_equal(out.events, s.events[keep])

    def test_unbounded_t_corr_passes_all_but_first_arrivals(self):
        # a dense block: after the first event every later one has support
        ev = [(i, 5 + i % 3, 5 + (i // 3) % 3, 1) for i in range(30)]
        out = nn_filter(stream_of(ev), t_corr=10**12)
        assert out.events["t"].tolist() == list(range(1, 30))

    def test_ops_model(self):
        assert nn_filter_ops(10) == 10 * 11
        assert nn_filter_ops(1, radius=2) == 27


@given(st.integers(0, 2**31))
def test_filters_select_subsequences(seed):
    s = random_stream(np.random.default_rng(seed), 300)
    for out in (refractory_filter(s, 2000), nn_filter(s, 2000)):
        # every output event appears in the input, in the same order
        it = iter(s.events.tolist())
        assert all(any(e == f for f in it) for e in out.events.tolist())


@given(st.integers(0, 2**31))
def test_median_survivor_has_neighbour_support(seed):
    """A pixel kept by the median filter has at least floor(p^2/2)+1 active
    pixels in its window, hence at least one active neighbour as well."""
    frame = np.random.default_rng(seed).random((20, 20)) < 0.4
    kept = median_filter(frame, 3)
    sums = window_sum(frame, 3)
    assert np.all(sums[kept] >= 5)
    neighbours = sums - frame
    assert np.all(neighbours[kept] >= 1)
