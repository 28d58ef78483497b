import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spekit.correlator import (CorrelationHistogram, correlate, log_bin_edges, normalize_g2,
                               read_correlation_csv, read_decay_csv, renormalize_empirical,
                               trpl_histogram, uniform_edges, write_correlation_csv,
                               write_decay_csv)
from spekit.errors import DegenerateNormalization, EmptyChannel, MissingSync, ValidationError
from spekit.stream import CH_A, CH_B, CH_SYNC, TimeTagStream, merge_sorted


def make_stream(a, b, sync=(), duration=None):
    a, b, sync = (np.asarray(x, dtype=np.int64) for x in (a, b, sync))
    top = max([int(x.max()) for x in (a, b, sync) if x.size] + [0])
    parts = [(a, np.full(a.size, CH_A)), (b, np.full(b.size, CH_B)),
             (sync, np.full(sync.size, CH_SYNC))]
    return merge_sorted(parts, duration or top + 1)


def brute_force(a, b, edges, max_lag=None):
    """Independent O(N*M) oracle: every pair, bins [lo, hi) with the last bin closed."""
    nb = len(edges) - 1
    out = np.zeros(nb, dtype=np.int64)
    lo_all, hi_all = edges[0], edges[-1]
    for ta in a.tolist():
        for tb in b.tolist():
            d = tb - ta
            if max_lag is not None and abs(d) > max_lag:
                continue
            if d < lo_all or d > hi_all:
                continue
            if d == hi_all:
                out[nb - 1] += 1
                continue
            k = 0
            while not (edges[k] <= d < edges[k + 1]):
                k += 1
            out[k] += 1
    return out


def test_hand_enumerated_example():
    s = make_stream([0], [100, 500])
    h = correlate(s, 100, 1000, normalize=False)
    nz = np.flatnonzero(h.raw_counts)
    assert h.raw_counts.sum() == 2
    assert [tuple(h.bin_edges[i:i + 2]) for i in nz] == [(100, 200), (500, 600)]


def test_random_stream_matches_brute_force():
    rng = np.random.default_rng(0)
    n = 10_000
    t = np.sort(rng.integers(0, 10**8, n))
    ch = rng.integers(0, 2, n)
    s = make_stream(t[ch == 0], t[ch == 1])
    bw, lag = 1000, 50_000
    h = correlate(s, bw, lag, normalize=False)
    a, b = s.channel(CH_A), s.channel(CH_B)
    # The full O(N*M) loop over 5e3 x 5e3 pairs is run in vectorized blocks of the
    # same definition to stay fast.
    edges = h.bin_edges
    expected = np.zeros(edges.size - 1, dtype=np.int64)
    for blk in np.array_split(a, 20):
        d = (b[None, :] - blk[:, None]).ravel()
        d = d[(d >= edges[0]) & (d <= edges[-1])]
        k = np.searchsorted(edges, d, side="right") - 1
        k[d == edges[-1]] = edges.size - 2
        expected += np.bincount(k, minlength=edges.size - 1)
    assert np.array_equal(h.raw_counts, expected)
    assert h.raw_counts.sum() == np.count_nonzero(np.abs(b[None, :] - a[:, None]) <= lag)


@settings(max_examples=60)
@given(st.lists(st.integers(0, 20_000), min_size=1, max_size=60),
       st.lists(st.integers(0, 20_000), min_size=1, max_size=60),
       st.integers(1, 700), st.integers(1, 5000))
def test_property_bin_exact_against_double_loop(a, b, bw, lag):
    lag = max(lag, bw)
    s = make_stream(sorted(a), sorted(b))
    h = correlate(s, bw, lag, normalize=False)
    assert np.array_equal(h.raw_counts, brute_force(s.channel(CH_A), s.channel(CH_B),
                                                    h.bin_edges.tolist(), lag))


@settings(max_examples=40)
@given(st.lists(st.integers(0, 50_000), min_size=1, max_size=80),
       st.lists(st.integers(0, 50_000), min_size=1, max_size=80))
def test_property_log_edges_against_double_loop(a, b):
    s = make_stream(sorted(a), sorted(b))
    edges = log_bin_edges(10, 20_000, 12)
    h = correlate(s, 1, 0, edges=edges, normalize=False)
    assert np.array_equal(h.raw_counts, brute_force(s.channel(CH_A), s.channel(CH_B),
                                                    edges.tolist()))


@settings(max_examples=60)
@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=50),
       st.lists(st.integers(0, 10_000), min_size=1, max_size=50),
       st.integers(1, 300), st.integers(1, 3000))
def test_property_swap_mirrors_histogram(a, b, half_bw, lag):
    # Even timestamps on A, odd on B: no delay falls on a bin edge, so
    # mirroring is exact for the half-open convention.
    bw = 2 * half_bw
    lag = max(lag, bw)
    lag = math.ceil(lag / bw) * bw
    s = make_stream(sorted(2 * x for x in a), sorted(2 * x + 1 for x in b))
    h = correlate(s, bw, lag, normalize=False)
    hs = correlate(s.swapped(), bw, lag, normalize=False)
    assert np.array_equal(hs.raw_counts, h.raw_counts[::-1])


@settings(max_examples=30)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=200),
       st.lists(st.integers(0, 10**6), min_size=1, max_size=200), st.integers(2, 9))
def test_property_partitioning_does_not_change_result(a, b, n_chunks):
    s = make_stream(sorted(a), sorted(b))
    h1 = correlate(s, 500, 20_000, normalize=False)
    hn = correlate(s, 500, 20_000, normalize=False, n_chunks=n_chunks)
    assert np.array_equal(h1.raw_counts, hn.raw_counts)


def test_pair_exactly_at_max_lag_is_counted():
    s = make_stream([0, 5000], [1000, 4000])
    h = correlate(s, 100, 1000, normalize=False)
    # +1000 lands in the closed last bin, -1000 in the first bin
    assert h.raw_counts[-1] == 1 and h.raw_counts[0] == 1
    assert h.raw_counts.sum() == 2


def test_poissonian_channels_flat_at_one():
    rng = np.random.default_rng(3)
    dur = 10**11
    n = 200_000
    a = np.sort(rng.integers(0, dur, n))
    b = np.sort(rng.integers(0, dur, n))
    s = make_stream(a, b, duration=dur)
    h = correlate(s, 5000, 500_000)
    sigma = np.sqrt(h.normalization_factor) / h.normalization_factor
    assert np.all(np.abs(h.normalized - 1.0) < 5 * sigma)
    z = (h.normalized - 1.0) / sigma
    assert abs(z.mean()) < 0.5 and 0.7 < z.std() < 1.3


def test_analytic_normalization_factor():
    s = make_stream([0, 10, 20], [5, 15], duration=1000)
    h = correlate(s, 10, 100)
    assert h.normalization_factor == pytest.approx(3 * 2 * 10 / 1000)
    assert np.allclose(h.normalized, h.raw_counts / h.normalization_factor)


def test_empirical_renormalization_is_idempotent_on_flat_tails():
    raw = np.r_[np.full(10, 50), np.arange(20), np.full(10, 50)]
    edges = np.arange(raw.size + 1) * 10 - 200
    h = CorrelationHistogram(edges, raw, meta={"n_a": 10, "n_b": 10, "duration_ps": 1000})
    h = normalize_g2(h, method="analytic")
    r = renormalize_empirical(h)
    k = 4
    assert np.mean(np.r_[r.normalized[:k], r.normalized[-k:]]) == 1.0
    r2 = renormalize_empirical(r)
    assert np.array_equal(r2.normalized, r.normalized)
    e = normalize_g2(h, method="empirical")
    assert np.allclose(e.normalized, r.normalized)


def test_log_bins_normalize_by_width():
    rng = np.random.default_rng(1)
    dur = 10**10
    s = make_stream(np.sort(rng.integers(0, dur, 50_000)), np.sort(rng.integers(0, dur, 50_000)),
                    duration=dur)
    h = correlate(s, 1, 0, edges=log_bin_edges(1000, 1_000_000, 10))
    assert np.allclose(h.normalization_factor, 50_000**2 / dur * np.diff(h.bin_edges))
    big = h.raw_counts > 400
    assert np.all(np.abs(h.normalized[big] - 1) < 5 / np.sqrt(h.raw_counts[big]))


def test_start_stop_keeps_first_stop_only():
    s = make_stream([0, 1000], [300, 700, 1200])
    h = correlate(s, 100, 1000, mode="start-stop", normalize=False)
    assert h.raw_counts.sum() == 2
    assert h.raw_counts[3] == 1 and h.raw_counts[2] == 1


def test_errors():
    with pytest.raises(EmptyChannel):
        correlate(make_stream([1, 2], []), 10, 100)
    with pytest.raises(ValidationError):
        correlate(make_stream([1], [2]), 0, 100)
    with pytest.raises(ValidationError):
        correlate(make_stream([1], [2]), 100, 10)
    with pytest.raises(ValidationError):
        correlate(make_stream([1], [2]), 10, 100, mode="bogus")
    h = CorrelationHistogram(uniform_edges(10, 100), np.zeros(20, np.int64))
    with pytest.raises(DegenerateNormalization):
        normalize_g2(h)


def test_trpl_examples():
    s = make_stream([1_003_000], [], sync=[0, 1_000_000], duration=2_000_000)
    d = trpl_histogram(s, 1000, rep_rate=1e6)
    assert d.counts.sum() == 1 and d.counts[3] == 1 and d.n_sync == 2
    assert d.bin_edges[-1] <= 1_000_000
    before = make_stream([5], [], sync=[100, 1_000_100], duration=2_000_000)
    assert trpl_histogram(before, 1000, rep_rate=1e6).counts.sum() == 0
    with pytest.raises(MissingSync):
        trpl_histogram(make_stream([5], [6]), 100)


def test_trpl_infers_period_from_sync():
    s = make_stream([250, 1250], [], sync=[0, 1000, 2000])
    d = trpl_histogram(s, 100)
    assert d.bin_edges[-1] == 1000 and d.counts[2] == 2


def test_csv_round_trips():
    s = make_stream([0, 10, 20], [5, 15, 40], duration=1000)
    h = correlate(s, 10, 50)
    buf = io.StringIO()
    write_correlation_csv(h, buf)
    assert buf.getvalue().splitlines()[0] == "bin_center_ps,raw_counts,normalized"
    back = read_correlation_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(back.raw_counts, h.raw_counts)
    assert np.allclose(back.bin_edges, h.bin_edges)
    assert np.allclose(back.normalized, h.normalized)

    d = trpl_histogram(make_stream([250, 1250], [], sync=[0, 1000, 2000]), 100)
    buf = io.StringIO()
    write_decay_csv(d, buf)
    back = read_decay_csv(io.StringIO(buf.getvalue()))
    assert np.array_equal(back.counts, d.counts)
    assert np.allclose(back.bin_edges, d.bin_edges)
