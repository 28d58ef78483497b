"""Coincidence histograms from time-tag streams.

``correlate`` counts every (A, B) pair with ``|t_B - t_A| <= max_lag`` using a
sorted two-pointer sweep, so the cost is O(N + M + pairs) rather than
O(N*M). Bins are half-open ``[lo, hi)`` except the last one, which also
takes delays equal to its upper edge (numpy.histogram convention), so a pair
at exactly ``+max_lag`` is never lost.

Timestamps are integer picoseconds; all bin arithmetic is integer.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._io import text_out
from ._accel import USE_NUMBA, njit, prange
from .errors import DegenerateNormalization, EmptyChannel, MissingSync, ValidationError
from .stream import CH_A, CH_B, CH_SYNC, TimeTagStream

_PAIR_BLOCK = 1 << 22


@dataclass
class CorrelationHistogram:
    bin_edges: np.ndarray  # ps
    raw_counts: np.ndarray
    normalized: np.ndarray | None = None
    normalization_factor: float | np.ndarray | None = None
    lag_range: tuple = (0, 0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges)
        self.raw_counts = np.asarray(self.raw_counts)
        if self.raw_counts.size != self.bin_edges.size - 1:
            raise ValidationError("need len(raw_counts) == len(bin_edges) - 1")

    @property
    def bin_centers(self):
        e = self.bin_edges.astype(float)
        return 0.5 * (e[1:] + e[:-1])

    @property
    def bin_widths(self):
        return np.diff(self.bin_edges.astype(float))

    @property
    def uniform(self):
        w = np.diff(self.bin_edges)
        return bool(np.all(w == w[0]))

    def expected_per_bin(self):
        """Accidental-coincidence expectation per bin (the g2 = 1 level in raw counts)."""
        f = self.normalization_factor
        if f is None:
            raise DegenerateNormalization("histogram has not been normalized")
        return np.broadcast_to(np.asarray(f, dtype=float), self.raw_counts.shape)


@dataclass
class DecayHistogram:
    bin_edges: np.ndarray  # ps from the preceding sync
    counts: np.ndarray
    n_sync: int
    rep_rate: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def bin_centers(self):
        e = self.bin_edges.astype(float)
        return 0.5 * (e[1:] + e[:-1])

    @property
    def bin_width(self):
        return float(self.bin_edges[1] - self.bin_edges[0])


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(parallel=True, cache=True)
def _sweep_uniform_numba(a, b, bin_width, k_neg, nbins, max_lag, n_chunks):
    na = a.size
    nb = b.size
    part = np.zeros((n_chunks, nbins), dtype=np.int64)
    offset = k_neg * bin_width
    for c in prange(n_chunks):
        i0 = c * na // n_chunks
        i1 = (c + 1) * na // n_chunks
        if i0 >= i1:
            continue
        j = np.searchsorted(b, a[i0] - max_lag)
        for i in range(i0, i1):
            lo = a[i] - max_lag
            hi = a[i] + max_lag
            while j < nb and b[j] < lo:
                j += 1
            k = j
            while k < nb and b[k] <= hi:
                idx = (b[k] - a[i] + offset) // bin_width
                if idx >= nbins:
                    idx = nbins - 1
                part[c, idx] += 1
                k += 1
    out = np.zeros(nbins, dtype=np.int64)
    for c in range(n_chunks):
        out += part[c]
    return out


@njit(cache=True)
def _sweep_edges_numba(a, b, edges):
    nbins = edges.size - 1
    lo_lag = edges[0]
    hi_lag = edges[-1]
    out = np.zeros(nbins, dtype=np.int64)
    nb = b.size
    j = 0
    for i in range(a.size):
        while j < nb and b[j] - a[i] < lo_lag:
            j += 1
        k = j
        while k < nb and b[k] - a[i] <= hi_lag:
            d = b[k] - a[i]
            idx = np.searchsorted(edges, d, side="right") - 1
            if idx >= nbins:
                idx = nbins - 1
            out[idx] += 1
            k += 1
    return out


@njit(cache=True)
def _start_stop_numba(a, b, bin_width, nbins, max_lag):
    out = np.zeros(nbins, dtype=np.int64)
    nb = b.size
    j = 0
    for i in range(a.size):
        while j < nb and b[j] < a[i]:
            j += 1
        if j == nb:
            break
        d = b[j] - a[i]
        if d <= max_lag:
            idx = d // bin_width
            if idx >= nbins:
                idx = nbins - 1
            out[idx] += 1
    return out


def _pair_blocks(lo, hi):
    """Yield (i0, i1) ranges of A so that each block holds at most ~_PAIR_BLOCK pairs."""
    cnt = hi - lo
    cum = np.cumsum(cnt)
    i0 = 0
    n = cnt.size
    while i0 < n:
        base = cum[i0 - 1] if i0 else 0
        i1 = int(np.searchsorted(cum, base + _PAIR_BLOCK, side="right"))
        i1 = max(i1, i0 + 1)
        yield i0, min(i1, n)
        i0 = i1


def _pair_delays(a, b, lo, hi, i0, i1):
    cnt = hi[i0:i1] - lo[i0:i1]
    total = int(cnt.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    rep = np.repeat(np.arange(i0, i1), cnt)
    first = np.repeat(np.cumsum(cnt) - cnt, cnt)
    jb = np.repeat(lo[i0:i1], cnt) + (np.arange(total) - first)
    return b[jb] - a[rep]


def _sweep_uniform_numpy(a, b, bin_width, k_neg, nbins, max_lag, n_chunks=1):
    lo = np.searchsorted(b, a - max_lag, side="left")
    hi = np.searchsorted(b, a + max_lag, side="right")
    out = np.zeros(nbins, dtype=np.int64)
    for i0, i1 in _pair_blocks(lo, hi):
        d = _pair_delays(a, b, lo, hi, i0, i1)
        idx = np.minimum((d + k_neg * bin_width) // bin_width, nbins - 1)
        out += np.bincount(idx, minlength=nbins)
    return out


def _sweep_edges_numpy(a, b, edges):
    nbins = edges.size - 1
    lo = np.searchsorted(b, a + edges[0], side="left")
    hi = np.searchsorted(b, a + edges[-1], side="right")
    out = np.zeros(nbins, dtype=np.int64)
    for i0, i1 in _pair_blocks(lo, hi):
        d = _pair_delays(a, b, lo, hi, i0, i1)
        idx = np.minimum(np.searchsorted(edges, d, side="right") - 1, nbins - 1)
        out += np.bincount(idx, minlength=nbins)
    return out


def _start_stop_numpy(a, b, bin_width, nbins, max_lag):
    j = np.searchsorted(b, a, side="left")
    ok = j < b.size
    d = b[j[ok]] - a[ok]
    d = d[d <= max_lag]
    idx = np.minimum(d // bin_width, nbins - 1)
    return np.bincount(idx, minlength=nbins).astype(np.int64)


if USE_NUMBA:
    _sweep_uniform, _sweep_edges, _start_stop = (
        _sweep_uniform_numba, _sweep_edges_numba, _start_stop_numba)
else:
    _sweep_uniform, _sweep_edges, _start_stop = (
        _sweep_uniform_numpy, _sweep_edges_numpy, _start_stop_numpy)


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def uniform_edges(bin_width, max_lag):
    k = math.ceil(max_lag / bin_width)
    return np.arange(-k, k + 1, dtype=np.int64) * int(bin_width)


def log_bin_edges(min_lag, max_lag, n_per_side):
    """Symmetric logarithmic edges: +-[min_lag .. max_lag] plus one central bin."""
    if not 0 < min_lag < max_lag:
        raise ValidationError("need 0 < min_lag < max_lag")
    pos = np.unique(np.rint(np.geomspace(min_lag, max_lag, n_per_side + 1)).astype(np.int64))
    return np.concatenate((-pos[::-1], pos))


def _channels(stream):
    a = stream.channel(CH_A)
    b = stream.channel(CH_B)
    if a.size == 0 or b.size == 0:
        raise EmptyChannel("both channel A and channel B need at least one tag")
    return a, b


def correlate(stream: TimeTagStream, bin_width, max_lag, *, edges=None, mode="full",
              n_chunks=1, normalize=True) -> CorrelationHistogram:
    """Histogram of B-minus-A delays (ps).

    ``mode="start-stop"`` keeps only the first B after each A (positive lags).
    ``edges`` overrides the uniform grid (e.g. :func:`log_bin_edges`).
    ``n_chunks`` partitions A for the parallel kernel; the result does not
    depend on it.
    """
    bin_width = int(bin_width)
    max_lag = int(max_lag)
    if bin_width <= 0:
        raise ValidationError("bin_width must be positive")
    if edges is None and max_lag < bin_width:
        raise ValidationError("max_lag must be >= bin_width")
    a, b = _channels(stream)
    n_chunks = max(1, int(n_chunks))

    if mode == "start-stop":
        nbins = math.ceil(max_lag / bin_width)
        e = np.arange(nbins + 1, dtype=np.int64) * bin_width
        raw = _start_stop(a, b, bin_width, nbins, max_lag)
        hist = CorrelationHistogram(e, raw, lag_range=(0, max_lag), meta={"mode": mode})
    elif mode != "full":
        raise ValidationError(f"unknown correlation mode {mode!r}")
    elif edges is None:
        e = uniform_edges(bin_width, max_lag)
        k = (e.size - 1) // 2
        if USE_NUMBA:
            raw = _sweep_uniform(a, b, bin_width, k, e.size - 1, max_lag, n_chunks)
        else:
            raw = _sweep_uniform(a, b, bin_width, k, e.size - 1, max_lag)
        hist = CorrelationHistogram(e, raw, lag_range=(-max_lag, max_lag), meta={"mode": mode})
    else:
        e = np.asarray(edges, dtype=np.int64)
        if e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValidationError("edges must be strictly increasing")
        raw = _sweep_edges(a, b, e)
        hist = CorrelationHistogram(e, raw, lag_range=(int(e[0]), int(e[-1])),
                                    meta={"mode": mode})
    hist.meta.update(n_a=int(a.size), n_b=int(b.size), duration_ps=stream.duration)
    if normalize:
        hist = normalize_g2(hist, stream)
    return hist


def normalize_g2(hist: CorrelationHistogram, stream: TimeTagStream | None = None,
                 method="analytic", outer_fraction=0.2) -> CorrelationHistogram:
    """Normalize so that uncorrelated light gives g2 = 1. No background subtraction.

    ``analytic``: expected accidentals per bin, ``N_A * N_B * width / T``.
    ``empirical``: mean of the outermost ``outer_fraction`` of bins (half per side).
    """
    raw = hist.raw_counts.astype(float)
    if method == "analytic":
        if stream is not None:
            n_a, n_b, dur = stream.count(CH_A), stream.count(CH_B), stream.duration
        else:
            n_a, n_b, dur = hist.meta.get("n_a", 0), hist.meta.get("n_b", 0), \
                hist.meta.get("duration_ps", 0)
        if n_a == 0 or n_b == 0 or dur <= 0:
            raise DegenerateNormalization("zero count rate on a channel")
        density = n_a * n_b / dur
        factor = density * hist.bin_widths
        if hist.uniform:
            factor = float(factor[0])
    elif method == "empirical":
        if not hist.uniform:
            raise ValidationError("empirical normalization needs uniform bins")
        n = raw.size
        k = max(1, int(round(n * outer_fraction / 2)))
        factor = float(np.mean(np.concatenate((raw[:k], raw[-k:]))))
        if factor <= 0:
            raise DegenerateNormalization("outer bins are empty")
    else:
        raise ValidationError(f"unknown normalization {method!r}")
    return CorrelationHistogram(hist.bin_edges, hist.raw_counts, raw / factor, factor,
                                hist.lag_range, {**hist.meta, "normalization": method})


def renormalize_empirical(hist: CorrelationHistogram, outer_fraction=0.2):
    """Rescale ``hist.normalized`` so its outer-bin mean is exactly one."""
    if hist.normalized is None:
        raise DegenerateNormalization("histogram has no normalized values")
    vals = np.asarray(hist.normalized, dtype=float)
    n = vals.size
    k = max(1, int(round(n * outer_fraction / 2)))
    scale = float(np.mean(np.concatenate((vals[:k], vals[-k:]))))
    if scale <= 0:
        raise DegenerateNormalization("outer bins are empty")
    factor = hist.expected_per_bin() * scale
    if hist.uniform:
        factor = float(factor[0])
    return CorrelationHistogram(hist.bin_edges, hist.raw_counts, vals / scale, factor,
                                hist.lag_range, {**hist.meta, "normalization": "empirical"})


def _sync_period(stream, rep_rate):
    if rep_rate:
        return 1e12 / rep_rate
    exc = stream.metadata.get("excitation") or {}
    if exc.get("rep_rate"):
        return 1e12 / exc["rep_rate"]
    sync = stream.channel(CH_SYNC)
    if sync.size < 2:
        raise ValidationError("cannot infer the repetition rate; pass rep_rate")
    return float(np.median(np.diff(sync)))


def trpl_histogram(stream: TimeTagStream, bin_width, rep_rate=None) -> DecayHistogram:
    """Histogram of photon delay to the most recent preceding SYNC, over [0, 1/rep_rate)."""
    bin_width = int(bin_width)
    if bin_width <= 0:
        raise ValidationError("bin_width must be positive")
    sync = stream.channel(CH_SYNC)
    if sync.size == 0:
        raise MissingSync("stream has no SYNC tags")
    period = _sync_period(stream, rep_rate)
    nbins = int(period // bin_width)
    if nbins < 1:
        raise ValidationError("bin_width exceeds the pulse period")
    photons = stream.timestamps[stream.channels != CH_SYNC].astype(np.int64)
    k = np.searchsorted(sync, photons, side="right") - 1
    ok = k >= 0
    delay = photons[ok] - sync[k[ok]]
    delay = delay[delay < nbins * bin_width]
    counts = np.bincount(delay // bin_width, minlength=nbins).astype(np.int64)
    edges = np.arange(nbins + 1, dtype=np.int64) * bin_width
    return DecayHistogram(edges, counts, int(sync.size), 1e12 / period)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_correlation_csv(hist: CorrelationHistogram, path):
    norm = hist.normalized if hist.normalized is not None else np.full(hist.raw_counts.size, np.nan)
    with text_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center_ps", "raw_counts", "normalized"])
        for c, r, g in zip(hist.bin_centers, hist.raw_counts, norm):
            w.writerow([repr(float(c)), int(r), repr(float(g))])


def read_correlation_csv(path) -> CorrelationHistogram:
    data = np.genfromtxt(path, delimiter=",", names=True)
    centers = np.atleast_1d(data["bin_center_ps"])
    raw = np.atleast_1d(data["raw_counts"]).astype(np.int64)
    norm = np.atleast_1d(data["normalized"])
    if centers.size < 2:
        raise ValidationError("need at least two bins")
    width = centers[1] - centers[0]
    edges = np.append(centers - width / 2, centers[-1] + width / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(norm > 0, raw / norm, np.nan)
    factor = float(np.nanmedian(ratio)) if np.any(np.isfinite(ratio)) else None
    return CorrelationHistogram(edges, raw, norm, factor, (edges[0], edges[-1]),
                                {"source": str(path)})


def write_decay_csv(decay: DecayHistogram, path):
    with text_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center_ps", "counts"])
        for c, n in zip(decay.bin_centers, decay.counts):
            w.writerow([repr(float(c)), int(n)])


def read_decay_csv(path, n_sync=0) -> DecayHistogram:
    data = np.genfromtxt(path, delimiter=",", names=True)
    centers = np.atleast_1d(data["bin_center_ps"])
    counts = np.atleast_1d(data["counts"]).astype(np.int64)
    if centers.size < 2:
        raise ValidationError("need at least two bins")
    width = centers[1] - centers[0]
    edges = np.append(centers - width / 2, centers[-1] + width / 2)
    return DecayHistogram(edges, counts, n_sync)
