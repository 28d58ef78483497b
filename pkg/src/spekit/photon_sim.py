"""Kinetic Monte Carlo photon streams from a three-level emitter.

The emitter runs through ground -> excited -> (ground + photon | shelf ->
ground) cycles with exponential waiting times. Photons hit a 50:50
beamsplitter and two imperfect detectors (channels A and B). Pulsed runs
add one SYNC tag per laser pulse.

Randomness comes from a single ``numpy.random.SeedSequence`` split into
independent children for the emitter, beamsplitter routing, detector
thinning, jitter and dark counts, so changing one imperfection leaves the
other draws untouched.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._accel import USE_NUMBA, njit
from .constants import DARK_RATE_DEFAULT
from .emitter import EmitterRates
from .errors import CapacityExceeded, ValidationError
from .stream import CH_A, CH_B, CH_SYNC, TimeTagStream, merge_sorted

__all__ = [
    "EmitterRates", "DetectorConfig", "ExcitationConfig",
    "simulate_cw", "simulate_pulsed", "apply_detector", "DEFAULT_MAX_TAGS",
]

DEFAULT_MAX_TAGS = 50_000_000
_CHUNK = 1 << 20
PS = 1e12


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float = 1.0
    dark_rate: float = DARK_RATE_DEFAULT
    dead_time: float = 0.0
    timing_jitter_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValidationError("detector efficiency must lie in [0, 1]")
        if self.dark_rate < 0 or self.dead_time < 0 or self.timing_jitter_sigma < 0:
            raise ValidationError("dark rate, dead time and jitter must be non-negative")

    @classmethod
    def ideal(cls):
        return cls(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ExcitationConfig:
    """CW drive (``excitation_rate`` follows from power) or a pulsed laser."""

    mode: str = "pulsed"
    power: float = 0.0
    excitation_per_watt: float = 0.0
    excitation_probability: float = 1.0
    pulse_length: float = 300e-15
    rep_rate: float = 20.8e6

    def __post_init__(self):
        if self.mode not in ("cw", "pulsed"):
            raise ValidationError("mode must be 'cw' or 'pulsed'")
        if not 0.0 <= self.excitation_probability <= 1.0:
            raise ValidationError("per-pulse excitation probability must lie in [0, 1]")
        if self.mode == "pulsed":
            if self.rep_rate <= 0 or self.pulse_length < 0:
                raise ValidationError("pulsed mode needs rep_rate > 0 and pulse_length >= 0")
            if self.pulse_length * self.rep_rate >= 1:
                raise ValidationError("pulse_length * rep_rate must be < 1")
        if self.power < 0 or self.excitation_per_watt < 0:
            raise ValidationError("power and excitation_per_watt must be non-negative")

    def excitation_rate(self):
        return self.power * self.excitation_per_watt


def _as_seedseq(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed))


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def _dead_time_numpy(t, dead):
    keep = np.zeros(t.size, dtype=np.bool_)
    i = 0
    n = t.size
    while i < n:
        keep[i] = True
        i = int(np.searchsorted(t, t[i] + dead, side="left"))
    return keep


@njit(cache=True)
def _dead_time_numba(t, dead):
    n = t.size
    keep = np.zeros(n, dtype=np.bool_)
    if n == 0:
        return keep
    last = t[0]
    keep[0] = True
    for i in range(1, n):
        if t[i] - last >= dead:
            keep[i] = True
            last = t[i]
    return keep


def _pulsed_numpy(tk, period, u_exc, p_exc, e2, u_branch, frac_rad, e3, free_at):
    excited = u_exc < p_exc
    end = tk + e2
    rad = u_branch < frac_rad
    busy_end = np.where(rad, end, end + e3)
    active = excited & (tk >= free_at)
    t_next = np.append(tk[1:], np.inf)
    blockers = np.flatnonzero(active & (busy_end > t_next))
    for k in blockers:
        if not active[k]:
            continue
        m = int(np.searchsorted(tk, busy_end[k], side="left"))
        active[k + 1:m] = False
    if np.any(active):
        free_at = max(free_at, float(busy_end[active].max()))
    return active & rad, end, free_at


@njit(cache=True)
def _pulsed_numba(tk, period, u_exc, p_exc, e2, u_branch, frac_rad, e3, free_at):
    n = tk.size
    emit = np.zeros(n, dtype=np.bool_)
    end = np.empty(n)
    for k in range(n):
        end[k] = tk[k] + e2[k]
        if tk[k] < free_at or not u_exc[k] < p_exc:
            continue
        if u_branch[k] < frac_rad:
            emit[k] = True
            free_at = end[k]
        else:
            free_at = end[k] + e3[k]
    return emit, end, free_at


_dead_time = _dead_time_numba if USE_NUMBA else _dead_time_numpy
_pulsed_kernel = _pulsed_numba if USE_NUMBA else _pulsed_numpy


# ---------------------------------------------------------------------------
# detector model
# ---------------------------------------------------------------------------

def apply_detector(ideal: TimeTagStream, det: DetectorConfig, seed) -> TimeTagStream:
    """Thinning, jitter, re-sort, dead-time veto, then dark counts, per channel.

    SYNC tags are electronic and pass through untouched.
    """
    is_sync = ideal.channels == CH_SYNC
    tags = _FloatTags(ideal.timestamps[~is_sync].astype(np.float64), ideal.channels[~is_sync],
                      ideal.duration, sync=ideal.timestamps[is_sync].astype(np.int64))
    out = _detect_float(tags, det, _as_seedseq(seed))
    out.metadata = dict(ideal.metadata)
    return out


def _route(rng_route, n):
    return np.where(rng_route.random(n) < 0.5, CH_A, CH_B).astype(np.uint8)


def _check_capacity(expected, max_tags):
    if expected > max_tags:
        raise CapacityExceeded(
            f"expected ~{expected:.3g} tags exceeds the cap of {max_tags}; "
            "shorten the run or raise max_tags")


def _metadata(kind, seed, rates, det, **extra):
    md = {"kind": kind, "seed": int(seed) if not isinstance(seed, np.random.SeedSequence)
          else int(seed.entropy),
          "rates": asdict(rates), "detector": asdict(det)}
    md.update(extra)
    return md


# ---------------------------------------------------------------------------
# CW
# ---------------------------------------------------------------------------

def _cw_emission_times(rates: EmitterRates, duration_ps, rng):
    """Photon emission times (float ps) from renewal cycles starting in the ground state."""
    ke, kr, ki, kb = (rates.excitation_rate, rates.radiative_rate,
                      rates.intersystem_rate, rates.deshelving_rate)
    if ke <= 0 or duration_ps <= 0:
        return np.empty(0)
    k_out = kr + ki
    frac_rad = kr / k_out
    out = []
    t0 = 0.0
    while t0 < duration_ps:
        e1 = rng.exponential(PS / ke, _CHUNK)
        e2 = rng.exponential(PS / k_out, _CHUNK)
        u_branch = rng.random(_CHUNK)
        u_qe = rng.random(_CHUNK)
        e3 = rng.exponential(PS / kb, _CHUNK) if ki > 0 else np.zeros(_CHUNK)
        rad = u_branch < frac_rad
        cycle = e1 + e2 + np.where(rad, 0.0, e3)
        start = t0 + np.concatenate(([0.0], np.cumsum(cycle[:-1])))
        photon = start + e1 + e2
        emit = rad & (u_qe < rates.quantum_efficiency) & (photon < duration_ps)
        out.append(photon[emit])
        t0 = start[-1] + cycle[-1]
    return np.concatenate(out) if out else np.empty(0)


def simulate_cw(rates: EmitterRates, det: DetectorConfig, duration, seed,
                max_tags=DEFAULT_MAX_TAGS) -> TimeTagStream:
    """HBT stream under continuous excitation. ``duration`` in seconds."""
    if not duration > 0:
        raise ValidationError("duration must be positive")
    duration_ps = int(round(duration * PS))
    expected = (rates.photon_rate() * det.efficiency + 2 * det.dark_rate) * duration
    _check_capacity(expected, max_tags)

    ss = _as_seedseq(seed)
    ss_emit, ss_route, ss_det = ss.spawn(3)
    t = _cw_emission_times(rates, duration_ps, np.random.default_rng(ss_emit))
    ch = _route(np.random.default_rng(ss_route), t.size)
    # Ideal tags keep sub-ps resolution until the detector rounds them.
    ideal = _FloatTags(t, ch, duration_ps)
    out = _detect_float(ideal, det, ss_det)
    out.metadata = _metadata("cw", seed, rates, det, duration_s=duration)
    return out


# ---------------------------------------------------------------------------
# pulsed
# ---------------------------------------------------------------------------

def simulate_pulsed(rates: EmitterRates, det: DetectorConfig, exc: ExcitationConfig,
                    n_pulses, seed, max_tags=DEFAULT_MAX_TAGS) -> TimeTagStream:
    """TRPL stream: a SYNC tag per pulse plus detected photons.

    Excitation is instantaneous at the pulse time; an emitter that is still
    excited or shelved when a pulse arrives is not re-excited.
    """
    if exc.mode != "pulsed":
        raise ValidationError("simulate_pulsed needs a pulsed ExcitationConfig")
    n_pulses = int(n_pulses)
    if n_pulses < 0:
        raise ValidationError("n_pulses must be non-negative")
    period = PS / exc.rep_rate
    duration_ps = int(round(n_pulses * period))
    expected = n_pulses * (1 + exc.excitation_probability * rates.quantum_efficiency
                           * det.efficiency) + 2 * det.dark_rate * duration_ps / PS
    _check_capacity(expected, max_tags)
    meta = _metadata("pulsed", seed, rates, det, excitation=asdict(exc), n_pulses=n_pulses)
    if n_pulses == 0:
        return TimeTagStream(np.empty(0, np.uint64), np.empty(0, np.uint8), 0, meta)

    ss = _as_seedseq(seed)
    ss_emit, ss_route, ss_det = ss.spawn(3)
    rng = np.random.default_rng(ss_emit)
    kr, ki, kb = rates.radiative_rate, rates.intersystem_rate, rates.deshelving_rate
    k_out = kr + ki
    frac_rad = kr / k_out
    free_at = -math.inf
    photons = []
    for start in range(0, n_pulses, _CHUNK):
        k = np.arange(start, min(start + _CHUNK, n_pulses))
        tk = k * period
        u_exc = rng.random(k.size)
        e2 = rng.exponential(PS / k_out, k.size)
        u_branch = rng.random(k.size)
        e3 = rng.exponential(PS / kb, k.size) if ki > 0 else np.zeros(k.size)
        u_qe = rng.random(k.size)
        emit, end, free_at = _pulsed_kernel(tk, period, u_exc, exc.excitation_probability,
                                            e2, u_branch, frac_rad, e3, free_at)
        photons.append(end[emit & (u_qe < rates.quantum_efficiency)])
    t = np.concatenate(photons)
    ch = _route(np.random.default_rng(ss_route), t.size)

    sync = np.rint(np.arange(n_pulses) * period).astype(np.int64)
    ideal = _FloatTags(t, ch, duration_ps, sync=sync)
    out = _detect_float(ideal, det, ss_det)
    out.metadata = meta
    return out


# ---------------------------------------------------------------------------
# internal: detector stage on float-ps photon times
# ---------------------------------------------------------------------------

@dataclass
class _FloatTags:
    times: np.ndarray
    channels: np.ndarray
    duration: int
    sync: np.ndarray | None = None


def _detect_float(tags: _FloatTags, det: DetectorConfig, ss_det) -> TimeTagStream:
    """Same pipeline as :func:`apply_detector` but jitter acts before ps rounding."""
    ss_thin, ss_jit, ss_dark = ss_det.spawn(3)
    rng_thin = np.random.default_rng(ss_thin)
    rng_jit = np.random.default_rng(ss_jit)
    dark_rngs = [np.random.default_rng(s) for s in ss_dark.spawn(2)]
    duration = tags.duration

    t, ch = tags.times, tags.channels
    keep = rng_thin.random(t.size) < det.efficiency
    jitter = rng_jit.standard_normal(t.size)
    if det.timing_jitter_sigma > 0:
        t = t + jitter * (det.timing_jitter_sigma * PS)
    t, ch = t[keep], ch[keep]
    ti = np.rint(t)
    inside = (ti >= 0) & (ti < duration)
    ti, ch = ti[inside].astype(np.int64), ch[inside]
    dead_ps = int(round(det.dead_time * PS))

    parts = []
    if tags.sync is not None:
        parts.append((tags.sync, np.full(tags.sync.size, CH_SYNC, np.uint8)))
    for c, rng_dark in zip((CH_A, CH_B), dark_rngs):
        tc = np.sort(ti[ch == c], kind="stable")
        if dead_ps > 0 and tc.size:
            tc = tc[_dead_time(tc, dead_ps)]
        parts.append((tc, np.full(tc.size, c, np.uint8)))
        n_dark = rng_dark.poisson(det.dark_rate * duration / PS) if duration > 0 else 0
        if n_dark:
            parts.append((rng_dark.integers(0, duration, size=n_dark),
                          np.full(n_dark, c, np.uint8)))
    return merge_sorted(parts, duration)
