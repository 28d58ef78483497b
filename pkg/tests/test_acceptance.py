"""Acceptance criteria 1-14. Each test prints one PASS/FAIL line.

Run just this suite with ``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest
from numba import njit

from spekit.correlator import DecayHistogram, correlate, log_bin_edges, trpl_histogram
from spekit.emitter import (EmitterRates, background_for_g2_zero, duty_cycle, g2_from_rates,
                            lifetime_bandwidth_product, lifetime_for_product, peak_intensity,
                            photon_energy)
from spekit.fitkit import Spectrum, fit_g2, fit_lifetime, fit_power_law, fit_saturation, fit_spectrum
from spekit.fitkit.models import lorentzian
from spekit.photon_sim import DetectorConfig, ExcitationConfig, simulate_cw, simulate_pulsed
from spekit.stream import CH_A, CH_B, merge_sorted
from spekit.thinfilm import (LayerStack, build_opl_curve, default_substrate_stack, fit_index,
                             opl_at, reflectance, transmittance)

NM = 1e-9
UW = 1e-6


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
        assert ok, f"criterion {n}: {detail}"
    return report


# ---------------------------------------------------------------------------
# 1-4: closed-form photophysics
# ---------------------------------------------------------------------------

def test_c01_lifetime_bandwidth_product(verdict):
    v = lifetime_bandwidth_product(553.23 * NM, 2.82 * NM, 1.123e-9)
    verdict(1, abs(v / 3102 - 1) <= 0.01, f"product = {v:.1f} (target 3102 +-1%)")


def test_c02_second_product(verdict):
    tau = lifetime_for_product(566.04 * NM, 1.31 * NM, 1389)
    fwd = lifetime_bandwidth_product(566.04 * NM, 1.31 * NM, tau)
    ok = abs(tau / 1.133e-9 - 1) <= 0.01 and abs(fwd / 1389 - 1) <= 0.01
    verdict(2, ok, f"tau = {tau * 1e9:.4f} ns (target 1.133 +-1%), forward = {fwd:.2f}")


def test_c03_peak_intensity_and_duty(verdict):
    duty = duty_cycle(300e-15, 20.8e6)
    i_pk = peak_intensity(142.6 * UW, 6.24e-6, 0.67 * UW) / 1e13  # GW/cm^2
    ok = duty == 6.24e-6 and abs(i_pk / 1.62 - 1) <= 0.01
    verdict(3, ok, f"duty = {duty!r} (exact 6.24e-06), peak = {i_pk:.4f} GW/cm^2 (1.62 +-1%)")


def test_c04_photon_energy(verdict):
    e = float(photon_energy(522 * NM))
    ok = round(e, 3) == 2.375 and round(e, 2) == 2.38
    verdict(4, ok, f"E(522 nm) = {e:.4f} eV, rounds to {round(e, 2)}")


# ---------------------------------------------------------------------------
# 5: correlator vs brute force
# ---------------------------------------------------------------------------

@njit(cache=True)
def _brute_force(a, b, edges, max_lag):
    """Every (A, B) pair, O(N*M); bins [lo, hi) with the last bin closed."""
    nb = edges.size - 1
    out = np.zeros(nb, dtype=np.int64)
    for i in range(a.size):
        for j in range(b.size):
            d = b[j] - a[i]
            if abs(d) > max_lag or d < edges[0] or d > edges[-1]:
                continue
            k = nb - 1
            if d < edges[-1]:
                k = np.searchsorted(edges, d, side="right") - 1
            out[k] += 1
    return out


def test_c05_correlator_oracle_equivalence(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(1000):
        n = int(rng.integers(2, 10_001))
        span = int(rng.choice([10**5, 10**7, 10**9]))
        t = np.sort(rng.integers(0, span, n))
        ch = rng.integers(0, 2, n)
        ch[:2] = (0, 1)
        a, b = t[ch == 0], t[ch == 1]
        s = merge_sorted([(a, np.full(a.size, CH_A)), (b, np.full(b.size, CH_B))], span)
        a, b = s.channel(CH_A).astype(np.int64), s.channel(CH_B).astype(np.int64)
        max_lag = int(rng.integers(100, 100_000))
        if i % 4 == 3:
            edges = log_bin_edges(int(rng.integers(1, 50)), max_lag, int(rng.integers(2, 30)))
            h = correlate(s, 1, max_lag, edges=edges, normalize=False)
        else:
            bw = int(rng.integers(1, min(2000, max_lag) + 1))
            h = correlate(s, bw, max_lag, n_chunks=int(rng.integers(1, 4)), normalize=False)
        expected = _brute_force(a, b, h.bin_edges.astype(np.int64), max_lag)
        mismatches += not np.array_equal(h.raw_counts, expected)
    dt = time.perf_counter() - t0
    verdict(5, mismatches == 0 and dt <= 60,
            f"{1000 - mismatches}/1000 streams bin-exact in {dt:.1f} s (limit 60 s)")


# ---------------------------------------------------------------------------
# 6-7: end-to-end simulation round trips
# ---------------------------------------------------------------------------

def test_c06_g2_round_trip_coverage(verdict):
    rates = EmitterRates(1e8, 1 / 1.123e-9, 2e7, 1e7)
    signal = rates.photon_rate() / 2  # per detector behind a 50:50 splitter
    dark = background_for_g2_zero(signal, 0.33)
    g0 = g2_from_rates(rates, signal_fraction=signal / (signal + dark)).g2_zero
    assert g0 == pytest.approx(0.33, abs=1e-12)
    det = DetectorConfig(1.0, dark, 0.0, 0.0)
    t0 = time.perf_counter()
    covered = 0
    for seed in range(100):
        h = correlate(simulate_cw(rates, det, 0.02, seed), 100, 300_000)
        lo, hi = fit_g2(h, n_mc=100, seed=seed).ci("g2_zero")
        covered += lo <= g0 <= hi
    dt = time.perf_counter() - t0
    verdict(6, covered >= 90 and dt <= 600,
            f"95% CI covers g2(0) = 0.33 in {covered}/100 runs (need >= 90), {dt:.0f} s")


def test_c07_lifetime_round_trip(verdict):
    t0 = time.perf_counter()
    rates = EmitterRates(1e8, 1 / 1.123e-9)
    exc = ExcitationConfig("pulsed", excitation_probability=1.0, rep_rate=20.8e6)
    s = simulate_pulsed(rates, DetectorConfig.ideal(), exc, 10**6, seed=7)
    res = fit_lifetime(trpl_histogram(s, 16), (0.0, 20_000.0))
    tau = res["lifetime"]
    dt = time.perf_counter() - t0
    verdict(7, abs(tau / 1.123e-9 - 1) <= 0.02 and dt <= 120,
            f"tau = {tau * 1e9:.4f} ns from 10^6 pulses (1.123 +-2%), {dt:.1f} s")


# ---------------------------------------------------------------------------
# 8-9: saturation and power law
# ---------------------------------------------------------------------------

def _sat(p, p_sat=142.6 * UW):
    return 1e5 * p / (p + p_sat) + 500.0


def test_c08_saturation(verdict):
    truth = 142.6 * UW
    p = truth * np.geomspace(0.05, 20, 20)
    exact = fit_saturation(p, _sat(p), bootstrap=False)["sat_power"]
    exact_err = abs(exact / truth - 1)
    # 5% noise: a single draw has a ~6% spread, so judge the estimator over 100 draws.
    errs = []
    for i in range(100):
        rng = np.random.default_rng(800 + i)
        y = _sat(p) * (1 + 0.05 * rng.standard_normal(p.size))
        errs.append(abs(fit_saturation(p, y, bootstrap=False)["sat_power"] / truth - 1))
    errs = np.asarray(errs)
    within = int(np.sum(errs <= 0.10))
    ok = exact_err <= 1e-6 and np.median(errs) <= 0.10 and within >= 90
    verdict(8, ok, f"noise-free rel err {exact_err:.1e} (<= 1e-6); 5% noise: median rel err "
                   f"{np.median(errs):.3f}, {within}/100 within 10%")


def test_c09_power_law_defect(verdict):
    p = np.geomspace(1, 30, 12) * UW
    res = fit_power_law(p, 7.0 * p**0.35)
    a, cls = res["slope"], res.extras["classification"]
    verdict(9, abs(a - 0.35) <= 1e-3 and cls == "defect", f"alpha = {a:.6f}, class {cls!r}")


# ---------------------------------------------------------------------------
# 10-11: thin film
# ---------------------------------------------------------------------------

def test_c10_thin_film_physics(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        layers = tuple((complex(rng.uniform(1.0, 4.0)), rng.uniform(0, 500) * NM)
                       for _ in range(rng.integers(1, 8)))
        s = LayerStack(layers, 1.0, complex(rng.uniform(1.0, 4.5)), rng.uniform(300, 1000) * NM)
        worst = max(worst, abs(reflectance(s) + transmittance(s) - 1.0))
    bare = default_substrate_stack(522 * NM, 280 * NM)
    grid = np.arange(0, 40 * NM, 0.05 * NM)
    monotone = bool(np.all(np.diff(opl_at(bare, 1.849, grid)) > 0))
    curve = build_opl_curve(bare, (0.0, 120 * NM))
    t_on, opl_on = curve.injectivity_limit, curve.injectivity_opl
    folds = t_on < curve.thickness_grid[-1]
    band = 40 * NM <= opl_on <= 60 * NM
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and monotone and folds and band and dt <= 30
    verdict(10, ok, f"max |R+T-1| = {worst:.1e}; monotone < 40 nm: {monotone}; fold at "
                    f"t = {t_on / NM:.1f} nm with onset OPL {opl_on / NM:.2f} nm "
                    f"(band 40-60 nm: {band})")


def test_c11_index_calibration(verdict):
    bare = default_substrate_stack(522 * NM, 280 * NM)
    ts = np.linspace(5, 38, 12) * NM
    sigma = 1.5 * NM
    opl = opl_at(bare, 1.849, ts) + np.random.default_rng(11).normal(0, sigma, ts.size)
    cal = fit_index(np.column_stack((ts, opl)), bare, opl_sigma=sigma, n_mc=200, seed=11)
    lo, hi = cal.ci95
    ok = abs(cal.index - 1.849) <= 0.05 and lo <= 1.849 <= hi
    verdict(11, ok, f"n = {cal.index:.4f}, 95% CI [{lo:.4f}, {hi:.4f}] (truth 1.849 +-0.05)")


# ---------------------------------------------------------------------------
# 12-13: spectra and bootstrap coverage
# ---------------------------------------------------------------------------

def test_c12_four_peak_background(verdict):
    centers = [575.5, 609.6, 642.5, 662.9]
    wl = np.linspace(560, 690, 1300)
    y = 20.0 + sum(4000.0 * lorentzian(wl, c, 12.0) for c in centers)
    s = Spectrum(wl * NM, np.random.default_rng(12).poisson(y).astype(float))
    res = fit_spectrum(s, 4, n_mc=100)
    got = sorted(res[f"center_{k}"] / NM for k in range(1, 5))
    worst = max(abs(g - c) for g, c in zip(got, centers))
    verdict(12, worst <= 0.5, "centers " + ", ".join(f"{g:.2f}" for g in got)
            + f" nm; worst offset {worst:.3f} nm (<= 0.5)")


def test_c13_lifetime_bootstrap_coverage(verdict):
    t0 = time.perf_counter()
    edges = np.arange(601, dtype=np.int64) * 32
    c = 0.5 * (edges[1:] + edges[:-1]) * 1e-12
    mean = 1000.0 * np.exp(-c / 1.123e-9) + 1.0
    covered = 0
    for i in range(200):
        d = DecayHistogram(edges, np.random.default_rng(13_000 + i).poisson(mean), 10**6)
        lo, hi = fit_lifetime(d, (0.0, 19_200.0), n_mc=200, seed=i).ci("lifetime")
        covered += lo <= 1.123e-9 <= hi
    dt = time.perf_counter() - t0
    frac = covered / 200
    verdict(13, 0.90 <= frac <= 0.99 and dt <= 300,
            f"coverage {covered}/200 = {frac:.1%} (need 90-99%), {dt:.0f} s")


# ---------------------------------------------------------------------------
# 14: throughput
# ---------------------------------------------------------------------------

def test_c14_correlator_throughput(verdict):
    rng = np.random.default_rng(14)
    n = 10**7
    t = np.sort(rng.integers(0, 10**12, n))  # 1 s at 10 MHz
    ch = rng.integers(0, 2, n).astype(np.uint8)
    s = merge_sorted([(t, ch)], 10**12)
    correlate(s, 1000, 10**6)  # warm the compiled kernels
    t0 = time.perf_counter()
    h = correlate(s, 1000, 10**6)
    dt = time.perf_counter() - t0
    verdict(14, dt <= 10 and h.raw_counts.size == 2000,
            f"10^7 tags, 1 ns bins, +-1 us: {dt:.2f} s (soft limit 10 s)")
