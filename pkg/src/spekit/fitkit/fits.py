"""User-facing fits. Inputs and outputs are SI; models run in ns / nm / uW internally."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .._io import text_out
from ..correlator import CorrelationHistogram, DecayHistogram
from ..emitter import ThreeLevelParams
from ..errors import (DegenerateDesign, DegenerateFitWarning, EmptyDecay, InvalidRegime,
                      NotConverged, ValidationError)
from .core import FitProblem, FitResult, mc_confidence
from .models import ExpDecayModel, G2Model, LineModel, PseudoVoigtModel, SaturationModel

NS = 1e-9
NM = 1e-9
UW = 1e-6


@dataclass
class Spectrum:
    wavelength: np.ndarray  # m, strictly ascending
    counts: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.wavelength = np.asarray(self.wavelength, dtype=float)
        self.counts = np.asarray(self.counts, dtype=float)
        if self.wavelength.shape != self.counts.shape:
            raise ValidationError("wavelength and counts differ in length")
        if np.any(np.diff(self.wavelength) <= 0):
            raise ValidationError("wavelengths must be strictly ascending")
        if np.any(self.counts < 0):
            raise ValidationError("counts must be non-negative")


def read_spectrum_csv(path) -> Spectrum:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return Spectrum(np.atleast_1d(data["wavelength_nm"]) * NM, np.atleast_1d(data["counts"]),
                    {"source": str(path)})


def write_spectrum_csv(s: Spectrum, path):
    with text_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["wavelength_nm", "counts"])
        for wl, c in zip(s.wavelength / NM, s.counts):
            w.writerow([repr(float(wl)), repr(float(c))])


def _smooth(y, k=5):
    if y.size < k:
        return y.copy()
    pad = k // 2
    yp = np.pad(y, pad, mode="edge")
    return np.convolve(yp, np.ones(k) / k, mode="valid")


def _finish(problem, lm, scales, model_id, n_mc, seed, derived=None, bootstrap=True,
            extras=None):
    """Assemble a FitResult in SI units from an internal-unit optimum."""
    names = problem.model.param_names
    scales = np.asarray(scales, dtype=float)
    p = lm.x if problem.canonicalize is None else problem.canonicalize(lm.x)
    cov_int = problem.covariance(lm)
    cov = cov_int * np.outer(scales, scales)
    params = {n: float(v * s) for n, v, s in zip(names, p, scales)}
    derived = derived or {}
    d_scales = {}
    for dn, (fn, sc) in derived.items():
        params[dn] = float(fn(p) * sc)
        d_scales[dn] = sc
    ci = {}
    samples = None
    n_mc_used = 0
    if bootstrap:
        mc = mc_confidence(problem, p, n_mc, seed, {k: v[0] for k, v in derived.items()})
        all_scales = dict(zip(names, scales)) | d_scales
        ci = {k: (lo * all_scales[k], hi * all_scales[k]) for k, (lo, hi) in mc.ci95.items()}
        # Negative scales (none today) would flip bounds; keep ordering explicit.
        ci = {k: (min(a, b), max(a, b)) for k, (a, b) in ci.items()}
        samples = mc.samples * np.array([all_scales[k] for k in mc.names])
        n_mc_used = mc.n_samples
        extras = dict(extras or {}, n_mc_failed=mc.n_failed)
    return FitResult(model_id, params, ci, cov, float(np.sqrt(lm.cost)), problem.y.size,
                     bool(lm.converged), n_mc_used, tuple(names) + tuple(derived),
                     dict(extras or {}), samples)


def _require_converged(lm, what, partial):
    if not lm.converged:
        raise NotConverged(f"{what} fit did not converge: {lm.message}", result=partial)


# ---------------------------------------------------------------------------
# g2
# ---------------------------------------------------------------------------

def _init_g2(x, y, bw):
    ys = _smooth(y)
    i_min = int(np.argmin(ys))
    mu0 = x[i_min]
    b0 = max(float(ys.max()) - 1.0, 1e-3)
    a0 = max(1.0 + b0 - float(ys[i_min]), 1e-3)
    right = np.arange(i_min, x.size)
    target = ys[i_min] + 0.5 * (1.0 + b0 - ys[i_min])
    above = right[ys[right] >= target]
    lag = (x[above[0]] - mu0) if above.size else 5 * bw
    t1 = max(lag / math.log(2.0), bw)
    # bunching tail: first point right of the maximum that has decayed to B/e
    i_max = right[int(np.argmax(ys[right]))]
    tail = np.arange(i_max, x.size)
    low = tail[ys[tail] - 1.0 <= (ys[i_max] - 1.0) / math.e]
    t2 = (x[low[0]] - mu0) if low.size else 10 * t1
    if not t2 > 2 * t1:
        t2 = 10 * t1
    return np.array([a0, b0, t1, t2, mu0])


def _g2_starts(x, y, bw):
    """Heuristic start plus variants centered on the dip's symmetry axis.

    An off-center argmin or a bunching term faster than the dip sends a
    single start into a bound-pinned local minimum; the extra starts cost
    two more point fits and no bootstrap time.
    """
    p0 = _init_g2(x, y, bw)
    w = np.abs(_smooth(y) - 1.0)
    mu_c = float(np.sum(x * w) / np.sum(w)) if np.sum(w) > 0 else p0[4]
    return [p0, np.r_[p0[:4], mu_c], np.r_[p0[0], p0[1], p0[3], p0[2], mu_c]]


def fit_g2(hist: CorrelationHistogram, init: ThreeLevelParams | None = None, *, n_mc=200,
           seed=0, bootstrap=True, max_iter=200) -> FitResult:
    """Fit the three-level g2 model to a normalized correlation histogram.

    Reports ``g2_zero = 1 - A + B`` with a Monte Carlo interval (Poisson
    resampling of the raw coincidences) and, in ``extras``, the
    covariance-based interval for comparison.
    """
    if hist.normalized is None:
        raise ValidationError("histogram must be normalized before fitting")
    x = hist.bin_centers / 1000.0
    y = np.asarray(hist.normalized, dtype=float)
    if x.size < 10:
        raise ValidationError("need at least 10 bins")
    factor = hist.expected_per_bin()
    bw = float(np.min(hist.bin_widths)) / 1000.0
    span = float(x.max() - x.min())

    model = G2Model()
    lower = np.array([0.0, 0.0, bw / 10, bw / 10, x.min()])
    upper = np.array([2.0, 50.0, span, 100 * span, x.max()])
    problem = FitProblem(model, x, y, "poisson", factor, lower=lower, upper=upper,
                         max_iter=max_iter)
    if init is None:
        fits = [problem.solve(q) for q in _g2_starts(x, y, bw)]
        ok = [f for f in fits if f.converged] or fits
        lm = min(ok, key=lambda f: f.cost)
    else:
        lm = problem.solve(np.array([init.antibunch_amp, init.bunch_amp,
                                     init.excited_lifetime / NS, init.shelving_lifetime / NS,
                                     init.delay_offset / NS]))
    scales = [1.0, 1.0, NS, NS, NS]
    g2z = {"g2_zero": (lambda p: 1.0 - p[0] + p[1], 1.0)}

    a, b, t1, t2, _ = lm.x
    cov = problem.covariance(lm)
    var_g0 = cov[0, 0] + cov[1, 1] - 2 * cov[0, 1]
    sd_b = math.sqrt(max(cov[1, 1], 0.0))
    extras = {"g2_zero_ci_covariance": (1 - a + b - 1.96 * math.sqrt(max(var_g0, 0)),
                                        1 - a + b + 1.96 * math.sqrt(max(var_g0, 0))),
              "shelving_resolved": bool(b > 1e-3 and b > 3 * sd_b)}
    if not lm.converged:
        partial = _finish(problem, lm, scales, model.model_id, 0, seed, g2z, False, extras)
        _require_converged(lm, "g2", partial)
    if not t2 > t1:
        if extras["shelving_resolved"]:
            partial = _finish(problem, lm, scales, model.model_id, 0, seed, g2z, False, extras)
            raise InvalidRegime("fit puts the bunching decay faster than the antibunching "
                                f"(t1={t1:.4g} ns, t2={t2:.4g} ns)", result=partial)
        # No measurable bunching, so t2 carries no information.
    return _finish(problem, lm, scales, model.model_id, n_mc, seed, g2z, bootstrap, extras)


def three_level_params(result: FitResult) -> ThreeLevelParams:
    p = result.params
    return ThreeLevelParams(p["antibunch_amp"], p["bunch_amp"], p["excited_lifetime"],
                            p["shelving_lifetime"], p["delay_offset"])


# ---------------------------------------------------------------------------
# lifetime
# ---------------------------------------------------------------------------

def default_lifetime_window(decay: DecayHistogram, jitter_sigma=0.0):
    """From ``4 * jitter_sigma`` after the peak bin to the end of the histogram (ps)."""
    c = decay.bin_centers
    start = c[int(np.argmax(decay.counts))] + 4.0 * jitter_sigma * 1e12
    return float(start), float(decay.bin_edges[-1])


def _init_decay(x, y):
    n_tail = max(3, y.size // 10)
    b0 = max(float(np.median(y[-n_tail:])), 0.0)
    yy = y - b0
    ok = yy > max(3.0 * math.sqrt(b0 + 1.0), 0.05 * yy.max())
    if np.count_nonzero(ok) >= 2:
        slope, icpt = np.polyfit(x[ok] - x[0], np.log(yy[ok]), 1, w=np.sqrt(yy[ok]))
        if slope < 0:
            return np.array([math.exp(icpt), -1.0 / slope, b0])
    return np.array([max(float(yy.max()), 1.0), (x[-1] - x[0]) / 3.0, b0])


def fit_lifetime(decay: DecayHistogram, fit_window=None, *, jitter_sigma=0.0, n_mc=200,
                 seed=0, bootstrap=True, max_iter=200) -> FitResult:
    """Tail fit of ``c exp(-t/tau) + baseline`` over ``fit_window`` (ps from sync).

    No instrument-response deconvolution. Without a window the fit starts
    ``4 * jitter_sigma`` (s) after the histogram peak.
    """
    counts = np.asarray(decay.counts, dtype=float)
    if not np.any(counts > 0):
        raise EmptyDecay("decay histogram has no counts")
    if fit_window is None:
        fit_window = default_lifetime_window(decay, jitter_sigma)
    start, end = map(float, fit_window)
    if start < decay.bin_edges[0] or end > decay.bin_edges[-1] or not end > start:
        raise ValidationError("fit window must be an ascending range inside the histogram")
    c_ps = decay.bin_centers
    mask = (c_ps >= start) & (c_ps <= end)
    if np.count_nonzero(mask) < 10:
        raise ValidationError("need at least 10 bins in the fit window")
    x = c_ps[mask] / 1000.0
    y = counts[mask]
    bw = decay.bin_width / 1000.0
    span = float(x[-1] - x[0])

    model = ExpDecayModel(x0=x[0])
    lower = np.array([0.0, bw / 10, 0.0])
    upper = np.array([np.inf, 1000 * max(span, bw), np.inf])
    problem = FitProblem(model, x, y, "poisson", 1.0, lower=lower, upper=upper,
                         max_iter=max_iter)
    lm = problem.solve(_init_decay(x, y))
    scales = [1.0, NS, 1.0]
    extras = {"fit_window_ps": [start, end], "baseline_only_preferred": False}
    if not lm.converged:
        _require_converged(lm, "lifetime",
                           _finish(problem, lm, scales, model.model_id, 0, seed, None, False,
                                   extras))
    cov = problem.covariance(lm)
    c_hat = lm.x[0]
    sd_c = math.sqrt(max(cov[0, 0], 0.0))
    if c_hat <= 2.0 * sd_c:
        # Amplitude indistinguishable from zero: a flat baseline explains the data
        # and the lifetime is unconstrained.
        extras["baseline_only_preferred"] = True
        res = _finish(problem, lm, scales, model.model_id, n_mc, seed, None, False, extras)
        res.ci95 = {"amplitude": (0.0, float(c_hat + 2 * sd_c)),
                    "lifetime": (0.0, math.inf),
                    "baseline": (res.params["baseline"], res.params["baseline"])}
        return res
    return _finish(problem, lm, scales, model.model_id, n_mc, seed, None, bootstrap, extras)


# ---------------------------------------------------------------------------
# saturation and power law
# ---------------------------------------------------------------------------

SLOPE_TOLERANCE = 0.05


def classify_slope(alpha, ci=None):
    """Power-dependence class: ``defect`` (<1), ``free_exciton`` (~1), ``biexciton`` (~2).

    With an interval, 1 or 2 inside it decides; otherwise the point estimate is
    compared with a +-0.05 band. Anything else is ``intermediate``.
    """
    lo, hi = (ci if ci is not None else (alpha - SLOPE_TOLERANCE, alpha + SLOPE_TOLERANCE))
    lo = min(lo, alpha - SLOPE_TOLERANCE) if ci is not None and hi - lo < 1e-12 else lo
    hi = max(hi, alpha + SLOPE_TOLERANCE) if ci is not None and hi - lo < 1e-12 else hi
    if lo <= 1.0 <= hi:
        return "free_exciton"
    if lo <= 2.0 <= hi:
        return "biexciton"
    if hi < 1.0:
        return "defect"
    return "intermediate"


def fit_power_law(powers, intensities, *, n_mc=200, seed=0, bootstrap=True) -> FitResult:
    """Straight-line fit of log(I) against log(P); slope is the exponent alpha."""
    powers = np.asarray(powers, dtype=float)
    intensities = np.asarray(intensities, dtype=float)
    if np.any(powers <= 0) or np.any(intensities <= 0):
        raise ValidationError("log-log fit needs positive powers and intensities")
    if np.unique(powers).size < 2:
        raise DegenerateDesign("need at least two distinct powers")
    x, y = np.log(powers), np.log(intensities)
    problem = FitProblem(LineModel(), x, y, "residual")
    p0 = np.polyfit(x, y, 1)
    lm = problem.solve(p0)
    res = _finish(problem, lm, [1.0, 1.0], "power_law", n_mc, seed,
                  bootstrap=bootstrap and x.size > 2)
    ci = res.ci95.get("slope") if res.ci95 else None
    res.extras["classification"] = classify_slope(res.params["slope"], ci)
    return res


def fit_saturation(powers, intensities, *, n_mc=200, seed=0, bootstrap=True,
                   max_iter=200) -> FitResult:
    """Fit ``I = I_sat P/(P + P_sat) + I_d`` and the sub-saturation log-log slope.

    Relative (multiplicative) errors are assumed: weights 1/I**2 and
    residual-resampling bootstrap. The slope fit uses points with
    ``P <= P_sat`` (all points if fewer than three qualify) and lands in
    ``extras["power_law"]``.
    """
    powers = np.asarray(powers, dtype=float)
    intensities = np.asarray(intensities, dtype=float)
    if powers.shape != intensities.shape:
        raise ValidationError("powers and intensities differ in length")
    if np.any(powers < 0):
        raise ValidationError("powers must be non-negative")
    if np.unique(powers).size < 4:
        raise DegenerateDesign("need at least four distinct powers")

    order = np.argsort(powers, kind="stable")
    x = powers[order] / UW
    y = intensities[order]
    ymax = float(y.max())
    if x[0] > 0 and x.size > 1 and x[1] > x[0]:
        i_d0 = max(0.0, y[0] - (y[1] - y[0]) / (x[1] - x[0]) * x[0])
    else:
        i_d0 = max(0.0, float(y[0]))
    i_d0 = min(i_d0, 0.5 * float(y.min()))
    p_half = float(np.interp(i_d0 + 0.5 * (ymax - i_d0), np.maximum.accumulate(y), x))
    p_half = max(p_half, x[x > 0].min() if np.any(x > 0) else 1.0)
    i_sat0 = (ymax - i_d0) * (x.max() + p_half) / x.max()
    model = SaturationModel()
    lower = np.array([0.0, 1e-9 * x.max(), 0.0])
    upper = np.array([np.inf, 1e4 * x.max(), np.inf])
    problem = FitProblem(model, x, y, "residual", lower=lower, upper=upper,
                         weight_mode="relative", max_iter=max_iter)
    lm = problem.solve(np.array([i_sat0, p_half, i_d0]))
    scales = [1.0, UW, 1.0]
    if not lm.converged:
        _require_converged(lm, "saturation",
                           _finish(problem, lm, scales, model.model_id, 0, seed, None, False))
    res = _finish(problem, lm, scales, model.model_id, n_mc, seed, None, bootstrap)

    sub = powers[order] <= res.params["sat_power"]
    sub &= powers[order] > 0
    if np.count_nonzero(sub) < 3:
        sub = powers[order] > 0
    pl = fit_power_law(powers[order][sub], intensities[order][sub], n_mc=n_mc, seed=seed,
                       bootstrap=bootstrap)
    res.extras["power_law"] = {"slope": pl.params["slope"],
                               "log_prefactor": pl.params["log_prefactor"],
                               "ci95": pl.ci95.get("slope"),
                               "classification": pl.extras["classification"],
                               "n_points": pl.n_points}
    return res


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

def _half_width(x, y, i, base):
    half = base + 0.5 * (y[i] - base)
    lo = i
    while lo > 0 and y[lo] > half:
        lo -= 1
    hi = i
    while hi < y.size - 1 and y[hi] > half:
        hi += 1
    return max(x[hi] - x[lo], x[1] - x[0])


def _init_peaks(x, y, n_peaks):
    """Local maxima above baseline + 3 sigma, tallest first, one per half-width."""
    ys = _smooth(y, 5)
    base = float(np.percentile(ys, 10))
    d = np.diff(y)
    sigma = 1.4826 * float(np.median(np.abs(d - np.median(d)))) / math.sqrt(2.0)
    thresh = base + 3.0 * sigma
    cand = [i for i in range(1, y.size - 1)
            if ys[i] >= ys[i - 1] and ys[i] >= ys[i + 1] and ys[i] > thresh]
    cand.sort(key=lambda i: -ys[i])
    chosen = []
    for i in cand:
        w = _half_width(x, ys, i, base)
        if all(abs(x[i] - x[j]) > 0.5 * max(w, wj) for j, wj in chosen):
            chosen.append((i, w))
        if len(chosen) == n_peaks:
            break
    if not chosen:
        i = int(np.argmax(ys))
        chosen.append((i, _half_width(x, ys, i, base)))
    peaks = []
    for i, w in chosen:
        height = max(ys[i] - base, 1e-12)
        peaks.append([x[i], w, height * math.pi * w / 2.0])
    # Not enough resolved maxima: split the widest peak.
    while len(peaks) < n_peaks:
        k = max(range(len(peaks)), key=lambda j: peaks[j][1])
        c, w, a = peaks[k]
        peaks[k] = [c - w / 4, w / 2, a / 2]
        peaks.append([c + w / 4, w / 2, a / 2])
    return sorted(peaks), base


def _sort_peaks(model):
    k = model.per_peak
    n = model.n_peaks

    def canon(p):
        blocks = p[:n * k].reshape(n, k)
        order = np.argsort(blocks[:, 0], kind="stable")
        return np.concatenate((blocks[order].ravel(), p[n * k:]))

    return canon


def fit_spectrum(s: Spectrum, n_peaks=1, init=None, *, gauss_fraction=0.0, n_mc=200, seed=0,
                 bootstrap=True, max_iter=200) -> FitResult:
    """Multi-peak pseudo-Voigt plus constant baseline.

    ``gauss_fraction=None`` frees the Gaussian fraction of every peak; a
    number fixes it (0 = pure Lorentzian). ``init`` may be a LineshapeParams.
    Peaks are reported in ascending center order. Poorly separated peaks
    raise :class:`DegenerateFitWarning` when their bootstrap spread is
    comparable to the width.
    """
    n_peaks = int(n_peaks)
    if n_peaks < 1:
        raise ValidationError("n_peaks must be >= 1")
    if s.wavelength.size <= 5 * n_peaks:
        raise ValidationError("spectrum too short for the requested number of peaks")
    x = s.wavelength / NM
    y = s.counts
    free = gauss_fraction is None
    model = PseudoVoigtModel(n_peaks, free_eta=free, eta=0.0 if free else float(gauss_fraction))
    if init is None:
        peaks, base = _init_peaks(x, y, n_peaks)
        etas = [0.5 if free else model.eta] * n_peaks
    else:
        peaks = [[p.center / NM, p.fwhm / NM, p.area / NM] for p in init.peaks]
        etas = [p.gauss_fraction for p in init.peaks]
        base = init.baseline
        if len(peaks) != n_peaks:
            raise ValidationError("init has a different number of peaks")
    p0 = []
    for (c, w, a), eta in zip(peaks, etas):
        p0 += [c, w, a] + ([eta] if free else [])
    p0.append(base)
    p0 = np.array(p0, dtype=float)

    dx = float(np.min(np.diff(x)))
    span = float(x[-1] - x[0])
    lo_pk = [x[0], dx / 2, 0.0] + ([0.0] if free else [])
    hi_pk = [x[-1], span, np.inf] + ([1.0] if free else [])
    lower = np.array(lo_pk * n_peaks + [0.0])
    upper = np.array(hi_pk * n_peaks + [np.inf])
    problem = FitProblem(model, x, y, "poisson", 1.0, lower=lower, upper=upper,
                         max_iter=max_iter, canonicalize=_sort_peaks(model))
    lm = problem.solve(p0)
    scales = ([NM, NM, NM] + ([1.0] if free else [])) * n_peaks + [1.0]

    derived = {}
    for k in range(n_peaks):
        derived[f"height_{k + 1}"] = (_height_fn(model, k), 1.0)
    if not lm.converged:
        _require_converged(lm, "spectrum",
                           _finish(problem, lm, scales, model.model_id, 0, seed, derived, False))
    res = _finish(problem, lm, scales, model.model_id, n_mc, seed, derived, bootstrap,
                  {"n_peaks": n_peaks, "free_gauss_fraction": free})
    res.extras["gauss_fraction"] = None if free else model.eta
    if bootstrap:
        degenerate = []
        for k in range(1, n_peaks + 1):
            w = res.params[f"fwhm_{k}"]
            c_lo, c_hi = res.ci95[f"center_{k}"]
            a_lo, _ = res.ci95[f"area_{k}"]
            if c_hi - c_lo > 0.5 * w or a_lo <= 0.0:
                degenerate.append(k)
        res.extras["degenerate_peaks"] = degenerate
        if degenerate:
            warnings.warn(f"peaks {degenerate} are not resolved (bootstrap spread comparable "
                          "to the width); consider fewer peaks", DegenerateFitWarning,
                          stacklevel=2)
    return res


def _height_fn(model, k):
    def height(p):
        c, w, a, eta = model.peaks(p)[k]
        return float(model.peak_profile(np.array([c]), c, w, a, eta)[0])
    return height


def lineshape_from_result(res: FitResult):
    """Peaks of a spectrum fit as a ``LineshapeParams`` (SI)."""
    from ..emitter import LineshapeParams, Peak

    n = res.extras.get("n_peaks", 1)
    eta = res.extras.get("gauss_fraction")
    peaks = []
    for k in range(1, n + 1):
        g = res.params.get(f"gauss_fraction_{k}", eta if eta is not None else 0.0)
        peaks.append(Peak(res.params[f"center_{k}"], res.params[f"fwhm_{k}"],
                          max(res.params[f"area_{k}"], 0.0), float(g)))
    return LineshapeParams(tuple(peaks), res.params["baseline"])


def spectrum_model_si(res: FitResult, wavelength, include_baseline=True, only_peak=None):
    """Evaluate the fitted lineshape (counts) at ``wavelength`` (m)."""
    ls = lineshape_from_result(res)
    x = np.asarray(wavelength, dtype=float) / NM
    m = PseudoVoigtModel(1)
    y = np.full(x.shape, ls.baseline if include_baseline else 0.0)
    for k, p in enumerate(ls.peaks, start=1):
        if only_peak is not None and k != only_peak:
            continue
        y = y + m.peak_profile(x, p.center / NM, p.fwhm / NM, p.area / NM, p.gauss_fraction)
    return y
