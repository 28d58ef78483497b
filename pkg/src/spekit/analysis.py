"""Survey statistics, ZPL fractions, before/after comparisons and anneal summaries."""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .constants import ENSEMBLE_G2_THRESHOLD, SCHEMA_VERSION
from .emitter import lifetime_bandwidth_product
from .errors import (DegenerateGeometry, EmptySpectrum, FitError, IncompleteRecordWarning,
                     SmallSampleWarning, ValidationError)
from .fitkit import FitResult, Spectrum, fit_g2, fit_lifetime, fit_spectrum
from .fitkit.models import PseudoVoigtModel

NM = 1e-9


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fabrication:
    plasma_power: float | None = None  # W
    plasma_time: float | None = None  # s
    anneal_temp: float | None = None  # K


@dataclass(frozen=True)
class FlakeGeometry:
    edge_length: float | None = None  # m, perimeter
    thickness: float | None = None  # m


@dataclass(frozen=True)
class EmitterRecord:
    """One defect (or, with ``defect_id=None``, a flake hosting none)."""

    flake_id: str
    defect_id: str | None = None
    zpl_center: float | None = None
    zpl_fwhm: float | None = None
    lifetime: float | None = None
    g2_zero: float | None = None
    alpha: float | None = None
    zpl_fraction: float | None = None
    fabrication: Fabrication = field(default_factory=Fabrication)
    flake: FlakeGeometry = field(default_factory=FlakeGeometry)
    single_emitter: bool = True

    @property
    def is_defect(self):
        return self.defect_id is not None

    def validate(self, allow_ensemble=False):
        if self.g2_zero is not None:
            if self.g2_zero < 0:
                raise ValidationError(f"{self.flake_id}/{self.defect_id}: g2(0) < 0")
            if (self.single_emitter and not allow_ensemble
                    and self.g2_zero > ENSEMBLE_G2_THRESHOLD):
                raise ValidationError(
                    f"{self.flake_id}/{self.defect_id}: g2(0) = {self.g2_zero:.3g} > "
                    f"{ENSEMBLE_G2_THRESHOLD} marks an ensemble, not a single emitter")
            if self.single_emitter and self.g2_zero > 1 and not allow_ensemble:
                raise ValidationError("g2(0) > 1 for a single emitter")
        if self.zpl_fraction is not None and not 0.0 <= self.zpl_fraction <= 1.0:
            raise ValidationError("zpl_fraction must lie in [0, 1]")
        for name in ("zpl_center", "zpl_fwhm", "lifetime"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValidationError(f"{name} must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        fab = Fabrication(**(d.pop("fabrication", None) or {}))
        flake = FlakeGeometry(**(d.pop("flake", None) or {}))
        return cls(fabrication=fab, flake=flake, **d)


_FLAT_FIELDS = ("flake_id", "defect_id", "zpl_center", "zpl_fwhm", "lifetime", "g2_zero",
                "alpha", "zpl_fraction", "plasma_power", "plasma_time", "anneal_temp",
                "edge_length", "thickness", "single_emitter")


def _opt_float(v):
    if v is None or (isinstance(v, str) and v.strip() == ""):
        return None
    return float(v)


def record_from_row(row: dict) -> EmitterRecord:
    """Build a record from a flat CSV row (SI units, empty cells = missing)."""
    d = row.get("defect_id")
    single = str(row.get("single_emitter", "true")).strip().lower() not in ("0", "false", "no")
    return EmitterRecord(
        str(row["flake_id"]), d if d not in (None, "") else None,
        *(_opt_float(row.get(k)) for k in ("zpl_center", "zpl_fwhm", "lifetime", "g2_zero",
                                           "alpha", "zpl_fraction")),
        Fabrication(*(_opt_float(row.get(k)) for k in ("plasma_power", "plasma_time",
                                                         "anneal_temp"))),
        FlakeGeometry(_opt_float(row.get("edge_length")), _opt_float(row.get("thickness"))),
        single)


def ingest_records(items, allow_ensemble=False):
    """Validate records (dicts or EmitterRecords); ensembles are rejected unless allowed."""
    out = []
    for it in items:
        if isinstance(it, EmitterRecord):
            rec = it
        elif "fabrication" in it or "flake" in it:
            rec = EmitterRecord.from_dict(it)
        else:
            rec = record_from_row(it)
        out.append(rec.validate(allow_ensemble))
    return out


def load_records(path, allow_ensemble=False):
    """Records from a JSON list (nested or flat) or a CSV with the flat columns."""
    path = str(path)
    if path.endswith(".csv"):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    else:
        with open(path) as fh:
            data = json.load(fh)
        rows = data["records"] if isinstance(data, dict) else data
    return ingest_records(rows, allow_ensemble)


def write_records_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_FLAT_FIELDS)
        for r in records:
            vals = [r.flake_id, r.defect_id, r.zpl_center, r.zpl_fwhm, r.lifetime, r.g2_zero,
                    r.alpha, r.zpl_fraction, r.fabrication.plasma_power,
                    r.fabrication.plasma_time, r.fabrication.anneal_temp, r.flake.edge_length,
                    r.flake.thickness, r.single_emitter]
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, float) else v)
                        for v in vals])


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------

def defect_density(n_defects, edge_length):
    """Linear defect density N/L (per metre)."""
    if not edge_length > 0:
        raise DegenerateGeometry("edge length must be positive")
    if n_defects < 0:
        raise ValidationError("defect count must be >= 0")
    return n_defects / edge_length


@dataclass
class DensityTrend:
    slope: float  # per metre per watt
    intercept: float  # per metre
    n_flakes: int


def density_vs_power(counts, edge_lengths, powers):
    """Weighted straight-line fit of N/L against plasma power.

    Counts are Poisson, so var(N/L) is proportional to 1/L; weights are L.
    """
    n = np.asarray(counts, dtype=float)
    length = np.asarray(edge_lengths, dtype=float)
    p = np.asarray(powers, dtype=float)
    if np.any(length <= 0):
        raise DegenerateGeometry("edge length must be positive")
    if np.unique(p).size < 2:
        raise ValidationError("need at least two distinct plasma powers")
    rho = n / length
    slope, icpt = np.polyfit(p, rho, 1, w=np.sqrt(length))
    return DensityTrend(float(slope), float(icpt), int(n.size))


def flake_table(records):
    """Per flake: (flake_id, n_defects, edge_length, fabrication) in flake_id order."""
    flakes = {}
    for r in records:
        f = flakes.setdefault(r.flake_id, [0, r.flake.edge_length, r.fabrication])
        if r.is_defect:
            f[0] += 1
        if f[1] is None:
            f[1] = r.flake.edge_length
    return [(k, *flakes[k]) for k in sorted(flakes)]


# ---------------------------------------------------------------------------
# survey statistics
# ---------------------------------------------------------------------------

ZPL_BAND_START = 550e-9
ZPL_BAND_WIDTH = 20e-9
ZPL_BAND_STOP = 730e-9

CORRELATION_FIELDS = ("zpl_fwhm", "lifetime", "g2_zero", "alpha", "thickness", "plasma_power",
                      "plasma_time", "anneal_temp")


def _field(r: EmitterRecord, name):
    if hasattr(r, name):
        return getattr(r, name)
    if hasattr(r.fabrication, name):
        return getattr(r.fabrication, name)
    return getattr(r.flake, name)


def _band_labels():
    edges = np.arange(ZPL_BAND_START, ZPL_BAND_STOP + ZPL_BAND_WIDTH / 2, ZPL_BAND_WIDTH)
    labels = [f"{a / NM:.0f}-{b / NM:.0f}nm" for a, b in zip(edges[:-1], edges[1:])]
    return edges, labels


def _pearson(xs, ys):
    pairs = [(x, y) for x, y in zip(xs, ys) if x is not None and y is not None]
    if len(pairs) < 2:
        return None
    n = len(pairs)
    mx = math.fsum(p[0] for p in pairs) / n
    my = math.fsum(p[1] for p in pairs) / n
    sxy = math.fsum((x - mx) * (y - my) for x, y in pairs)
    sxx = math.fsum((x - mx) ** 2 for x, _ in pairs)
    syy = math.fsum((y - my) ** 2 for _, y in pairs)
    if sxx <= 0 or syy <= 0:
        return None
    return max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))


@dataclass
class SurveyStats:
    n_flakes: int
    n_defects: int
    n_hosting_flakes: int
    mean_defects_per_hosting_flake: float | None
    zpl_histogram: dict
    property_summary: dict
    correlation: dict

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


def survey_stats(records) -> SurveyStats:
    """Summary of a survey. Sums use ``math.fsum`` so the result does not
    depend on record order."""
    records = list(records)
    if not records:
        raise ValidationError("survey needs at least one record")
    defects = [r for r in records if r.is_defect]
    per_flake = {}
    for r in records:
        per_flake.setdefault(r.flake_id, 0)
        if r.is_defect:
            per_flake[r.flake_id] += 1
    hosting = [n for n in per_flake.values() if n > 0]
    mean_hosting = (math.fsum(hosting) / len(hosting)) if hosting else None

    edges, labels = _band_labels()
    hist = {lab: 0 for lab in labels}
    hist.update({"below": 0, "above": 0, "missing": 0})
    for r in defects:
        c = r.zpl_center
        if c is None:
            hist["missing"] += 1
        elif c < edges[0]:
            hist["below"] += 1
        elif c >= edges[-1]:
            hist["above"] += 1
        else:
            k = min(int((c - edges[0]) // ZPL_BAND_WIDTH), len(labels) - 1)
            hist[labels[k]] += 1

    summary = {}
    for name in ("zpl_center", "zpl_fwhm", "lifetime", "g2_zero", "alpha", "zpl_fraction",
                 "thickness", "edge_length"):
        vals = [_field(r, name) for r in defects]
        vals = [v for v in vals if v is not None]
        if vals:
            summary[name] = {"min": min(vals), "max": max(vals),
                             "mean": math.fsum(vals) / len(vals), "n": len(vals)}
        else:
            summary[name] = None

    cols = {f: [_field(r, f) for r in defects] for f in CORRELATION_FIELDS}
    corr = {a: {b: (1.0 if a == b and _pearson(cols[a], cols[b]) is not None
                    else _pearson(cols[a], cols[b]))
                for b in CORRELATION_FIELDS}
            for a in CORRELATION_FIELDS}
    return SurveyStats(len(per_flake), len(defects), len(hosting), mean_hosting, hist, summary,
                       corr)


# ---------------------------------------------------------------------------
# ZPL fraction
# ---------------------------------------------------------------------------

ZPL_FRACTION_CONVENTION = (
    "fitted ZPL peak integrated over the recorded window divided by the "
    "baseline-subtracted measured counts integrated over the same window "
    "(trapezoidal rule, wavelength axis)")


def zpl_peak_index(fit: FitResult):
    """1-based index of the tallest fitted peak."""
    n = fit.extras.get("n_peaks", 1)
    heights = [fit.params.get(f"height_{k}", fit.params[f"area_{k}"] / fit.params[f"fwhm_{k}"])
               for k in range(1, n + 1)]
    return int(np.argmax(heights)) + 1


def _zpl_window_area(wl_nm, c, w, a, eta):
    prof = PseudoVoigtModel(1).peak_profile(wl_nm, c, w, a, eta)
    return float(np.trapezoid(prof, wl_nm))


def _zpl_params(fit, k, p=None):
    names = fit.param_names
    get = (lambda n: fit.params[n]) if p is None else (lambda n: p[names.index(n)])
    eta = fit.extras.get("gauss_fraction")
    g = get(f"gauss_fraction_{k}") if eta is None else eta
    return get(f"center_{k}") / NM, get(f"fwhm_{k}") / NM, get(f"area_{k}") / NM, g


def zpl_fraction(s: Spectrum, fit: FitResult, zpl_peak=None, *, return_details=False):
    """Fraction of the emission in the ZPL over the recorded window.

    See ``ZPL_FRACTION_CONVENTION``. The denominator is measured, so phonon
    sideband emission not captured by any fitted peak still counts.
    """
    k = zpl_peak_index(fit) if zpl_peak is None else int(zpl_peak)
    wl = s.wavelength / NM
    base = fit.params["baseline"]
    total = float(np.trapezoid(s.counts - base, wl))
    # Poisson noise of the integral.
    dwl = np.gradient(wl)
    noise = float(np.sqrt(np.sum(np.maximum(s.counts, 1.0) * dwl**2)))
    if not total > 0 or total < 3.0 * noise:
        raise EmptySpectrum("no emission above the baseline in the recorded window")
    frac = _zpl_window_area(wl, *_zpl_params(fit, k)) / total
    if not return_details:
        return frac
    return {"zpl_fraction": frac, "zpl_peak": k, "total_area_nm": total,
            "noise_area_nm": noise, "convention": ZPL_FRACTION_CONVENTION}


# ---------------------------------------------------------------------------
# lifetime-bandwidth table
# ---------------------------------------------------------------------------

@dataclass
class LifetimeBandwidthTable:
    rows: list  # (flake_id, defect_id, product)
    min: float | None
    mean: float | None
    skipped: list

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION,
                "rows": [{"flake_id": f, "defect_id": d, "product": p} for f, d, p in self.rows],
                "min": self.min, "mean": self.mean,
                "skipped": [{"flake_id": f, "defect_id": d} for f, d in self.skipped]}


def lifetime_bandwidth_table(records) -> LifetimeBandwidthTable:
    rows, skipped = [], []
    for r in records:
        if not r.is_defect:
            continue
        if None in (r.zpl_center, r.zpl_fwhm, r.lifetime):
            skipped.append((r.flake_id, r.defect_id))
            warnings.warn(f"record {r.flake_id}/{r.defect_id} lacks ZPL center, width or "
                          "lifetime; skipped", IncompleteRecordWarning, stacklevel=2)
            continue
        rows.append((r.flake_id, r.defect_id,
                     float(lifetime_bandwidth_product(r.zpl_center, r.zpl_fwhm, r.lifetime))))
    prods = [p for _, _, p in rows]
    return LifetimeBandwidthTable(rows, min(prods) if prods else None,
                                  math.fsum(prods) / len(prods) if prods else None, skipped)


# ---------------------------------------------------------------------------
# before/after comparison
# ---------------------------------------------------------------------------

@dataclass
class Quantity:
    value: float
    ci95: tuple

    def to_dict(self):
        return {"value": self.value, "ci95": list(self.ci95)}


@dataclass
class TransferReport:
    zpl_shift: Quantity  # m
    brightness_ratio: Quantity
    fwhm_change: Quantity  # m
    lifetime_change: Quantity  # s
    g2_zero_change: Quantity
    zpl_fraction_change: Quantity
    before: dict = field(default_factory=dict)
    after: dict = field(default_factory=dict)

    QUANTITIES = ("zpl_shift", "brightness_ratio", "fwhm_change", "lifetime_change",
                  "g2_zero_change", "zpl_fraction_change")

    def to_dict(self):
        out = {"schema_version": SCHEMA_VERSION,
               "zpl_fraction_convention": ZPL_FRACTION_CONVENTION}
        for q in self.QUANTITIES:
            out[q] = getattr(self, q).to_dict()
        out["before"] = {k: v.to_dict() if hasattr(v, "to_dict") else v
                         for k, v in self.before.items()}
        out["after"] = {k: v.to_dict() if hasattr(v, "to_dict") else v
                        for k, v in self.after.items()}
        return out


def _ctx(label, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (FitError, ValidationError) as e:
        err = type(e).__new__(type(e))
        err.args = (f"{label}: {e}",)
        err.__dict__.update(getattr(e, "__dict__", {}))
        raise err from e


def _fit_set(label, data, n_peaks, n_mc, seed, lifetime_window, jitter_sigma):
    spec, decay, corr = data
    fs = _ctx(f"{label} spectrum fit", fit_spectrum, spec, n_peaks, n_mc=n_mc, seed=seed)
    fl = _ctx(f"{label} lifetime fit", fit_lifetime, decay, lifetime_window,
              jitter_sigma=jitter_sigma, n_mc=n_mc, seed=seed)
    fg = _ctx(f"{label} g2 fit", fit_g2, corr, n_mc=n_mc, seed=seed)
    k = zpl_peak_index(fs)
    frac = _ctx(f"{label} ZPL fraction", zpl_fraction, spec, fs, k, return_details=True)
    return fs, fl, fg, k, frac


def _col(res: FitResult, name):
    return res.samples[:, list(res.param_names).index(name)]


def _paired(est, a, b, op):
    n = min(a.size, b.size)
    d = op(a[:n], b[:n])
    lo, hi = np.percentile(d, [2.5, 97.5])
    return Quantity(float(est), (float(min(lo, est)), float(max(hi, est))))


def compare_emitters(before, after, *, n_peaks=1, n_mc=200, seed=0, lifetime_window=None,
                     jitter_sigma=0.0) -> TransferReport:
    """Fit both (Spectrum, DecayHistogram, CorrelationHistogram) sets and compare.

    The two measurements are independent, so each side gets its own
    bootstrap stream (derived from ``seed``) and differences are formed over
    independent replicate pairs. Identical inputs give exactly zero shifts
    and a unit ratio; their intervals reflect the measurement noise of both
    sides. Brightness is the fitted ZPL peak height.
    """
    seed_b, seed_a = (int(v) for v in np.random.SeedSequence(seed).generate_state(2))
    b = _fit_set("before", before, n_peaks, n_mc, seed_b, lifetime_window, jitter_sigma)
    a = _fit_set("after", after, n_peaks, n_mc, seed_a, lifetime_window, jitter_sigma)
    (bs, bl, bg, bk, bf), (as_, al, ag, ak, af) = b, a

    def diff(x, y):
        return y - x

    def ratio(x, y):
        return y / x

    shift = _paired(as_[f"center_{ak}"] - bs[f"center_{bk}"], _col(bs, f"center_{bk}"),
                    _col(as_, f"center_{ak}"), diff)
    bright = _paired(as_[f"height_{ak}"] / bs[f"height_{bk}"], _col(bs, f"height_{bk}"),
                     _col(as_, f"height_{ak}"), ratio)
    fwhm = _paired(as_[f"fwhm_{ak}"] - bs[f"fwhm_{bk}"], _col(bs, f"fwhm_{bk}"),
                   _col(as_, f"fwhm_{ak}"), diff)
    tau = _paired(al["lifetime"] - bl["lifetime"], _col(bl, "lifetime"), _col(al, "lifetime"),
                  diff)
    g2 = _paired(ag["g2_zero"] - bg["g2_zero"], _col(bg, "g2_zero"), _col(ag, "g2_zero"), diff)

    def frac_samples(res, spec, k, details):
        wl = spec.wavelength / NM
        return np.array([_zpl_window_area(wl, *_zpl_params(res, k, row))
                         for row in res.samples]) / details["total_area_nm"]

    fr = _paired(af["zpl_fraction"] - bf["zpl_fraction"], frac_samples(bs, before[0], bk, bf),
                 frac_samples(as_, after[0], ak, af), diff)
    return TransferReport(shift, bright, fwhm, tau, g2, fr,
                          {"spectrum": bs, "lifetime": bl, "g2": bg, "zpl_peak": bk,
                           "zpl_fraction": bf["zpl_fraction"]},
                          {"spectrum": as_, "lifetime": al, "g2": ag, "zpl_peak": ak,
                           "zpl_fraction": af["zpl_fraction"]})


# ---------------------------------------------------------------------------
# anneal summary
# ---------------------------------------------------------------------------

@dataclass
class AnnealSummary:
    rows: list  # (temperature, mean, std, n)
    best_temperature: float
    tied: list
    usable_band: tuple

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION,
                "rows": [{"temperature": t, "mean": m, "std": s, "n": n}
                         for t, m, s, n in self.rows],
                "best_temperature": self.best_temperature, "tied": self.tied,
                "usable_band": list(self.usable_band)}


def anneal_brightness_summary(groups: dict) -> AnnealSummary:
    """Mean and sample standard deviation (ddof=1) of brightness per anneal temperature.

    The best group has the largest mean; ties go to the lowest temperature
    and are listed in ``tied``. ``usable_band`` spans the temperatures whose
    mean lies within one standard deviation of the best mean.
    """
    if not groups:
        raise ValidationError("no anneal groups")
    rows = []
    for temp in sorted(groups):
        vals = np.asarray(groups[temp], dtype=float)
        if vals.size == 0:
            raise ValidationError(f"anneal group {temp} is empty")
        if vals.size == 1:
            warnings.warn(f"anneal group {temp} has a single sample; std reported as 0",
                          SmallSampleWarning, stacklevel=2)
            std = 0.0
        else:
            std = float(np.std(vals, ddof=1))
        rows.append((float(temp), math.fsum(vals) / vals.size, std, int(vals.size)))
    best_mean = max(r[1] for r in rows)
    tied = [r[0] for r in rows if r[1] == best_mean]
    best = min(tied)
    best_std = next(r[2] for r in rows if r[0] == best)
    near = [r[0] for r in rows if r[1] >= best_mean - best_std]
    return AnnealSummary(rows, best, tied if len(tied) > 1 else [], (min(near), max(near)))
