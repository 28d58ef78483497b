"""``spekit`` command line.

Exit codes: 0 success, 2 invalid input, 3 fit failure, 4 I/O error.
Every subcommand is a pure function of its input files, flags and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (anneal_brightness_summary, compare_emitters, lifetime_bandwidth_table,
                       load_records, survey_stats, zpl_fraction)
from .constants import EXCITATION_WAVELENGTH, HBN_INDEX_GREEN, SCHEMA_VERSION, SIO2_CAP_THICKNESS
from .correlator import (CorrelationHistogram, DecayHistogram, correlate, log_bin_edges, normalize_g2,
                         read_correlation_csv, read_decay_csv, trpl_histogram,
                         write_correlation_csv, write_decay_csv)
from .emitter import EmitterRates, g2_from_rates, g2_model
from .errors import FitError, ValidationError
from .fitkit import (FitResult, fit_g2, fit_lifetime, fit_saturation, fit_spectrum,
                     read_spectrum_csv, spectrum_model_si, three_level_params)
from .photon_sim import DetectorConfig, ExcitationConfig, simulate_cw, simulate_pulsed
from .stream import read_ett, write_ett
from .thinfilm import (Ambiguous, build_opl_curve, default_substrate_stack, fit_index,
                       invert_opl, read_curve_json, read_stack_json, write_curve_csv)

EXIT_OK, EXIT_INVALID, EXIT_FIT, EXIT_IO = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return [_plain(x) for x in v.tolist()]
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if hasattr(v, "to_dict"):
        return _plain(v.to_dict())
    return v


def _json_text(obj):
    return json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n"


def _emit_text(text, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _target(out):
    return sys.stdout if out is None or str(out) == "-" else out


def _emit_json(obj, out):
    _emit_text(_json_text(obj), out)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
    return buf.getvalue()


def _fit_csv(res: FitResult):
    rows = []
    for name, val in res.params.items():
        lo, hi = res.ci95.get(name, (float("nan"), float("nan")))
        rows.append((name, float(val), float(lo), float(hi)))
    return _csv_text(["param", "estimate", "ci_low", "ci_high"], rows)


def _emit_fit(res: FitResult, args):
    if args.format == "csv":
        _emit_text(_fit_csv(res), args.out)
    else:
        _emit_json(res.to_dict(), args.out)


def _read_table(path, columns):
    data = np.genfromtxt(path, delimiter=",", names=True)
    missing = [c for c in columns if c not in (data.dtype.names or ())]
    if missing:
        raise ValidationError(f"{path}: missing column(s) {', '.join(missing)}")
    return [np.atleast_1d(data[c]).astype(float) for c in columns]


def _read_hist(path) -> CorrelationHistogram:
    path = str(path)
    if path.endswith(".json"):
        d = json.loads(Path(path).read_text())
        return CorrelationHistogram(np.asarray(d["bin_edges_ps"]), np.asarray(d["raw_counts"]),
                                    np.asarray(d["normalized"]), d["normalization_factor"],
                                    tuple(d.get("lag_range_ps", (0, 0))), d.get("meta", {}))
    return read_correlation_csv(path)


def _hist_dict(h: CorrelationHistogram):
    return {"schema_version": SCHEMA_VERSION, "bin_edges_ps": h.bin_edges,
            "raw_counts": h.raw_counts, "normalized": h.normalized,
            "normalization_factor": h.normalization_factor, "lag_range_ps": list(h.lag_range),
            "meta": h.meta}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    rates = EmitterRates(args.excitation_rate, args.radiative_rate, args.intersystem_rate,
                         args.deshelving_rate, args.quantum_efficiency)
    det = DetectorConfig(args.efficiency, args.dark_rate, args.dead_time, args.jitter)
    if args.mode == "cw":
        stream = simulate_cw(rates, det, args.duration, args.seed)
    else:
        exc = ExcitationConfig("pulsed", excitation_probability=args.excitation_probability,
                               rep_rate=args.rep_rate)
        stream = simulate_pulsed(rates, det, exc, args.n_pulses, args.seed)
    if args.out is None:
        raise ValidationError("simulate needs --out for the ETT1 file")
    write_ett(stream, args.out)
    summary = {"schema_version": SCHEMA_VERSION, "path": str(args.out),
               "n_tags": int(stream.timestamps.size), "duration_ps": int(stream.duration),
               "counts": {str(c): int(np.count_nonzero(stream.channels == c)) for c in (0, 1, 2)}}
    if args.mode == "cw" and args.intersystem_rate > 0:
        try:
            p = g2_from_rates(rates)
            summary["g2_model"] = {"antibunch_amp": p.antibunch_amp, "bunch_amp": p.bunch_amp,
                                   "excited_lifetime": p.excited_lifetime,
                                   "shelving_lifetime": p.shelving_lifetime}
        except (ValidationError, FitError):
            pass
    sys.stdout.write(_json_text(summary))


def _default_bin_width(stream):
    """t1/20 from the generating rates when the stream carries them, else 100 ps."""
    r = stream.metadata.get("rates")
    if r:
        t1 = 1.0 / (r["excitation_rate"] + r["radiative_rate"])
        return max(1, int(round(t1 * 1e12 / 20)))
    return 100


def cmd_correlate(args):
    stream = read_ett(args.input)
    bw = args.bin_width or _default_bin_width(stream)
    edges = None
    if args.log_bins:
        edges = log_bin_edges(args.min_lag or bw, args.max_lag, args.log_bins)
    hist = correlate(stream, bw, args.max_lag, edges=edges, mode=args.mode,
                     n_chunks=args.chunks, normalize=args.mode == "full")
    if args.mode == "full" and args.normalization == "empirical":
        hist = normalize_g2(hist, stream, method="empirical")
    if args.format == "csv":
        write_correlation_csv(hist, _target(args.out))
    else:
        _emit_json(_hist_dict(hist), args.out)


def cmd_trpl(args):
    stream = read_ett(args.input)
    decay = trpl_histogram(stream, args.bin_width, args.rep_rate)
    if args.format == "csv":
        write_decay_csv(decay, _target(args.out))
    else:
        _emit_json({"schema_version": SCHEMA_VERSION, "bin_edges_ps": decay.bin_edges,
                    "counts": decay.counts, "n_sync": decay.n_sync,
                    "rep_rate": decay.rep_rate}, args.out)


def _read_decay(path):
    path = str(path)
    if path.endswith(".json"):
        d = json.loads(Path(path).read_text())
        return DecayHistogram(np.asarray(d["bin_edges_ps"]), np.asarray(d["counts"]),
                              int(d.get("n_sync", 0)), d.get("rep_rate"))
    return read_decay_csv(path)


def cmd_fit_g2(args):
    res = fit_g2(_read_hist(args.input), n_mc=args.n_mc, seed=args.seed,
                 bootstrap=not args.no_bootstrap)
    _emit_fit(res, args)


def cmd_fit_lifetime(args):
    window = tuple(args.window) if args.window else None
    res = fit_lifetime(_read_decay(args.input), window, jitter_sigma=args.jitter,
                       n_mc=args.n_mc, seed=args.seed, bootstrap=not args.no_bootstrap)
    _emit_fit(res, args)


def cmd_fit_saturation(args):
    p, i = _read_table(args.input, ["power_w", "intensity_cps"])
    res = fit_saturation(p, i, n_mc=args.n_mc, seed=args.seed, bootstrap=not args.no_bootstrap)
    _emit_fit(res, args)


def _gauss_fraction(text):
    if text == "free":
        return None
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("gauss fraction must be in [0, 1] or 'free'")
    return v


def cmd_fit_spectrum(args):
    spec = read_spectrum_csv(args.input)
    res = fit_spectrum(spec, args.n_peaks, gauss_fraction=args.gauss_fraction, n_mc=args.n_mc,
                       seed=args.seed, bootstrap=not args.no_bootstrap)
    try:
        res.extras["zpl_fraction"] = zpl_fraction(spec, res, return_details=True)
    except ValidationError as e:
        res.extras["zpl_fraction"] = {"error": str(e)}
    _emit_fit(res, args)


def _stack(args):
    if args.stack:
        return read_stack_json(args.stack)
    return default_substrate_stack(args.wavelength_nm * 1e-9, args.oxide_nm * 1e-9)


def cmd_thinfilm(args):
    if args.action == "curve":
        curve = build_opl_curve(_stack(args), (args.min_nm * 1e-9, args.max_nm * 1e-9),
                                args.index, None if args.step_nm is None else args.step_nm * 1e-9)
        if args.format == "csv":
            write_curve_csv(curve, _target(args.out))
        else:
            _emit_json(curve.to_dict(), args.out)
    elif args.action == "invert":
        curve = read_curve_json(args.curve)
        r = invert_opl(curve, args.opl_nm * 1e-9)
        out = {"schema_version": SCHEMA_VERSION, "opl_m": args.opl_nm * 1e-9}
        if isinstance(r, Ambiguous):
            out.update(ambiguous=True, candidates_m=list(r.candidates))
        else:
            out.update(ambiguous=False, thickness_m=r)
        _emit_json(out, args.out)
    else:
        t, o = _read_table(args.input, ["thickness_nm", "opl_nm"])
        sigma = None if args.opl_sigma_nm is None else args.opl_sigma_nm * 1e-9
        cal = fit_index(np.c_[t * 1e-9, o * 1e-9], _stack(args), opl_sigma=sigma,
                        n_mc=args.n_mc, seed=args.seed)
        _emit_json(cal.to_dict(), args.out)


def cmd_survey(args):
    records = load_records(args.input, allow_ensemble=args.allow_ensemble)
    stats = survey_stats(records)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = lifetime_bandwidth_table(records)
    out = {"schema_version": SCHEMA_VERSION, "survey": stats.to_dict(),
           "lifetime_bandwidth": table.to_dict()}
    if args.anneal:
        groups = json.loads(Path(args.anneal).read_text())
        out["anneal"] = anneal_brightness_summary({float(k): v for k, v in groups.items()})
    if args.format == "csv":
        rows = [(k, v) for k, v in stats.zpl_histogram.items()]
        _emit_text(_csv_text(["zpl_band", "count"], rows), args.out)
    else:
        _emit_json(out, args.out)


def _triple(prefix, args):
    return (read_spectrum_csv(getattr(args, f"{prefix}_spectrum")),
            _read_decay(getattr(args, f"{prefix}_decay")),
            _read_hist(getattr(args, f"{prefix}_g2")))


def cmd_compare(args):
    rep = compare_emitters(_triple("before", args), _triple("after", args),
                           n_peaks=args.n_peaks, n_mc=args.n_mc, seed=args.seed)
    if args.format == "csv":
        rows = [(q, getattr(rep, q).value, *getattr(rep, q).ci95) for q in rep.QUANTITIES]
        _emit_text(_csv_text(["quantity", "value", "ci_low", "ci_high"], rows), args.out)
    else:
        _emit_json(rep.to_dict(), args.out)


def cmd_report(args):
    """Full characterization: spectrum, g2, lifetime and optional saturation,
    written as one JSON summary plus plot-ready CSV tables in ``--out``."""
    out = Path(args.out or "report")
    out.mkdir(parents=True, exist_ok=True)
    summary = {"schema_version": SCHEMA_VERSION, "seed": args.seed}
    files = {}
    if args.spectrum:
        spec = read_spectrum_csv(args.spectrum)
        fs = fit_spectrum(spec, args.n_peaks, n_mc=args.n_mc, seed=args.seed)
        summary["spectrum"] = fs.to_dict()
        try:
            summary["zpl_fraction"] = zpl_fraction(spec, fs, return_details=True)
        except ValidationError as e:
            summary["zpl_fraction"] = {"error": str(e)}
        model = spectrum_model_si(fs, spec.wavelength)
        files["spectrum.csv"] = _csv_text(
            ["wavelength_nm", "counts", "model"],
            zip(spec.wavelength * 1e9, spec.counts, model))
    if args.g2:
        h = _read_hist(args.g2)
        fg = fit_g2(h, n_mc=args.n_mc, seed=args.seed)
        summary["g2"] = fg.to_dict()
        model = g2_model(h.bin_centers * 1e-12, three_level_params(fg))
        files["g2.csv"] = _csv_text(["delay_ns", "g2", "model"],
                                    zip(h.bin_centers / 1000.0, h.normalized, model))
    if args.decay:
        d = _read_decay(args.decay)
        fl = fit_lifetime(d, n_mc=args.n_mc, seed=args.seed)
        summary["lifetime"] = fl.to_dict()
        c, tau, b = (fl.params["amplitude"], fl.params["lifetime"], fl.params["baseline"])
        x0 = fl.extras["fit_window_ps"][0]
        t = d.bin_centers
        model = np.where(t >= x0, c * np.exp(-(t - x0) * 1e-12 / tau) + b, np.nan)
        files["decay.csv"] = _csv_text(["delay_ns", "counts", "model"],
                                       zip(t / 1000.0, d.counts.astype(float), model))
    if args.saturation:
        p, i = _read_table(args.saturation, ["power_w", "intensity_cps"])
        fsat = fit_saturation(p, i, n_mc=args.n_mc, seed=args.seed)
        summary["saturation"] = fsat.to_dict()
        sp = fsat.params
        model = sp["sat_intensity"] * p / (p + sp["sat_power"]) + sp["dark_intensity"]
        files["saturation.csv"] = _csv_text(["power_uw", "intensity_cps", "model"],
                                            zip(p * 1e6, i, model))
    if len(summary) == 2:
        raise ValidationError("report needs at least one of --spectrum, --g2, --decay, "
                              "--saturation")
    summary["tables"] = sorted(files)
    (out / "report.json").write_text(_json_text(summary))
    for name, text in files.items():
        (out / name).write_text(text)
    sys.stdout.write(_json_text({"report": str(out / "report.json"), "tables": sorted(files)}))


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=0, help="RNG seed (u64)")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")

    fitopts = argparse.ArgumentParser(add_help=False)
    fitopts.add_argument("--n-mc", type=int, default=200, help="bootstrap samples (>= 100)")
    fitopts.add_argument("--no-bootstrap", action="store_true")

    p = argparse.ArgumentParser(prog="spekit", description="Single-photon emitter analysis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate an HBT or TRPL stream")
    s.add_argument("--mode", choices=("cw", "pulsed"), default="cw")
    s.add_argument("--excitation-rate", type=float, default=1e8, help="1/s (cw)")
    s.add_argument("--radiative-rate", type=float, default=1 / 1.123e-9, help="1/s")
    s.add_argument("--intersystem-rate", type=float, default=0.0, help="1/s")
    s.add_argument("--deshelving-rate", type=float, default=0.0, help="1/s")
    s.add_argument("--quantum-efficiency", type=float, default=1.0)
    s.add_argument("--efficiency", type=float, default=1.0, help="detector efficiency")
    s.add_argument("--dark-rate", type=float, default=20.0, help="1/s per detector")
    s.add_argument("--dead-time", type=float, default=0.0, help="s")
    s.add_argument("--jitter", type=float, default=0.0, help="timing jitter sigma, s")
    s.add_argument("--duration", type=float, default=0.01, help="s (cw)")
    s.add_argument("--n-pulses", type=int, default=100000)
    s.add_argument("--rep-rate", type=float, default=20.8e6, help="Hz")
    s.add_argument("--excitation-probability", type=float, default=1.0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("correlate", parents=[common], help="g2 histogram from an ETT1 stream")
    s.add_argument("input")
    s.add_argument("--bin-width", type=int, help="ps (default: t1/20 from metadata, else 100)")
    s.add_argument("--max-lag", type=int, default=200_000, help="ps")
    s.add_argument("--mode", choices=("full", "start-stop"), default="full")
    s.add_argument("--normalization", choices=("analytic", "empirical"), default="analytic")
    s.add_argument("--log-bins", type=int, default=0, help="log-spaced bins per side")
    s.add_argument("--min-lag", type=int, help="ps, first log bin edge")
    s.add_argument("--chunks", type=int, default=1)
    s.set_defaults(func=cmd_correlate)

    s = sub.add_parser("trpl", parents=[common], help="decay histogram from SYNC tags")
    s.add_argument("input")
    s.add_argument("--bin-width", type=int, default=16, help="ps")
    s.add_argument("--rep-rate", type=float, help="Hz (default: from metadata)")
    s.set_defaults(func=cmd_trpl)

    s = sub.add_parser("fit-g2", parents=[common, fitopts], help="three-level g2 fit")
    s.add_argument("input", help="correlation CSV or JSON")
    s.set_defaults(func=cmd_fit_g2)

    s = sub.add_parser("fit-lifetime", parents=[common, fitopts], help="exponential tail fit")
    s.add_argument("input", help="decay CSV or JSON")
    s.add_argument("--window", type=float, nargs=2, metavar=("START_PS", "END_PS"))
    s.add_argument("--jitter", type=float, default=0.0, help="timing jitter sigma, s")
    s.set_defaults(func=cmd_fit_lifetime)

    s = sub.add_parser("fit-saturation", parents=[common, fitopts], help="saturation fit")
    s.add_argument("input", help="CSV with power_w,intensity_cps")
    s.set_defaults(func=cmd_fit_saturation)

    s = sub.add_parser("fit-spectrum", parents=[common, fitopts], help="multi-peak fit")
    s.add_argument("input", help="CSV with wavelength_nm,counts")
    s.add_argument("--n-peaks", type=int, default=1)
    s.add_argument("--gauss-fraction", type=_gauss_fraction, default=0.0,
                   help="fixed Gaussian fraction in [0, 1] or 'free'")
    s.set_defaults(func=cmd_fit_spectrum)

    s = sub.add_parser("thinfilm", parents=[common], help="PSI OPL curves and calibration")
    s.add_argument("action", choices=("curve", "invert", "calibrate"))
    s.add_argument("input", nargs="?", help="calibrate: CSV with thickness_nm,opl_nm")
    s.add_argument("--stack", help="JSON layer stack (default: SiO2 cap on Si)")
    s.add_argument("--wavelength-nm", type=float, default=EXCITATION_WAVELENGTH * 1e9)
    s.add_argument("--oxide-nm", type=float, default=SIO2_CAP_THICKNESS * 1e9)
    s.add_argument("--index", type=float, default=HBN_INDEX_GREEN, help="flake index")
    s.add_argument("--min-nm", type=float, default=0.0)
    s.add_argument("--max-nm", type=float, default=120.0)
    s.add_argument("--step-nm", type=float)
    s.add_argument("--curve", help="invert: curve JSON from 'thinfilm curve'")
    s.add_argument("--opl-nm", type=float, help="invert: measured OPL")
    s.add_argument("--opl-sigma-nm", type=float, help="calibrate: OPL noise")
    s.add_argument("--n-mc", type=int, default=200)
    s.set_defaults(func=cmd_thinfilm)

    s = sub.add_parser("survey", parents=[common], help="survey statistics")
    s.add_argument("input", help="records JSON or CSV")
    s.add_argument("--allow-ensemble", action="store_true",
                   help="accept single-emitter records with g2(0) > 0.5")
    s.add_argument("--anneal", help="JSON map anneal temperature (K) -> brightness samples")
    s.set_defaults(func=cmd_survey)

    s = sub.add_parser("compare", parents=[common], help="before/after emitter comparison")
    for side in ("before", "after"):
        s.add_argument(f"--{side}-spectrum", required=True)
        s.add_argument(f"--{side}-decay", required=True)
        s.add_argument(f"--{side}-g2", required=True)
    s.add_argument("--n-peaks", type=int, default=1)
    s.add_argument("--n-mc", type=int, default=200)
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("report", parents=[common], help="full characterization bundle")
    s.add_argument("--spectrum")
    s.add_argument("--g2")
    s.add_argument("--decay")
    s.add_argument("--saturation")
    s.add_argument("--n-peaks", type=int, default=1)
    s.add_argument("--n-mc", type=int, default=200)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "thinfilm":
        if args.action == "invert" and (args.curve is None or args.opl_nm is None):
            parser.error("thinfilm invert needs --curve and --opl-nm")
        if args.action == "calibrate" and args.input is None:
            parser.error("thinfilm calibrate needs an input CSV")
    try:
        args.func(args)
    except ValidationError as e:
        print(f"spekit: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except FitError as e:
        print(f"spekit: fit failed: {e}", file=sys.stderr)
        return EXIT_FIT
    except OSError as e:
        print(f"spekit: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
