"""Fit models with analytic Jacobians.

Every model works in internal units chosen to keep parameters O(1):
nanoseconds for time, nanometres for wavelength, microwatts for power.
The ``fits`` module converts to and from SI.
"""

from __future__ import annotations

import math

import numpy as np


class Model:
    model_id = "base"
    param_names: tuple = ()

    def __call__(self, x, p):
        raise NotImplementedError

    def jac(self, x, p):
        return numeric_jacobian(self, x, p)

    def bounds(self, x):
        n = len(self.param_names)
        return np.full(n, -np.inf), np.full(n, np.inf)


def numeric_jacobian(f, x, p, rel_step=1e-6):
    """Central-difference Jacobian, used as an oracle and for models without one."""
    p = np.asarray(p, dtype=float)
    cols = []
    for i in range(p.size):
        h = rel_step * max(abs(p[i]), 1e-3)
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        cols.append((f(x, up) - f(x, dn)) / (2 * h))
    return np.column_stack(cols)


class G2Model(Model):
    """``1 - A exp(-|x-mu|/t1) + B exp(-|x-mu|/t2)``; x, t1, t2, mu in ns."""

    model_id = "g2_three_level"
    param_names = ("antibunch_amp", "bunch_amp", "excited_lifetime", "shelving_lifetime",
                   "delay_offset")

    def __call__(self, x, p):
        a, b, t1, t2, mu = p
        ax = np.abs(x - mu)
        return 1.0 - a * np.exp(-ax / t1) + b * np.exp(-ax / t2)

    def jac(self, x, p):
        a, b, t1, t2, mu = p
        dx = x - mu
        ax = np.abs(dx)
        e1 = np.exp(-ax / t1)
        e2 = np.exp(-ax / t2)
        d_ax = a * e1 / t1 - b * e2 / t2
        return np.column_stack((-e1, e2, -a * e1 * ax / t1**2, b * e2 * ax / t2**2,
                                -np.sign(dx) * d_ax))


class ExpDecayModel(Model):
    """``c exp(-(x - x0)/tau) + baseline``; x0 is fixed at the window start."""

    model_id = "single_exponential"
    param_names = ("amplitude", "lifetime", "baseline")

    def __init__(self, x0=0.0):
        self.x0 = float(x0)

    def __call__(self, x, p):
        c, tau, b = p
        return c * np.exp(-(x - self.x0) / tau) + b

    def jac(self, x, p):
        c, tau, b = p
        e = np.exp(-(x - self.x0) / tau)
        return np.column_stack((e, c * e * (x - self.x0) / tau**2, np.ones_like(x)))


class SaturationModel(Model):
    """``I_sat P / (P + P_sat) + I_d``."""

    model_id = "saturation"
    param_names = ("sat_intensity", "sat_power", "dark_intensity")

    def __call__(self, x, p):
        i_sat, p_sat, i_d = p
        return i_sat * x / (x + p_sat) + i_d

    def jac(self, x, p):
        i_sat, p_sat, i_d = p
        s = x + p_sat
        return np.column_stack((x / s, -i_sat * x / s**2, np.ones_like(x)))


class LineModel(Model):
    """``slope * x + intercept``; used for log-log power laws."""

    model_id = "power_law"
    param_names = ("slope", "log_prefactor")

    def __call__(self, x, p):
        return p[0] * x + p[1]

    def jac(self, x, p):
        return np.column_stack((x, np.ones_like(x)))


_L0 = 2.0 / math.pi
_C = 4.0 * math.log(2.0)
_G0 = 2.0 * math.sqrt(math.log(2.0) / math.pi)


def lorentzian(x, center, fwhm):
    """Area-normalized Lorentzian."""
    u = (x - center) / fwhm
    return _L0 / (fwhm * (1.0 + 4.0 * u * u))


def gaussian(x, center, fwhm):
    """Area-normalized Gaussian with the given FWHM."""
    u = (x - center) / fwhm
    return _G0 / fwhm * np.exp(-_C * u * u)


class PseudoVoigtModel(Model):
    """Sum of area-parameterized pseudo-Voigt peaks on a constant baseline.

    Per peak: center, fwhm, area and, when ``free_eta``, the Gaussian
    fraction. Otherwise every peak uses the fixed ``eta``.
    """

    model_id = "pseudo_voigt"

    def __init__(self, n_peaks, free_eta=False, eta=0.0):
        self.n_peaks = int(n_peaks)
        self.free_eta = bool(free_eta)
        self.eta = float(eta)
        self.per_peak = 4 if free_eta else 3
        names = []
        for k in range(1, self.n_peaks + 1):
            names += [f"center_{k}", f"fwhm_{k}", f"area_{k}"]
            if free_eta:
                names.append(f"gauss_fraction_{k}")
        names.append("baseline")
        self.param_names = tuple(names)

    def peaks(self, p):
        out = []
        for k in range(self.n_peaks):
            q = p[k * self.per_peak:(k + 1) * self.per_peak]
            eta = q[3] if self.free_eta else self.eta
            out.append((q[0], q[1], q[2], eta))
        return out

    def peak_profile(self, x, center, fwhm, area, eta):
        return area * (eta * gaussian(x, center, fwhm) + (1.0 - eta) * lorentzian(x, center, fwhm))

    def __call__(self, x, p):
        y = np.full(np.shape(x), float(p[-1]))
        for c, w, a, eta in self.peaks(p):
            y = y + self.peak_profile(x, c, w, a, eta)
        return y

    def jac(self, x, p):
        cols = []
        for c, w, a, eta in self.peaks(p):
            u = (x - c) / w
            den = 1.0 + 4.0 * u * u
            L = _L0 / (w * den)
            G = _G0 / w * np.exp(-_C * u * u)
            dL_dc = _L0 * 8.0 * u / (w * w * den * den)
            dL_dw = -L / w + _L0 * 8.0 * u * u / (w * w * den * den)
            dG_dc = 2.0 * _C * u * G / w
            dG_dw = -G / w + 2.0 * _C * u * u * G / w
            cols += [a * (eta * dG_dc + (1 - eta) * dL_dc),
                     a * (eta * dG_dw + (1 - eta) * dL_dw),
                     eta * G + (1 - eta) * L]
            if self.free_eta:
                cols.append(a * (G - L))
        cols.append(np.ones_like(x))
        return np.column_stack(cols)
