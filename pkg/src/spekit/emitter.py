"""Analytic photophysics of a three-level emitter.

Units are SI throughout (seconds, metres, watts, hertz). All functions are
pure and accept numpy arrays where it makes sense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal

import numpy as np

from .constants import ELEMENTARY_CHARGE, PLANCK, SPEED_OF_LIGHT
from .errors import DegenerateRates, InvalidRegime, ValidationError


@dataclass(frozen=True)
class ThreeLevelParams:
    """Parameters of ``g2(tau) = 1 - A exp(-|tau-mu|/t1) + B exp(-|tau-mu|/t2)``."""

    antibunch_amp: float
    bunch_amp: float
    excited_lifetime: float
    shelving_lifetime: float
    delay_offset: float = 0.0

    def __post_init__(self):
        if self.antibunch_amp < 0 or self.bunch_amp < 0:
            raise ValidationError("A and B must be non-negative")
        if not (self.excited_lifetime > 0 and self.shelving_lifetime > 0):
            raise ValidationError("t1 and t2 must be positive")
        if not self.shelving_lifetime > self.excited_lifetime:
            raise InvalidRegime("shelving lifetime t2 must exceed excited lifetime t1")
        if self.g2_zero < 0:
            raise ValidationError("g2(0) = 1 - A + B must be non-negative")

    @property
    def g2_zero(self):
        return 1.0 - self.antibunch_amp + self.bunch_amp

    def as_array(self):
        return np.array([self.antibunch_amp, self.bunch_amp, self.excited_lifetime,
                         self.shelving_lifetime, self.delay_offset])


@dataclass(frozen=True)
class SaturationParams:
    sat_intensity: float
    sat_power: float
    dark_intensity: float = 0.0

    def __post_init__(self):
        if not (self.sat_intensity > 0 and self.sat_power > 0):
            raise ValidationError("I_sat and P_sat must be positive")
        if self.dark_intensity < 0:
            raise ValidationError("I_d must be non-negative")


@dataclass(frozen=True)
class PowerLawParams:
    slope: float
    log_prefactor: float

    def __post_init__(self):
        if not self.slope > 0:
            raise ValidationError("power-law slope must be positive")


@dataclass(frozen=True)
class Peak:
    center: float
    fwhm: float
    area: float
    gauss_fraction: float = 0.0

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValidationError("peak FWHM must be positive")
        if self.area < 0:
            raise ValidationError("peak area must be non-negative")
        if not 0.0 <= self.gauss_fraction <= 1.0:
            raise ValidationError("gauss_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class LineshapeParams:
    peaks: tuple
    baseline: float = 0.0

    def check_range(self, wavelength):
        lo, hi = float(np.min(wavelength)), float(np.max(wavelength))
        for p in self.peaks:
            if not lo <= p.center <= hi:
                raise ValidationError(f"peak center {p.center:g} outside spectrum range")


@dataclass(frozen=True)
class ExcitationConstants:
    wavelength: float
    pulse_length: float
    rep_rate: float
    spot_diameter: float

    def __post_init__(self):
        if min(self.wavelength, self.pulse_length, self.rep_rate, self.spot_diameter) <= 0:
            raise ValidationError("excitation constants must be strictly positive")
        if self.pulse_length * self.rep_rate >= 1:
            raise ValidationError("pulse_length * rep_rate must be < 1")


@dataclass(frozen=True)
class EmitterRates:
    """Transition rates (1/s) of the ground/excited/shelving system."""

    excitation_rate: float
    radiative_rate: float
    intersystem_rate: float = 0.0
    deshelving_rate: float = 0.0
    quantum_efficiency: float = 1.0

    def __post_init__(self):
        if min(self.excitation_rate, self.intersystem_rate, self.deshelving_rate) < 0:
            raise ValidationError("rates must be non-negative")
        if not self.radiative_rate > 0:
            raise ValidationError("radiative rate must be positive")
        if not 0.0 <= self.quantum_efficiency <= 1.0:
            raise ValidationError("quantum efficiency must lie in [0, 1]")
        if self.intersystem_rate > 0 and self.deshelving_rate <= 0:
            raise ValidationError("a populated shelving state needs a positive deshelving rate")

    def rate_matrix(self):
        """Generator ``M`` of ``dp/dt = M p`` with state order (g, e, s)."""
        ke, kr, ki, kb = (self.excitation_rate, self.radiative_rate,
                          self.intersystem_rate, self.deshelving_rate)
        return np.array([
            [-ke, kr, kb],
            [ke, -(kr + ki), 0.0],
            [0.0, ki, -kb],
        ])

    def excited_population(self):
        """Steady-state excited-state population."""
        ke, kr, ki, kb = (self.excitation_rate, self.radiative_rate,
                          self.intersystem_rate, self.deshelving_rate)
        if ki == 0:
            return ke / (ke + kr)
        return ke * kb / (ke * ki + ke * kb + kr * kb + ki * kb)

    def photon_rate(self):
        """Mean emitted photon rate (1/s) including quantum efficiency."""
        return self.radiative_rate * self.excited_population() * self.quantum_efficiency


def g2_model(tau, p: ThreeLevelParams):
    x = np.abs(np.asarray(tau, dtype=float) - p.delay_offset)
    return (1.0 - p.antibunch_amp * np.exp(-x / p.excited_lifetime)
            + p.bunch_amp * np.exp(-x / p.shelving_lifetime))


def saturation_model(power, p: SaturationParams):
    power = np.asarray(power, dtype=float)
    if np.any(power < 0):
        raise ValidationError("excitation power must be non-negative")
    return p.sat_intensity * power / (power + p.sat_power) + p.dark_intensity


def power_law_model(power, p: PowerLawParams):
    return np.exp(p.log_prefactor) * np.asarray(power, dtype=float) ** p.slope


def linewidth_to_bandwidth(center, fwhm):
    """Convert a wavelength linewidth to a frequency linewidth, ``c*dl/l0**2``."""
    if np.any(np.asarray(center) <= 0) or np.any(np.asarray(fwhm) < 0):
        raise ValidationError("need center > 0 and fwhm >= 0")
    return SPEED_OF_LIGHT * np.asarray(fwhm, dtype=float) / np.asarray(center, dtype=float) ** 2


def lifetime_bandwidth_product(center, fwhm, lifetime):
    return linewidth_to_bandwidth(center, fwhm) * lifetime


def lifetime_for_product(center, fwhm, product):
    """Lifetime that yields ``product`` for the given line (inverse of the above)."""
    return product / linewidth_to_bandwidth(center, fwhm)


def photon_energy(wavelength):
    """Photon energy in eV."""
    wavelength = np.asarray(wavelength, dtype=float)
    if np.any(wavelength <= 0):
        raise ValidationError("wavelength must be positive")
    return PLANCK * SPEED_OF_LIGHT / (wavelength * ELEMENTARY_CHARGE)


def duty_cycle(pulse_length, rep_rate):
    """Fraction of time the laser is on.

    The product is taken on the shortest decimal form of each input, so
    ``duty_cycle(300e-15, 20.8e6) == 6.24e-6`` holds exactly.
    """
    d = float(Decimal(repr(float(pulse_length))) * Decimal(repr(float(rep_rate))))
    if d >= 1:
        raise ValidationError("pulse_length * rep_rate must be < 1")
    return d


def peak_intensity(avg_power, duty, spot_diameter, area_convention="diameter"):
    """Peak intensity (W/m^2) of a pulsed beam.

    ``area_convention="diameter"`` uses ``A = pi*d**2``, which is what
    gives 1.62 GW/cm^2 from 142.6 uW, 6.24e-6 duty and a
    0.67 um spot. ``"textbook"`` uses the disc area ``pi*d**2/4``.
    """
    if avg_power <= 0 or spot_diameter <= 0 or not 0 < duty <= 1:
        raise ValidationError("need positive power and diameter, 0 < duty <= 1")
    if area_convention == "diameter":
        area = math.pi * spot_diameter**2
    elif area_convention == "textbook":
        area = math.pi * spot_diameter**2 / 4.0
    else:
        raise ValidationError(f"unknown area convention {area_convention!r}")
    return avg_power / (duty * area)


def g2_from_rates(rates: EmitterRates, excitation_rate=None, signal_fraction=1.0):
    """Analytic g2 parameters for a three-level rate model.

    The two non-zero eigenvalues of the rate matrix give ``1/t1`` (fast) and
    ``1/t2`` (slow). ``signal_fraction`` is the fraction of detected counts
    per channel that come from the emitter; uncorrelated background scales
    both amplitudes by its square.
    """
    if excitation_rate is not None:
        rates = EmitterRates(excitation_rate, rates.radiative_rate, rates.intersystem_rate,
                             rates.deshelving_rate, rates.quantum_efficiency)
    ke, kr, ki, kb = (rates.excitation_rate, rates.radiative_rate,
                      rates.intersystem_rate, rates.deshelving_rate)
    if ke <= 0:
        raise ValidationError("excitation rate must be positive")
    if not 0.0 < signal_fraction <= 1.0:
        raise ValidationError("signal_fraction must lie in (0, 1]")
    rho2 = signal_fraction**2

    if ki == 0:
        t1 = 1.0 / (ke + kr)
        # Shelving state is unreachable; t2 only has to satisfy t2 > t1.
        t2 = 1.0 / kb if 0 < kb < ke + kr else 10.0 * t1
        return ThreeLevelParams(rho2, 0.0, t1, t2, 0.0)

    s = ke + kr + ki + kb
    prod = ke * ki + ke * kb + kr * kb + ki * kb
    disc = s * s - 4.0 * prod
    if disc < 0:
        raise DegenerateRates("complex relaxation rates: g2 rings and has no "
                              "two-exponential form")
    root = math.sqrt(disc)
    lam_fast = 0.5 * (s + root)
    lam_slow = prod / lam_fast  # avoids cancellation in 0.5*(s - root)
    if lam_fast - lam_slow <= 1e-9 * lam_fast:
        raise DegenerateRates("fast and slow relaxation rates coincide")
    # p_e(t) from ground: p_inf + C1 exp(-lam_fast t) + C2 exp(-lam_slow t), p_e(0)=0,
    # p_e'(0)=ke; k_exc/p_inf = prod/kb.
    amp_a = (prod / kb - lam_slow) / (lam_fast - lam_slow)
    amp_b = amp_a - 1.0
    if amp_b < 0:
        raise InvalidRegime("rates give no bunching (deshelving faster than the excited decay)")
    return ThreeLevelParams(rho2 * amp_a, rho2 * amp_b, 1.0 / lam_fast, 1.0 / lam_slow, 0.0)


def background_for_g2_zero(signal_rate, g2_zero):
    """Uncorrelated per-channel background rate that lifts an ideal g2(0)=0 to ``g2_zero``."""
    if not 0.0 <= g2_zero < 1.0:
        raise ValidationError("target g2(0) must lie in [0, 1)")
    rho = math.sqrt(1.0 - g2_zero)
    return signal_rate * (1.0 - rho) / rho
