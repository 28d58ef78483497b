"""Least-squares fitting with Monte Carlo confidence intervals."""

from .core import FitProblem, FitResult, MCResult, mc_confidence
from .fits import (Spectrum, classify_slope, default_lifetime_window, fit_g2, fit_lifetime,
                   fit_power_law, fit_saturation, fit_spectrum, lineshape_from_result,
                   read_spectrum_csv, spectrum_model_si, three_level_params, write_spectrum_csv)
from .lm import LMResult, levenberg_marquardt
from .models import (ExpDecayModel, G2Model, LineModel, PseudoVoigtModel, SaturationModel,
                     numeric_jacobian)

__all__ = [
    "FitProblem", "FitResult", "MCResult", "mc_confidence", "Spectrum", "classify_slope",
    "default_lifetime_window", "fit_g2", "fit_lifetime", "fit_power_law", "fit_saturation",
    "fit_spectrum", "lineshape_from_result", "read_spectrum_csv", "spectrum_model_si",
    "three_level_params", "write_spectrum_csv", "LMResult", "levenberg_marquardt",
    "ExpDecayModel", "G2Model", "LineModel", "PseudoVoigtModel", "SaturationModel",
    "numeric_jacobian",
]
