"""Physical constants (CODATA 2018, exact SI where defined) and material data."""

SPEED_OF_LIGHT = 299_792_458.0  # m/s
PLANCK = 6.626_070_15e-34  # J s
ELEMENTARY_CHARGE = 1.602_176_634e-19  # C

# hBN band gap, E_g = 5.955 eV. Documented only; no computation depends on it.
HBN_BANDGAP_EV = 5.955

# Effective hBN index for green light, calibrated from AFM + PSI data.
HBN_INDEX_GREEN = 1.849

# Indices at 522 nm.
# SiO2: Malitson (1965) Sellmeier for fused silica, 1.4613 at 522 nm.
# Si: Green (2008) crystalline Si tables, n = 4.21, k = 0.039 near 520 nm.
SIO2_INDEX_522 = 1.4613
SI_INDEX_522 = complex(4.21, 0.039)

SIO2_CAP_THICKNESS = 280e-9  # m, thermal oxide on the Si substrate

# Excitation setup
EXCITATION_WAVELENGTH = 522e-9  # m
PULSE_LENGTH = 300e-15  # s
REP_RATE = 20.8e6  # Hz
SPOT_DIAMETER = 0.67e-6  # m
DARK_RATE_DEFAULT = 20.0  # counts/s per detector

# Single-emitter cut; records above this g2(0) are ensembles.
ENSEMBLE_G2_THRESHOLD = 0.5

SCHEMA_VERSION = 1
