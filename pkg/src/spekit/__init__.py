"""Single-photon emitter analysis: photon statistics simulation, time-tag
correlation, model fitting with Monte Carlo intervals and thin-film optics.

Set ``SPEKIT_DISABLE_NUMBA=1`` to run the pure-numpy kernels.
"""

from ._accel import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
