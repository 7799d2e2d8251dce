"""Weak-value-amplified optical time-delay metrology on a desk.

Simulation and analysis of a polarization interferometer whose ultrasmall
delays are read out as fringe displacements on a CCD after a Fourier lens
and a slit-split Gaussian beam.
"""

__version__ = "0.1.0"

from .errors import WvaError  # noqa: E402
from .polarization import SelectionConfig, tilt_to_delay, weak_value  # noqa: E402

__all__ = ["__version__", "WvaError", "SelectionConfig", "tilt_to_delay", "weak_value"]
