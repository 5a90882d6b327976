"""fastnose: a software twin of a high-speed MOx electronic nose.

Simulates the odour delivery device, the MEMS sensor physics and the heater
control stack at 1 kHz, extracts phase-locked and spectral features, and runs
the classification benchmarks on the simulated recordings.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
