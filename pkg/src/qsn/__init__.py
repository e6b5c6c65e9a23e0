"""Toolkit for estimating analytic functions of distributed sensor parameters.

Simulates and bounds two estimation strategies over a network of d sensors,
each coupled to one unknown parameter: an entangled two-step protocol whose
mean squared error falls as 1/t^2 in the total interrogation time (or 1/N^2
in photon number), and an unentangled per-sensor baseline at the standard
1/t^2-per-sensor rate. Closed-form bounds, resource allocation, Monte Carlo
experiments, and a beam-interpolation application are included, along with a
command line front end (``qsn``).
"""

__version__ = "0.1.0"

from . import allocation, bounds, experiment, functions, interpolation, measurement, protocol

__all__ = [
    "allocation",
    "bounds",
    "experiment",
    "functions",
    "interpolation",
    "measurement",
    "protocol",
    "__version__",
]
