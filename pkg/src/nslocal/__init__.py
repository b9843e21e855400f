"""Weighted-norm and local-energy diagnostics for incompressible flow fields.

The package builds dyadic cube covers of a centered box, computes weighted
Morrey/Herz-style norms over them, reconstructs pressure locally from the
velocity via singular-integral kernels, tracks local energy quantities, runs
a small periodic spectral Navier-Stokes solver, and scans parabolic
cylinders for smallness of the scale-invariant regularity quantity.
"""

__version__ = "0.1.0"
