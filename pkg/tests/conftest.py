"""Shared fixtures for the test suite.

The localized single-mode velocity below is the reference input for the
pressure-expansion checks: a single carrier wavenumber under a wide
window, so the field is exactly divergence-free, vanishes well before
the box boundary, and equals the pure mode on the whole cover region.
The dual-resolution residual sweep is memoized because both the module
tests and the acceptance suite assert on it.
"""

import math
from functools import lru_cache

import numpy as np

from nslocal.cover import build_cover
from nslocal.fields import GridField
from nslocal.pressure import (
    global_pressure,
    pressure_context,
    pressure_expansion_residual,
)

MODE_BOX = 16.0


def _taper(ax, r0, r1):
    """Quintic rolldown: 1 on |x| <= r0, 0 beyond r1, C2 everywhere."""
    t = np.clip((np.abs(ax) - r0) / (r1 - r0), 0.0, 1.0)
    w = 1.0 - (10.0 * t**3 - 15.0 * t**4 + 6.0 * t**5)
    dw = -(30.0 * t**2 - 60.0 * t**3 + 30.0 * t**4) / (r1 - r0) * np.sign(ax)
    return w, dw


def localized_single_mode(N, L=MODE_BOX, m=2, amp=1.0, r0=4.7, r1=15.0):
    """Curl of a windowed crossed-sine stream potential.

    Inside |x|_inf <= r0 this is the pure carrier mode
    amp (sin kx cos ky, -cos kx sin ky, 0) with k = pi m / L; the window
    rolls it down to zero before the box boundary.  Divergence-free
    exactly, because the horizontal part is a z-modulated planar curl.
    """
    k = math.pi * m / L
    ax = -L + (np.arange(N) + 0.5) * (2.0 * L / N)
    w, dw = _taper(ax, r0, r1)
    g = np.sin(k * ax) * w
    dg = k * np.cos(k * ax) * w + np.sin(k * ax) * dw
    data = np.zeros((3, N, N, N))
    data[0] = (amp / k) * g[:, None, None] * dg[None, :, None] * w[None, None, :]
    data[1] = -(amp / k) * dg[:, None, None] * g[None, :, None] * w[None, None, :]
    return GridField(L, data)


@lru_cache(maxsize=None)
def expansion_residual_sweep(N):
    """(max, median) expansion residual over every cube of the level-1
    cover for the localized single mode at resolution N."""
    u = localized_single_mode(N)
    ctx = pressure_context(u)
    p = global_pressure(u)
    rs = [pressure_expansion_residual(p, u, Q, ctx) for Q in build_cover(1)]
    return max(rs), float(np.median(rs))
