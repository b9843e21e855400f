"""Uniform-grid scalar/vector fields on a centered periodic box.

Sampling convention: the box is ``[-L, L)^3`` with ``N`` cells per axis,
spacing ``h = 2L/N``, and samples at cell centers ``-L + (i + 1/2) h``.
Cube and ball integrals are midpoint sums with partial-cell weights at the
region boundary, so they are exact for fields constant on grid cells and
additive across partitions.

Spectral operations treat the field as ``2L``-periodic.  Fields meant for
diagnostics should be windowed toward the box boundary; the reported
"boundary leakage" (max magnitude on the outer 10% collar) quantifies how
well the periodic proxy stands in for free space.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .cover import Cube
from .errors import DomainMismatch, InvalidArgument


def fft_workers() -> int:
    """Worker count for FFT calls; set NSLOCAL_THREADS to override."""
    try:
        return max(1, int(os.environ.get("NSLOCAL_THREADS", "1")))
    except ValueError:
        return 1


NSWF_MAGIC = b"NSWF"
NSWF_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")


@dataclass(frozen=True)
class GridField:
    """Immutable sampled field: ``data`` has shape (components, N, N, N)."""

    L: float
    data: np.ndarray
    time: float | None = None
    meta: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[1] != arr.shape[2] or arr.shape[2] != arr.shape[3]:
            raise InvalidArgument(f"expected (C, N, N, N) data, got {arr.shape}")
        if arr.shape[0] not in (1, 3):
            raise InvalidArgument("fields carry 1 or 3 components")
        n = arr.shape[1]
        if n < 2 or (n & (n - 1)) != 0:
            raise InvalidArgument(f"N must be a power of two >= 2, got {n}")
        if not np.isfinite(arr).all():
            raise InvalidArgument("field contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "L", float(self.L))

    @property
    def N(self) -> int:
        return self.data.shape[1]

    @property
    def ncomp(self) -> int:
        return self.data.shape[0]

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.N

    def axis(self) -> np.ndarray:
        """Cell-center coordinates along one axis."""
        return -self.L + (np.arange(self.N) + 0.5) * self.h

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean magnitude across components (N,N,N)."""
        if self.ncomp == 1:
            return np.abs(self.data[0])
        return np.sqrt(np.einsum("cijk,cijk->ijk", self.data, self.data))

    def with_time(self, t: float) -> "GridField":
        return GridField(self.L, self.data, time=t, meta=self.meta)


# ---------------------------------------------------------------------------
# binary snapshot format


def write_field(f: GridField, path) -> None:
    """Bit-exact snapshot: NSWF magic, version, N, ncomp, L, time, raw data."""
    t = np.nan if f.time is None else float(f.time)
    header = _HEADER.pack(NSWF_MAGIC, NSWF_VERSION, f.N, f.ncomp, f.L, t)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(f.data, dtype="<f8").tobytes())


def read_field(path) -> GridField:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise InvalidArgument(f"{path}: truncated header")
        magic, version, n, ncomp, L, t = _HEADER.unpack(raw)
        if magic != NSWF_MAGIC:
            raise InvalidArgument(f"{path}: bad magic {magic!r}")
        if version != NSWF_VERSION:
            raise InvalidArgument(f"{path}: unsupported version {version}")
        count = ncomp * n * n * n
        data = np.frombuffer(fh.read(count * 8), dtype="<f8", count=count)
    data = data.reshape(ncomp, n, n, n).astype(np.float64)
    return GridField(L, data, time=None if np.isnan(t) else float(t))


# ---------------------------------------------------------------------------
# quadrature


def interval_weights(L: float, N: int, lo: float, hi: float):
    """Overlap length of [lo, hi] with each grid cell along one axis.

    Returns (start_index, weights) restricted to cells with positive
    overlap; weights are in length units (0..h].
    """
    h = 2.0 * L / N
    i0 = max(0, int(np.floor((lo + L) / h)))
    i1 = min(N - 1, int(np.ceil((hi + L) / h)) - 1)
    if i1 < i0:
        return 0, np.zeros(0)
    edges = -L + np.arange(i0, i1 + 2) * h
    w = np.minimum(hi, edges[1:]) - np.maximum(lo, edges[:-1])
    return i0, np.clip(w, 0.0, h)


def cube_integral(f: GridField, Q: Cube, power: float = 1.0) -> float:
    """Integral of |f|^power over Q by midpoint rule with partial-cell weights."""
    b = Q.bounds()
    if np.any(b[:, 0] < -f.L - 1e-12) or np.any(b[:, 1] > f.L + 1e-12):
        raise DomainMismatch(
            f"cube [{b[:,0].tolist()}, {b[:,1].tolist()}] extends beyond box +-{f.L}"
        )
    idx, wts = [], []
    for ax in range(3):
        i0, w = interval_weights(f.L, f.N, b[ax, 0], b[ax, 1])
        if w.size == 0:
            return 0.0
        idx.append(i0)
        wts.append(w)
    sub = f.data[
        :,
        idx[0] : idx[0] + wts[0].size,
        idx[1] : idx[1] + wts[1].size,
        idx[2] : idx[2] + wts[2].size,
    ]
    if f.ncomp == 1:
        vals = np.abs(sub[0])
    else:
        vals = np.sqrt(np.einsum("cijk,cijk->ijk", sub, sub))
    if power != 1.0:
        vals = vals ** power
    return float(np.einsum("i,j,k,ijk->", wts[0], wts[1], wts[2], vals))


def ball_weights(f: GridField, center, R: float, radius_sq: np.ndarray | None = None):
    """Per-cell inclusion weights for the ball B_R(center), antialiased.

    A cell whose center sits at signed distance d = R - |x - center| gets
    weight clip(d/h + 1/2, 0, 1): the exact partial-cell fraction for a
    locally flat boundary.
    """
    if radius_sq is None:
        ax = f.axis()
        dx = ax - center[0]
        dy = ax - center[1]
        dz = ax - center[2]
        radius_sq = (
            dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2
        )
    r = np.sqrt(radius_sq)
    return np.clip((R - r) / f.h + 0.5, 0.0, 1.0)


def ball_integral(
    f: GridField,
    center,
    R: float,
    power: float = 1.0,
    radius_sq: np.ndarray | None = None,
) -> float:
    """Integral of |f|^power over the ball B_R(center)."""
    c = np.asarray(center, dtype=float)
    if np.any(np.abs(c) + R > f.L + 1e-12):
        raise DomainMismatch(f"ball B_{R}({c.tolist()}) extends beyond box +-{f.L}")
    w = ball_weights(f, c, R, radius_sq=radius_sq)
    vals = f.magnitude()
    if power != 1.0:
        vals = vals ** power
    return float(np.sum(w * vals) * f.h ** 3)


# ---------------------------------------------------------------------------
# spectral helpers and calculus


def wavenumbers(L: float, N: int):
    """Angular wavenumber arrays (kx, ky, kz) for rfftn layout."""
    k_full = 2.0 * np.pi * np.fft.fftfreq(N, d=2.0 * L / N)
    k_half = 2.0 * np.pi * np.fft.rfftfreq(N, d=2.0 * L / N)
    return (
        k_full[:, None, None],
        k_full[None, :, None],
        k_half[None, None, :],
    )


def _rfftn(a):
    return scipy.fft.rfftn(a, workers=fft_workers())


def _irfftn(a, shape):
    return scipy.fft.irfftn(a, s=shape, workers=fft_workers())


def _zero_nyquist(spec: np.ndarray, N: int) -> np.ndarray:
    """Drop the +-N/2 modes of an rfftn half-spectrum, in place.

    With the signed convention (fftfreq puts -N/2, never +N/2) the cross
    products k_i k_j are not even functions of the Nyquist index, so no
    real field can carry a consistently projected or differentiated
    Nyquist mode.  Removing the plane keeps every spectral operator an
    exact multiplier on the remaining modes.
    """
    half = N // 2
    spec[half, :, :] = 0.0
    spec[:, half, :] = 0.0
    spec[:, :, half] = 0.0
    return spec


def gradient_field(f: GridField, method: str = "fd") -> np.ndarray:
    """All partial derivatives: shape (ncomp, 3, N, N, N).

    ``fd`` uses second-order centered differences with periodic wrap;
    ``spectral`` differentiates the trigonometric interpolant.
    """
    n = f.N
    if method == "fd":
        out = np.empty((f.ncomp, 3) + f.data.shape[1:])
        for c in range(f.ncomp):
            for ax in range(3):
                out[c, ax] = (
                    np.roll(f.data[c], -1, axis=ax) - np.roll(f.data[c], 1, axis=ax)
                ) / (2.0 * f.h)
        return out
    if method == "spectral":
        ks = wavenumbers(f.L, n)
        out = np.empty((f.ncomp, 3) + f.data.shape[1:])
        for c in range(f.ncomp):
            fh = _zero_nyquist(_rfftn(f.data[c]), n)
            for ax in range(3):
                out[c, ax] = _irfftn(1j * ks[ax] * fh, f.data.shape[1:])
        return out
    raise InvalidArgument(f"unknown gradient method {method!r}")


def gradient_sq_field(f: GridField, method: str = "fd") -> GridField:
    """Scalar field |grad f|^2 (summed over components and directions)."""
    g = gradient_field(f, method=method)
    sq = np.einsum("caijk,caijk->ijk", g, g)
    return GridField(f.L, sq[None], time=f.time)


def discrete_gradient_sq(f: GridField, Q: Cube, method: str = "fd") -> float:
    """Integral over Q of |grad f|^2."""
    return cube_integral(gradient_sq_field(f, method=method), Q, power=1.0)


def spectral_divergence_max(f: GridField) -> float:
    """Max-norm of the spectral divergence of a 3-component field."""
    if f.ncomp != 3:
        raise InvalidArgument("divergence needs a 3-component field")
    kx, ky, kz = wavenumbers(f.L, f.N)
    div_hat = (
        1j * kx * _rfftn(f.data[0])
        + 1j * ky * _rfftn(f.data[1])
        + 1j * kz * _rfftn(f.data[2])
    )
    return float(np.max(np.abs(_irfftn(div_hat, f.data.shape[1:]))))


def leray_project(f: GridField) -> GridField:
    """Remove the gradient part of the periodic extension of ``f``.

    The mean (k=0) mode is untouched and Nyquist modes are dropped (see
    ``_zero_nyquist``).  Idempotent; the output's spectral divergence
    vanishes to rounding.
    """
    if f.ncomp != 3:
        raise InvalidArgument("projection needs a 3-component field")
    kx, ky, kz = wavenumbers(f.L, f.N)
    k2 = kx ** 2 + ky ** 2 + kz ** 2
    inv_k2 = np.zeros_like(k2)
    np.divide(1.0, k2, out=inv_k2, where=k2 > 0)
    fh = [_zero_nyquist(_rfftn(f.data[c]), f.N) for c in range(3)]
    k_dot = kx * fh[0] + ky * fh[1] + kz * fh[2]
    shape = f.data.shape[1:]
    out = np.empty_like(f.data)
    for c, kc in enumerate((kx, ky, kz)):
        out[c] = _irfftn(fh[c] - kc * k_dot * inv_k2, shape)
    return GridField(f.L, out, time=f.time, meta=f.meta)


# ---------------------------------------------------------------------------
# windowing


def _smoothstep(t: np.ndarray) -> np.ndarray:
    """Quintic smoothstep: 0 -> 1 on [0, 1] with two flat derivatives."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def window_profile_1d(x: np.ndarray, L: float, collar: float) -> np.ndarray:
    """1 on |x| <= (1 - collar) L, smooth decay to 0 at |x| = L."""
    inner = (1.0 - collar) * L
    t = (np.abs(x) - inner) / (L - inner)
    return 1.0 - _smoothstep(t)


def apply_window(f: GridField, collar: float = 0.1) -> GridField:
    """Taper the field to zero on the outer collar (per-axis product window)."""
    if not 0.0 < collar < 1.0:
        raise InvalidArgument("collar must be in (0, 1)")
    ax = f.axis()
    w1 = window_profile_1d(ax, f.L, collar)
    w = w1[:, None, None] * w1[None, :, None] * w1[None, None, :]
    return GridField(f.L, f.data * w[None], time=f.time, meta=f.meta)


def boundary_leakage(f: GridField, collar: float = 0.02) -> float:
    """Max field magnitude near the box seam (outer ``collar`` fraction).

    The outermost cell layer is always included, so the value is meaningful
    even when the collar is thinner than one cell.
    """
    ax = np.abs(f.axis())
    outer = ax >= (1.0 - collar) * f.L
    outer[0] = outer[-1] = True
    mask = outer[:, None, None] | outer[None, :, None] | outer[None, None, :]
    mag = f.magnitude()
    return float(mag[mask].max())


def radial_scalar(L: float, N: int, kind: str = "inv_sqrt") -> GridField:
    """Scalar reference fields with known annulus integrals.

    ``inv_sqrt``: |x|^(-1/2), clamped to its value at radius h/2 inside the
    innermost cell.  ``inv_sqrt_log``: the same envelope damped by
    1/(1 + log<x>), which decays in the ring sense.
    """
    h = 2.0 * L / N
    ax = -L + (np.arange(N) + 0.5) * h
    r = np.sqrt(
        ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    )
    r = np.maximum(r, h / 2.0)
    if kind == "inv_sqrt":
        vals = r ** -0.5
    elif kind == "inv_sqrt_log":
        vals = r ** -0.5 / (1.0 + np.log(np.sqrt(1.0 + r ** 2)))
    else:
        raise InvalidArgument(f"unknown radial kind {kind!r}")
    return GridField(L, vals[None])
