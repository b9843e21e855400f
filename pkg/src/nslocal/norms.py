"""Weighted uniformly-local norms over dyadic covers, and Herz norms.

The central quantity is the cover norm

    sup over cubes Q of ( |Q|^(-q/3) * integral over Q of |f|^p )^(1/p)

taken over a full dyadic cover or one of its refinements.  Decay of the
refined-cover norms in the refinement level distinguishes fields whose
large-scale averages vanish ("ring" behaviour) from those with genuine
growth at infinity; the ball profile E(R)/R^2 and a weighted Herz norm
over dyadic annuli measure the same thing from different angles, and the
report helpers expose their ratios so the equivalences can be checked
numerically.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .cover import Cube, CubeCover, build_cover, build_refined_cover
from .errors import DomainMismatch, InvalidArgument, ResolutionError
from .fields import GridField, ball_integral, cube_integral, leray_project


class NormResult(NamedTuple):
    value: float
    argmax_index: int
    argmax_cube: Cube | None


@dataclass(frozen=True)
class RingProfile:
    """E(2^k)/2^(2k) for k = 1..K, with E(R) the ball energy integral."""

    scales: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(v) and v >= 0 for v in self.values):
            raise InvalidArgument("ring profile values must be finite and >= 0")

    def value_at(self, R: float) -> float:
        for s, v in zip(self.scales, self.values):
            if s == R:
                return v
        raise InvalidArgument(f"no ring profile entry at R={R}")


def _check_cover_fits(f: GridField, cover: CubeCover) -> None:
    if cover.box_half > f.L + 1e-12:
        raise DomainMismatch(
            f"cover box half-width {cover.box_half} exceeds field box {f.L}"
        )


def m_norm(f: GridField, cover: CubeCover, p: float, q: float) -> NormResult:
    """Cover norm sup_Q (|Q|^(-q/3) int_Q |f|^p)^(1/p), with its argmax cube."""
    if p < 1.0:
        raise InvalidArgument("p must be >= 1")
    if q < 0.0:
        raise InvalidArgument("q must be >= 0")
    _check_cover_fits(f, cover)
    best, best_i = -1.0, -1
    for i, Q in enumerate(cover.cubes):
        val = (Q.side ** -q * cube_integral(f, Q, power=p)) ** (1.0 / p)
        if val > best:
            best, best_i = val, i
    return NormResult(best, best_i, cover.cubes[best_i])


def cn_norm(f: GridField, cover: CubeCover, n: int, q: float) -> NormResult:
    """p = 2 cover norm over the level-n refinement of a full cover."""
    return m_norm(f, build_refined_cover(cover, n), 2.0, q)


def herz_norm(
    f: GridField,
    s: float,
    p: float,
    q_outer: float,
    homogeneous: bool,
    k_range: tuple[int, int],
) -> tuple[float, tuple[float, ...]]:
    """Weighted annulus norm: lq aggregation over k of 2^(ks) ||f||_Lp(A_k).

    A_k is the annulus 2^(k-1) <= |x| < 2^k; in the non-homogeneous
    variant the k = 0 term is the whole unit ball and k must be >= 0.
    Returns the aggregate and the per-annulus weighted values.
    """
    k_lo, k_hi = k_range
    if k_hi < k_lo:
        raise InvalidArgument("empty annulus index range")
    if p < 1.0:
        raise InvalidArgument("p must be >= 1")
    if not homogeneous and k_lo < 0:
        raise InvalidArgument("non-homogeneous norm starts at the unit ball (k >= 0)")
    if homogeneous and k_lo < 0 and 2.0 ** (k_lo - 1) < 2.0 * f.h:
        raise ResolutionError(
            f"annulus at scale 2^{k_lo - 1} is thinner than two grid cells"
        )
    ax = f.axis()
    radius_sq = (
        ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    )
    center = (0.0, 0.0, 0.0)

    def ball(R):
        return ball_integral(f, center, R, power=p, radius_sq=radius_sq)

    terms = []
    for k in range(k_lo, k_hi + 1):
        if not homogeneous and k == 0:
            raw = ball(1.0)
        else:
            raw = max(0.0, ball(2.0 ** k) - ball(2.0 ** (k - 1)))
        terms.append(2.0 ** (k * s) * raw ** (1.0 / p))
    if math.isinf(q_outer):
        total = max(terms)
    else:
        total = sum(t ** q_outer for t in terms) ** (1.0 / q_outer)
    return total, tuple(terms)


def ring_profile(f: GridField, k_max: int | None = None) -> RingProfile:
    """Ball-energy profile E(2^k)/2^(2k) for k = 1..k_max (box permitting)."""
    if k_max is None:
        k_max = int(math.floor(math.log2(f.L)))
    if k_max < 1 or 2.0 ** k_max > f.L + 1e-12:
        raise InvalidArgument(f"k_max={k_max} does not fit the box +-{f.L}")
    ax = f.axis()
    radius_sq = (
        ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    )
    scales, values = [], []
    for k in range(1, k_max + 1):
        R = 2.0 ** k
        e = ball_integral(f, (0.0, 0.0, 0.0), R, power=2.0, radius_sq=radius_sq)
        scales.append(R)
        values.append(e / R ** 2)
    return RingProfile(tuple(scales), tuple(values))


@dataclass(frozen=True)
class EquivalenceReport:
    """Decay indicators whose joint behaviour characterizes ring fields.

    ``tail_sup``: cover-norm sup restricted to cubes of volume at least
    ``tail_volume_threshold``.  ``cn_values``: refined-cover norms for
    n = 1..n_max.  ``ring``: the ball profile.  ``herz``: non-homogeneous
    weighted annulus norm with s = -q/p and sup aggregation.
    """

    p: float
    q: float
    tail_volume_threshold: float
    tail_sup: float
    tail_cube_count: int
    full_norm: float
    cn_values: tuple[float, ...]
    ring: RingProfile
    herz: float
    herz_per_annulus: tuple[float, ...]

    @property
    def m_over_herz(self) -> float:
        return self.full_norm / self.herz if self.herz > 0 else math.inf

    def as_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "tail_volume_threshold": self.tail_volume_threshold,
            "tail_sup": self.tail_sup,
            "tail_cube_count": self.tail_cube_count,
            "full_norm": self.full_norm,
            "cn_values": list(self.cn_values),
            "ring_scales": list(self.ring.scales),
            "ring_values": list(self.ring.values),
            "herz": self.herz,
            "herz_per_annulus": list(self.herz_per_annulus),
            "m_over_herz": self.m_over_herz,
        }


def equivalence_report(
    f: GridField,
    n_max: int,
    p: float = 2.0,
    q: float = 2.0,
    tail_volume_threshold: float = 2.0 ** 9,
) -> EquivalenceReport:
    cover = build_cover(n_max)
    _check_cover_fits(f, cover)
    full = m_norm(f, cover, p, q)
    tail, tail_count = 0.0, 0
    for Q in cover.cubes:
        if Q.volume >= tail_volume_threshold:
            tail_count += 1
            val = (Q.side ** -q * cube_integral(f, Q, power=p)) ** (1.0 / p)
            tail = max(tail, val)
    cn_values = tuple(
        cn_norm(f, cover, n, q).value for n in range(1, n_max + 1)
    )
    ring = ring_profile(f)
    k_hi = int(math.floor(math.log2(f.L)))
    herz, per_annulus = herz_norm(
        f, s=-q / p, p=p, q_outer=math.inf, homogeneous=False, k_range=(0, k_hi)
    )
    return EquivalenceReport(
        p=p,
        q=q,
        tail_volume_threshold=tail_volume_threshold,
        tail_sup=tail,
        tail_cube_count=tail_count,
        full_norm=full.value,
        cn_values=cn_values,
        ring=ring,
        herz=herz,
        herz_per_annulus=per_annulus,
    )


# ---------------------------------------------------------------------------
# approximation by compactly supported divergence-free fields


def _smooth_ball_cutoff(f: GridField, R: float, width: float) -> np.ndarray:
    """Radial cutoff: truncated-Gaussian mollification of a ball indicator.

    Exactly 1 on B_R (the indicator radius is fattened by the kernel
    support 3*width), 0 beyond R + 6*width.  The radial convolution
    reduces to a 1d quadrature; normalizing by the same quadrature makes
    the plateau exactly one.
    """
    s = np.linspace(0.0, 3.0 * width, 257)
    g = np.exp(-(s ** 2) / (2.0 * width ** 2))
    z = np.trapezoid(s ** 2 * g, s)
    r_prime = R + 3.0 * width
    r_table = np.linspace(0.0, r_prime + 4.0 * width, 2049)
    # (2 pi / r) int s g(s) [int_{|r-s|}^{min(r+s, R')} t dt] ds, normalized
    rr = r_table[:, None]
    ss = s[None, :]
    hi = np.minimum(rr + ss, r_prime)
    lo = np.abs(rr - ss)
    inner = np.maximum(hi ** 2 - lo ** 2, 0.0) / 2.0
    vals = np.trapezoid(ss * g[None, :] * inner, s, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        chi = np.where(r_table > 0, vals / (2.0 * z * np.maximum(r_table, 1e-300)), 1.0)
    chi = np.clip(chi, 0.0, 1.0)
    chi[r_table <= max(r_prime - 3.0 * width, 0.0)] = 1.0

    ax = f.axis()
    r_grid = np.sqrt(
        ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2
    )
    return np.interp(r_grid, r_table, chi, right=0.0)


def l2_approximation(
    f: GridField, R: float, mollification_width: float
) -> tuple[GridField, dict]:
    """Approximate f by a divergence-free field supported near B_R.

    Returns the approximant g (smooth radial truncation, re-projected)
    and a report with its L^2 norm and the cover-norm distances ||f-g||
    over the full cover and each refinement level.
    """
    if f.ncomp != 3:
        raise InvalidArgument("approximation needs a velocity field")
    if not 0.0 < R < 0.5 * f.L:
        raise InvalidArgument("truncation radius must lie in (0, L/2)")
    if not 0.0 < mollification_width <= R / 3.0:
        raise InvalidArgument("mollification width must lie in (0, R/3]")
    chi = _smooth_ball_cutoff(f, R, mollification_width)
    g = leray_project(GridField(f.L, f.data * chi[None], time=f.time))
    n_max = int(math.floor(math.log2(f.L))) - 1
    if n_max < 1:
        raise InvalidArgument("field box too small for a dyadic cover")
    cover = build_cover(n_max)
    diff = GridField(f.L, f.data - g.data)
    dist = m_norm(diff, cover, 2.0, 2.0)
    cn_dist = {n: cn_norm(diff, cover, n, 2.0).value for n in range(1, n_max + 1)}
    l2_g = float(np.sqrt(np.sum(g.data ** 2) * g.h ** 3))
    report = {
        "R": R,
        "mollification_width": mollification_width,
        "l2_of_g": l2_g,
        "m22_distance": dist.value,
        "cn_distances": cn_dist,
    }
    return g, report


# ---------------------------------------------------------------------------
# serialization


def write_norm_csv(path, rows) -> None:
    """Rows: (family, p, q, n, value, argmax_cube_id); n and id may be ''."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "p", "q", "n", "value", "argmax_cube_id"])
        for row in rows:
            w.writerow(list(row))
