"""Local energy diagnostics.

This module owns the cube-adapted cutoff functions, the localized
energy-inequality residual, the alpha/beta diagnostic series, the cubic
term estimate, the barrier time for the growth ODE, the two existence
time scales, and the a priori bound check that ties them together.

Conventions shared by everything below:

* A cutoff for a cube Q equals 1 on Q, vanishes outside the enlarged
  cube Q* (factor 4/3 dilation), and is a per-axis product of one fixed
  quintic rolldown profile, so every derivative bound rescales exactly
  like side^(-order).
* Time integrals use the trapezoid rule on the snapshot times.
* All checks report margins; nothing hard-codes unproven constants.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .cover import Cube, CubeCover, build_refined_cover, dilate
from .errors import DomainMismatch, InvalidArgument, NotFound, ResolutionError
from .fields import GridField, cube_integral, gradient_field
from .norms import m_norm

__all__ = [
    "CutoffField",
    "DiagnosticSeries",
    "CubicMargin",
    "BoundCheck",
    "make_cutoff",
    "lei_residual",
    "track_series",
    "cubic_estimate_check",
    "gronwall_time",
    "existence_time",
    "apriori_bound_check",
    "cutoff_normalization",
    "log_decay_ratio",
    "load_calibration",
]


# ---------------------------------------------------------------------------
# cutoff construction


def _rolldown(t: np.ndarray) -> np.ndarray:
    """Quintic 1 -> 0 ramp on [0, 1] with flat first and second ends."""
    t = np.clip(t, 0.0, 1.0)
    return 1.0 - t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def _axis_profile(ax: np.ndarray, center: float, side: float):
    """Per-axis cutoff factor with exact first and second derivatives.

    The factor is 1 for |x - c| <= side/2, rolls down over the shell
    side/2 < |x - c| < 2*side/3, and vanishes beyond, matching the
    reference profile (1 on the unit cube, gone outside its 4/3
    dilation) under translation and dilation.
    """
    r = (ax - center) * (2.0 / side)
    t = 3.0 * (np.abs(r) - 1.0)
    inside = np.clip(t, 0.0, 1.0)
    p = _rolldown(inside)
    # chain rule: d/dx = dP/dt * 3 * sign(r) * 2/side
    tt = inside
    dpdt = -30.0 * tt * tt * (tt - 1.0) * (tt - 1.0)
    d2pdt2 = -tt * (120.0 * tt * tt - 180.0 * tt + 60.0)
    active = (t > 0.0) & (t < 1.0)
    scale = 6.0 / side * np.sign(r)
    dp = np.where(active, dpdt * scale, 0.0)
    ddp = np.where(active, d2pdt2 * (6.0 / side) ** 2, 0.0)
    return p, dp, ddp


# Profile-level derivative suprema, measured once by dense sampling.
# They depend only on the fixed reference profile, so the per-cube table
# is exactly these numbers: dilation covariance is built in.
_T_DENSE = np.linspace(0.0, 1.0, 200001)
_SUP_D1 = float(np.max(np.abs(30.0 * _T_DENSE**2 * (_T_DENSE - 1.0) ** 2)) * 6.0)
_SUP_D2 = float(
    max(
        np.max(np.abs(_T_DENSE * (120.0 * _T_DENSE**2 - 180.0 * _T_DENSE + 60.0)))
        * 36.0,
        (np.max(np.abs(30.0 * _T_DENSE**2 * (_T_DENSE - 1.0) ** 2)) * 6.0) ** 2,
    )
)


@dataclass(frozen=True)
class CutoffField:
    """A cube-adapted cutoff sampled on a grid.

    ``table`` maps derivative order to the measured scale-free bound
    sup|d^l phi| * side^l; the second-order entry covers both repeated
    and mixed second partials.
    """

    cube: Cube
    phi: GridField
    table: Mapping[int, float]
    _axes: tuple = None  # (p, dp, ddp) per axis, for exact grad/laplacian

    def axis_data(self):
        return self._axes


def make_cutoff(Q: Cube, grid: GridField) -> CutoffField:
    """Build the cutoff for Q on the grid carried by ``grid``."""
    star = dilate(Q, "star")
    b = star.bounds()
    if np.any(b[:, 0] < -grid.L - 1e-12) or np.any(b[:, 1] > grid.L + 1e-12):
        raise DomainMismatch(
            f"enlarged cube spans {b.tolist()}, outside the box [{-grid.L}, {grid.L}]"
        )
    if Q.side < 8.0 * grid.h - 1e-12:
        raise ResolutionError(
            f"cube side {Q.side} under-resolved at spacing {grid.h} (needs >= 8 cells)"
        )
    ax = grid.axis()
    per_axis = tuple(_axis_profile(ax, c, Q.side) for c in Q.center)
    phi = (
        per_axis[0][0][:, None, None]
        * per_axis[1][0][None, :, None]
        * per_axis[2][0][None, None, :]
    )
    # sup|d^l phi| * side^l is scale-free: the profile supremum times
    # the chain-rule power of 2/side, and the side powers cancel.
    table = {1: _SUP_D1, 2: _SUP_D2}
    return CutoffField(
        cube=Q,
        phi=GridField(grid.L, phi[None]),
        table=table,
        _axes=per_axis,
    )


# ---------------------------------------------------------------------------
# localized energy inequality


def grad_sq_snapshots(u_series) -> list[GridField]:
    """Scalar |grad u|^2 snapshots via one spectral differentiation each."""
    out = []
    for us in u_series:
        g = gradient_field(us, method="spectral")
        gsq = np.einsum("caijk,caijk->ijk", g, g)
        out.append(GridField(us.L, gsq[None], time=us.time))
    return out


def _check_series(u_series, p_series, need_p):
    u_series = list(u_series)
    if len(u_series) < 2:
        raise InvalidArgument("need at least two snapshots")
    if need_p:
        p_series = list(p_series)
        if len(p_series) != len(u_series):
            raise InvalidArgument("velocity and pressure series must align")
    else:
        p_series = list(p_series) if p_series is not None else [None] * len(u_series)
        if len(p_series) != len(u_series):
            raise InvalidArgument("velocity and pressure series must align")
    base = u_series[0]
    times = []
    for k, us in enumerate(u_series):
        if us.ncomp != 3:
            raise InvalidArgument("velocity snapshots must have 3 components")
        if (us.N, us.L) != (base.N, base.L):
            raise InvalidArgument("series members live on different grids")
        if us.time is None:
            raise InvalidArgument("snapshots need time stamps")
        ps = p_series[k]
        if need_p:
            if ps.ncomp != 1 or (ps.N, ps.L) != (base.N, base.L) or ps.time != us.time:
                raise InvalidArgument("pressure snapshots must match velocity ones")
        times.append(us.time)
    times = np.asarray(times)
    if np.any(np.diff(times) <= 0):
        raise InvalidArgument("snapshot times must increase strictly")
    return u_series, p_series, times


def lei_residual(
    u_series,
    p_series,
    phi: CutoffField,
    mode: str = "full",
    grad_sq_series=None,
) -> float:
    """Slack in the localized energy inequality over the sampled window.

    Returns RHS - LHS of the cutoff energy balance

        E(t_end) + 2 int int |grad u|^2 phi
            <= E(t_0) + int int |u|^2 lap(phi)
               + int int (|u|^2 + 2p) u . grad(phi)

    with E(t) = int |u(t)|^2 phi.  The flux group (transport and
    pressure) is dropped in ``stokes`` mode, matching the linear
    evolution's energy identity.  Positive output means the inequality
    holds on this window; for smooth data the magnitude is pure
    discretization error.

    ``grad_sq_series`` optionally supplies |grad u|^2 as scalar snapshots
    aligned with ``u_series`` (one spectral differentiation shared across
    many cutoffs); omitted, it is computed here.
    """
    if mode not in ("full", "stokes"):
        raise InvalidArgument(f"mode must be 'full' or 'stokes', got {mode!r}")
    need_p = mode == "full"
    u_series, p_series, times = _check_series(u_series, p_series, need_p)
    base = u_series[0]
    if (phi.phi.N, phi.phi.L) != (base.N, base.L):
        raise InvalidArgument("cutoff grid does not match the series grid")
    if grad_sq_series is not None:
        grad_sq_series = list(grad_sq_series)
        if len(grad_sq_series) != len(u_series):
            raise InvalidArgument("gradient series must align with velocity series")
        for us, gs in zip(u_series, grad_sq_series):
            if gs.ncomp != 1 or (gs.N, gs.L) != (base.N, base.L) or gs.time != us.time:
                raise InvalidArgument("gradient snapshots must match velocity ones")

    pax = phi.axis_data()
    pv = (
        pax[0][0][:, None, None]
        * pax[1][0][None, :, None]
        * pax[2][0][None, None, :]
    )
    lap = (
        pax[0][2][:, None, None] * pax[1][0][None, :, None] * pax[2][0][None, None, :]
        + pax[0][0][:, None, None] * pax[1][2][None, :, None] * pax[2][0][None, None, :]
        + pax[0][0][:, None, None] * pax[1][0][None, :, None] * pax[2][2][None, None, :]
    )
    gphi = (
        pax[0][1][:, None, None] * pax[1][0][None, :, None] * pax[2][0][None, None, :],
        pax[0][0][:, None, None] * pax[1][1][None, :, None] * pax[2][0][None, None, :],
        pax[0][0][:, None, None] * pax[1][0][None, :, None] * pax[2][1][None, None, :],
    )
    vol = base.h**3

    energies = np.empty(times.size)
    dissip = np.empty(times.size)
    lap_term = np.empty(times.size)
    flux = np.empty(times.size)
    for s, us in enumerate(u_series):
        usq = np.einsum("cijk,cijk->ijk", us.data, us.data)
        energies[s] = float((usq * pv).sum()) * vol
        if grad_sq_series is None:
            g = gradient_field(us, method="spectral")
            gsq = np.einsum("caijk,caijk->ijk", g, g)
        else:
            gsq = grad_sq_series[s].data[0]
        dissip[s] = float((gsq * pv).sum()) * vol
        lap_term[s] = float((usq * lap).sum()) * vol
        if need_p:
            adv = usq + 2.0 * p_series[s].data[0]
            udotg = sum(us.data[i] * gphi[i] for i in range(3))
            flux[s] = float((adv * udotg).sum()) * vol
        else:
            flux[s] = 0.0

    rhs = energies[0] + float(np.trapezoid(lap_term, times))
    if need_p:
        rhs += float(np.trapezoid(flux, times))
    lhs = energies[-1] + 2.0 * float(np.trapezoid(dissip, times))
    return rhs - lhs


# ---------------------------------------------------------------------------
# diagnostic series


@dataclass(frozen=True)
class DiagnosticSeries:
    """Sampled local-norm diagnostics on a refined cover.

    ``alpha`` is the squared cover norm of u(t); ``beta`` the running
    sup-cube dissipation, normalized by side^q.  ``per_cube_beta`` holds
    the cumulative per-cube values before the sup, one row per time.
    """

    times: tuple
    alpha: tuple
    beta: tuple
    alpha_argmax: tuple
    beta_argmax: tuple
    per_cube_beta: tuple
    q: int
    level: int

    def __post_init__(self):
        if any(not math.isfinite(a) for a in self.alpha):
            raise InvalidArgument("alpha values must be finite")
        if any(b2 < b1 - 1e-12 for b1, b2 in zip(self.beta, self.beta[1:])):
            raise InvalidArgument("beta must be non-decreasing")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "alpha_n", "beta_n", "argmax_cube"])
            for t, a, b, c in zip(self.times, self.alpha, self.beta, self.beta_argmax):
                w.writerow([repr(float(t)), repr(float(a)), repr(float(b)), c])


def track_series(
    u_series,
    grad_sq_series,
    cover: CubeCover,
    n: int,
    q: int = 2,
) -> DiagnosticSeries:
    """Sample alpha and beta on the level-n refinement of ``cover``.

    ``grad_sq_series`` supplies |grad u|^2 as scalar snapshots aligned
    with ``u_series``; pass None to differentiate spectrally here.
    """
    if q not in (1, 2):
        raise InvalidArgument("q must be 1 or 2")
    u_series = list(u_series)
    if not u_series:
        raise InvalidArgument("empty series")
    if grad_sq_series is None:
        grad_sq_series = grad_sq_snapshots(u_series)
    else:
        grad_sq_series = list(grad_sq_series)
        if len(grad_sq_series) != len(u_series):
            raise InvalidArgument("gradient series must align with velocity series")
    times = []
    for us, gs in zip(u_series, grad_sq_series):
        if us.time is None or gs.time != us.time:
            raise InvalidArgument("series members need matching snapshot times")
        times.append(us.time)
    times = np.asarray(times)
    if np.any(np.diff(times) <= 0):
        raise InvalidArgument("snapshot times must increase strictly")

    cn = build_refined_cover(cover, n)
    alphas, a_arg = [], []
    for us in u_series:
        res = m_norm(us, cn, p=2.0, q=float(q))
        alphas.append(res.value**2)
        a_arg.append(res.argmax_index)

    cubes = list(cn)
    rates = np.array(
        [[cube_integral(gs, Q, power=1.0) for Q in cubes] for gs in grad_sq_series]
    )
    per_cube = np.zeros_like(rates)
    for s in range(1, times.size):
        seg = 0.5 * (rates[s] + rates[s - 1]) * (times[s] - times[s - 1])
        per_cube[s] = per_cube[s - 1] + seg
    sides = np.array([Q.side for Q in cubes])
    weighted = per_cube / sides[None, :] ** q
    beta = weighted.max(axis=1)
    b_arg = weighted.argmax(axis=1)
    return DiagnosticSeries(
        times=tuple(float(t) for t in times),
        alpha=tuple(float(a) for a in alphas),
        beta=tuple(float(b) for b in beta),
        alpha_argmax=tuple(int(i) for i in a_arg),
        beta_argmax=tuple(int(i) for i in b_arg),
        per_cube_beta=tuple(tuple(float(v) for v in row) for row in weighted),
        q=q,
        level=n,
    )


# ---------------------------------------------------------------------------
# cubic estimate


@dataclass(frozen=True)
class CubicMargin:
    """Single-slice margin report for the localized cubic bound."""

    lhs: float
    grad_term: float
    mean_cubed_term: float
    mean_three_half_term: float
    epsilon: float
    q: float
    c_hat: float


def cubic_estimate_check(u: GridField, Q: Cube, q: float, epsilon: float) -> CubicMargin:
    """Smallest constant making the cubic bound hold on one time slice.

    The comparison is |Q|^(-1/3) int |u|^3 against
    c * max(side^(3q-4) avg^3, side^(1.5q-2.5) avg^1.5) + epsilon * grad,
    with avg = side^(-q) int |u|^2; the reported c_hat is exact for the
    slice and finite whenever u is nonzero on Q.
    """
    if epsilon <= 0.0:
        raise InvalidArgument("epsilon must be positive")
    if not 0.0 <= q <= 2.0:
        raise InvalidArgument("q must lie in [0, 2]")
    lhs = cube_integral(u, Q, power=3.0) / Q.side
    usq = cube_integral(u, Q, power=2.0)
    avg = usq / Q.side**q
    group_a = Q.side ** (3.0 * q - 4.0) * avg**3
    group_c = Q.side ** (1.5 * q - 2.5) * avg**1.5
    g = gradient_field(u, method="fd")
    gsq = np.einsum("caijk,caijk->ijk", g, g)
    grad = cube_integral(GridField(u.L, gsq[None]), Q, power=1.0)
    slack = lhs - epsilon * grad
    denom = max(group_a, group_c)
    if slack <= 0.0:
        c_hat = 0.0
    elif denom == 0.0:
        c_hat = math.inf
    else:
        c_hat = slack / denom
    return CubicMargin(
        lhs=lhs,
        grad_term=grad,
        mean_cubed_term=group_a,
        mean_three_half_term=group_c,
        epsilon=epsilon,
        q=q,
        c_hat=c_hat,
    )


# ---------------------------------------------------------------------------
# barrier time and existence times


def gronwall_time(a: float, b1: float, b2: float, m: float = 1.0) -> float:
    """Barrier time for f <= a + int (b1 f + b2 f^m): doubling cannot
    happen before a / (b1 * 2a + b2 * (2a)^m)."""
    if a <= 0.0:
        raise InvalidArgument("a must be positive")
    if b1 < 0.0 or b2 < 0.0:
        raise InvalidArgument("b1 and b2 must be non-negative")
    if m < 1.0:
        raise InvalidArgument("m must be >= 1")
    denom = b1 * 2.0 * a + b2 * (2.0 * a) ** m
    if denom == 0.0:
        return math.inf
    return a / denom


def existence_time(
    u0_norm_sq: float,
    n: int,
    q: int = 2,
    c1: float = 1.0,
    c_star: float = 1.0,
) -> float:
    """Guaranteed control horizon from the initial cover norm.

    q=2: c1 / (2^(-2n) + norm^4); q=1: c_star * 2^(2n) / (1 + norm^4),
    the large-n-friendly variant.
    """
    if u0_norm_sq < 0.0:
        raise InvalidArgument("squared norm must be >= 0")
    if c1 <= 0.0:
        raise InvalidArgument("c1 must be positive")
    if not 0.0 < c_star <= 1.0:
        raise InvalidArgument("c_star must lie in (0, 1]")
    if q == 2:
        return c1 / (2.0 ** (-2 * n) + u0_norm_sq**2)
    if q == 1:
        return c_star * 2.0 ** (2 * n) / (1.0 + u0_norm_sq**2)
    raise InvalidArgument("q must be 1 or 2")


@dataclass(frozen=True)
class BoundCheck:
    passed: bool
    margin: float
    allowed: float
    used: float
    horizon: float


def apriori_bound_check(
    series: DiagnosticSeries,
    u0_norm_sq: float,
    n: int,
    c0: float,
    T: float,
) -> BoundCheck:
    """Check sup alpha + beta <= 2 c0 * initial squared norm up to T."""
    if n != series.level:
        raise InvalidArgument("series was tracked at a different refinement level")
    times = np.asarray(series.times)
    if times[-1] < T - 1e-12:
        raise InvalidArgument(
            f"series ends at {times[-1]}, short of the horizon {T}"
        )
    sel = times <= T + 1e-12
    used = float(np.max(np.asarray(series.alpha)[sel]) + np.asarray(series.beta)[sel][-1])
    allowed = 2.0 * c0 * u0_norm_sq
    margin = allowed - used
    return BoundCheck(
        passed=margin >= 0.0,
        margin=margin,
        allowed=allowed,
        used=used,
        horizon=T,
    )


# ---------------------------------------------------------------------------
# calibration helpers


def cutoff_normalization(fields: Sequence[GridField], cover: CubeCover, n: int) -> float:
    """Smallest c0 with sup_Q side^(-2) int |f|^2 phi_Q <= c0 * norm^2
    over the supplied fields (the cutoff-weighted mass never beats the
    plain cover norm by more than the overlap of Q*)."""
    fields = list(fields)
    if not fields:
        raise InvalidArgument("need at least one field")
    cn = build_refined_cover(cover, n)
    worst = 0.0
    for f in fields:
        norm_sq = m_norm(f, cn, p=2.0, q=2.0).value ** 2
        if norm_sq == 0.0:
            continue
        sup = 0.0
        for Q in cn:
            cut = make_cutoff(Q, f)
            pax = cut.axis_data()
            pv = (
                pax[0][0][:, None, None]
                * pax[1][0][None, :, None]
                * pax[2][0][None, None, :]
            )
            usq = np.einsum("cijk,cijk->ijk", f.data, f.data)
            sup = max(sup, float((usq * pv).sum()) * f.h**3 / Q.side**2)
        worst = max(worst, sup / norm_sq)
    if worst == 0.0:
        raise InvalidArgument("all supplied fields vanish")
    return worst


def log_decay_ratio(x: float) -> float:
    """(log sqrt(1 + x^2))^2 / x^2: the scalar controlling how the far
    pressure weight is absorbed; decays past its peak near x ~ 2."""
    if x < 0.0:
        raise InvalidArgument("argument must be >= 0")
    if x == 0.0:
        return 0.0
    return math.log(math.sqrt(1.0 + x * x)) ** 2 / (x * x)


def load_calibration() -> dict:
    """Measured constants (c0, c1, tolerance coefficients) with the
    resolutions they were measured at."""
    ref = resources.files("nslocal").joinpath("calibration.json")
    try:
        text = ref.read_text()
    except FileNotFoundError as exc:
        raise NotFound("calibration.json is missing from the package") from exc
    return json.loads(text)
