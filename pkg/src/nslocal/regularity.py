"""Smallness scans over parabolic cylinders and the eventual smooth region.

A cylinder couples a ball with the time window whose length is the
squared radius; the scanned quantity is the window integral of
|u|^3 + |p - <p>|^(3/2) over the ball, normalized by the squared radius,
with the pressure recentered per time slice by its mean over the cube
circumscribing the ball.  Cylinders whose quantity stays under a
configured threshold are marked as passing, and for those the measured
sup of |u| on the shrunken cylinder is compared against the smallness
prediction sup <= C * eps / r.

The analytic region pairs a paraboloid opening delta with a shrink
factor sigma via sigma^2 = 1 / (1 + delta/4).  Dyadic bands tile the
region above the paraboloid from a starting level upward; the band
geometry (each band inside its cylinder family, consecutive time bands
abutting exactly) is verified with exact endpoint arithmetic, and the
band union is compared against the region on a sampled lattice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .cover import Cube, CubeCover
from .errors import DomainMismatch, InvalidArgument
from .fields import GridField, ball_integral, ball_weights, interval_weights

_TOL = 1e-12


@dataclass(frozen=True)
class ParabolicCylinder:
    """Ball of the given radius, paired with the time window
    (top_time - radius^2, top_time]."""

    center: tuple[float, float, float]
    top_time: float
    radius: float

    def __post_init__(self):
        if not (self.radius > 0.0):
            raise InvalidArgument("cylinder radius must be positive")
        if self.top_time - self.radius**2 < -_TOL:
            raise InvalidArgument(
                "cylinder window starts before time zero "
                f"(top {self.top_time}, radius {self.radius})"
            )
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def window(self) -> tuple[float, float]:
        return (self.top_time - self.radius**2, self.top_time)

    def enclosing_cube(self) -> Cube:
        return Cube(self.center, 2.0 * self.radius)

    def shrunk(self, sigma: float) -> "ParabolicCylinder":
        return ParabolicCylinder(
            self.center, self.top_time, sigma * self.radius
        )


@dataclass(frozen=True)
class CylinderResult:
    cylinder: ParabolicCylinder
    eps3: float
    passed: bool
    sup_measured: float
    sup_ratio: float
    consistent: bool


@dataclass(frozen=True)
class Band:
    """Dyadic level n: paraboloid band P_n inside cylinder family Z_n."""

    n: int
    t_lo: float
    t_hi: float
    z_t_lo: float
    z_t_hi: float
    z_radius: float


@dataclass(frozen=True)
class RegionMask:
    """Scan output (rows) or analytic region (bands), sharing parameters."""

    kind: str
    delta: float
    sigma: float
    eps_star: float | None = None
    c_star: float | None = None
    tau: float | None = None
    rows: tuple[CylinderResult, ...] = ()
    bands: tuple[Band, ...] = ()
    checks: Mapping | None = None

    def summary(self) -> dict:
        out = {
            "kind": self.kind,
            "delta": self.delta,
            "sigma": self.sigma,
            "sigma_sq": sigma_sq_from_delta(self.delta),
            "eps_star": self.eps_star,
            "c_star": self.c_star,
            "tau": self.tau,
        }
        if self.kind == "scan":
            out["cylinders"] = len(self.rows)
            out["passed"] = sum(r.passed for r in self.rows)
            out["inconsistent"] = sum(not r.consistent for r in self.rows)
        else:
            out["bands"] = [b.n for b in self.bands]
            out["checks"] = dict(self.checks or {})
        return out

    def write_csv(self, path) -> None:
        lines = ["x,y,z,t,pass"]
        for r in self.rows:
            x, y, z = r.cylinder.center
            lines.append(
                f"{x!r},{y!r},{z!r},{r.cylinder.top_time!r},{int(r.passed)}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    def write_summary(self, path, **extra) -> None:
        payload = self.summary()
        payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def sigma_sq_from_delta(delta: float) -> float:
    """Squared shrink factor for a paraboloid opening: 1/(1 + delta/4)."""
    if not (0.0 < delta <= 1.0):
        raise InvalidArgument(f"delta must lie in (0, 1], got {delta!r}")
    return 1.0 / (1.0 + delta / 4.0)


def sigma_from_delta(delta: float) -> float:
    return math.sqrt(sigma_sq_from_delta(delta))


# ---------------------------------------------------------------------------
# cylinder quantity


def _check_series(u_series, p_series):
    u_series, p_series = list(u_series), list(p_series)
    if len(u_series) < 2 or len(p_series) != len(u_series):
        raise InvalidArgument("need aligned velocity and pressure series")
    base = u_series[0]
    times = []
    for us, ps in zip(u_series, p_series):
        if us.ncomp != 3 or ps.ncomp != 1:
            raise InvalidArgument("series must hold 3-component u, scalar p")
        if (us.N, us.L) != (base.N, base.L) or (ps.N, ps.L) != (base.N, base.L):
            raise InvalidArgument("series members live on different grids")
        if us.time is None or ps.time != us.time:
            raise InvalidArgument("series members need matching time stamps")
        times.append(us.time)
    times = np.asarray(times)
    if np.any(np.diff(times) <= 0):
        raise InvalidArgument("snapshot times must increase strictly")
    return u_series, p_series, times


def _cube_mean(p: GridField, Q: Cube) -> float:
    """Signed mean of a scalar field over a cube (partial-cell weights)."""
    b = Q.bounds()
    idx, wts = [], []
    for ax in range(3):
        i0, w = interval_weights(p.L, p.N, b[ax, 0], b[ax, 1])
        if w.size == 0:
            return 0.0
        idx.append(i0)
        wts.append(w)
    sub = p.data[0][
        idx[0] : idx[0] + wts[0].size,
        idx[1] : idx[1] + wts[1].size,
        idx[2] : idx[2] + wts[2].size,
    ]
    total = float(np.einsum("i,j,k,ijk->", wts[0], wts[1], wts[2], sub))
    return total / Q.volume


def _window_slice(times: np.ndarray, lo: float, hi: float):
    """Snapshot index range covering [lo, hi], including straddlers."""
    if lo < times[0] - 1e-9 or hi > times[-1] + 1e-9:
        raise DomainMismatch(
            f"cylinder window [{lo:.6g}, {hi:.6g}] outside sampled times "
            f"[{times[0]:.6g}, {times[-1]:.6g}]"
        )
    first = int(np.searchsorted(times, lo + _TOL, side="right")) - 1
    last = int(np.searchsorted(times, hi - _TOL, side="left"))
    return max(first, 0), min(last, times.size - 1)


def cylinder_quantity(u_series, p_series, Z: ParabolicCylinder) -> float:
    """Window integral of |u|^3 + |p - <p>_Q|^(3/2) over the ball, / r^2.

    The pressure is recentered per time slice by its mean over the cube
    circumscribing the ball.  Space is integrated with antialiased ball
    weights, time with the trapezoid rule on the sampled instants,
    linearly interpolated to the exact window endpoints.
    """
    u_series, p_series, times = _check_series(u_series, p_series)
    base = u_series[0]
    c = np.asarray(Z.center)
    if np.any(np.abs(c) + Z.radius > base.L + 1e-12):
        raise DomainMismatch(
            f"ball B_{Z.radius}({Z.center}) extends beyond box +-{base.L}"
        )
    lo, hi = Z.window
    i0, i1 = _window_slice(times, lo, hi)
    Q = Z.enclosing_cube()
    ax = base.axis()
    radius_sq = (
        (ax - c[0])[:, None, None] ** 2
        + (ax - c[1])[None, :, None] ** 2
        + (ax - c[2])[None, None, :] ** 2
    )
    knot_t, knot_g = [], []
    for s in range(i0, i1 + 1):
        u_part = ball_integral(u_series[s], c, Z.radius, power=3.0,
                               radius_sq=radius_sq)
        shift = _cube_mean(p_series[s], Q)
        p_tilde = GridField(base.L, p_series[s].data[0] - shift)
        p_part = ball_integral(p_tilde, c, Z.radius, power=1.5,
                               radius_sq=radius_sq)
        knot_t.append(times[s])
        knot_g.append(u_part + p_part)
    grid = np.array([lo] + [t for t in knot_t if lo < t < hi] + [hi])
    vals = np.interp(grid, knot_t, knot_g)
    return float(np.trapezoid(vals, grid)) / Z.radius**2


# ---------------------------------------------------------------------------
# scanning


def cylinders_from_cover(cover: CubeCover, L: float, top_times, t_first=0.0):
    """Scan lattice per the cover: centers at cube centers, r = side/2.

    Keeps cylinders whose ball fits in the box and whose window starts
    at or after ``t_first``.
    """
    out = []
    for t0 in sorted(top_times):
        for Q in cover:
            r = Q.side / 2.0
            if max(abs(x) for x in Q.center) + r > L + 1e-12:
                continue
            if t0 - r * r < t_first - _TOL:
                continue
            out.append(ParabolicCylinder(Q.center, float(t0), r))
    return out


def scan(
    u_series,
    p_series,
    cylinders,
    eps_star: float,
    delta: float = 1.0,
    sup_coefficient: float | None = None,
) -> RegionMask:
    """Evaluate every cylinder and flag passes against ``eps_star``.

    Passing cylinders also get the smallness cross-check: the measured
    sup of |u| over the sigma-shrunken cylinder, expressed as the ratio
    sup * r / eps.  When a historical coefficient is supplied, a ratio
    beyond ten times it marks the row inconsistent.
    """
    if not (eps_star > 0.0):
        raise InvalidArgument("eps_star must be positive")
    sigma = sigma_from_delta(delta)
    u_series, p_series, times = _check_series(u_series, p_series)
    base = u_series[0]
    ax = base.axis()
    rows = []
    for Z in cylinders:
        eps3 = cylinder_quantity(u_series, p_series, Z)
        passed = eps3 < eps_star
        sup_measured = 0.0
        ratio = 0.0
        consistent = True
        if passed:
            small = Z.shrunk(sigma)
            slo, shi = small.window
            i0, i1 = _window_slice(times, slo, shi)
            c = small.center
            radius_sq = (
                (ax - c[0])[:, None, None] ** 2
                + (ax - c[1])[None, :, None] ** 2
                + (ax - c[2])[None, None, :] ** 2
            )
            mask = ball_weights(base, c, small.radius, radius_sq=radius_sq) >= 0.5
            if mask.any():
                sup_measured = max(
                    float(u_series[s].magnitude()[mask].max())
                    for s in range(i0, i1 + 1)
                )
            eps = eps3 ** (1.0 / 3.0)
            if eps > 0.0:
                ratio = sup_measured * Z.radius / eps
            elif sup_measured > 0.0:
                ratio = math.inf
            if sup_coefficient is not None:
                consistent = ratio <= 10.0 * sup_coefficient
        rows.append(
            CylinderResult(
                cylinder=Z,
                eps3=eps3,
                passed=passed,
                sup_measured=sup_measured,
                sup_ratio=ratio,
                consistent=consistent,
            )
        )
    return RegionMask(
        kind="scan", delta=delta, sigma=sigma, eps_star=eps_star, rows=tuple(rows)
    )


# ---------------------------------------------------------------------------
# analytic region


def eventual_region(
    delta: float, c_star: float, N2: int, n_max: int | None = None
) -> RegionMask:
    """Dyadic band family covering {t >= max(tau, delta |x|^2)}.

    Band n spans times [(1-sigma^2) c 4^n, 4 (1-sigma^2) c 4^n] under the
    paraboloid constraint delta |x|^2 <= t, and sits inside the cylinder
    family of radius sigma sqrt(c) 2^n over [(1-sigma^2) c 4^n, c 4^n].
    tau is the first band's lower edge.  Endpoint inclusions are checked
    exactly; the lattice union check lives in ``lattice_coverage``.
    """
    sigma = sigma_from_delta(delta)
    if not (c_star > 0.0):
        raise InvalidArgument("c_star must be positive")
    if not isinstance(N2, int) or N2 < 0:
        raise InvalidArgument("N2 must be a non-negative integer")
    if n_max is None:
        n_max = N2 + 5
    if not isinstance(n_max, int) or n_max < N2:
        raise InvalidArgument("n_max must be an integer >= N2")
    one_minus = 1.0 - sigma_sq_from_delta(delta)
    bands = []
    for n in range(N2, n_max + 1):
        scale = c_star * 4.0**n
        bands.append(
            Band(
                n=n,
                t_lo=one_minus * scale,
                t_hi=4.0 * one_minus * scale,
                z_t_lo=one_minus * scale,
                z_t_hi=scale,
                z_radius=sigma * math.sqrt(c_star) * 2.0**n,
            )
        )
    tau = bands[0].t_lo
    checks = {
        "pn_in_zn": all(
            b.t_lo >= b.z_t_lo and b.t_hi <= b.z_t_hi + _TOL
            # spatial part: delta |x|^2 <= t <= t_hi forces
            # |x| <= sqrt(t_hi / delta) == z_radius exactly
            and abs(math.sqrt(b.t_hi / delta) - b.z_radius) <= 1e-9 * b.z_radius
            for b in bands
        ),
        "bands_abut": all(
            abs(a.t_hi - b.t_lo) <= 1e-9 * b.t_lo
            for a, b in zip(bands, bands[1:])
        ),
    }
    if not all(checks.values()):  # pragma: no cover - exact by construction
        raise InvalidArgument(f"band geometry checks failed: {checks}")
    return RegionMask(
        kind="analytic",
        delta=delta,
        sigma=sigma,
        c_star=c_star,
        tau=tau,
        bands=bands and tuple(bands),
        checks=checks,
    )


def in_region(mask: RegionMask, x, t: float) -> bool:
    """Closed membership t >= max(tau, delta |x|^2), within computed bands."""
    if mask.kind != "analytic":
        raise InvalidArgument("membership is defined for analytic masks")
    r_sq = float(sum(float(c) ** 2 for c in x))
    if t < mask.tau - _TOL or t < mask.delta * r_sq - _TOL:
        return False
    return t <= mask.bands[-1].t_hi + _TOL


def _band_containing(mask: RegionMask, x, t: float) -> Band | None:
    r_sq = float(sum(float(c) ** 2 for c in x))
    for b in mask.bands:
        if b.t_lo - _TOL <= t <= b.t_hi + _TOL and mask.delta * r_sq <= t + _TOL:
            return b
    return None


def lattice_coverage(
    mask: RegionMask, n_space: int = 12, n_time: int = 40
) -> tuple[float, list]:
    """Fraction of sampled region points lying in some band.

    The lattice spans the computed time range and, per time, the full
    paraboloid cross-section; misses are returned for inspection.
    """
    if mask.kind != "analytic":
        raise InvalidArgument("lattice coverage applies to analytic masks")
    t_lo, t_hi = mask.tau, mask.bands[-1].t_hi
    times = np.linspace(t_lo, t_hi, n_time)
    hits = 0
    total = 0
    misses = []
    for t in times:
        r_max = math.sqrt(t / mask.delta)
        xs = np.linspace(-r_max, r_max, n_space)
        for x in xs:
            for y in xs:
                for z in xs:
                    if mask.delta * (x * x + y * y + z * z) > t + _TOL:
                        continue
                    total += 1
                    if _band_containing(mask, (x, y, z), float(t)) is not None:
                        hits += 1
                    else:
                        misses.append((float(x), float(y), float(z), float(t)))
    return (hits / total if total else 1.0), misses


# ---------------------------------------------------------------------------
# scan vs analytic region


@dataclass(frozen=True)
class CoverageReport:
    coverage: float
    considered: int
    violations: tuple

    def as_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "considered": self.considered,
            "violations": [list(v) for v in self.violations],
        }


def region_check(scan_mask: RegionMask, analytic: RegionMask) -> CoverageReport:
    """Fraction of scan lattice points inside the analytic region whose
    cylinder passed; failing points are listed."""
    if scan_mask.kind != "scan" or analytic.kind != "analytic":
        raise InvalidArgument("region_check takes a scan mask and an analytic mask")
    considered = 0
    passed = 0
    violations = []
    for row in scan_mask.rows:
        x = row.cylinder.center
        t = row.cylinder.top_time
        if not in_region(analytic, x, t):
            continue
        considered += 1
        if row.passed:
            passed += 1
        else:
            violations.append((x[0], x[1], x[2], t))
    coverage = passed / considered if considered else 1.0
    return CoverageReport(
        coverage=coverage, considered=considered, violations=tuple(violations)
    )


def slice_image(mask: RegionMask) -> np.ndarray:
    """Pass/fail raster over (x, y) at the latest scanned time, for the
    plane of cylinders nearest z = 0; (H, W, 3) uint8."""
    if mask.kind != "scan" or not mask.rows:
        raise InvalidArgument("slice rendering needs a non-empty scan mask")
    t_last = max(r.cylinder.top_time for r in mask.rows)
    at_t = [r for r in mask.rows if r.cylinder.top_time == t_last]
    z0 = min((abs(r.cylinder.center[2]), r.cylinder.center[2]) for r in at_t)[1]
    plane = [r for r in at_t if r.cylinder.center[2] == z0]
    xs = sorted({r.cylinder.center[0] for r in plane})
    ys = sorted({r.cylinder.center[1] for r in plane})
    xi = {v: i for i, v in enumerate(xs)}
    yi = {v: i for i, v in enumerate(ys)}
    img = np.zeros((len(ys), len(xs), 3), dtype=np.uint8)
    for r in plane:
        i = yi[r.cylinder.center[1]]
        j = xi[r.cylinder.center[0]]
        img[i, j] = (64, 192, 64) if r.passed else (208, 48, 48)
    return img


def write_ppm(img: np.ndarray, path) -> None:
    """Binary portable pixmap (P6)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidArgument("image must be (H, W, 3)")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        fh.write(img.tobytes())
