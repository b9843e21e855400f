"""Energy diagnostics tests.

Oracles: closed-form heat evolution for the linear-mode energy
identity, direct ODE integration for the barrier time, and algebraic
evaluation of the cubic bound for constant fields.
"""

import csv
import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import localized_single_mode
from nslocal.cover import Cube, build_cover, build_refined_cover
from nslocal.energy import (
    BoundCheck,
    apriori_bound_check,
    cubic_estimate_check,
    cutoff_normalization,
    existence_time,
    gronwall_time,
    lei_residual,
    log_decay_ratio,
    make_cutoff,
    track_series,
)
from nslocal.errors import DomainMismatch, InvalidArgument, ResolutionError
from nslocal.fields import GridField, _rfftn, _irfftn, _zero_nyquist, wavenumbers
from nslocal.generators import GeneratorSpec, generate


# ---------------------------------------------------------------------------
# helpers


def zero_grid(N, L=8.0):
    return GridField(L, np.zeros((3, N, N, N)))


def heat_evolve(u, t):
    """Exact heat flow: each mode damped by exp(-|k|^2 t)."""
    ks = wavenumbers(u.L, u.N)
    k2 = ks[0] ** 2 + ks[1] ** 2 + ks[2] ** 2
    damp = np.exp(-k2 * t)
    out = np.empty_like(u.data)
    for c in range(u.ncomp):
        fh = _zero_nyquist(_rfftn(u.data[c]), u.N)
        out[c] = _irfftn(fh * damp, u.data.shape[1:])
    return GridField(u.L, out, time=t)


def heat_series(u0, times):
    return [heat_evolve(u0, t) for t in times]


def smooth_random(N, seed, L=8.0):
    """Band-limited random field from closed-form modes, so the same
    continuum field can be sampled at any resolution."""
    rng = np.random.default_rng(seed)
    ax = -L + (np.arange(N) + 0.5) * (2.0 * L / N)
    data = np.zeros((3, N, N, N))
    for _ in range(4):
        m = rng.integers(1, 4, size=3)
        amp = rng.normal(size=3)
        ph = rng.uniform(0, 2 * np.pi, size=3)
        k = np.pi / L
        sx = np.sin(m[0] * k * ax + ph[0])[:, None, None]
        sy = np.sin(m[1] * k * ax + ph[1])[None, :, None]
        sz = np.sin(m[2] * k * ax + ph[2])[None, None, :]
        for c in range(3):
            data[c] += amp[c] * sx * sy * sz
    return GridField(L, data)


# ---------------------------------------------------------------------------
# cutoff


def test_cutoff_is_one_on_cube_zero_outside_star():
    g = zero_grid(128)
    Q = Cube((0.5, 0.5, 0.5), 1.0)
    cut = make_cutoff(Q, g)
    ax = g.axis()
    inside = np.abs(ax - 0.5) <= 0.5 - 1e-9
    outside = np.abs(ax - 0.5) >= 2.0 / 3.0 + 1e-9
    vals = cut.phi.data[0]
    assert np.all(vals[np.ix_(inside, inside, inside)] == 1.0)
    assert np.all(vals[outside, :, :] == 0.0)
    assert np.all(vals[:, outside, :] == 0.0)
    assert np.all(vals[:, :, outside] == 0.0)
    assert vals.min() >= 0.0 and vals.max() <= 1.0


def test_cutoff_derivative_table_constant_across_scales():
    g = zero_grid(128)
    tables = []
    for side in (1.0, 2.0, 4.0, 8.0):
        cut = make_cutoff(Cube((0.0, 0.0, 0.0), side), g)
        tables.append(cut.table)
    base = tables[0]
    for tab in tables[1:]:
        for order in (1, 2):
            assert tab[order] == pytest.approx(base[order], rel=0.05)
    # spot-check order 1 against the grid: finite differences on a
    # well-resolved cube land near the profile bound
    cut = make_cutoff(Cube((0.0, 0.0, 0.0), 8.0), g)
    fd = np.abs(np.diff(cut.phi.data[0], axis=0)).max() / g.h
    assert fd <= base[1] / 8.0 + 1e-9
    assert fd >= 0.8 * base[1] / 8.0


def test_cutoff_monotone_on_axis_rays():
    g = zero_grid(128)
    cut = make_cutoff(Cube((0.5, 0.5, 0.5), 2.0), g)
    ax = g.axis()
    ic = int(np.argmin(np.abs(ax - 0.5)))
    for sl in (
        cut.phi.data[0][ic:, ic, ic],
        cut.phi.data[0][ic, ic:, ic],
        cut.phi.data[0][ic, ic, ic:],
    ):
        assert np.all(np.diff(sl) <= 1e-12)


def test_cutoff_arguments():
    g = zero_grid(32)
    with pytest.raises(ResolutionError):
        make_cutoff(Cube((0.5, 0.5, 0.5), 1.0), g)  # h = 0.5, needs >= 4.0
    with pytest.raises(DomainMismatch):
        make_cutoff(Cube((7.0, 7.0, 7.0), 4.0), g)


# ---------------------------------------------------------------------------
# localized energy inequality


def test_lei_zero_field():
    us = [zero_grid(32).with_time(t) for t in (0.0, 0.1)]
    ps = [GridField(8.0, np.zeros((1, 32, 32, 32)), time=t) for t in (0.0, 0.1)]
    cut = make_cutoff(Cube((0.0, 0.0, 0.0), 4.0), us[0])
    assert lei_residual(us, ps, cut, mode="full") == 0.0
    assert lei_residual(us, None, cut, mode="stokes") == 0.0


def stokes_residual(N, steps):
    u0 = localized_single_mode(N)
    times = np.linspace(0.0, 0.1, steps + 1)
    us = heat_series(u0, times)
    cut = make_cutoff(Cube((0.0, 0.0, 0.0), 4.0), u0)
    return abs(lei_residual(us, None, cut, mode="stokes"))


def test_lei_stokes_calibration_refines():
    coarse = stokes_residual(64, 2)
    fine = stokes_residual(128, 4)
    assert coarse > 0.0
    assert coarse / fine >= 3.0


def test_lei_arguments():
    us = [zero_grid(32).with_time(t) for t in (0.0, 0.1)]
    ps = [GridField(8.0, np.zeros((1, 32, 32, 32)), time=t) for t in (0.0, 0.1)]
    cut = make_cutoff(Cube((0.0, 0.0, 0.0), 4.0), us[0])
    with pytest.raises(InvalidArgument):
        lei_residual(us, ps[:1], cut, mode="full")
    with pytest.raises(InvalidArgument):
        lei_residual(us[:1], ps[:1], cut, mode="full")
    with pytest.raises(InvalidArgument):
        lei_residual(us, ps, cut, mode="heat")
    bad_t = [us[0], us[1].with_time(0.0)]
    with pytest.raises(InvalidArgument):
        lei_residual(bad_t, ps, cut, mode="full")


# ---------------------------------------------------------------------------
# diagnostic series


def test_track_series_zero_field():
    us = [zero_grid(32).with_time(t) for t in (0.0, 0.05, 0.1)]
    series = track_series(us, None, build_cover(1), n=1, q=2)
    assert all(a == 0.0 for a in series.alpha)
    assert all(b == 0.0 for b in series.beta)


def test_track_series_static_field_alpha_constant_beta_linear():
    u = localized_single_mode(64)
    times = (0.0, 0.05, 0.1, 0.2)
    us = [GridField(u.L, u.data, time=t) for t in times]
    series = track_series(us, None, build_cover(1), n=1, q=2)
    assert series.alpha == pytest.approx([series.alpha[0]] * len(times))
    slopes = np.diff(series.beta) / np.diff(times)
    assert slopes == pytest.approx([slopes[0]] * (len(times) - 1), rel=1e-9)
    assert series.beta[0] == 0.0


def test_track_series_additive_increments():
    u = localized_single_mode(64)
    times = (0.0, 0.04, 0.1)
    us = [GridField(u.L, math.exp(-t) * u.data, time=t) for t in times]
    full = track_series(us, None, build_cover(1), n=1, q=2)
    head = track_series(us[:2], None, build_cover(1), n=1, q=2)
    for j, v in enumerate(head.per_cube_beta[1]):
        assert full.per_cube_beta[1][j] == pytest.approx(v, rel=1e-12)


def test_track_series_q_one_variant():
    u = localized_single_mode(64)
    us = [GridField(u.L, u.data, time=t) for t in (0.0, 0.1)]
    s2 = track_series(us, None, build_cover(1), n=1, q=2)
    s1 = track_series(us, None, build_cover(1), n=1, q=1)
    assert s1.q == 1 and s2.q == 2
    assert s1.beta[-1] != pytest.approx(s2.beta[-1])


def test_track_series_arguments():
    us = [zero_grid(16).with_time(t) for t in (0.0, 0.1)]
    with pytest.raises(InvalidArgument):
        track_series(us, None, build_cover(1), n=1, q=3)
    with pytest.raises(InvalidArgument):
        track_series([], None, build_cover(1), n=1, q=2)
    with pytest.raises(InvalidArgument):
        track_series(us, us[:1], build_cover(1), n=1, q=2)


def test_series_csv_round_trip(tmp_path):
    u = localized_single_mode(64)
    us = [GridField(u.L, math.exp(-t) * u.data, time=t) for t in (0.0, 0.1)]
    series = track_series(us, None, build_cover(1), n=1, q=2)
    path = tmp_path / "series.csv"
    series.write_csv(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0].keys()) == ["t", "alpha_n", "beta_n", "argmax_cube"]
    assert [float(r["alpha_n"]) for r in rows] == pytest.approx(series.alpha)
    assert [float(r["beta_n"]) for r in rows] == pytest.approx(series.beta)


# ---------------------------------------------------------------------------
# cubic estimate


def test_cubic_estimate_zero_field():
    u = zero_grid(32)
    rep = cubic_estimate_check(u, Cube((0.5, 0.5, 0.5), 1.0), q=2.0, epsilon=1.0)
    assert rep.lhs == 0.0 and rep.c_hat == 0.0


def test_cubic_estimate_constant_field_unit_cube():
    N = 64
    u = GridField(8.0, np.ones((3, N, N, N)) / math.sqrt(3.0))
    rep = cubic_estimate_check(u, Cube((0.5, 0.5, 0.5), 1.0), q=2.0, epsilon=1.0)
    assert rep.grad_term == pytest.approx(0.0, abs=1e-12)
    assert rep.mean_three_half_term == pytest.approx(rep.lhs, rel=1e-12)
    assert rep.c_hat == pytest.approx(1.0, rel=1e-12)


def test_cubic_estimate_random_suite_stable():
    Q = Cube((0.5, 0.5, 0.5), 2.0)
    worst = {32: 0.0, 64: 0.0}
    for seed in range(100):
        for N in (32, 64):
            rep = cubic_estimate_check(smooth_random(N, seed), Q, q=2.0, epsilon=1.0)
            assert math.isfinite(rep.c_hat)
            worst[N] = max(worst[N], rep.c_hat)
    ratio = worst[64] / worst[32]
    assert 0.5 <= ratio <= 2.0


def test_cubic_estimate_arguments():
    u = zero_grid(16)
    with pytest.raises(InvalidArgument):
        cubic_estimate_check(u, Cube((0.0, 0.0, 0.0), 1.0), q=2.0, epsilon=0.0)
    with pytest.raises(InvalidArgument):
        cubic_estimate_check(u, Cube((0.0, 0.0, 0.0), 1.0), q=3.0, epsilon=1.0)


# ---------------------------------------------------------------------------
# barrier time


def test_gronwall_time_closed_form():
    assert gronwall_time(1.0, 0.0, 1.0, 1.0) == pytest.approx(0.5)
    assert gronwall_time(1.0, 1.0, 1.0, 3.0) == pytest.approx(0.1)
    assert gronwall_time(2.0, 1.0, 0.0, 7.0) == pytest.approx(0.5)
    assert gronwall_time(1.0, 0.0, 0.0) == math.inf


def test_gronwall_time_arguments():
    with pytest.raises(InvalidArgument):
        gronwall_time(0.0, 1.0, 1.0)
    with pytest.raises(InvalidArgument):
        gronwall_time(1.0, -1.0, 0.0)
    with pytest.raises(InvalidArgument):
        gronwall_time(1.0, 1.0, 1.0, m=0.5)


def test_gronwall_barrier_holds_on_random_draws():
    """The worst ODE consistent with the hypothesis stays below the
    doubling level strictly before the reported time."""
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = float(rng.uniform(0.1, 5.0))
        b1 = float(rng.uniform(0.0, 3.0))
        b2 = float(rng.uniform(0.0, 3.0))
        m = float(rng.choice([1.0, 1.5, 2.0, 3.0]))
        if b1 + b2 == 0.0:
            b2 = 1.0
        t1 = gronwall_time(a, b1, b2, m)
        horizon = 0.999 * t1
        sol = solve_ivp(
            lambda t, f: b1 * f + b2 * np.abs(f) ** m,
            (0.0, horizon),
            [a],
            rtol=1e-10,
            atol=1e-12,
            dense_output=True,
        )
        assert sol.success
        fmax = float(np.max(sol.sol(np.linspace(0.0, horizon, 500))))
        assert fmax < 2.0 * a * (1.0 + 1e-8)


# ---------------------------------------------------------------------------
# existence times


def test_existence_time_closed_form():
    assert existence_time(0.0, 1, q=2, c1=1.0) == pytest.approx(4.0)
    assert existence_time(1.0, 30, q=2, c1=1.0) == pytest.approx(1.0, rel=1e-12)
    assert existence_time(0.0, 5, q=1, c_star=1.0) == pytest.approx(1024.0)


def test_existence_time_monotone_in_level():
    norms = [0.5 * 2.0**-k for k in range(8)]
    prev = 0.0
    for n, s in enumerate(norms):
        t = existence_time(s, n, q=2, c1=1.0)
        assert t >= prev
        prev = t
    assert existence_time(0.0, 20, q=2, c1=1.0) > 1e10


def test_existence_time_arguments():
    with pytest.raises(InvalidArgument):
        existence_time(-1.0, 1)
    with pytest.raises(InvalidArgument):
        existence_time(1.0, 1, q=3)
    with pytest.raises(InvalidArgument):
        existence_time(1.0, 1, q=2, c1=0.0)
    with pytest.raises(InvalidArgument):
        existence_time(1.0, 1, q=1, c_star=1.5)


# ---------------------------------------------------------------------------
# a priori bound check


def test_apriori_zero_data_trivially_passes():
    us = [zero_grid(32).with_time(t) for t in (0.0, 0.1)]
    series = track_series(us, None, build_cover(1), n=1, q=2)
    chk = apriori_bound_check(series, 0.0, n=1, c0=1.0, T=0.1)
    assert isinstance(chk, BoundCheck)
    assert chk.passed and chk.used == 0.0 and chk.allowed == 0.0


def test_apriori_arguments():
    us = [zero_grid(32).with_time(t) for t in (0.0, 0.1)]
    series = track_series(us, None, build_cover(1), n=1, q=2)
    with pytest.raises(InvalidArgument):
        apriori_bound_check(series, 0.0, n=2, c0=1.0, T=0.1)
    with pytest.raises(InvalidArgument):
        apriori_bound_check(series, 0.0, n=1, c0=1.0, T=1.0)


def test_apriori_failure_is_reported_not_raised():
    u = localized_single_mode(64)
    us = [GridField(u.L, u.data, time=t) for t in (0.0, 0.1)]
    series = track_series(us, None, build_cover(1), n=1, q=2)
    chk = apriori_bound_check(series, 1e-9, n=1, c0=1.0, T=0.1)
    assert not chk.passed and chk.margin < 0.0


# ---------------------------------------------------------------------------
# calibration helpers


def test_cutoff_normalization_at_least_one():
    fields = [
        generate(GeneratorSpec(kind="gaussian_vortex", seed=s), 8.0, 64)
        for s in (1, 2)
    ]
    c0 = cutoff_normalization(fields, build_cover(1), n=1)
    assert 1.0 <= c0 <= 10.0


def test_log_decay_ratio_bounded_on_dyadics():
    vals = {2.0**k: log_decay_ratio(2.0**k) for k in range(-10, 11)}
    sup = max(vals.values())
    assert sup == pytest.approx(vals[2.0], rel=1e-12)
    assert sup < 0.17
    assert log_decay_ratio(0.0) == 0.0
    assert log_decay_ratio(2.0**40) < 1e-20
    with pytest.raises(InvalidArgument):
        log_decay_ratio(-1.0)
