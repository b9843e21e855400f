"""Grid fields: construction, snapshot io, quadrature, calculus, windowing."""

import numpy as np
import pytest

from nslocal.cover import Cube, build_cover
from nslocal.errors import DomainMismatch, InvalidArgument
from nslocal.fields import (
    GridField,
    apply_window,
    ball_integral,
    boundary_leakage,
    cube_integral,
    discrete_gradient_sq,
    gradient_sq_field,
    interval_weights,
    leray_project,
    radial_scalar,
    read_field,
    spectral_divergence_max,
    window_profile_1d,
    write_field,
)

RNG = np.random.default_rng(20240814)


def random_field(L=2.0, N=16, ncomp=3, seed=1):
    rng = np.random.default_rng(seed)
    return GridField(L, rng.normal(size=(ncomp, N, N, N)))


def full_box_cube(f):
    return Cube((0.0, 0.0, 0.0), 2.0 * f.L)


# ---------------------------------------------------------------------------
# construction


def test_scalar_data_promoted_to_one_component():
    f = GridField(1.0, np.ones((4, 4, 4)))
    assert f.ncomp == 1 and f.data.shape == (1, 4, 4, 4)


def test_rejects_bad_component_count():
    with pytest.raises(InvalidArgument):
        GridField(1.0, np.ones((2, 4, 4, 4)))


def test_rejects_non_power_of_two():
    with pytest.raises(InvalidArgument):
        GridField(1.0, np.ones((1, 6, 6, 6)))


def test_rejects_non_cubic_shape():
    with pytest.raises(InvalidArgument):
        GridField(1.0, np.ones((1, 4, 4, 8)))


def test_rejects_non_finite():
    bad = np.ones((1, 4, 4, 4))
    bad[0, 1, 2, 3] = np.nan
    with pytest.raises(InvalidArgument):
        GridField(1.0, bad)


def test_data_is_immutable():
    f = random_field()
    with pytest.raises(ValueError):
        f.data[0, 0, 0, 0] = 5.0


def test_axis_spans_cell_centers():
    f = GridField(2.0, np.zeros((1, 8, 8, 8)))
    ax = f.axis()
    assert ax[0] == pytest.approx(-2.0 + f.h / 2)
    assert ax[-1] == pytest.approx(2.0 - f.h / 2)
    assert np.allclose(np.diff(ax), f.h)


# ---------------------------------------------------------------------------
# snapshot io


def test_snapshot_round_trip_is_bit_exact(tmp_path):
    f = random_field(L=3.5, N=8, seed=7).with_time(0.125)
    p = tmp_path / "snap.nswf"
    write_field(f, p)
    g = read_field(p)
    assert g.L == f.L and g.time == 0.125
    assert g.data.tobytes() == f.data.tobytes()


def test_snapshot_absent_time(tmp_path):
    f = random_field(N=4, seed=2)
    p = tmp_path / "snap.nswf"
    write_field(f, p)
    assert read_field(p).time is None


def test_snapshot_rejects_bad_magic(tmp_path):
    p = tmp_path / "junk.nswf"
    p.write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(InvalidArgument):
        read_field(p)


def test_snapshot_rejects_truncated_header(tmp_path):
    p = tmp_path / "short.nswf"
    p.write_bytes(b"NSWF")
    with pytest.raises(InvalidArgument):
        read_field(p)


# ---------------------------------------------------------------------------
# quadrature


def test_interval_weights_cover_full_axis():
    i0, w = interval_weights(2.0, 8, -2.0, 2.0)
    assert i0 == 0 and w.size == 8
    assert np.allclose(w, 0.5)


def test_constant_over_aligned_cube_is_exact():
    f = GridField(2.0, np.ones((1, 8, 8, 8)))
    q = Cube((0.0, 0.0, 0.0), 2.0)
    assert cube_integral(f, q, power=2.0) == 8.0


def test_constant_over_offset_cube_uses_partial_cells():
    # cube [-0.25, 0.75]^3 cuts cells of width 0.5: weights 1/4, 1/2, 1/4
    f = GridField(2.0, np.ones((1, 8, 8, 8)))
    q = Cube((0.25, 0.25, 0.25), 1.0)
    assert cube_integral(f, q) == 1.0


def test_cube_integral_additive_over_cover_partition():
    cover = build_cover(1)  # tiles [-4, 4]^3
    f = random_field(L=4.0, N=32, ncomp=3, seed=3)
    whole = float(np.sum(f.magnitude() ** 2)) * f.h ** 3
    parts = sum(cube_integral(f, q, power=2.0) for q in cover.cubes)
    assert parts == pytest.approx(whole, rel=1e-12)


def test_cube_integral_rejects_cube_outside_box():
    f = random_field(L=2.0, N=8)
    with pytest.raises(DomainMismatch):
        cube_integral(f, Cube((2.0, 0.0, 0.0), 1.0))


def test_smooth_integrand_converges_second_order():
    q = Cube((0.3, -0.2, 0.1), 1.0)
    exact = None
    errs = []
    for N in (16, 32, 64):
        ax = -2.0 + (np.arange(N) + 0.5) * (4.0 / N)
        x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
        f = GridField(2.0, np.cos(x) * np.cos(y) * np.cos(z))
        if exact is None:
            b = q.bounds()
            exact = np.prod([np.sin(b[a, 1]) - np.sin(b[a, 0]) for a in range(3)])
        errs.append(abs(cube_integral(f, q) - exact))
    assert errs[1] < errs[0] and errs[2] < errs[1]
    assert errs[1] / errs[2] > 3.0


def test_ball_volume_and_refinement():
    vols = []
    for N in (32, 64):
        f = GridField(2.0, np.ones((1, N, N, N)))
        vols.append(ball_integral(f, (0.0, 0.0, 0.0), 1.0))
    truth = 4.0 * np.pi / 3.0
    assert vols[0] == pytest.approx(truth, rel=0.02)
    assert abs(vols[1] - truth) < abs(vols[0] - truth)


def test_ball_integral_rejects_ball_outside_box():
    f = random_field(L=2.0, N=8)
    with pytest.raises(DomainMismatch):
        ball_integral(f, (1.5, 0.0, 0.0), 1.0)


def test_inv_sqrt_ball_integral_matches_closed_form():
    # integral over B_R of |x|^-1 dx = 2 pi R^2
    f = radial_scalar(2.0, 64, kind="inv_sqrt")
    got = ball_integral(f, (0.0, 0.0, 0.0), 1.0, power=2.0)
    assert got == pytest.approx(2.0 * np.pi, rel=0.02)


# ---------------------------------------------------------------------------
# spectral calculus


def test_gradient_energy_of_single_mode():
    L, N, A = 2.0, 32, 1.3
    k = 2.0 * np.pi / (2.0 * L) * 3  # third harmonic
    ax = -L + (np.arange(N) + 0.5) * (2 * L / N)
    f = GridField(L, A * np.sin(k * ax)[:, None, None] * np.ones((N, N)))
    vol = (2 * L) ** 3
    expected = A ** 2 * k ** 2 * vol / 2.0
    got = discrete_gradient_sq(f, full_box_cube(f), method="spectral")
    assert got == pytest.approx(expected, rel=1e-10)


def test_fd_gradient_error_shrinks_at_least_3x_per_refinement():
    L, A = 2.0, 1.0
    k = 2.0 * np.pi / (2.0 * L) * 2
    errs = []
    for N in (16, 32, 64):
        ax = -L + (np.arange(N) + 0.5) * (2 * L / N)
        f = GridField(L, A * np.sin(k * ax)[:, None, None] * np.ones((N, N)))
        expected = A ** 2 * k ** 2 * (2 * L) ** 3 / 2.0
        got = discrete_gradient_sq(f, full_box_cube(f), method="fd")
        errs.append(abs(got - expected) / expected)
    assert errs[0] / errs[1] > 3.0
    assert errs[1] / errs[2] > 3.0


def test_gradient_sq_field_is_scalar():
    f = random_field(N=8)
    g = gradient_sq_field(f)
    assert g.ncomp == 1
    assert np.all(g.data >= 0)


def test_leray_fixes_solenoidal_mode():
    L, N = 2.0, 16
    ax = -L + (np.arange(N) + 0.5) * (2 * L / N)
    k = 2.0 * np.pi / (2 * L)
    u = np.zeros((3, N, N, N))
    u[0] = np.sin(k * ax)[None, :, None] * np.ones((N, 1, N))  # u_x(y): div-free
    f = GridField(L, u)
    g = leray_project(f)
    assert np.max(np.abs(g.data - f.data)) < 1e-12


def test_leray_kills_pure_gradient():
    L, N = 2.0, 16
    ax = -L + (np.arange(N) + 0.5) * (2 * L / N)
    k = 2.0 * np.pi / (2 * L)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    phi_x = k * np.cos(k * x) * np.sin(k * y) * np.sin(k * z)
    phi_y = k * np.sin(k * x) * np.cos(k * y) * np.sin(k * z)
    phi_z = k * np.sin(k * x) * np.sin(k * y) * np.cos(k * z)
    f = GridField(L, np.stack([phi_x, phi_y, phi_z]))
    g = leray_project(f)
    assert np.max(np.abs(g.data)) < 1e-10


def test_leray_is_idempotent_and_divergence_free():
    f = random_field(L=1.5, N=16, seed=11)
    g = leray_project(f)
    gg = leray_project(g)
    assert np.max(np.abs(gg.data - g.data)) < 1e-12
    scale = np.max(np.abs(g.data)) / g.h
    assert spectral_divergence_max(g) < 1e-10 * scale


# ---------------------------------------------------------------------------
# windowing


def test_window_profile_shape():
    x = np.array([0.0, 1.5, 1.9, 1.95, 2.0])
    w = window_profile_1d(x, 2.0, 0.1)
    assert w[0] == 1.0 and w[1] == 1.0
    assert 0 < w[2] < 1 and 0 < w[3] < w[2]
    assert w[4] == 0.0


def test_window_preserves_interior_and_tapers_seam():
    f = random_field(L=2.0, N=64, seed=5)
    g = apply_window(f)
    n4 = f.N // 4
    inner = (slice(None), slice(n4, -n4), slice(n4, -n4), slice(n4, -n4))
    assert np.array_equal(g.data[inner], f.data[inner])
    assert boundary_leakage(g) < 0.05 * np.max(np.abs(f.data))


def test_radial_scalar_samples_envelope():
    f = radial_scalar(2.0, 16, kind="inv_sqrt")
    ax = f.axis()
    i = 12
    r = np.sqrt(3.0) * abs(ax[i])
    assert f.data[0, i, i, i] == pytest.approx(r ** -0.5)


def test_radial_scalar_log_damped_below_plain():
    a = radial_scalar(2.0, 16, kind="inv_sqrt")
    b = radial_scalar(2.0, 16, kind="inv_sqrt_log")
    assert np.all(b.data <= a.data)
    with pytest.raises(InvalidArgument):
        radial_scalar(2.0, 16, kind="nope")
