"""Initial-data generators: determinism, solenoidality, profile oracles."""

import numpy as np
import pytest

from nslocal.errors import InvalidArgument
from nslocal.fields import ball_integral, spectral_divergence_max
from nslocal.generators import (
    KINDS,
    GeneratorSpec,
    dss_evaluate,
    dss_model,
    generate,
)


def ring_values(f, radii):
    """E(R)/R^2 with E the squared-magnitude integral over the ball B_R."""
    return [ball_integral(f, (0.0, 0.0, 0.0), R, power=2.0) / R ** 2 for R in radii]


# ---------------------------------------------------------------------------
# shared behaviour


def test_spec_validation():
    with pytest.raises(InvalidArgument):
        GeneratorSpec("whirl")
    with pytest.raises(InvalidArgument):
        GeneratorSpec("growth_radial")  # gamma required
    with pytest.raises(InvalidArgument):
        GeneratorSpec("growth_radial", gamma=0.7)
    with pytest.raises(InvalidArgument):
        GeneratorSpec("dss", lam=1.0)


def test_generate_validates_grid():
    spec = GeneratorSpec("gaussian_vortex")
    with pytest.raises(InvalidArgument):
        generate(spec, 0.0, 32)
    with pytest.raises(InvalidArgument):
        generate(spec, 4.0, 48)


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic_and_seed_sensitive(kind):
    extra = {}
    if kind == "growth_radial":
        extra["gamma"] = -0.5
    if kind == "dss":
        extra["lam"] = 2.0
    a = generate(GeneratorSpec(kind, seed=4, **extra), 4.0, 16)
    b = generate(GeneratorSpec(kind, seed=4, **extra), 4.0, 16)
    c = generate(GeneratorSpec(kind, seed=5, **extra), 4.0, 16)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.tobytes() != c.data.tobytes()
    assert a.meta["kind"] == kind and "boundary_leakage" in a.meta


@pytest.mark.parametrize("kind", KINDS)
def test_solenoidal_after_projection(kind):
    extra = {}
    if kind == "growth_radial":
        extra["gamma"] = 0.25
    if kind == "dss":
        extra["lam"] = 2.0
    f = generate(GeneratorSpec(kind, seed=1, **extra), 8.0, 32)
    scale = np.max(np.abs(f.data)) / f.h
    assert spectral_divergence_max(f) < 1e-10 * scale


def test_window_keeps_seam_small_for_decaying_data():
    for kind, extra in (("gaussian_vortex", {}), ("dss", {"lam": 2.0})):
        f = generate(GeneratorSpec(kind, seed=2, **extra), 8.0, 64)
        assert f.meta["boundary_leakage"] < 0.05 * np.max(np.abs(f.data))


def test_growth_radial_handles_inverse_first_power():
    f = generate(GeneratorSpec("growth_radial", gamma=-1.0, seed=1), 8.0, 32)
    assert np.max(np.abs(f.data)) > 0


# ---------------------------------------------------------------------------
# kind-specific profiles


def test_gaussian_vortex_energy_is_localized():
    # ball energy saturates once the blobs are enclosed: E(R)/R^2 ~ R^-2
    f = generate(GeneratorSpec("gaussian_vortex", seed=3), 8.0, 64)
    prof = ring_values(f, [1.0, 2.0, 4.0, 7.0])
    assert np.isfinite(prof).all()
    assert prof[-1] < 0.5 * max(prof)
    e4, e7 = 16.0 * prof[2], 49.0 * prof[3]
    assert e7 < 1.25 * e4


def test_growth_radial_flat_ring_profile():
    # gamma = -1/2 balances |u|^2 ~ r^-1 against the r^2 shell volume
    f = generate(GeneratorSpec("growth_radial", gamma=-0.5, seed=6), 16.0, 128)
    prof = ring_values(f, [2.0, 4.0, 8.0])
    mid = np.median(prof)
    assert max(abs(p - mid) for p in prof) < 0.10 * mid


def test_log_damped_ring_profile_decays():
    f = generate(GeneratorSpec("log_damped_radial", seed=6), 16.0, 128)
    prof = ring_values(f, [2.0, 4.0, 8.0])
    assert prof[0] > prof[1] > prof[2]
    assert prof[2] < 0.6 * prof[0]


def test_dss_ball_energy_doubles_per_octave():
    L, N = 16.0, 128
    f = generate(GeneratorSpec("dss", lam=2.0, seed=8), L, N)
    h = 2 * L / N
    for R in (7 * h, 14 * h, 28 * h):
        e1 = ball_integral(f, (0.0, 0.0, 0.0), R, power=2.0)
        e2 = ball_integral(f, (0.0, 0.0, 0.0), 2 * R, power=2.0)
        assert e2 == pytest.approx(2.0 * e1, rel=0.05)


def test_dss_pointwise_scaling_identity():
    spec = GeneratorSpec("dss", lam=2.0, seed=9)
    L, N = 16.0, 128
    model = dss_model(spec, L, N)
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(200, 3))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    radii = rng.uniform(model.core_radius, 0.45 * L, size=(200, 1))
    pts *= radii
    u = dss_evaluate(spec, L, N, pts)
    u2 = dss_evaluate(spec, L, N, 2.0 * pts)
    assert np.max(np.abs(u - 2.0 * u2)) < 1e-12 * np.max(np.abs(u))


def test_dss_grid_matches_analytic_in_interior():
    spec = GeneratorSpec("dss", lam=2.0, seed=8)
    L, N = 16.0, 128
    f = generate(spec, L, N)
    ax = f.axis()
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt(x ** 2 + y ** 2 + z ** 2)
    sel = (r > dss_model(spec, L, N).core_radius) & (r < 0.5 * L)
    pts = np.stack([x[sel], y[sel], z[sel]], axis=-1)
    exact = dss_evaluate(spec, L, N, pts)
    grid = np.stack([f.data[c][sel] for c in range(3)], axis=-1)
    num = np.sqrt(np.mean(np.sum((grid - exact) ** 2, axis=-1)))
    den = np.sqrt(np.mean(np.sum(exact ** 2, axis=-1)))
    assert num < 0.05 * den


def test_dss_brick_ladder_scales_exactly():
    model = dss_model(GeneratorSpec("dss", lam=2.0, seed=1), 16.0, 128)
    r = np.linspace(model.core_radius, 7.0, 500)
    m = model.brick_profile(r)
    assert np.max(m) > 0
    assert np.allclose(model.brick_profile(2.0 * r), 0.5 * m, atol=1e-14)
