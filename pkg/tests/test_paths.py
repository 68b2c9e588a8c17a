"""Tests for sampled drivers, level-two lifts, and the discrete norms."""

from __future__ import annotations

import io
import random

import numpy as np
import pytest

from coercive.paths import (
    MAX_GRID,
    BranchedLift2,
    NormEstimate,
    SampledPath,
    besov_norm_field,
    bump_mass,
    bump_profile,
    chen_residual,
    fbm_lag_one_correlation,
    holder_norm,
    lift_level2,
    path_from_function,
    read_lift_binary,
    read_path_binary,
    read_path_csv,
    sample_fbm,
    write_lift_binary,
    write_path_binary,
    write_path_csv,
)
from oracles import oracle_bump_mass, oracle_holder, oracle_second_level


def _pooled_lag_one(hurst: float, n_seeds: int, grid: int = 1025) -> float:
    """Non-centred lag-one correlation pooled over independent samples.

    Increments have exactly zero mean, so skipping the sample mean avoids
    the slow N^{2H-2} bias of the centred estimator under long memory.
    """
    num = den = 0.0
    for seed in range(n_seeds):
        inc = np.diff(sample_fbm(hurst, grid, seed=10_000 + seed).values[:, 0])
        num += float(inc[:-1] @ inc[1:])
        den += float(inc[:-1] @ inc[:-1])
    return num / den


# ---------------------------------------------------------------------------
# sampled paths and fractional Brownian draws


def test_path_validation():
    with pytest.raises(ValueError):
        SampledPath(np.array([0.0, 0.5, 0.7]), np.zeros(3))  # non-uniform
    with pytest.raises(ValueError):
        SampledPath(np.array([0.0, -0.5, -1.0]), np.zeros(3))  # descending
    with pytest.raises(ValueError):
        SampledPath(np.array([0.0]), np.zeros(1))
    with pytest.raises(ValueError):
        SampledPath(np.linspace(-1, 0, 4), np.zeros((5, 1)))


def test_path_is_frozen():
    path = path_from_function(lambda t: t * t, 17)
    assert not path.values.flags.writeable
    assert not path.times.flags.writeable
    assert path.n_components == 1
    assert path.grid_size == 17
    assert path.span == (-1.0, 0.0)


def test_sample_fbm_metadata_and_determinism():
    one = sample_fbm(0.3, 257, n_components=2, seed=11)
    two = sample_fbm(0.3, 257, n_components=2, seed=11)
    other = sample_fbm(0.3, 257, n_components=2, seed=12)
    assert np.array_equal(one.values, two.values)
    assert not np.array_equal(one.values, other.values)
    assert one.values.shape == (257, 2)
    assert np.all(one.values[0] == 0.0)
    assert one.hurst == 0.3 and one.seed == 11
    assert one.span == (-1.0, 0.0)


def test_sample_fbm_validation():
    with pytest.raises(ValueError):
        sample_fbm(0.0, 64)
    with pytest.raises(ValueError):
        sample_fbm(1.0, 64)
    with pytest.raises(ValueError):
        sample_fbm(0.5, 1)
    with pytest.raises(ValueError):
        sample_fbm(0.5, MAX_GRID + 1)
    with pytest.raises(ValueError):
        sample_fbm(0.5, 64, n_components=0)


def test_fbm_increment_variance():
    # Var(B_{t+h} - B_t) = h^{2H}
    hurst = 0.7
    path = sample_fbm(hurst, 1025, n_components=64, seed=2)
    inc = np.diff(path.values, axis=0)
    ratio = float(np.mean(inc * inc)) / path.step ** (2 * hurst)
    assert abs(ratio - 1.0) < 0.05


def test_brownian_increments_uncorrelated():
    est = _pooled_lag_one(0.5, 100)
    assert fbm_lag_one_correlation(0.5) == 0.0
    assert abs(est) < 0.01


def test_rough_increments_positively_correlated():
    target = fbm_lag_one_correlation(0.75)
    assert abs(target - (2**0.5 - 1.0)) < 1e-15
    est = _pooled_lag_one(0.75, 100)
    assert abs(est - target) < 0.02


# ---------------------------------------------------------------------------
# level-two lift


def test_lift_linear_path():
    path = path_from_function(lambda t: t, 65)
    lift = lift_level2(path)
    for s, t in [(0, 64), (3, 40), (10, 11), (20, 20)]:
        gap = path.times[t] - path.times[s]
        assert lift.second(s, t)[0, 0] == pytest.approx(gap * gap / 2, abs=1e-15)


def test_lift_matches_direct_sum():
    lift = lift_level2(sample_fbm(0.4, 128, n_components=2, seed=3))
    path = lift.base
    rng = random.Random(7)
    for _ in range(25):
        s = rng.randrange(0, 127)
        t = rng.randrange(s, 128)
        got = lift.second(s, t)
        for j in range(2):
            for i in range(2):
                want = oracle_second_level(path.times, path.values, s, t, j, i)
                assert got[j, i] == pytest.approx(want, abs=1e-12)


def test_lift_antisymmetry():
    lift = lift_level2(sample_fbm(0.55, 256, n_components=3, seed=8))
    x = lift.base.values
    rng = random.Random(21)
    for _ in range(50):
        s = rng.randrange(0, 255)
        t = rng.randrange(s, 256)
        two = lift.second(s, t)
        dx = x[t] - x[s]
        assert np.allclose(two + two.T, np.outer(dx, dx), atol=1e-13)


def test_chen_identity_small_grid():
    lift = lift_level2(sample_fbm(0.35, 64, n_components=2, seed=5))
    x = lift.base.values
    for s in range(0, 64, 7):
        for u in range(s, 64, 5):
            for t in range(u, 64, 3):
                defect = (lift.second(s, t) - lift.second(s, u) - lift.second(u, t)
                          - np.outer(x[u] - x[s], x[t] - x[u]))
                assert np.max(np.abs(defect)) < 1e-13


def test_chen_identity_full_grid():
    lift = lift_level2(sample_fbm(0.5, MAX_GRID, n_components=2, seed=1))
    assert chen_residual(lift, samples=8192, seed=0) < 1e-12


def test_second_batch_matches_scalar():
    lift = lift_level2(sample_fbm(0.6, 100, n_components=2, seed=4))
    s = np.array([0, 10, 33])
    t = np.array([99, 50, 33])
    batch = lift.second_batch(s, t)
    for k in range(3):
        assert np.array_equal(batch[k], lift.second(int(s[k]), int(t[k])))


def test_pair_matrix():
    lift = lift_level2(sample_fbm(0.45, 64, n_components=2, seed=6))
    mat = lift.pair_matrix(0, 1)
    for s, t in [(0, 63), (5, 20), (13, 13)]:
        assert mat[s, t] == lift.second(s, t)[0, 1]
    big = lift_level2(sample_fbm(0.5, 2048, seed=0))
    with pytest.raises(ValueError):
        big.pair_matrix(0, 0)


def test_lift_shape_guard():
    path = sample_fbm(0.5, 32, seed=0)
    with pytest.raises(ValueError):
        BranchedLift2(path, np.zeros((32, 2, 2)))


# ---------------------------------------------------------------------------
# Holder norms


def test_holder_constant_is_zero():
    path = SampledPath(np.linspace(-1, 0, 33), np.full(33, 3.0))
    assert holder_norm(path, 0.5).value == 0.0


def test_holder_linear_unit_slope():
    path = path_from_function(lambda t: t, 129)
    est = holder_norm(path, 1.0)
    assert est.value == pytest.approx(1.0, rel=1e-12)
    assert est.window == (-1.0, 0.0)
    assert not est.resolution_limited


def test_holder_matches_brute_force():
    path = sample_fbm(0.6, 80, n_components=2, seed=5)
    est = holder_norm(path, 0.5)
    brute = oracle_holder(path.times, path.values, 0.5, 2 * path.step)
    assert est.value == pytest.approx(brute, rel=1e-12)


def test_holder_window_monotone():
    path = sample_fbm(0.4, 200, seed=13)
    full = holder_norm(path, 0.3).value
    rng = random.Random(99)
    for _ in range(100):
        a = rng.uniform(-1.0, -0.1)
        b = rng.uniform(a + 0.05, 0.0)
        try:
            sub = holder_norm(path, 0.3, interval=(a, b))
        except ValueError:
            continue  # window too narrow for the minimum gap
        assert sub.value <= full + 1e-12
        assert sub.window[0] >= a - 1e-9 and sub.window[1] <= b + 1e-9


def test_holder_exact_grid_scaling():
    # speeding up time by a power of two scales the norm exactly
    base = sample_fbm(0.7, 257, seed=9)
    scaled = SampledPath(0.25 * base.times, base.values)
    for gamma, factor in [(0.5, 2.0), (1.0, 4.0)]:
        a = holder_norm(base, gamma).value
        b = holder_norm(scaled, gamma).value
        assert b == factor * a


def test_holder_min_gap_clamp():
    path = sample_fbm(0.5, 64, seed=3)
    plain = holder_norm(path, 0.5)
    clamped = holder_norm(path, 0.5, min_gap=0.1 * path.step)
    assert clamped.resolution_limited
    assert clamped.value == plain.value
    wide = holder_norm(path, 0.5, min_gap=10 * path.step)
    assert not wide.resolution_limited
    assert wide.value <= plain.value


def test_holder_errors():
    path = sample_fbm(0.5, 64, seed=3)
    with pytest.raises(ValueError):
        holder_norm(path, 0.0)
    with pytest.raises(ValueError):
        holder_norm(path, 1.5)
    with pytest.raises(ValueError):
        holder_norm(path, 0.5, interval=(-0.5, -0.5))
    with pytest.raises(ValueError):
        # window holds a single grid point
        holder_norm(path, 0.5, interval=(-0.501 / 63, -0.499 / 63))


# ---------------------------------------------------------------------------
# test profile and field norm


def test_bump_profile_support_and_bounds():
    # supported in (-1, 0) x (-1, 1), every derivative of parabolic order
    # at most two bounded by one
    t = np.linspace(-1.3, 0.3, 401)
    x = np.linspace(-1.3, 1.3, 401)
    T, X = np.meshgrid(t, x, indexing="ij")
    vals = bump_profile(np.stack([T, X], axis=-1))
    outside = (T <= -1.0) | (T >= 0.0) | (np.abs(X) >= 1.0)
    assert np.all(vals[outside] == 0.0)
    assert np.max(vals) <= 1.0
    ht, hx = t[1] - t[0], x[1] - x[0]
    d_t = np.abs(np.gradient(vals, ht, axis=0))
    d_x = np.abs(np.gradient(vals, hx, axis=1))
    d_xx = np.abs(np.diff(vals, 2, axis=1)) / hx**2
    assert d_t.max() <= 1.0 + 1e-3
    assert d_x.max() <= 1.0 + 1e-3
    assert d_xx.max() <= 1.0 + 1e-3


def test_bump_mass_quadrature():
    t = np.linspace(-1, 0, 801)[:-1] + 0.5 / 800
    x = np.linspace(-1, 1, 801)[:-1] + 1.0 / 800
    T, X = np.meshgrid(t, x, indexing="ij")
    quad = float(np.sum(bump_profile(np.stack([T, X], axis=-1)))) * (1 / 800) * (2 / 800)
    assert quad == pytest.approx(bump_mass(2), rel=1e-6)
    assert bump_mass(2) == pytest.approx(oracle_bump_mass(2), rel=1e-15)


def test_besov_zero_field():
    est = besov_norm_field(np.zeros((65, 65)), (-1.0, -1.0), (1 / 64, 2 / 64),
                           -0.5, (-0.2, 0.0), 0.4)
    assert est.value == 0.0
    assert est.center == (-0.2, 0.0)
    assert est.scale == 0.4
    assert not est.resolution_limited


def test_besov_constant_field():
    # at regularity zero the pairing is scale free: |c| times the profile mass
    field = np.full((129, 129), 2.5)
    est = besov_norm_field(field, (-1.0, -1.0), (1 / 128, 2 / 128),
                           0.0, (-0.2, 0.0), 0.4)
    assert est.value == pytest.approx(2.5 * bump_mass(2), rel=1e-4)


def test_besov_rescaling_consistency():
    def xi(t, x):
        return np.sin(3 * t) * np.cos(2 * x) + t * x

    t = np.linspace(-1, 0, 257)
    x = np.linspace(-1, 1, 257)
    T, X = np.meshgrid(t, x, indexing="ij")
    spacing = (t[1] - t[0], x[1] - x[0])
    beta, lam, h = -0.5, 0.5, 0.5
    z = (-0.1, 0.1)
    probe = (-0.05, 0.2)
    # left: the composed field sampled on its own copy of the domain
    comp = xi(z[0] + lam**2 * T, z[1] + lam * X)
    left = besov_norm_field(comp, (-1.0, -1.0), spacing, beta, probe, h)
    # right: the original field around the mapped base point at scale lam*h
    mapped = (z[0] + lam**2 * probe[0], z[1] + lam * probe[1])
    right = besov_norm_field(xi(T, X), (-1.0, -1.0), spacing, beta, mapped, lam * h)
    assert left.value == pytest.approx(lam**beta * right.value, rel=0.02)


def test_besov_interpolation_bound():
    rng = random.Random(20260816)
    t = np.linspace(-1, 0, 129)
    x = np.linspace(-1, 1, 129)
    T, X = np.meshgrid(t, x, indexing="ij")
    spacing = (t[1] - t[0], x[1] - x[0])
    for _ in range(20):
        a, b = rng.uniform(-4, 4), rng.uniform(1, 5)
        field = np.sin(b * T + a) * np.cos(a * X) + a * T * X
        beta = rng.uniform(-1.5, -0.2)
        gamma = rng.uniform(beta, 0.0)
        h = rng.uniform(0.3, 0.7)
        z = (rng.uniform(-1 + h * h, 0.0), rng.uniform(-1 + h, 1 - h))
        low = besov_norm_field(field, (-1.0, -1.0), spacing, beta, z, h)
        high = besov_norm_field(field, (-1.0, -1.0), spacing, gamma, z, h)
        assert low.value <= h ** (gamma - beta) * high.value * (1 + 1e-12)


def test_besov_resolution_flag():
    field = np.full((65, 65), 1.0)
    geom = ((-1.0, -1.0), (1 / 64, 2 / 64))
    plain = besov_norm_field(field, *geom, 0.0, (-0.2, 0.0), 0.4)
    clamped = besov_norm_field(field, *geom, 0.0, (-0.2, 0.0), 0.4, min_scale=1e-4)
    assert not plain.resolution_limited
    assert clamped.resolution_limited
    assert clamped.value == plain.value
    # outer scale below the grid floor still evaluates, but is flagged
    tiny = besov_norm_field(field, *geom, 0.0, (-0.2, 0.0), 0.05)
    assert tiny.resolution_limited


def test_besov_validation():
    field = np.zeros((65, 65))
    geom = ((-1.0, -1.0), (1 / 64, 2 / 64))
    with pytest.raises(ValueError):
        besov_norm_field(field, *geom, -0.5, (-0.9, 0.0), 0.5)  # ball exits in time
    with pytest.raises(ValueError):
        besov_norm_field(field, *geom, -0.5, (-0.2, 0.9), 0.5)  # ball exits in space
    with pytest.raises(ValueError):
        besov_norm_field(field, *geom, -0.5, (-0.2, 0.0), -0.1)
    with pytest.raises(ValueError):
        besov_norm_field(field, (-1.0,), geom[1], -0.5, (-0.2, 0.0), 0.4)


# ---------------------------------------------------------------------------
# serialization


def test_path_binary_roundtrip(tmp_path):
    path = sample_fbm(0.65, 200, n_components=3, seed=42)
    dest = tmp_path / "path.bin"
    write_path_binary(path, dest)
    back = read_path_binary(dest)
    assert np.array_equal(back.times, path.times)
    assert np.array_equal(back.values, path.values)
    assert back.hurst == path.hurst
    assert back.seed == path.seed


def test_path_binary_buffer_and_plain_metadata():
    path = path_from_function(lambda t: t**3, 33)
    buf = io.BytesIO()
    write_path_binary(path, buf)
    back = read_path_binary(io.BytesIO(buf.getvalue()))
    assert np.array_equal(back.values, path.values)
    assert back.hurst is None and back.seed is None


def test_lift_binary_roundtrip(tmp_path):
    lift = lift_level2(sample_fbm(0.5, 100, n_components=2, seed=7))
    dest = tmp_path / "lift.bin"
    write_lift_binary(lift, dest)
    back = read_lift_binary(dest)
    assert np.array_equal(back.base.values, lift.base.values)
    assert np.array_equal(back.integrals, lift.integrals)
    assert np.array_equal(back.second(10, 80), lift.second(10, 80))


def test_binary_magic_mismatch(tmp_path):
    path = path_from_function(lambda t: t, 9)
    dest = tmp_path / "path.bin"
    write_path_binary(path, dest)
    with pytest.raises(ValueError):
        read_lift_binary(dest)


def test_path_csv_roundtrip(tmp_path):
    path = sample_fbm(0.5, 50, n_components=2, seed=0)
    dest = tmp_path / "path.csv"
    write_path_csv(path, dest)
    back = read_path_csv(dest)
    assert np.array_equal(back.times, path.times)
    assert np.array_equal(back.values, path.values)
