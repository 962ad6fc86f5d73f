import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hieranderson.errors import LevelError
from hieranderson.noise import (EnhancedNoise, NoiseConfig, chaos_direct,
                                chaos_recursive, derive_xi_trajectory,
                                dump_field, load_field, sample_base,
                                wick_constant, wick_pair_product)
from hieranderson.operators import coarsen, fluct
from hieranderson.rng import standard_normals

L = 3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 500), st.integers(1, 64), st.integers(0, 100))
def test_stream_is_position_addressed(offset, count, seed):
    full = standard_normals(seed, "base", offset + count)
    part = standard_normals(seed, "base", count, offset=offset)
    assert np.array_equal(full[offset:], part)


def test_streams_differ_by_seed_and_label():
    a = standard_normals(1, "base", 100)
    assert not np.array_equal(a, standard_normals(2, "base", 100))
    assert not np.array_equal(a, standard_normals(1, "other", 100))
    assert np.array_equal(a, standard_normals(1, "base", 100))


def test_normal_moments():
    z = standard_normals(5, "base", 400_000)
    assert abs(z.mean()) < 5 * (1 / np.sqrt(4e5))
    assert abs(z.var() - 1.0) < 5 * np.sqrt(2 / 4e5)
    assert abs(np.mean(z ** 4) - 3.0) < 5 * np.sqrt(96 / 4e5)


def test_batch_matches_single_samples():
    cfg = NoiseConfig(seed=9, Nmax=2)
    batch = sample_base(cfg, samples=4, start=3)
    for i in range(4):
        assert np.array_equal(batch[i], sample_base(cfg, start=3 + i))


def test_trajectory_scaling_and_cutoff_independence():
    cfg = NoiseConfig(seed=3, Nmax=4)
    base = sample_base(cfg)
    full = derive_xi_trajectory(base, L)
    for N in range(5):
        sub = derive_xi_trajectory(base, L, N=N)
        for n in range(N + 1):
            assert np.array_equal(sub[n], full[n])
        # one-shot coarsening gives the same field up to rounding
        k = 4 - N
        shot = base
        for _ in range(k):
            shot = coarsen(shot, L)
        assert np.max(np.abs(L ** k * shot - full[N])) <= 1e-12
    with pytest.raises(LevelError):
        derive_xi_trajectory(base, L, N=5)


def test_wick_constants():
    assert wick_constant(1, L) == pytest.approx(8 / 9, abs=1e-15)
    assert wick_constant(2, L) == pytest.approx(16 / 9, abs=1e-15)
    assert wick_constant(0, L) == 0.0
    # in d = 1 the sum grows geometrically
    assert wick_constant(2, L, 1) == pytest.approx((2 / 3) * (1 + 3))


def test_wick_product_on_constant_noise():
    # P1 of a constant vanishes, leaving only the centering
    xi = np.full((9, 9), 2.0)
    assert np.allclose(wick_pair_product(xi, L), -8 / 9)


def test_wick_product_formula():
    xi = np.random.default_rng(0).standard_normal((9, 9))
    expect = xi * fluct(xi, L) - 8 / 9
    assert np.array_equal(wick_pair_product(xi, L), expect)


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_chaos_direct_matches_recursive(N):
    noise = EnhancedNoise.sample(NoiseConfig(seed=N, Nmax=N), samples=3)
    rec = noise.chaos(N)
    assert np.array_equal(rec[N], np.zeros_like(rec[N]))
    for n in range(N + 1):
        assert np.max(np.abs(chaos_direct(noise.xi[N], n, L) - rec[n])) <= 1e-9


def test_chaos_single_step_by_hand():
    xi = np.random.default_rng(1).standard_normal((9, 9))
    traj = [3.0 * coarsen(xi, L), xi]
    ch = chaos_recursive(traj, L)
    expect = coarsen(xi * fluct(xi, L) - 8 / 9, L)
    assert np.max(np.abs(ch[0] - expect)) <= 1e-15


def test_enhanced_noise_accessors():
    noise = EnhancedNoise.sample(NoiseConfig(seed=0, Nmax=3))
    assert noise.xi_at(3, 1) is noise.xi[1]
    assert noise.xi_at(1, 1) is noise.xi[1]
    with pytest.raises(LevelError):
        noise.xi_at(1, 2)
    with pytest.raises(LevelError):
        noise.chaos(4)
    assert noise.chaos_at(2, 2).shape == (9, 9)
    assert np.array_equal(noise.chaos_at(2, 2), np.zeros((9, 9)))


@pytest.mark.parametrize("ext", ["csv", "npz"])
def test_field_dump_roundtrip(tmp_path, ext):
    f = sample_base(NoiseConfig(seed=4, Nmax=2))
    path = tmp_path / f"base.{ext}"
    dump_field(path, f, L, seed=4)
    g, header = load_field(path)
    assert np.array_equal(f, g)
    assert header == {"L": 3, "d": 2, "n": 2, "seed": 4, "label": "base"}
