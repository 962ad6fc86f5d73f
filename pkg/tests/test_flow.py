import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hieranderson.errors import ConfigError, LargeFieldSingularity, LevelError
from hieranderson.flow import (Couplings, LevelCoefficients, bare_mass,
                               coefficients_closed_form, coefficients_step,
                               psi_step, run_flow, solve_remainder)
from hieranderson.noise import EnhancedNoise, NoiseConfig
from hieranderson.operators import assemble_dense_operator, coarsen, fluct

L = 3


def test_spot_values():
    c = Couplings(0.5, 1.0)
    k = coefficients_closed_form(c, 2, L)
    assert k.lam == pytest.approx(1 / 18, rel=1e-14)
    assert k.mu == pytest.approx(5 / 729, rel=1e-14)
    assert k.gamma == pytest.approx(1 / 9, rel=1e-14)
    k1 = coefficients_step(k, L)
    assert (k1.n, k1.lam, k1.mu, k1.gamma) == pytest.approx((1, 1 / 6, 7 / 81, 1 / 3),
                                                            rel=1e-14)
    assert bare_mass(c, 4, L) == pytest.approx(1 / 9, rel=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.one_of(st.just(0.0), st.floats(1e-6, 1.0)), st.floats(1.0, 10.0),
       st.integers(1, 8),
       st.sampled_from([3, 5, 7]))
def test_recursion_matches_closed_form(g, r, N, Ls):
    c = Couplings(g, r)
    k = coefficients_closed_form(c, N, Ls)
    for n in range(N - 1, -1, -1):
        k = coefficients_step(k, Ls)
        ref = coefficients_closed_form(c, n, Ls)
        assert k.lam == pytest.approx(ref.lam, rel=1e-14, abs=0)
        assert k.gamma == pytest.approx(ref.gamma, rel=1e-14)
        assert k.mu == pytest.approx(ref.mu, rel=1e-12, abs=1e-14 * abs(r))


def test_level_zero_coefficients_are_the_couplings():
    c = Couplings(0.3, 2.0)
    k = coefficients_closed_form(c, 0, L)
    assert (k.lam, k.mu, k.gamma) == (0.3, 2.0, 1.0)
    with pytest.raises(LevelError):
        coefficients_step(k, L)


def test_coupling_validation():
    with pytest.raises(ConfigError):
        Couplings(1.5, 1.0)
    with pytest.raises(ConfigError):
        Couplings(0.5, 0.5)


def _dense_remainder(xi, ch, psi, k, n):
    """Solve the remainder equation on the whole lattice with dense matrices."""
    P = assemble_dense_operator("fluct", n, L).matrix
    x, c, p = xi.ravel(), ch.ravel(), psi.ravel()
    lam, mu = k.lam, k.mu
    px = P @ x
    rhs = P @ (c + x * px + lam * p + lam * c * px + lam ** 2 * p * px) \
        + (mu / lam) * px
    s = lam * x + lam ** 2 * c + lam ** 3 * p
    A = np.eye(len(x)) * (1 - mu) - P * s[None, :]
    return np.linalg.solve(A, rhs).reshape(xi.shape)


@pytest.mark.parametrize("method", ["auto", "dense", "iterate"])
def test_remainder_matches_full_lattice_solve(method):
    noise = EnhancedNoise.sample(NoiseConfig(seed=5, Nmax=3))
    c = Couplings(0.4, 1.0)
    rng = np.random.default_rng(0)
    for n in (1, 2, 3):
        k = coefficients_closed_form(c, n, L)
        psi = rng.standard_normal(noise.xi[n].shape)
        ch = noise.chaos(3)[n]
        R = solve_remainder(noise.xi[n], ch, psi, k, L, method=method)
        ref = _dense_remainder(noise.xi[n], ch, psi, k, n)
        assert np.max(np.abs(R - ref)) <= 1e-11 * (1 + np.abs(ref).max())


def test_remainder_zero_coupling():
    xi = np.random.default_rng(0).standard_normal((9, 9))
    k = LevelCoefficients(2, 0.0, 0.01, 1.0)
    assert np.array_equal(solve_remainder(xi, xi, xi, k, L), np.zeros_like(xi))
    assert np.array_equal(psi_step(xi, xi, xi, xi, k, L), np.zeros((3, 3)))


def test_psi_step_at_zero_noise():
    psi = np.random.default_rng(2).standard_normal((9, 9))
    z = np.zeros_like(psi)
    k = LevelCoefficients(2, 0.05, 0.01, 1.0)
    out = psi_step(psi, z, z, z, k, L)
    assert np.max(np.abs(out - coarsen(psi, L) / 3.0)) <= 1e-15


def test_flow_trajectory_shapes_and_zero_noise_strength():
    noise = EnhancedNoise.sample(NoiseConfig(seed=1, Nmax=3))
    fl = run_flow(noise, Couplings(0.0, 1.0), 3)
    assert all(np.array_equal(p, np.zeros_like(p)) for p in fl.psi)
    assert fl.remainder[0] is None
    fl = run_flow(noise, Couplings(0.2, 1.0), 3)
    assert [p.shape for p in fl.psi] == [(1, 1), (3, 3), (9, 9), (27, 27)]
    assert np.array_equal(fl.psi[3], np.zeros((27, 27)))
    # remainders are block fluctuations
    for n in (1, 2, 3):
        assert np.max(np.abs(coarsen(fl.remainder[n], L))) <= 1e-13


def test_flow_batched_equals_single():
    noise = EnhancedNoise.sample(NoiseConfig(seed=2, Nmax=2), samples=3)
    fl = run_flow(noise, Couplings(0.3, 1.0), 2)
    for i in range(3):
        one = run_flow(noise.select(i), Couplings(0.3, 1.0), 2)
        for n in range(3):
            assert np.allclose(one.psi[n], fl.psi[n][i], rtol=0, atol=1e-14)


def test_flow_singular_block_is_reported():
    c = Couplings(0.5, 1.0)
    k = coefficients_closed_form(c, 1, L)
    # chaos vanishes at the cutoff level, so this makes s = 1 - mu on a block
    base = np.full((1, 3, 3), (1 - k.mu) / k.lam)
    noise = EnhancedNoise(base, L)
    with pytest.raises(LargeFieldSingularity) as err:
        run_flow(noise, c, 1)
    assert err.value.level == 1
    assert err.value.block == (0, 0)
    assert err.value.sample == 0


def test_effective_potential_definition():
    noise = EnhancedNoise.sample(NoiseConfig(seed=3, Nmax=2))
    fl = run_flow(noise, Couplings(0.3, 1.5), 2)
    k = fl.coeffs[1]
    expect = k.lam * noise.xi[1] + k.lam ** 2 * fl.chaos[1] \
        + k.lam ** 3 * fl.psi[1] + k.mu
    assert np.array_equal(fl.effective_potential(1), expect)
    # fluctuation part of the potential seen by the next step
    assert np.allclose(fluct(fl.effective_potential(2), L),
                       fluct(fl.coeffs[2].lam * noise.xi[2], L))
