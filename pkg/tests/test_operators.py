import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hieranderson.errors import LevelError, PreconditionError
from hieranderson.operators import (apply_fluct_propagator,
                                    apply_inverse_laplacian,
                                    apply_neg_laplacian,
                                    assemble_dense_operator, coarsen,
                                    fluct, fluct_level, from_blocks,
                                    mean_total, refine, to_blocks)

L = 3
rng = np.random.default_rng(12)


def rand(n, batch=(), L=L, d=2):
    return rng.standard_normal(batch + (L ** n,) * d)


def zero_mean(f, d=2):
    return f - mean_total(f, d)[(...,) + (None,) * d]


def delta(n, L=L):
    f = np.zeros((L ** n,) * 2)
    f[(L ** n) // 2, (L ** n) // 2] = 1.0
    return f


def test_coarsen_constant_and_values():
    assert np.allclose(coarsen(np.full((9, 9), 2.5), L), 2.5)
    f = np.arange(9.0).reshape(3, 3)
    assert coarsen(f, L).shape == (1, 1)
    assert coarsen(f, L)[0, 0] == pytest.approx(4.0)
    with pytest.raises(LevelError):
        coarsen(np.ones((1, 1)), L)


def test_fluct_of_delta():
    p = fluct(delta(1), L)
    assert p[1, 1] == pytest.approx(8 / 9, abs=1e-15)
    assert p[0, 0] == pytest.approx(-1 / 9, abs=1e-15)
    assert np.sum(p) == pytest.approx(0.0, abs=1e-15)


def test_refine_blocks_are_constant():
    w = rand(1)
    f = refine(w, L)
    assert f.shape == (9, 9)
    assert np.array_equal(f[3:6, 6:9], np.full((3, 3), w[1, 2]))


@pytest.mark.parametrize("n", [1, 2, 3])
def test_basic_identities(n):
    f = rand(n, (4,))
    w = rand(n - 1, (4,))
    assert np.max(np.abs(coarsen(refine(w, L), L) - w)) <= 1e-12
    pf = fluct(f, L)
    assert np.max(np.abs(fluct(pf, L) - pf)) <= 1e-12
    assert np.max(np.abs(coarsen(pf, L))) <= 1e-12


@pytest.mark.parametrize("n", [1, 2, 3])
def test_projector_decomposition(n):
    f = rand(n)
    parts = [fluct_level(f, k, L) for k in range(1, n + 1)]
    mean = np.full_like(f, mean_total(f))
    assert np.max(np.abs(sum(parts) + mean - f)) <= 1e-12
    for i in range(n):
        for j in range(i + 1, n):
            assert abs(np.sum(parts[i] * parts[j])) <= 1e-10


def test_blocks_roundtrip_and_layout():
    f = np.arange(81.0).reshape(9, 9)
    b = to_blocks(f, L)
    assert b.shape == (9, 9)
    # coarse point 0 is the top-left block, members row-major
    assert np.array_equal(b[0], f[:3, :3].ravel())
    assert np.array_equal(b[5], f[3:6, 6:9].ravel())
    assert np.array_equal(from_blocks(b, L), f)
    g = rand(2, (2, 3))
    assert np.array_equal(from_blocks(to_blocks(g, L), L), g)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_recursive_matches_block_membership_oracle(n):
    f = rand(n, (3,))
    f0 = zero_mean(f)
    lap = assemble_dense_operator("neg_laplacian", n, L)
    inv = assemble_dense_operator("inverse", n, L)
    assert np.max(np.abs(lap(f) - apply_neg_laplacian(f, L))) <= 1e-12
    assert np.max(np.abs(inv(f0) - apply_inverse_laplacian(f0, L))) <= 1e-12
    for k in range(n + 1):
        prop = assemble_dense_operator("propagator", n, L, depth=k)
        assert np.max(np.abs(prop(f) - apply_fluct_propagator(f, k, L))) <= 1e-12
    assert np.max(np.abs(assemble_dense_operator("coarsen", n, L)(f)
                         - coarsen(f, L))) <= 1e-12
    w = rand(n - 1, (3,))
    assert np.max(np.abs(assemble_dense_operator("refine", n, L)(w)
                         - refine(w, L))) <= 1e-12
    assert np.max(np.abs(assemble_dense_operator("fluct", n, L)(f)
                         - fluct(f, L))) <= 1e-12


def test_dense_laplacian_spectrum():
    # eigenvalues L**(-2(k-1)) on level-k fluctuations and 0 on constants
    m = assemble_dense_operator("neg_laplacian", 2, L).matrix
    ev = np.sort(np.linalg.eigvalsh(m))
    expect = np.sort([0.0] + [1 / 9] * 8 + [1.0] * 72)
    assert np.allclose(ev, expect, atol=1e-12)


def test_dense_cap():
    with pytest.raises(ValueError):
        assemble_dense_operator("neg_laplacian", 4, L)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_inverse_identities(n):
    g = zero_mean(rand(n, (5,)))
    h = apply_inverse_laplacian(g, L)
    assert np.max(np.abs(apply_neg_laplacian(h, L) - g)) <= 1e-12
    assert np.max(np.abs(apply_inverse_laplacian(apply_neg_laplacian(g, L), L)
                         - g)) <= 1e-12
    assert np.max(np.abs(mean_total(h))) <= 1e-12
    assert np.max(np.abs(fluct(h, L) - fluct(g, L))) <= 1e-12
    assert np.max(np.abs(apply_fluct_propagator(g, n, L) - h)) <= 1e-12


def test_inverse_rejects_nonzero_mean():
    f = rand(2) + 1.0
    with pytest.raises(PreconditionError, match="mean"):
        apply_inverse_laplacian(f, L)


def test_propagator_depth_bounds():
    f = rand(2)
    assert np.array_equal(apply_fluct_propagator(f, 0, L), np.zeros_like(f))
    assert np.max(np.abs(apply_fluct_propagator(f, 1, L) - fluct(f, L))) <= 1e-15
    with pytest.raises(ValueError):
        apply_fluct_propagator(f, 3, L)


def test_laplacian_of_delta_small_lattice():
    # one level: -Delta_H = P1
    d = delta(1)
    assert np.allclose(apply_neg_laplacian(d, L), fluct(d, L), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (9, 9),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_laplacian_self_adjoint_and_nonnegative(f):
    g = np.cos(np.arange(81.0)).reshape(9, 9)
    lf = apply_neg_laplacian(f, L)
    lg = apply_neg_laplacian(g, L)
    scale = 1.0 + np.abs(f).max()
    assert abs(np.sum(lf * g) - np.sum(f * lg)) <= 1e-10 * scale * 81
    assert np.sum(f * lf) >= -1e-9 * scale ** 2


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([3, 5]), st.integers(1, 2), st.integers(0, 2 ** 31))
def test_identities_other_scales_and_dims(Ls, n, seed):
    r = np.random.default_rng(seed)
    for d in (1, 2, 3):
        if Ls ** (n * d) > 4000:
            continue
        f = r.standard_normal((Ls ** n,) * d)
        f0 = f - f.mean()
        back = apply_inverse_laplacian(apply_neg_laplacian(f0, Ls, d), Ls, d)
        assert np.max(np.abs(back - f0)) <= 1e-11
        assert np.max(np.abs(coarsen(refine(f, Ls, d), Ls, d) - f)) <= 1e-12
