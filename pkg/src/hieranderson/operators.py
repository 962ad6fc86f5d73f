"""Block-averaging operators and the hierarchical Laplacian.

All functions act on the trailing ``d`` axes of an array and broadcast over
any leading batch axes. With ``coarsen`` the block mean and ``refine`` the
constant extension, the level-``k`` fluctuation projector on a level-``n``
lattice is

    P_k = refine^(k-1) (I - refine coarsen) coarsen^(k-1),

and the hierarchical Laplacian is ``-Delta_H = sum_k L**(-2(k-1)) P_k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LevelError, PreconditionError
from .lattice import LatticeSpec, block_center, coords_of, index_of, level_of

__all__ = [
    "coarsen",
    "refine",
    "fluct",
    "fluct_level",
    "mean_total",
    "to_blocks",
    "from_blocks",
    "apply_neg_laplacian",
    "apply_inverse_laplacian",
    "apply_fluct_propagator",
    "DenseOperator",
    "assemble_dense_operator",
    "MEAN_ZERO_RTOL",
]

MEAN_ZERO_RTOL = 1e-10


def _split_shape(f, L, d):
    n = level_of(f.shape, L, d)
    if n < 1:
        raise LevelError("operation needs a field of level >= 1")
    m = L ** (n - 1)
    batch = f.shape[:-d]
    inter = batch + (m, L) * d
    return batch, m, inter


def coarsen(f, L: int, d: int = 2) -> np.ndarray:
    """Block mean over level-1 blocks (level ``n`` to ``n - 1``)."""
    f = np.asarray(f, dtype=float)
    batch, m, inter = _split_shape(f, L, d)
    axes = tuple(len(batch) + 2 * i + 1 for i in range(d))
    return f.reshape(inter).mean(axis=axes)


def refine(w, L: int, d: int = 2) -> np.ndarray:
    """Constant extension of each value onto its block (``n - 1`` to ``n``)."""
    w = np.asarray(w, dtype=float)
    level_of(w.shape, L, d)
    for ax in range(w.ndim - d, w.ndim):
        w = np.repeat(w, L, axis=ax)
    return w


def fluct(f, L: int, d: int = 2) -> np.ndarray:
    """Within-block fluctuation ``f - refine(coarsen(f))``."""
    f = np.asarray(f, dtype=float)
    return f - refine(coarsen(f, L, d), L, d)


def fluct_level(f, k: int, L: int, d: int = 2) -> np.ndarray:
    """Level-``k`` fluctuation ``P_k f`` broadcast back to the input level."""
    f = np.asarray(f, dtype=float)
    n = level_of(f.shape, L, d)
    if not 1 <= k <= n:
        raise LevelError(f"fluctuation level {k} not in [1, {n}]")
    c = f
    for _ in range(k - 1):
        c = coarsen(c, L, d)
    c = fluct(c, L, d)
    for _ in range(k - 1):
        c = refine(c, L, d)
    return c


def mean_total(f, d: int = 2):
    """Mean over the whole lattice (per batch element)."""
    f = np.asarray(f, dtype=float)
    return f.mean(axis=tuple(range(f.ndim - d, f.ndim)))


def to_blocks(f, L: int, d: int = 2) -> np.ndarray:
    """Regroup a level-``n`` field as ``(..., L**((n-1) d), L**d)`` blocks.

    Blocks are ordered by the flat index of the coarse point and the members
    of each block by their row-major offset inside the block.
    """
    f = np.asarray(f)
    batch, m, inter = _split_shape(f, L, d)
    nb = len(batch)
    perm = (tuple(range(nb)) + tuple(nb + 2 * i for i in range(d))
            + tuple(nb + 2 * i + 1 for i in range(d)))
    return f.reshape(inter).transpose(perm).reshape(batch + (m ** d, L ** d))


def from_blocks(b, L: int, d: int = 2) -> np.ndarray:
    """Inverse of :func:`to_blocks`."""
    b = np.asarray(b)
    batch = b.shape[:-2]
    m = int(round(b.shape[-2] ** (1.0 / d)))
    nb = len(batch)
    x = b.reshape(batch + (m,) * d + (L,) * d)
    perm = tuple(range(nb))
    for i in range(d):
        perm += (nb + i, nb + d + i)
    return x.transpose(perm).reshape(batch + (m * L,) * d)


def apply_neg_laplacian(f, L: int, d: int = 2) -> np.ndarray:
    """Hierarchical Laplacian ``-Delta_H f``."""
    f = np.asarray(f, dtype=float)
    if level_of(f.shape, L, d) == 0:
        return np.zeros_like(f)
    c = coarsen(f, L, d)
    inner = apply_neg_laplacian(c, L, d)
    return f - refine(c - inner / L**2, L, d)


def _check_mean_zero(g, d, rtol):
    mean = np.abs(mean_total(g, d))
    scale = np.abs(g).reshape(g.shape[:g.ndim - d] + (-1,)).max(axis=-1)
    bad = mean > rtol * scale
    if np.any(bad):
        worst = float(np.max(mean))
        raise PreconditionError(
            f"input must have zero mean; measured |mean| = {worst:.3g}")


def apply_inverse_laplacian(g, L: int, d: int = 2,
                            rtol: float = MEAN_ZERO_RTOL) -> np.ndarray:
    """Inverse of ``-Delta_H`` on mean-zero fields.

    Parameters
    ----------
    g : ndarray
        Field with zero mean up to ``rtol * max|g|``.
    rtol : float
        Relative tolerance for the mean-zero precondition.

    Returns
    -------
    ndarray
        ``sum_k L**(2(k-1)) P_k g``, which has zero mean.
    """
    g = np.asarray(g, dtype=float)
    _check_mean_zero(g, d, rtol)
    return _inverse(g, L, d)


def _inverse(g, L, d):
    if level_of(g.shape, L, d) == 0:
        return np.zeros_like(g)
    c = coarsen(g, L, d)
    return g - refine(c - L**2 * _inverse(c, L, d), L, d)


def apply_fluct_propagator(g, depth: int, L: int, d: int = 2) -> np.ndarray:
    """Truncated propagator ``Gamma_depth g = sum_{j<=depth} L**(2(j-1)) P_j g``."""
    g = np.asarray(g, dtype=float)
    n = level_of(g.shape, L, d)
    if not 0 <= depth <= n:
        raise ValueError(f"depth {depth} not in [0, {n}]")
    if depth == 0:
        return np.zeros_like(g)
    c = coarsen(g, L, d)
    return g - refine(c - L**2 * apply_fluct_propagator(c, depth - 1, L, d),
                      L, d)


@dataclass(frozen=True)
class DenseOperator:
    """Explicit matrix of a lattice operator acting on flat-index vectors."""

    kind: str
    n: int
    L: int
    d: int
    matrix: np.ndarray

    def __call__(self, f):
        f = np.asarray(f, dtype=float)
        out = f.reshape(f.shape[:f.ndim - self.d] + (-1,)) @ self.matrix.T
        side = int(round(out.shape[-1] ** (1.0 / self.d)))
        return out.reshape(out.shape[:-1] + (side,) * self.d)


def _block_ids(spec: LatticeSpec, k: int) -> np.ndarray:
    """Level-``k`` block label of every flat index, from coordinates."""
    ids = np.empty(spec.size, dtype=np.int64)
    for i in range(spec.size):
        p = coords_of(spec, i)
        s = spec
        for _ in range(k):
            c = block_center(s, p)
            p = tuple(x // spec.L for x in c)
            s = s.coarser()
        ids[i] = index_of(s, p)
    return ids


def _averaging_matrices(spec: LatticeSpec) -> list:
    """Broadcast block-average matrices ``Q_0 = I, Q_1, ..., Q_n``."""
    qs = [np.eye(spec.size)]
    for k in range(1, spec.n + 1):
        ids = _block_ids(spec, k)
        same = ids[:, None] == ids[None, :]
        qs.append(same / float(spec.L ** (k * spec.d)))
    return qs


def assemble_dense_operator(kind: str, n: int, L: int, d: int = 2,
                            depth: int | None = None,
                            cap: int = 1024) -> DenseOperator:
    """Build an operator as an explicit matrix from block membership.

    This is an independent construction (coordinate arithmetic, no reshape
    tricks) used to cross-check the recursive operators.

    Parameters
    ----------
    kind : {"neg_laplacian", "inverse", "propagator", "coarsen", "refine",
            "fluct"}
        Operator to assemble. ``"inverse"`` is the pseudo-inverse of
        ``-Delta_H`` (zero on constants).
    n : int
        Level of the lattice the operator acts on (for ``"refine"``, the
        level of the result).
    depth : int, optional
        Truncation depth for ``"propagator"``.
    cap : int
        Refuse to build matrices with more than ``cap`` rows or columns.
    """
    spec = LatticeSpec(L, n, d)
    if spec.size > cap:
        raise ValueError(f"dense operator of size {spec.size} exceeds cap {cap}")
    if kind in ("coarsen", "refine"):
        if n < 1:
            raise LevelError("coarsen/refine need level >= 1")
        ids = _block_ids(spec, 1)
        c = np.zeros((spec.L ** ((n - 1) * d), spec.size))
        c[ids, np.arange(spec.size)] = 1.0 / L**d
        mat = c if kind == "coarsen" else c.T * L**d
        return DenseOperator(kind, n, L, d, mat)
    qs = _averaging_matrices(spec)
    ps = [qs[k - 1] - qs[k] for k in range(1, n + 1)]
    if kind == "neg_laplacian":
        mat = sum((L ** (-2.0 * k) * p for k, p in enumerate(ps)),
                  np.zeros((spec.size, spec.size)))
    elif kind == "inverse":
        mat = sum((L ** (2.0 * k) * p for k, p in enumerate(ps)),
                  np.zeros((spec.size, spec.size)))
    elif kind == "propagator":
        if depth is None or not 0 <= depth <= n:
            raise ValueError(f"propagator depth must be in [0, {n}]")
        mat = sum((L ** (2.0 * k) * p for k, p in enumerate(ps[:depth])),
                  np.zeros((spec.size, spec.size)))
    elif kind == "fluct":
        if n < 1:
            raise LevelError("fluct needs level >= 1")
        mat = ps[0]
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    return DenseOperator(kind, n, L, d, mat)
