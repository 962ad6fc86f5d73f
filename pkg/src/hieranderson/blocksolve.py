"""Batched solves of the per-block systems ``(I - P1 diag(s)) x = y``.

On one block of ``M = L**d`` points the fluctuation projector is
``P1 = I - ones/M``, so the block matrix is

    A = diag(a) + (1/M) 1 b^T,    a = c - s,  b = s

for a scalar shift ``c``: a diagonal plus a rank-one term. The default
method inverts it exactly with the Sherman-Morrison formula in O(M) work
per block; blocks whose cheap condition bound is large are re-solved
with dense LU and their exact condition number. ``method="dense"`` always
builds the full matrices.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["BlockSolve", "solve_diag_rank1", "block_matrices"]

COND_THRESHOLD = 1e12
_DENSE_RECHECK = 1e6


@dataclass
class BlockSolve:
    """Solution of a batch of block systems.

    Attributes
    ----------
    x : ndarray
        Solutions, same shape as the right-hand side.
    condition : ndarray
        Per-block condition estimate (infinity norm). For blocks solved by
        Sherman-Morrison this is an upper bound.
    """

    x: np.ndarray
    condition: np.ndarray


def block_matrices(a, b) -> np.ndarray:
    """Dense ``diag(a) + (1/M) 1 b^T`` for every block."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    M = a.shape[-1]
    mats = np.broadcast_to(b[..., None, :] / M, a.shape + (M,)).copy()
    idx = np.arange(M)
    mats[..., idx, idx] += a
    return mats


def _dense(a, b, y):
    mats = block_matrices(a, b)
    cond = np.linalg.cond(mats, p=np.inf)
    cond = np.where(np.isfinite(cond), cond, np.inf)
    ok = cond < np.inf
    x = np.full_like(y, np.nan)
    if np.any(ok):
        x[ok] = np.linalg.solve(mats[ok], y[ok][..., None])[..., 0]
    return x, cond


def solve_diag_rank1(a, b, y, method: str = "auto") -> BlockSolve:
    """Solve ``(diag(a) + (1/M) 1 b^T) x = y`` over the last axis.

    Parameters
    ----------
    a, b, y : ndarray
        Arrays of shape ``(..., M)``.
    method : {"auto", "dense"}
        ``"auto"`` uses Sherman-Morrison with a dense fallback for blocks
        whose condition bound exceeds an internal recheck level.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    y = np.asarray(y, dtype=float)
    if method == "dense":
        x, cond = _dense(a, b, y)
        return BlockSolve(x, cond)
    if method != "auto":
        raise ValueError(f"unknown block solve method {method!r}")
    M = a.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv_a = 1.0 / a
        ba = b * inv_a
        denom = M + ba.sum(axis=-1)
        ya = y * inv_a
        x = ya - inv_a * ((b * ya).sum(axis=-1) / denom)[..., None]
        max_inv = np.abs(inv_a).max(axis=-1)
        norm_a = np.abs(a).max(axis=-1) + np.abs(b).sum(axis=-1) / M
        norm_inv = max_inv * (1.0 + np.abs(ba).sum(axis=-1) / np.abs(denom))
        cond = norm_a * norm_inv
    cond = np.where(np.isfinite(cond), cond, np.inf)
    bad = cond > _DENSE_RECHECK
    if np.any(bad):
        xd, cd = _dense(a[bad], b[bad], y[bad])
        x[bad] = xd
        cond[bad] = cd
    return BlockSolve(x, cond)
