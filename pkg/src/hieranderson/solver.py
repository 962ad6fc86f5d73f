"""Multiscale solver for the hierarchical Anderson equation.

The cutoff-``N`` equation on the unit lattice at level ``N`` is

    (-Delta_H) v - (lam_N xi_N + mu_N) v = gam_N.

Downward pass: on each block, the fluctuation ``m`` of ``v`` relative to
the block-constant part solves ``(I - P1 diag(rho)) m = P1 rho``, which
yields the next coarser potential
``rho' = L**2 (mean(rho) + mean(rho m))``. At level 0 the equation is the
scalar ``-rho_0 v_0 = gam_0``. Upward pass: ``v_n = L**alpha
refine(v_{n-1}) (1 + m_n)``.

Nothing here uses the coefficient flow; the coarse potentials are derived
from the finest-level noise alone, which makes the comparison with the
flow's effective potential a genuine cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocksolve import COND_THRESHOLD, solve_diag_rank1
from .errors import LargeFieldSingularity, LevelError
from .flow import Couplings, FlowTrajectory
from .lattice import LatticeSpec, coords_of
from .noise import EnhancedNoise, alpha_of
from .operators import (apply_neg_laplacian, assemble_dense_operator,
                        fluct, from_blocks, refine, to_blocks)

__all__ = [
    "BareProblem",
    "SolutionTrajectory",
    "rg_solve",
    "dense_solve",
    "residual",
    "ReconstructedSolution",
    "reconstruct_u",
    "ForceCrosscheck",
    "crosscheck_effective_force",
]


@dataclass
class BareProblem:
    """The cutoff-``N`` equation for a batch of noise samples.

    Parameters
    ----------
    noise : EnhancedNoise
        Noise realisation(s); only level ``N`` is used.
    couplings : Couplings
    N : int
        Cutoff level.
    counterterm : bool
        If False the bare mass is ``r`` at every cutoff instead of the
        renormalised ``r - (1 - L**-d) N g**2``.
    """

    noise: EnhancedNoise
    couplings: Couplings
    N: int
    counterterm: bool = True

    def __post_init__(self):
        if not 0 <= self.N <= self.noise.Nmax:
            raise LevelError(f"cutoff {self.N} not in [0, {self.noise.Nmax}]")

    @property
    def L(self) -> int:
        return self.noise.L

    @property
    def d(self) -> int:
        return self.noise.d

    @property
    def alpha(self) -> float:
        return alpha_of(self.d)

    @property
    def xi(self) -> np.ndarray:
        return self.noise.xi[self.N]

    @property
    def bare_mass(self) -> float:
        g, r = self.couplings.g, self.couplings.r
        if not self.counterterm:
            return r
        return r - (1.0 - float(self.L) ** -self.d) * self.N * g ** 2

    @property
    def lam(self) -> float:
        return float(self.L) ** (-self.alpha * self.N) * self.couplings.g

    @property
    def mu(self) -> float:
        return float(self.L) ** (-2.0 * self.N) * self.bare_mass

    @property
    def gamma(self) -> float:
        return float(self.L) ** (-(2.0 - self.alpha) * self.N)

    def potential(self) -> np.ndarray:
        return self.lam * self.xi + self.mu


@dataclass
class SolutionTrajectory:
    """Coarse-grained solutions ``v[n]`` and the data of the downward pass.

    ``v``, ``rho`` and ``gamma`` are indexed by level ``0..N``; ``m[n]`` and
    ``condition[n]`` (largest block condition estimate) by ``n = 1..N``.
    """

    N: int
    L: int
    d: int
    v: list
    rho: list
    gamma: list
    m: list
    condition: list = field(default_factory=list)

    @property
    def finest(self) -> np.ndarray:
        return self.v[self.N]


def _singular(cond, level, L, d, threshold):
    bad = np.argwhere(~(cond <= threshold))
    if bad.size == 0:
        return
    where = tuple(int(i) for i in bad[0])
    sample = where[0] if len(where) > 1 else None
    spec = LatticeSpec(L, level - 1, d)
    block = tuple(L * c for c in coords_of(spec, where[-1]))
    raise LargeFieldSingularity(level, block, sample, float(cond[where]))


def rg_solve(p: BareProblem, method: str = "auto",
             cond_threshold: float = COND_THRESHOLD) -> SolutionTrajectory:
    """Solve the bare equation by one downward and one upward pass.

    Raises
    ------
    LargeFieldSingularity
        If a block system or the final scalar equation is singular.
    """
    L, d, N = p.L, p.d, p.N
    a = p.alpha
    rho = [None] * (N + 1)
    gam = [None] * (N + 1)
    ms = [None] * (N + 1)
    conds = [None] * (N + 1)
    rho[N] = np.asarray(p.potential(), dtype=float)
    gam[N] = p.gamma
    for n in range(N, 0, -1):
        rb = to_blocks(rho[n], L, d)
        rhs = rb - rb.mean(axis=-1, keepdims=True)
        res = solve_diag_rank1(1.0 - rb, rb, rhs, method=method)
        _singular(res.condition, n, L, d, cond_threshold)
        conds[n] = float(np.max(res.condition))
        ms[n] = from_blocks(res.x, L, d)
        coarse = L ** 2 * (rb.mean(axis=-1) + (rb * res.x).mean(axis=-1))
        rho[n - 1] = coarse.reshape(coarse.shape[:-1] + (L ** (n - 1),) * d)
        gam[n - 1] = float(L) ** (2.0 - a) * gam[n]
    r0 = rho[0]
    if np.any(np.abs(r0) * cond_threshold <= abs(gam[0])):
        idx = np.argwhere(np.abs(r0) * cond_threshold <= abs(gam[0]))[0]
        sample = int(idx[0]) if r0.ndim > d else None
        raise LargeFieldSingularity(0, (0,) * d, sample, np.inf)
    v = [None] * (N + 1)
    v[0] = -gam[0] / r0
    for n in range(1, N + 1):
        w = float(L) ** a * refine(v[n - 1], L, d)
        v[n] = w + ms[n] * w
    return SolutionTrajectory(N, L, d, v, rho, gam, ms, conds)


def dense_solve(p: BareProblem, cap: int = 1024):
    """Reference solution by dense LU on the full lattice.

    Returns
    -------
    v : ndarray
        Solution at level ``N`` (same batch shape as the noise).
    condition : ndarray
        2-norm condition number of each system matrix.
    """
    L, d, N = p.L, p.d, p.N
    op = assemble_dense_operator("neg_laplacian", N, L, d, cap=cap).matrix
    pot = p.potential()
    batch = pot.shape[:pot.ndim - d]
    flat = pot.reshape(batch + (-1,))
    mats = np.broadcast_to(op, batch + op.shape).copy()
    idx = np.arange(op.shape[0])
    mats[..., idx, idx] -= flat
    rhs = np.full(flat.shape, p.gamma)
    v = np.linalg.solve(mats, rhs[..., None])[..., 0]
    cond = np.linalg.cond(mats)
    return v.reshape(pot.shape), cond


def residual(p: BareProblem, v) -> np.ndarray:
    """Scaled residual ``max|(-Delta_H) v - rho v - gam| / (1 + max|v|)``."""
    v = np.asarray(v, dtype=float)
    d = p.d
    r = apply_neg_laplacian(v, p.L, d) - p.potential() * v - p.gamma
    axes = tuple(range(v.ndim - d, v.ndim))
    return np.max(np.abs(r), axis=axes) / (1.0 + np.max(np.abs(v), axis=axes))


@dataclass
class ReconstructedSolution:
    """Solution field ``u`` on the fine torus lattice and its scale profile.

    Attributes
    ----------
    u : ndarray
        ``L**(-alpha N) v_N``: the value of ``u`` on each cell of side
        ``L**-N``.
    mean : ndarray
        Spatial mean of ``u`` (equal to ``v_0``).
    amplitudes : ndarray
        ``L**(-kappa n) max|P1 v_n|`` for ``n = 1..N`` (last axis).
    besov : ndarray
        ``|mean| + max(amplitudes)``: the ``C^(1 - kappa)`` norm of ``u``.
    """

    u: np.ndarray
    mean: np.ndarray
    amplitudes: np.ndarray
    besov: np.ndarray


def reconstruct_u(traj: SolutionTrajectory, kappa: float) -> ReconstructedSolution:
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    L, d, N = traj.L, traj.d, traj.N
    a = alpha_of(d)
    u = float(L) ** (-a * N) * traj.v[N]
    batch = u.shape[:u.ndim - d]
    mean = np.asarray(traj.v[0]).reshape(batch)
    amps = []
    for n in range(1, N + 1):
        pv = fluct(traj.v[n], L, d)
        amps.append(float(L) ** (-kappa * n)
                    * np.abs(pv).reshape(batch + (-1,)).max(axis=-1))
    amps = np.stack(amps, axis=-1) if amps else np.zeros(batch + (0,))
    top = amps.max(axis=-1) if N > 0 else np.zeros(batch)
    return ReconstructedSolution(u, mean, amps, np.abs(mean) + top)


@dataclass
class ForceCrosscheck:
    """Solver potential versus flow potential, level by level.

    ``deviation[n]`` is ``max|rho_solver - rho_flow| / (1 + max|rho_solver|)``
    and ``psi_hat[n]`` the cubic remainder implied by the solver,
    ``(rho_solver - lam xi - lam**2 chaos - mu) / lam**3``.
    """

    deviation: list
    psi_hat: list

    @property
    def worst(self) -> float:
        return float(max(np.max(x) for x in self.deviation))


def crosscheck_effective_force(p: BareProblem, flow: FlowTrajectory,
                               traj: SolutionTrajectory | None = None
                               ) -> ForceCrosscheck:
    """Compare the solver's coarse potentials with the flow's prediction."""
    if flow.N != p.N or flow.L != p.L or flow.d != p.d:
        raise ValueError("flow and problem use different cutoff or geometry")
    if not np.array_equal(flow.xi[p.N], p.xi):
        raise ValueError("flow and problem were built from different noise")
    if flow.couplings != p.couplings or not p.counterterm:
        raise ValueError("flow and problem use different couplings")
    traj = rg_solve(p) if traj is None else traj
    d = p.d
    dev, psi_hat = [], []
    for n in range(p.N + 1):
        rs = traj.rho[n]
        rf = flow.effective_potential(n)
        axes = tuple(range(rs.ndim - d, rs.ndim))
        dev.append(np.max(np.abs(rs - rf), axis=axes)
                   / (1.0 + np.max(np.abs(rs), axis=axes)))
        k = flow.coeffs[n]
        if k.lam == 0.0:
            psi_hat.append(np.zeros_like(rs))
        else:
            psi_hat.append((rs - k.lam * flow.xi[n] - k.lam ** 2 * flow.chaos[n]
                            - k.mu) / k.lam ** 3)
    return ForceCrosscheck(dev, psi_hat)
