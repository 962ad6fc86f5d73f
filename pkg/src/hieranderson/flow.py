"""Renormalisation-group flow of the coupling coefficients and remainders.

At level ``n`` the effective potential is

    rho_n = lam_n xi_n + lam_n**2 chaos_n + lam_n**3 psi_n + mu_n

with closed-form coefficients (``alpha = 2 - d/2``)

    lam_n = L**(-alpha n) g
    mu_n  = L**(-2 n) (r - (1 - L**-d) n g**2)
    gam_n = L**(-(2 - alpha) n).

Each step solves a block-local linear equation for the remainder ``R`` on
the fine level and pushes the cubic remainder ``psi`` one level down.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .blocksolve import COND_THRESHOLD, solve_diag_rank1
from .errors import ConfigError, LargeFieldSingularity, LevelError
from .lattice import LatticeSpec, check_scale, coords_of, level_of
from .noise import EnhancedNoise, alpha_of
from .operators import coarsen, fluct, from_blocks, to_blocks

__all__ = [
    "Couplings",
    "LevelCoefficients",
    "bare_mass",
    "coefficients_closed_form",
    "coefficients_step",
    "effective_potential",
    "solve_remainder",
    "psi_step",
    "FlowTrajectory",
    "run_flow",
]


@dataclass(frozen=True)
class Couplings:
    """Noise strength ``g`` in [0, 1] and mass ``r >= 1``.

    ``g = 0`` is the deterministic equation and is accepted so that the
    noiseless limit can be run through the same code.
    """

    g: float
    r: float = 1.0

    def __post_init__(self):
        bad = []
        if not 0.0 <= self.g <= 1.0:
            bad.append(f"g must lie in [0, 1] (got {self.g})")
        if not self.r >= 1.0:
            bad.append(f"r must be >= 1 (got {self.r})")
        if bad:
            raise ConfigError(bad)


@dataclass(frozen=True)
class LevelCoefficients:
    """Coefficients ``(lam, mu, gamma)`` at level ``n``."""

    n: int
    lam: float
    mu: float
    gamma: float


def bare_mass(c: Couplings, N: int, L: int, d: int = 2) -> float:
    """Renormalised bare mass ``r - (1 - L**-d) N g**2`` at cutoff ``N``."""
    return c.r - (1.0 - float(L) ** -d) * N * c.g ** 2


def coefficients_closed_form(c: Couplings, n: int, L: int,
                             d: int = 2) -> LevelCoefficients:
    if n < 0:
        raise LevelError(f"level must be >= 0 (got {n})")
    check_scale(L, d)
    a = alpha_of(d)
    L = float(L)
    return LevelCoefficients(
        n=n,
        lam=L ** (-a * n) * c.g,
        mu=L ** (-2.0 * n) * (c.r - (1.0 - L ** -d) * n * c.g ** 2),
        gamma=L ** (-(2.0 - a) * n),
    )


def coefficients_step(k: LevelCoefficients, L: int,
                      d: int = 2) -> LevelCoefficients:
    """One coarsening step ``n -> n - 1`` of the coefficient recursion."""
    if k.n < 1:
        raise LevelError("cannot step below level 0")
    a = alpha_of(d)
    L = float(L)
    return LevelCoefficients(
        n=k.n - 1,
        lam=L ** a * k.lam,
        mu=L ** 2 * (k.mu + (1.0 - L ** -d) * k.lam ** 2),
        gamma=L ** (2.0 - a) * k.gamma,
    )


def effective_potential(xi_n, chaos_n, psi_n, k: LevelCoefficients):
    return k.lam * xi_n + k.lam ** 2 * chaos_n + k.lam ** 3 * psi_n + k.mu


def _block_fluct(blocks):
    return blocks - blocks.mean(axis=-1, keepdims=True)


def _raise_singular(cond, level, L, d, threshold):
    bad = np.argwhere(~(cond <= threshold))
    if bad.size == 0:
        return
    where = tuple(int(i) for i in bad[0])
    sample = where[0] if len(where) > 1 else None
    spec = LatticeSpec(L, level - 1, d)
    block = tuple(L * c for c in coords_of(spec, where[-1]))
    raise LargeFieldSingularity(level, block, sample, float(cond[where]))


def solve_remainder(xi_n, chaos_n, psi_n, k: LevelCoefficients, L: int,
                    d: int = 2, method: str = "auto",
                    cond_threshold: float = COND_THRESHOLD,
                    tol: float = 1e-14, max_iter: int = 500,
                    damping: float = 1.0) -> np.ndarray:
    """Remainder ``R`` at level ``n`` from the block-local linear equation.

    ``R`` solves, block by block,

        R = P1 chaos + P1(xi P1 xi) + lam P1 psi + lam P1(chaos P1 xi)
            + lam**2 P1(psi P1 xi) + (mu/lam) P1 xi
            + mu R + P1(s R),      s = lam xi + lam**2 chaos + lam**3 psi.

    Parameters
    ----------
    method : {"auto", "dense", "iterate"}
        Direct block solve (Sherman-Morrison with dense fallback, or dense
        LU), or damped fixed-point iteration.

    Returns
    -------
    ndarray
        ``R`` on the level-``n`` lattice; zero when ``lam == 0``.

    Raises
    ------
    LargeFieldSingularity
        If a block system has condition estimate above ``cond_threshold``.
    """
    xi_n = np.asarray(xi_n, dtype=float)
    n = level_of(xi_n.shape, L, d)
    if n < 1:
        raise LevelError("remainder is defined on levels >= 1")
    if k.lam == 0.0:
        return np.zeros_like(xi_n)
    lam, mu = k.lam, k.mu
    pxi = fluct(xi_n, L, d)
    src = (chaos_n + xi_n * pxi + lam * psi_n + lam * chaos_n * pxi
           + lam ** 2 * psi_n * pxi + (mu / lam) * xi_n)
    rhs = fluct(src, L, d)
    s = lam * xi_n + lam ** 2 * chaos_n + lam ** 3 * psi_n
    if method == "iterate":
        return _iterate_remainder(rhs, s, mu, L, d, tol, max_iter, damping)
    sb = to_blocks(s, L, d)
    res = solve_diag_rank1(1.0 - mu - sb, sb, to_blocks(rhs, L, d),
                           method=method)
    _raise_singular(res.condition, n, L, d, cond_threshold)
    return from_blocks(res.x, L, d)


def _iterate_remainder(rhs, s, mu, L, d, tol, max_iter, damping):
    R = rhs.copy()
    for _ in range(max_iter):
        new = rhs + mu * R + fluct(s * R, L, d)
        new = (1.0 - damping) * R + damping * new
        delta = np.max(np.abs(new - R))
        R = new
        if delta <= tol * max(1.0, float(np.max(np.abs(R)))):
            return R
    raise RuntimeError(f"remainder iteration did not converge ({delta:.3g})")


def psi_step(psi_n, R, xi_n, chaos_n, k: LevelCoefficients, L: int,
             d: int = 2) -> np.ndarray:
    """Cubic remainder one level down.

    ``psi' = L**(2 - 3 alpha) coarsen(psi + xi R + chaos P1 xi + lam chaos R
    + lam psi P1 xi + lam**2 psi R)``. With ``lam == 0`` the remainder drops
    out of the effective potential and ``psi`` is set to zero.
    """
    if k.lam == 0.0:
        return np.zeros_like(coarsen(psi_n, L, d))
    lam = k.lam
    pxi = fluct(xi_n, L, d)
    inner = (psi_n + xi_n * R + chaos_n * pxi + lam * chaos_n * R
             + lam * psi_n * pxi + lam ** 2 * psi_n * R)
    return float(L) ** (2.0 - 3.0 * alpha_of(d)) * coarsen(inner, L, d)


@dataclass
class FlowTrajectory:
    """Coefficients and remainders for one cutoff.

    ``coeffs[n]``, ``psi[n]`` are indexed by level ``0..N``; ``remainder[n]``
    is defined for ``n = 1..N`` (entry 0 is None).
    """

    N: int
    couplings: Couplings
    L: int
    d: int
    coeffs: list
    psi: list
    remainder: list
    xi: list = field(repr=False)
    chaos: list = field(repr=False)

    def effective_potential(self, n: int) -> np.ndarray:
        return effective_potential(self.xi[n], self.chaos[n], self.psi[n],
                                   self.coeffs[n])


def run_flow(noise: EnhancedNoise, couplings: Couplings, N: int,
             method: str = "auto",
             cond_threshold: float = COND_THRESHOLD) -> FlowTrajectory:
    """Run the flow from cutoff ``N`` down to level 0."""
    if not 0 <= N <= noise.Nmax:
        raise LevelError(f"cutoff {N} not in [0, {noise.Nmax}]")
    L, d = noise.L, noise.d
    xi = noise.xi[:N + 1]
    chaos = noise.chaos(N)
    coeffs = [coefficients_closed_form(couplings, n, L, d) for n in range(N + 1)]
    psi = [None] * (N + 1)
    rem = [None] * (N + 1)
    psi[N] = np.zeros_like(xi[N])
    for n in range(N, 0, -1):
        rem[n] = solve_remainder(xi[n], chaos[n], psi[n], coeffs[n], L, d,
                                 method=method, cond_threshold=cond_threshold)
        psi[n - 1] = psi_step(psi[n], rem[n], xi[n], chaos[n], coeffs[n], L, d)
    return FlowTrajectory(N, couplings, L, d, coeffs, psi, rem, list(xi), chaos)
