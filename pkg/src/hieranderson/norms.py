"""Norms on the hierarchical lattice and the good noise event.

The ``C^beta`` norm of a field ``u`` given on the fine lattice of level
``N`` (cells of side ``L**-N`` on the unit torus) is computed from its
block-average pyramid ``c_n = coarsen^(N-n)(u)``:

    |u|_beta = |mean u| + max_{1<=n<=N} L**(beta n) max|P1 c_n|.

With ``blocks="Q"`` the fluctuations are replaced by the averages
themselves, ``max_{0<=n<=N} L**(beta n) max|c_n|``, an equivalent norm for
``beta < 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .noise import EnhancedNoise, alpha_of
from .operators import coarsen, fluct, mean_total

__all__ = [
    "KAPPA_S_DEFAULT",
    "NormConfig",
    "besov_norm",
    "stochastic_norm",
    "uniform_stochastic_norm",
    "omega_indicator",
    "holder_distance",
    "level_sup",
]

KAPPA_S_DEFAULT = 0.05


@dataclass(frozen=True)
class NormConfig:
    """Regularity loss ``kappa_s`` in ``(0, alpha)``."""

    kappa_s: float = KAPPA_S_DEFAULT
    d: int = 2

    def __post_init__(self):
        a = alpha_of(self.d)
        if not 0.0 < self.kappa_s < a:
            raise ConfigError([f"kappa_s must lie in (0, {a}) (got {self.kappa_s})"])

    @property
    def holder_kappa(self) -> float:
        """Default Hoelder loss ``3 kappa_s + 0.01``."""
        return 3.0 * self.kappa_s + 0.01


def level_sup(f, d: int = 2) -> np.ndarray:
    """``max |f|`` over the lattice axes (per batch element)."""
    f = np.asarray(f, dtype=float)
    return np.abs(f).reshape(f.shape[:f.ndim - d] + (-1,)).max(axis=-1)


def besov_norm(u, beta: float, L: int, d: int = 2,
               blocks: str = "P") -> np.ndarray:
    """``C^beta`` norm of a fine-lattice field via its coarsening pyramid."""
    u = np.asarray(u, dtype=float)
    c = u
    levels = []
    while c.shape[-1] > 1:
        levels.append(c)
        c = coarsen(c, L, d)
    levels.append(c)
    levels.reverse()
    N = len(levels) - 1
    if blocks == "P":
        terms = [float(L) ** (beta * n) * level_sup(fluct(levels[n], L, d), d)
                 for n in range(1, N + 1)]
        top = np.max(terms, axis=0) if terms else 0.0
        return np.abs(mean_total(u, d)) + top
    if blocks == "Q":
        terms = [float(L) ** (beta * n) * level_sup(levels[n], d)
                 for n in range(N + 1)]
        return np.max(terms, axis=0)
    raise ValueError(f"blocks must be 'P' or 'Q', got {blocks!r}")


def stochastic_norm(xi, chaos, kappa_s: float, L: int, d: int = 2,
                    from_level: int = 0) -> np.ndarray:
    """``max_{n >= from_level} L**(-kappa_s n) max(max|xi_n|, max|chaos_n|**0.5)``.

    ``xi`` and ``chaos`` are lists indexed by level ``0..N``.
    """
    N = len(xi) - 1
    if len(chaos) != N + 1:
        raise ValueError("noise and chaos trajectories differ in length")
    if not 0 <= from_level <= N:
        raise ValueError(f"from_level {from_level} not in [0, {N}]")
    out = None
    for n in range(from_level, N + 1):
        t = np.maximum(level_sup(xi[n], d), np.sqrt(level_sup(chaos[n], d)))
        t = float(L) ** (-kappa_s * n) * t
        out = t if out is None else np.maximum(out, t)
    return out


def uniform_stochastic_norm(noise: EnhancedNoise, kappa_s: float,
                            Nmax: int | None = None) -> np.ndarray:
    """Maximum of :func:`stochastic_norm` over all cutoffs ``N <= Nmax``."""
    Nmax = noise.Nmax if Nmax is None else Nmax
    out = None
    for N in range(Nmax + 1):
        t = stochastic_norm(noise.xi[:N + 1], noise.chaos(N), kappa_s,
                            noise.L, noise.d)
        out = t if out is None else np.maximum(out, t)
    return out


def omega_indicator(norm_value, g: float):
    """Membership in the good event ``{norm <= 1 / (2 g)}``."""
    if not 0.0 < g <= 1.0:
        raise ValueError(f"g must lie in (0, 1], got {g}")
    return np.asarray(norm_value) <= 1.0 / (2.0 * g)


def holder_distance(v_a, v_b, kappa: float, L: int, d: int = 2) -> np.ndarray:
    """Distance between two coarse-grained solution trajectories.

    ``max_{1<=n<=M} L**(-kappa n) max|P1(v_a[n] - v_b[n])| + |v_a[0] - v_b[0]|``
    with ``M`` the smaller of the two cutoffs. ``v_a``, ``v_b`` are lists
    indexed by level (e.g. ``SolutionTrajectory.v``).
    """
    if not 0.0 < kappa < 1.0:
        raise ValueError(f"kappa must lie in (0, 1), got {kappa}")
    M = min(len(v_a), len(v_b)) - 1
    base = np.abs(np.asarray(v_a[0]) - np.asarray(v_b[0]))
    base = base.reshape(base.shape[:base.ndim - d])
    top = np.zeros_like(base)
    for n in range(1, M + 1):
        diff = fluct(np.asarray(v_a[n]) - np.asarray(v_b[n]), L, d)
        top = np.maximum(top, float(L) ** (-kappa * n) * level_sup(diff, d))
    return base + top
