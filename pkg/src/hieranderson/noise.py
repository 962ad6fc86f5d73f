"""White noise on the hierarchical lattice and its Wick-renormalised square.

A single base sample of i.i.d. standard normals at the finest level
``Nmax`` generates every coarser level by

    xi_{n-1} = L**(2 - alpha) * coarsen(xi_n),    alpha = 2 - d/2,

so the noise at level ``n`` is the same for every cutoff ``N >= n``. The
second-order chaos for cutoff ``N`` starts from zero at level ``N`` and
accumulates the renormalised products ``xi * fluct(xi) - (1 - L**-d)`` on
the way down.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LevelError
from .lattice import LatticeSpec, check_scale, level_of
from .operators import apply_fluct_propagator, coarsen, fluct
from .rng import standard_normals

__all__ = [
    "alpha_of",
    "NoiseConfig",
    "sample_base",
    "derive_xi_trajectory",
    "wick_constant",
    "wick_pair_product",
    "chaos_recursive",
    "chaos_direct",
    "EnhancedNoise",
    "dump_field",
    "load_field",
]

BASE_STREAM = "base"


def alpha_of(d: int) -> float:
    """Scaling exponent ``2 - d/2`` of the noise."""
    return 2.0 - d / 2.0


@dataclass(frozen=True)
class NoiseConfig:
    """Seed and geometry of a base noise sample."""

    seed: int
    Nmax: int
    L: int = 3
    d: int = 2

    def __post_init__(self):
        check_scale(self.L, self.d)
        if self.Nmax < 0:
            raise ConfigError([f"Nmax must be >= 0 (got {self.Nmax})"])

    @property
    def alpha(self) -> float:
        return alpha_of(self.d)

    @property
    def spec(self) -> LatticeSpec:
        return LatticeSpec(self.L, self.Nmax, self.d)


def sample_base(config: NoiseConfig, samples: int | None = None,
                start: int = 0) -> np.ndarray:
    """Draw base samples ``start, start+1, ...`` at level ``Nmax``.

    Sample ``s`` uses normals ``s * P .. (s + 1) * P - 1`` of the base stream,
    where ``P`` is the number of lattice points, laid out in flat-index
    order. Returns shape ``spec.shape`` if ``samples`` is None, otherwise
    ``(samples,) + spec.shape``.
    """
    spec = config.spec
    count = 1 if samples is None else int(samples)
    z = standard_normals(config.seed, BASE_STREAM, count * spec.size,
                         offset=start * spec.size)
    if samples is None:
        return z.reshape(spec.shape)
    return z.reshape((count,) + spec.shape)


def derive_xi_trajectory(base, L: int, d: int = 2,
                         N: int | None = None) -> list:
    """Noise at levels ``0..N`` derived from a base sample.

    Levels are produced by repeated single coarsening steps from the base,
    so level ``n`` is bit-identical for every cutoff ``N >= n``.
    """
    base = np.asarray(base, dtype=float)
    Nmax = level_of(base.shape, L, d)
    N = Nmax if N is None else N
    if not 0 <= N <= Nmax:
        raise LevelError(f"cutoff {N} exceeds base level {Nmax}")
    scale = float(L) ** (2.0 - alpha_of(d))
    traj = [base]
    for _ in range(Nmax):
        traj.append(scale * coarsen(traj[-1], L, d))
    traj.reverse()
    return traj[:N + 1]


def wick_constant(k: int, L: int, d: int = 2) -> float:
    """Centering ``E[xi Gamma_k xi] = (1 - L**-d) sum_{j<=k} L**((2-d)(j-1))``."""
    return (1.0 - float(L) ** -d) * sum(float(L) ** ((2 - d) * j)
                                        for j in range(k))


def wick_pair_product(xi_n, L: int, d: int = 2) -> np.ndarray:
    """Renormalised product ``xi * fluct(xi) - (1 - L**-d)``."""
    xi_n = np.asarray(xi_n, dtype=float)
    return xi_n * fluct(xi_n, L, d) - (1.0 - float(L) ** -d)


def chaos_recursive(xi_traj, L: int, d: int = 2) -> list:
    """Second chaos at levels ``0..N`` for cutoff ``N = len(xi_traj) - 1``.

    ``chaos[N] = 0`` and
    ``chaos[n-1] = L**(2 - 2 alpha) coarsen(chaos[n] + wick(xi[n]))``.
    """
    N = len(xi_traj) - 1
    scale = float(L) ** (2.0 - 2.0 * alpha_of(d))
    out = [None] * (N + 1)
    out[N] = np.zeros_like(np.asarray(xi_traj[N], dtype=float))
    for n in range(N, 0, -1):
        out[n - 1] = scale * coarsen(out[n] + wick_pair_product(xi_traj[n], L, d),
                                     L, d)
    return out


def chaos_direct(xi_N, n: int, L: int, d: int = 2) -> np.ndarray:
    """Second chaos at level ``n`` computed in one shot from the finest noise.

    ``L**((2 - 2 alpha)(N - n)) coarsen^(N-n)(xi * Gamma_{N-n} xi - c_{N-n})``
    with ``c_k`` from :func:`wick_constant`.
    """
    xi_N = np.asarray(xi_N, dtype=float)
    N = level_of(xi_N.shape, L, d)
    if not 0 <= n <= N:
        raise LevelError(f"level {n} not in [0, {N}]")
    k = N - n
    h = xi_N * apply_fluct_propagator(xi_N, k, L, d) - wick_constant(k, L, d)
    for _ in range(k):
        h = coarsen(h, L, d)
    return float(L) ** ((2.0 - 2.0 * alpha_of(d)) * k) * h


class EnhancedNoise:
    """Noise trajectory plus the second chaos for every cutoff ``N <= Nmax``.

    Parameters
    ----------
    base : ndarray
        Base sample(s) at level ``Nmax``, with optional leading batch axes.
    L, d : int
        Block scale and dimension.
    seed : int, optional
        Seed the base was drawn from (bookkeeping only).
    start : int
        Index of the first sample in the batch within the base stream.
    """

    def __init__(self, base, L: int, d: int = 2, seed: int | None = None,
                 start: int = 0):
        self.L = L
        self.d = d
        self.seed = seed
        self.start = start
        self.base = np.asarray(base, dtype=float)
        self.Nmax = level_of(self.base.shape, L, d)
        self.xi = derive_xi_trajectory(self.base, L, d)
        self._chaos = {}

    @classmethod
    def sample(cls, config: NoiseConfig, samples: int | None = None,
               start: int = 0) -> "EnhancedNoise":
        base = sample_base(config, samples, start)
        return cls(base, config.L, config.d, seed=config.seed, start=start)

    @property
    def batch_shape(self) -> tuple:
        return self.base.shape[:self.base.ndim - self.d]

    def xi_at(self, N: int, n: int) -> np.ndarray:
        """Noise at level ``n`` for cutoff ``N`` (independent of ``N``)."""
        if not 0 <= n <= N <= self.Nmax:
            raise LevelError(f"need 0 <= n <= N <= {self.Nmax}, got n={n}, N={N}")
        return self.xi[n]

    def chaos(self, N: int) -> list:
        """Second chaos at levels ``0..N`` for cutoff ``N``."""
        if not 0 <= N <= self.Nmax:
            raise LevelError(f"cutoff {N} not in [0, {self.Nmax}]")
        if N not in self._chaos:
            self._chaos[N] = chaos_recursive(self.xi[:N + 1], self.L, self.d)
        return self._chaos[N]

    def chaos_at(self, N: int, n: int) -> np.ndarray:
        if not 0 <= n <= N:
            raise LevelError(f"level {n} not in [0, {N}]")
        return self.chaos(N)[n]

    def select(self, idx) -> "EnhancedNoise":
        """Sub-batch (or single sample) of this noise."""
        return EnhancedNoise(self.base[idx], self.L, self.d, seed=self.seed,
                             start=self.start)


def dump_field(path, values, L: int, d: int = 2, seed=None,
               label: str = BASE_STREAM) -> None:
    """Write a field as CSV (flat index, value) or ``.npz`` binary.

    The header records ``L``, ``d``, ``n``, ``seed`` and the stream label.
    """
    values = np.asarray(values, dtype=float)
    n = level_of(values.shape, L, d)
    header = {"L": L, "d": d, "n": n, "seed": seed, "label": label}
    path = str(path)
    if path.endswith(".npz"):
        np.savez(path, values=values.reshape(-1),
                 header=np.array(json.dumps(header, sort_keys=True)))
        return
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "value"])
        for i, v in enumerate(values.reshape(-1)):
            w.writerow([i, f"{v:.17g}"])


def load_field(path):
    """Read a field written by :func:`dump_field`. Returns ``(values, header)``."""
    path = str(path)
    if path.endswith(".npz"):
        with np.load(path) as z:
            header = json.loads(str(z["header"]))
            flat = z["values"]
    else:
        with open(path) as fh:
            header = json.loads(fh.readline()[2:])
            rows = list(csv.reader(fh))[1:]
        flat = np.array([float(r[1]) for r in rows])
    shape = (header["L"] ** header["n"],) * header["d"]
    return flat.reshape(shape), header
