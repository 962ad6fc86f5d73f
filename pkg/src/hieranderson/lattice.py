"""Hierarchical lattices with centered coordinates and block structure.

The unit lattice at level ``n`` has side ``L**n`` and coordinates in
``[-(L**n - 1)/2, (L**n - 1)/2]`` on each of ``d`` axes. Fields are stored
as numpy arrays of shape ``(L**n,) * d`` (optionally with leading batch
axes), where array index ``i`` on an axis holds coordinate
``i - (L**n - 1)/2``. Flat indices are row-major with axis 0 slowest,
which is numpy's C order.

Because ``L`` is odd and the side is a power of ``L``, the level-1 blocks
(points sharing the nearest multiple of ``L``) are contiguous runs of
``L`` array indices, so no wraparound is ever needed in practice.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LatticeRangeError

__all__ = [
    "LatticeSpec",
    "Field",
    "index_of",
    "coords_of",
    "block_center",
    "block_members",
    "shared_block_level",
    "level_of",
]


def check_scale(L: int, d: int = 2) -> None:
    """Raise ConfigError unless ``L`` is odd and at least 3 and ``d >= 1``."""
    bad = []
    if not isinstance(L, (int, np.integer)) or L < 3 or L % 2 == 0:
        bad.append(f"L must be odd and >= 3 (got {L!r})")
    if not isinstance(d, (int, np.integer)) or d < 1:
        bad.append(f"d must be a positive integer (got {d!r})")
    if bad:
        raise ConfigError(bad)


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry of the unit lattice at one level.

    Parameters
    ----------
    L : int
        Block scale, odd and at least 3.
    n : int
        Level; the side length is ``L**n``.
    d : int
        Spatial dimension.
    """

    L: int
    n: int
    d: int = 2

    def __post_init__(self):
        check_scale(self.L, self.d)
        if self.n < 0:
            raise ConfigError([f"n must be >= 0 (got {self.n})"])

    @property
    def side(self) -> int:
        return self.L ** self.n

    @property
    def size(self) -> int:
        return self.side ** self.d

    @property
    def half(self) -> int:
        return (self.side - 1) // 2

    @property
    def shape(self) -> tuple:
        return (self.side,) * self.d

    def coarser(self) -> "LatticeSpec":
        return LatticeSpec(self.L, self.n - 1, self.d)

    def points(self):
        """Iterate over all coordinates in flat-index order."""
        rng = range(-self.half, self.half + 1)
        return itertools.product(rng, repeat=self.d)


def level_of(shape, L: int, d: int = 2) -> int:
    """Infer the level from the trailing ``d`` axes of an array shape."""
    if len(shape) < d:
        raise ValueError(f"array with shape {shape} has fewer than {d} axes")
    side = shape[-1]
    if any(s != side for s in shape[-d:]):
        raise ValueError(f"trailing axes of {shape} are not a cube")
    n = int(round(math.log(side) / math.log(L))) if side > 1 else 0
    if L ** n != side:
        raise ValueError(f"side {side} is not a power of L={L}")
    return n


def _check_point(spec: LatticeSpec, p) -> tuple:
    p = tuple(int(c) for c in p)
    if len(p) != spec.d:
        raise LatticeRangeError(f"point {p} does not have {spec.d} coordinates")
    for c in p:
        if abs(c) > spec.half:
            raise LatticeRangeError(
                f"coordinate {c} outside [-{spec.half}, {spec.half}]")
    return p


def index_of(spec: LatticeSpec, p) -> int:
    """Flat row-major index of a centered coordinate."""
    p = _check_point(spec, p)
    idx = 0
    for c in p:
        idx = idx * spec.side + (c + spec.half)
    return idx


def coords_of(spec: LatticeSpec, i: int) -> tuple:
    """Centered coordinate of a flat index."""
    if not 0 <= i < spec.size:
        raise LatticeRangeError(f"flat index {i} outside [0, {spec.size})")
    out = []
    for _ in range(spec.d):
        i, r = divmod(i, spec.side)
        out.append(r - spec.half)
    return tuple(reversed(out))


def block_center(spec: LatticeSpec, p) -> tuple:
    """Center of the level-1 block containing ``p`` (nearest multiple of L)."""
    if spec.n < 1:
        raise LatticeRangeError("level 0 has no blocks")
    p = _check_point(spec, p)
    h = (spec.L - 1) // 2
    return tuple(spec.L * ((c + h) // spec.L) for c in p)


def block_members(spec: LatticeSpec, c) -> list:
    """All ``L**d`` points of the block centered at ``c``, row-major."""
    c = _check_point(spec, c)
    if spec.n < 1 or any(x % spec.L for x in c):
        raise LatticeRangeError(f"{c} is not a block center")
    h = (spec.L - 1) // 2
    offs = range(-h, h + 1)
    return [tuple(ci + oi for ci, oi in zip(c, o))
            for o in itertools.product(offs, repeat=spec.d)]


def shared_block_level(spec: LatticeSpec, x, y) -> float:
    """Smallest level ``k >= 1`` at which ``x`` and ``y`` share a block.

    Returns ``math.inf`` when ``x == y``, so that functions of the form
    ``L**(-2 k)`` vanish on the diagonal by convention.
    """
    x = _check_point(spec, x)
    y = _check_point(spec, y)
    if x == y:
        return math.inf
    ix = [c + spec.half for c in x]
    iy = [c + spec.half for c in y]
    for k in range(1, spec.n + 1):
        w = spec.L ** k
        if all(a // w == b // w for a, b in zip(ix, iy)):
            return k
    raise AssertionError("unreachable: the top level is a single block")


@dataclass(frozen=True)
class Field:
    """A real field on a lattice, values shaped ``spec.shape``."""

    spec: LatticeSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.spec.shape:
            if v.size == self.spec.size:
                v = v.reshape(self.spec.shape)
            else:
                raise ValueError(
                    f"expected {self.spec.size} values, got {v.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)
