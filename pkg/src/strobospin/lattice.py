"""Hypercubic torus geometry and Kac-normalized power-law interaction kernels."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Sequence

import numpy as np

#: Distinguished exponent value selecting the nearest-neighbor (contact) limit.
NEAREST_NEIGHBOR = math.inf


@dataclass(frozen=True)
class LatticeSpec:
    """Periodic hypercubic lattice with power-law couplings.

    D is the dimension (1, 2 or 3), L the linear size, and alpha the
    interaction exponent. alpha must exceed D so the coupling sum converges
    in the large-N limit; ``alpha = math.inf`` selects nearest-neighbor
    interactions.
    """

    D: int
    L: int
    alpha: float

    def __post_init__(self) -> None:
        if self.D not in (1, 2, 3):
            raise ValueError(f"D must be 1, 2 or 3, got {self.D}")
        if not isinstance(self.L, int) or self.L < 2:
            raise ValueError(f"L must be an integer >= 2, got {self.L}")
        if math.isinf(self.alpha):
            if self.alpha < 0:
                raise ValueError("alpha must be positive")
        elif not (self.alpha > self.D):
            raise ValueError(
                f"finite alpha must exceed the dimension D: alpha={self.alpha}, D={self.D}"
            )

    @property
    def N(self) -> int:
        """Total number of sites, L**D."""
        return self.L**self.D

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.L,) * self.D

    def distance(self, delta: Sequence[int]) -> float:
        """Torus distance for an offset vector of length D."""
        if len(delta) != self.D:
            raise ValueError(f"offset has length {len(delta)}, expected D={self.D}")
        return torus_distance(delta, self.L)


def torus_distance(delta: Sequence[int], L: int) -> float:
    """Distance between two sites separated by the integer offset ``delta``.

    Each component contributes (L/pi)*|tan(pi*d/L)|, which reduces to |d|
    for |d| << L and diverges at d = L/2, suppressing couplings across the
    torus seam. Returns ``math.inf`` for the zero offset (a site is at
    infinite distance from itself) and when any component sits exactly on
    the tangent pole.
    """
    if L < 2:
        raise ValueError(f"L must be >= 2, got {L}")
    if len(delta) == 0:
        raise ValueError("offset must have at least one component")
    reduced = [int(d) % L for d in delta]
    if all(r == 0 for r in reduced):
        return math.inf
    total = 0.0
    for r in reduced:
        if 2 * r == L:
            return math.inf
        total += ((L / math.pi) * abs(math.tan(math.pi * r / L))) ** 2
    return math.sqrt(total)


def _offset_distance_sq(spec: LatticeSpec) -> np.ndarray:
    """Squared torus distance for every coordinate offset, shape spec.shape.

    The zero offset and tangent-pole offsets are set to inf.
    """
    L = spec.L
    idx = np.arange(L // 2 + 1)
    stretch = (L / np.pi) * np.abs(np.tan(np.pi * idx / L))
    if L % 2 == 0:
        stretch[L // 2] = np.inf  # tan pole, exact
    # mirror the lower half so w[delta] == w[-delta] holds bit-exactly
    full = np.empty(L)
    full[: L // 2 + 1] = stretch
    full[L // 2 + 1 :] = stretch[1 : (L + 1) // 2][::-1]
    per_axis = full * full
    r2 = reduce(np.add.outer, [per_axis] * spec.D)
    r2 = np.asarray(r2).reshape(spec.shape)
    r2[(0,) * spec.D] = np.inf  # no self-interaction
    return r2


def kac_normalization(spec: LatticeSpec) -> float:
    """Normalization making the total coupling seen by one spin equal to 1.

    For finite alpha this is the sum of 1/r^alpha over all other sites
    (offsets at infinite distance contribute nothing). In the
    nearest-neighbor limit the coupling spreads evenly over the 2*D unit
    offsets, so the normalization is 2*D.
    """
    if math.isinf(spec.alpha):
        return 2.0 * spec.D
    r2 = _offset_distance_sq(spec)
    weights = r2 ** (-0.5 * spec.alpha)  # inf**(-x) == 0.0
    total = float(weights.sum())
    if total <= 0.0:
        raise ValueError(
            f"degenerate lattice: every pair distance is infinite for L={spec.L}, D={spec.D}"
        )
    return total


@dataclass(frozen=True)
class InteractionKernel:
    """Translation-invariant pair coupling tabulated over coordinate offsets.

    ``weights`` has shape spec.shape and is indexed by the offset between
    two sites (mod L per axis). The Kac construction makes the weights sum
    to one, with weights[0] = 0 and full inversion symmetry.
    """

    spec: LatticeSpec
    weights: np.ndarray
    kac: float


def build_kernel(spec: LatticeSpec) -> InteractionKernel:
    """Tabulate the normalized interaction weight for every offset."""
    if math.isinf(spec.alpha):
        weights = np.zeros(spec.shape)
        w = 1.0 / (2.0 * spec.D)
        for axis in range(spec.D):
            for step in (1, -1):
                pos = [0] * spec.D
                pos[axis] = step % spec.L
                weights[tuple(pos)] += w  # += merges +1/-1 when L == 2
        return InteractionKernel(spec=spec, weights=weights, kac=2.0 * spec.D)
    r2 = _offset_distance_sq(spec)
    raw = r2 ** (-0.5 * spec.alpha)
    kac = float(raw.sum())
    if kac <= 0.0:
        raise ValueError(
            f"degenerate lattice: every pair distance is infinite for L={spec.L}, D={spec.D}"
        )
    return InteractionKernel(spec=spec, weights=raw / kac, kac=kac)
