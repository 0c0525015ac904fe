"""Spin configurations, noisy-polarized initial conditions and seeded RNG streams."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .lattice import LatticeSpec

TWO_PI = 2.0 * np.pi


class Purpose(enum.IntEnum):
    """What a random stream is used for; keeps draws for different jobs independent."""

    INIT = 0
    PERTURB = 1


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by (master_seed, realization, purpose).

    Streams with distinct keys are statistically independent, and the same
    key always reproduces the same draws regardless of execution order or
    worker count.
    """

    master_seed: int
    realization: int = 0
    purpose: Purpose = Purpose.INIT

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.realization, int(self.purpose))
        )
        return np.random.default_rng(seq)


@dataclass
class SpinConfig:
    """Unit-vector spin field stored as three flat arrays of length N.

    Sites are indexed row-major over the D-dimensional lattice coordinates.
    """

    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray

    def __post_init__(self) -> None:
        self.sx = np.ascontiguousarray(self.sx, dtype=np.float64)
        self.sy = np.ascontiguousarray(self.sy, dtype=np.float64)
        self.sz = np.ascontiguousarray(self.sz, dtype=np.float64)
        if not (self.sx.shape == self.sy.shape == self.sz.shape) or self.sx.ndim != 1:
            raise ValueError("sx, sy, sz must be flat arrays of identical length")

    @property
    def N(self) -> int:
        return self.sx.shape[0]

    def copy(self) -> "SpinConfig":
        return SpinConfig(self.sx.copy(), self.sy.copy(), self.sz.copy())

    def norms(self) -> np.ndarray:
        return np.sqrt(self.sx**2 + self.sy**2 + self.sz**2)

    @classmethod
    def from_angles(cls, theta: np.ndarray, phi: np.ndarray) -> "SpinConfig":
        """Build spins from polar/azimuthal angles (any real theta is fine)."""
        sin_t = np.sin(theta)
        return cls(sx=sin_t * np.cos(phi), sy=sin_t * np.sin(phi), sz=np.cos(theta))


def init_polarized_noisy(spec: LatticeSpec, W: float, stream: RngStream) -> SpinConfig:
    """Polarized state with Gaussian polar noise of standard deviation 2*pi*W.

    Polar angles are drawn i.i.d. from Gauss(0, 2*pi*W) and left unwrapped;
    azimuthal angles are uniform on [0, 2*pi). W = 0 gives all spins exactly
    +z; large W approaches an unmagnetized state, so W acts as an effective
    temperature of the initial condition.
    """
    if W < 0:
        raise ValueError(f"W must be nonnegative, got {W}")
    rng = stream.generator()
    # draw order (theta first) is part of the reproducibility contract
    theta = rng.normal(0.0, TWO_PI * W, size=spec.N)
    phi = rng.uniform(0.0, TWO_PI, size=spec.N)
    return SpinConfig.from_angles(theta, phi)


def perturb_copy(config: SpinConfig, delta: float, stream: RngStream) -> SpinConfig:
    """Near-identical copy with both angles jittered by 2*pi*delta * N(0, 1).

    The copy inherits the input's angles exactly (recovered via
    theta = arccos(sz), phi = atan2(sy, sx)) and only adds the perturbation;
    the input configuration is left untouched. The site-averaged distance
    between copy and original scales linearly in delta.
    """
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    if delta == 0:
        return config.copy()  # bit-identical, skip the angle round-trip
    rng = stream.generator()
    theta = np.arccos(np.clip(config.sz, -1.0, 1.0))
    phi = np.arctan2(config.sy, config.sx)
    theta = theta + TWO_PI * delta * rng.normal(size=config.N)
    phi = phi + TWO_PI * delta * rng.normal(size=config.N)
    return SpinConfig.from_angles(theta, phi)


def site_coordinates(spec: LatticeSpec) -> np.ndarray:
    """Integer lattice coordinates per site, shape (N, D), row-major order."""
    coords = np.unravel_index(np.arange(spec.N), spec.shape)
    return np.stack(coords, axis=1)


def write_spin_csv(config: SpinConfig, spec: LatticeSpec, path) -> None:
    """Dump (site coordinates, sx, sy, sz) as CSV for external consumers."""
    if config.N != spec.N:
        raise ValueError(f"config has {config.N} sites, lattice expects {spec.N}")
    coords = site_coordinates(spec)
    axis_names = ["x", "y", "z"][: spec.D]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(axis_names + ["sx", "sy", "sz"]) + "\n")
        for i in range(config.N):
            cells = [str(c) for c in coords[i]]
            cells += [format(v, ".17g") for v in (config.sx[i], config.sy[i], config.sz[i])]
            fh.write(",".join(cells) + "\n")
