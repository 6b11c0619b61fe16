"""Latin hypercube sampling of the solver settings space."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .settings import SETTING_RANGES, SolverSettings

__all__ = ["Dimension", "SampleSpace", "default_space", "latin_hypercube", "latin_hypercube_matrix"]

_SCALES = ("linear", "log10", "integer", "boolean")


@dataclass(frozen=True)
class Dimension:
    name: str
    lower: float
    upper: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in _SCALES:
            raise ValueError(f"unknown scale {self.scale!r}")
        if self.scale != "boolean" and not self.lower <= self.upper:
            raise ValueError(f"{self.name}: lower bound exceeds upper bound")
        if self.scale == "log10" and self.lower <= 0:
            raise ValueError(f"{self.name}: log10 dimensions need positive bounds")

    @property
    def continuous(self) -> bool:
        return self.scale != "boolean"

    def to_unit(self, values) -> np.ndarray:
        """Map natural values onto [0, 1] in the stratification coordinates."""
        v = np.asarray(values, dtype=float)
        lo, hi = self.lower, self.upper
        if self.scale == "log10":
            v, lo, hi = np.log10(v), math.log10(lo), math.log10(hi)
        if self.scale == "boolean":
            return v
        return (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)

    def from_unit(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.scale == "boolean":
            return (u >= 0.5).astype(float)
        if self.scale == "log10":
            lo, hi = math.log10(self.lower), math.log10(self.upper)
            return np.clip(10.0 ** (lo + u * (hi - lo)), self.lower, self.upper)
        v = self.lower + u * (self.upper - self.lower)
        if self.scale == "integer":
            v = np.floor(v + 0.5)
        return np.clip(v, self.lower, self.upper)


@dataclass(frozen=True)
class SampleSpace:
    dimensions: tuple[Dimension, ...]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(d.name for d in self.dimensions)

    def __len__(self):
        return len(self.dimensions)


def default_space() -> SampleSpace:
    """Settings space with the admissible ranges and sampling scales of every setting."""
    return SampleSpace(tuple(Dimension(r.name, r.lower, r.upper, r.scale) for r in SETTING_RANGES))


def _unit_design(space: SampleSpace, n: int, rng: np.random.Generator) -> np.ndarray:
    u = np.empty((n, len(space)))
    for k, dim in enumerate(space.dimensions):
        if dim.continuous:
            strata = rng.permutation(n)
            u[:, k] = (strata + rng.random(n)) / n
        else:
            flags = np.zeros(n)
            flags[: n // 2] = 1.0
            if n % 2:
                flags[-1] = float(rng.random() < 0.5)
            u[:, k] = rng.permutation(flags)
    return u


def latin_hypercube_matrix(space: SampleSpace, n: int, seed: int) -> np.ndarray:
    """``(n, len(space))`` Latin hypercube design in natural units.

    Continuous dimensions place exactly one sample in each of the ``n``
    equiprobable strata of their (log-)scaled range, jittered uniformly inside
    the stratum; integer dimensions are rounded half-up afterwards. Boolean
    dimensions are split evenly and shuffled.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    rng = np.random.default_rng(seed)
    u = _unit_design(space, n, rng)
    return np.column_stack([dim.from_unit(u[:, k]) for k, dim in enumerate(space.dimensions)])


def latin_hypercube(space: SampleSpace | None, n: int, seed: int) -> list[SolverSettings]:
    """Latin hypercube sample of solver settings.

    Dimensions of ``space`` must be named after :class:`SolverSettings` fields;
    settings not covered by the space keep their defaults.
    """
    space = space or default_space()
    values = latin_hypercube_matrix(space, n, seed)
    out = []
    for row in values:
        kwargs = {}
        for dim, v in zip(space.dimensions, row):
            if dim.scale == "boolean":
                kwargs[dim.name] = bool(v)
            elif dim.scale == "integer":
                kwargs[dim.name] = int(v)
            else:
                kwargs[dim.name] = float(v)
        out.append(SolverSettings(**kwargs))
    return out
