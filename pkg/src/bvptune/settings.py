"""Solver settings, solver outcomes and the tunable range table."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

__all__ = [
    "SettingRange",
    "SETTING_RANGES",
    "SETTING_NAMES",
    "SolverSettings",
    "SolverOutcome",
    "SettingsRangeError",
]


class SettingsRangeError(ValueError):
    """A solver setting lies outside its admissible range."""


@dataclass(frozen=True)
class SettingRange:
    name: str
    lower: float
    upper: float
    scale: str  # "linear", "log10", "integer", "boolean"
    default: float | int | bool


# Admissible ranges, sampling scales and defaults of the tunable settings.
SETTING_RANGES: tuple[SettingRange, ...] = (
    SettingRange("max_grid_points", 100, 10000, "integer", 1000),
    SettingRange("newton_critical_tolerance", 1e-12, 100.0, "log10", 1.0),
    SettingRange("newton_armijo_probes", 1, 10, "integer", 2),
    SettingRange("newton_max_iterations", 1, 100, "integer", 4),
    SettingRange("newton_tolerance", 1e-12, 1e-2, "log10", 1e-12),
    SettingRange("add_factor", 1.0, 1000.0, "log10", 100.0),
    SettingRange("remove_factor", 0.0, 2.0, "linear", 0.5),
    SettingRange("use_collocation_scaling", 0, 1, "boolean", True),
)

SETTING_NAMES: tuple[str, ...] = tuple(r.name for r in SETTING_RANGES)
_RANGES = {r.name: r for r in SETTING_RANGES}


@dataclass(frozen=True)
class SolverSettings:
    """The eight numerical settings handed to :func:`bvptune.solver.solve_bvp`.

    Construction validates every field against :data:`SETTING_RANGES`;
    out-of-range values raise :class:`SettingsRangeError`.
    """

    max_grid_points: int = 1000
    newton_critical_tolerance: float = 1.0
    newton_armijo_probes: int = 2
    newton_max_iterations: int = 4
    newton_tolerance: float = 1e-12
    add_factor: float = 100.0
    remove_factor: float = 0.5
    use_collocation_scaling: bool = True

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            rng = _RANGES[f.name]
            if rng.scale == "boolean":
                if not isinstance(value, (bool, int)) or value not in (0, 1):
                    raise SettingsRangeError(f"{f.name} must be boolean, got {value!r}")
                object.__setattr__(self, f.name, bool(value))
                continue
            if isinstance(value, bool):
                raise SettingsRangeError(f"{f.name} must be numeric, got {value!r}")
            if rng.scale == "integer":
                if float(value) != int(value):
                    raise SettingsRangeError(f"{f.name} must be an integer, got {value!r}")
                value = int(value)
            else:
                value = float(value)
            if not (math.isfinite(value) and rng.lower <= value <= rng.upper):
                raise SettingsRangeError(
                    f"{f.name}={value!r} outside [{rng.lower:g}, {rng.upper:g}]"
                )
            object.__setattr__(self, f.name, value)

    @classmethod
    def default(cls) -> "SolverSettings":
        return cls()

    def replace(self, **changes) -> "SolverSettings":
        return SolverSettings(**{**asdict(self), **changes})

    def as_dict(self) -> dict:
        return asdict(self)

    def as_vector(self) -> list[float]:
        return [float(getattr(self, name)) for name in SETTING_NAMES]

    @classmethod
    def from_vector(cls, values) -> "SolverSettings":
        """Build settings from a numeric vector ordered like :data:`SETTING_NAMES`.

        Integer fields are rounded half-up, the boolean field is thresholded
        at 0.5 and every value is clipped into its range first.
        """
        kwargs = {}
        for rng, v in zip(SETTING_RANGES, values, strict=True):
            v = min(max(float(v), float(rng.lower)), float(rng.upper))
            if rng.scale == "integer":
                kwargs[rng.name] = int(math.floor(v + 0.5))
            elif rng.scale == "boolean":
                kwargs[rng.name] = v >= 0.5
            else:
                kwargs[rng.name] = v
        return cls(**kwargs)


@dataclass(frozen=True)
class SolverOutcome:
    """The four observed outputs of one solver run."""

    success: bool
    ode_evaluations: int
    grid_points: int
    max_residuum: float

    def __post_init__(self):
        if self.ode_evaluations < 0 or self.grid_points < 0:
            raise ValueError("counters must be nonnegative")
        if math.isnan(self.max_residuum):
            if self.success:
                raise ValueError("a successful run must report a residuum")
        elif self.max_residuum < 0:
            raise ValueError("max_residuum must be nonnegative")
