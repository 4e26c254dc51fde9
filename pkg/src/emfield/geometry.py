"""Room, grid, sensor and source geometry.

Everything downstream (simulator, kernels, fusion service) works on plain
(x, y) coordinates in meters produced here.  All values are immutable after
construction and safe to share across threads.  Only the horizontal plane is
modeled; the room height is carried for provenance but never used.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError

# Fixed transmitter positions 1..16 used throughout the experiments, spread
# over corners, edges and the interior of the default 5x5 room.  All sit on
# grid nodes of the default 0.1 m grid.  Source 2 at (4,4) doubles as a sensor
# position (the hardest case: the receiver sits in the transmitter's near
# field); every other source keeps clear of the 3x3 sensor array.
CANONICAL_SOURCES: tuple[tuple[float, float], ...] = (
    (1.2, 0.8),
    (4.0, 4.0),
    (0.8, 3.8),
    (4.2, 1.2),
    (2.4, 2.6),
    (1.3, 2.4),
    (3.9, 2.3),
    (2.3, 1.1),
    (2.6, 3.9),
    (2.0, 2.0),
    (3.0, 3.0),
    (2.0, 3.0),
    (3.0, 2.0),
    (0.5, 0.5),
    (4.5, 4.5),
    (0.5, 4.5),
)


@dataclass(frozen=True)
class RoomConfig:
    """Rectangular room and the propagation constants tied to it.

    conductivity is carried for provenance only; the simulator's reflection
    model uses rel_permittivity alone.
    """

    width_m: float = 5.0
    depth_m: float = 5.0
    height_m: float = 2.5
    rel_permittivity: float = 5.0
    conductivity: float = 0.001
    frequency_hz: float = 9.0e8
    attenuation_exponent: float = 2.0

    def __post_init__(self):
        if self.width_m <= 0 or self.depth_m <= 0 or self.height_m <= 0:
            raise ConfigurationError("room dimensions must be positive")
        if self.rel_permittivity < 1.0:
            raise ConfigurationError("rel_permittivity must be >= 1")
        if self.frequency_hz <= 0:
            raise ConfigurationError("frequency_hz must be positive")

    def contains(self, p, strict: bool = True) -> bool:
        """True when (x, y) lies inside the room (strictly, by default)."""
        x, y = float(p[0]), float(p[1])
        if strict:
            return 0.0 < x < self.width_m and 0.0 < y < self.depth_m
        return 0.0 <= x <= self.width_m and 0.0 <= y <= self.depth_m


def _axis_count(start: float, end: float, step: float, name: str) -> int:
    span = (end - start) / step
    k = round(span)
    if abs(span - k) > 1e-9:
        raise ConfigurationError(
            f"{name} span {end - start} is not an integer multiple of step {step}"
        )
    return k + 1


@dataclass(frozen=True)
class GridSpec:
    """Regular evaluation grid; axis spans must be integer multiples of step."""

    x_start: float = 0.1
    x_end: float = 4.9
    y_start: float = 0.1
    y_end: float = 4.9
    step: float = 0.1

    def __post_init__(self):
        if self.step <= 0:
            raise ConfigurationError("grid step must be positive")
        if self.x_end < self.x_start or self.y_end < self.y_start:
            raise ConfigurationError("grid end must not precede start")
        # Validate eagerly so a bad spec fails at construction, not first use.
        _axis_count(self.x_start, self.x_end, self.step, "x")
        _axis_count(self.y_start, self.y_end, self.step, "y")

    @property
    def nx(self) -> int:
        return _axis_count(self.x_start, self.x_end, self.step, "x")

    @property
    def ny(self) -> int:
        return _axis_count(self.y_start, self.y_end, self.step, "y")

    @property
    def n_points(self) -> int:
        return self.nx * self.ny


def make_grid(spec: GridSpec) -> np.ndarray:
    """Grid points as an (n, 2) array, row-major with y varying fastest.

    The first point is (x_start, y_start) and the last (x_end, y_end).
    Coordinates are computed as start + i*step, never by accumulation.
    """
    xs = spec.x_start + spec.step * np.arange(spec.nx)
    ys = spec.y_start + spec.step * np.arange(spec.ny)
    return np.column_stack([np.repeat(xs, spec.ny), np.tile(ys, spec.nx)])


def pairwise_dist(A, B) -> np.ndarray:
    """Euclidean distance matrix D[i, j] between point lists A and B."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    return cdist(A, B)


@dataclass(frozen=True)
class SensorArray:
    """Fixed sensor positions with their wire-protocol ids."""

    positions: tuple[tuple[float, float], ...]
    ids: tuple[int, ...]

    def __post_init__(self):
        if len(self.positions) != len(self.ids):
            raise ConfigurationError("sensor positions and ids must pair up")
        if len(set(self.ids)) != len(self.ids):
            raise ConfigurationError("sensor ids must be unique")

    def __len__(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=float)

    def check_inside(self, room: RoomConfig) -> None:
        for p in self.positions:
            if not room.contains(p):
                raise ConfigurationError(f"sensor at {p} is not inside the room")


def default_sensors() -> SensorArray:
    """3x3 sensor layout at x, y in {1.0, 2.5, 4.0}, ids 1..9."""
    coords = (1.0, 2.5, 4.0)
    positions = tuple((x, y) for x in coords for y in coords)
    return SensorArray(positions=positions, ids=tuple(range(1, 10)))


@dataclass(frozen=True)
class SourceSpec:
    """Transmitter position; index 1..16 selects a canonical layout entry.

    Index 0 marks an ad-hoc position supplied directly by the caller.
    """

    index: int
    position: tuple[float, float]

    def __post_init__(self):
        if self.index < 0:
            raise ConfigurationError("source index must be >= 0")

    @staticmethod
    def canonical(index: int) -> "SourceSpec":
        if not 1 <= index <= len(CANONICAL_SOURCES):
            raise ConfigurationError(
                f"canonical source index must be 1..{len(CANONICAL_SOURCES)}, got {index}"
            )
        return SourceSpec(index=index, position=CANONICAL_SOURCES[index - 1])
