"""Synthetic multipath field generator.

Free-space power-law path loss plus specular wall reflections, modeled by
mirror images of the transmitter.  Image contributions are combined in power
(not complex amplitude), which keeps the field smooth; each wall bounce
scales the amplitude by the normal-incidence Fresnel magnitude of the wall
material, so a k-bounce image carries coefficient Gamma^k.

All functions are pure; the only randomness is the additive observation
noise in generate_dataset, drawn from a per-dataset seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError, DataError, SingularityError
from .geometry import RoomConfig, SourceSpec, pairwise_dist

# Values are clamped here to keep training targets bounded near deep nulls.
DB_FLOOR = -120.0


def fresnel_gamma(rel_permittivity: float) -> float:
    """Normal-incidence reflection magnitude (sqrt(er)-1)/(sqrt(er)+1)."""
    root = math.sqrt(rel_permittivity)
    return (root - 1.0) / (root + 1.0)


@dataclass(frozen=True)
class SimConfig:
    """Generator settings for one source in one room.

    near_field_clip_m > 0 clamps every image distance from below, so points
    arbitrarily close to (or exactly on) the source evaluate to the finite
    value at the clip radius instead of raising.  0 disables clipping and
    restores the strict singularity contract.
    """

    room: RoomConfig
    source: SourceSpec
    max_reflections: int = 3
    tx_power_dbm: float = 0.0
    noise_std_db: float = 0.5
    rng_seed: int = 0
    near_field_clip_m: float = 0.0

    def __post_init__(self):
        if not 0 <= self.max_reflections <= 3:
            raise ConfigurationError("max_reflections must be in 0..3")
        if self.noise_std_db < 0:
            raise ConfigurationError("noise_std_db must be >= 0")
        if self.near_field_clip_m < 0:
            raise ConfigurationError("near_field_clip_m must be >= 0")


@dataclass
class FieldDataset:
    """Paired locations and field values in dB, with generator provenance."""

    locations: np.ndarray
    values_db: np.ndarray
    sim: SimConfig | None = None
    kind: str = "truth"

    def __post_init__(self):
        self.locations = np.atleast_2d(np.asarray(self.locations, dtype=float))
        self.values_db = np.asarray(self.values_db, dtype=float)
        if len(self.locations) != len(self.values_db):
            raise DataError(
                f"{len(self.locations)} locations vs {len(self.values_db)} values"
            )
        if not np.all(np.isfinite(self.values_db)):
            raise DataError("field values must be finite")
        if self.kind not in ("train", "truth", "sensor"):
            raise DataError(f"unknown dataset kind {self.kind!r}")

    def __len__(self) -> int:
        return len(self.values_db)


def _mirror_positions(p: tuple[float, float], room: RoomConfig):
    x, y = p
    return (
        (-x, y),
        (2.0 * room.width_m - x, y),
        (x, -y),
        (x, 2.0 * room.depth_m - y),
    )


def _pos_key(p):
    return (round(p[0], 9), round(p[1], 9))


def image_sources(room: RoomConfig, source: SourceSpec, order: int):
    """Mirror images of the source up to `order` wall bounces.

    Returns a list of ((x, y), coefficient) pairs, the source itself first
    with coefficient 1.  Positions reachable by several reflection sequences
    appear once, with the coefficient of the shortest sequence.
    """
    if not 0 <= order <= 3:
        raise ConfigurationError("reflection order must be in 0..3")
    if not room.contains(source.position):
        raise ConfigurationError(f"source {source.position} is not inside the room")
    gamma = fresnel_gamma(room.rel_permittivity)
    images = [(tuple(map(float, source.position)), 1.0)]
    seen = {_pos_key(source.position)}
    frontier = [images[0][0]]
    for k in range(1, order + 1):
        coeff = gamma**k
        nxt = []
        for pos in frontier:
            for mirrored in _mirror_positions(pos, room):
                key = _pos_key(mirrored)
                if key in seen:
                    continue
                seen.add(key)
                nxt.append(mirrored)
                images.append((mirrored, coeff))
        frontier = nxt
    return images


def field_at_points(cfg: SimConfig, pts) -> np.ndarray:
    """Noiseless field value in dB at each point (vectorized)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    for i, p in enumerate(pts):
        if not cfg.room.contains(p):
            raise ConfigurationError(f"point index {i} at {tuple(p)} is outside the room")
    images = image_sources(cfg.room, cfg.source, cfg.max_reflections)
    positions = np.array([pos for pos, _ in images])
    coeffs = np.array([c for _, c in images])
    d = pairwise_dist(pts, positions)
    if cfg.near_field_clip_m > 0:
        d = np.maximum(d, cfg.near_field_clip_m)
    else:
        hits = np.argwhere(d < 1e-12)
        if hits.size:
            i = int(hits[0][0])
            raise SingularityError(
                f"point index {i} at {tuple(pts[i])} coincides with a source image"
            )
    power = (coeffs[None, :] ** 2 * d ** (-cfg.room.attenuation_exponent)).sum(axis=1)
    values = cfg.tx_power_dbm + 10.0 * np.log10(power)
    return np.maximum(values, DB_FLOOR)


def field_at_point(cfg: SimConfig, p) -> float:
    return float(field_at_points(cfg, [p])[0])


def generate_dataset(cfg: SimConfig, locations, noisy: bool, kind: str | None = None) -> FieldDataset:
    """Evaluate the field at `locations`, optionally adding seeded noise.

    With the same cfg (seed included) the output is bit-identical across runs.
    """
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    values = field_at_points(cfg, locations)
    if noisy:
        rng = np.random.default_rng(cfg.rng_seed)
        values = values + rng.normal(0.0, cfg.noise_std_db, size=len(values))
    if kind is None:
        kind = "train" if noisy else "truth"
    return FieldDataset(locations=locations, values_db=values, sim=cfg, kind=kind)


def with_seed(cfg: SimConfig, rng_seed: int) -> SimConfig:
    """Copy of cfg with a different noise seed."""
    return replace(cfg, rng_seed=rng_seed)
