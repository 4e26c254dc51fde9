"""Request/response models for the HTTP service.

These mirror the core config dataclasses closely enough that the CLI can
drive either the in-process handlers or a remote server with the same
payloads.  Converters to the core types live here so the handlers stay
thin.
"""

from __future__ import annotations

import numpy as np
from pydantic import BaseModel, Field

from ..errors import ConfigurationError
from ..field_sim import FieldDataset, SimConfig
from ..geometry import GridSpec, RoomConfig, SourceSpec
from ..kernels import FAMILIES, default_spec, spec_from_natural
from ..meanfn import MeanSpec, basis_mean, zero_mean

MEAN_MODES = ("zero", "basis")


class RoomPayload(BaseModel):
    width_m: float = 5.0
    depth_m: float = 5.0
    height_m: float = 2.5
    rel_permittivity: float = 5.0
    conductivity: float = 0.001
    frequency_hz: float = 9.0e8
    attenuation_exponent: float = 2.0

    def to_config(self) -> RoomConfig:
        return RoomConfig(**self.model_dump())


class GridPayload(BaseModel):
    x_start: float = 0.1
    x_end: float = 4.9
    y_start: float = 0.1
    y_end: float = 4.9
    step: float = 0.1

    def to_spec(self) -> GridSpec:
        return GridSpec(**self.model_dump())


class SourcePayload(BaseModel):
    """Either a canonical index (1-based) or an explicit position."""

    index: int = 0
    position: tuple[float, float] | None = None

    def to_spec(self) -> SourceSpec:
        if self.position is not None:
            return SourceSpec(index=self.index, position=tuple(self.position))
        if self.index < 1:
            raise ConfigurationError("source needs a canonical index >= 1 or a position")
        return SourceSpec.canonical(self.index)


class PointsPayload(BaseModel):
    x: list[float]
    y: list[float]

    def to_array(self) -> np.ndarray:
        if len(self.x) != len(self.y):
            raise ConfigurationError("points x and y lengths differ")
        return np.column_stack([self.x, self.y])


class DatasetPayload(BaseModel):
    x: list[float]
    y: list[float]
    value_db: list[float]
    kind: str = "train"

    @classmethod
    def from_dataset(cls, ds: FieldDataset) -> "DatasetPayload":
        return cls(
            x=[float(v) for v in ds.locations[:, 0]],
            y=[float(v) for v in ds.locations[:, 1]],
            value_db=[float(v) for v in ds.values_db],
            kind=ds.kind,
        )

    def to_dataset(self, sim: SimConfig | None = None) -> FieldDataset:
        if not len(self.x) == len(self.y) == len(self.value_db):
            raise ConfigurationError("dataset column lengths differ")
        return FieldDataset(
            locations=np.column_stack([self.x, self.y]),
            values_db=np.asarray(self.value_db, dtype=float),
            sim=sim,
            kind=self.kind,
        )


def mean_spec_from(mode: str) -> MeanSpec:
    if mode == "zero":
        return zero_mean()
    if mode == "basis":
        return basis_mean()
    raise ConfigurationError(f"mean mode must be one of {MEAN_MODES}, got {mode!r}")


def kernel_spec_from(family: str, params: dict | None, n_dims: int = 2):
    if family not in FAMILIES:
        raise ConfigurationError(f"kernel family must be one of {FAMILIES}, got {family!r}")
    if params:
        base = {name: value for name, value in default_spec(family, n_dims).natural_params().items()}
        base.update({k: float(v) for k, v in params.items()})
        return spec_from_natural(family, base)
    return default_spec(family, n_dims)


# -- simulate ----------------------------------------------------------------


class SimulateRequest(BaseModel):
    source: SourcePayload
    seed: int
    room: RoomPayload = Field(default_factory=RoomPayload)
    grid: GridPayload = Field(default_factory=GridPayload)
    max_reflections: int = 3
    tx_power_dbm: float = 0.0
    noise_std_db: float = 0.5
    near_field_clip_m: float = 0.05
    noisy: bool = True
    kind: str | None = None

    def to_sim(self) -> SimConfig:
        return SimConfig(
            room=self.room.to_config(),
            source=self.source.to_spec(),
            max_reflections=self.max_reflections,
            tx_power_dbm=self.tx_power_dbm,
            noise_std_db=self.noise_std_db,
            rng_seed=self.seed,
            near_field_clip_m=self.near_field_clip_m,
        )


class SimulateResponse(BaseModel):
    dataset: DatasetPayload
    n: int
    meta: str


# -- train / predict ---------------------------------------------------------


class TrainRequest(BaseModel):
    dataset: DatasetPayload
    seed: int
    kernel: str = "matern32"
    mean: str = "zero"
    restarts: int = 2
    prior_std: float = 3.0
    max_iter: int = 200
    data_path: str | None = None


class TrainResponse(BaseModel):
    model_text: str
    family: str
    params: dict[str, float]
    lml: float
    converged: bool
    diagnostics: list[str]


class PredictRequest(BaseModel):
    model_text: str
    train: DatasetPayload
    points: PointsPayload
    include_noise: bool = False


class PredictResponse(BaseModel):
    x: list[float]
    y: list[float]
    mean: list[float]
    variance: list[float]


# -- evaluate ----------------------------------------------------------------


class EvaluateRequest(BaseModel):
    truth: list[float]
    predicted: list[float]


class EvaluateResponse(BaseModel):
    mse: float
    rmse: float
    nmse_mean: float
    nmse_range: float
    nrmse_mean: float
    nrmse_range: float
    correlation: float | None
    n_points: int
    report: str


# -- selection / sweep -------------------------------------------------------


class SelectRequest(BaseModel):
    seed: int
    source_indices: list[int] = Field(default_factory=lambda: list(range(1, 17)))
    families: list[str] = Field(default_factory=lambda: list(FAMILIES))
    mean: str = "zero"
    restarts: int = 2
    noise_std_db: float = 0.5
    max_reflections: int = 3
    n_train: int = 144


class SelectRowPayload(BaseModel):
    dataset_id: str
    model_id: str
    nmse: float
    correlation: float
    failed: bool
    message: str


class SelectResponse(BaseModel):
    rows: list[SelectRowPayload]
    winners: dict[str, str]
    csv: str
    table: str


class SweepRequest(BaseModel):
    source: SourcePayload
    seed: int
    counts: list[int] = Field(default_factory=lambda: [9, 30, 100])
    kernel: str = "matern32"
    mean: str = "zero"
    optimize_hypers: bool = True
    restarts: int = 2
    noise_std_db: float = 0.5
    max_reflections: int = 3


class SweepRowPayload(BaseModel):
    count: int
    nmse: float
    correlation: float


class SweepResponse(BaseModel):
    rows: list[SweepRowPayload]
    csv: str


# -- prior/posterior draws ---------------------------------------------------


class SampleRequest(BaseModel):
    seed: int
    kernel: str = "se"
    params: dict[str, float] | None = None
    n_draws: int = 5
    x_start: float = 0.0
    x_end: float = 5.0
    n_points: int = 200
    obs_x: list[float] | None = None
    obs_value: list[float] | None = None


class SampleResponse(BaseModel):
    x: list[float]
    draws: list[list[float]]
    csv: str


class ErrorBody(BaseModel):
    kind: str
    message: str
