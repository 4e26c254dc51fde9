"""File formats: dataset CSV, prediction CSV, model document, scene config.

All text formats are plain ASCII.  Datasets use the header `x,y,value_db`
with 9 significant digits; predictions add a `variance` column.  Model and
metadata files are `key = value` documents with natural-domain parameters at
12 significant digits.  Readers accept LF and CRLF and report parse errors
with a line number.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParseError
from .field_sim import FieldDataset, SimConfig
from .geometry import (
    GridSpec,
    RoomConfig,
    SensorArray,
    SourceSpec,
    default_sensors,
)
from .kernels import KernelSpec, spec_from_natural
from .meanfn import MeanSpec, basis_mean, zero_mean

DATASET_HEADER = "x,y,value_db"
PREDICTION_HEADER = "x,y,value_db,variance"
MODEL_FORMAT = "emfield-model/1"


def _fmt(v: float, digits: int = 9) -> str:
    return f"{float(v):.{digits}g}"


# -- key = value documents ---------------------------------------------------


def parse_kv(text: str, path=None) -> dict:
    """Parse `key = value` lines; '#' starts a comment; blank lines skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ParseError("empty key", path, lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", path, lineno)
        out[key] = value.strip()
    return out


def format_kv(pairs) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def _kv_float(kv: dict, key: str, path=None) -> float:
    try:
        return float(kv[key])
    except KeyError:
        raise ParseError(f"missing key {key!r}", path)
    except ValueError:
        raise ParseError(f"key {key!r} is not a number: {kv[key]!r}", path)


# -- dataset CSV -------------------------------------------------------------


def dataset_to_csv(ds: FieldDataset) -> str:
    lines = [DATASET_HEADER]
    for (x, y), v in zip(ds.locations, ds.values_db):
        lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(v)}")
    return "\n".join(lines) + "\n"


def meta_path(path: str) -> str:
    return str(path) + ".meta"


def sim_to_kv(sim: SimConfig, kind: str) -> str:
    room = sim.room
    pairs = [
        ("kind", kind),
        ("room.width_m", _fmt(room.width_m, 12)),
        ("room.depth_m", _fmt(room.depth_m, 12)),
        ("room.height_m", _fmt(room.height_m, 12)),
        ("room.rel_permittivity", _fmt(room.rel_permittivity, 12)),
        ("room.conductivity", _fmt(room.conductivity, 12)),
        ("room.frequency_hz", _fmt(room.frequency_hz, 12)),
        ("room.attenuation_exponent", _fmt(room.attenuation_exponent, 12)),
        ("source.index", str(sim.source.index)),
        ("source.x", _fmt(sim.source.position[0], 12)),
        ("source.y", _fmt(sim.source.position[1], 12)),
        ("max_reflections", str(sim.max_reflections)),
        ("tx_power_dbm", _fmt(sim.tx_power_dbm, 12)),
        ("noise_std_db", _fmt(sim.noise_std_db, 12)),
        ("rng_seed", str(sim.rng_seed)),
        ("near_field_clip_m", _fmt(sim.near_field_clip_m, 12)),
    ]
    return format_kv(pairs)


def sim_from_kv(kv: dict, path=None) -> tuple[SimConfig, str]:
    room = RoomConfig(
        width_m=_kv_float(kv, "room.width_m", path),
        depth_m=_kv_float(kv, "room.depth_m", path),
        height_m=_kv_float(kv, "room.height_m", path),
        rel_permittivity=_kv_float(kv, "room.rel_permittivity", path),
        conductivity=_kv_float(kv, "room.conductivity", path),
        frequency_hz=_kv_float(kv, "room.frequency_hz", path),
        attenuation_exponent=_kv_float(kv, "room.attenuation_exponent", path),
    )
    source = SourceSpec(
        index=int(_kv_float(kv, "source.index", path)),
        position=(_kv_float(kv, "source.x", path), _kv_float(kv, "source.y", path)),
    )
    sim = SimConfig(
        room=room,
        source=source,
        max_reflections=int(_kv_float(kv, "max_reflections", path)),
        tx_power_dbm=_kv_float(kv, "tx_power_dbm", path),
        noise_std_db=_kv_float(kv, "noise_std_db", path),
        rng_seed=int(_kv_float(kv, "rng_seed", path)),
        near_field_clip_m=_kv_float(kv, "near_field_clip_m", path) if "near_field_clip_m" in kv else 0.0,
    )
    return sim, kv.get("kind", "truth")


def write_dataset(path, ds: FieldDataset) -> None:
    """Write the CSV plus a sibling .meta provenance file when known."""
    with open(path, "w", newline="\n") as fh:
        fh.write(dataset_to_csv(ds))
    if ds.sim is not None:
        with open(meta_path(path), "w", newline="\n") as fh:
            fh.write(sim_to_kv(ds.sim, ds.kind))


def _parse_rows(text: str, path, n_cols: int):
    lines = text.splitlines()
    rows = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != n_cols:
            raise ParseError(f"expected {n_cols} columns, got {len(parts)}", path, lineno)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ParseError(f"non-numeric field in {line!r}", path, lineno)
    return np.array(rows, dtype=float).reshape(-1, n_cols)


def read_dataset(path) -> FieldDataset:
    """Read a dataset CSV (a prediction CSV is accepted, variance dropped)."""
    with open(path, "r", newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", path, 1)
    header = lines[0].strip()
    if header == DATASET_HEADER:
        data = _parse_rows(text, path, 3)
    elif header == PREDICTION_HEADER:
        data = _parse_rows(text, path, 4)
    else:
        raise ParseError(
            f"header must be {DATASET_HEADER!r} (or the prediction variant), got {header!r}",
            path,
            1,
        )
    sim, kind = None, "truth"
    try:
        with open(meta_path(path), "r", newline="") as fh:
            sim, kind = sim_from_kv(parse_kv(fh.read(), meta_path(path)), meta_path(path))
    except FileNotFoundError:
        pass
    return FieldDataset(locations=data[:, :2], values_db=data[:, 2], sim=sim, kind=kind)


def write_predictions(path, locations, mean, variance) -> None:
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    lines = [PREDICTION_HEADER]
    for (x, y), m, v in zip(locations, mean, variance):
        lines.append(f"{_fmt(x)},{_fmt(y)},{_fmt(m)},{_fmt(v)}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_predictions(path):
    """Returns (locations, mean, variance) from a prediction CSV."""
    with open(path, "r", newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or lines[0].strip() != PREDICTION_HEADER:
        raise ParseError(f"header must be {PREDICTION_HEADER!r}", path, 1)
    data = _parse_rows(text, path, 4)
    return data[:, :2], data[:, 2], data[:, 3]


# -- model document ----------------------------------------------------------


@dataclass(eq=False)
class ModelDocument:
    """Parsed model file: specs plus provenance and fit diagnostics."""

    kernel: KernelSpec
    mean: MeanSpec
    data_path: str | None = None
    data_n: int | None = None
    lml: float | None = None
    diagnostics: dict | None = None


def model_to_text(doc: ModelDocument) -> str:
    pairs = [("format", MODEL_FORMAT), ("kernel.family", doc.kernel.family)]
    for name, value in doc.kernel.natural_params().items():
        pairs.append((f"kernel.param.{name}", _fmt(value, 12)))
    pairs.append(("mean.mode", doc.mean.mode))
    if doc.mean.mode == "basis":
        centers = "; ".join(f"{_fmt(x, 12)},{_fmt(y, 12)}" for x, y in doc.mean.centers)
        pairs.append(("mean.centers", centers))
        pairs.append(("mean.prior_mean", ",".join(_fmt(v, 12) for v in doc.mean.prior_mean)))
        rows = "; ".join(",".join(_fmt(v, 12) for v in row) for row in doc.mean.prior_cov)
        pairs.append(("mean.prior_cov", rows))
    if doc.data_path is not None:
        pairs.append(("data.path", doc.data_path))
    if doc.data_n is not None:
        pairs.append(("data.n", str(doc.data_n)))
    if doc.lml is not None:
        pairs.append(("fit.lml", _fmt(doc.lml, 12)))
    for key, value in (doc.diagnostics or {}).items():
        pairs.append((f"fit.{key}", str(value)))
    return format_kv(pairs)


def _parse_points(text: str, path=None) -> np.ndarray:
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(",")
        if len(parts) != 2:
            raise ParseError(f"expected 'x,y' pair, got {chunk!r}", path)
        points.append((float(parts[0]), float(parts[1])))
    return np.array(points, dtype=float)


def model_from_text(text: str, path=None) -> ModelDocument:
    kv = parse_kv(text, path)
    if kv.get("format") != MODEL_FORMAT:
        raise ParseError(f"format must be {MODEL_FORMAT!r}, got {kv.get('format')!r}", path)
    family = kv.get("kernel.family")
    if family is None:
        raise ParseError("missing key 'kernel.family'", path)
    params = {
        key[len("kernel.param."):]: _kv_float(kv, key, path)
        for key in kv
        if key.startswith("kernel.param.")
    }
    try:
        kernel = spec_from_natural(family, params)
    except ConfigurationError as err:
        raise ParseError(str(err), path)
    mode = kv.get("mean.mode", "zero")
    if mode == "zero":
        mean = zero_mean()
    else:
        centers = _parse_points(kv.get("mean.centers", ""), path)
        prior_mean = None
        if "mean.prior_mean" in kv:
            prior_mean = np.array([float(v) for v in kv["mean.prior_mean"].split(",")])
        prior_cov = None
        if "mean.prior_cov" in kv:
            rows = [
                [float(v) for v in row.split(",")]
                for row in kv["mean.prior_cov"].split(";")
                if row.strip()
            ]
            prior_cov = np.array(rows, dtype=float)
        mean = basis_mean(centers=centers if len(centers) else None, prior_mean=prior_mean, prior_cov=prior_cov)
    diagnostics = {
        key[len("fit."):]: kv[key] for key in kv if key.startswith("fit.") and key != "fit.lml"
    }
    return ModelDocument(
        kernel=kernel,
        mean=mean,
        data_path=kv.get("data.path"),
        data_n=int(kv["data.n"]) if "data.n" in kv else None,
        lml=_kv_float(kv, "fit.lml", path) if "fit.lml" in kv else None,
        diagnostics=diagnostics or None,
    )


def write_model(path, doc: ModelDocument) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(model_to_text(doc))


def read_model(path) -> ModelDocument:
    try:
        with open(path, "r", newline="") as fh:
            text = fh.read()
    except FileNotFoundError:
        raise ParseError("model file not found", path)
    return model_from_text(text, path)


# -- scene configuration -----------------------------------------------------


@dataclass(eq=False)
class Scene:
    """Room + grid + sensors (+ optional source) from one config file."""

    room: RoomConfig
    grid: GridSpec
    sensors: SensorArray
    source: SourceSpec | None = None


def scene_from_text(text: str, path=None) -> Scene:
    """Build a scene from key-value text; every key is optional.

    Keys mirror the dataclass fields: room.width_m, grid.x_start, ...,
    sensors.positions ('x,y; x,y; ...'), sensors.ids ('1,2,...'),
    source.index, source.position.
    """
    kv = parse_kv(text, path)

    def get(key, default):
        return float(kv[key]) if key in kv else default

    room = RoomConfig(
        width_m=get("room.width_m", 5.0),
        depth_m=get("room.depth_m", 5.0),
        height_m=get("room.height_m", 2.5),
        rel_permittivity=get("room.rel_permittivity", 5.0),
        conductivity=get("room.conductivity", 0.001),
        frequency_hz=get("room.frequency_hz", 9.0e8),
        attenuation_exponent=get("room.attenuation_exponent", 2.0),
    )
    grid = GridSpec(
        x_start=get("grid.x_start", 0.1),
        x_end=get("grid.x_end", room.width_m - 0.1),
        y_start=get("grid.y_start", 0.1),
        y_end=get("grid.y_end", room.depth_m - 0.1),
        step=get("grid.step", 0.1),
    )
    if "sensors.positions" in kv:
        positions = _parse_points(kv["sensors.positions"], path)
        ids = tuple(
            int(v) for v in kv["sensors.ids"].split(",")
        ) if "sensors.ids" in kv else tuple(range(1, len(positions) + 1))
        sensors = SensorArray(positions=tuple(map(tuple, positions)), ids=ids)
    else:
        sensors = default_sensors()
    sensors.check_inside(room)
    source = None
    if "source.index" in kv and "source.position" not in kv:
        source = SourceSpec.canonical(int(float(kv["source.index"])))
    elif "source.position" in kv:
        pos = _parse_points(kv["source.position"], path)
        source = SourceSpec(index=int(get("source.index", 0)), position=tuple(pos[0]))
    return Scene(room=room, grid=grid, sensors=sensors, source=source)


def read_scene(path) -> Scene:
    with open(path, "r", newline="") as fh:
        return scene_from_text(fh.read(), path)


# -- tables ------------------------------------------------------------------


def selection_table_csv(table) -> str:
    lines = ["dataset_id,model_id,nmse,correlation,failed,winner"]
    for r in table.rows:
        winner = table.winners.get(r.dataset_id) == r.model_id and not r.failed
        lines.append(
            f"{r.dataset_id},{r.model_id},{_fmt(r.nmse)},{_fmt(r.correlation)},"
            f"{int(r.failed)},{int(winner)}"
        )
    return "\n".join(lines) + "\n"


def selection_table_text(table) -> str:
    """Aligned, human-readable rendering of a selection table."""
    header = f"{'dataset':<12} {'model':<10} {'nmse':>12} {'correlation':>12} {'winner':>7}"
    lines = [header, "-" * len(header)]
    for r in table.rows:
        winner = "*" if table.winners.get(r.dataset_id) == r.model_id and not r.failed else ""
        nmse = "failed" if r.failed else f"{r.nmse:.4f}"
        corr = "" if r.failed else f"{r.correlation:.4f}"
        lines.append(f"{r.dataset_id:<12} {r.model_id:<10} {nmse:>12} {corr:>12} {winner:>7}")
    return "\n".join(lines) + "\n"


def sweep_table_csv(rows) -> str:
    lines = ["count,nmse,correlation"]
    for r in rows:
        lines.append(f"{r.count},{_fmt(r.nmse)},{_fmt(r.correlation)}")
    return "\n".join(lines) + "\n"
