"""Command-line front end.

Every subcommand builds a request model and runs it through the service
handlers — in-process by default, or against a remote server via --server.
File I/O stays on the client side so the service can stay stateless.

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import sys
import threading
import time

import numpy as np

from . import __version__, storage
from .errors import ConfigurationError, DataError, EmfieldError, NumericalError, ProtocolError
from .fusion import MODES, FusionConfig, FusionService
from .hyperopt import HyperPrior
from .kernels import FAMILIES
from .service import app as service_app
from .service import schemas

STOCHASTIC_NOTE = "required; stochastic commands have no wall-clock default"


# -- flag value parsing ------------------------------------------------------


def parse_room(text: str) -> schemas.RoomPayload:
    """'5x5' or '5x5x2.5' (width x depth [x height], meters)."""
    parts = text.lower().split("x")
    if len(parts) not in (2, 3):
        raise ConfigurationError(f"--room wants WIDTHxDEPTH[xHEIGHT], got {text!r}")
    try:
        dims = [float(p) for p in parts]
    except ValueError:
        raise ConfigurationError(f"--room wants numeric dimensions, got {text!r}")
    payload = schemas.RoomPayload(width_m=dims[0], depth_m=dims[1])
    if len(dims) == 3:
        payload.height_m = dims[2]
    return payload


def parse_source(text: str) -> schemas.SourcePayload:
    """A canonical index ('2') or an explicit 'x,y' position."""
    if "," in text:
        parts = text.split(",")
        if len(parts) != 2:
            raise ConfigurationError(f"--source position wants 'x,y', got {text!r}")
        return schemas.SourcePayload(position=(float(parts[0]), float(parts[1])))
    try:
        return schemas.SourcePayload(index=int(text))
    except ValueError:
        raise ConfigurationError(f"--source wants an index or 'x,y', got {text!r}")


def parse_hostport(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigurationError(f"address wants HOST:PORT, got {text!r}")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigurationError(f"port must be an integer, got {port!r}")


def parse_int_list(text: str) -> list[int]:
    """'9,30,100' or ranges '1-16', mixable."""
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk[1:]:
            lo, hi = chunk.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(chunk))
    if not out:
        raise ConfigurationError(f"empty list {text!r}")
    return out


def parse_condition(text: str):
    """'x:value,x:value' pairs for 1-D posterior conditioning."""
    xs, vs = [], []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" not in chunk:
            raise ConfigurationError(f"--condition wants 'x:value' pairs, got {chunk!r}")
        x, v = chunk.split(":", 1)
        xs.append(float(x))
        vs.append(float(v))
    if not xs:
        raise ConfigurationError("--condition has no points")
    return xs, vs


def parse_param_overrides(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigurationError(f"--param wants NAME=VALUE, got {item!r}")
        name, value = item.split("=", 1)
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ConfigurationError(f"--param value must be numeric, got {item!r}")
    return out


def grid_payload(room: schemas.RoomPayload, step: float) -> schemas.GridPayload:
    # grid margin equals one step so sources on walls stay off-grid
    return schemas.GridPayload(
        x_start=step,
        x_end=room.width_m - step,
        y_start=step,
        y_end=room.depth_m - step,
        step=step,
    )


def apply_scene(args) -> storage.Scene | None:
    if not getattr(args, "scene", None):
        return None
    return storage.read_scene(args.scene)


# -- remote/in-process dispatch ----------------------------------------------

ROUTES = {
    "/simulate": (service_app.handle_simulate, schemas.SimulateResponse),
    "/train": (service_app.handle_train, schemas.TrainResponse),
    "/predict": (service_app.handle_predict, schemas.PredictResponse),
    "/evaluate": (service_app.handle_evaluate, schemas.EvaluateResponse),
    "/select-model": (service_app.handle_select, schemas.SelectResponse),
    "/sweep": (service_app.handle_sweep, schemas.SweepResponse),
    "/sample-prior": (service_app.handle_sample, schemas.SampleResponse),
}

_KIND_ERRORS = {"usage": ConfigurationError, "data": DataError, "numerical": NumericalError}


def call(path: str, request, server: str | None):
    handler, resp_cls = ROUTES[path]
    if not server:
        return handler(request)
    import httpx

    url = server.rstrip("/") + path
    try:
        resp = httpx.post(url, json=request.model_dump(), timeout=600.0)
    except httpx.HTTPError as exc:
        raise DataError(f"server request failed: {exc}")
    if resp.status_code >= 400:
        try:
            err = resp.json().get("error", {})
        except ValueError:
            err = {}
        kind = err.get("kind", "data")
        raise _KIND_ERRORS.get(kind, DataError)(err.get("message", f"HTTP {resp.status_code}"))
    return resp_cls.model_validate(resp.json())


# -- subcommands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    scene = apply_scene(args)
    room = parse_room(args.room) if args.room else (
        schemas.RoomPayload(**{
            "width_m": scene.room.width_m,
            "depth_m": scene.room.depth_m,
            "height_m": scene.room.height_m,
            "rel_permittivity": scene.room.rel_permittivity,
            "conductivity": scene.room.conductivity,
            "frequency_hz": scene.room.frequency_hz,
            "attenuation_exponent": scene.room.attenuation_exponent,
        }) if scene else schemas.RoomPayload()
    )
    if args.source:
        source = parse_source(args.source)
    elif scene and scene.source is not None:
        source = schemas.SourcePayload(index=scene.source.index, position=tuple(scene.source.position))
    else:
        raise ConfigurationError("simulate needs --source (or a scene file with one)")
    if args.grid_step is not None:
        grid = grid_payload(room, args.grid_step)
    elif scene:
        g = scene.grid
        grid = schemas.GridPayload(x_start=g.x_start, x_end=g.x_end, y_start=g.y_start, y_end=g.y_end, step=g.step)
    else:
        grid = grid_payload(room, 0.1)
    req = schemas.SimulateRequest(
        source=source,
        seed=args.seed,
        room=room,
        grid=grid,
        max_reflections=args.reflections,
        tx_power_dbm=args.tx_power,
        noise_std_db=args.noise_std,
        near_field_clip_m=args.clip,
        noisy=not args.truth,
        kind="truth" if args.truth else None,
    )
    resp = call("/simulate", req, args.server)
    ds = resp.dataset.to_dataset(sim=req.to_sim())
    storage.write_dataset(args.out, ds)
    print(f"wrote {resp.n} points to {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = storage.read_dataset(args.data)
    req = schemas.TrainRequest(
        dataset=schemas.DatasetPayload.from_dataset(ds),
        seed=args.seed,
        kernel=args.kernel,
        mean=args.mean,
        restarts=args.restarts,
        prior_std=args.prior_std,
        max_iter=args.max_iter,
        data_path=args.data,
    )
    resp = call("/train", req, args.server)
    with open(args.out, "w", newline="\n") as fh:
        fh.write(resp.model_text)
    if args.diagnostics:
        with open(args.diagnostics, "w", newline="\n") as fh:
            fh.write("\n".join(resp.diagnostics) + "\n")
    print(f"kernel = {resp.family}")
    for name, value in resp.params.items():
        print(f"{name} = {value:.6g}")
    print(f"lml = {resp.lml:.9g}")
    print(f"converged = {'yes' if resp.converged else 'no'}")
    print(f"wrote model to {args.out}")
    return 0


def _training_data_for(args, doc_path: str | None):
    import os

    candidates = []
    if args.data:
        candidates.append(args.data)
    elif doc_path and doc_path != "(inline)":
        candidates.append(doc_path)
        candidates.append(os.path.join(os.path.dirname(os.path.abspath(args.model)), doc_path))
    for path in candidates:
        if os.path.exists(path):
            return storage.read_dataset(path)
    raise DataError(
        "training data not found; pass --data or keep the dataset at the path recorded in the model file"
    )


def cmd_predict(args) -> int:
    doc = storage.read_model(args.model)
    train_ds = _training_data_for(args, doc.data_path)
    scene = apply_scene(args)
    room = parse_room(args.room) if args.room else schemas.RoomPayload()
    if args.grid_step is not None:
        grid = grid_payload(room, args.grid_step)
    elif scene:
        g = scene.grid
        grid = schemas.GridPayload(x_start=g.x_start, x_end=g.x_end, y_start=g.y_start, y_end=g.y_end, step=g.step)
    else:
        grid = grid_payload(room, 0.1)
    from .geometry import make_grid

    points = make_grid(grid.to_spec())
    req = schemas.PredictRequest(
        model_text=storage.model_to_text(doc),
        train=schemas.DatasetPayload.from_dataset(train_ds),
        points=schemas.PointsPayload(x=[float(v) for v in points[:, 0]], y=[float(v) for v in points[:, 1]]),
        include_noise=args.include_noise,
    )
    resp = call("/predict", req, args.server)
    storage.write_predictions(args.out, np.column_stack([resp.x, resp.y]), resp.mean, resp.variance)
    print(f"wrote {len(resp.mean)} predictions to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    truth = storage.read_dataset(args.truth)
    pred_path = args.pred
    with open(pred_path, "r", newline="") as fh:
        header = fh.readline().strip()
    if header == storage.PREDICTION_HEADER:
        locations, mean, _var = storage.read_predictions(pred_path)
        pred_values = mean
    else:
        pred_ds = storage.read_dataset(pred_path)
        locations, pred_values = pred_ds.locations, pred_ds.values_db
    if len(pred_values) != len(truth.values_db):
        raise DataError(
            f"truth has {len(truth.values_db)} points, prediction has {len(pred_values)}"
        )
    if not np.allclose(locations, truth.locations, atol=1e-9):
        raise DataError("prediction and truth grids differ")
    req = schemas.EvaluateRequest(
        truth=[float(v) for v in truth.values_db],
        predicted=[float(v) for v in pred_values],
    )
    resp = call("/evaluate", req, args.server)
    sys.stdout.write(resp.report)
    if args.out:
        with open(args.out, "w", newline="\n") as fh:
            fh.write(resp.report)
    return 0


def cmd_select_model(args) -> int:
    req = schemas.SelectRequest(
        seed=args.seed,
        source_indices=parse_int_list(args.sources),
        families=args.kernels.split(","),
        mean=args.mean,
        restarts=args.restarts,
        noise_std_db=args.noise_std,
        max_reflections=args.reflections,
        n_train=args.n_train,
    )
    resp = call("/select-model", req, args.server)
    sys.stdout.write(resp.table)
    with open(args.out, "w", newline="\n") as fh:
        fh.write(resp.csv)
    print(f"wrote table to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    req = schemas.SweepRequest(
        source=parse_source(args.source),
        seed=args.seed,
        counts=parse_int_list(args.sensors),
        kernel=args.kernel,
        mean=args.mean,
        optimize_hypers=not args.no_optimize,
        restarts=args.restarts,
        noise_std_db=args.noise_std,
        max_reflections=args.reflections,
    )
    resp = call("/sweep", req, args.server)
    for row in resp.rows:
        print(f"count={row.count} nmse={row.nmse:.6g} correlation={row.correlation:.6g}")
    with open(args.out, "w", newline="\n") as fh:
        fh.write(resp.csv)
    print(f"wrote table to {args.out}")
    return 0


def cmd_sample_prior(args) -> int:
    obs_x = obs_v = None
    if args.condition:
        obs_x, obs_v = parse_condition(args.condition)
    req = schemas.SampleRequest(
        seed=args.seed,
        kernel=args.kernel,
        params=parse_param_overrides(args.param) or None,
        n_draws=args.draws,
        x_start=args.x_start,
        x_end=args.x_end,
        n_points=args.points,
        obs_x=obs_x,
        obs_value=obs_v,
    )
    resp = call("/sample-prior", req, args.server)
    with open(args.out, "w", newline="\n") as fh:
        fh.write(resp.csv)
    print(f"wrote {len(resp.draws)} draws x {len(resp.x)} points to {args.out}")
    return 0


def cmd_serve(args) -> int:
    scene = apply_scene(args)
    room = parse_room(args.room).to_config() if args.room else (scene.room if scene else None)
    sensors = scene.sensors if scene else None
    if args.model:
        doc = storage.read_model(args.model)
        kernel, mean = doc.kernel, doc.mean
    else:
        kernel = schemas.kernel_spec_from(args.kernel, None)
        mean = schemas.mean_spec_from(args.mean)
    if args.grid_step is not None:
        grid = grid_payload(
            schemas.RoomPayload(width_m=room.width_m, depth_m=room.depth_m) if room else schemas.RoomPayload(),
            args.grid_step,
        ).to_spec()
    elif scene:
        grid = scene.grid
    else:
        grid = schemas.GridPayload().to_spec()
    config = FusionConfig(
        kernel=kernel,
        mean=mean,
        grid=grid,
        sensors=sensors if sensors is not None else FusionConfig().sensors,
        listen=parse_hostport(args.listen),
        publish=parse_hostport(args.publish),
        mode=args.mode,
        quorum=args.quorum,
        partial_timeout_s=args.timeout,
        publish_variance=args.variance,
        refit_interval_s=args.refit_interval,
        refit_restarts=args.restarts,
        refit_seed=args.seed,
        prior=HyperPrior(),
    )
    http_address = parse_hostport(args.http) if args.http else None
    service = FusionService(config)
    service.start()
    host, port = service.bound_address
    print(f"listening on {host}:{port}, publishing to {args.publish}", flush=True)
    http_server = None
    if http_address is not None:
        import uvicorn

        http_host, http_port = http_address
        http_app = service_app.create_app(fusion=service)
        http_server = uvicorn.Server(
            uvicorn.Config(http_app, host=http_host, port=http_port, log_level="warning")
        )
        threading.Thread(target=http_server.run, daemon=True).start()
    try:
        if args.duration is not None:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        if http_server is not None:
            http_server.should_exit = True
        service.stop()
        sys.stdout.write(service.stats_text())
    return 0


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_common(p, server=True):
    if server:
        p.add_argument("--server", help="base URL of a running service; default runs in-process")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="emfield", description="GP field reconstruction pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic field dataset CSV")
    p.add_argument("--source", help="canonical index (1..16) or 'x,y'")
    p.add_argument("--room", help="WIDTHxDEPTH[xHEIGHT] meters (default 5x5)")
    p.add_argument("--grid-step", type=float, help="grid spacing in meters (default 0.1)")
    p.add_argument("--reflections", type=int, default=3, help="image-method reflection order")
    p.add_argument("--noise-std", type=float, default=0.5, help="observation noise std (dB)")
    p.add_argument("--tx-power", type=float, default=0.0, help="transmit power (dBm)")
    p.add_argument("--clip", type=float, default=0.05, help="near-field clip radius (m)")
    p.add_argument("--truth", action="store_true", help="noise-free ground truth")
    p.add_argument("--scene", help="scene config file (room/grid/source)")
    p.add_argument("--seed", type=int, required=True, help=STOCHASTIC_NOTE)
    p.add_argument("--out", required=True, help="output CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="learn hyperparameters and write a model file")
    p.add_argument("--data", required=True, help="training dataset CSV")
    p.add_argument("--kernel", choices=FAMILIES, default="matern32")
    p.add_argument("--mean", choices=schemas.MEAN_MODES, default="zero")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--prior-std", type=float, default=3.0, help="log-domain prior std")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--diagnostics", help="write per-iteration optimizer trace here")
    p.add_argument("--seed", type=int, required=True, help=STOCHASTIC_NOTE)
    p.add_argument("--out", required=True, help="model file path")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="reconstruct a grid from a trained model")
    p.add_argument("--model", required=True, help="model file from train")
    p.add_argument("--data", help="training dataset (default: path recorded in the model)")
    p.add_argument("--room", help="WIDTHxDEPTH[xHEIGHT] meters")
    p.add_argument("--grid-step", type=float, help="grid spacing (default 0.1)")
    p.add_argument("--scene", help="scene config file for the query grid")
    p.add_argument("--include-noise", action="store_true", help="add noise variance to predictions")
    p.add_argument("--out", required=True, help="prediction CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="compare a prediction CSV against truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="also write the report here")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-model", help="score kernel families across sources")
    p.add_argument("--sources", default="1-16", help="canonical source indices, e.g. '1-16' or '2,5'")
    p.add_argument("--kernels", default=",".join(FAMILIES), help="comma-separated families")
    p.add_argument("--mean", choices=schemas.MEAN_MODES, default="zero")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--noise-std", type=float, default=0.5)
    p.add_argument("--reflections", type=int, default=3)
    p.add_argument("--n-train", type=int, default=144)
    p.add_argument("--seed", type=int, required=True, help=STOCHASTIC_NOTE)
    p.add_argument("--out", required=True, help="selection table CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_select_model)

    p = sub.add_parser("sweep", help="NMSE vs sensor count")
    p.add_argument("--source", required=True, help="canonical index or 'x,y'")
    p.add_argument("--sensors", default="9,30,100", help="counts, e.g. '9,30,100'")
    p.add_argument("--kernel", choices=FAMILIES, default="matern32")
    p.add_argument("--mean", choices=schemas.MEAN_MODES, default="zero")
    p.add_argument("--restarts", type=int, default=2)
    p.add_argument("--noise-std", type=float, default=0.5)
    p.add_argument("--reflections", type=int, default=3)
    p.add_argument("--no-optimize", action="store_true", help="skip hyperparameter fitting")
    p.add_argument("--seed", type=int, required=True, help=STOCHASTIC_NOTE)
    p.add_argument("--out", required=True, help="sweep CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="run the streaming fusion center")
    p.add_argument("--listen", required=True, help="UDP HOST:PORT for sensor readings")
    p.add_argument("--publish", required=True, help="UDP HOST:PORT for field frames")
    p.add_argument("--model", help="model file fixing kernel and mean")
    p.add_argument("--kernel", choices=FAMILIES, default="matern32")
    p.add_argument("--mean", choices=schemas.MEAN_MODES, default="zero")
    p.add_argument("--mode", choices=MODES, default="predict-only")
    p.add_argument("--room", help="WIDTHxDEPTH[xHEIGHT] meters")
    p.add_argument("--grid-step", type=float)
    p.add_argument("--scene", help="scene config file (room/grid/sensors)")
    p.add_argument("--quorum", type=int, default=5, help="min readings for a partial frame")
    p.add_argument("--timeout", type=float, default=0.25, help="partial-frame timeout (s)")
    p.add_argument("--variance", action="store_true", help="also publish variance rows")
    p.add_argument("--refit-interval", type=float, default=30.0)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--http", help="HOST:PORT for the HTTP stats/service endpoint")
    p.add_argument("--duration", type=float, help="run this many seconds, then exit")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("sample-prior", help="draw GP prior (or conditioned) curves")
    p.add_argument("--kernel", choices=FAMILIES, default="se")
    p.add_argument("--param", action="append", help="natural-domain override NAME=VALUE")
    p.add_argument("--draws", type=int, default=5)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--x-start", type=float, default=0.0)
    p.add_argument("--x-end", type=float, default=5.0)
    p.add_argument("--condition", help="posterior mode: 'x:value,x:value' observations")
    p.add_argument("--seed", type=int, required=True, help=STOCHASTIC_NOTE)
    p.add_argument("--out", required=True, help="draws CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_sample_prior)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 3
    except (DataError, ProtocolError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except FileNotFoundError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except EmfieldError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
