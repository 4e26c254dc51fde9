"""HTTP service and the in-process handlers behind it.

Each handler is a plain function from request model to response model; the
FastAPI endpoints and the CLI both call them, so local and remote runs go
through identical code.  EmfieldError subclasses map to an error body with
a `kind` the client turns into an exit code.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .. import __version__, gp, hyperopt, storage
from ..errors import ConfigurationError, DataError, EmfieldError, NumericalError, ProtocolError
from ..evalsel import (
    Protocol,
    ScenarioConfig,
    SweepConfig,
    build_canonical_scenarios,
    evaluate,
    select_model,
    sensor_sweep,
)
from ..field_sim import generate_dataset
from ..geometry import make_grid
from ..kernels import default_spec, sample_gp
from ..meanfn import zero_mean
from ..storage import ModelDocument, model_from_text, model_to_text
from . import schemas


def error_kind(exc: EmfieldError) -> tuple[str, int]:
    """(kind, http status) for an error; kind drives the CLI exit code."""
    if isinstance(exc, NumericalError):
        return "numerical", 500
    if isinstance(exc, (DataError, ProtocolError)):
        return "data", 400
    return "usage", 422


def handle_simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
    sim = req.to_sim()
    points = make_grid(req.grid.to_spec())
    ds = generate_dataset(sim, points, noisy=req.noisy, kind=req.kind)
    return schemas.SimulateResponse(
        dataset=schemas.DatasetPayload.from_dataset(ds),
        n=len(ds.values_db),
        meta=storage.sim_to_kv(sim, ds.kind),
    )


def handle_train(req: schemas.TrainRequest) -> schemas.TrainResponse:
    ds = req.dataset.to_dataset()
    mean = schemas.mean_spec_from(req.mean)
    if req.kernel not in schemas.FAMILIES:
        raise ConfigurationError(f"kernel family must be one of {schemas.FAMILIES}, got {req.kernel!r}")
    result = hyperopt.optimize(
        ds.locations,
        ds.values_db,
        req.kernel,
        mean=mean,
        prior=hyperopt.HyperPrior(std=req.prior_std),
        restarts=req.restarts,
        seed=req.seed,
        max_iter=req.max_iter,
    )
    model = gp.fit(ds.locations, ds.values_db, result.kernel, mean)
    best = min((t for t in result.restarts if not t.failed), key=lambda t: t.objective)
    diagnostics = {
        "restarts": str(req.restarts),
        "seed": str(req.seed),
        "best_restart": str(best.restart),
        "iterations": str(best.iterations),
        "grad_norm": f"{best.final_grad_norm:.3e}",
        "converged": "yes" if best.converged else "no",
    }
    doc = ModelDocument(
        kernel=result.kernel,
        mean=mean,
        data_path=req.data_path or "(inline)",
        data_n=len(ds.values_db),
        lml=model.lml,
        diagnostics=diagnostics,
    )
    return schemas.TrainResponse(
        model_text=model_to_text(doc),
        family=result.kernel.family,
        params={k: float(v) for k, v in result.kernel.natural_params().items()},
        lml=float(model.lml),
        converged=best.converged,
        diagnostics=hyperopt.diagnostics_lines(result),
    )


def handle_predict(req: schemas.PredictRequest) -> schemas.PredictResponse:
    doc = model_from_text(req.model_text)
    train = req.train.to_dataset()
    model = gp.fit(train.locations, train.values_db, doc.kernel, doc.mean)
    points = req.points.to_array()
    pred = gp.predict(model, points, include_noise=req.include_noise)
    return schemas.PredictResponse(
        x=[float(v) for v in points[:, 0]],
        y=[float(v) for v in points[:, 1]],
        mean=[float(v) for v in pred.mean],
        variance=[float(v) for v in pred.variance],
    )


def handle_evaluate(req: schemas.EvaluateRequest) -> schemas.EvaluateResponse:
    report = evaluate(np.asarray(req.truth, dtype=float), np.asarray(req.predicted, dtype=float))
    corr = None if np.isnan(report.correlation) else float(report.correlation)
    return schemas.EvaluateResponse(
        mse=report.mse,
        rmse=report.rmse,
        nmse_mean=report.nmse_mean,
        nmse_range=report.nmse_range,
        nrmse_mean=report.nrmse_mean,
        nrmse_range=report.nrmse_range,
        correlation=corr,
        n_points=report.n_points,
        report="\n".join(report.lines()) + "\n",
    )


def handle_select(req: schemas.SelectRequest) -> schemas.SelectResponse:
    cfg = ScenarioConfig(
        max_reflections=req.max_reflections,
        noise_std_db=req.noise_std_db,
        n_train=req.n_train,
        seed=req.seed,
    )
    scenarios = build_canonical_scenarios(cfg, indices=req.source_indices)
    candidates = [default_spec(f) for f in req.families]
    protocol = Protocol(restarts=req.restarts, seed=req.seed)
    table = select_model(scenarios, candidates, schemas.mean_spec_from(req.mean), protocol)
    rows = [
        schemas.SelectRowPayload(
            dataset_id=r.dataset_id,
            model_id=r.model_id,
            nmse=float(r.nmse),
            correlation=float(r.correlation),
            failed=r.failed,
            message=r.message,
        )
        for r in table.rows
    ]
    return schemas.SelectResponse(
        rows=rows,
        winners=dict(table.winners),
        csv=storage.selection_table_csv(table),
        table=storage.selection_table_text(table),
    )


def handle_sweep(req: schemas.SweepRequest) -> schemas.SweepResponse:
    cfg = SweepConfig(
        source=req.source.to_spec(),
        kernel_family=req.kernel,
        mean=schemas.mean_spec_from(req.mean),
        scenario=ScenarioConfig(
            max_reflections=req.max_reflections,
            noise_std_db=req.noise_std_db,
            seed=req.seed,
        ),
        protocol=Protocol(restarts=req.restarts, seed=req.seed),
        optimize_hypers=req.optimize_hypers,
    )
    rows = sensor_sweep(cfg, counts=tuple(req.counts), seed=req.seed)
    return schemas.SweepResponse(
        rows=[
            schemas.SweepRowPayload(count=r.count, nmse=float(r.nmse), correlation=float(r.correlation))
            for r in rows
        ],
        csv=storage.sweep_table_csv(rows),
    )


def draws_csv(xs: np.ndarray, draws: np.ndarray) -> str:
    header = "x," + ",".join(f"draw_{i}" for i in range(draws.shape[0]))
    lines = [header]
    for j, x in enumerate(xs):
        lines.append(",".join([f"{x:.9g}"] + [f"{draws[i, j]:.9g}" for i in range(draws.shape[0])]))
    return "\n".join(lines) + "\n"


def handle_sample(req: schemas.SampleRequest) -> schemas.SampleResponse:
    if req.n_points < 2:
        raise ConfigurationError("n_points must be >= 2")
    spec = schemas.kernel_spec_from(req.kernel, req.params, n_dims=1)
    xs = np.linspace(req.x_start, req.x_end, req.n_points)
    points = xs[:, None]
    if req.obs_x is not None:
        if req.obs_value is None or len(req.obs_value) != len(req.obs_x):
            raise ConfigurationError("conditioning needs matching obs_x and obs_value lists")
        model = gp.fit(
            np.asarray(req.obs_x, dtype=float)[:, None],
            np.asarray(req.obs_value, dtype=float),
            spec,
            zero_mean(),
        )
        draws = gp.sample_predictive(model, points, req.n_draws, req.seed)
    else:
        draws = sample_gp(spec, 0.0, points, req.n_draws, req.seed)
    return schemas.SampleResponse(
        x=[float(v) for v in xs],
        draws=[[float(v) for v in row] for row in draws],
        csv=draws_csv(xs, draws),
    )


def create_app(fusion=None) -> FastAPI:
    """Build the HTTP app; optionally expose a running fusion service's stats."""
    app = FastAPI(title="emfield", version=__version__)
    app.state.fusion = fusion

    @app.exception_handler(EmfieldError)
    async def on_emfield_error(request: Request, exc: EmfieldError):
        kind, status = error_kind(exc)
        return JSONResponse(status_code=status, content={"error": {"kind": kind, "message": str(exc)}})

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest):
        return handle_simulate(req)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        return handle_train(req)

    @app.post("/predict", response_model=schemas.PredictResponse)
    def predict(req: schemas.PredictRequest):
        return handle_predict(req)

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate_(req: schemas.EvaluateRequest):
        return handle_evaluate(req)

    @app.post("/select-model", response_model=schemas.SelectResponse)
    def select(req: schemas.SelectRequest):
        return handle_select(req)

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        return handle_sweep(req)

    @app.post("/sample-prior", response_model=schemas.SampleResponse)
    def sample(req: schemas.SampleRequest):
        return handle_sample(req)

    @app.get("/fusion/stats", response_class=PlainTextResponse)
    def fusion_stats(request: Request):
        service = request.app.state.fusion
        if service is None:
            return PlainTextResponse("no fusion service attached\n", status_code=404)
        return service.stats_text()

    return app
