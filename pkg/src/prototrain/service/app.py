"""FastAPI app: each endpoint validates a request model and calls the runner.

Core exceptions map onto structured error payloads whose `kind` field the CLI
translates into exit codes (config -> 2, data -> 3, runtime -> 4).
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..errors import ConfigError, DataError, PrototrainError
from .. import runner
from .schemas import (
    EvalRequest,
    EvalResponse,
    GenerateRequest,
    GenerateResponse,
    HealthResponse,
    ReportRequest,
    ReportResponse,
    SweepRequest,
    SweepResponse,
    TrainRequest,
    TrainResponse,
)

app = FastAPI(title="prototrain", version=__version__)


def _error_response(status: int, kind: str, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=status, content={"detail": {"kind": kind, "message": str(exc)}})


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError):
    return _error_response(400, "config", exc)


@app.exception_handler(DataError)
async def _data_error(request: Request, exc: DataError):
    return _error_response(404, "data", exc)


@app.exception_handler(PrototrainError)
async def _package_error(request: Request, exc: PrototrainError):
    return _error_response(500, "runtime", exc)


@app.exception_handler(ValueError)
async def _value_error(request: Request, exc: ValueError):
    return _error_response(500, "runtime", exc)


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/datasets/generate", response_model=GenerateResponse)
def generate(req: GenerateRequest) -> GenerateResponse:
    info = runner.generate_artifact(
        req.synthetic.to_core(),
        None if req.noise is None else req.noise.to_core(),
        req.out_path,
        verified_fraction=req.verified_fraction,
    )
    return GenerateResponse(**info)


@app.post("/runs/train", response_model=TrainResponse)
def train(req: TrainRequest) -> TrainResponse:
    payload = req.model_dump(mode="json")
    checkpoint_dir = req.out_dir if req.train.checkpoint_every else None
    cfg = req.train.to_core(checkpoint_dir=checkpoint_dir)
    summary = runner.train_artifact(cfg, req.dataset, req.out_dir, payload)
    return TrainResponse(
        out_dir=summary["out_dir"],
        epochs=summary["epochs"],
        final_test_accuracy=summary["final_test_accuracy"],
        final_train_accuracy=summary["final_train_accuracy"],
        noisy_baseline=summary["noisy_baseline"],
        initial_correction_accuracy=summary["initial_correction_accuracy"],
        final_correction_accuracy=summary["final_correction_accuracy"],
        notes=summary["notes"],
        artifacts=summary["artifacts"],
        validated=summary["validated"],
    )


@app.post("/sweeps", response_model=SweepResponse)
def sweep(req: SweepRequest) -> SweepResponse:
    payload = req.model_dump(mode="json")
    out = runner.sweep_artifact(req.to_core(), req.dataset, req.out_dir, payload, threads=req.threads)
    return SweepResponse(**out)


@app.post("/evaluations", response_model=EvalResponse)
def evaluate(req: EvalRequest) -> EvalResponse:
    return EvalResponse(**runner.evaluate_artifact(req.checkpoint, req.dataset))


@app.post("/reports", response_model=ReportResponse)
def report(req: ReportRequest) -> ReportResponse:
    return ReportResponse(**runner.report_artifact(req.run_dir))
