import asyncio
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from fastapi import FastAPI, HTTPException
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel, Field, ValidationError

from core import checkpoint
from core.agent import EncoderMode
from core.config import RunConfig, RunMode, with_overrides
from core.diagnostics import CHECKS, run_checks
from core.errors import CheckpointMismatchError
from core.evaluate import EvalReport, evaluate_checkpoint
from core.exporter import ReportExporter
from core.run_store import RunStore

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

VERSION = "1.0.0"
DATA_DIR = Path(os.getenv("PUSHRL_DATA_DIR", "data"))

app = FastAPI(
    title="Push Policy Lab API",
    description="Invariant checks, checkpoint evaluation and run registry for planar push policies",
    version=VERSION
)

# CORS
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Initialize services
exporter = ReportExporter()
run_store = RunStore(DATA_DIR / "runs.db")


# Request models
class CheckRequest(BaseModel):
    only: Optional[List[str]] = None


class EvaluateRequest(BaseModel):
    checkpoint: str = Field(..., min_length=1)
    episodes: int = Field(default=20, ge=1, le=1000)
    encoder: str = Field(default="student", pattern="^(student|expert)$")
    protocol: Optional[str] = Field(default=None, pattern="^(random|orientation)$")
    seed: Optional[int] = None
    # dotted-path config overrides, e.g. {"task.time_limit": 10}
    overrides: Dict[str, Any] = Field(default_factory=dict)


class ExportRequest(BaseModel):
    report: dict
    format: str = Field(..., pattern="^(csv|pdf)$")


# Routes
@app.get("/")
async def root():
    """Health check and API info"""
    return {
        "status": "online",
        "service": "Push Policy Lab API",
        "version": VERSION,
        "features": ["check", "evaluate", "runs", "export_csv", "export_pdf"]
    }


@app.get("/health")
async def health_check():
    return {
        "status": "healthy",
        "data_dir": str(DATA_DIR),
        "runs": run_store.count_runs(),
        "checks": sorted(CHECKS),
        "version": VERSION
    }


@app.post("/api/check")
async def check(request: CheckRequest):
    """
    Run the invariant suite (gradient checks, reward oracles, physics analytics)
    Responds 500 with the full report when any check fails
    """
    unknown = [name for name in (request.only or []) if name not in CHECKS]
    if unknown:
        raise HTTPException(status_code=422, detail=f"Unknown checks: {', '.join(unknown)}")

    report = await asyncio.to_thread(run_checks, request.only)
    if not report.passed:
        failed = [c.name for c in report.checks if not c.passed]
        return JSONResponse(
            status_code=500,
            content={
                "success": False,
                "error": f"Invariant checks failed: {', '.join(failed)}",
                "report": report.model_dump()
            }
        )
    return {"success": True, "report": report.model_dump()}


@app.post("/api/evaluate")
async def evaluate(request: EvaluateRequest):
    """Evaluate a checkpoint with the config stored in its metadata"""
    path = Path(request.checkpoint)
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"Checkpoint not found: {request.checkpoint}")

    _, metadata, _, _ = checkpoint.read_header(path)
    config = RunConfig.model_validate(metadata.get("config", {}))
    try:
        config = with_overrides(config, **{
            "mode": RunMode.EVAL.value,
            "eval.episodes": request.episodes,
            "eval.encoder": request.encoder,
            "eval.protocol": request.protocol,
            "eval.seed": request.seed,
            **request.overrides,
        })
    except KeyError as e:
        raise HTTPException(status_code=422, detail=f"Unknown config key: {e}")

    report = await asyncio.to_thread(
        evaluate_checkpoint, path, config, None, None, EncoderMode(request.encoder)
    )
    summary = {
        "controller": report.controller,
        "encoder": report.encoder,
        "protocol": report.protocol,
        "episodes": report.episodes,
        "criteria": [c.model_dump() for c in report.criteria],
    }
    run_id = run_store.save_run("eval", config.ablation.value, config.eval.seed, str(path.parent), summary)
    logger.info(f"✓ Evaluation {run_id} stored")

    return {
        "success": True,
        "run_id": run_id,
        "report": report.model_dump(mode="json")
    }


@app.post("/api/export")
async def export_report(request: ExportRequest):
    """Export an evaluation report to .csv or .pdf"""
    report = EvalReport.model_validate(request.report)
    filename = f"report_{report.controller}_{report.ablation}"

    if request.format == "csv":
        return StreamingResponse(
            iter([exporter.export_to_csv(report)]),
            media_type="text/csv",
            headers={"Content-Disposition": f"attachment; filename={filename}.csv"}
        )

    try:
        buffer = exporter.export_to_pdf(report)
    except Exception as e:
        raise HTTPException(status_code=500, detail=f"Export failed: {str(e)}")
    return StreamingResponse(
        buffer,
        media_type="application/pdf",
        headers={"Content-Disposition": f"attachment; filename={filename}.pdf"}
    )


# Run registry
@app.get("/api/runs")
async def list_runs(kind: Optional[str] = None, limit: int = 50, offset: int = 0):
    """
    List registered runs, newest first

    Query params:
    - kind: train | eval | ablation
    - limit: Max runs to return (default 50)
    - offset: Number to skip for pagination (default 0)
    """
    return {
        "success": True,
        "runs": run_store.list_runs(kind, limit=limit, offset=offset),
        "total": run_store.count_runs(kind),
        "limit": limit,
        "offset": offset
    }


@app.get("/api/runs/{run_id}")
async def get_run(run_id: str):
    run = run_store.get_run(run_id)
    if run is None:
        raise HTTPException(status_code=404, detail="Run not found")
    return {"success": True, "run": run}


@app.delete("/api/runs/{run_id}")
async def delete_run(run_id: str):
    if not run_store.delete_run(run_id):
        raise HTTPException(status_code=404, detail="Run not found")
    return {"success": True, "message": "Run deleted successfully"}


# Error handlers
@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc):
    """Custom error response format"""
    return JSONResponse(
        status_code=exc.status_code,
        content={
            "success": False,
            "error": exc.detail
        }
    )


@app.exception_handler(RequestValidationError)
async def request_validation_handler(request, exc):
    return JSONResponse(
        status_code=422,
        content={"success": False, "error": str(exc)}
    )


@app.exception_handler(ValidationError)
async def config_validation_handler(request, exc):
    """Invalid run config or report payload"""
    return JSONResponse(
        status_code=422,
        content={"success": False, "error": str(exc)}
    )


@app.exception_handler(CheckpointMismatchError)
async def checkpoint_mismatch_handler(request, exc):
    logger.warning(f"✗ Checkpoint mismatch: {exc}")
    return JSONResponse(
        status_code=409,
        content={"success": False, "error": str(exc)}
    )


@app.exception_handler(Exception)
async def general_exception_handler(request, exc):
    """Catch-all error handler"""
    logger.exception(f"✗ Unhandled error: {exc}")
    return JSONResponse(
        status_code=500,
        content={
            "success": False,
            "error": "Internal server error. Please try again."
        }
    )


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("main:app", host=os.getenv("HOST", "0.0.0.0"), port=int(os.getenv("PORT", "8000")))
