import logging
from pathlib import Path
from typing import List, Optional

from fastapi import APIRouter, BackgroundTasks, Depends, HTTPException, Request
from pydantic import BaseModel, Field

from ..dependencies import get_job_registry, job_dir, run_job
from ..utils.db import JobRegistry
from ..utils.errors import OrthrusError
from ..utils.orchestrator import ISO_TOLERANCE, parse_campaign_config, report, run_dual_loop

logger = logging.getLogger(__name__)

router = APIRouter()


class ReportRequest(BaseModel):
    runs: List[str] = Field(..., min_length=2)
    tolerance: float = Field(ISO_TOLERANCE, gt=0)
    out_dir: Optional[str] = None


def _campaign_job(config):
    result = run_dual_loop(config)
    if result.failed:
        # the partial campaign stays on disk; surface the failing stage
        raise OrthrusError(f"campaign failed in stage {result.failed_stage}: {result.error}")
    return result.to_dict()


@router.post("/campaign/run")
async def start_campaign(background_tasks: BackgroundTasks,
                         request: Request,
                         registry: JobRegistry = Depends(get_job_registry)):
    config_text = (await request.body()).decode(errors="replace")
    try:
        config = parse_campaign_config(config_text)
    except OrthrusError as e:
        logger.error(f"Rejected campaign config: {e}")
        raise HTTPException(status_code=400, detail=str(e))

    job_id = registry.insert_job("campaign", {"mode": config.mode, "seed": config.seed}, "")
    config.out_dir = job_dir(job_id)
    registry.update_job(job_id, out_dir=str(config.out_dir))
    background_tasks.add_task(run_job, registry, job_id, lambda: _campaign_job(config))
    logger.info(f"Queued campaign job {job_id} (mode {config.mode}, seed {config.seed})")
    return {"job_id": job_id, "status": "queued"}


@router.get("/jobs")
async def list_jobs(kind: Optional[str] = None, registry: JobRegistry = Depends(get_job_registry)):
    return {"jobs": registry.list_jobs(kind)}


@router.get("/jobs/{job_id}")
async def get_job(job_id: str, registry: JobRegistry = Depends(get_job_registry)):
    job = registry.get_job(job_id)
    if job is None:
        raise HTTPException(status_code=404, detail=f"Unknown job {job_id}")
    return job


def _resolve_run(ref: str, registry: JobRegistry) -> Path:
    """A run is either a path to a run.jsonl or the id of a finished job"""
    job = registry.get_job(ref)
    if job is not None:
        return Path(job["out_dir"]) / "run.jsonl"
    return Path(ref)


@router.post("/report")
async def compare_runs(request: ReportRequest, registry: JobRegistry = Depends(get_job_registry)):
    paths = [_resolve_run(ref, registry) for ref in request.runs]
    try:
        return report(paths, request.tolerance, request.out_dir)
    except OrthrusError as e:
        logger.error(f"Report failed: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Unexpected error building report: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to build report: {e}")
