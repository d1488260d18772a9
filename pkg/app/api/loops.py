import logging
from typing import Any, Dict, Optional

from fastapi import APIRouter, BackgroundTasks, Depends, HTTPException
from pydantic import BaseModel, Field

from ..dependencies import get_job_registry, job_dir, run_job
from ..utils.db import JobRegistry
from ..utils.errors import OrthrusError
from ..utils.library import CellLibrary, default_library
from ..utils.orchestrator import ANCHORS, ArraySettings, direction_from_report, system_loop_command, tech_loop_command
from ..utils.systemloop import SystemLoopSettings
from ..utils.techloop import TechLoopSettings

logger = logging.getLogger(__name__)

router = APIRouter()


class SystemLoopRequest(BaseModel):
    budget: int = Field(50, ge=0)
    seed: int = 0
    n_init: int = Field(10, ge=2)
    settings: Dict[str, Any] = Field(default_factory=dict)
    rows: Optional[int] = Field(None, ge=1)
    cols: Optional[int] = Field(None, ge=1)
    width: Optional[int] = Field(None, ge=2)


class TechLoopRequest(BaseModel):
    direction: Dict[str, Any]
    library: Optional[Dict[str, Any]] = None
    anchor: str = ANCHORS[0]
    seed: int = 0
    settings: Dict[str, Any] = Field(default_factory=dict)
    mlp: Dict[str, Any] = Field(default_factory=dict)


@router.post("/system-loop")
async def start_system_loop(request: SystemLoopRequest, background_tasks: BackgroundTasks,
                            registry: JobRegistry = Depends(get_job_registry)):
    try:
        settings = SystemLoopSettings.from_dict({**request.settings, "n_init": request.n_init})
    except (OrthrusError, TypeError) as e:
        logger.error(f"Rejected system-loop request: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    array = ArraySettings(request.rows, request.cols, request.width)

    job_id = registry.insert_job("system-loop", request.model_dump(), "")
    out = job_dir(job_id)
    registry.update_job(job_id, out_dir=str(out))
    background_tasks.add_task(run_job, registry, job_id,
                              lambda: system_loop_command(out / "run.jsonl", request.budget, request.seed,
                                                          settings=settings, array=array))
    logger.info(f"Queued system-loop job {job_id} (budget {request.budget}, seed {request.seed})")
    return {"job_id": job_id, "status": "queued"}


@router.post("/tech-loop")
async def start_tech_loop(request: TechLoopRequest, background_tasks: BackgroundTasks,
                          registry: JobRegistry = Depends(get_job_registry)):
    try:
        settings = TechLoopSettings.from_dict(request.settings, request.mlp)
        direction_from_report(request.direction, request.anchor)
        lib = CellLibrary.from_dict(request.library) if request.library else default_library()
    except (OrthrusError, TypeError) as e:
        logger.error(f"Rejected tech-loop request: {e}")
        raise HTTPException(status_code=400, detail=str(e))

    job_id = registry.insert_job("tech-loop", request.model_dump(exclude={"library"}), "")
    out = job_dir(job_id)
    registry.update_job(job_id, out_dir=str(out))
    background_tasks.add_task(run_job, registry, job_id,
                              lambda: tech_loop_command(request.direction, lib, out, request.seed,
                                                        request.anchor, settings))
    logger.info(f"Queued tech-loop job {job_id} (anchor {request.anchor}, seed {request.seed})")
    return {"job_id": job_id, "status": "queued"}
