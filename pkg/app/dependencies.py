import logging
import traceback
from pathlib import Path
from typing import Any, Callable, Dict

from .utils.db import JobRegistry, job_registry
from .utils.errors import OrthrusError
from .utils.settings import Settings, get_settings

logger = logging.getLogger(__name__)


def get_job_registry() -> JobRegistry:
    return job_registry


def get_app_settings() -> Settings:
    return get_settings()


def job_dir(job_id: str, settings: Settings = None) -> Path:
    """Output directory of one job under ORTHRUS_DATA_DIR"""
    settings = settings or get_settings()
    path = settings.data_dir / "jobs" / job_id
    path.mkdir(parents=True, exist_ok=True)
    return path


def run_job(registry: JobRegistry, job_id: str, work: Callable[[], Dict[str, Any]]) -> None:
    """Body of every background task: run `work` and record its outcome"""
    registry.update_job(job_id, status="running")
    logger.info(f"Job {job_id} started")
    try:
        result = work()
    except OrthrusError as e:
        logger.error(f"Job {job_id} failed: {e}")
        registry.update_job(job_id, status="failed", error=str(e))
        return
    except Exception as e:
        logger.error(f"Job {job_id} crashed: {e}\n{traceback.format_exc()}")
        registry.update_job(job_id, status="failed", error=f"internal error: {e}")
        return
    registry.update_job(job_id, status="done", result=result)
    logger.info(f"Job {job_id} finished")
