import uuid
from datetime import datetime
from typing import Any, Dict, List, Optional

from tinydb import TinyDB, Query, where
from tinydb.storages import MemoryStorage

JOB_STATES = ("queued", "running", "done", "failed")


class JobRegistry:
    """In-process table of background jobs started by the service"""

    def __init__(self):
        self.db = TinyDB(storage=MemoryStorage)
        self.jobs_table = self.db.table('jobs')

    def insert_job(self, kind: str, params: Dict[str, Any], out_dir: str) -> str:
        job_id = uuid.uuid4().hex[:12]
        now = datetime.utcnow().isoformat()
        self.jobs_table.insert({
            'job_id': job_id,
            'kind': kind,
            'status': 'queued',
            'params': params,
            'out_dir': out_dir,
            'result': None,
            'error': None,
            'created_at': now,
            'updated_at': now,
        })
        return job_id

    def update_job(self, job_id: str, **fields) -> None:
        status = fields.get('status')
        if status is not None and status not in JOB_STATES:
            raise ValueError(f"unknown job status {status!r}")
        fields['updated_at'] = datetime.utcnow().isoformat()
        self.jobs_table.update(fields, where('job_id') == job_id)

    def get_job(self, job_id: str) -> Optional[Dict[str, Any]]:
        Job = Query()
        result = self.jobs_table.search(Job.job_id == job_id)
        return dict(result[0]) if result else None

    def list_jobs(self, kind: Optional[str] = None) -> List[Dict[str, Any]]:
        if kind is None:
            rows = self.jobs_table.all()
        else:
            rows = self.jobs_table.search(where('kind') == kind)
        return sorted((dict(r) for r in rows), key=lambda r: r['created_at'])

    def clear(self) -> None:
        self.jobs_table.truncate()


# Global instance shared by the API routers
job_registry = JobRegistry()
