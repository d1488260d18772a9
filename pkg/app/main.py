import logging
from datetime import datetime

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from .api import campaign, loops, netlist
from .utils.settings import VERSION, get_settings, setup_logging

setup_logging()
logger = logging.getLogger(__name__)

app = FastAPI(
    title="Orthrus",
    description="Dual-loop system/technology co-optimization of MAC arrays",
    version=VERSION,
)

settings = get_settings()
app.add_middleware(
    CORSMiddleware,
    allow_origins=list(settings.allowed_origins),
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.get("/health")
async def health_check():
    """Health check endpoint for container monitoring"""
    return {
        "status": "healthy",
        "timestamp": datetime.utcnow().isoformat(),
        "version": VERSION,
    }


app.include_router(netlist.router)
app.include_router(loops.router)
app.include_router(campaign.router)

logger.info(f"Orthrus API ready, data directory {settings.data_dir}")
