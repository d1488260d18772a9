import json
import logging
from typing import Optional

from fastapi import APIRouter, File, HTTPException, UploadFile
from pydantic import BaseModel, Field

from ..utils.errors import OrthrusError
from ..utils.library import CellLibrary, default_library
from ..utils.macgen import generate_mac_array
from ..utils.netlist import parse_netlist, write_netlist
from ..utils.orchestrator import analyze_netlist
from ..utils.systemloop import EvaluationRecord

logger = logging.getLogger(__name__)

router = APIRouter()


class GenerateRequest(BaseModel):
    ct_type: str = "WT"
    cpa_type: str = "SK"
    rows: int = Field(8, ge=1)
    cols: int = Field(8, ge=1)
    width: int = Field(8, ge=2)


def _read_json(raw: bytes, what: str):
    try:
        return json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise HTTPException(status_code=400, detail=f"{what} is not valid JSON: {e}")


@router.post("/netlist/generate")
async def generate_netlist(request: GenerateRequest):
    try:
        g = generate_mac_array(request.ct_type, request.cpa_type, request.rows, request.cols, request.width)
    except OrthrusError as e:
        logger.error(f"Netlist generation failed: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    logger.info(f"Generated {g.name}: {len(g)} cells")
    return write_netlist(g)


@router.post("/netlist/analyze")
async def analyze_uploaded_netlist(netlist: UploadFile = File(...),
                                   archive: Optional[UploadFile] = File(None),
                                   library: Optional[UploadFile] = File(None),
                                   naive_weighting: bool = False):
    doc = _read_json(await netlist.read(), "netlist")
    records = None
    try:
        g = parse_netlist(doc)
        lib = CellLibrary.from_dict(_read_json(await library.read(), "library")) if library else default_library()
        if archive is not None:
            lines = (await archive.read()).decode().splitlines()
            records = [EvaluationRecord.from_dict(json.loads(line)) for line in lines if line.strip()]
        return analyze_netlist(g, lib, records, naive_weighting=naive_weighting)
    except HTTPException:
        raise
    except json.JSONDecodeError as e:
        raise HTTPException(status_code=400, detail=f"archive is not valid JSONL: {e}")
    except OrthrusError as e:
        logger.error(f"Netlist analysis failed: {e}")
        raise HTTPException(status_code=400, detail=str(e))
    except Exception as e:
        logger.error(f"Unexpected error analyzing {netlist.filename}: {e}")
        raise HTTPException(status_code=500, detail=f"Failed to analyze netlist: {e}")
