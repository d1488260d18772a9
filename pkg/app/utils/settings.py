"""
Process settings for Orthrus, read from the environment (.env supported).
"""

import os
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

DATA_FILES_DIR = Path(__file__).resolve().parent.parent / "data"
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
VERSION = "1.0.0"


@dataclass(frozen=True)
class Settings:
    """Environment-driven settings shared by the CLI, the API and the engine"""
    data_dir: Path
    library_path: Path
    system_factors_path: Path
    tech_factors_path: Path
    n_jobs: int
    array_rows: int
    array_cols: int
    array_width: int
    log_level: str
    allowed_origins: tuple


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logging.getLogger(__name__).warning(f"Ignoring non-integer {name}={raw!r}, using {default}")
        return default


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    origins = os.getenv("ALLOWED_ORIGINS", "*")
    return Settings(
        data_dir=Path(os.getenv("ORTHRUS_DATA_DIR", "./data")),
        library_path=Path(os.getenv("ORTHRUS_LIBRARY_PATH", str(DATA_FILES_DIR / "base_library.json"))),
        system_factors_path=Path(os.getenv("ORTHRUS_SYSTEM_FACTORS_PATH", str(DATA_FILES_DIR / "system_factors.json"))),
        tech_factors_path=Path(os.getenv("ORTHRUS_TECH_FACTORS_PATH", str(DATA_FILES_DIR / "tech_factors.json"))),
        n_jobs=_int_env("ORTHRUS_N_JOBS", 1),
        array_rows=_int_env("ORTHRUS_ARRAY_ROWS", 8),
        array_cols=_int_env("ORTHRUS_ARRAY_COLS", 8),
        array_width=_int_env("ORTHRUS_ARRAY_WIDTH", 8),
        log_level=os.getenv("LOG_LEVEL", "INFO").upper(),
        allowed_origins=tuple(o.strip() for o in origins.split(",") if o.strip()),
    )


def setup_logging(level: str = None) -> None:
    """Configure root logging the same way for every entry point"""
    logging.basicConfig(
        level=getattr(logging, (level or get_settings().log_level), logging.INFO),
        format=LOG_FORMAT,
    )
