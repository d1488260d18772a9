"""
Standard-cell library: per cell-type PPA records plus fused-cell definitions.

Library files are versioned JSON documents:

    {"format": "orthrus-library", "version": 1, "name": ...,
     "cells": {type: {"delay", "power", "area", "num_rows"[, "arcs"]}},
     "fused": {type: {"pattern_key", "fragment", "inputs", "outputs"}},
     "tech": {...} | null}
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, InvalidInputError, LibraryMismatchError
from .netlist import NetGraph, evaluate_combinational, parse_netlist, write_netlist
from .settings import get_settings

logger = logging.getLogger(__name__)

LIBRARY_FORMAT = "orthrus-library"
LIBRARY_VERSION = 1
ROW_CHOICES = (1, 2, 3)


@dataclass(frozen=True)
class CellRecord:
    """
    Arc delay (ns), power at reference activity (mW), area (um^2), layout rows.

    Fused cells also carry `arcs`: arcs[k][j] is the delay of I{k} -> Y{j}
    relative to `delay`, None where Y{j} does not depend on I{k}. Without
    `arcs` every input-to-output arc takes `delay`.
    """
    delay: float
    power: float
    area: float
    num_rows: int = 1
    arcs: Optional[Tuple[Tuple[Optional[float], ...], ...]] = None

    def check(self, cell_type: str) -> "CellRecord":
        for name in ("delay", "power", "area"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise InvalidInputError(f"{cell_type}: {name} must be positive, got {value}")
        if self.num_rows not in ROW_CHOICES:
            raise InvalidInputError(f"{cell_type}: num_rows must be one of {ROW_CHOICES}, got {self.num_rows}")
        if self.arcs is not None:
            scales = [s for row in self.arcs for s in row if s is not None]
            if not scales or any(not (0 < s <= 1 + 1e-12) for s in scales):
                raise InvalidInputError(f"{cell_type}: arc scales must lie in (0, 1], got {self.arcs}")
        return self

    def arc_delay(self, in_pin: str, out_pin: str) -> Optional[float]:
        if self.arcs is None:
            return self.delay
        scale = self.arcs[int(in_pin[1:])][int(out_pin[1:])]
        return None if scale is None else self.delay * scale

    def to_dict(self) -> Dict:
        doc = {"delay": self.delay, "power": self.power, "area": self.area, "num_rows": self.num_rows}
        if self.arcs is not None:
            doc["arcs"] = [list(row) for row in self.arcs]
        return doc

    @classmethod
    def from_dict(cls, cell_type: str, doc: Mapping) -> "CellRecord":
        arcs = doc.get("arcs")
        if arcs is not None:
            arcs = tuple(tuple(None if s is None else float(s) for s in row) for row in arcs)
        return cls(float(doc["delay"]), float(doc["power"]), float(doc["area"]), int(doc.get("num_rows", 1)),
                   arcs).check(cell_type)


@dataclass(frozen=True)
class FusedCellDef:
    """
    A mined subcircuit turned into one cell. Port `I{k}` binds fragment net
    `inputs[k]`, port `Y{k}` binds fragment net `outputs[k]`.
    """
    name: str
    pattern_key: str
    fragment: NetGraph
    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]

    @property
    def input_pins(self) -> List[str]:
        return [f"I{k}" for k in range(len(self.inputs))]

    @property
    def output_pins(self) -> List[str]:
        return [f"Y{k}" for k in range(len(self.outputs))]

    @property
    def constituents(self) -> List[str]:
        return [c.type for c in self.fragment.cells.values()]

    def evaluate(self, port_values: Mapping[str, np.ndarray], library: "CellLibrary") -> Dict[str, np.ndarray]:
        assignment = {net: port_values[f"I{k}"] for k, net in enumerate(self.inputs)}
        values = evaluate_combinational(self.fragment, assignment, library)
        return {f"Y{k}": values[net] for k, net in enumerate(self.outputs)}

    def to_dict(self) -> Dict:
        return {
            "pattern_key": self.pattern_key,
            "fragment": write_netlist(self.fragment),
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
        }

    @classmethod
    def from_dict(cls, name: str, data: Mapping) -> "FusedCellDef":
        return cls(name, data["pattern_key"], parse_netlist(data["fragment"]),
                   tuple(data["inputs"]), tuple(data["outputs"]))


@dataclass
class CellLibrary:
    cells: Dict[str, CellRecord]
    fused: Dict[str, FusedCellDef] = field(default_factory=dict)
    name: str = "base"
    tech: Optional[Dict] = None

    def __contains__(self, cell_type: str) -> bool:
        return cell_type in self.cells

    def get(self, cell_type: str) -> CellRecord:
        try:
            return self.cells[cell_type]
        except KeyError:
            raise LibraryMismatchError(f"cell type {cell_type} not in library {self.name}")

    def check_covers(self, g: NetGraph) -> None:
        missing = sorted({c.type for c in g.cells.values()} - self.cells.keys())
        if missing:
            raise LibraryMismatchError(f"library {self.name} lacks cell types {missing} used by {g.name}")

    def with_cells(self, records: Mapping[str, CellRecord], name: Optional[str] = None,
                   tech: Optional[Dict] = None) -> "CellLibrary":
        """Copy with the given records added or replacing existing ones"""
        cells = dict(self.cells)
        for cell_type, record in records.items():
            cells[cell_type] = record.check(cell_type)
        return CellLibrary(cells, dict(self.fused), name or self.name, tech if tech is not None else self.tech)

    def with_fused(self, definitions: List[FusedCellDef], records: Mapping[str, CellRecord]) -> "CellLibrary":
        lib = self.with_cells(records)
        for definition in definitions:
            if definition.name not in lib.cells:
                raise LibraryMismatchError(f"fused cell {definition.name} has no PPA record")
            lib.fused[definition.name] = definition
        return lib

    def fused_rows(self) -> Dict[str, int]:
        return {name: self.cells[name].num_rows for name in self.fused}

    def to_dict(self) -> Dict:
        return {
            "format": LIBRARY_FORMAT,
            "version": LIBRARY_VERSION,
            "name": self.name,
            "cells": {t: r.to_dict() for t, r in self.cells.items()},
            "fused": {t: d.to_dict() for t, d in self.fused.items()},
            "tech": self.tech,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "CellLibrary":
        if doc.get("format") != LIBRARY_FORMAT or doc.get("version") != LIBRARY_VERSION:
            raise ConfigError(f"unsupported library document {doc.get('format')} v{doc.get('version')}")
        try:
            cells = {t: CellRecord.from_dict(t, r) for t, r in doc["cells"].items()}
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"malformed cell record in library {doc.get('name')}: {e}")
        fused = {t: FusedCellDef.from_dict(t, d) for t, d in doc.get("fused", {}).items()}
        return cls(cells, fused, doc.get("name", "library"), doc.get("tech"))

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha1(payload.encode()).hexdigest()[:16]

    def scaled(self, delay: float = 1.0, power: float = 1.0) -> "CellLibrary":
        """Copy with every delay / power multiplied by a constant"""
        records = {t: replace(r, delay=r.delay * delay, power=r.power * power) for t, r in self.cells.items()}
        return CellLibrary(records, dict(self.fused), self.name, self.tech)


def load_library(path: Union[str, Path]) -> CellLibrary:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read library {path}: {e}")
    lib = CellLibrary.from_dict(doc)
    logger.debug(f"Loaded library {lib.name} with {len(lib.cells)} cells from {path}")
    return lib


def save_library(lib: CellLibrary, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(lib.to_dict(), indent=1))
    logger.info(f"Wrote library {lib.name} ({len(lib.cells)} cells, {len(lib.fused)} fused) to {path}")
    return path


@lru_cache(maxsize=4)
def _cached_library(path: str) -> CellLibrary:
    return load_library(path)


def default_library() -> CellLibrary:
    """Base library configured by ORTHRUS_LIBRARY_PATH (a fresh copy each call)"""
    lib = _cached_library(str(get_settings().library_path))
    return CellLibrary(dict(lib.cells), dict(lib.fused), lib.name, lib.tech)
