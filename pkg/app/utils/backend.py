"""
Deterministic synthetic implementation backend.

Maps a system configuration and a cell library to (delay, power, area):
the MAC array is generated structurally, timed with the STA engine, and the
synthesis / placement knobs act through the multiplier tables in
system_factors.json.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError
from .library import CellLibrary
from .macgen import generate_mac_array
from .netlist import NetGraph
from .pareto import ObjectiveVector
from .settings import get_settings
from .space import ParameterConfig
from .sta import DEFAULT_TOP_K, TimingReport, static_timing

logger = logging.getLogger(__name__)

FACTORS_FORMAT = "orthrus-system-factors"
KNOB_FIELDS = ("syn_generic_effort", "syn_map_effort", "syn_opt_effort", "place_glb_timing_effort",
               "place_glb_cong_effort", "place_glb_clk_power_driven")


def _level(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


@dataclass(frozen=True)
class FactorTables:
    """Knob-to-multiplier tables for delay and power"""
    delay: Mapping[str, Mapping]
    power: Mapping[str, Mapping]
    activity: float = 0.2
    reference_clock_ns: float = 0.5
    reference_utilization: float = 0.8
    factor_floor: float = 0.8001
    factor_ceiling: float = 1.25
    infeasibility_weight: float = 2.0

    @classmethod
    def from_dict(cls, doc: Mapping) -> "FactorTables":
        if doc.get("format") != FACTORS_FORMAT or doc.get("version") != 1:
            raise ConfigError(f"unsupported factor table {doc.get('format')} v{doc.get('version')}")
        for metric in ("delay", "power"):
            table = doc.get(metric, {})
            missing = [k for k in KNOB_FIELDS + ("utilization_slope", "clock_exponent") if k not in table]
            if missing:
                raise ConfigError(f"{metric} factor table misses {missing}")
        scalars = {k: float(doc[k]) for k in ("activity", "reference_clock_ns", "reference_utilization",
                                              "factor_floor", "factor_ceiling", "infeasibility_weight") if k in doc}
        return cls(delay=doc["delay"], power=doc["power"], **scalars)

    def _factor(self, table: Mapping, p: ParameterConfig, clock_ratio: float) -> float:
        value = 1.0
        for name in KNOB_FIELDS:
            try:
                value *= float(table[name][_level(getattr(p, name))])
            except KeyError:
                raise ConfigError(f"factor table has no entry for {name}={getattr(p, name)!r}")
        value *= 1.0 + float(table["utilization_slope"]) * (p.place_utilization - self.reference_utilization)
        value *= clock_ratio ** float(table["clock_exponent"])
        return float(np.clip(value, self.factor_floor, self.factor_ceiling))

    def delay_factor(self, p: ParameterConfig) -> float:
        """Tighter clock targets and higher efforts shorten the implemented critical path"""
        return self._factor(self.delay, p, p.clock_period_ns / self.reference_clock_ns)

    def power_factor(self, p: ParameterConfig) -> float:
        return self._factor(self.power, p, self.reference_clock_ns / p.clock_period_ns)


def load_factor_tables(path: Optional[Union[str, Path]] = None) -> FactorTables:
    path = Path(path or get_settings().system_factors_path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read factor tables {path}: {e}")
    return FactorTables.from_dict(doc)


@dataclass
class Implementation:
    """Generated and timed netlist for one (architecture, library) pair"""
    key: str
    netlist: NetGraph
    timing: TimingReport
    power_sum: float
    area_sum: float


@dataclass
class SystemEvaluation:
    config: ParameterConfig
    objectives: ObjectiveVector
    feasible: bool
    critical_delay_ns: float
    delay_factor: float
    power_factor: float
    implementation: Implementation


class SystemBackend:
    """Caches one implementation per (ct_type, cpa_type, library fingerprint)"""

    def __init__(self, rows: Optional[int] = None, cols: Optional[int] = None, width: Optional[int] = None,
                 factors: Optional[FactorTables] = None, top_k: int = DEFAULT_TOP_K):
        settings = get_settings()
        self.rows = rows or settings.array_rows
        self.cols = cols or settings.array_cols
        self.width = width or settings.array_width
        self.factors = factors or load_factor_tables()
        self.top_k = top_k
        self._cache: Dict[Tuple[str, str, str], Implementation] = {}

    def implementation(self, ct_type: str, cpa_type: str, lib: CellLibrary) -> Implementation:
        cache_key = (ct_type, cpa_type, lib.fingerprint())
        impl = self._cache.get(cache_key)
        if impl is None:
            g = generate_mac_array(ct_type, cpa_type, self.rows, self.cols, self.width,
                                   fused=list(lib.fused.values()))
            timing = static_timing(g, lib, self.top_k)
            counts = g.cell_type_counts()
            power_sum = sum(lib.get(t).power * n for t, n in sorted(counts.items()))
            area_sum = sum(lib.get(t).area * n for t, n in sorted(counts.items()))
            key = f"{ct_type}_{cpa_type}_{self.rows}x{self.cols}x{self.width}_{cache_key[2]}"
            impl = Implementation(key, g, timing, power_sum, area_sum)
            self._cache[cache_key] = impl
            logger.info(f"Implemented {key}: critical {timing.critical_delay:.4f} ns, "
                        f"power {power_sum:.4f} mW, area {area_sum:.2f} um^2")
        return impl

    def evaluate(self, p: ParameterConfig, lib: CellLibrary) -> SystemEvaluation:
        p.validate()
        impl = self.implementation(p.ct_type, p.cpa_type, lib)
        d_factor = self.factors.delay_factor(p)
        p_factor = self.factors.power_factor(p)
        delay = impl.timing.critical_delay * d_factor
        power = impl.power_sum * p_factor
        area = impl.area_sum / p.place_utilization
        feasible = delay <= p.clock_period_ns
        if not feasible:
            penalty = 1.0 + self.factors.infeasibility_weight * (delay / p.clock_period_ns - 1.0)
            delay, power, area = delay * penalty, power * penalty, area * penalty
        return SystemEvaluation(p, ObjectiveVector(delay, power, area), feasible,
                                impl.timing.critical_delay, d_factor, p_factor, impl)


_backend: Optional[SystemBackend] = None


def get_backend() -> SystemBackend:
    global _backend
    if _backend is None:
        _backend = SystemBackend()
    return _backend


def evaluate_system(p: ParameterConfig, lib: CellLibrary, backend: Optional[SystemBackend] = None) -> ObjectiveVector:
    return (backend or get_backend()).evaluate(p, lib).objectives
