"""
Analytic cell characterization.

Technology parameters scale every cell's delay and power through smooth
factor functions that equal 1 at the default process point. The
work-function knobs form the threshold term, the fin and gate geometry the
geometry term:

    T_d = a_n (phig_n - phig_n0) + a_p (phig_p0 - phig_p)
    G_d = g_L ln(lg/lg0) + g_H ln(hfin0/hfin) + g_T ln(tfin0/tfin)
    T_p = -b_n (phig_n - phig_n0) - b_p (phig_p0 - phig_p)
    G_p = d_H ln(hfin/hfin0) + d_T ln(tfin/tfin0) + d_C ln(lct/lct0)

    F_d(cell) = exp(s_T(cell) T_d + s_G(cell) G_d)
    F_p(cell) = exp(s_T(cell) T_p + s_G(cell) G_p)

The sensitivities (s_T, s_G) depend on the cell family; a fused cell takes
the mean of its constituents. Fused cells additionally scale with their row
count. Area does not depend on the technology parameters.
"""

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import cells as cell_logic
from .errors import ConfigError, ConstraintError, InvalidInputError, InvalidNormalizationError
from .interloop import CellContribution, DirectionWeights
from .library import ROW_CHOICES, CellLibrary, CellRecord, FusedCellDef
from .settings import get_settings
from .space import CPP_TARGET_NM, TechParams

logger = logging.getLogger(__name__)

TECH_FACTORS_FORMAT = "orthrus-tech-factors"
CPP_TOLERANCE_NM = 1e-6
REFERENCE_SENSITIVITY = (1.0, 1.0)


@dataclass(frozen=True)
class TechFactors:
    cpp_target_nm: float
    defaults: Mapping[str, float]
    delay: Mapping[str, float]
    power: Mapping[str, float]
    rows_delay: Tuple[float, ...]
    rows_power: Tuple[float, ...]
    rows_area: Tuple[float, ...]
    fusion: Mapping[str, float]
    sensitivity: Mapping[str, Tuple[float, float]] = None

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TechFactors":
        if doc.get("format") != TECH_FACTORS_FORMAT or doc.get("version") != 1:
            raise ConfigError(f"unsupported tech factor document {doc.get('format')} v{doc.get('version')}")
        try:
            rows = doc["rows"]
            sensitivity = {family: (float(s["threshold"]), float(s["geometry"]))
                           for family, s in doc.get("sensitivity", {}).items()}
            factors = cls(float(doc["cpp_target_nm"]), dict(doc["defaults"]), dict(doc["delay"]), dict(doc["power"]),
                          tuple(rows["delay"]), tuple(rows["power"]), tuple(rows["area"]), dict(doc["fusion"]),
                          sensitivity)
        except KeyError as e:
            raise ConfigError(f"tech factor document misses {e}")
        for name in ("rows_delay", "rows_power", "rows_area"):
            table = getattr(factors, name)
            if len(table) != len(ROW_CHOICES) or table[0] != 1.0:
                raise ConfigError(f"{name} must list {len(ROW_CHOICES)} factors starting at 1.0, got {table}")
        if any(s <= 0 for pair in sensitivity.values() for s in pair):
            raise ConfigError(f"cell sensitivities must be positive, got {sensitivity}")
        return factors

    def family_sensitivity(self, cell_type: str) -> Tuple[float, float]:
        table = self.sensitivity or {}
        return table.get(cell_logic.base_type(cell_type), table.get("default", REFERENCE_SENSITIVITY))


def load_tech_factors(path: Optional[Union[str, Path]] = None) -> TechFactors:
    path = Path(path or get_settings().tech_factors_path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read tech factors {path}: {e}")
    return TechFactors.from_dict(doc)


_factors: Optional[TechFactors] = None


def get_tech_factors() -> TechFactors:
    global _factors
    if _factors is None:
        _factors = load_tech_factors()
    return _factors


def check_cpp(t: TechParams, cpp_target: float = CPP_TARGET_NM) -> bool:
    return abs(t.lg_nm + 2 * t.lext_nm + t.lct_nm - cpp_target) <= CPP_TOLERANCE_NM


def _delay_terms(t: TechParams, f: TechFactors) -> Tuple[float, float]:
    d0, k = f.defaults, f.delay
    threshold = k["alpha_n"] * (t.phig_n - d0["phig_n"]) + k["alpha_p"] * (d0["phig_p"] - t.phig_p)
    geometry = (k["gamma_l"] * math.log(t.lg_nm / d0["lg_nm"]) + k["gamma_h"] * math.log(d0["hfin_nm"] / t.hfin_nm)
                + k["gamma_t"] * math.log(d0["tfin_nm"] / t.tfin_nm))
    return threshold, geometry


def _power_terms(t: TechParams, f: TechFactors) -> Tuple[float, float]:
    d0, k = f.defaults, f.power
    threshold = -k["beta_n"] * (t.phig_n - d0["phig_n"]) - k["beta_p"] * (d0["phig_p"] - t.phig_p)
    geometry = (k["delta_h"] * math.log(t.hfin_nm / d0["hfin_nm"]) + k["delta_t"] * math.log(t.tfin_nm / d0["tfin_nm"])
                + k["delta_c"] * math.log(t.lct_nm / d0["lct_nm"]))
    return threshold, geometry


def delay_factor(t: TechParams, f: Optional[TechFactors] = None,
                 sensitivity: Tuple[float, float] = REFERENCE_SENSITIVITY) -> float:
    threshold, geometry = _delay_terms(t, f or get_tech_factors())
    return math.exp(sensitivity[0] * threshold + sensitivity[1] * geometry)


def power_factor(t: TechParams, f: Optional[TechFactors] = None,
                 sensitivity: Tuple[float, float] = REFERENCE_SENSITIVITY) -> float:
    threshold, geometry = _power_terms(t, f or get_tech_factors())
    return math.exp(sensitivity[0] * threshold + sensitivity[1] * geometry)


def cell_sensitivity(cell_type: str, lib: CellLibrary, f: Optional[TechFactors] = None) -> Tuple[float, float]:
    """(threshold, geometry) sensitivity; fused cells average their constituents"""
    f = f or get_tech_factors()
    if cell_type in lib.fused:
        pairs = np.array([f.family_sensitivity(t) for t in lib.fused[cell_type].constituents])
        return float(pairs[:, 0].mean()), float(pairs[:, 1].mean())
    return f.family_sensitivity(cell_type)


def _arc_delays(definition: FusedCellDef, base: CellLibrary) -> Dict[Tuple[str, str], float]:
    """Longest constituent path from every fragment input to every fragment output"""
    frag = definition.fragment
    reach: Dict[str, Dict[str, float]] = {n: {n: 0.0} for n in definition.inputs}
    for cid in frag.topological_cells():
        cell = frag.cells[cid]
        d = base.get(cell.type).delay
        combined: Dict[str, float] = {}
        for n in cell.input_nets:
            for src, length in reach.get(n, {}).items():
                combined[src] = max(combined.get(src, -math.inf), length + d)
        for n in cell.output_nets:
            reach[n] = combined
    return {(src, out): length for out in definition.outputs for src, length in reach.get(out, {}).items()}


def fused_base_record(definition: FusedCellDef, base: CellLibrary, f: Optional[TechFactors] = None) -> CellRecord:
    """
    Single-row PPA of a fused cell composed from its constituents. Every arc
    keeps the longest constituent path between its two ports, discounted;
    `delay` is the slowest arc.
    """
    f = f or get_tech_factors()
    lengths = _arc_delays(definition, base)
    longest = max(lengths.values())
    arcs = tuple(tuple(lengths[(src, out)] / longest if (src, out) in lengths else None
                       for out in definition.outputs)
                 for src in definition.inputs)
    frag = definition.fragment
    power = sum(base.get(c.type).power for c in frag.cells.values())
    area = sum(base.get(c.type).area for c in frag.cells.values())
    return CellRecord(longest * f.fusion["delay_discount"], power * f.fusion["power_discount"],
                      area * f.fusion["area_discount"], 1, arcs)


def extend_with_fused(base: CellLibrary, definitions: Sequence[FusedCellDef],
                      f: Optional[TechFactors] = None) -> CellLibrary:
    """Base library plus single-row fused cells"""
    records = {d.name: fused_base_record(d, base, f) for d in definitions}
    lib = base.with_fused(list(definitions), records)
    lib.name = f"{base.name}+fused" if definitions else base.name
    return lib


def _check_rows(rows_assignment: Mapping[str, int], lib: CellLibrary) -> Dict[str, int]:
    rows = {}
    for name, value in rows_assignment.items():
        if name not in lib.fused:
            raise InvalidInputError(f"num_rows given for {name}, which is not a fused cell")
        if int(value) != value or int(value) not in ROW_CHOICES:
            raise InvalidInputError(f"num_rows of {name} must be one of {ROW_CHOICES}, got {value}")
        rows[name] = int(value)
    return rows


def cell_simulate(t: TechParams, rows_assignment: Mapping[str, int], base: CellLibrary,
                  f: Optional[TechFactors] = None) -> CellLibrary:
    """
    Recharacterize every cell of `base` for the process point t. Fused cells
    absent from rows_assignment stay single-row. The result is a new library.
    """
    f = f or get_tech_factors()
    t.validate()
    if not check_cpp(t, f.cpp_target_nm):
        raise ConstraintError(
            f"CPP violated: lg {t.lg_nm} + 2*lext {t.lext_nm} + lct {t.lct_nm} != {f.cpp_target_nm}")
    rows = _check_rows(rows_assignment, base)
    delay_terms = _delay_terms(t, f)
    power_terms = _power_terms(t, f)
    records = {}
    for cell_type, record in base.cells.items():
        r = rows.get(cell_type, 1)
        s = cell_sensitivity(cell_type, base, f)
        fd = math.exp(s[0] * delay_terms[0] + s[1] * delay_terms[1])
        fp = math.exp(s[0] * power_terms[0] + s[1] * power_terms[1])
        records[cell_type] = replace(record, delay=record.delay * fd * f.rows_delay[r - 1],
                                     power=record.power * fp * f.rows_power[r - 1],
                                     area=record.area * f.rows_area[r - 1], num_rows=r)
    tech = {**t.to_dict(), "num_rows": {name: rows.get(name, 1) for name in base.fused}}
    return CellLibrary(records, dict(base.fused), f"{base.name}@rechar", tech)


def weighted_metrics(cells: CellLibrary, contrib: CellContribution, base: CellLibrary) -> Tuple[float, float]:
    """Contribution-weighted normalized delay and power of a characterized library"""
    def normalized(cell_type: str, metric: str) -> float:
        reference = getattr(base.get(cell_type), metric)
        if reference == 0:
            raise InvalidNormalizationError(f"base {metric} of {cell_type} is zero")
        return getattr(cells.get(cell_type), metric) / reference

    delay = sum(w * normalized(c, "delay") for c, w in contrib.w_delay.items() if w != 0)
    power = sum(w * normalized(c, "power") for c, w in contrib.w_power.items() if w != 0)
    return delay, power


def ppa_calculation(cells: CellLibrary, contrib: CellContribution, direction: DirectionWeights,
                    base: CellLibrary) -> float:
    """Scalar objective y = W_delay * Delay(C) + W_power * Power(C)"""
    delay, power = weighted_metrics(cells, contrib, base)
    return direction.w_delay * delay + direction.w_power * power


def regression(cells: CellLibrary, contrib: CellContribution, base: CellLibrary) -> float:
    """How far the weighted delay and power of `cells` exceed those of `base`; 0 when neither does"""
    delay, power = weighted_metrics(cells, contrib, base)
    delay0, power0 = weighted_metrics(base, contrib, base)
    return max(0.0, delay - delay0) + max(0.0, power - power0)
