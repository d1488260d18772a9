"""
Cross-layer design space: architecture, logic-synthesis, physical-design and
technology parameters with their candidate values and defaults.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from enum import Enum
from typing import Any, Dict, Tuple

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

CPP_TARGET_NM = 54.0


class ParamKind(Enum):
    """How a parameter is represented"""
    CATEGORICAL = "categorical"
    CONTINUOUS = "continuous"


class Segment(Enum):
    """Design-space layer a parameter belongs to"""
    ARCH = "arch"
    LS = "ls"
    PD = "pd"
    TECH = "tech"


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: ParamKind
    segment: Segment
    default: Any
    levels: Tuple = ()
    low: float = 0.0
    high: float = 0.0

    def check(self, value) -> None:
        if self.kind is ParamKind.CATEGORICAL:
            if value not in self.levels:
                raise InvalidInputError(f"{self.name}={value!r} not in {list(self.levels)}")
            return
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise InvalidInputError(f"{self.name}={value!r} is not numeric")
        if not (self.low - 1e-12 <= v <= self.high + 1e-12):
            raise InvalidInputError(f"{self.name}={v} outside [{self.low}, {self.high}]")


SYSTEM_SPACE: Tuple[ParamSpec, ...] = (
    ParamSpec("ct_type", ParamKind.CATEGORICAL, Segment.ARCH, "WT", levels=("WT", "DT")),
    ParamSpec("cpa_type", ParamKind.CATEGORICAL, Segment.ARCH, "SK", levels=("SK", "KS", "BK")),
    ParamSpec("clock_period_ns", ParamKind.CONTINUOUS, Segment.LS, 0.5, low=0.4, high=1.0),
    ParamSpec("syn_generic_effort", ParamKind.CATEGORICAL, Segment.LS, "medium", levels=("low", "medium", "high")),
    ParamSpec("syn_map_effort", ParamKind.CATEGORICAL, Segment.LS, "high", levels=("low", "medium", "high")),
    ParamSpec("syn_opt_effort", ParamKind.CATEGORICAL, Segment.LS, "none", levels=("none", "low", "medium", "high")),
    ParamSpec("place_utilization", ParamKind.CONTINUOUS, Segment.PD, 0.8, low=0.5, high=0.9),
    ParamSpec("place_glb_cong_effort", ParamKind.CATEGORICAL, Segment.PD, "auto", levels=("auto", "low", "medium", "high")),
    ParamSpec("place_glb_timing_effort", ParamKind.CATEGORICAL, Segment.PD, "medium", levels=("medium", "high")),
    ParamSpec("place_glb_clk_power_driven", ParamKind.CATEGORICAL, Segment.PD, True, levels=(True, False)),
)

TECH_SPACE: Tuple[ParamSpec, ...] = (
    ParamSpec("phig_n", ParamKind.CONTINUOUS, Segment.TECH, 4.307, low=4.302, high=4.312),
    ParamSpec("phig_p", ParamKind.CONTINUOUS, Segment.TECH, 4.8681, low=4.8631, high=4.8731),
    ParamSpec("hfin_nm", ParamKind.CONTINUOUS, Segment.TECH, 32.0, low=28.0, high=36.0),
    ParamSpec("tfin_nm", ParamKind.CONTINUOUS, Segment.TECH, 6.5, low=5.8, high=7.2),
    ParamSpec("lg_nm", ParamKind.CONTINUOUS, Segment.TECH, 20.0, low=17.0, high=23.0),
    ParamSpec("lext_nm", ParamKind.CATEGORICAL, Segment.TECH, 5, levels=(4, 5, 6)),
    ParamSpec("lct_nm", ParamKind.CONTINUOUS, Segment.TECH, 24.0, low=19.0, high=29.0),
)

SYSTEM_SPECS: Dict[str, ParamSpec] = {s.name: s for s in SYSTEM_SPACE}
TECH_SPECS: Dict[str, ParamSpec] = {s.name: s for s in TECH_SPACE}


@dataclass(frozen=True)
class ParameterConfig:
    """One point of the system design space (p_arch, p_ls, p_pd)"""
    ct_type: str = "WT"
    cpa_type: str = "SK"
    clock_period_ns: float = 0.5
    syn_generic_effort: str = "medium"
    syn_map_effort: str = "high"
    syn_opt_effort: str = "none"
    place_utilization: float = 0.8
    place_glb_cong_effort: str = "auto"
    place_glb_timing_effort: str = "medium"
    place_glb_clk_power_driven: bool = True

    def validate(self) -> "ParameterConfig":
        for spec in SYSTEM_SPACE:
            spec.check(getattr(self, spec.name))
        return self

    def segment(self, segment: Segment) -> Dict[str, Any]:
        return {s.name: getattr(self, s.name) for s in SYSTEM_SPACE if s.segment is segment}

    @property
    def p_arch(self) -> Dict[str, Any]:
        return self.segment(Segment.ARCH)

    @property
    def p_ls(self) -> Dict[str, Any]:
        return self.segment(Segment.LS)

    @property
    def p_pd(self) -> Dict[str, Any]:
        return self.segment(Segment.PD)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ParameterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown configuration fields: {sorted(unknown)}")
        values = dict(data)
        for name in ("clock_period_ns", "place_utilization"):
            if name in values:
                values[name] = float(values[name])
        return cls(**values).validate()

    def config_id(self) -> str:
        """Stable short id derived from the field values"""
        payload = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha1(payload.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class TechParams:
    """Technology segment p_tech (nm / eV)"""
    phig_n: float = 4.307
    phig_p: float = 4.8681
    hfin_nm: float = 32.0
    tfin_nm: float = 6.5
    lg_nm: float = 20.0
    lext_nm: int = 5
    lct_nm: float = 24.0

    def validate(self) -> "TechParams":
        for spec in TECH_SPACE:
            spec.check(getattr(self, spec.name))
        return self

    @classmethod
    def with_derived_lct(cls, cpp_target: float = CPP_TARGET_NM, **values) -> "TechParams":
        """Build parameters whose lct closes the CPP equation"""
        values.pop("lct_nm", None)
        base = cls(**values)
        lct = cpp_target - base.lg_nm - 2 * base.lext_nm
        return cls(**{**asdict(base), "lct_nm": float(lct)})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "TechParams":
        values = dict(data)
        if "lext_nm" in values:
            values["lext_nm"] = int(round(float(values["lext_nm"])))
        return cls(**values).validate()
