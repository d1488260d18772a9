"""
Dual-loop campaign runner.

    system loop -> inter-loop analysis (anchors, contributions, mining)
                -> technology loop per anchor -> library update
                -> final system loop per anchor with the updated library

Modes gate the technology-side features:

    baseline   system parameters only, library untouched
    no_fusion  recharacterization only
    no_rechar  single-row fused cells only
    full       fused cells and recharacterization

Every stage persists its artifacts into the campaign directory before the
next one starts, so a failing stage leaves a partial but readable campaign.
"""

import json
import logging
import math
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 fallback, same API
    import tomli as tomllib

from . import cellmodel, interloop, mining
from .backend import SystemBackend
from .errors import ConfigError, DegenerateGeometryError, InvalidInputError, StageFailure
from .interloop import CellContribution, DirectionWeights
from .library import CellLibrary, FusedCellDef, default_library, save_library
from .netlist import NetGraph
from .pareto import normalization_bounds
from .space import ParameterConfig
from .sta import static_timing
from .systemloop import (CellDatabase, EvaluationRecord, SystemLoopSettings, archive_from_records, read_archive,
                         run_system_loop, write_archive)
from .techloop import TechCandidate, TechLoopSettings, run_tech_loop

logger = logging.getLogger(__name__)

MODES = ("baseline", "no_fusion", "no_rechar", "full")
ANCHORS = ("knee", "low_delay")
ISO_TOLERANCE = 1e-3
NO_ISO = "no iso-comparison available"
REPORT_FORMAT = "orthrus-report"


@dataclass(frozen=True)
class InterloopSettings:
    lam: float = interloop.DEFAULT_LAMBDA
    k: int = interloop.DEFAULT_NEIGHBORS
    n_ext: int = 2
    d_max: int = mining.D_MAX
    o_max: int = mining.O_MAX
    i_max: int = mining.I_MAX


@dataclass(frozen=True)
class ArraySettings:
    rows: Optional[int] = None
    cols: Optional[int] = None
    width: Optional[int] = None


def _section(cls, data: Mapping, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    try:
        return cls(**dict(data))
    except TypeError as e:
        raise ConfigError(f"[{name}]: {e}")


@dataclass
class CampaignConfig:
    mode: str = "full"
    naive_weighting: bool = False
    seed: int = 0
    out_dir: Path = Path("campaign")
    rounds: int = 1
    final_t_max: int = 20
    anchors: Tuple[str, ...] = ANCHORS
    system: SystemLoopSettings = SystemLoopSettings()
    interloop: InterloopSettings = InterloopSettings()
    tech: TechLoopSettings = TechLoopSettings()
    array: ArraySettings = ArraySettings()

    @property
    def uses_fusion(self) -> bool:
        return self.mode in ("no_rechar", "full")

    @property
    def uses_rechar(self) -> bool:
        return self.mode in ("no_fusion", "full")

    def validate(self) -> "CampaignConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.rounds < 1 or self.final_t_max < 0:
            raise ConfigError(f"rounds must be >= 1 and final_t_max >= 0, got {self.rounds} / {self.final_t_max}")
        if not self.anchors or set(self.anchors) - set(ANCHORS):
            raise ConfigError(f"anchors must be a non-empty subset of {ANCHORS}, got {list(self.anchors)}")
        if self.interloop.lam <= 0 or self.interloop.k < 1 or self.interloop.n_ext < 0:
            raise ConfigError(f"[interloop] out of range: {self.interloop}")
        for name in ("rows", "cols"):
            value = getattr(self.array, name)
            if value is not None and value < 1:
                raise ConfigError(f"[array] {name} must be >= 1, got {value}")
        if self.array.width is not None and self.array.width < 2:
            raise ConfigError(f"[array] width must be >= 2, got {self.array.width}")
        return self

    @classmethod
    def from_dict(cls, doc: Mapping, base_dir: Optional[Path] = None) -> "CampaignConfig":
        sections = {"campaign", "system", "interloop", "tech", "mlp", "array"}
        unknown = set(doc) - sections
        if unknown:
            raise ConfigError(f"unknown sections {sorted(unknown)}")
        campaign = dict(doc.get("campaign", {}))
        known = {"mode", "naive_weighting", "seed", "out_dir", "rounds", "final_t_max", "anchors"}
        if set(campaign) - known:
            raise ConfigError(f"unknown keys in [campaign]: {sorted(set(campaign) - known)}")
        if "out_dir" in campaign:
            out = Path(campaign["out_dir"])
            campaign["out_dir"] = out if out.is_absolute() or base_dir is None else base_dir / out
        if "anchors" in campaign:
            campaign["anchors"] = tuple(campaign["anchors"])
        try:
            tech = TechLoopSettings.from_dict(doc.get("tech", {}), doc.get("mlp", {}))
        except TypeError as e:
            raise ConfigError(f"[tech]/[mlp]: {e}")
        config = cls(**campaign,
                     system=SystemLoopSettings.from_dict(doc.get("system", {})),
                     interloop=_section(InterloopSettings, doc.get("interloop", {}), "interloop"),
                     tech=tech,
                     array=_section(ArraySettings, doc.get("array", {}), "array"))
        return config.validate()


def parse_campaign_config(text: str, base_dir: Optional[Path] = None) -> CampaignConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"campaign config is not valid TOML: {e}")
    return CampaignConfig.from_dict(doc, base_dir)


def load_campaign_config(path: Union[str, Path]) -> CampaignConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read campaign config {path}: {e}")
    return parse_campaign_config(text, path.parent)


@dataclass
class AnchorResult:
    name: str
    point: Tuple[float, float]
    config: ParameterConfig
    direction: DirectionWeights
    contributions: CellContribution
    library: str
    tech: Optional[TechCandidate] = None
    tech_y: Optional[float] = None
    r2_validation: List[float] = field(default_factory=list)
    hypervolume: Optional[float] = None
    cosine: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "anchor": self.name,
            "point": list(self.point),
            "config": self.config.to_dict(),
            "direction": self.direction.to_dict(),
            "contributions": self.contributions.to_dict(),
            "library": self.library,
            "tech": self.tech.to_dict() if self.tech else None,
            "tech_y": self.tech_y,
            "r2_validation": self.r2_validation,
            "hypervolume": self.hypervolume,
            "cosine": self.cosine,
        }


@dataclass
class CampaignReport:
    mode: str
    seed: int
    naive_weighting: bool = False
    status: str = "ok"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    bounds: Optional[Tuple[List[float], List[float]]] = None
    hypervolume: Dict[str, float] = field(default_factory=dict)
    anchors: List[AnchorResult] = field(default_factory=list)
    patterns: List[Dict] = field(default_factory=list)
    fused: List[str] = field(default_factory=list)
    outputs: Dict[str, str] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.status != "ok"

    def to_dict(self) -> Dict:
        return {
            "format": REPORT_FORMAT,
            "version": 1,
            "mode": self.mode,
            "seed": self.seed,
            "naive_weighting": self.naive_weighting,
            "status": self.status,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "normalization": {"lower": self.bounds[0], "upper": self.bounds[1]} if self.bounds else None,
            "hypervolume": self.hypervolume,
            "anchors": [a.to_dict() for a in self.anchors],
            "fused": self.fused,
            "outputs": self.outputs,
        }


@contextmanager
def _stage(name: str) -> Iterator[None]:
    logger.info(f"Stage {name} started")
    try:
        yield
    except StageFailure:
        raise
    except Exception as e:
        logger.error(f"Stage {name} failed: {e}")
        raise StageFailure(name, str(e)) from e
    logger.info(f"Stage {name} finished")


def feasible_hypervolume(records: Sequence[EvaluationRecord], bounds) -> float:
    archive = archive_from_records(records, feasible_only=True)
    if not archive.entries:
        return 0.0
    archive.set_normalization(*bounds)
    return archive.hypervolume()


def _normalized_2d(records: Sequence[EvaluationRecord], bounds) -> Tuple[np.ndarray, List[EvaluationRecord]]:
    usable = [r for r in records if r.ok and r.feasible]
    lower, upper = np.asarray(bounds[0]), np.asarray(bounds[1])
    Y = (np.array([r.objectives for r in usable], dtype=float) - lower) / (upper - lower) if usable else np.empty((0, 3))
    return Y[:, :2], usable


def frontier_directions(records: Sequence[EvaluationRecord], bounds, anchors: Sequence[str] = ANCHORS,
                        k: int = interloop.DEFAULT_NEIGHBORS) -> Dict[str, Tuple[Tuple[float, float], ParameterConfig,
                                                                                  DirectionWeights]]:
    """
    Anchor points of the normalized (delay, power) frontier of the feasible
    records and the frontier normal at each of them. A neighbourhood too
    small or degenerate for a normal falls back to equal weights.
    """
    Y2, usable = _normalized_2d(records, bounds)
    if not usable:
        raise InvalidInputError("no feasible evaluations to analyze")
    front = interloop.frontier_2d(Y2)
    found = interloop.find_anchors(front)
    out = {}
    for name in anchors:
        idx = found.get(name, found["knee"])
        point = front[idx]
        owner = usable[int(np.flatnonzero(np.all(Y2 == point, axis=1))[0])]
        try:
            direction = interloop.ppa_direction(front, idx, min(k, len(front) - 1))
        except (DegenerateGeometryError, InvalidInputError) as e:
            logger.warning(f"No frontier normal at anchor {name} ({e}); using equal weights")
            w = 1.0 / math.sqrt(2.0)
            direction = DirectionWeights(w, w, (float(point[0]), float(point[1])))
        out[name] = ((float(point[0]), float(point[1])), owner.config, direction)
    return out


def mine_fusion_cells(g: NetGraph, settings: InterloopSettings = InterloopSettings()) -> Tuple[List, List[FusedCellDef]]:
    """Mined patterns of g and fused-cell definitions for the n_ext most frequent fusible ones"""
    patterns = mining.mine_islands(g, settings.d_max, settings.o_max, settings.i_max)
    chosen = mining.select_fusion_candidates(mining.fusible_patterns(patterns), settings.n_ext)
    return patterns, mining.make_fused_definitions(chosen)


def analyze_netlist(g: NetGraph, lib: CellLibrary, records: Optional[Sequence[EvaluationRecord]] = None,
                    settings: InterloopSettings = InterloopSettings(), naive_weighting: bool = False,
                    n_patterns: int = 20) -> Dict:
    """Contributions, mined patterns and (with an archive) per-anchor directions of one netlist"""
    timing = static_timing(g, lib)
    contrib = (interloop.uniform_contribution(g, settings.lam) if naive_weighting
               else interloop.cell_contributions(g, lib, timing, settings.lam))
    patterns, definitions = mine_fusion_cells(g, settings)
    report = {
        "netlist": g.name,
        "critical_delay_ns": timing.critical_delay,
        "contributions": contrib.to_dict(),
        "patterns": [p.to_dict() for p in patterns[:n_patterns]],
        "fusion_candidates": [{"name": d.name, "pattern_key": d.pattern_key, "constituents": d.constituents}
                              for d in definitions],
    }
    if records:
        ok = [r for r in records if r.ok and r.feasible] or [r for r in records if r.ok]
        bounds = normalization_bounds(np.array([r.objectives for r in ok], dtype=float), 0.1)
        directions = frontier_directions(ok, bounds, ANCHORS, settings.k)
        report["directions"] = {name: {"point": list(point), "config": config.to_dict(),
                                       "direction": direction.to_dict(), "contributions": contrib.to_dict()}
                                for name, (point, config, direction) in directions.items()}
        report["power_area_correlation"] = interloop.power_area_correlation([r.objectives for r in ok])
    return report


def direction_from_report(doc: Mapping, anchor: str = ANCHORS[0]) -> Tuple[DirectionWeights, CellContribution]:
    """
    Direction and contributions for one anchor of an analysis report (or of
    a campaign's directions.json). A report without directions yields equal
    weights.
    """
    try:
        if anchor in doc:
            entry = doc[anchor]
        elif "directions" in doc:
            if anchor not in doc["directions"]:
                raise ConfigError(f"anchor {anchor!r} not in report, have {sorted(doc['directions'])}")
            entry = doc["directions"][anchor]
        else:
            logger.warning("Report has no frontier directions, using equal weights")
            w = 1.0 / math.sqrt(2.0)
            return DirectionWeights(w, w), CellContribution.from_dict(doc["contributions"])
        return DirectionWeights.from_dict(entry["direction"]), CellContribution.from_dict(entry["contributions"])
    except (KeyError, TypeError) as e:
        raise ConfigError(f"report has no usable direction/contributions: {e}")


def cosine_series(configs: Sequence[ParameterConfig], before: CellLibrary, after: CellLibrary,
                  direction: DirectionWeights, bounds, backend: SystemBackend) -> List[float]:
    """
    Cosine between the direction and the normalized (delay, power) reduction
    each configuration realizes when its library is recharacterized; sorted.
    """
    span = (np.asarray(bounds[1]) - np.asarray(bounds[0]))[:2]
    w = direction.as_array()
    series = []
    for p in configs:
        y0 = np.asarray(backend.evaluate(p, before).objectives[:2])
        y1 = np.asarray(backend.evaluate(p, after).objectives[:2])
        r = (y0 - y1) / span
        norm = np.linalg.norm(r)
        if norm == 0:
            continue
        series.append(float(r @ w / norm))
    return sorted(series)


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1))
    return path


def _frontier_table(mode: str, groups: Mapping[str, Sequence[EvaluationRecord]], bounds) -> pd.DataFrame:
    rows = []
    lower, upper = np.asarray(bounds[0]), np.asarray(bounds[1])
    for name, recs in groups.items():
        archive = archive_from_records(recs, feasible_only=True)
        if not archive.entries:
            continue
        Y = archive.objectives()
        for i in archive.frontier():
            norm = (Y[i] - lower) / (upper - lower)
            rows.append({"mode": mode, "anchor": name, "delay": Y[i][0], "power": Y[i][1], "area": Y[i][2],
                         "delay_norm": norm[0], "power_norm": norm[1], "area_norm": norm[2]})
    columns = ["mode", "anchor", "delay", "power", "area", "delay_norm", "power_norm", "area_norm"]
    return pd.DataFrame.from_records(rows, columns=columns)


class _Campaign:
    """Mutable state of one run_dual_loop call"""

    def __init__(self, config: CampaignConfig, base: CellLibrary, backend: SystemBackend):
        self.config = config
        self.base = base
        self.backend = backend
        self.out = Path(config.out_dir)
        self.records: List[EvaluationRecord] = []
        self.cells = CellDatabase()
        self.report = CampaignReport(config.mode, config.seed, config.naive_weighting)
        self.working = base
        self.definitions: List[FusedCellDef] = []
        self.history: Dict[str, List] = {}

    def persist(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        run_path = self.out / "run.jsonl"
        with run_path.open("w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict()) + "\n")
        self.cells.write(self.out)
        self.report.outputs["run"] = str(run_path)
        if self.report.bounds:
            groups = {"stage1": [r for r in self.records if r.stage == "system"]}
            for a in self.report.anchors:
                groups[a.name] = [r for r in self.records if r.anchor == a.name]
            path = self.out / "frontier.csv"
            _frontier_table(self.config.mode, groups, self.report.bounds).to_csv(path, index=False)
            self.report.outputs["frontier"] = str(path)
        self.report.outputs["report"] = str(_write_json(self.out / "report.json", self.report.to_dict()))

    def add(self, records: Sequence[EvaluationRecord], cells: CellDatabase, stage: str,
            anchor: Optional[str] = None) -> None:
        for rec in records:
            rec.stage, rec.anchor = stage, anchor
        self.records.extend(records)
        self.cells.merge(cells)

    def system_stage(self) -> None:
        with _stage("system-loop"):
            result = run_system_loop(self.base, self.config.system, self.config.seed, self.backend)
            self.add(result.records, result.cells, "system")
            self.report.bounds = (result.archive.lower.tolist(), result.archive.upper.tolist())
            self.report.hypervolume["stage1"] = feasible_hypervolume(result.records, self.report.bounds)
        self.persist()

    def fusion_stage(self, knee_config: ParameterConfig) -> None:
        with _stage("fusion"):
            impl = self.backend.implementation(knee_config.ct_type, knee_config.cpa_type, self.base)
            patterns, self.definitions = mine_fusion_cells(impl.netlist, self.config.interloop)
            self.report.patterns = [p.to_dict() for p in patterns[:20]]
            self.working = cellmodel.extend_with_fused(self.base, self.definitions)
            self.report.fused = [d.name for d in self.definitions]
            doc = {"netlist": impl.netlist.name, "patterns": self.report.patterns,
                   "fused": [{"name": d.name, **d.to_dict(), "record": self.working.get(d.name).to_dict()}
                             for d in self.definitions]}
            self.report.outputs["patterns"] = str(_write_json(self.out / "patterns.json", doc))

    def analysis_stage(self, round_no: int) -> List[AnchorResult]:
        with _stage("interloop-analysis"):
            settings = self.config.interloop
            directions = frontier_directions(self.records, self.report.bounds, self.config.anchors, settings.k)
            if round_no == 1 and self.config.uses_fusion:
                self.fusion_stage(directions[self.config.anchors[0]][1])
            anchors = []
            for name, (point, config, direction) in directions.items():
                impl = self.backend.implementation(config.ct_type, config.cpa_type, self.working)
                if self.config.naive_weighting:
                    contrib = interloop.uniform_contribution(impl.netlist, settings.lam)
                else:
                    contrib = interloop.cell_contributions(impl.netlist, self.working, impl.timing, settings.lam)
                anchors.append(AnchorResult(name, point, config, direction, contrib, self.working.name))
                logger.info(f"Anchor {name} at {point}: direction ({direction.w_delay:.3f}, {direction.w_power:.3f})")
            doc = {a.name: {k: v for k, v in a.to_dict().items() if k in ("point", "config", "direction", "contributions")}
                   for a in anchors}
            doc["round"] = round_no
            self.report.outputs["directions"] = str(_write_json(self.out / "directions.json", doc))
        return anchors

    def tech_stage(self, anchor: AnchorResult, j: int, round_no: int) -> CellLibrary:
        if not self.config.uses_rechar:
            return self.working
        with _stage(f"tech-loop:{anchor.name}"):
            result = run_tech_loop(anchor.direction, anchor.contributions, self.working,
                                   history=self.history.get(anchor.name), settings=self.config.tech,
                                   seed=self.config.seed + 1000 * round_no + j,
                                   out_dir=self.out / "tech" / f"{anchor.name}-r{round_no}")
            self.history[anchor.name] = result.history()
            lib = result.library
            lib.name = f"{self.config.mode}-{anchor.name}-r{round_no}"
            anchor.tech, anchor.tech_y, anchor.r2_validation = result.best, result.best_y, result.r2_validation
            anchor.library = lib.name
            save_library(lib, self.out / "libraries" / f"{lib.name}.json")
        return lib

    def final_stage(self, anchor: AnchorResult, lib: CellLibrary, j: int, round_no: int) -> None:
        with _stage(f"final-system-loop:{anchor.name}"):
            stage_one = [r for r in self.records if r.stage == "system"]
            archive = archive_from_records(stage_one)
            ok = [r for r in stage_one if r.ok]
            pareto_set = [ok[i].config for i in archive.frontier()]
            if self.config.uses_rechar:
                anchor.cosine = cosine_series(pareto_set, self.working, lib, anchor.direction,
                                              self.report.bounds, self.backend)
            settings = replace(self.config.system, t_max=self.config.final_t_max)
            result = run_system_loop(lib, settings, self.config.seed + 17 * (j + 1) + 101 * round_no, self.backend,
                                     initial=pareto_set if len(pareto_set) >= 2 else None,
                                     bounds=(np.asarray(self.report.bounds[0]), np.asarray(self.report.bounds[1])))
            self.add(result.records, result.cells, "final", anchor.name)
            anchor.hypervolume = feasible_hypervolume([r for r in self.records if r.anchor == anchor.name],
                                                      self.report.bounds)
            self.report.hypervolume[anchor.name] = anchor.hypervolume

    def run(self) -> CampaignReport:
        self.system_stage()
        for round_no in range(1, self.config.rounds + 1):
            anchors = self.analysis_stage(round_no)
            self.report.anchors = anchors
            for j, anchor in enumerate(anchors):
                lib = self.tech_stage(anchor, j, round_no)
                self.final_stage(anchor, lib, j, round_no)
                self.persist()
            logger.info(f"Round {round_no}/{self.config.rounds} done: HV {self.report.hypervolume}")
        self.report.hypervolume["combined"] = feasible_hypervolume(self.records, self.report.bounds)
        return self.report


def run_dual_loop(config: CampaignConfig, base: Optional[CellLibrary] = None,
                  backend: Optional[SystemBackend] = None) -> CampaignReport:
    """
    Run one campaign. A failing stage yields a report with status "failed"
    and the name of the stage; artifacts of earlier stages stay on disk.
    """
    config.validate()
    base = base or default_library()
    backend = backend or SystemBackend(config.array.rows, config.array.cols, config.array.width)
    campaign = _Campaign(config, base, backend)
    logger.info(f"Campaign {config.mode} (seed {config.seed}, naive weighting {config.naive_weighting}) "
                f"writing to {campaign.out}")
    try:
        report = campaign.run()
    except StageFailure as e:
        report = campaign.report
        report.status, report.failed_stage, report.error = "failed", e.stage, str(e)
        logger.error(f"Campaign stopped in stage {e.stage}: {e}")
    campaign.persist()
    return report


# ---------------------------------------------------------------------------
# Reports over persisted runs

def _iso(reference: np.ndarray, candidate: np.ndarray, ref_norm: np.ndarray, cand_norm: np.ndarray,
         held: int, tolerance: float):
    """Per reference point, the candidate closest in the held metric; reduction of the other metric"""
    other = 1 - held
    reductions = []
    for a, a_norm in zip(reference, ref_norm):
        gap = np.abs(cand_norm[:, held] - a_norm[held])
        j = int(np.argmin(gap))
        if gap[j] <= tolerance and a[other] != 0:
            reductions.append((a[other] - candidate[j][other]) / a[other])
    if not reductions:
        return NO_ISO
    return {"best": float(max(reductions)), "mean": float(np.mean(reductions)), "pairs": len(reductions)}


def report(paths: Sequence[Union[str, Path]], tolerance: float = ISO_TOLERANCE,
           out_dir: Optional[Union[str, Path]] = None, margin: float = 0.1) -> Dict:
    """
    Iso-metric comparison of persisted runs. Every run is normalized with the
    bounds of all feasible entries of all runs; each later run is compared
    with the first.
    """
    if len(paths) < 2:
        raise InvalidInputError(f"report needs at least 2 runs, got {len(paths)}")
    runs = [[r for r in read_archive(p) if r.ok and r.feasible] for p in paths]
    everything = [r.objectives for run in runs for r in run]
    if not everything:
        raise InvalidInputError("no feasible evaluations in the given runs")
    lower, upper = normalization_bounds(np.array(everything, dtype=float), margin)

    summaries, fronts = [], []
    for path, run in zip(paths, runs):
        archive = archive_from_records(run)
        if archive.entries:
            archive.set_normalization(lower, upper)
        raw2 = np.array([r.objectives[:2] for r in run], dtype=float).reshape(-1, 2)
        front2 = interloop.frontier_2d(raw2) if len(raw2) else raw2
        norm2 = (front2 - lower[:2]) / (upper[:2] - lower[:2])
        fronts.append((front2, norm2))
        summaries.append({
            "path": str(path),
            "n_feasible": len(run),
            "hypervolume": archive.hypervolume() if archive.entries else 0.0,
            "frontier": front2.tolist(),
        })

    comparisons = []
    for i in range(1, len(paths)):
        (ref, ref_n), (cand, cand_n) = fronts[0], fronts[i]
        if len(ref) == 0 or len(cand) == 0:
            iso_power = iso_delay = NO_ISO
        else:
            iso_power = _iso(ref, cand, ref_n, cand_n, held=1, tolerance=tolerance)
            iso_delay = _iso(ref, cand, ref_n, cand_n, held=0, tolerance=tolerance)
        for label, value in (("iso-power delay", iso_power), ("iso-delay power", iso_delay)):
            if value == NO_ISO:
                logger.warning(f"{paths[i]} vs {paths[0]}: {label} reduction: {NO_ISO}")
        comparisons.append({"reference": str(paths[0]), "candidate": str(paths[i]),
                            "iso_power_delay_reduction": iso_power, "iso_delay_power_reduction": iso_delay})

    cosine = {}
    for path in paths:
        sidecar = Path(path).parent / "report.json"
        if sidecar.exists():
            try:
                doc = json.loads(sidecar.read_text())
                cosine[str(path)] = {a["anchor"]: a.get("cosine", []) for a in doc.get("anchors", [])}
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                logger.warning(f"Ignoring unreadable {sidecar}: {e}")

    result = {
        "format": REPORT_FORMAT,
        "version": 1,
        "tolerance": tolerance,
        "normalization": {"lower": lower.tolist(), "upper": upper.tolist()},
        "runs": summaries,
        "comparisons": comparisons,
        "cosine": cosine,
    }
    if out_dir is not None:
        out = Path(out_dir)
        rows = []
        for summary, (front2, norm2) in zip(summaries, fronts):
            for raw, norm in zip(front2, norm2):
                rows.append({"run": summary["path"], "delay": raw[0], "power": raw[1],
                             "delay_norm": norm[0], "power_norm": norm[1]})
        out.mkdir(parents=True, exist_ok=True)
        pd.DataFrame.from_records(rows, columns=["run", "delay", "power", "delay_norm", "power_norm"]).to_csv(
            out / "frontier.csv", index=False)
        _write_json(out / "report.json", result)
    return result


# ---------------------------------------------------------------------------
# Single-loop entry points shared by the CLI and the service

def system_loop_command(out_path: Union[str, Path], budget: int, seed: int = 0,
                        lib: Optional[CellLibrary] = None, settings: SystemLoopSettings = SystemLoopSettings(),
                        array: ArraySettings = ArraySettings()) -> Dict:
    """One system loop of `budget` EHVI iterations, persisted as run.jsonl + celldata/"""
    if budget < 0:
        raise ConfigError(f"budget must be >= 0, got {budget}")
    lib = lib or default_library()
    backend = SystemBackend(array.rows, array.cols, array.width)
    result = run_system_loop(lib, replace(settings, t_max=budget), seed, backend)
    path = write_archive(result, out_path)
    return {
        "archive": str(path),
        "evaluations": len(result.records),
        "failed": sum(1 for r in result.records if not r.ok),
        "hypervolume": result.hv_history[-1],
        "hv_history": result.hv_history,
        "normalization": {"lower": result.archive.lower.tolist(), "upper": result.archive.upper.tolist()},
        "pareto_set": [p.to_dict() for p in result.pareto_set()],
    }


def tech_loop_command(direction_doc: Mapping, lib: CellLibrary, out_dir: Union[str, Path], seed: int = 0,
                      anchor: str = ANCHORS[0], settings: TechLoopSettings = TechLoopSettings()) -> Dict:
    """Technology loop against the direction of one anchor of an analysis report"""
    direction, contrib = direction_from_report(direction_doc, anchor)
    result = run_tech_loop(direction, contrib, lib, settings=settings, seed=seed, out_dir=out_dir)
    out = Path(out_dir)
    return {
        "direction": direction.to_dict(),
        "best": result.best.to_dict(),
        "best_y": result.best_y,
        "evaluations": result.evaluations,
        "r2_validation": result.r2_validation,
        "library": str(out / "library.json"),
        "candidates": str(out / "candidates.csv"),
    }
