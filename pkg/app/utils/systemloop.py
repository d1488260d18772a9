"""
System loop: EHVI-driven Bayesian optimization over the architecture,
synthesis and placement parameters.

Every iteration fits the PRF surrogate on the normalized objectives of all
successful evaluations, scores a random candidate pool by expected
hypervolume improvement, and evaluates the best candidate through the
backend. Evaluations are persisted as JSON lines next to per-netlist cell
data files.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import prf
from .backend import Implementation, SystemBackend, get_backend
from .errors import ConfigError, InsufficientDataError, InvalidInputError, OrthrusError
from .library import CellLibrary
from .pareto import ObjectiveVector, ParetoArchive, ehvi_batch, normalization_bounds
from .space import SYSTEM_SPACE, ParamKind, ParamSpec, ParameterConfig

logger = logging.getLogger(__name__)

CELLDATA_FORMAT = "orthrus-celldata"
RUN_FORMAT = "orthrus-run"


def random_sample(n: int, seed: Union[int, np.random.Generator] = 0,
                  space: Sequence[ParamSpec] = SYSTEM_SPACE) -> List[ParameterConfig]:
    """n independent uniform draws per field"""
    if n < 1:
        raise InvalidInputError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    configs = []
    for _ in range(n):
        values = {}
        for spec in space:
            if spec.kind is ParamKind.CATEGORICAL:
                values[spec.name] = spec.levels[int(rng.integers(len(spec.levels)))]
            else:
                values[spec.name] = float(rng.uniform(spec.low, spec.high))
        configs.append(ParameterConfig(**values))
    return configs


@dataclass(frozen=True)
class SystemLoopSettings:
    """
    System-loop budget. n_mc is the Monte-Carlo sample count of the in-loop
    EHVI estimate over the whole candidate pool: 256 here, against
    pareto.DEFAULT_N_MC (2048) for a standalone ehvi() call.
    """
    t_max: int = 50
    n_init: int = 10
    pool_size: int = 1024
    n_trees: int = 100
    n_mc: int = 256
    margin: float = 0.1

    @classmethod
    def from_dict(cls, data: Mapping) -> "SystemLoopSettings":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown system-loop settings {sorted(unknown)}")
        settings = cls(**dict(data))
        if settings.t_max < 0 or settings.n_init < 2 or settings.pool_size < 1 or settings.n_trees < 1:
            raise ConfigError(f"system-loop settings out of range: {settings}")
        if settings.n_mc < 1 or settings.margin < 0:
            raise ConfigError(f"system-loop settings out of range: {settings}")
        return settings


@dataclass
class EvaluationRecord:
    """One backend evaluation; objectives is None when the backend failed"""
    config: ParameterConfig
    objectives: Optional[ObjectiveVector]
    feasible: bool
    iteration: int
    source: str
    timestamp: float
    netlist_key: Optional[str] = None
    library: Optional[str] = None
    critical_delay_ns: Optional[float] = None
    error: Optional[str] = None
    stage: str = "system"
    anchor: Optional[str] = None

    @property
    def config_id(self) -> str:
        return self.config.config_id()

    @property
    def ok(self) -> bool:
        return self.objectives is not None

    def to_dict(self) -> Dict:
        return {
            "format": RUN_FORMAT,
            "version": 1,
            "config_id": self.config_id,
            "config": self.config.to_dict(),
            "objectives": self.objectives._asdict() if self.objectives else None,
            "feasible": self.feasible,
            "iteration": self.iteration,
            "source": self.source,
            "timestamp": self.timestamp,
            "celldata": f"celldata/{self.netlist_key}.json" if self.netlist_key else None,
            "library": self.library,
            "critical_delay_ns": self.critical_delay_ns,
            "error": self.error,
            "stage": self.stage,
            "anchor": self.anchor,
        }

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EvaluationRecord":
        if doc.get("format", RUN_FORMAT) != RUN_FORMAT:
            raise ConfigError(f"not a run record: format {doc.get('format')}")
        try:
            obj = doc.get("objectives")
            celldata = doc.get("celldata")
            return cls(
                config=ParameterConfig.from_dict(doc["config"]),
                objectives=ObjectiveVector(**obj) if obj else None,
                feasible=bool(doc["feasible"]),
                iteration=int(doc.get("iteration", 0)),
                source=doc.get("source", "init"),
                timestamp=float(doc.get("timestamp", 0.0)),
                netlist_key=Path(celldata).stem if celldata else None,
                library=doc.get("library"),
                critical_delay_ns=doc.get("critical_delay_ns"),
                error=doc.get("error"),
                stage=doc.get("stage", "system"),
                anchor=doc.get("anchor"),
            )
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed run record: {e}")


class CellDatabase:
    """Cell data of every evaluated netlist, shared by the configurations that produced it"""

    def __init__(self):
        self.implementations: Dict[str, Implementation] = {}
        self.libraries: Dict[str, CellLibrary] = {}
        self.records: List[Tuple[str, str]] = []

    def add(self, config_id: str, impl: Implementation, lib: CellLibrary) -> None:
        self.implementations.setdefault(impl.key, impl)
        self.libraries.setdefault(impl.key, lib)
        self.records.append((config_id, impl.key))

    def netlist_key(self, config_id: str) -> Optional[str]:
        for cid, key in reversed(self.records):
            if cid == config_id:
                return key
        return None

    def implementation(self, config_id: str) -> Optional[Implementation]:
        key = self.netlist_key(config_id)
        return self.implementations.get(key) if key else None

    @staticmethod
    def celldata(impl: Implementation, lib: CellLibrary) -> Dict:
        g = impl.netlist
        instances = {}
        for cid, cell in g.cells.items():
            record = lib.get(cell.type)
            instances[cid] = {"type": cell.type, "power": record.power, "area": record.area,
                              "max_path_delay": impl.timing.through_delay.get(cid)}
        return {
            "format": CELLDATA_FORMAT,
            "version": 1,
            "key": impl.key,
            "netlist": g.name,
            "library": lib.name,
            "critical_delay_ns": impl.timing.critical_delay,
            "instances": instances,
            "paths": [asdict(p) for p in impl.timing.paths],
        }

    def merge(self, other: "CellDatabase") -> None:
        for key, impl in other.implementations.items():
            self.implementations.setdefault(key, impl)
            self.libraries.setdefault(key, other.libraries[key])
        self.records.extend(other.records)

    def write(self, out_dir: Union[str, Path]) -> List[Path]:
        out = Path(out_dir) / "celldata"
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for key, impl in sorted(self.implementations.items()):
            path = out / f"{key}.json"
            if not path.exists():
                path.write_text(json.dumps(self.celldata(impl, self.libraries[key])))
            written.append(path)
        return written


@dataclass
class SystemLoopResult:
    archive: ParetoArchive
    records: List[EvaluationRecord]
    cells: CellDatabase
    library: CellLibrary
    hv_history: List[float] = field(default_factory=list)

    def evaluated(self) -> List[EvaluationRecord]:
        """Successful records, aligned with archive entries"""
        return [r for r in self.records if r.ok]

    def pareto_set(self) -> List[ParameterConfig]:
        ok = self.evaluated()
        return [ok[i].config for i in self.archive.frontier()]

    def frontier(self) -> np.ndarray:
        idx = self.archive.frontier()
        return self.archive.objectives()[idx] if idx else np.empty((0, 3))


def _evaluate(backend: SystemBackend, p: ParameterConfig, lib: CellLibrary, iteration: int, source: str,
              cells: CellDatabase) -> EvaluationRecord:
    try:
        ev = backend.evaluate(p, lib)
    except OrthrusError as e:
        logger.warning(f"Backend failed on {p.config_id()} ({p.ct_type}/{p.cpa_type}): {e}; marked infeasible")
        return EvaluationRecord(p, None, False, iteration, source, time.time(), library=lib.name, error=str(e))
    cells.add(p.config_id(), ev.implementation, lib)
    return EvaluationRecord(p, ev.objectives, ev.feasible, iteration, source, time.time(),
                            ev.implementation.key, lib.name, ev.critical_delay_ns)


def run_system_loop(lib: CellLibrary, settings: SystemLoopSettings = SystemLoopSettings(), seed: int = 0,
                    backend: Optional[SystemBackend] = None,
                    initial: Optional[Sequence[ParameterConfig]] = None,
                    bounds: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                    progress: Optional[Callable[[int, float], None]] = None) -> SystemLoopResult:
    """
    Run n_init random evaluations (or the given initial configs) followed by
    t_max EHVI iterations. Normalization bounds come from the feasible
    initial samples unless given.
    """
    backend = backend or get_backend()
    rng = np.random.default_rng(seed)
    cells = CellDatabase()
    archive = ParetoArchive()
    records: List[EvaluationRecord] = []

    def record(rec: EvaluationRecord) -> None:
        records.append(rec)
        if rec.ok:
            archive.add(rec.config_id, rec.objectives, rec.feasible)

    start = list(initial) if initial is not None else random_sample(settings.n_init, rng)
    for p in start:
        record(_evaluate(backend, p, lib, 0, "init", cells))
    ok = [r for r in records if r.ok]
    if len(ok) < 2:
        raise InsufficientDataError(f"only {len(ok)} of {len(start)} initial configurations evaluated")

    if bounds is None:
        feasible = [r.objectives for r in ok if r.feasible] or [r.objectives for r in ok]
        bounds = normalization_bounds(np.array(feasible, dtype=float), settings.margin)
    archive.set_normalization(*bounds)
    hv_history = [archive.hypervolume()]
    logger.info(f"System loop start: {len(ok)} initial evaluations, HV {hv_history[-1]:.5f}")

    failed = {r.config_id for r in records if not r.ok}
    for t in range(1, settings.t_max + 1):
        ok = [r for r in records if r.ok]
        X = np.array([prf.encode_config(r.config) for r in ok])
        Y = archive.normalize(archive.objectives())
        model = prf.fit(X, Y, B=settings.n_trees, seed=seed + t)
        pool = random_sample(settings.pool_size, rng)
        means, variances = model.predict_batch(np.array([prf.encode_config(p) for p in pool]))
        scores = ehvi_batch(means, variances, archive.frontier_points(), archive.y_ref, settings.n_mc, seed + t)
        for i, p in enumerate(pool):
            if p.config_id() in failed:
                scores[i] = -np.inf
        best = int(np.argmax(scores))
        rec = _evaluate(backend, pool[best], lib, t, "ehvi", cells)
        record(rec)
        if not rec.ok:
            failed.add(rec.config_id)
        hv_history.append(archive.hypervolume())
        logger.info(f"System loop iteration {t}/{settings.t_max}: EHVI {scores[best]:.5f}, "
                    f"HV {hv_history[-1]:.5f}, frontier {len(archive.frontier())}")
        if progress:
            progress(t, hv_history[-1])

    return SystemLoopResult(archive, records, cells, lib, hv_history)


def write_archive(result: SystemLoopResult, path: Union[str, Path]) -> Path:
    """run.jsonl plus celldata/ next to it"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for rec in result.records:
            fh.write(json.dumps(rec.to_dict()) + "\n")
    result.cells.write(path.parent)
    logger.info(f"Wrote {len(result.records)} evaluations to {path}")
    return path


def read_archive(path: Union[str, Path]) -> List[EvaluationRecord]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read archive {path}: {e}")
    records = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(EvaluationRecord.from_dict(json.loads(line)))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{n}: {e}")
    return records


def archive_from_records(records: Sequence[EvaluationRecord], feasible_only: bool = False) -> ParetoArchive:
    archive = ParetoArchive()
    for r in records:
        if r.ok and (r.feasible or not feasible_only):
            archive.add(r.config_id, r.objectives, r.feasible)
    return archive
