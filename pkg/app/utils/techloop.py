"""
Technology loop: Latin-hypercube initialization, MLP surrogate, enhanced DE
and true re-evaluation through the analytic cell model.

Genes live in the unit box. lext and the per-fused-cell row counts evolve as
continuous genes and are rounded when decoded; lct is never a gene, it is
derived from lg and lext so every decoded point meets the CPP constraint.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import qmc

from . import cellmodel
from .errors import ConfigError, InvalidInputError, LibraryMismatchError
from .evolution import DEState, enhanced_de
from .interloop import CellContribution, DirectionWeights
from .library import ROW_CHOICES, CellLibrary, save_library
from .mlp import MLPSettings, train_mlp
from .space import CPP_TARGET_NM, TECH_SPECS, TechParams

logger = logging.getLogger(__name__)

CONTINUOUS_GENES = ("phig_n", "phig_p", "hfin_nm", "tfin_nm", "lg_nm")
LEXT_LEVELS = tuple(sorted(TECH_SPECS["lext_nm"].levels))
REGRESSION_TOLERANCE = 1e-12


@dataclass
class TechCandidate:
    """Technology parameters plus the row count of every fused cell"""
    params: TechParams
    rows: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {**self.params.to_dict(), "num_rows": dict(self.rows)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "TechCandidate":
        values = dict(data)
        rows = {k: int(v) for k, v in (values.pop("num_rows", None) or {}).items()}
        return cls(TechParams.from_dict(values), rows)


@dataclass(frozen=True)
class TechGenome:
    fused: Tuple[str, ...] = ()
    cpp_target: float = CPP_TARGET_NM

    @property
    def names(self) -> Tuple[str, ...]:
        return CONTINUOUS_GENES + ("lext_nm",) + tuple(f"rows:{n}" for n in self.fused)

    @property
    def dim(self) -> int:
        return len(self.names)

    def bounds(self) -> np.ndarray:
        lo_hi = [(TECH_SPECS[n].low, TECH_SPECS[n].high) for n in CONTINUOUS_GENES]
        lo_hi.append((LEXT_LEVELS[0], LEXT_LEVELS[-1]))
        lo_hi.extend((ROW_CHOICES[0], ROW_CHOICES[-1]) for _ in self.fused)
        return np.asarray(lo_hi, dtype=float)

    def decode(self, u: Sequence[float]) -> TechCandidate:
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        if u.shape != (self.dim,):
            raise InvalidInputError(f"expected {self.dim} genes, got shape {u.shape}")
        b = self.bounds()
        x = b[:, 0] + u * (b[:, 1] - b[:, 0])
        values = {name: float(v) for name, v in zip(CONTINUOUS_GENES, x)}
        lext = min(LEXT_LEVELS, key=lambda level: (abs(level - x[len(CONTINUOUS_GENES)]), level))
        rows = {name: int(np.clip(np.rint(v), ROW_CHOICES[0], ROW_CHOICES[-1]))
                for name, v in zip(self.fused, x[len(CONTINUOUS_GENES) + 1:])}
        params = TechParams.with_derived_lct(self.cpp_target, lext_nm=int(lext), **values)
        return TechCandidate(params, rows)

    def encode(self, c: TechCandidate) -> np.ndarray:
        x = [getattr(c.params, n) for n in CONTINUOUS_GENES] + [c.params.lext_nm]
        x += [c.rows.get(name, 1) for name in self.fused]
        b = self.bounds()
        return (np.asarray(x, dtype=float) - b[:, 0]) / (b[:, 1] - b[:, 0])

    def snap(self, u: np.ndarray) -> np.ndarray:
        return self.encode(self.decode(u))


def latin_hypercube(n: int, d: int, seed: int = 0) -> np.ndarray:
    """n stratified points in [0, 1)^d, one per interval in every dimension"""
    if n < 1:
        raise InvalidInputError(f"sample count must be >= 1, got {n}")
    return qmc.LatinHypercube(d=d, seed=seed).random(n)


def lhs_sample(n: int, genome: TechGenome = TechGenome(), seed: int = 0) -> List[TechCandidate]:
    """
    LHS over the continuous genes; lext and row counts drawn uniformly from
    separate streams, so genomes with and without fused cells share the
    same process points for a seed
    """
    unit = latin_hypercube(n, len(CONTINUOUS_GENES), seed)
    lext_rng = np.random.default_rng(seed)
    rows_rng = np.random.default_rng([seed, 1])
    lo_hi = genome.bounds()[:len(CONTINUOUS_GENES)]
    out = []
    for row in unit:
        values = {name: float(lo + v * (hi - lo)) for name, v, (lo, hi) in zip(CONTINUOUS_GENES, row, lo_hi)}
        lext = int(lext_rng.choice(LEXT_LEVELS))
        rows = {name: int(rows_rng.choice(ROW_CHOICES)) for name in genome.fused}
        out.append(TechCandidate(TechParams.with_derived_lct(genome.cpp_target, lext_nm=lext, **values), rows))
    return out


@dataclass(frozen=True)
class TechLoopSettings:
    """
    Loop budget, DE hyperparameters and the MLP settings. With a positive
    regression_penalty the loop keeps the contribution-weighted delay and
    power from exceeding those of the incoming library: the surrogate learns
    y + regression_penalty * excess, the default process point is always
    evaluated, and only samples without excess can win. 0 searches the plain
    objective.
    """
    n_init: int = 60
    i_max: int = 2
    s_pop: int = 100
    n_gen: int = 20
    s_top: int = 5
    mf: float = 0.8
    cr: float = 0.9
    pf: float = 1e3
    pt: float = 0.1
    elite_mix_prob: float = 0.2
    archive_size: int = 20
    regression_penalty: float = 10.0
    mlp: MLPSettings = MLPSettings()

    @classmethod
    def from_dict(cls, data: Mapping, mlp: Optional[Mapping] = None) -> "TechLoopSettings":
        known = {f.name for f in fields(cls)} - {"mlp"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown tech-loop settings {sorted(unknown)}")
        mlp_known = {f.name for f in fields(MLPSettings)}
        if mlp and set(mlp) - mlp_known:
            raise ConfigError(f"unknown MLP settings {sorted(set(mlp) - mlp_known)}")
        settings = cls(**dict(data), mlp=MLPSettings(**dict(mlp or {})))
        if settings.n_init < 8 or settings.i_max < 0 or settings.s_top < 1 or settings.s_pop < 4:
            raise ConfigError(f"tech-loop settings out of range: {settings}")
        if not (0 <= settings.cr <= 1 and settings.mf > 0 and settings.pt >= 0 and settings.pf >= 0):
            raise ConfigError(f"DE hyperparameters out of range: {settings}")
        if settings.regression_penalty < 0:
            raise ConfigError(f"regression_penalty must be >= 0, got {settings.regression_penalty}")
        return settings

    @property
    def guarded(self) -> bool:
        return self.regression_penalty > 0

    def de_state(self, dim: int) -> DEState:
        return DEState(dim, s_pop=self.s_pop, n_gen=self.n_gen, s_top=self.s_top, mf=self.mf, cr=self.cr,
                       pf=self.pf, pt=self.pt, elite_mix_prob=self.elite_mix_prob,
                       archive_size=max(self.archive_size, self.s_top))


@dataclass
class TechSample:
    candidate: TechCandidate
    library: CellLibrary
    y: float
    source: str
    predicted: float = float("nan")
    regression: float = 0.0


@dataclass
class TechLoopResult:
    best: TechCandidate
    best_y: float
    library: CellLibrary
    samples: List[TechSample]
    evaluations: int
    r2_validation: List[float]

    def history(self) -> List[Tuple[TechCandidate, CellLibrary]]:
        return [(s.candidate, s.library) for s in self.samples]

    def table(self) -> pd.DataFrame:
        records = []
        for s in self.samples:
            rec = {"source": s.source, **asdict(s.candidate.params)}
            rec.update({f"rows:{k}": v for k, v in s.candidate.rows.items()})
            rec.update({"y": s.y, "regression": s.regression, "predicted": s.predicted})
            records.append(rec)
        return pd.DataFrame.from_records(records)


def evaluate_candidate(c: TechCandidate, base: CellLibrary, contrib: CellContribution,
                       direction: DirectionWeights,
                       factors: Optional[cellmodel.TechFactors] = None) -> Tuple[CellLibrary, float]:
    lib = cellmodel.cell_simulate(c.params, c.rows, base, factors)
    return lib, cellmodel.ppa_calculation(lib, contrib, direction, base)


def _sample(c: TechCandidate, lib: CellLibrary, y: float, source: str, contrib: CellContribution,
            base: CellLibrary, predicted: float = float("nan")) -> TechSample:
    return TechSample(c, lib, y, source, predicted, cellmodel.regression(lib, contrib, base))


def _rescore(history: Sequence[Tuple[TechCandidate, CellLibrary]], base: CellLibrary, contrib: CellContribution,
             direction: DirectionWeights) -> List[TechSample]:
    samples = []
    for candidate, lib in history:
        try:
            y = cellmodel.ppa_calculation(lib, contrib, direction, base)
            samples.append(_sample(candidate, lib, y, "history", contrib, base))
        except LibraryMismatchError as e:
            logger.warning(f"Dropping history sample: {e}")
    return samples


def run_tech_loop(direction: DirectionWeights, contrib: CellContribution, base: CellLibrary,
                  history: Optional[Sequence[Tuple[TechCandidate, CellLibrary]]] = None,
                  settings: TechLoopSettings = TechLoopSettings(), seed: int = 0,
                  out_dir: Optional[Union[str, Path]] = None,
                  factors: Optional[cellmodel.TechFactors] = None) -> TechLoopResult:
    """
    Search technology parameters and fused-cell row counts that minimize
    W_delay * Delay + W_power * Power for the given contributions. `base` is
    the single-row library (fused cells included). The best truly evaluated
    admissible point wins; its library is written to out_dir when given.
    """
    factors = factors or cellmodel.get_tech_factors()
    genome = TechGenome(tuple(sorted(base.fused)), factors.cpp_target_nm)
    logger.info(f"Tech loop: direction ({direction.w_delay:.3f}, {direction.w_power:.3f}), "
                f"{genome.dim} genes, N={settings.n_init}, I_max={settings.i_max}, "
                f"regression penalty {settings.regression_penalty}")

    samples = _rescore(history or [], base, contrib, direction)
    initial = lhs_sample(settings.n_init, genome, seed)
    sources = ["lhs"] * len(initial)
    if settings.guarded:
        initial.insert(0, TechCandidate(TechParams(), {name: 1 for name in genome.fused}))
        sources.insert(0, "incumbent")
    evaluations = 0
    for c, source in zip(initial, sources):
        lib, y = evaluate_candidate(c, base, contrib, direction, factors)
        samples.append(_sample(c, lib, y, source, contrib, base))
        evaluations += 1

    def objective(s: TechSample) -> float:
        return s.y + settings.regression_penalty * s.regression

    r2_validation = []
    for it in range(settings.i_max):
        X = np.array([genome.encode(s.candidate) for s in samples])
        y = np.array([objective(s) for s in samples])
        model = train_mlp(X, y, seed=seed + it, settings=settings.mlp)
        r2_validation.append(model.r2_validation)
        seeds = X[np.argsort(y, kind="stable")]
        found = enhanced_de(model, seeds, settings.de_state(genome.dim), seed=seed + it, snap=genome.snap)
        for u, predicted in found:
            c = genome.decode(u)
            lib, y_true = evaluate_candidate(c, base, contrib, direction, factors)
            samples.append(_sample(c, lib, y_true, f"de-{it + 1}", contrib, base, predicted))
            evaluations += 1
        best_so_far = min(objective(s) for s in samples)
        logger.info(f"Tech loop iteration {it + 1}/{settings.i_max}: {len(found)} candidates evaluated, "
                    f"best objective {best_so_far:.6f}")

    admissible = [s for s in samples if not settings.guarded or s.regression <= REGRESSION_TOLERANCE]
    best = min(admissible or samples, key=lambda s: s.y)
    library = CellLibrary(dict(best.library.cells), dict(best.library.fused), f"{base.name}@tech", best.library.tech)
    result = TechLoopResult(best.candidate, best.y, library, samples, evaluations, r2_validation)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_library(library, out / "library.json")
        result.table().to_csv(out / "candidates.csv", index=False)
    logger.info(f"Tech loop done: best y {best.y:.6f} after {evaluations} evaluations, "
                f"params {best.candidate.to_dict()}")
    return result
