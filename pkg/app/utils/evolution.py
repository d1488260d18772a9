"""
Differential evolution with an elite archive and a minimum-distance penalty.

Works in the unit box [0, 1]^d. Each generation builds one DE/rand/1/bin
trial per individual from the population at the start of the generation,
scores all trials with the surrogate in one batch, then applies the
selection sequentially:

    f_penalized = f_base + PF * max(0, PT - d_min)

where d_min is the distance of the trial to the elite archive and the
population, excluding the parent and any point identical to it.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Protocol, Tuple

import numpy as np

from .errors import InvalidStateError

logger = logging.getLogger(__name__)


class Surrogate(Protocol):
    def predict(self, X: np.ndarray) -> np.ndarray:
        ...


Snap = Callable[[np.ndarray], np.ndarray]


@dataclass
class Decision:
    generation: int
    index: int
    f_base: float
    d_min: float
    f_penalized: float
    parent_fitness: float
    replaced: bool


@dataclass
class DEState:
    """Population, elite archive and hyperparameters of one run"""
    dim: int
    s_pop: int = 100
    n_gen: int = 20
    s_top: int = 5
    mf: float = 0.8
    cr: float = 0.9
    pf: float = 1e3
    pt: float = 0.1
    elite_mix_prob: float = 0.2
    archive_size: int = 20
    population: np.ndarray = None
    fitness: np.ndarray = None
    elites: np.ndarray = None
    elite_fitness: np.ndarray = None
    generation: int = 0
    decisions: List[Decision] = field(default_factory=list)

    def initialize(self, seeds: Optional[np.ndarray], rng: np.random.Generator,
                   snap: Optional[Snap] = None) -> None:
        """Population from the seed points (up to s_pop) plus uniform random fill"""
        if self.s_pop < 4 or self.dim < 1:
            raise InvalidStateError(f"population of {self.s_pop} in {self.dim} dimensions cannot evolve")
        rows = [] if seeds is None else list(np.clip(np.atleast_2d(seeds)[:self.s_pop], 0.0, 1.0))
        if rows and len(rows[0]) != self.dim:
            raise InvalidStateError(f"seed points have {len(rows[0])} genes, expected {self.dim}")
        fill = rng.random((self.s_pop - len(rows), self.dim))
        pop = np.vstack(rows + list(fill)) if rows else fill
        self.population = np.array([snap(x) for x in pop]) if snap else pop
        self.elites = np.empty((0, self.dim))
        self.elite_fitness = np.empty(0)


def penalized_fitness(f_base: float, d_min: float, pt: float = 0.1, pf: float = 1e3) -> float:
    return f_base + pf * max(0.0, pt - d_min)


def min_distance(trial: np.ndarray, others: np.ndarray, parent: np.ndarray) -> float:
    """Distance to the closest point of `others` that is not the parent"""
    if len(others) == 0:
        return np.inf
    keep = ~np.all(others == parent, axis=1)
    if not keep.any():
        return np.inf
    return float(np.min(np.linalg.norm(others[keep] - trial, axis=1)))


def select_diverse(points: np.ndarray, fitness: np.ndarray, k: int, pt: float) -> List[int]:
    """
    Best point first, then repeatedly the best-fitness point at least pt away
    from everything chosen (ties go to the farthest one).
    """
    chosen: List[int] = []
    order = np.lexsort((np.arange(len(points)), fitness))
    for i in order:
        if len(chosen) >= k:
            break
        if not chosen:
            chosen.append(int(i))
            continue
        d = np.linalg.norm(points[chosen] - points[i], axis=1)
        if d.min() >= pt:
            chosen.append(int(i))
    return chosen


def _update_elites(state: DEState, points: np.ndarray, fitness: np.ndarray) -> None:
    pool = np.vstack([state.elites, points])
    pool_f = np.concatenate([state.elite_fitness, fitness])
    keep = select_diverse(pool, pool_f, state.archive_size, state.pt)
    state.elites = pool[keep]
    state.elite_fitness = pool_f[keep]


def _trial(state: DEState, i: int, rng: np.random.Generator, snap: Optional[Snap]) -> np.ndarray:
    pop = state.population
    others = np.delete(np.arange(len(pop)), i)
    if rng.random() < state.elite_mix_prob and len(state.elites) >= 2:
        a = pop[rng.choice(others)]
        b, c = state.elites[rng.choice(len(state.elites), 2, replace=False)]
    else:
        a, b, c = pop[rng.choice(others, 3, replace=False)]
    mutant = np.clip(a + state.mf * (b - c), 0.0, 1.0)
    if snap:
        mutant = snap(mutant)
    mask = rng.random(state.dim) < state.cr
    mask[rng.integers(state.dim)] = True
    trial = np.where(mask, mutant, pop[i])
    return snap(trial) if snap else trial


def enhanced_de(model: Surrogate, seeds: Optional[np.ndarray], state: DEState, seed: int = 0,
                snap: Optional[Snap] = None) -> List[Tuple[np.ndarray, float]]:
    """
    Evolve state for state.n_gen generations against the surrogate and return
    up to s_top (point, predicted value) pairs, pairwise at least PT apart.
    `snap` maps a unit-box point onto its nearest admissible point.
    """
    rng = np.random.default_rng(seed)
    if state.population is None:
        state.initialize(seeds, rng, snap)
    if len(state.population) < 4:
        raise InvalidStateError(f"population of {len(state.population)} is too small for DE/rand/1")
    if state.elites is None:
        state.elites, state.elite_fitness = np.empty((0, state.dim)), np.empty(0)
    if state.fitness is None:
        state.fitness = np.asarray(model.predict(state.population), dtype=float)
        _update_elites(state, state.population, state.fitness)

    for _ in range(state.n_gen):
        state.generation += 1
        start = state.population.copy()
        trials = np.array([_trial(state, i, rng, snap) for i in range(len(start))])
        f_base = np.asarray(model.predict(trials), dtype=float)
        reference = np.vstack([state.elites, start])
        replaced = 0
        for i, trial in enumerate(trials):
            d_min = min_distance(trial, reference, start[i])
            f_pen = penalized_fitness(float(f_base[i]), d_min, state.pt, state.pf)
            accept = f_pen < state.fitness[i]
            state.decisions.append(Decision(state.generation, i, float(f_base[i]), d_min, f_pen,
                                            float(state.fitness[i]), bool(accept)))
            if accept:
                state.population[i] = trial
                state.fitness[i] = f_pen
                replaced += 1
        _update_elites(state, trials, f_base)
        logger.debug(f"DE generation {state.generation}: {replaced} replacements, "
                     f"best elite {state.elite_fitness[0]:.6g}")

    chosen = select_diverse(state.elites, state.elite_fitness, state.s_top, state.pt)
    if len(chosen) < state.s_top:
        logger.warning(f"Only {len(chosen)} candidates at least {state.pt} apart, wanted {state.s_top}")
    return [(state.elites[i].copy(), float(state.elite_fitness[i])) for i in chosen]
