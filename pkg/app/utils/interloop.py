"""
Inter-loop analysis: turns system-loop results into guidance for the
technology loop.

* power / timing contribution of every cell type,
* the local normal of the (delay, power) Pareto frontier at an anchor point,
* anchor selection on the frontier.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DegenerateGeometryError, InvalidInputError
from .library import CellLibrary
from .netlist import NetGraph
from .pareto import pareto_front
from .sta import TimingReport

logger = logging.getLogger(__name__)

DEFAULT_LAMBDA = 10.0
DEFAULT_NEIGHBORS = 2


@dataclass
class CellContribution:
    """Per cell-type weights; each map sums to 1"""
    w_power: Dict[str, float]
    w_delay: Dict[str, float]
    lam: float = DEFAULT_LAMBDA

    @property
    def cell_types(self) -> List[str]:
        return sorted(set(self.w_power) | set(self.w_delay))

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CellContribution":
        return cls(dict(data["w_power"]), dict(data["w_delay"]), float(data.get("lam", DEFAULT_LAMBDA)))


@dataclass(frozen=True)
class DirectionWeights:
    """Unit-norm, non-negative (delay, power) weights at an anchor of the frontier"""
    w_delay: float
    w_power: float
    anchor: tuple = field(default=(0.0, 0.0))

    def as_array(self) -> np.ndarray:
        return np.array([self.w_delay, self.w_power])

    def to_dict(self) -> Dict:
        return {"w_delay": self.w_delay, "w_power": self.w_power, "anchor": list(self.anchor)}

    @classmethod
    def from_dict(cls, data: Mapping) -> "DirectionWeights":
        w = np.array([float(data["w_delay"]), float(data["w_power"])])
        if np.any(w < 0) or not np.isclose(np.linalg.norm(w), 1.0, atol=1e-9):
            raise InvalidInputError(f"direction weights must be non-negative and unit-norm, got {tuple(w)}")
        return cls(float(w[0]), float(w[1]), tuple(data.get("anchor", (0.0, 0.0))))


def power_contribution(g: NetGraph, lib: CellLibrary) -> Dict[str, float]:
    """Share of total cell power drawn by each cell type"""
    if len(g) == 0:
        raise InvalidInputError(f"netlist {g.name} has no cells")
    lib.check_covers(g)
    per_type: Dict[str, float] = {}
    for cell_type, n in sorted(g.cell_type_counts().items()):
        per_type[cell_type] = lib.get(cell_type).power * n
    total = sum(per_type.values())
    return {t: p / total for t, p in per_type.items()}


def timing_contribution(g: NetGraph, sta_result: Union[TimingReport, Mapping[str, float]],
                        lam: float = DEFAULT_LAMBDA) -> Dict[str, float]:
    """
    Every combinational instance weighs exp(lam * worst path delay through it, ns);
    a type's weight is the normalized sum over its instances.
    """
    if lam <= 0:
        raise InvalidInputError(f"lambda must be > 0, got {lam}")
    through = sta_result.through_delay if isinstance(sta_result, TimingReport) else sta_result
    instances = g.combinational_cells()
    if not instances:
        raise InvalidInputError(f"netlist {g.name} has no combinational cells")
    delays = []
    for cell in instances:
        if cell.id not in through:
            raise InvalidInputError(f"no path delay for instance {cell.id}")
        delays.append(through[cell.id])
    d = np.asarray(delays, dtype=float)
    # shifting by the maximum leaves the normalized weights unchanged
    w = np.exp(lam * (d - d.max()))
    per_type: Dict[str, float] = {}
    for cell, weight in zip(instances, w):
        per_type[cell.type] = per_type.get(cell.type, 0.0) + float(weight)
    total = float(w.sum())
    return {t: v / total for t, v in sorted(per_type.items())}


def uniform_contribution(g: NetGraph, lam: float = DEFAULT_LAMBDA) -> CellContribution:
    """Every cell type present counts the same (naive weighting)"""
    types = sorted({c.type for c in g.cells.values()})
    if not types:
        raise InvalidInputError(f"netlist {g.name} has no cells")
    comb = sorted({c.type for c in g.combinational_cells()}) or types
    return CellContribution({t: 1.0 / len(types) for t in types}, {t: 1.0 / len(comb) for t in comb}, lam)


def cell_contributions(g: NetGraph, lib: CellLibrary, timing: TimingReport,
                       lam: float = DEFAULT_LAMBDA) -> CellContribution:
    return CellContribution(power_contribution(g, lib), timing_contribution(g, timing, lam), lam)


def ppa_direction(frontier_points: Sequence[Sequence[float]], anchor_index: int,
                  k: int = DEFAULT_NEIGHBORS) -> DirectionWeights:
    """
    Normal of the local frontier at the anchor from the SVD of its k nearest
    neighbours (centered). The last right-singular vector v is flipped when
    it points away from the origin side; weights are -v clipped to >= 0.
    """
    pts = np.asarray(frontier_points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidInputError(f"frontier points must have shape (n, 2), got {pts.shape}")
    if k < 1 or len(pts) < k + 1:
        raise InvalidInputError(f"need at least k+1={k + 1} frontier points, got {len(pts)}")
    if not 0 <= anchor_index < len(pts):
        raise InvalidInputError(f"anchor index {anchor_index} out of range")
    anchor = pts[anchor_index]
    dist = np.linalg.norm(pts - anchor, axis=1)
    others = [i for i in np.argsort(dist, kind="stable") if i != anchor_index]
    neighbors = pts[others[:k]]
    centered = neighbors - neighbors.mean(axis=0)
    if np.allclose(centered, 0.0, atol=1e-15):
        raise DegenerateGeometryError(f"the {k} neighbours of anchor {tuple(anchor)} coincide")
    _, _, vt = np.linalg.svd(centered)
    v = vt[-1]
    if float(v @ anchor) > 0:
        v = -v
    w = np.clip(-v, 0.0, None)
    norm = np.linalg.norm(w)
    if norm == 0:
        raise DegenerateGeometryError(f"direction at anchor {tuple(anchor)} has no non-negative component")
    w = w / norm
    return DirectionWeights(float(w[0]), float(w[1]), (float(anchor[0]), float(anchor[1])))


def frontier_2d(points: Sequence[Sequence[float]]) -> np.ndarray:
    """Non-dominated (delay, power) points, unique, sorted by delay"""
    pts = np.asarray(points, dtype=float)[:, :2]
    front = np.unique(pts[pareto_front(pts)], axis=0)
    return front[np.lexsort((front[:, 1], front[:, 0]))]


def find_anchors(front: np.ndarray) -> Dict[str, int]:
    """
    Indices of the knee (closest to the ideal point after scaling the front
    to [0, 1]) and of the minimum-delay point; coincident anchors are merged.
    """
    front = np.asarray(front, dtype=float)
    if len(front) == 0:
        raise InvalidInputError("cannot pick anchors on an empty frontier")
    lo, hi = front.min(axis=0), front.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scaled = (front - lo) / span
    knee = int(np.argmin(np.linalg.norm(scaled, axis=1)))
    low_delay = int(np.lexsort((front[:, 1], front[:, 0]))[0])
    anchors = {"knee": knee}
    if low_delay != knee:
        anchors["low_delay"] = low_delay
    return anchors


def power_area_correlation(Y: Sequence[Sequence[float]]) -> Optional[float]:
    """Pearson r between power and area columns; None when either is constant"""
    Y = np.asarray(Y, dtype=float)
    if len(Y) < 2 or np.std(Y[:, 1]) == 0 or np.std(Y[:, 2]) == 0:
        return None
    return float(np.corrcoef(Y[:, 1], Y[:, 2])[0, 1])
