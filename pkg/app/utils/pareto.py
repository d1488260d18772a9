"""
Pareto dominance, frontier extraction, exact 3D hypervolume and Monte Carlo
EHVI over independent Gaussian posteriors.

All objectives are minimized. Hypervolume is computed against a reference
point; points are clipped to the reference box first.
"""

import bisect
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InvalidInputError

logger = logging.getLogger(__name__)

DEFAULT_N_MC = 2048
EHVI_CHUNK_SAMPLES = 65536


class ObjectiveVector(NamedTuple):
    """(delay ns, power mW, area um^2) triple"""
    delay: float
    power: float
    area: float


@dataclass(frozen=True)
class GaussianPosterior:
    """Independent per-objective Gaussian marginals"""
    mean: tuple
    variance: tuple

    def __post_init__(self):
        var = np.asarray(self.variance, dtype=float)
        if np.any(var < 0) or not np.all(np.isfinite(var)):
            raise InvalidInputError(f"posterior variance must be finite and >= 0, got {self.variance}")
        if not np.all(np.isfinite(np.asarray(self.mean, dtype=float))):
            raise InvalidInputError(f"posterior mean must be finite, got {self.mean}")


def _vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite component: {tuple(arr)}")
    return arr


def _matrix(points, dim: Optional[int] = None, name: str = "points") -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.size == 0:
        return np.empty((0, dim or 3))
    if arr.ndim != 2 or (dim is not None and arr.shape[1] != dim):
        raise InvalidInputError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def dominates(a, b) -> bool:
    """True iff a Pareto-dominates b under minimization"""
    a = _vector(a, "a")
    b = _vector(b, "b")
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))


def pareto_front(Y) -> List[int]:
    """Indices of the non-dominated members of Y (duplicates all kept)"""
    Y = np.asarray(Y, dtype=float)
    if Y.size == 0:
        raise InvalidInputError("pareto_front needs at least one point")
    Y = _matrix(Y, Y.shape[-1] if Y.ndim == 2 else None, "Y")
    # le[j, i]: Y[j] <= Y[i] everywhere; lt[j, i]: strictly better somewhere
    le = np.all(Y[:, None, :] <= Y[None, :, :], axis=2)
    lt = np.any(Y[:, None, :] < Y[None, :, :], axis=2)
    dominated = np.any(le & lt, axis=0)
    return [int(i) for i in np.flatnonzero(~dominated)]


def _clip_to_reference(front: np.ndarray, ref: np.ndarray) -> np.ndarray:
    if len(front) == 0:
        return front
    clipped = np.minimum(front, ref)
    keep = np.all(clipped < ref, axis=1)
    return clipped[keep]


class _Staircase:
    """2D non-dominated staircase with incrementally maintained dominated area"""

    def __init__(self, rx: float, ry: float):
        self.rx = rx
        self.ry = ry
        self.xs: List[float] = []
        self.ys: List[float] = []
        self.area = 0.0

    def insert(self, x: float, y: float) -> None:
        xs, ys = self.xs, self.ys
        k = bisect.bisect_left(xs, x)
        if k > 0 and ys[k - 1] <= y:
            return
        if k < len(xs) and xs[k] == x and ys[k] <= y:
            return
        # points from k on with y >= new y are dominated by the new point
        m = k
        while m < len(xs) and ys[m] >= y:
            m += 1
        x_next = xs[m] if m < len(xs) else self.rx
        old = 0.0
        if k > 0:
            upto = xs[k] if k < m else x_next
            old += (upto - x) * (self.ry - ys[k - 1])
        for j in range(k, m):
            right = xs[j + 1] if j + 1 < m else x_next
            old += (right - xs[j]) * (self.ry - ys[j])
        self.area += (x_next - x) * (self.ry - y) - old
        del xs[k:m]
        del ys[k:m]
        xs.insert(k, x)
        ys.insert(k, y)

    def arrays(self):
        return np.asarray(self.xs), np.asarray(self.ys)


def hypervolume(front, y_ref) -> float:
    """
    Exact Lebesgue measure dominated by `front` inside the box bounded by y_ref.

    Dimension sweep over the third objective with a 2D staircase.
    """
    ref = _vector(y_ref, "y_ref")
    if ref.shape != (3,):
        raise InvalidInputError(f"y_ref must have 3 components, got {ref.shape}")
    pts = _clip_to_reference(_matrix(front, 3, "front"), ref)
    if len(pts) == 0:
        return 0.0
    pts = pts[np.argsort(pts[:, 2], kind="stable")]
    stair = _Staircase(ref[0], ref[1])
    volume = 0.0
    for i, (x, y, z) in enumerate(pts):
        stair.insert(x, y)
        z_next = pts[i + 1, 2] if i + 1 < len(pts) else ref[2]
        volume += stair.area * (z_next - z)
    return float(max(volume, 0.0))


def hypervolume_improvement(front, y_ref, samples) -> np.ndarray:
    """
    Hypervolume gained by adding each row of `samples` to `front`.

    Slices the space along the third objective; inside a slice the gain is the
    part of the sample's 2D box not covered by the slice staircase.
    """
    ref = _vector(y_ref, "y_ref")
    Y = np.minimum(_matrix(samples, 3, "samples"), ref)
    F = _clip_to_reference(_matrix(front, 3, "front"), ref)
    F = F[np.argsort(F[:, 2], kind="stable")] if len(F) else F
    a, b, c = Y[:, 0], Y[:, 1], Y[:, 2]
    rx, ry, rz = ref
    box_area = np.clip(rx - a, 0, None) * np.clip(ry - b, 0, None)

    z_levels = list(F[:, 2]) + [rz]
    # slice below the lowest front point: nothing dominates there
    gain = box_area * np.clip(z_levels[0] - c, 0, None)
    stair = _Staircase(rx, ry)
    for k in range(len(F)):
        stair.insert(F[k, 0], F[k, 1])
        lo, hi = z_levels[k], z_levels[k + 1]
        if hi <= lo:
            continue
        depth = np.clip(hi - np.maximum(lo, c), 0, None)
        active = depth > 0
        if not np.any(active):
            continue
        xs, ys = stair.arrays()
        xa, yb = a[active], b[active]
        xc = np.maximum(xs[None, :], xa[:, None])
        yc = np.maximum(ys[None, :], yb[:, None])
        x_next = np.concatenate([xc[:, 1:], np.full((len(xa), 1), rx)], axis=1)
        covered = np.sum(np.clip(x_next - xc, 0, None) * np.clip(ry - yc, 0, None), axis=1)
        slice_gain = np.clip(box_area[active] - covered, 0, None)
        gain[active] += slice_gain * depth[active]
    return np.clip(gain, 0, None)


@dataclass
class ArchiveEntry:
    config_id: str
    objectives: ObjectiveVector
    feasible: bool = True


@dataclass
class ParetoArchive:
    """
    Evaluated configurations with their objectives.

    When normalization bounds are set, frontier and hypervolume work on
    (y - lower) / (upper - lower); otherwise on raw objectives.
    """
    y_ref: tuple = (1.0, 1.0, 1.0)
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    entries: List[ArchiveEntry] = field(default_factory=list)

    def add(self, config_id: str, objectives: Sequence[float], feasible: bool = True) -> None:
        vec = _vector(objectives, "objectives")
        if np.any(vec < 0):
            raise InvalidInputError(f"objectives must be non-negative, got {tuple(vec)}")
        self.entries.append(ArchiveEntry(config_id, ObjectiveVector(*map(float, vec)), feasible))

    def set_normalization(self, lower: Sequence[float], upper: Sequence[float]) -> None:
        lower = _vector(lower, "lower")
        upper = _vector(upper, "upper")
        if np.any(upper <= lower):
            raise InvalidInputError(f"normalization upper bound must exceed lower bound: {lower} / {upper}")
        self.lower, self.upper = lower, upper

    def objectives(self) -> np.ndarray:
        if not self.entries:
            return np.empty((0, 3))
        return np.array([e.objectives for e in self.entries], dtype=float)

    def normalize(self, Y) -> np.ndarray:
        Y = np.asarray(Y, dtype=float)
        if self.lower is None:
            return Y
        return (Y - self.lower) / (self.upper - self.lower)

    def frontier(self) -> List[int]:
        if not self.entries:
            return []
        return pareto_front(self.objectives())

    def frontier_points(self) -> np.ndarray:
        idx = self.frontier()
        if not idx:
            return np.empty((0, 3))
        return self.normalize(self.objectives()[idx])

    def hypervolume(self) -> float:
        return hypervolume(self.frontier_points(), self.y_ref)


def normalization_bounds(Y, margin: float = 0.0):
    """Per-objective (lower, upper) from data, widened by margin * range"""
    Y = _matrix(Y, 3, "Y")
    if len(Y) == 0:
        raise InvalidInputError("cannot derive normalization bounds from no points")
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, np.maximum(np.abs(hi), 1.0))
    return lo - margin * span, hi + margin * span


def ehvi(posterior: GaussianPosterior, archive: ParetoArchive, n_mc: int = DEFAULT_N_MC, seed: int = 0) -> float:
    """
    Monte Carlo expected hypervolume improvement of one candidate.

    The posterior lives in the archive's normalized objective space.
    """
    if n_mc < 1:
        raise InvalidInputError(f"n_mc must be >= 1, got {n_mc}")
    front = archive.frontier_points()
    return float(ehvi_batch([posterior.mean], [posterior.variance], front, archive.y_ref, n_mc, seed)[0])


def ehvi_batch(means, variances, front, y_ref, n_mc: int = DEFAULT_N_MC, seed: int = 0) -> np.ndarray:
    """
    EHVI for many candidates sharing one set of standard-normal draws.

    Zero-variance candidates get the exact hypervolume difference of their mean.
    """
    means = _matrix(means, 3, "means")
    variances = _matrix(variances, 3, "variances")
    if np.any(variances < 0):
        raise InvalidInputError("variances must be >= 0")
    front = _matrix(front, 3, "front")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_mc, 3))
    base_hv = hypervolume(front, y_ref)
    out = np.zeros(len(means))

    exact = np.all(variances == 0, axis=1)
    for i in np.flatnonzero(exact):
        grown = np.vstack([front, means[i]]) if len(front) else means[i][None, :]
        out[i] = max(hypervolume(grown, y_ref) - base_hv, 0.0)

    sampled = np.flatnonzero(~exact)
    chunk = max(1, EHVI_CHUNK_SAMPLES // n_mc)
    for start in range(0, len(sampled), chunk):
        idx = sampled[start:start + chunk]
        sd = np.sqrt(variances[idx])
        samples = means[idx][:, None, :] + sd[:, None, :] * z[None, :, :]
        gains = hypervolume_improvement(front, y_ref, samples.reshape(-1, 3))
        out[idx] = gains.reshape(len(idx), n_mc).mean(axis=1)
    return out

