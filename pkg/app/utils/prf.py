"""
Probabilistic random forest surrogate.

One scikit-learn forest per objective; the spread of the per-tree
predictions supplies the Gaussian predictive variance:

    mean = (1/B) * sum_b mu_b(x)
    var  = (1/B) * sum_b (mu_b(x) - mean)^2
"""

import json
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.ensemble import RandomForestRegressor

from .errors import InsufficientDataError, InvalidInputError
from .pareto import GaussianPosterior
from .settings import get_settings
from .space import SYSTEM_SPACE, ParamKind, ParamSpec, ParameterConfig

logger = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncodingSchema:
    """Fixed feature layout: continuous fields min-max scaled, categoricals one-hot"""
    specs: Tuple[ParamSpec, ...] = SYSTEM_SPACE

    def feature_names(self) -> List[str]:
        names = []
        for spec in self.specs:
            if spec.kind is ParamKind.CONTINUOUS:
                names.append(spec.name)
            else:
                names.extend(f"{spec.name}={level}" for level in spec.levels)
        return names

    @property
    def dim(self) -> int:
        return len(self.feature_names())

    def encode(self, p: ParameterConfig) -> np.ndarray:
        out = []
        for spec in self.specs:
            value = getattr(p, spec.name)
            spec.check(value)
            if spec.kind is ParamKind.CONTINUOUS:
                out.append((float(value) - spec.low) / (spec.high - spec.low))
            else:
                out.extend(1.0 if value == level else 0.0 for level in spec.levels)
        return np.asarray(out, dtype=float)


DEFAULT_SCHEMA = EncodingSchema()


def encode_config(p: ParameterConfig, schema: EncodingSchema = DEFAULT_SCHEMA) -> np.ndarray:
    """Feature array for one configuration"""
    return schema.encode(p)


@dataclass(frozen=True)
class ForestSettings:
    """Tree hyperparameters; n_trees is the forest size B when fit is not given one"""
    n_trees: int = 100
    max_depth: int = 12
    min_samples_leaf: int = 2
    max_features: str = "sqrt"
    bootstrap: bool = True
    n_jobs: int = 1


class _ArrayTree:
    """Tree rebuilt from exported node arrays; predicts like the fitted estimator"""

    def __init__(self, left, right, feature, threshold, value):
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.value = np.asarray(value, dtype=float)

    @classmethod
    def from_estimator(cls, estimator) -> "_ArrayTree":
        t = estimator.tree_
        return cls(t.children_left, t.children_right, t.feature, t.threshold, t.value[:, 0, 0])

    def predict(self, X: np.ndarray) -> np.ndarray:
        # the fitted trees split on float32 features
        X = np.asarray(X, dtype=np.float32).astype(float)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.left[node] != -1
        while np.any(active):
            idx = np.flatnonzero(active)
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.left[node] != -1
        return self.value[node]

    def to_dict(self) -> Dict[str, list]:
        return {
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "value": self.value.tolist(),
        }


class PRFModel:
    """B regression trees per objective over one encoding schema"""

    def __init__(self, trees: List[List[Any]], n_features: int, schema: Optional[EncodingSchema] = DEFAULT_SCHEMA,
                 settings: ForestSettings = ForestSettings(), seed: int = 0):
        if not trees or any(len(t) < 1 for t in trees):
            raise InvalidInputError("PRFModel needs at least one tree per objective")
        self.trees = trees
        self.n_features = n_features
        self.schema = schema
        self.settings = settings
        self.seed = seed

    @property
    def n_objectives(self) -> int:
        return len(self.trees)

    def per_tree_predictions(self, X) -> np.ndarray:
        """Array of shape (n_objectives, B, n_points)"""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise InvalidInputError(f"feature array has {X.shape[1]} columns, model expects {self.n_features}")
        return np.stack([np.stack([tree.predict(X) for tree in forest]) for forest in self.trees])

    def predict_batch(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """Means and population variances, each of shape (n_points, n_objectives)"""
        preds = self.per_tree_predictions(X)
        mean = preds.mean(axis=1)
        var = ((preds - mean[:, None, :]) ** 2).mean(axis=1)
        return mean.T, var.T

    def predict(self, x) -> GaussianPosterior:
        mean, var = self.predict_batch(np.asarray(x, dtype=float)[None, :])
        return GaussianPosterior(tuple(mean[0]), tuple(var[0]))

    def to_json(self) -> str:
        doc = {
            "format": "orthrus-prf",
            "version": MODEL_FORMAT_VERSION,
            "n_features": self.n_features,
            "feature_names": self.schema.feature_names() if self.schema else None,
            "settings": asdict(self.settings),
            "seed": self.seed,
            "objectives": [
                [(t if isinstance(t, _ArrayTree) else _ArrayTree.from_estimator(t)).to_dict() for t in forest]
                for forest in self.trees
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "PRFModel":
        doc = json.loads(text)
        if doc.get("format") != "orthrus-prf" or doc.get("version") != MODEL_FORMAT_VERSION:
            raise InvalidInputError(f"unsupported model document: {doc.get('format')} v{doc.get('version')}")
        schema = DEFAULT_SCHEMA
        if doc.get("feature_names") is not None and doc["feature_names"] != DEFAULT_SCHEMA.feature_names():
            schema = None
        trees = [[_ArrayTree(**t) for t in forest] for forest in doc["objectives"]]
        return cls(trees, doc["n_features"], schema, ForestSettings(**doc["settings"]), doc["seed"])


def fit(X, Y, B: Optional[int] = None, seed: int = 0, settings: Optional[ForestSettings] = None,
        schema: Optional[EncodingSchema] = DEFAULT_SCHEMA) -> PRFModel:
    """Train one bootstrap forest per objective column of Y; B defaults to settings.n_trees"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) != len(Y):
        raise InvalidInputError(f"|X|={len(X)} differs from |Y|={len(Y)}")
    if len(X) < 2:
        raise InsufficientDataError(f"PRF needs at least 2 samples, got {len(X)}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise InvalidInputError("training data contains non-finite values")
    settings = settings or ForestSettings(n_jobs=get_settings().n_jobs)
    B = settings.n_trees if B is None else B
    if B < 1:
        raise InvalidInputError(f"B must be >= 1, got {B}")
    trees = []
    for k in range(Y.shape[1]):
        forest = RandomForestRegressor(
            n_estimators=B,
            max_depth=settings.max_depth,
            min_samples_leaf=settings.min_samples_leaf,
            max_features=settings.max_features,
            bootstrap=settings.bootstrap,
            n_jobs=settings.n_jobs,
            random_state=seed + 7919 * k,
        )
        forest.fit(X, Y[:, k])
        trees.append(list(forest.estimators_))
    logger.debug(f"Fitted PRF with B={B} on {len(X)} samples, {Y.shape[1]} objectives")
    return PRFModel(trees, X.shape[1], schema, ForestSettings(**{**asdict(settings), "n_trees": B}), seed)


def predict(model: PRFModel, x: Sequence[float]) -> GaussianPosterior:
    return model.predict(x)
