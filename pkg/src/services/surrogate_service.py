"""Gradient-boosted regression trees predicting throughput, memory and accuracy of design points"""
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import EncodingError, ParameterError, UndefinedScoreError
from ..models import (
    CATEGORICAL_KNOBS,
    KNOBS,
    DesignPoint,
    DesignSpace,
    DesignValues,
    Metrics,
    ParallelMode,
    SamplingDevice,
    SurrogateContext,
    SurrogateHyper,
)
from . import csv_io

logger = logging.getLogger("gnn_autotune.surrogate")

METRICS = ("thr", "mem", "acc")
# strictly positive metrics spanning orders of magnitude are fitted in log space
LOG_METRICS = ("thr", "mem")
MIN_ROWS = 10


# ---------------------------------------------------------------- features

_CATEGORIES = {
    "sampling_device": [d.value for d in SamplingDevice],
    "mode": [m.value for m in ParallelMode],
}
_CONTEXT_FEATURES = ("eta", "density", "num_nodes", "num_edges")


def feature_names() -> List[str]:
    names = []
    for knob in KNOBS:
        if knob in CATEGORICAL_KNOBS:
            names.extend(f"{knob}={c}" for c in _CATEGORIES[knob])
        elif knob == "cache_volume":
            names.append("theta")
        else:
            names.append(knob)
    return names + list(_CONTEXT_FEATURES)


def encode_features(values: DesignValues, ctx: SurrogateContext) -> np.ndarray:
    row: List[float] = []
    for knob in KNOBS:
        v = getattr(values, knob)
        if knob in CATEGORICAL_KNOBS:
            row.extend(1.0 if v.value == c else 0.0 for c in _CATEGORIES[knob])
        else:
            row.append(float(v))
    row.extend([ctx.eta(values.partitions), ctx.graph.density,
                float(ctx.graph.num_nodes), float(ctx.graph.num_edges)])
    return np.asarray(row, dtype=np.float64)


# ---------------------------------------------------------------- dataset

@dataclass
class ProfileDataset:
    points: List[DesignPoint]
    values: List[DesignValues]
    features: np.ndarray
    targets: np.ndarray  # columns follow METRICS
    feature_names: List[str] = field(default_factory=feature_names)
    skipped: int = 0

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def subset(self, idx: Sequence[int]) -> "ProfileDataset":
        idx = list(idx)
        return ProfileDataset([self.points[i] for i in idx], [self.values[i] for i in idx],
                              self.features[idx], self.targets[idx], list(self.feature_names))

    def write_csv(self, path: str) -> None:
        rows = [csv_io.metrics_row(v, Metrics(thr=t[0], mem=t[1], acc=t[2]))
                for v, t in zip(self.values, self.targets)]
        csv_io.write_rows(path, csv_io.METRICS_COLUMNS, rows)


def stratified_points(space: DesignSpace, samples: int, seed: int) -> List[DesignPoint]:
    """Latin-hypercube style: every knob column cycles its levels, then is shuffled independently"""
    if samples < 1:
        raise ParameterError(f"samples must be >= 1, got {samples}")
    rng = np.random.default_rng(seed)
    columns = []
    for size in space.sizes():
        reps = -(-samples // size)
        col = np.tile(np.arange(size), reps)[:samples]
        columns.append(rng.permutation(col))
    return [DesignPoint(indices=tuple(int(c[i]) for c in columns)) for i in range(samples)]


def collect_profile_dataset(space: DesignSpace, evaluator: Callable[[DesignPoint], Metrics],
                            ctx: SurrogateContext, samples: int, seed: int) -> ProfileDataset:
    points, values, feats, targets = [], [], [], []
    skipped = 0
    for i, point in enumerate(stratified_points(space, samples, seed)):
        resolved = space.resolve(point)
        try:
            m = evaluator(point)
        except Exception as e:
            skipped += 1
            logger.warning(f"skipping point {point.indices}: {e}")
            continue
        if not all(math.isfinite(x) for x in m.as_tuple()):
            skipped += 1
            logger.warning(f"skipping point {point.indices}: non-finite metrics {m.as_tuple()}")
            continue
        points.append(point)
        values.append(resolved)
        feats.append(encode_features(resolved, ctx))
        targets.append(m.as_tuple())
        if (i + 1) % 25 == 0:
            logger.info(f"profiled {i + 1}/{samples} points")
    width = len(feature_names())
    return ProfileDataset(
        points=points,
        values=values,
        features=np.asarray(feats, dtype=np.float64).reshape(-1, width),
        targets=np.asarray(targets, dtype=np.float64).reshape(-1, len(METRICS)),
        skipped=skipped,
    )


def train_test_split(dataset: ProfileDataset, test_fraction: float,
                     seed: int) -> Tuple[ProfileDataset, ProfileDataset]:
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    return dataset.subset(order[n_test:]), dataset.subset(order[:n_test])


# ---------------------------------------------------------------- trees

@dataclass
class RegressionTree:
    """Parallel arrays; feature == -1 marks a leaf"""
    feature: List[int]
    threshold: List[float]
    left: List[int]
    right: List[int]
    value: List[float]

    def predict_one(self, x: Sequence[float]) -> float:
        node = 0
        feature, threshold = self.feature, self.threshold
        while feature[node] >= 0:
            node = self.left[node] if x[feature[node]] <= threshold[node] else self.right[node]
        return self.value[node]

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = feature[node] >= 0
        while np.any(active):
            f = feature[node[active]]
            goes_left = X[np.flatnonzero(active), f] <= threshold[node[active]]
            node[active] = np.where(goes_left, left[node[active]], right[node[active]])
            active = feature[node] >= 0
        return np.asarray(self.value)[node]

    def to_dict(self) -> dict:
        return {"feature": self.feature, "threshold": self.threshold,
                "left": self.left, "right": self.right, "value": self.value}


def _best_split(X: np.ndarray, r: np.ndarray, min_leaf: int) -> Optional[Tuple[int, float]]:
    n = r.shape[0]
    total = r.sum()
    base = total * total / n
    best_gain, best = 1e-12, None
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, rs = X[order, f], r[order]
        csum = np.cumsum(rs)[:-1]
        nl = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not np.any(valid):
            continue
        gain = csum ** 2 / nl + (total - csum) ** 2 / (n - nl) - base
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best_gain:
            best_gain = gain[i]
            best = (f, float((xs[i] + xs[i + 1]) / 2.0))
    return best


def fit_tree(X: np.ndarray, r: np.ndarray, depth: int, min_leaf: int = 1) -> RegressionTree:
    tree = RegressionTree([], [], [], [], [])

    def grow(idx: np.ndarray, d: int) -> int:
        node = len(tree.feature)
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(float(r[idx].mean()))
        if d >= depth or idx.shape[0] < 2 * min_leaf:
            return node
        split = _best_split(X[idx], r[idx], min_leaf)
        if split is None:
            return node
        f, thr = split
        mask = X[idx, f] <= thr
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = grow(idx[mask], d + 1)
        tree.right[node] = grow(idx[~mask], d + 1)
        return node

    grow(np.arange(X.shape[0]), 0)
    return tree


@dataclass
class BoostedRegressor:
    init: float
    shrinkage: float
    trees: List[RegressionTree]

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, hyper: SurrogateHyper) -> "BoostedRegressor":
        init = float(np.mean(y))
        pred = np.full(y.shape[0], init)
        trees = []
        for _ in range(hyper.trees):
            residual = y - pred
            tree = fit_tree(X, residual, hyper.depth, hyper.min_samples_leaf)
            trees.append(tree)
            pred = pred + hyper.shrinkage * tree.predict(X)
        return cls(init, hyper.shrinkage, trees)

    def predict_one(self, x: Sequence[float]) -> float:
        total = 0.0
        for tree in self.trees:
            total += tree.predict_one(x)
        return self.init + self.shrinkage * total

    def predict(self, X: np.ndarray) -> np.ndarray:
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return self.init + self.shrinkage * total


# ---------------------------------------------------------------- surrogate

@dataclass
class SurrogateModel:
    space: DesignSpace
    feature_names: List[str]
    lo: np.ndarray
    hi: np.ndarray
    regressors: Dict[str, BoostedRegressor]
    hyper: SurrogateHyper

    def normalize(self, X: np.ndarray) -> np.ndarray:
        span = np.where(self.hi > self.lo, self.hi - self.lo, 1.0)
        return (X - self.lo) / span

    def _check_width(self, width: int) -> None:
        if width != len(self.feature_names):
            raise EncodingError(f"feature vector has {width} entries, model expects {len(self.feature_names)}")

    def predict_vector(self, x: np.ndarray) -> Metrics:
        x = np.asarray(x, dtype=np.float64)
        self._check_width(x.shape[0])
        z = self.normalize(x).tolist()
        out = {}
        for metric in METRICS:
            raw = self.regressors[metric].predict_one(z)
            out[metric] = math.expm1(raw) if metric in LOG_METRICS else raw
        out["mem"] = max(out["mem"], 0.0)
        return Metrics(**out)

    def predict_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self._check_width(X.shape[1])
        Z = self.normalize(X)
        cols = []
        for metric in METRICS:
            raw = self.regressors[metric].predict(Z)
            cols.append(np.expm1(raw) if metric in LOG_METRICS else raw)
        out = np.stack(cols, axis=1)
        out[:, 1] = np.maximum(out[:, 1], 0.0)
        return out


def _canonical_order(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    keys = [Y[:, j] for j in range(Y.shape[1] - 1, -1, -1)] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def fit_surrogate(d: ProfileDataset, hyper: SurrogateHyper, space: Optional[DesignSpace] = None) -> SurrogateModel:
    if len(d) < MIN_ROWS:
        raise ParameterError(f"surrogate needs at least {MIN_ROWS} rows, got {len(d)}")
    order = _canonical_order(d.features, d.targets)
    X, Y = d.features[order], d.targets[order]
    lo, hi = X.min(axis=0), X.max(axis=0)
    model = SurrogateModel(space or DesignSpace(), list(d.feature_names), lo, hi, {}, hyper)
    Z = model.normalize(X)
    for j, metric in enumerate(METRICS):
        y = Y[:, j]
        if metric in LOG_METRICS:
            y = np.log1p(np.maximum(y, 0.0))
        model.regressors[metric] = BoostedRegressor.fit(Z, y, hyper)
    logger.info(f"fitted surrogate on {len(d)} rows, {len(d.feature_names)} features")
    return model


def predict(m: SurrogateModel, point: DesignPoint, ctx: SurrogateContext) -> Metrics:
    return m.predict_vector(encode_features(m.space.resolve(point), ctx))


def r2_score(pred: Sequence[float], truth: Sequence[float]) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or t.size == 0:
        raise ParameterError("r2_score needs equal, non-zero lengths")
    ss_tot = float(np.sum((t - t.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedScoreError("R^2 undefined for constant truth")
    return 1.0 - float(np.sum((t - p) ** 2)) / ss_tot


def evaluate_surrogate(m: SurrogateModel, d: ProfileDataset) -> Dict[str, Optional[float]]:
    """R^2 per metric; None where the truth column is constant"""
    pred = m.predict_batch(d.features)
    scores: Dict[str, Optional[float]] = {}
    for j, metric in enumerate(METRICS):
        try:
            scores[metric] = r2_score(pred[:, j], d.targets[:, j])
        except UndefinedScoreError:
            scores[metric] = None
    return scores


def save_surrogate(m: SurrogateModel, path: str) -> None:
    doc = {
        "format": "gbrt-surrogate/1",
        "space": m.space.model_dump(mode="json"),
        "feature_names": m.feature_names,
        "lo": m.lo.tolist(),
        "hi": m.hi.tolist(),
        "hyper": m.hyper.model_dump(),
        "log_metrics": list(LOG_METRICS),
        "regressors": {
            metric: {"init": r.init, "shrinkage": r.shrinkage, "trees": [t.to_dict() for t in r.trees]}
            for metric, r in m.regressors.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_surrogate(path: str) -> SurrogateModel:
    with open(path, "r") as fh:
        doc = json.load(fh)
    if doc.get("format") != "gbrt-surrogate/1":
        raise EncodingError(f"{path}: not a surrogate document")
    regressors = {
        metric: BoostedRegressor(r["init"], r["shrinkage"], [RegressionTree(**t) for t in r["trees"]])
        for metric, r in doc["regressors"].items()
    }
    return SurrogateModel(
        space=DesignSpace(**doc["space"]),
        feature_names=doc["feature_names"],
        lo=np.asarray(doc["lo"], dtype=np.float64),
        hi=np.asarray(doc["hi"], dtype=np.float64),
        regressors=regressors,
        hyper=SurrogateHyper(**doc["hyper"]),
    )
