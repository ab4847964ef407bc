"""Random-forest regression from shape features to preference scores.

Trees are plain CART regressors grown on bootstrap resamples with per-split
feature subsampling. Bootstrap draws are keyed on the sorted shape ids, so a
fit does not depend on the order in which rows are supplied.
"""
from __future__ import annotations

import itertools
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

__all__ = [
    "Dataset", "Tree", "ForestModel", "CvReport", "TransferReport", "ShapeWeights",
    "DEFAULT_GRID", "comparison_weights", "train_tree", "train_forest", "predict", "predict_batch",
    "tree_predict", "r2", "mae", "oob_score", "oob_coverage", "make_folds", "grid_search_cv",
    "cross_val_r2", "transfer_evaluate", "model_to_json", "model_from_json", "save_model", "load_model",
]

DEFAULT_GRID = {
    "n_trees": [100, 300, 500],
    "max_depth": [4, 8, 16, None],
    "min_samples_leaf": [1, 3, 5],
}

MODEL_SCHEMA = "aesthetic3d.forest/1"


class ShapeWeights(dict):
    """Shape id -> weight, with ``flagged`` holding ids that had no comparisons."""

    def __init__(self, *args, flagged=(), **kw):
        super().__init__(*args, **kw)
        self.flagged = frozenset(flagged)


def comparison_weights(comparisons, registry: Sequence[str] | None = None) -> ShapeWeights:
    """``1 / n_i`` per shape, where ``n_i`` counts the comparisons it took part in.

    Shapes in ``registry`` that never appear get weight 1 and are flagged.
    """
    counts = Counter()
    for c in comparisons:
        counts[c.winner_id] += 1
        counts[c.loser_id] += 1
    ids = sorted(counts) if registry is None else list(registry)
    flagged = [i for i in ids if counts[i] == 0]
    return ShapeWeights({i: 1.0 / max(counts[i], 1) for i in ids}, flagged=flagged)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray
    ids: list
    category: str = ""
    feature_names: list | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        n = len(self.X)
        self.weights = np.ones(n) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        self.ids = [str(i) for i in self.ids] if self.ids is not None else [f"{i:06d}" for i in range(n)]
        if not (len(self.y) == len(self.weights) == len(self.ids) == n):
            raise ValueError("X, y, weights and ids must have equal row counts")
        if len(set(self.ids)) != n:
            raise ValueError("shape ids must be unique")
        if np.any(~(self.weights > 0)) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and > 0")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("X and y must be finite")
        if self.feature_names is None:
            self.feature_names = [f"f{j}" for j in range(self.X.shape[1])]
        elif len(self.feature_names) != self.X.shape[1]:
            raise ValueError("feature_names length does not match X")

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self):
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.X[rows], self.y[rows], self.weights[rows], [self.ids[i] for i in rows],
                       self.category, list(self.feature_names))

    def unweighted(self) -> "Dataset":
        return Dataset(self.X, self.y, np.ones(len(self)), list(self.ids), self.category,
                       list(self.feature_names))


@dataclass
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf.

    ``cover`` is the training weight reaching each node (sample weight times
    bootstrap multiplicity), ``n_samples`` the number of distinct training rows.
    Rows with ``x[feature] <= threshold`` go left.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    n_samples: np.ndarray

    def __len__(self):
        return len(self.feature)

    @property
    def depth(self):
        depth = np.zeros(len(self), dtype=int)
        for node in range(len(self)):
            if self.feature[node] >= 0:
                depth[self.left[node]] = depth[self.right[node]] = depth[node] + 1
        return int(depth.max())

    def used_features(self):
        return sorted(set(self.feature[self.feature >= 0].tolist()))


@dataclass
class ForestModel:
    trees: list
    hyperparams: dict
    seed: int
    ids: list                     # training ids in canonical (sorted) order
    oob_masks: np.ndarray         # trees x rows, rows in canonical order
    feature_names: list
    n_features: int
    _packed: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def n_trees(self):
        return len(self.trees)

    def packed(self):
        if self._packed is None:
            sizes = np.array([len(t) for t in self.trees])
            offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
            cat = lambda name: np.concatenate([getattr(t, name) for t in self.trees])
            self._packed = (offsets, cat("feature").astype(np.int64), cat("threshold").astype(float),
                            cat("left").astype(np.int64), cat("right").astype(np.int64),
                            cat("value").astype(float))
        return self._packed


@dataclass
class CvReport:
    scores: dict                  # grid point tuple -> mean CV R^2
    fold_scores: dict             # grid point tuple -> per-fold R^2
    best: dict
    folds: np.ndarray             # fold index per row, in dataset order
    seed: int
    keys: tuple = ("n_trees", "max_depth", "min_samples_leaf")

    def rows(self):
        for point, score in self.scores.items():
            yield dict(zip(self.keys, point)), score


@dataclass(frozen=True)
class TransferReport:
    r2: float
    within_cv_r2: float
    drop: float


# ---------------------------------------------------------------------------
# CART

@numba.njit(cache=True, nogil=True)
def _grow(X, y, w, in_bag, presorted, max_depth, min_leaf, max_features, keys):
    n_rows = 0
    for r in range(in_bag.shape[0]):
        if in_bag[r]:
            n_rows += 1
    p = X.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    count = np.zeros(cap, np.int64)

    # one presorted copy of the rows per feature; every node owns the same
    # slice [start, stop) in each copy, kept sorted by stable partitioning
    sidx = np.empty((p, n_rows), np.int64)
    for f in range(p):
        k = 0
        for i in range(presorted.shape[0]):
            r = presorted[i, f]
            if in_bag[r]:
                sidx[f, k] = r
                k += 1
    goes_left = np.zeros(X.shape[0], np.bool_)
    buf = np.empty(n_rows, np.int64)

    start = np.zeros(cap, np.int64)
    stop = np.zeros(cap, np.int64)
    depth = np.zeros(cap, np.int64)
    stop[0] = n_rows
    n_nodes = 1
    stack = [0]
    while len(stack) > 0:
        node = stack.pop()
        lo = start[node]
        hi = stop[node]
        m = hi - lo
        sw = 0.0
        swy = 0.0
        scale = 0.0
        for i in range(lo, hi):
            r = sidx[0, i]
            sw += w[r]
            swy += w[r] * y[r]
            scale += w[r] * y[r] * y[r]
        mean = swy / sw
        sse = 0.0
        for i in range(lo, hi):
            r = sidx[0, i]
            sse += w[r] * (y[r] - mean) ** 2
        value[node] = mean
        cover[node] = sw
        count[node] = m
        if (max_depth >= 0 and depth[node] >= max_depth) or m < 2 * min_leaf or sse <= 1e-14 * max(scale, 1e-300):
            continue

        perm = np.argsort(keys[node])
        best_gain = 0.0
        best_f = -1
        best_t = 0.0
        tried_valid = 0
        for fi in range(p):
            # features past max_features are only drawn when none so far admits a split
            if fi >= max_features and tried_valid > 0:
                break
            f = perm[fi]
            if X[sidx[f, lo], f] == X[sidx[f, hi - 1], f]:
                continue
            lw = 0.0
            lwy = 0.0
            found = False
            for i in range(m - 1):
                r = sidx[f, lo + i]
                lw += w[r]
                lwy += w[r] * y[r]
                a = X[r, f]
                b = X[sidx[f, lo + i + 1], f]
                if a == b or i + 1 < min_leaf or m - i - 1 < min_leaf:
                    continue
                found = True
                rw = sw - lw
                rwy = swy - lwy
                gain = lwy * lwy / lw + rwy * rwy / rw - swy * swy / sw
                # the gain formula cancels, so rounding error scales with sum(w*y^2)
                tol = 1e-12 * max(scale, 1e-300)
                if gain > best_gain + tol or (best_f >= 0 and abs(gain - best_gain) <= tol and f < best_f):
                    best_gain = gain
                    best_f = f
                    t = 0.5 * (a + b)
                    if t >= b:
                        t = a
                    best_t = t
            if found:
                tried_valid += 1
        if best_f < 0 or best_gain <= 1e-12 * sse:
            continue

        nl = 0
        for i in range(lo, hi):
            r = sidx[0, i]
            goes_left[r] = X[r, best_f] <= best_t
            if goes_left[r]:
                nl += 1
        for f in range(p):
            a = lo
            b = 0
            for i in range(lo, hi):
                r = sidx[f, i]
                if goes_left[r]:
                    sidx[f, a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for i in range(b):
                sidx[f, a + i] = buf[i]
        feature[node] = best_f
        threshold[node] = best_t
        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        left[node] = li
        right[node] = ri
        start[li] = lo
        stop[li] = lo + nl
        start[ri] = lo + nl
        stop[ri] = hi
        depth[li] = depth[node] + 1
        depth[ri] = depth[node] + 1
        stack.append(ri)
        stack.append(li)
    return (feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], cover[:n_nodes], count[:n_nodes])


def _hp(hyperparams):
    hp = {"n_trees": 100, "max_depth": None, "min_samples_leaf": 1, "max_features": None}
    hp.update(hyperparams or {})
    if hp["max_depth"] is not None and hp["max_depth"] < 0:
        raise ValueError("max_depth must be >= 0 or None")
    if hp["min_samples_leaf"] < 1 or hp["n_trees"] < 1:
        raise ValueError("min_samples_leaf and n_trees must be >= 1")
    return hp


def _max_features(hp, p):
    mf = hp.get("max_features")
    if mf is None:
        return max(1, math.ceil(p / 3))
    if isinstance(mf, float) and 0 < mf <= 1:
        return max(1, math.ceil(mf * p))
    return int(min(max(mf, 1), p))


def _normalized_weights(w):
    w = np.asarray(w, dtype=float)
    if np.all(w == w[0]):
        return np.ones_like(w)
    return w / w.mean()


def train_tree(dataset: Dataset, hyperparams: dict | None = None, sample_counts=None, seed: int = 0,
               rng: np.random.Generator | None = None, presorted=None) -> Tree:
    """Grow one CART regressor.

    ``sample_counts`` gives the bootstrap multiplicity of each row (``None``
    uses every row once); rows with count 0 are left out. Leaves predict the
    weighted mean of ``y``. Splits maximize weighted variance reduction,
    thresholds sit at midpoints between adjacent distinct values, and equal
    gains resolve to the lowest feature index, then the lowest threshold.
    """
    hp = _hp(hyperparams)
    n, p = dataset.X.shape
    counts = np.ones(n) if sample_counts is None else np.asarray(sample_counts, dtype=float)
    in_bag = counts > 0
    if in_bag.sum() < hp["min_samples_leaf"]:
        raise ValueError("fewer rows than min_samples_leaf")
    w = _normalized_weights(dataset.weights) * counts
    rng = np.random.default_rng(seed) if rng is None else rng
    keys = rng.random((2 * int(in_bag.sum()) + 1, p))
    if presorted is None:
        presorted = _presort(dataset.X)
    depth = -1 if hp["max_depth"] is None else int(hp["max_depth"])
    arrays = _grow(dataset.X, dataset.y, w, in_bag, presorted, depth, int(hp["min_samples_leaf"]),
                   _max_features(hp, p), keys)
    return Tree(*arrays)


def _presort(X):
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").astype(np.int64))


def _canonical(dataset):
    order = sorted(range(len(dataset)), key=dataset.ids.__getitem__)
    return dataset.subset(order)


def _tree_job(data, hp, seed, t, presorted):
    rng = np.random.default_rng([seed, t])
    n = len(data)
    draws = rng.integers(0, n, n)
    counts = np.bincount(draws, minlength=n)
    return train_tree(data, hp, counts, rng=rng, presorted=presorted), counts == 0


def train_forest(dataset: Dataset, hyperparams: dict | None = None, seed: int = 42,
                 n_jobs: int = 1) -> ForestModel:
    """Bagged CART ensemble; tree ``t`` uses its own stream seeded by ``(seed, t)``.

    Rows are put in sorted-id order first, so the fit ignores input row order,
    and results do not depend on ``n_jobs``.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    hp = _hp(hyperparams)
    data = _canonical(dataset)
    presorted = _presort(data.X)
    jobs = range(int(hp["n_trees"]))
    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(lambda t: _tree_job(data, hp, seed, t, presorted), jobs))
    else:
        results = [_tree_job(data, hp, seed, t, presorted) for t in jobs]
    return ForestModel(trees=[r[0] for r in results],
                       hyperparams={k: hp[k] for k in ("n_trees", "max_depth", "min_samples_leaf", "max_features")},
                       seed=int(seed), ids=list(data.ids), oob_masks=np.array([r[1] for r in results]),
                       feature_names=list(data.feature_names), n_features=data.n_features)


@numba.njit(cache=True, nogil=True)
def _leaf_values(X, offsets, feature, threshold, left, right, value):
    n = X.shape[0]
    T = offsets.shape[0]
    out = np.empty((n, T))
    for i in range(n):
        for t in range(T):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i, t] = value[base + node]
    return out


def _check_dims(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got shape {X.shape}")
    return X


def tree_outputs(model: ForestModel, X) -> np.ndarray:
    """Per-tree predictions, rows x trees."""
    X = _check_dims(model, np.atleast_2d(X))
    return _leaf_values(np.ascontiguousarray(X), *model.packed())


def tree_predict(tree: Tree, X) -> np.ndarray:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    offsets = np.zeros(1, np.int64)
    return _leaf_values(X, offsets, tree.feature.astype(np.int64), tree.threshold.astype(float),
                        tree.left.astype(np.int64), tree.right.astype(np.int64),
                        tree.value.astype(float))[:, 0]


def predict_batch(model: ForestModel, X) -> np.ndarray:
    """Mean tree output per row (exactly rounded sum, so duplicating every
    tree leaves predictions bit-identical)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    leaves = tree_outputs(model, X)
    T = leaves.shape[1]
    return np.array([math.fsum(row) / T for row in leaves])


def predict(model: ForestModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict takes a single feature vector")
    return float(predict_batch(model, x[None, :])[0])


# ---------------------------------------------------------------------------
# metrics

def r2(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError("length mismatch")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("R^2 undefined: y_true has zero variance")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def mae(y_true, y_pred, weights=None) -> float:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape:
        raise ValueError("length mismatch")
    err = np.abs(y_true - y_pred)
    if weights is None:
        return float(err.mean())
    weights = np.asarray(weights, dtype=float)
    return float(np.sum(weights * err) / np.sum(weights))


def _oob_predictions(model, dataset):
    pos = {sid: i for i, sid in enumerate(model.ids)}
    try:
        cols = np.array([pos[sid] for sid in dataset.ids])
    except KeyError as exc:
        raise ValueError(f"shape {exc.args[0]!r} was not in the training set") from None
    masks = model.oob_masks[:, cols].T            # rows x trees
    leaves = tree_outputs(model, dataset.X)
    n_oob = masks.sum(axis=1)
    have = n_oob > 0
    pred = np.full(len(dataset), np.nan)
    pred[have] = (leaves * masks).sum(axis=1)[have] / n_oob[have]
    return pred, have


def oob_coverage(model: ForestModel) -> np.ndarray:
    """Fraction of training rows out of bag, per tree."""
    return model.oob_masks.mean(axis=1)


def oob_score(model: ForestModel, dataset: Dataset) -> float:
    """R^2 of out-of-bag predictions over rows left out by at least one tree."""
    pred, have = _oob_predictions(model, dataset)
    if have.sum() < 2:
        raise ValueError("too few out-of-bag rows to score")
    return r2(dataset.y[have], pred[have])


# ---------------------------------------------------------------------------
# model selection

def make_folds(n: int, k: int = 5, seed: int = 42) -> np.ndarray:
    if n < k:
        raise ValueError(f"need at least {k} rows for {k}-fold CV")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.empty(n, dtype=int)
    for f, part in enumerate(np.array_split(perm, k)):
        folds[part] = f
    return folds


def cross_val_r2(dataset: Dataset, hyperparams: dict, folds, seed: int = 42) -> list:
    scores = []
    for f in range(int(folds.max()) + 1):
        test = folds == f
        train, held = dataset.subset(np.flatnonzero(~test)), dataset.subset(np.flatnonzero(test))
        if np.ptp(held.y) == 0:
            raise ValueError(f"fold {f} has constant targets; R^2 undefined")
        model = train_forest(train, hyperparams, seed)
        scores.append(r2(held.y, predict_batch(model, held.X)))
    return scores


def _order_key(point):
    n_trees, depth, leaf = point
    return (n_trees, math.inf if depth is None else depth, leaf)


def grid_search_cv(dataset: Dataset, grid: dict | None = None, k: int = 5, seed: int = 42) -> CvReport:
    """Exhaustive grid with ``k``-fold CV; the best mean R^2 wins, ties going to
    fewer trees, then shallower depth, then smaller leaves."""
    grid = dict(DEFAULT_GRID if grid is None else grid)
    extra = set(grid) - {"n_trees", "max_depth", "min_samples_leaf"}
    if extra:
        raise ValueError(f"unknown grid keys {sorted(extra)}")
    axes = [grid.get("n_trees", [100]), grid.get("max_depth", [None]), grid.get("min_samples_leaf", [1])]
    folds = make_folds(len(dataset), k, seed)
    scores, fold_scores = {}, {}
    for point in itertools.product(*axes):
        hp = dict(zip(("n_trees", "max_depth", "min_samples_leaf"), point))
        fs = cross_val_r2(dataset, hp, folds, seed)
        fold_scores[point] = fs
        scores[point] = float(np.mean(fs))
    best = min(scores, key=lambda pt: (-scores[pt], _order_key(pt)))
    return CvReport(scores=scores, fold_scores=fold_scores,
                    best=dict(zip(("n_trees", "max_depth", "min_samples_leaf"), best)),
                    folds=folds, seed=seed)


def transfer_evaluate(model: ForestModel, target: Dataset, k: int = 5, seed: int | None = None) -> TransferReport:
    """Score ``model`` on another category and compare against a forest with
    the same hyperparameters cross-validated within that category.

    ``drop`` is within-category CV R^2 minus transferred R^2.
    """
    if target.n_features != model.n_features:
        raise ValueError("feature schemas differ")
    if list(target.feature_names) != list(model.feature_names):
        raise ValueError("feature names differ between model and target")
    seed = model.seed if seed is None else seed
    r2_b = r2(target.y, predict_batch(model, target.X))
    within = float(np.mean(cross_val_r2(target, model.hyperparams, make_folds(len(target), k, seed), seed)))
    return TransferReport(r2=r2_b, within_cv_r2=within, drop=within - r2_b)


# ---------------------------------------------------------------------------
# persistence

def model_to_json(model: ForestModel) -> dict:
    return {
        "schema": MODEL_SCHEMA,
        "feature_names": list(model.feature_names),
        "hyperparams": dict(model.hyperparams),
        "seed": model.seed,
        "ids": list(model.ids),
        "trees": [
            {
                "feature": t.feature.tolist(), "threshold": t.threshold.tolist(),
                "left": t.left.tolist(), "right": t.right.tolist(), "value": t.value.tolist(),
                "cover": t.cover.tolist(), "n_samples": t.n_samples.tolist(),
                "oob": np.flatnonzero(mask).tolist(),
            }
            for t, mask in zip(model.trees, model.oob_masks)
        ],
    }


def model_from_json(doc: dict) -> ForestModel:
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}")
    n = len(doc["ids"])
    trees, masks = [], []
    for td in doc["trees"]:
        trees.append(Tree(np.array(td["feature"], dtype=np.int64), np.array(td["threshold"], dtype=float),
                          np.array(td["left"], dtype=np.int64), np.array(td["right"], dtype=np.int64),
                          np.array(td["value"], dtype=float), np.array(td["cover"], dtype=float),
                          np.array(td["n_samples"], dtype=np.int64)))
        mask = np.zeros(n, dtype=bool)
        mask[np.asarray(td["oob"], dtype=int)] = True
        masks.append(mask)
    for t in trees:
        internal = t.feature >= 0
        if np.any(t.feature[internal] >= len(doc["feature_names"])) or not np.all(np.isfinite(t.value)):
            raise ValueError("corrupt tree in model document")
    return ForestModel(trees=trees, hyperparams=dict(doc["hyperparams"]), seed=int(doc["seed"]),
                       ids=list(doc["ids"]), oob_masks=np.array(masks).reshape(len(trees), n),
                       feature_names=list(doc["feature_names"]), n_features=len(doc["feature_names"]))


def save_model(model: ForestModel, path, extra: dict | None = None):
    from .io import atomic_write_text
    doc = model_to_json(model)
    if extra:
        doc.update(extra)
    atomic_write_text(path, json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")


def load_model(path) -> ForestModel:
    with open(path) as fh:
        return model_from_json(json.load(fh))
