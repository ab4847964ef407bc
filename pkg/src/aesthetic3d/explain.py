"""Shapley attributions, global importances and partial dependence for forests.

Two value functions are supported:

``path``
    conditional expectation under each tree's own training sample, with
    unvisited branches weighted by their training cover. Computed exactly in
    polynomial time by the path-tracking tree algorithm. This is the default.
``interventional``
    mean of ``f(x_S, z_rest)`` over background rows ``z``; exact per
    reference row by enumerating the x/z branch pattern of each tree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .forest import ForestModel, predict_batch

__all__ = [
    "ShapExplanation", "PdpCurve", "tree_shap", "shap_values", "expected_value", "global_importance",
    "partial_dependence", "pdp_grid", "pearson_feature_scan", "importance_rows", "pdp_rows",
]


@dataclass(frozen=True)
class ShapExplanation:
    values: np.ndarray
    base: float
    prediction: float
    feature_names: tuple

    def as_dict(self):
        return dict(zip(self.feature_names, self.values.tolist()))


@dataclass(frozen=True)
class PdpCurve:
    feature: str
    grid: np.ndarray
    response: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("PDP grid must be strictly increasing")
        if not np.all(np.isfinite(self.response)):
            raise ValueError("PDP response is not finite")


# ---------------------------------------------------------------------------
# path-dependent algorithm

@numba.njit(cache=True)
def _extend(feat, zf, of, pw, off, depth, zero_fraction, one_fraction, feature):
    feat[off + depth] = feature
    zf[off + depth] = zero_fraction
    of[off + depth] = one_fraction
    pw[off + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[off + i + 1] += one_fraction * pw[off + i] * (i + 1) / (depth + 1)
        pw[off + i] = zero_fraction * pw[off + i] * (depth - i) / (depth + 1)


@numba.njit(cache=True)
def _unwind(feat, zf, of, pw, off, depth, index):
    one_fraction = of[off + index]
    zero_fraction = zf[off + index]
    nxt = pw[off + depth]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0:
            tmp = pw[off + i]
            pw[off + i] = nxt * (depth + 1) / ((i + 1) * one_fraction)
            nxt = tmp - pw[off + i] * zero_fraction * (depth - i) / (depth + 1)
        else:
            pw[off + i] = pw[off + i] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(index, depth):
        feat[off + i] = feat[off + i + 1]
        zf[off + i] = zf[off + i + 1]
        of[off + i] = of[off + i + 1]


@numba.njit(cache=True)
def _unwound_sum(zf, of, pw, off, depth, index):
    one_fraction = of[off + index]
    zero_fraction = zf[off + index]
    nxt = pw[off + depth]
    total = 0.0
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0:
            tmp = nxt * (depth + 1) / ((i + 1) * one_fraction)
            total += tmp
            nxt = pw[off + i] - tmp * zero_fraction * ((depth - i) / (depth + 1))
        else:
            total += (pw[off + i] / zero_fraction) / ((depth - i) / (depth + 1))
    return total


@numba.njit(cache=True)
def _tree_path_shap(x, base, feature, threshold, left, right, value, cover, phi, feat, zf, of, pw, stack):
    # stack rows: node, depth, parent offset, parent feature; fractions kept alongside
    stack_f = np.empty((stack.shape[0], 2))
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = 0
    stack[0, 3] = -1
    stack_f[0, 0] = 1.0
    stack_f[0, 1] = 1.0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        depth = stack[top, 1]
        parent_off = stack[top, 2]
        parent_feature = stack[top, 3]
        zero_fraction = stack_f[top, 0]
        one_fraction = stack_f[top, 1]
        off = parent_off + depth + 1 if depth > 0 else 0
        for i in range(depth):
            feat[off + i] = feat[parent_off + i]
            zf[off + i] = zf[parent_off + i]
            of[off + i] = of[parent_off + i]
            pw[off + i] = pw[parent_off + i]
        _extend(feat, zf, of, pw, off, depth, zero_fraction, one_fraction, parent_feature)
        f = feature[base + node]
        if f < 0:
            v = value[base + node]
            for i in range(1, depth + 1):
                wgt = _unwound_sum(zf, of, pw, off, depth, i)
                phi[feat[off + i]] += wgt * (of[off + i] - zf[off + i]) * v
            continue
        if x[f] <= threshold[base + node]:
            hot = left[base + node]
            cold = right[base + node]
        else:
            hot = right[base + node]
            cold = left[base + node]
        w = cover[base + node]
        incoming_zero = 1.0
        incoming_one = 1.0
        k = 0
        while k <= depth:
            if feat[off + k] == f:
                break
            k += 1
        if k != depth + 1:
            incoming_zero = zf[off + k]
            incoming_one = of[off + k]
            _unwind(feat, zf, of, pw, off, depth, k)
            depth -= 1
        # the parent's path region sits below every region its subtree writes,
        # so siblings popped later still copy an intact path
        stack[top, 0] = cold
        stack[top, 1] = depth + 1
        stack[top, 2] = off
        stack[top, 3] = f
        stack_f[top, 0] = cover[base + cold] / w * incoming_zero
        stack_f[top, 1] = 0.0
        top += 1
        stack[top, 0] = hot
        stack[top, 1] = depth + 1
        stack[top, 2] = off
        stack[top, 3] = f
        stack_f[top, 0] = cover[base + hot] / w * incoming_zero
        stack_f[top, 1] = incoming_one
        top += 1


@numba.njit(cache=True, nogil=True)
def _path_shap(X, offsets, sizes, depths, feature, threshold, left, right, value, cover):
    n, p = X.shape
    T = offsets.shape[0]
    out = np.zeros((n, p))
    phi = np.zeros(p)
    for t in range(T):
        d = depths[t] + 2
        size = d * (min(d, p + 1) + 2) + 2
        feat = np.full(size, -1, np.int64)
        zf = np.zeros(size)
        of = np.zeros(size)
        pw = np.zeros(size)
        stack = np.zeros((d + 2, 4), np.int64)
        for i in range(n):
            phi[:] = 0.0
            _tree_path_shap(X[i], offsets[t], feature, threshold, left, right, value, cover,
                            phi, feat, zf, of, pw, stack)
            for j in range(p):
                out[i, j] += phi[j]
    return out / T


# ---------------------------------------------------------------------------
# interventional algorithm

@numba.njit(cache=True)
def _coef(a, b):
    # a! b! / (a + b + 1)!
    return math.exp(math.lgamma(a + 1) + math.lgamma(b + 1) - math.lgamma(a + b + 2))


@numba.njit(cache=True)
def _intervene(x, z, feature, threshold, left, right, value, phi, nodes, nxs, nzs, states):
    # depth-first over the branches where x and z disagree; each stack slot
    # carries which features are fixed to x (1) or to z (2) on its path
    nodes[0] = 0
    nxs[0] = 0
    nzs[0] = 0
    states[0, :] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = nodes[sp]
        nx = nxs[sp]
        nz = nzs[sp]
        f = feature[node]
        if f < 0:
            v = value[node]
            cx = v * _coef(nx - 1, nz) if nx > 0 else 0.0
            cz = v * _coef(nx, nz - 1) if nz > 0 else 0.0
            for j in range(phi.shape[0]):
                if states[sp, j] == 1:
                    phi[j] += cx
                elif states[sp, j] == 2:
                    phi[j] -= cz
            continue
        xa = left[node] if x[f] <= threshold[node] else right[node]
        za = left[node] if z[f] <= threshold[node] else right[node]
        if xa == za or states[sp, f] == 1:
            nodes[sp] = xa
            sp += 1
        elif states[sp, f] == 2:
            nodes[sp] = za
            sp += 1
        else:
            states[sp + 1, :] = states[sp, :]
            states[sp, f] = 1
            nodes[sp] = xa
            nxs[sp] = nx + 1
            states[sp + 1, f] = 2
            nodes[sp + 1] = za
            nxs[sp + 1] = nx
            nzs[sp + 1] = nz + 1
            sp += 2


@numba.njit(cache=True, nogil=True)
def _interventional_shap(X, Z, offsets, sizes, feature, threshold, left, right, value):
    n, p = X.shape
    T = offsets.shape[0]
    out = np.zeros((n, p))
    phi = np.zeros(p)
    m = sizes.max() + 2
    nodes = np.empty(m, np.int64)
    nxs = np.empty(m, np.int64)
    nzs = np.empty(m, np.int64)
    states = np.empty((m, p), np.int8)
    for i in range(n):
        for t in range(T):
            a = offsets[t]
            b = a + sizes[t]
            for r in range(Z.shape[0]):
                phi[:] = 0.0
                _intervene(X[i], Z[r], feature[a:b], threshold[a:b], left[a:b], right[a:b], value[a:b],
                           phi, nodes, nxs, nzs, states)
                for j in range(p):
                    out[i, j] += phi[j]
    return out / (T * Z.shape[0])


# ---------------------------------------------------------------------------

def _arrays(model: ForestModel):
    offsets, feature, threshold, left, right, value = model.packed()
    sizes = np.array([len(t) for t in model.trees], dtype=np.int64)
    cover = np.concatenate([t.cover for t in model.trees]).astype(float)
    depths = np.array([t.depth for t in model.trees], dtype=np.int64)
    return offsets, sizes, depths, feature, threshold, left, right, value, cover


def expected_value(model: ForestModel, background=None) -> float:
    """Base value: mean over trees of the cover-weighted root value, or of the
    mean prediction over ``background`` for the interventional variant."""
    if background is None:
        return math.fsum(float(t.value[0]) for t in model.trees) / model.n_trees
    return float(np.mean(predict_batch(model, background)))


def shap_values(model: ForestModel, X, method: str = "path", background=None):
    """Attributions for every row of ``X``; returns ``(phi, base)``."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected {model.n_features} features, got {X.shape[1]}")
    offsets, sizes, depths, feature, threshold, left, right, value, cover = _arrays(model)
    if method == "path":
        phi = _path_shap(X, offsets, sizes, depths, feature, threshold, left, right, value, cover)
        return phi, expected_value(model)
    if method == "interventional":
        if background is None:
            raise ValueError("interventional attributions need a background sample")
        Z = np.ascontiguousarray(np.atleast_2d(np.asarray(background, dtype=float)))
        phi = _interventional_shap(X, Z, offsets, sizes, feature, threshold, left, right, value)
        return phi, expected_value(model, Z)
    raise ValueError(f"unknown method {method!r}")


def tree_shap(model: ForestModel, x, method: str = "path", background=None) -> ShapExplanation:
    x = np.asarray(x, dtype=float)
    phi, base = shap_values(model, x[None, :], method, background)
    pred = float(predict_batch(model, x[None, :])[0])
    return ShapExplanation(phi[0], base, pred, tuple(model.feature_names))


def global_importance(model: ForestModel, X, method: str = "path", background=None) -> dict:
    """Mean absolute attribution per feature over the rows of ``X``."""
    X = np.asarray(X, dtype=float)
    if len(X) == 0:
        raise ValueError("no rows to aggregate")
    phi, _ = shap_values(model, X, method, background)
    imp = np.abs(phi).mean(axis=0)
    return dict(zip(model.feature_names, imp.tolist()))


def pdp_grid(column, grid_size: int = 20) -> np.ndarray:
    """Distinct values at equally spaced quantiles of ``column``."""
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    column = np.asarray(column, dtype=float)
    if np.ptp(column) == 0:
        raise ValueError("constant feature has no partial dependence")
    return np.unique(np.quantile(column, np.linspace(0, 1, grid_size)))


def partial_dependence(model: ForestModel, X, feature, grid_size: int = 20) -> PdpCurve:
    """Mean prediction with ``feature`` clamped to each grid value on every row."""
    X = np.asarray(X, dtype=float)
    j = model.feature_names.index(feature) if isinstance(feature, str) else int(feature)
    grid = pdp_grid(X[:, j], grid_size)
    response = np.empty(len(grid))
    for g, v in enumerate(grid):
        Xc = X.copy()
        Xc[:, j] = v
        preds = predict_batch(model, Xc)
        response[g] = math.fsum(preds) / len(preds)
    return PdpCurve(model.feature_names[j], grid, response)


def pearson_feature_scan(X, y, feature_names=None) -> dict:
    """Pearson r of each column against ``y``; ``None`` where a column is constant."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(y) < 2 or len(X) != len(y):
        raise ValueError("need >= 2 rows of matching length")
    names = feature_names or [f"f{j}" for j in range(X.shape[1])]
    yc = y - y.mean()
    out = {}
    for j, name in enumerate(names):
        xc = X[:, j] - X[:, j].mean()
        denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
        out[name] = None if denom == 0 else float(np.clip(xc @ yc / denom, -1.0, 1.0))
    return out


def importance_rows(importance: dict):
    """``feature,value`` rows sorted by decreasing importance."""
    return sorted(importance.items(), key=lambda kv: (-kv[1], kv[0]))


def pdp_rows(curves):
    for c in curves:
        for g, r in zip(c.grid, c.response):
            yield c.feature, float(g), float(r)
