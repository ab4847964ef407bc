"""Consistency of feature importances across shape categories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

__all__ = [
    "ImportanceMatrix", "Dendrogram", "ManovaResult", "spearman", "importance_correlation_matrix",
    "hierarchical_cluster", "manova", "one_way_anova", "CLUSTER_METRIC", "CLUSTER_LINKAGE",
]

CLUSTER_METRIC = "1 - spearman"
CLUSTER_LINKAGE = "average"


@dataclass
class ImportanceMatrix:
    categories: list
    features: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.categories), len(self.features)):
            raise ValueError("values must be categories x features")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("importances must be finite and non-negative")

    @classmethod
    def from_dicts(cls, per_category: dict, features=None):
        cats = list(per_category)
        features = list(features or next(iter(per_category.values())))
        for c in cats:
            if list(per_category[c]) != features:
                raise ValueError(f"category {c!r} uses a different feature order")
        return cls(cats, features, [[per_category[c][f] for f in features] for c in cats])


@dataclass
class Dendrogram:
    """Agglomeration record in the usual linkage encoding: leaves are
    ``0..n-1`` and the cluster made by merge ``i`` is ``n + i``."""
    labels: list
    merges: list                  # (a, b, distance, size)
    metric: str = CLUSTER_METRIC
    linkage: str = CLUSTER_LINKAGE

    def members(self, cluster: int) -> frozenset:
        n = len(self.labels)
        if cluster < n:
            return frozenset([self.labels[cluster]])
        a, b, _, _ = self.merges[cluster - n]
        return self.members(a) | self.members(b)

    def merge_sets(self):
        """Merges as ``(frozenset, frozenset, distance)`` independent of leaf numbering."""
        return [(self.members(a), self.members(b), d) for a, b, d, _ in self.merges]

    def to_json(self) -> dict:
        return {
            "labels": list(self.labels),
            "metric": self.metric,
            "linkage": self.linkage,
            "merges": [{"a": a, "b": b, "distance": d, "size": s} for a, b, d, s in self.merges],
        }


@dataclass
class ManovaResult:
    statistic: str
    value: float                  # Wilks' lambda or Pillai's trace
    F: float
    df1: float
    df2: float
    p_value: float
    feature_F: np.ndarray
    feature_p: np.ndarray
    features: list
    singular: bool = False
    rank: int = 0
    pillai: float | None = None
    notes: list = field(default_factory=list)

    @property
    def wilks_lambda(self):
        return self.value if self.statistic == "wilks" else None

    def feature_rows(self):
        for name, f, p in zip(self.features, self.feature_F, self.feature_p):
            yield name, (None if np.isnan(f) else float(f)), (None if np.isnan(p) else float(p))


def spearman(x, y) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("spearman needs two vectors of equal length")
    if len(x) < 3:
        raise ValueError("spearman needs at least 3 observations")
    rx = stats.rankdata(x) - (len(x) + 1) / 2
    ry = stats.rankdata(y) - (len(y) + 1) / 2
    sxx, syy = float(rx @ rx), float(ry @ ry)
    if sxx == 0 or syy == 0:
        raise ValueError("spearman undefined for constant input")
    return float(np.clip(float(rx @ ry) / math.sqrt(sxx * syy), -1.0, 1.0))


def importance_correlation_matrix(imp: ImportanceMatrix) -> np.ndarray:
    n = len(imp.categories)
    if n < 2:
        raise ValueError("need at least two categories")
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = spearman(imp.values[i], imp.values[j])
    return out


def hierarchical_cluster(imp: ImportanceMatrix) -> Dendrogram:
    """Average-linkage agglomeration on ``1 - spearman`` distances."""
    n = len(imp.categories)
    if n < 2:
        raise ValueError("need at least two categories")
    dist = np.clip(1.0 - importance_correlation_matrix(imp), 0.0, 2.0)
    np.fill_diagonal(dist, 0.0)
    Z = linkage(squareform(dist, checks=False), method=CLUSTER_LINKAGE)
    merges = [(int(a), int(b), float(d), int(s)) for a, b, d, s in Z]
    return Dendrogram(list(imp.categories), merges)


def one_way_anova(values, groups):
    """Per-column one-way ANOVA; returns ``(F, p)`` arrays (NaN for constant columns)."""
    Y = np.asarray(values, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    labels, codes = np.unique(np.asarray(groups), return_inverse=True)
    g, N = len(labels), len(Y)
    grand = _grand_mean(Y, codes, g)
    ssb = np.zeros(Y.shape[1])
    ssw = np.zeros(Y.shape[1])
    for k in range(g):
        Yk = Y[codes == k]
        mk = Yk.mean(axis=0)
        ssb += len(Yk) * (mk - grand) ** 2
        ssw += ((Yk - mk) ** 2).sum(axis=0)
    dfb, dfw = g - 1, N - g
    with np.errstate(divide="ignore", invalid="ignore"):
        F = (ssb / dfb) / (ssw / dfw)
    F = np.where((ssw == 0) & (ssb > 0), np.inf, F)
    p = stats.f.sf(F, dfb, dfw)
    return F, p


def _grand_mean(Y, codes, g):
    # identical group means give exactly zero between-group scatter
    means = np.array([Y[codes == k].mean(axis=0) for k in range(g)])
    if np.all(means == means[0]):
        return means[0]
    return Y.mean(axis=0)


def _scatter(Y, codes, g):
    grand = _grand_mean(Y, codes, g)
    E = np.zeros((Y.shape[1], Y.shape[1]))
    H = np.zeros_like(E)
    for k in range(g):
        Yk = Y[codes == k]
        mk = Yk.mean(axis=0)
        D = Yk - mk
        E += D.T @ D
        d = (mk - grand)[:, None]
        H += len(Yk) * (d @ d.T)
    return E, H


def manova(samples, groups, features=None, statistic: str = "wilks", tol: float = 1e-10) -> ManovaResult:
    """One-way MANOVA of per-shape vectors by group label.

    The overall test uses Wilks' lambda with Rao's F approximation (or
    Pillai's trace with its F approximation). Columns spanning no variance
    are projected out first; when that happens, or the within-group scatter
    is still singular, ``singular`` is set and the statistic is computed in
    the reduced space with a pseudo-inverse.
    """
    Y = np.asarray(samples, dtype=float)
    labels, codes = np.unique(np.asarray(groups), return_inverse=True)
    g, N = len(labels), len(Y)
    p_full = Y.shape[1]
    features = list(features) if features is not None else [f"f{j}" for j in range(p_full)]
    if g < 2:
        raise ValueError("need at least two groups")
    sizes = np.bincount(codes)
    notes = []
    if np.any(sizes <= p_full):
        notes.append("some group has no more samples than variables")

    E, H = _scatter(Y, codes, g)
    T = E + H
    evals, evecs = np.linalg.eigh(T)
    keep = evals > tol * max(evals.max(), 1e-300)
    rank = int(keep.sum())
    singular = rank < p_full
    if rank == 0:
        raise ValueError("no variance in any column")
    P = evecs[:, keep]
    Er, Hr = P.T @ E @ P, P.T @ H @ P
    if np.linalg.matrix_rank(Er) < rank:
        singular = True
        notes.append("within-group scatter singular; pseudo-inverse used")
    if singular:
        notes.append(f"statistic computed on a rank-{rank} subspace")

    p, q, v = rank, g - 1, N - g
    # eigenvalues of E^+ H in the reduced space
    theta = np.clip(np.real(np.linalg.eigvals(np.linalg.pinv(Er) @ Hr)), 0.0, None)
    Tr = Er + Hr
    pillai = float(np.trace(Hr @ np.linalg.pinv(Tr)))
    if statistic == "wilks":
        sign, logdet_e = np.linalg.slogdet(Er)
        _, logdet_t = np.linalg.slogdet(Tr)
        lam = math.exp(logdet_e - logdet_t) if sign > 0 else float(np.prod(1.0 / (1.0 + theta)))
        lam = min(lam, 1.0)
        r = v - (p - q + 1) / 2
        u = (p * q - 2) / 4
        t = math.sqrt((p * p * q * q - 4) / (p * p + q * q - 5)) if p * p + q * q - 5 > 0 else 1.0
        df1 = p * q
        df2 = r * t - 2 * u
        if lam <= 0:
            F, pval = math.inf, 0.0
        else:
            root = lam ** (1 / t)
            F = (1 - root) / root * df2 / df1
            pval = float(stats.f.sf(F, df1, df2))
        value = lam
    elif statistic == "pillai":
        s = min(p, q)
        m = (abs(p - q) - 1) / 2
        nn = (v - p - 1) / 2
        df1 = s * (2 * m + s + 1)
        df2 = s * (2 * nn + s + 1)
        F = math.inf if pillai >= s else (df2 / df1) * pillai / (s - pillai)
        pval = 0.0 if math.isinf(F) else float(stats.f.sf(F, df1, df2))
        value = pillai
    else:
        raise ValueError(f"unknown statistic {statistic!r}")
    fF, fp = one_way_anova(Y, groups)
    return ManovaResult(statistic=statistic, value=float(value), F=float(F), df1=float(df1), df2=float(df2),
                        p_value=float(np.clip(pval, 0.0, 1.0)), feature_F=fF, feature_p=fp, features=features,
                        singular=bool(singular), rank=rank, pillai=pillai, notes=notes)
