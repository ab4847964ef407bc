"""Synthetic ground truth: parametric shapes, planted utilities, simulated
preferences and the end-to-end recovery experiment."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np
from scipy.special import expit

from . import btrank, explain, forest
from .crosscat import spearman
from . import geometry as geo
from . import primitives
from .features import FEATURE_FIELDS, FEATURE_NAMES, FeatureConfig, extract_all

__all__ = [
    "Knob", "GENERATORS", "ShapeSpec", "UtilitySpec", "Corpus", "ExperimentConfig", "generate_shape",
    "sample_specs", "build_corpus", "zscore", "true_utilities", "sample_comparisons",
    "simulate_comparisons", "planted_driver_experiment", "GAP_CLAMP",
]

# utility gaps are clipped here; expit(50) rounds to exactly 1.0
GAP_CLAMP = 50.0


class Knob(NamedTuple):
    lo: float
    hi: float
    default: float
    target: str          # feature field the knob drives
    direction: int       # +1 if the target grows with the knob
    integer: bool = False


GENERATORS: dict[str, dict[str, Knob]] = {
    "box": {
        "sx": Knob(0.3, 3.0, 1.0, "aspect_ratio_x", +1),
        "sy": Knob(0.3, 3.0, 1.0, "aspect_ratio_y", +1),
        "sz": Knob(0.3, 3.0, 1.0, "aspect_ratio_z", +1),
    },
    "cylinder": {
        "radius": Knob(0.1, 1.0, 0.4, "surface_to_volume_ratio", -1),
        "height": Knob(0.2, 3.0, 1.5, "aspect_ratio_z", +1),
        "segments": Knob(8, 96, 48, "silhouette_complexity", +1, integer=True),
    },
    "lathe": {
        "amplitude": Knob(0.0, 0.4, 0.15, "mean_curvature", +1),
        "waves": Knob(1, 6, 2, "curvature_variance", +1, integer=True),
        "roughness": Knob(0.0, 0.08, 0.0, "curvature_variance", +1),
        "height": Knob(0.5, 3.0, 1.5, "aspect_ratio_z", +1),
    },
    "prong-union": {
        "k": Knob(0, 6, 3, "skeleton_complexity", +1, integer=True),
        "arm_length": Knob(0.15, 0.38, 0.36, "skeleton_complexity", +1),
    },
    "cavity-box": {
        "fraction": Knob(0.02, 0.6, 0.125, "hollow_ratio", +1),
        "sx": Knob(0.5, 2.0, 1.0, "aspect_ratio_x", +1),
        "sy": Knob(0.5, 2.0, 1.0, "aspect_ratio_y", +1),
        "sz": Knob(0.5, 2.0, 1.0, "aspect_ratio_z", +1),
    },
}


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    knobs: Mapping[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ValueError(f"unknown generator {self.kind!r}; expected one of {sorted(GENERATORS)}")
        table = GENERATORS[self.kind]
        for name, v in self.knobs.items():
            if name not in table:
                raise ValueError(f"{self.kind}: unknown knob {name!r}")
            knob = table[name]
            if not (knob.lo <= v <= knob.hi) or (isinstance(v, float) and math.isnan(v)):
                raise ValueError(f"{self.kind}: {name}={v} outside [{knob.lo}, {knob.hi}]")
            if knob.integer and int(v) != v:
                raise ValueError(f"{self.kind}: {name} must be an integer")

    def value(self, name):
        knob = GENERATORS[self.kind][name]
        v = self.knobs.get(name, knob.default)
        return int(v) if knob.integer else float(v)

    def to_dict(self):
        return {"kind": self.kind, "knobs": {k: self.value(k) for k in GENERATORS[self.kind]}, "seed": self.seed}


def _lathe(spec: ShapeSpec) -> geo.Mesh:
    a, waves, rough, h = (spec.value(k) for k in ("amplitude", "waves", "roughness", "height"))
    rings = 48
    t = np.linspace(0.0, 1.0, rings)
    r = 0.4 * (1 + a * np.sin(2 * np.pi * waves * t))
    if rough > 0:
        noise = np.random.default_rng(spec.seed).standard_normal(rings)
        r = r * (1 + rough * np.clip(noise, -2.5, 2.5))
    z = (t - 0.5) * h
    return primitives.lathe(list(zip(r, z)), segments=48)


def generate_shape(spec: ShapeSpec) -> geo.Mesh:
    """Watertight mesh for ``spec``; identical specs give identical arrays."""
    v = spec.value
    if spec.kind == "box":
        mesh = primitives.box((v("sx"), v("sy"), v("sz")))
    elif spec.kind == "cylinder":
        mesh = primitives.cylinder(v("radius"), v("height"), v("segments"))
    elif spec.kind == "lathe":
        mesh = _lathe(spec)
    elif spec.kind == "prong-union":
        mesh = primitives.prong_union(v("k"), arm_length=v("arm_length"))
    else:
        size = np.array([v("sx"), v("sy"), v("sz")])
        mesh = primitives.cavity_box(size, size * v("fraction") ** (1 / 3))
    if not geo.is_watertight(mesh):
        raise RuntimeError(f"{spec.kind} generator produced an open mesh")
    return mesh


def sample_specs(n: int, kinds=tuple(GENERATORS), seed: int = 0) -> list[ShapeSpec]:
    """``n`` specs cycling through ``kinds`` with knobs uniform on their ranges."""
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        kind = kinds[i % len(kinds)]
        knobs = {}
        for name, knob in GENERATORS[kind].items():
            if knob.integer:
                knobs[name] = int(rng.integers(int(knob.lo), int(knob.hi) + 1))
            else:
                knobs[name] = float(rng.uniform(knob.lo, knob.hi))
        specs.append(ShapeSpec(kind, knobs, seed=int(rng.integers(2**31))))
    return specs


@dataclass
class Corpus:
    ids: list
    specs: list
    features: np.ndarray      # shapes x features, FEATURE_FIELDS order
    meshes: list | None = None

    def __len__(self):
        return len(self.ids)


def build_corpus(specs, feature_config: FeatureConfig | None = None, keep_meshes: bool = True,
                 prefix: str = "shape") -> Corpus:
    meshes, rows = [], []
    for spec in specs:
        mesh = generate_shape(spec)
        rows.append(extract_all(mesh, feature_config).as_array())
        meshes.append(mesh)
    ids = [f"{prefix}_{i:04d}" for i in range(len(specs))]
    return Corpus(ids, list(specs), np.array(rows), meshes if keep_meshes else None)


@dataclass(frozen=True)
class UtilitySpec:
    """Utility on z-scored features: linear weights, pairwise products and a
    per-shape Gaussian term of scale ``noise``.

    A utility with no feature terms is allowed as long as ``noise > 0``.
    """
    weights: Mapping[str, float] = field(default_factory=dict)
    interactions: Mapping[tuple, float] = field(default_factory=dict)
    noise: float = 0.0

    def __post_init__(self):
        if self.noise < 0 or not math.isfinite(self.noise):
            raise ValueError("noise scale must be finite and >= 0")
        for name in list(self.weights) + [f for pair in self.interactions for f in pair]:
            if name not in FEATURE_FIELDS:
                raise ValueError(f"unknown feature {name!r}")
        for pair in self.interactions:
            if len(pair) != 2:
                raise ValueError("interaction terms need exactly two features")
        terms = [w for w in self.weights.values()] + [w for w in self.interactions.values()]
        if not any(w != 0 for w in terms) and self.noise == 0:
            raise ValueError("utility needs a nonzero term or a positive noise scale")

    @property
    def drivers(self) -> list:
        out = [f for f, w in self.weights.items() if w != 0]
        for pair, w in self.interactions.items():
            if w != 0:
                out += [f for f in pair if f not in out]
        return out

    def to_dict(self):
        return {"weights": dict(self.weights),
                "interactions": [[a, b, w] for (a, b), w in self.interactions.items()],
                "noise": self.noise, "scale": "z-scored features"}


def zscore(X):
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    out = np.zeros_like(X)
    ok = sd > 0
    out[:, ok] = (X[:, ok] - mu[ok]) / sd[ok]
    return out


def true_utilities(features, utility: UtilitySpec, seed: int = 0) -> np.ndarray:
    """Utilities of the rows of ``features`` (shapes x FEATURE_FIELDS)."""
    Z = zscore(features)
    col = {f: j for j, f in enumerate(FEATURE_FIELDS)}
    u = np.zeros(len(Z))
    for f, w in utility.weights.items():
        u += w * Z[:, col[f]]
    for (a, b), w in utility.interactions.items():
        u += w * Z[:, col[a]] * Z[:, col[b]]
    if utility.noise > 0:
        u += utility.noise * np.random.default_rng([seed, 7]).standard_normal(len(Z))
    return u


def sample_comparisons(utilities: Mapping[str, float], n: int, seed: int = 0,
                       category: str = "") -> list[btrank.ComparisonRecord]:
    """``n`` pairs drawn uniformly (two distinct shapes per draw), each won
    with Bradley-Terry probability of the utility gap.

    Draws are positional in the mapping's order, so relabelling the shapes
    relabels the records and nothing else.
    """
    ids = list(utilities)
    m = len(ids)
    if m < 2:
        raise ValueError("need at least two shapes")
    u = np.array([utilities[i] for i in ids], dtype=float)
    rng = np.random.default_rng(seed)
    a = rng.integers(0, m, n)
    b = rng.integers(0, m - 1, n)
    b += b >= a
    gap = np.clip(u[a] - u[b], -GAP_CLAMP, GAP_CLAMP)
    a_wins = rng.random(n) < expit(gap)
    win = np.where(a_wins, a, b)
    lose = np.where(a_wins, b, a)
    return [btrank.ComparisonRecord(ids[w], ids[l], category) for w, l in zip(win, lose)]


def simulate_comparisons(shapes: Mapping[str, object], utility: UtilitySpec, n: int, seed: int = 0,
                         category: str = "") -> list[btrank.ComparisonRecord]:
    """Comparisons for ``shapes`` (id -> feature vector or array) under ``utility``."""
    ids = list(shapes)
    X = np.array([s.as_array() if hasattr(s, "as_array") else np.asarray(s, dtype=float)
                  for s in shapes.values()])
    u = true_utilities(X, utility, seed)
    return sample_comparisons(dict(zip(ids, u)), n, seed, category)


@dataclass
class ExperimentConfig:
    n_shapes: int = 40
    kinds: tuple = tuple(GENERATORS)
    corpus_seed: int = 0
    utility: UtilitySpec = field(default_factory=lambda: UtilitySpec({"surface_to_volume_ratio": 1.5}))
    comparisons_per_shape: int = 40
    lam: float = btrank.DEFAULT_LAMBDA
    hyperparams: dict = field(default_factory=lambda: {"n_trees": 100, "max_depth": None, "min_samples_leaf": 1})
    test_fraction: float = 0.25
    weighted: bool = True
    category: str = "synthetic"
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)


@dataclass
class ExperimentResult:
    report: dict
    corpus: Corpus
    comparisons: list
    fit: btrank.BTFit
    model: forest.ForestModel
    dataset: forest.Dataset
    test_rows: np.ndarray


def planted_driver_experiment(config: ExperimentConfig, seed: int = 0, corpus: Corpus | None = None,
                              full: bool = False):
    """Generate, extract, simulate, fit scores, train, explain.

    ``corpus`` skips generation and extraction (it depends only on
    ``config.corpus_seed``). Returns the report dict, or an
    :class:`ExperimentResult` when ``full`` is set.
    """
    if corpus is None:
        specs = sample_specs(config.n_shapes, config.kinds, config.corpus_seed)
        corpus = build_corpus(specs, config.feature_config)
    n = len(corpus)
    u = true_utilities(corpus.features, config.utility, seed)
    comps = sample_comparisons(dict(zip(corpus.ids, u)), n * config.comparisons_per_shape // 2,
                               seed, config.category)
    fit = btrank.fit_bt(comps, lam=config.lam, registry=corpus.ids)
    beta = fit.scores(corpus.ids)
    weights = forest.comparison_weights(comps, corpus.ids)
    w = np.array([weights[i] for i in corpus.ids]) if config.weighted else None
    data = forest.Dataset(corpus.features, beta, w, corpus.ids, config.category, list(FEATURE_NAMES))

    perm = np.random.default_rng([seed, 11]).permutation(n)
    n_test = max(2, int(round(config.test_fraction * n)))
    test_rows, train_rows = np.sort(perm[:n_test]), np.sort(perm[n_test:])
    train, test = data.subset(train_rows), data.subset(test_rows)
    model = forest.train_forest(train, config.hyperparams, seed)
    pred = forest.predict_batch(model, test.X)
    importance = explain.global_importance(model, train.X)
    by_field = dict(zip(FEATURE_FIELDS, importance.values()))
    ranking = sorted(FEATURE_FIELDS, key=lambda f: (-by_field[f], FEATURE_FIELDS.index(f)))
    pearson = dict(zip(FEATURE_FIELDS, explain.pearson_feature_scan(corpus.features, beta, list(FEATURE_FIELDS)).values()))
    drivers = config.utility.drivers
    report = {
        "schema": "aesthetic3d.synth-report/1",
        "seed": seed,
        "corpus_seed": config.corpus_seed,
        "category": config.category,
        "n_shapes": n,
        "n_comparisons": len(comps),
        "utility": config.utility.to_dict(),
        "drivers": drivers,
        "bt_spearman": spearman(beta, u) if np.ptp(u) > 0 else None,
        "metrics": {
            "r2": forest.r2(test.y, pred),
            "mae": forest.mae(test.y, pred),
            "oob": forest.oob_score(model, train),
        },
        "shap_importance": by_field,
        "shap_ranking": ranking,
        "pearson": pearson,
        "top1": ranking[0],
        "top1_is_driver": ranking[0] in drivers,
        "drivers_in_top3": bool(drivers) and all(d in ranking[:3] for d in drivers),
        "pearson_missed_drivers": bool(drivers) and all(
            pearson[d] is not None and abs(pearson[d]) < 0.15 for d in drivers),
        "hyperparams": dict(model.hyperparams),
    }
    if full:
        return ExperimentResult(report, corpus, comps, fit, model, data, test_rows)
    return report
