"""Pipeline stages shared by the command line and the synthetic experiment.

Every stage reads its inputs from disk, writes its outputs atomically and
stamps each file with the config hash and seed. Nothing time-dependent is
written, so rerunning a stage on unchanged inputs reproduces its files
byte for byte.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import btrank, crosscat, explain, forest, svg, synth
from . import geometry as geo
from .config import PipelineConfig
from .features import FEATURE_NAMES, FeatureConfig, extract_all
from .io import atomic_write_text, read_csv, write_csv

log = logging.getLogger(__name__)

MESH_SUFFIXES = (".obj", ".off")


class InputError(ValueError):
    """A missing or malformed stage input."""


# ---------------------------------------------------------------------------
# helpers

class Stage:
    """Output directory plus the provenance stamped onto every file."""

    def __init__(self, config: PipelineConfig, out=None):
        self.config = config
        self.out = Path(out if out is not None else config.paths.output_dir)
        self.hash = config.sha256()
        self.seed = config.seed

    def path(self, name) -> Path:
        return self.out / name

    def csv(self, name, header, rows, table):
        write_csv(self.path(name), header, rows, table, self.hash, self.seed)
        return self.path(name)

    def json(self, name, doc: dict):
        doc = {"config_sha256": self.hash, "seed": self.seed, **doc}
        atomic_write_text(self.path(name), dumps(doc))
        return self.path(name)

    def svg(self, name, text):
        atomic_write_text(self.path(name), text)
        return self.path(name)

    @property
    def stamp(self):
        return f"config_sha256={self.hash} seed={self.seed}"


def dumps(doc) -> str:
    return json.dumps(_plain(doc), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise InputError(f"missing {what}: {path}")
    return path


def feature_config(config: PipelineConfig) -> FeatureConfig:
    p = config.features
    return FeatureConfig(k=p.k, n_points=p.n_points, sample_mode=p.sample_mode, resolution=p.resolution,
                         n_planes=p.n_planes, n_views=p.n_views, skeleton_method=p.skeleton_method)


def feature_rows(ids, X):
    return ([sid, *map(float, row)] for sid, row in zip(ids, X))


def read_features(path):
    _require(Path(path), "features table")
    _, header, rows = read_csv(path)
    expected = ["shape_id", *FEATURE_NAMES]
    if header != expected:
        raise InputError(f"{path}: unexpected header {header}; expected {expected}")
    try:
        X = np.array([[float(v) for v in r[1:]] for r in rows], dtype=float).reshape(len(rows), len(FEATURE_NAMES))
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    return [r[0] for r in rows], X


def read_scores(path):
    _require(Path(path), "scores table")
    _, header, rows = read_csv(path)
    if header[:2] != ["shape_id", "beta"]:
        raise InputError(f"{path}: expected shape_id,beta columns")
    return {r[0]: float(r[1]) for r in rows}


def read_comparisons(path, category=""):
    _require(Path(path), "comparisons file")
    try:
        return btrank.read_comparisons(path, category)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def read_shap_values(path):
    _require(Path(path), "SHAP values table")
    _, header, rows = read_csv(path)
    if header[1:1 + len(FEATURE_NAMES)] != list(FEATURE_NAMES):
        raise InputError(f"{path}: expected shape_id then the canonical feature columns")
    try:
        return np.array([[float(v) for v in r[1:1 + len(FEATURE_NAMES)]] for r in rows], dtype=float)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# extract

def mesh_files(mesh_dir) -> list[Path]:
    mesh_dir = Path(mesh_dir)
    if not mesh_dir.is_dir():
        raise InputError(f"missing mesh directory: {mesh_dir}")
    files = sorted(p for p in mesh_dir.iterdir() if p.suffix.lower() in MESH_SUFFIXES)
    if not files:
        raise InputError(f"no .obj or .off meshes in {mesh_dir}")
    stems = [p.stem for p in files]
    dup = sorted({s for s in stems if stems.count(s) > 1})
    if dup:
        raise InputError(f"duplicate shape ids in {mesh_dir}: {dup}")
    return files


def run_extract(config: PipelineConfig, out=None, mesh_dir=None, dump_derived: bool = False) -> Path:
    """Features for every mesh in the mesh directory -> ``features.csv``."""
    stage = Stage(config, out)
    fc = feature_config(config)
    ids, rows = [], []
    for path in mesh_files(mesh_dir or config.paths.mesh_dir):
        try:
            mesh = geo.load_mesh(path)
        except geo.GeometryError as exc:
            raise InputError(str(exc)) from None
        if config.features.normalize:
            mesh = geo.normalize(mesh, config.features.category_scale)
        ids.append(path.stem)
        rows.append(extract_all(mesh, fc).as_array())
        if dump_derived:
            _dump_derived(stage, path.stem, mesh, fc.resolution)
    return stage.csv("features.csv", ["shape_id", *FEATURE_NAMES], feature_rows(ids, rows), "features")


def _dump_derived(stage: Stage, sid, mesh, resolution):
    derived = {
        "hull": geo.convex_hull(mesh.vertices),
        "obb": geo.oriented_bounding_box(mesh).as_mesh(),
        "voxels": geo.voxel_mesh(geo.voxelize(mesh, resolution)),
    }
    for kind, m in derived.items():
        atomic_write_text(stage.path(f"derived/{sid}_{kind}.obj"), geo.obj_text(m, f"{kind} of {sid} {stage.stamp}"))


# ---------------------------------------------------------------------------
# fit-bt

def fit_scores(comparisons, config: PipelineConfig, registry=None) -> btrank.BTFit:
    p = config.bt
    return btrank.fit_bt(comparisons, lam=p.lam, tol=p.tol, max_iter=p.max_iter, registry=registry)


def write_scores(stage: Stage, fit: btrank.BTFit):
    stage.csv("scores.csv", ["shape_id", "beta", "se", "n_comparisons"], btrank.score_rows(fit), "scores")
    stage.json("bt_diagnostics.json", {
        "lambda": fit.lam, "iterations": fit.iterations, "gradient_norm": fit.gradient_norm,
        "log_likelihood": fit.log_likelihood, "n_shapes": len(fit.beta),
        "n_comparisons": sum(fit.n_comparisons.values()) // 2,
        "unobserved": sorted(i for i, n in fit.n_comparisons.items() if n == 0),
    })
    return stage.path("scores.csv")


def run_fit_bt(config: PipelineConfig, out=None, comparisons=None) -> Path:
    """Scores from the comparisons file -> ``scores.csv`` and diagnostics."""
    stage = Stage(config, out)
    comps = read_comparisons(comparisons or config.paths.comparisons, config.category)
    return write_scores(stage, fit_scores(comps, config))


# ---------------------------------------------------------------------------
# train

def load_dataset(stage: Stage, comparisons=None) -> forest.Dataset:
    """Join ``features.csv`` with ``scores.csv``; weights come from the
    comparisons file when weighting is enabled."""
    config = stage.config
    ids, X = read_features(stage.path("features.csv"))
    beta = read_scores(stage.path("scores.csv"))
    missing = sorted(set(beta) - set(ids))
    if missing:
        raise InputError(f"scored shapes without features: {missing[:10]}")
    keep = [k for k, sid in enumerate(ids) if sid in beta]
    if len(keep) < len(ids):
        log.warning("%d shapes have features but no score; dropped", len(ids) - len(keep))
    ids = [ids[k] for k in keep]
    X = X[keep]
    y = np.array([beta[i] for i in ids])
    w = None
    if config.forest.weighted:
        comps = read_comparisons(comparisons or config.paths.comparisons, config.category)
        weights = forest.comparison_weights(comps, ids)
        w = np.array([weights[i] for i in ids])
    return forest.Dataset(X, y, w, ids, config.category, list(FEATURE_NAMES))


def _oof_predictions(dataset, hp, folds, seed):
    pred = np.empty(len(dataset))
    for f in range(int(folds.max()) + 1):
        test = folds == f
        model = forest.train_forest(dataset.subset(np.flatnonzero(~test)), hp, seed)
        pred[test] = forest.predict_batch(model, dataset.X[test])
    return pred


def metrics_row(category, evaluation, y, pred, model, dataset, weights=None):
    return [category, evaluation, len(y), forest.r2(y, pred), forest.mae(y, pred, weights),
            forest.oob_score(model, dataset)]


METRICS_HEADER = ["category", "evaluation", "n_shapes", "r2", "mae", "oob"]


def run_train(config: PipelineConfig, out=None, comparisons=None) -> Path:
    """Grid-searched (or fixed) forest -> ``model.json``, ``metrics.csv``, ``cv_report.csv``.

    Reported R^2 and MAE are out-of-fold predictions of the chosen
    hyperparameters; OOB is the final model's out-of-bag R^2.
    """
    stage = Stage(config, out)
    data = load_dataset(stage, comparisons)
    p = config.forest
    seed = config.seed
    folds = forest.make_folds(len(data), p.cv_folds, seed)
    if p.hyperparams is not None:
        hp = dict(p.hyperparams)
        cv_rows = [[hp.get("n_trees"), hp.get("max_depth"), hp.get("min_samples_leaf"),
                    float(np.mean(forest.cross_val_r2(data, hp, folds, seed)))]]
    else:
        report = forest.grid_search_cv(data, p.grid, p.cv_folds, seed)
        hp = report.best
        cv_rows = [[pt["n_trees"], pt["max_depth"], pt["min_samples_leaf"], s] for pt, s in report.rows()]
    stage.csv("cv_report.csv", ["n_trees", "max_depth", "min_samples_leaf", "cv_r2"], cv_rows, "cv")
    model = forest.train_forest(data, hp, seed)
    forest.save_model(model, stage.path("model.json"),
                      {"category": config.category, "config_sha256": stage.hash, "provenance_seed": seed})
    pred = _oof_predictions(data, hp, folds, seed)
    stage.csv("metrics.csv", METRICS_HEADER, [metrics_row(config.category, f"cv{p.cv_folds}", data.y, pred,
                                                          model, data)], "metrics")
    return stage.path("model.json")


# ---------------------------------------------------------------------------
# explain

def load_model(stage: Stage) -> forest.ForestModel:
    path = _require(stage.path("model.json"), "model")
    try:
        return forest.load_model(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def training_matrix(stage: Stage, model):
    ids, X = read_features(stage.path("features.csv"))
    row = {sid: k for k, sid in enumerate(ids)}
    missing = [i for i in model.ids if i not in row]
    if missing:
        raise InputError(f"model shapes missing from features.csv: {missing[:10]}")
    return X[[row[i] for i in model.ids]]


def write_explanations(stage: Stage, model, X, y=None, method="path", grid_size=20, pdp_features=None):
    names = list(model.feature_names)
    background = X if method == "interventional" else None
    phi, base = explain.shap_values(model, X, method, background)
    pred = forest.predict_batch(model, X)
    importance = dict(zip(names, np.abs(phi).mean(axis=0).tolist()))
    stage.csv("shap_importance.csv", ["feature", "value"], explain.importance_rows(importance), "shap-importance")
    stage.csv("shap_values.csv", ["shape_id", *names, "base", "prediction"],
              ([sid, *row.tolist(), base, p] for sid, row, p in zip(model.ids, phi, pred)), "shap-values")
    curves = []
    for f in pdp_features or names:
        if f not in names:
            raise InputError(f"unknown PDP feature {f!r}")
        if np.ptp(X[:, names.index(f)]) > 0:
            curves.append(explain.partial_dependence(model, X, f, grid_size))
    stage.csv("pdp.csv", ["feature", "grid", "response"], explain.pdp_rows(curves), "pdp")
    if y is not None:
        pearson = explain.pearson_feature_scan(X, y, names)
        stage.csv("pearson.csv", ["feature", "r"], pearson.items(), "pearson")
    return importance


def run_explain(config: PipelineConfig, out=None) -> Path:
    """SHAP importances and values, PDP curves and the Pearson scan."""
    stage = Stage(config, out)
    model = load_model(stage)
    X = training_matrix(stage, model)
    beta = read_scores(stage.path("scores.csv")) if stage.path("scores.csv").exists() else None
    y = np.array([beta[i] for i in model.ids]) if beta else None
    p = config.explain
    write_explanations(stage, model, X, y, p.method, p.pdp_grid, p.pdp_features)
    return stage.path("shap_importance.csv")


# ---------------------------------------------------------------------------
# crosscat

def _category_dir(source):
    """A category is a stage output directory or a config file naming one."""
    source = Path(source)
    if source.is_dir():
        return source, None
    if source.is_file():
        cfg = PipelineConfig.load(source)
        return Path(cfg.paths.output_dir), cfg
    raise InputError(f"missing category directory or config: {source}")


def run_crosscat(config: PipelineConfig, sources, out=None) -> Path:
    """Importance correlations, clustering, MANOVA and transfer across categories."""
    stage = Stage(config, out)
    sources = list(sources or config.crosscat.categories)
    if len(sources) < 2:
        raise InputError("crosscat needs at least two categories")
    cats, importances, attributions, models, datasets = [], {}, [], {}, {}
    for src in sources:
        d, cfg = _category_dir(src)
        sub = Stage(cfg or config, d)
        model_doc = json.loads(_require(d / "model.json", "model").read_text())
        name = model_doc.get("category") or d.name
        if name in importances:
            raise InputError(f"duplicate category {name!r}")
        _, header, rows = read_csv(_require(d / "shap_importance.csv", "SHAP importances"))
        table = {r[0]: float(r[1]) for r in rows}
        if set(table) != set(FEATURE_NAMES):
            raise InputError(f"{d / 'shap_importance.csv'}: feature set differs from the canonical features")
        importances[name] = {f: table[f] for f in FEATURE_NAMES}
        cats.append(name)
        model = forest.model_from_json(model_doc)
        X = training_matrix(sub, model)
        beta = read_scores(d / "scores.csv")
        models[name] = model
        datasets[name] = forest.Dataset(X, np.array([beta[i] for i in model.ids]), None, model.ids, name,
                                        list(model.feature_names))
        attributions.append(read_shap_values(d / "shap_values.csv"))
    imp = crosscat.ImportanceMatrix.from_dicts(importances, list(FEATURE_NAMES))
    corr = crosscat.importance_correlation_matrix(imp)
    stage.csv("correlation.csv", ["category", *cats], ([c, *corr[i].tolist()] for i, c in enumerate(cats)),
              "correlation")
    dendro = crosscat.hierarchical_cluster(imp)
    stage.json("dendrogram.json", dendro.to_json())

    # group differences in feature effects: per-shape attributions, not raw features
    Y = np.vstack(attributions)
    groups = np.concatenate([[c] * len(a) for c, a in zip(cats, attributions)])
    res = crosscat.manova(Y, groups, list(FEATURE_NAMES), config.crosscat.statistic)
    stage.csv("manova.csv", ["feature", "F", "p"], res.feature_rows(), "manova")
    stage.json("manova.json", {"statistic": res.statistic, "value": res.value, "F": res.F, "df1": res.df1,
                               "df2": res.df2, "p_value": res.p_value, "pillai": res.pillai,
                               "singular": res.singular, "rank": res.rank, "notes": res.notes})
    rows = []
    for a in cats:
        for b in cats:
            if a != b:
                t = forest.transfer_evaluate(models[a], datasets[b], config.forest.cv_folds, config.seed)
                rows.append([a, b, t.r2, t.within_cv_r2, t.drop])
    stage.csv("transfer.csv", ["source", "target", "r2", "within_cv_r2", "drop"], rows, "transfer")
    return stage.path("correlation.csv")


# ---------------------------------------------------------------------------
# synth

def experiment_config(config: PipelineConfig) -> synth.ExperimentConfig:
    s = config.synth
    interactions = {}
    for term in s.interactions:
        if len(term) != 3:
            raise InputError(f"interaction terms are [feature_a, feature_b, weight], got {term!r}")
        interactions[(term[0], term[1])] = float(term[2])
    try:
        utility = synth.UtilitySpec(dict(s.weights), interactions, float(s.noise))
    except ValueError as exc:
        raise InputError(f"synth utility: {exc}") from None
    return synth.ExperimentConfig(
        n_shapes=s.n_shapes, kinds=tuple(s.kinds), corpus_seed=s.corpus_seed, utility=utility,
        comparisons_per_shape=s.comparisons_per_shape, lam=config.bt.lam, hyperparams=dict(s.hyperparams),
        test_fraction=s.test_fraction, weighted=config.forest.weighted,
        category=config.category, feature_config=feature_config(config))


def run_synth(config: PipelineConfig, out=None) -> Path:
    """Planted-utility experiment -> a self-contained experiment directory."""
    stage = Stage(config, out)
    res = synth.planted_driver_experiment(experiment_config(config), config.seed, full=True)
    corpus = res.corpus
    for sid, spec, mesh in zip(corpus.ids, corpus.specs, corpus.meshes):
        knobs = " ".join(f"{k}={v!r}" for k, v in sorted(spec.knobs.items()))
        atomic_write_text(stage.path(f"meshes/{sid}.obj"),
                          geo.obj_text(mesh, f"{spec.kind} {knobs} {stage.stamp}"))
    stage.csv("shapes.csv", ["shape_id", "kind", "knobs"],
              ([sid, s.kind, json.dumps(s.knobs, sort_keys=True)] for sid, s in zip(corpus.ids, corpus.specs)),
              "shapes")
    stage.csv("comparisons.csv", ["winner_id", "loser_id", "category"],
              ([c.winner_id, c.loser_id, c.category] for c in res.comparisons), "comparisons")
    stage.csv("features.csv", ["shape_id", *FEATURE_NAMES], feature_rows(corpus.ids, corpus.features), "features")
    write_scores(stage, res.fit)
    model = res.model
    forest.save_model(model, stage.path("model.json"),
                      {"category": config.category, "config_sha256": stage.hash, "provenance_seed": config.seed})
    test = res.dataset.subset(res.test_rows)
    pred = forest.predict_batch(model, test.X)
    train_rows = np.setdiff1d(np.arange(len(res.dataset)), res.test_rows)
    stage.csv("metrics.csv", METRICS_HEADER,
              [metrics_row(config.category, "holdout", test.y, pred, model, res.dataset.subset(train_rows))],
              "metrics")
    stage.csv("test_split.csv", ["shape_id"], ([res.dataset.ids[k]] for k in res.test_rows), "split")
    X_train = res.dataset.X[train_rows]
    write_explanations(stage, model, X_train, res.dataset.y[train_rows], config.explain.method,
                       config.explain.pdp_grid, config.explain.pdp_features)
    stage.json("report.json", res.report)
    return stage.path("report.json")


# ---------------------------------------------------------------------------
# report

def _read_table(path):
    _, header, rows = read_csv(path)
    return header, rows


def _num(v):
    try:
        return float(v)
    except ValueError:
        return None


def run_report(config: PipelineConfig, directory=None, out=None) -> Path:
    """Consolidate whatever stage outputs exist in ``directory`` into
    ``summary.json`` plus SVG renderings."""
    directory = Path(directory or config.paths.output_dir)
    if not directory.is_dir():
        raise InputError(f"missing output directory: {directory}")
    stage = Stage(config, out if out is not None else directory)
    summary = {"schema": "aesthetic3d.summary/1", "directory": directory.name}
    known = ("metrics.csv", "shap_importance.csv", "pdp.csv", "correlation.csv")
    if not any((directory / name).exists() for name in known):
        raise InputError(f"nothing to report in {directory}: expected one of {', '.join(known)}")
    if (directory / "metrics.csv").exists():
        header, rows = _read_table(directory / "metrics.csv")
        metrics = {k: _num(v) if k in ("r2", "mae", "oob") else v for k, v in zip(header, rows[0])}
        if "n_shapes" in metrics:
            metrics["n_shapes"] = int(metrics["n_shapes"])
        summary["metrics"] = metrics
    if (directory / "shap_importance.csv").exists():
        _, rows = _read_table(directory / "shap_importance.csv")
        summary["shap_importance"] = {r[0]: float(r[1]) for r in rows}
        stage.svg("shap_importance.svg", svg.bar_chart([r[0] for r in rows], [float(r[1]) for r in rows],
                                                      "mean |SHAP|", stage.stamp))
    if (directory / "pdp.csv").exists():
        _, rows = _read_table(directory / "pdp.csv")
        curves = {}
        for f, g, r in rows:
            curves.setdefault(f, ([], []))
            curves[f][0].append(float(g))
            curves[f][1].append(float(r))
        summary["pdp_features"] = list(curves)
        stage.svg("pdp.svg", svg.line_panels([(f, g, r) for f, (g, r) in curves.items()],
                                             "partial dependence", stage.stamp))
    if (directory / "pearson.csv").exists():
        _, rows = _read_table(directory / "pearson.csv")
        summary["pearson"] = {r[0]: _num(r[1]) if r[1] else None for r in rows}
    if (directory / "correlation.csv").exists():
        header, rows = _read_table(directory / "correlation.csv")
        M = np.array([[float(v) for v in r[1:]] for r in rows])
        summary["correlation"] = {"categories": header[1:], "matrix": M.tolist()}
        stage.svg("correlation.svg", svg.heatmap(header[1:], M, "importance Spearman", stage.stamp))
    if (directory / "report.json").exists():
        rep = json.loads((directory / "report.json").read_text())
        summary["experiment"] = {k: rep.get(k) for k in ("drivers", "top1", "top1_is_driver", "drivers_in_top3",
                                                         "pearson_missed_drivers", "bt_spearman")}
    stage.json("summary.json", summary)
    return stage.path("summary.json")
