"""Regularized Bradley-Terry scores from pairwise preferences.

The fitted objective is

    J(beta) = sum_k log sigmoid(beta[winner_k] - beta[loser_k]) - lam * ||beta||^2

maximized by damped Newton steps. The penalty has no 1/2 factor and is not
scaled by the number of comparisons. Scores are reported centered
(``sum(beta) == 0``), which only fixes the gauge: probabilities depend on
score differences alone.
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit, log_expit

__all__ = [
    "ComparisonRecord", "BTFit", "ConvergenceError", "bt_probability", "build_design_matrix",
    "log_likelihood", "fit_bt", "standard_errors", "comparison_counts", "read_comparisons",
    "score_rows", "DEFAULT_LAMBDA",
]

DEFAULT_LAMBDA = 0.01


@dataclass(frozen=True)
class ComparisonRecord:
    winner_id: str
    loser_id: str
    category: str = ""
    worker_id: str | None = None

    def __post_init__(self):
        if self.winner_id == self.loser_id:
            raise ValueError(f"comparison of {self.winner_id!r} with itself")


@dataclass
class BTFit:
    beta: dict
    se: dict
    log_likelihood: float
    gradient_norm: float
    iterations: int
    lam: float
    n_comparisons: dict = field(default_factory=dict)
    history: list = field(default_factory=list, repr=False)

    def scores(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self.beta[i] for i in ids])


class ConvergenceError(RuntimeError):
    """Newton iterations hit ``max_iter``; carries the last iterate."""

    def __init__(self, message, beta, gradient_norm, iterations):
        super().__init__(message)
        self.beta = beta
        self.gradient_norm = gradient_norm
        self.iterations = iterations


def bt_probability(beta_i, beta_j):
    """P(i preferred over j) as a stable sigmoid of the score difference."""
    return expit(np.subtract(beta_i, beta_j))


def _registry(comparisons, registry=None):
    if registry is None:
        seen = {}
        for c in comparisons:
            seen.setdefault(c.winner_id, None)
            seen.setdefault(c.loser_id, None)
        registry = sorted(seen)
    return list(registry), {sid: i for i, sid in enumerate(registry)}


def build_design_matrix(comparisons: Sequence[ComparisonRecord], registry=None) -> sparse.csr_matrix:
    """Sparse comparisons x shapes matrix: +1 at the winner, -1 at the loser."""
    if not len(comparisons):
        raise ValueError("no comparisons")
    ids, index = _registry(comparisons, registry)
    try:
        w = [index[c.winner_id] for c in comparisons]
        l = [index[c.loser_id] for c in comparisons]
    except KeyError as exc:
        raise KeyError(f"unknown shape id {exc.args[0]!r}") from None
    n = len(comparisons)
    rows = np.repeat(np.arange(n), 2)
    cols = np.column_stack([w, l]).ravel()
    vals = np.tile([1.0, -1.0], n)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, len(ids)))


def log_likelihood(beta, comparisons, registry=None) -> float:
    """Unpenalized log-likelihood; each record is an observed win."""
    X = build_design_matrix(comparisons, registry)
    beta = np.asarray([beta[i] for i in _registry(comparisons, registry)[0]]
                      if isinstance(beta, dict) else beta, dtype=float)
    return float(log_expit(X @ beta).sum())


def _objective(X, beta, lam):
    return float(log_expit(X @ beta).sum() - lam * beta @ beta)


def _gradient(X, beta, lam):
    return X.T @ expit(-(X @ beta)) - 2 * lam * beta


def _information(X, beta):
    """Negative Hessian of the log-likelihood, X' diag(p(1-p)) X."""
    p = expit(X @ beta)
    W = sparse.diags(p * (1 - p))
    return (X.T @ W @ X).toarray()


def comparison_counts(comparisons: Iterable[ComparisonRecord]) -> Counter:
    counts = Counter()
    for c in comparisons:
        counts[c.winner_id] += 1
        counts[c.loser_id] += 1
    return counts


def fit_bt(comparisons: Sequence[ComparisonRecord], lam: float = DEFAULT_LAMBDA, tol: float = 1e-8,
           max_iter: int = 100, registry=None) -> BTFit:
    """Penalized maximum-likelihood scores.

    Shapes listed in ``registry`` but absent from every comparison get
    ``beta = 0`` and an infinite standard error.

    Raises
    ------
    ConvergenceError
        if the gradient infinity-norm is still above ``tol`` after
        ``max_iter`` Newton iterations (e.g. a perfectly separated shape
        with ``lam == 0``).
    """
    if lam < 0:
        raise ValueError("lam must be >= 0")
    ids, _ = _registry(comparisons, registry)
    counts = comparison_counts(comparisons)
    active = [i for i in ids if counts[i] > 0]
    X = build_design_matrix(comparisons, active)
    n = len(active)
    beta = np.zeros(n)
    J = np.full((n, n), 1.0 / n)
    obj = _objective(X, beta, lam)
    history = [obj]
    grad = _gradient(X, beta, lam)
    gnorm = float(np.abs(grad).max())
    it = 0
    while gnorm >= tol:
        if it >= max_iter:
            raise ConvergenceError(
                f"Bradley-Terry fit did not converge in {max_iter} iterations "
                f"(gradient norm {gnorm:.3g})", dict(zip(active, beta)), gnorm, it)
        it += 1
        # J resolves the shift direction, which the likelihood ignores; the
        # gradient is orthogonal to it so the Newton step is unchanged
        H = _information(X, beta) + 2 * lam * np.eye(n) + J
        step = np.linalg.solve(H, grad)
        # near the optimum the objective change falls below rounding error;
        # full Newton steps are then accepted on the rounding slack
        slack = 1e-12 * max(1.0, abs(obj))
        t = 1.0
        while True:
            cand = beta + t * step
            cand_obj = _objective(X, cand, lam)
            if cand_obj >= obj - slack or t < 1e-10:
                break
            t *= 0.5
        if cand_obj < obj - slack:
            break  # no ascent possible at machine precision
        beta, obj = cand, cand_obj
        history.append(obj)
        grad = _gradient(X, beta, lam)
        gnorm = float(np.abs(grad).max())
    if gnorm >= tol:
        raise ConvergenceError(f"line search stalled (gradient norm {gnorm:.3g})",
                               dict(zip(active, beta)), gnorm, it)
    beta = beta - beta.mean()
    full_beta = {i: 0.0 for i in ids}
    full_beta.update(zip(active, beta.tolist()))
    fit = BTFit(beta=full_beta, se={}, log_likelihood=float(log_expit(X @ beta).sum()),
                gradient_norm=gnorm, iterations=it, lam=lam,
                n_comparisons={i: counts[i] for i in ids}, history=history)
    fit.se = standard_errors(fit, comparisons)
    return fit


def standard_errors(fit: BTFit, comparisons: Sequence[ComparisonRecord]) -> dict:
    """Standard errors of the centered scores from the Fisher information.

    The covariance is ``P (F + 2 lam Id)^-1 P`` where ``F`` is the Fisher
    information at the fit and ``P`` the centering projector; the projection
    drops the shift direction, which the data cannot inform. Only
    ``lam == 0`` with a disconnected comparison graph is singular.
    """
    counts = comparison_counts(comparisons)
    active = [i for i in fit.beta if counts[i] > 0]
    X = build_design_matrix(comparisons, active)
    n = len(active)
    beta = np.array([fit.beta[i] for i in active])
    info = _information(X, beta) + 2 * fit.lam * np.eye(n) + np.full((n, n), 1.0 / n)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular Fisher information: comparison graph is "
                                    "disconnected and lam == 0") from None
    if np.linalg.cond(info) > 1e13:
        raise np.linalg.LinAlgError("singular Fisher information: comparison graph is "
                                    "disconnected and lam == 0")
    P = np.eye(n) - 1.0 / n
    cov = P @ cov @ P
    se = {i: math.inf for i in fit.beta}
    se.update(zip(active, np.sqrt(np.clip(np.diag(cov), 0, None)).tolist()))
    return se


# ---------------------------------------------------------------------------
# CSV interfaces

def read_comparisons(path, category: str = "") -> list[ComparisonRecord]:
    """``winner_id,loser_id`` per line; a header row and ``#`` comments are
    skipped."""
    records = []
    first = True
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if first and row[:2] == ["winner_id", "loser_id"]:
                first = False
                continue
            first = False
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected winner_id,loser_id")
            try:
                records.append(ComparisonRecord(row[0].strip(), row[1].strip(), category))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise ValueError(f"{path}: no comparisons")
    return records


def score_rows(fit: BTFit):
    for sid in sorted(fit.beta):
        yield sid, fit.beta[sid], fit.se[sid], fit.n_comparisons.get(sid, 0)
