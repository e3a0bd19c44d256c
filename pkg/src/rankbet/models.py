"""Outcome models fitted on partially masked data.

The betting policies guess masked treatment assignments through a working
model: outcomes are modeled as a two-component Gaussian mixture whose
component means are linear functions of the covariates (optionally with
second-order interactions and extra power terms). With assignments masked,
the mixture is fit by EM — the E-step computes the posterior probability
of treatment for each masked subject from the Gaussian density ratio, the
M-step refits both arm regressions by weighted least squares (or weighted
Huber regression when robustness is wanted). Subjects whose assignment has
been revealed keep their posterior pinned at the truth.

The same design machinery also provides plain residual fits (regress the
outcome on covariates only) and assignment-aware regressions and k-NN
predictors used by the signed-rank statistic family. Validity of the
betting tests never depends on any of these models being correct; they
only affect power.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import expit

from .data import Dataset
from .errors import ConfigError, DegenerateDesignError

__all__ = [
    "DesignSpec",
    "BuiltDesign",
    "build_design",
    "fit_regression",
    "WorkingModelFit",
    "fit_em",
    "fit_residuals",
    "predict_outcome",
    "AssignmentRegression",
    "fit_assignment_regression",
    "KNRegressor",
    "fit_knn_model",
    "logistic_scores",
]

logger = logging.getLogger(__name__)

_ESTIMATORS = ("least-squares", "huber-robust")


@dataclass(frozen=True)
class DesignSpec:
    """Recipe for a regression design matrix.

    ``base_features`` selects covariate columns (None = all). When
    ``interactions`` is set, all pairwise products of the base features are
    appended. ``extra_terms`` adds ``(column, power)`` monomials such as a
    quadratic in the third covariate, ``(2, 2)``. An intercept column is
    always included. Exact duplicate columns (e.g. the square of a binary
    feature) are dropped with a logged warning.
    """

    base_features: tuple[int, ...] | None = None
    interactions: bool = False
    extra_terms: tuple[tuple[int, int], ...] = ()
    estimator: str = "least-squares"
    huber_c: float = 1.345

    def __post_init__(self):
        if self.estimator not in _ESTIMATORS:
            raise ConfigError(f"estimator must be one of {_ESTIMATORS}, got {self.estimator!r}")
        if self.huber_c <= 0:
            raise ConfigError("huber tuning constant must be positive")

    def to_dict(self) -> dict:
        return {
            "base_features": None if self.base_features is None else list(self.base_features),
            "interactions": self.interactions,
            "extra_terms": [list(t) for t in self.extra_terms],
            "estimator": self.estimator,
            "huber_c": self.huber_c,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DesignSpec":
        base = doc.get("base_features")
        return cls(
            base_features=None if base is None else tuple(int(v) for v in base),
            interactions=bool(doc.get("interactions", False)),
            extra_terms=tuple((int(c), int(p)) for c, p in doc.get("extra_terms", [])),
            estimator=doc.get("estimator", "least-squares"),
            huber_c=float(doc.get("huber_c", 1.345)),
        )


@dataclass(frozen=True)
class BuiltDesign:
    """A design spec bound to a training matrix: remembers which columns
    survived deduplication so new data is expanded identically."""

    spec: DesignSpec
    n_covariates: int
    kept: tuple[int, ...]
    names: tuple[str, ...]

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.n_covariates)
        cols, _ = _raw_columns(self.spec, x)
        return cols[:, self.kept]

    @property
    def dim(self) -> int:
        return len(self.kept)


def _raw_columns(spec: DesignSpec, x: np.ndarray) -> tuple[np.ndarray, list[str]]:
    n, d = x.shape
    base = tuple(range(d)) if spec.base_features is None else spec.base_features
    if any(j < 0 or j >= d for j in base):
        raise ConfigError(f"base feature index outside 0..{d - 1}")
    cols = [np.ones(n)]
    names = ["1"]
    for j in base:
        cols.append(x[:, j])
        names.append(f"x{j + 1}")
    if spec.interactions:
        for i_pos, j in enumerate(base):
            for k in base[i_pos + 1 :]:
                cols.append(x[:, j] * x[:, k])
                names.append(f"x{j + 1}*x{k + 1}")
    for j, p in spec.extra_terms:
        if j < 0 or j >= d:
            raise ConfigError(f"extra term column {j} outside 0..{d - 1}")
        cols.append(x[:, j] ** p)
        names.append(f"x{j + 1}^{p}")
    return np.column_stack(cols), names


def build_design(spec: DesignSpec, x: np.ndarray) -> BuiltDesign:
    """Bind ``spec`` to training covariates, dropping duplicate columns."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    cols, names = _raw_columns(spec, x)
    kept: list[int] = []
    for j in range(cols.shape[1]):
        dup = any(np.array_equal(cols[:, j], cols[:, i]) for i in kept)
        if dup:
            logger.warning("dropping duplicate design column %s", names[j])
        else:
            kept.append(j)
    return BuiltDesign(
        spec=spec,
        n_covariates=x.shape[1],
        kept=tuple(kept),
        names=tuple(names[j] for j in kept),
    )


# -- regression core ----------------------------------------------------------


def _weighted_lstsq(m: np.ndarray, y: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    if weights is None:
        mm, yy = m, y
    else:
        sw = np.sqrt(np.clip(weights, 0.0, None))
        mm, yy = m * sw[:, None], y * sw
    coef, _, rank, _ = np.linalg.lstsq(mm, yy, rcond=None)
    if rank < m.shape[1]:
        raise DegenerateDesignError(
            f"design matrix is rank deficient (rank {rank} < {m.shape[1]} columns)"
        )
    return coef


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Interpolated weighted median; equals ``np.median`` for uniform weights."""
    order = np.argsort(values)
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    if cum[-1] <= 0:
        return float(np.median(values))
    midpoints = cum - 0.5 * w
    return float(np.interp(0.5 * cum[-1], midpoints, v))


def _huber_irls(
    m: np.ndarray,
    y: np.ndarray,
    c: float,
    weights: np.ndarray | None,
    tol: float = 1e-10,
    max_iter: int = 100,
) -> np.ndarray:
    """Huber M-estimate by iteratively reweighted least squares.

    Residuals are rescaled each iteration by the (case-weighted) median
    absolute deviation over 0.6745, the usual consistency constant, and
    the Huber weight ``min(1, c/|r/scale|)`` multiplies any case weights.
    """
    base = np.ones(len(y)) if weights is None else np.clip(weights, 0.0, None)
    coef = _weighted_lstsq(m, y, base)
    for _ in range(max_iter):
        resid = y - m @ coef
        scale = _weighted_median(np.abs(resid), base) / 0.6745
        if scale <= 0 or not math.isfinite(scale):
            return coef  # (near-)perfect fit; no robust reweighting needed
        u = np.abs(resid) / scale
        hub = np.where(u <= c, 1.0, c / np.maximum(u, 1e-300))
        new = _weighted_lstsq(m, y, base * hub)
        delta = float(np.max(np.abs(new - coef)))
        coef = new
        if delta < tol:
            break
    return coef


def fit_regression(
    m: np.ndarray,
    y: np.ndarray,
    estimator: str = "least-squares",
    huber_c: float = 1.345,
    weights: np.ndarray | None = None,
) -> np.ndarray:
    """Coefficients of the chosen estimator on design matrix ``m``."""
    if estimator == "least-squares":
        return _weighted_lstsq(m, y, weights)
    if estimator == "huber-robust":
        return _huber_irls(m, y, huber_c, weights)
    raise ConfigError(f"unknown estimator {estimator!r}")


# -- EM mixture fit -----------------------------------------------------------


@dataclass(frozen=True)
class WorkingModelFit:
    """Fitted two-arm outcome model with per-subject treatment posteriors.

    ``q_hat[i]`` is the estimated probability that subject ``i`` (in dataset
    row order) was treated: exactly the revealed assignment for revealed
    subjects, the EM posterior for masked ones.
    """

    built: BuiltDesign
    theta0: np.ndarray
    theta1: np.ndarray
    q_hat: np.ndarray
    n_iter: int
    converged: bool
    sigma: float = 1.0
    loglik_path: tuple[float, ...] = field(default=(), repr=False)

    def predict(self, x: np.ndarray, a: int) -> np.ndarray:
        """Model prediction of the outcome under (possibly counterfactual)
        assignment ``a``."""
        m = self.built.transform(np.atleast_2d(x))
        theta = self.theta1 if a == 1 else self.theta0
        return m @ theta

    def posterior(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Treatment posterior for arbitrary (y, x) points under the fit."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        m = self.built.transform(np.atleast_2d(x))
        return _posterior(y, m @ self.theta1, m @ self.theta0, self.sigma)


def _posterior(y: np.ndarray, mean1: np.ndarray, mean0: np.ndarray, sigma: float) -> np.ndarray:
    z = ((y - mean0) ** 2 - (y - mean1) ** 2) / (2.0 * sigma**2)
    return expit(z)


def _observed_loglik(
    y: np.ndarray,
    mean1: np.ndarray,
    mean0: np.ndarray,
    revealed: np.ndarray,
    a: np.ndarray,
    sigma: float,
) -> float:
    """Observed-data log-likelihood: revealed subjects contribute their arm
    density, masked subjects an equal-weight two-component mixture."""
    log_norm = -0.5 * math.log(2.0 * math.pi) - math.log(sigma)
    l1 = log_norm - 0.5 * ((y - mean1) / sigma) ** 2
    l0 = log_norm - 0.5 * ((y - mean0) / sigma) ** 2
    mix = np.logaddexp(l1, l0) - math.log(2.0)
    fixed = np.where(a == 1, l1, l0)
    return float(np.sum(np.where(revealed, fixed, mix)))


def _initial_posteriors(
    y: np.ndarray,
    m: np.ndarray,
    a: np.ndarray,
    revealed: np.ndarray,
) -> np.ndarray:
    """Warm start for the masked posteriors.

    With at least six revealed subjects per arm, a ridge-regularized
    logistic regression of the revealed assignments on (design, outcome)
    supplies informative starting scores. Otherwise fall back to the
    symmetry-breaking cold start 0.5 + 0.01 * standardized(y) — plain 0.5
    would be an EM fixed point.
    """
    q = np.where(a == 1, 1.0, 0.0)
    masked = ~revealed
    if not masked.any():
        return q
    n1 = int(np.sum(revealed & (a == 1)))
    n0 = int(np.sum(revealed & (a == 0)))
    if n1 >= 6 and n0 >= 6:
        z = np.column_stack([m, y])
        beta = _logistic_irls(z[revealed], a[revealed].astype(float))
        q[masked] = expit(z[masked] @ beta)
        return q
    sd = float(np.std(y))
    standardized = (y - float(np.mean(y))) / sd if sd > 0 else np.zeros_like(y)
    q[masked] = np.clip(0.5 + 0.01 * standardized[masked], 0.001, 0.999)
    return q


def _logistic_irls(z: np.ndarray, t: np.ndarray, ridge: float = 1e-6, max_iter: int = 25) -> np.ndarray:
    beta = np.zeros(z.shape[1])
    for _ in range(max_iter):
        p = expit(z @ beta)
        w = np.clip(p * (1 - p), 1e-6, None)
        h = z.T @ (z * w[:, None]) + ridge * np.eye(z.shape[1])
        g = z.T @ (t - p)
        step = np.linalg.solve(h, g)
        beta = beta + step
        if float(np.max(np.abs(step))) < 1e-8:
            break
    return beta


def logistic_scores(
    features: np.ndarray,
    labels: np.ndarray,
    query: np.ndarray,
    ridge: float = 1e-6,
) -> np.ndarray:
    """Probability scores for ``query`` rows from a ridge-regularized
    logistic fit of binary ``labels`` on ``features`` (intercept added)."""
    z = np.column_stack([np.ones(len(features)), features])
    beta = _logistic_irls(z, np.asarray(labels, dtype=float), ridge=ridge)
    zq = np.column_stack([np.ones(len(query)), query])
    return expit(zq @ beta)


def fit_em(
    dataset: Dataset,
    revealed_ids: Sequence[int],
    design: DesignSpec,
    max_iter: int = 100,
    tol: float = 1e-6,
    estimate_sigma: bool = False,
    init_q: np.ndarray | None = None,
) -> WorkingModelFit:
    """EM fit of the two-arm mixture on a partially revealed dataset.

    Alternates the posterior update for masked subjects with weighted
    regressions of the outcome on the design, weights ``q`` for the treated
    arm and ``1 - q`` for the control arm; both regressions run over all
    subjects, with revealed subjects clamped to weight 0 or 1. Stops when
    the largest coefficient change drops below ``tol``. The noise scale is
    fixed at one unless ``estimate_sigma`` is set.

    Only the revealed assignments are ever read: the fit sees exactly the
    information available to the analyst mid-test.
    """
    y, x, a = dataset.y, dataset.x, dataset.a
    n = len(dataset)
    revealed = np.zeros(n, dtype=bool)
    id_to_row = {sid: i for i, sid in enumerate(dataset.ids)}
    for sid in revealed_ids:
        revealed[id_to_row[sid]] = True

    built = build_design(design, x)
    m = built.transform(x)
    if init_q is None:
        q = _initial_posteriors(y, m, a, revealed)
    else:
        q = np.asarray(init_q, dtype=float).copy()
        q[revealed] = a[revealed]

    sigma = 1.0
    theta0 = np.zeros(built.dim)
    theta1 = np.zeros(built.dim)
    loglik_path: list[float] = []
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        theta1_new = _m_step(m, y, q, "treated", design)
        theta0_new = _m_step(m, y, 1.0 - q, "control", design)
        mean1, mean0 = m @ theta1_new, m @ theta0_new
        if estimate_sigma:
            sq = q * (y - mean1) ** 2 + (1 - q) * (y - mean0) ** 2
            sigma = max(math.sqrt(float(np.mean(sq))), 1e-8)
        masked = ~revealed
        if masked.any():
            q[masked] = _posterior(y[masked], mean1[masked], mean0[masked], sigma)
        loglik_path.append(_observed_loglik(y, mean1, mean0, revealed, a, sigma))
        delta = max(
            float(np.max(np.abs(theta1_new - theta1))),
            float(np.max(np.abs(theta0_new - theta0))),
        )
        theta0, theta1 = theta0_new, theta1_new
        if n_iter > 1 and delta < tol:
            converged = True
            break
    return WorkingModelFit(
        built=built,
        theta0=theta0,
        theta1=theta1,
        q_hat=q,
        n_iter=n_iter,
        converged=converged,
        sigma=sigma,
        loglik_path=tuple(loglik_path),
    )


def _m_step(m: np.ndarray, y: np.ndarray, w: np.ndarray, arm: str, design: DesignSpec) -> np.ndarray:
    if float(np.sum(w)) < 1e-8:
        warnings.warn(
            f"all posterior weights for the {arm} arm are near zero; "
            "falling back to a pooled fit",
            RuntimeWarning,
            stacklevel=3,
        )
        w = None
    try:
        return fit_regression(m, y, design.estimator, design.huber_c, weights=w)
    except DegenerateDesignError:
        # few effective observations in this arm: stabilize with a tiny ridge
        ww = np.ones(len(y)) if w is None else np.clip(w, 0.0, None)
        gram = m.T @ (m * ww[:, None])
        lam = 1e-8 * max(float(np.trace(gram)) / m.shape[1], 1.0)
        return np.linalg.solve(gram + lam * np.eye(m.shape[1]), m.T @ (ww * y))


# -- residual and assignment-aware models --------------------------------------


def fit_residuals(dataset: Dataset, design: DesignSpec) -> np.ndarray:
    """Residuals of regressing the outcome on covariates only (no
    assignment), with the design's estimator."""
    y, x = dataset.y, dataset.x
    built = build_design(design, x)
    m = built.transform(x)
    if len(y) <= built.dim:
        raise DegenerateDesignError(
            f"need more than {built.dim} subjects to fit a {built.dim}-column design"
        )
    coef = fit_regression(m, y, design.estimator, design.huber_c)
    return y - m @ coef


def predict_outcome(fit, x: np.ndarray, a: int) -> np.ndarray:
    """Prediction under the given (possibly counterfactual) assignment."""
    return fit.predict(x, a)


@dataclass(frozen=True)
class AssignmentRegression:
    """Linear model of a response on covariates, the assignment, and
    assignment-by-covariate interactions, so heterogeneous shifts between
    arms are representable."""

    built: BuiltDesign
    coef: np.ndarray

    def _matrix(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        m = self.built.transform(np.atleast_2d(x))
        a = np.broadcast_to(np.asarray(a, dtype=float), (m.shape[0],))
        return np.column_stack([m, a, m[:, 1:] * a[:, None]])

    def predict(self, x: np.ndarray, a) -> np.ndarray:
        return self._matrix(x, a) @ self.coef


def fit_assignment_regression(
    x: np.ndarray,
    a: np.ndarray,
    response: np.ndarray,
    design: DesignSpec,
) -> AssignmentRegression:
    """Fit ``response ~ design(x) + a + a:design(x)`` with the design's
    estimator (binary assignments)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    built = build_design(design, x)
    m = built.transform(x)
    a = np.asarray(a, dtype=float)
    full = np.column_stack([m, a, m[:, 1:] * a[:, None]])
    coef = fit_regression(full, np.asarray(response, dtype=float), design.estimator, design.huber_c)
    return AssignmentRegression(built=built, coef=coef)


class KNRegressor:
    """Per-arm k-nearest-neighbour response predictor.

    One KD-tree per assignment arm; a prediction under assignment ``a``
    averages the response of the ``k`` nearest training points in that arm.
    Predictions at a training point under its own true assignment exclude
    the point itself (leave-one-out), so the model cannot trivially match
    its own noise.
    """

    def __init__(self, x: np.ndarray, a: np.ndarray, response: np.ndarray, k: int = 15):
        self.x = np.atleast_2d(np.asarray(x, dtype=float))
        self.a = np.asarray(a, dtype=int)
        self.response = np.asarray(response, dtype=float)
        self.k = int(k)
        self._arms: dict[int, tuple[cKDTree, np.ndarray, np.ndarray]] = {}
        for level in np.unique(self.a):
            idx = np.flatnonzero(self.a == level)
            self._arms[int(level)] = (cKDTree(self.x[idx]), self.response[idx], idx)

    def _query(self, tree: cKDTree, values: np.ndarray, xq: np.ndarray, k: int,
               exclude_local: np.ndarray | None = None) -> np.ndarray:
        xq = np.atleast_2d(xq)
        k_eff = min(k + (1 if exclude_local is not None else 0), len(values))
        _, nbr = tree.query(xq, k=k_eff)
        nbr = np.asarray(nbr).reshape(len(xq), k_eff)
        vals = values[nbr]
        if exclude_local is not None and k_eff > 1:
            # mask the query point itself; when it is absent among the
            # k_eff neighbours, drop the extra farthest column instead
            weights = (nbr != exclude_local[:, None]).astype(float)
            extra = weights.sum(axis=1) > min(k, k_eff - 1)
            weights[extra, -1] = 0.0
            return (vals * weights).sum(axis=1) / weights.sum(axis=1)
        return vals.mean(axis=1)

    def predict(self, xq: np.ndarray, a: int) -> np.ndarray:
        """Predicted response at rows ``xq`` under assignment ``a``."""
        tree, values, _ = self._arms[int(a)]
        return self._query(tree, values, np.atleast_2d(xq), self.k)

    def predict_training(self, true_assignment: bool = True) -> np.ndarray:
        """Predictions at every training point under its own assignment
        (leave-one-out) or under the flipped assignment of a binary design."""
        out = np.empty(len(self.response))
        for level, (tree, values, idx) in self._arms.items():
            if true_assignment:
                local = np.arange(len(idx))
                out[idx] = self._query(tree, values, self.x[idx], self.k, exclude_local=local)
            else:
                other = 1 - level
                tree_o, values_o, _ = self._arms[int(other)]
                out[idx] = self._query(tree_o, values_o, self.x[idx], self.k)
        return out


def fit_knn_model(x: np.ndarray, a: np.ndarray, response: np.ndarray, k: int = 15) -> KNRegressor:
    """Convenience constructor mirroring :func:`fit_assignment_regression`."""
    return KNRegressor(x, a, response, k=k)
