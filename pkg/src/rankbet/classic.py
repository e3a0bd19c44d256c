"""Baseline and comparison tests.

All of these are one-shot tests of the global null of no treatment effect.
The permutation framework calibrates any statistic of (data, assignment
vector) by recomputing it under uniformly random relabelings of the
assignments, which is exact because assignments are independent of
everything else under the null. On top of it sit the covariate-adjusted
Wilcoxon rank-sum, a family of signed-rank statistics built from
per-subject evidence scores, a chi-squared test of a linear CATE
parameter, and the Kruskal-Wallis / Friedman rank statistics for
multi-sample designs.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy.stats import chi2, rankdata

from .data import BlockRecord, Dataset
from .errors import ConfigError, InvalidRandomizationError
from .models import (
    DesignSpec,
    KNRegressor,
    build_design,
    fit_assignment_regression,
    fit_regression,
    fit_residuals,
)

__all__ = [
    "PermutationResult",
    "permutation_test",
    "covadj_wilcoxon",
    "covadj_wilcoxon_test",
    "EStatVariant",
    "EStatModels",
    "fit_e_stat_models",
    "compute_e_stats",
    "signed_rank_stat",
    "signed_rank_test",
    "CateResult",
    "linear_cate_test",
    "kruskal_wallis_stat",
    "friedman_stat",
    "friedman_permutation_test",
]

# Exhaustive permutation enumeration kicks in automatically below this many
# relabelings (n! <= 50,000, i.e. n <= 8).
EXHAUSTIVE_LIMIT = 50_000


@dataclass(frozen=True)
class PermutationResult:
    """Outcome of a permutation-calibrated test.

    ``permuted[0]`` is the observed statistic; ``p_value`` is the fraction
    of relabelings (observed included) at least as large, so it is never
    below ``1/B``.
    """

    observed: float
    permuted: np.ndarray
    p_value: float
    reject: bool
    exhaustive: bool

    @property
    def b(self) -> int:
        return len(self.permuted)


def permutation_test(
    statistic: Callable[[Dataset, np.ndarray], float],
    dataset: Dataset,
    b: int = 200,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
    exhaustive: bool | None = None,
) -> PermutationResult:
    """Calibrate ``statistic`` by permuting the assignment vector.

    The observed statistic is the first replicate; the remaining ``b - 1``
    come from uniformly random permutations of the assignments (exhaustive
    enumeration of all relabelings when the sample is small enough). The
    null is rejected when the observed value strictly exceeds the
    ``floor(alpha * B)``-th largest replicate. Permuting the assignment
    vector preserves its multiset, so fixed-sum designs need no special
    handling.
    """
    a_obs = dataset.a
    n = len(a_obs)
    if exhaustive is None:
        exhaustive = math.factorial(n) <= EXHAUSTIVE_LIMIT

    if exhaustive:
        values = [float(statistic(dataset, a_obs[list(p)])) for p in itertools.permutations(range(n))]
        values = np.asarray(values)
    else:
        if b < 20:
            raise ConfigError(f"need at least 20 permutations for a usable p-value, got b={b}")
        if rng is None:
            rng = np.random.default_rng(0)
        values = np.empty(b)
        values[0] = float(statistic(dataset, a_obs))
        for i in range(1, b):
            values[i] = float(statistic(dataset, rng.permutation(a_obs)))

    observed = float(values[0])
    b_total = len(values)
    p_value = float(np.sum(values >= observed - 1e-12) / b_total)
    j = int(alpha * b_total)
    if j >= 1:
        threshold = float(np.sort(values)[::-1][j - 1])
        reject = observed > threshold
    else:
        reject = False
    return PermutationResult(
        observed=observed, permuted=values, p_value=p_value, reject=reject, exhaustive=exhaustive
    )


# -- covariate-adjusted Wilcoxon ------------------------------------------------


def covadj_wilcoxon(
    dataset: Dataset,
    design: DesignSpec,
    assignments: np.ndarray | None = None,
    residuals: np.ndarray | None = None,
) -> float:
    """Signed rank-sum of covariate-regression residuals:
    ``sum (2a - 1) * rank(residual)`` with average-rank tie handling."""
    if residuals is None:
        residuals = fit_residuals(dataset, design)
    a = dataset.a if assignments is None else np.asarray(assignments)
    ranks = rankdata(residuals)
    return float(np.sum((2 * a - 1) * ranks))


def covadj_wilcoxon_test(
    dataset: Dataset,
    design: DesignSpec,
    b: int = 200,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
    exhaustive: bool | None = None,
) -> PermutationResult:
    """Permutation-calibrated covariate-adjusted Wilcoxon test.

    The residuals do not involve the assignments, so their ranks are
    computed once and each relabeling only re-signs them.
    """
    ranks = rankdata(fit_residuals(dataset, design))

    def stat(_ds: Dataset, a_vec: np.ndarray) -> float:
        return float(np.sum((2 * a_vec - 1) * ranks))

    return permutation_test(stat, dataset, b=b, alpha=alpha, rng=rng, exhaustive=exhaustive)


# -- signed-rank statistics from per-subject evidence scores --------------------


class EStatVariant(str, Enum):
    """Per-subject evidence score variants.

    ``R_OF_X`` signs the covariate-only residual by the assignment;
    ``R_OF_X_FALSE_A`` uses the error of predicting the outcome under the
    flipped assignment; ``R_MINUS_RHAT_FALSE_A`` does the same after first
    denoising the outcome into residuals; ``DIFF_IN_PRED_ERROR`` compares
    prediction errors under the flipped and true assignments (sensitive to
    effects of both signs); the ``SIGNED_`` variant multiplies that
    difference by an estimated effect direction.
    """

    R_OF_X = "r_of_x"
    R_OF_X_FALSE_A = "r_of_x_false_a"
    R_MINUS_RHAT_FALSE_A = "r_minus_rhat_false_a"
    DIFF_IN_PRED_ERROR = "diff_in_pred_error"
    SIGNED_DIFF_IN_PRED_ERROR = "signed_diff_in_pred_error"


@dataclass
class EStatModels:
    """Fitted inputs for :func:`compute_e_stats`.

    ``residuals`` comes from an assignment-free model of the outcome;
    ``outcome_model`` predicts the outcome from (covariates, assignment);
    ``residual_model`` predicts the residual from (covariates, assignment).
    Only the pieces a variant actually uses need to be present.
    """

    residuals: np.ndarray | None = None
    outcome_model: object | None = None
    residual_model: object | None = None


def _true_false_predictions(model, x: np.ndarray, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(model, KNRegressor):
        return model.predict_training(True), model.predict_training(False)
    return model.predict(x, a), model.predict(x, 1 - a)


def compute_e_stats(
    variant: EStatVariant,
    dataset: Dataset,
    models: EStatModels,
    assignments: np.ndarray | None = None,
) -> np.ndarray:
    """Per-subject evidence scores for the chosen variant.

    ``assignments`` must be the vector the models were fitted against
    (defaults to the observed assignments).
    """
    variant = EStatVariant(variant)
    a = dataset.a if assignments is None else np.asarray(assignments)
    sign = 2 * a - 1
    x, y = dataset.x, dataset.y

    if variant is EStatVariant.R_OF_X:
        if models.residuals is None:
            raise ConfigError("variant r_of_x needs a residual fit")
        return sign * models.residuals

    if variant is EStatVariant.R_OF_X_FALSE_A:
        if models.outcome_model is None:
            raise ConfigError("variant r_of_x_false_a needs an outcome model on (x, a)")
        _, yhat_false = _true_false_predictions(models.outcome_model, x, a)
        return sign * (y - yhat_false)

    if models.residuals is None or models.residual_model is None:
        raise ConfigError(f"variant {variant.value} needs a residual fit and a residual model")
    r = models.residuals
    rhat_true, rhat_false = _true_false_predictions(models.residual_model, x, a)

    if variant is EStatVariant.R_MINUS_RHAT_FALSE_A:
        return sign * (r - rhat_false)
    diff = np.abs(rhat_false - r) - np.abs(rhat_true - r)
    if variant is EStatVariant.DIFF_IN_PRED_ERROR:
        return diff
    s1 = sign * (r - rhat_false) >= 0
    s2 = sign * (rhat_true - rhat_false) >= 0
    s = (s1 | s2).astype(float)
    return (2 * s - 1) * diff


def signed_rank_stat(e: np.ndarray) -> float:
    """``sum sign(e_i) * rank(|e_i|)`` with average-rank ties."""
    e = np.asarray(e, dtype=float)
    return float(np.sum(np.sign(e) * rankdata(np.abs(e))))


def fit_e_stat_models(
    dataset: Dataset,
    variant: EStatVariant,
    assignments: np.ndarray | None = None,
    model: str = "knn",
    residual_fit: str = "linear",
    design: DesignSpec | None = None,
    k: int = 15,
    residuals: np.ndarray | None = None,
) -> EStatModels:
    """Fit the model pieces a variant needs.

    ``model`` selects the (covariates, assignment) learner: ``"knn"`` for
    per-arm nearest-neighbour averaging (flexible, captures nonlinear
    heterogeneous effects) or ``"linear"`` for a linear model with
    assignment interactions. ``residual_fit`` independently selects the
    assignment-free outcome model behind the residuals: the design
    regression (default) or leave-one-out pooled k-NN.
    """
    variant = EStatVariant(variant)
    a = dataset.a if assignments is None else np.asarray(assignments)
    x, y = dataset.x, dataset.y
    if design is None:
        design = DesignSpec(interactions=True)

    if residuals is None:
        if residual_fit == "knn":
            pooled = KNRegressor(x, np.zeros(len(y), dtype=int), y, k=k)
            residuals = y - pooled.predict_training(True)
        else:
            residuals = fit_residuals(dataset, design)

    models = EStatModels(residuals=residuals)
    needs_outcome = variant is EStatVariant.R_OF_X_FALSE_A
    needs_residual_model = variant in (
        EStatVariant.R_MINUS_RHAT_FALSE_A,
        EStatVariant.DIFF_IN_PRED_ERROR,
        EStatVariant.SIGNED_DIFF_IN_PRED_ERROR,
    )
    if needs_outcome:
        models.outcome_model = (
            KNRegressor(x, a, y, k=k)
            if model == "knn"
            else fit_assignment_regression(x, a, y, design)
        )
    if needs_residual_model:
        models.residual_model = (
            KNRegressor(x, a, residuals, k=k)
            if model == "knn"
            else fit_assignment_regression(x, a, residuals, design)
        )
    return models


def signed_rank_test(
    dataset: Dataset,
    variant: EStatVariant,
    model: str = "knn",
    residual_fit: str = "linear",
    design: DesignSpec | None = None,
    k: int = 15,
    b: int = 200,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
    exhaustive: bool | None = None,
) -> PermutationResult:
    """Permutation-calibrated signed-rank test for an evidence-score variant.

    The assignment-free residual fit is computed once; any model that takes
    the assignment as input is refit from scratch inside every permutation,
    so each replicate applies the identical pipeline to the relabeled data.
    """
    variant = EStatVariant(variant)
    if design is None:
        design = DesignSpec(interactions=True)
    if residual_fit == "knn":
        pooled = KNRegressor(dataset.x, np.zeros(len(dataset), dtype=int), dataset.y, k=k)
        residuals = dataset.y - pooled.predict_training(True)
    else:
        residuals = fit_residuals(dataset, design)

    def stat(ds: Dataset, a_vec: np.ndarray) -> float:
        models = fit_e_stat_models(
            ds, variant, assignments=a_vec, model=model, design=design, k=k, residuals=residuals
        )
        return signed_rank_stat(compute_e_stats(variant, ds, models, assignments=a_vec))

    return permutation_test(stat, dataset, b=b, alpha=alpha, rng=rng, exhaustive=exhaustive)


# -- linear-CATE chi-squared test ------------------------------------------------


@dataclass(frozen=True)
class CateResult:
    statistic: float
    df: int
    p_value: float
    reject: bool
    rank_deficient: bool


def linear_cate_test(
    dataset: Dataset,
    alpha: float = 0.05,
    design: DesignSpec | None = None,
) -> CateResult:
    """Chi-squared test that a linear CATE parameter vector is zero.

    The expanded covariates (intercept, covariates, pairwise interactions)
    are regressed out of the outcome without the assignment; the moment
    vector ``b_i = (a_i - 1/2) * residual_i * x'_i`` has mean zero under
    the null, and the quadratic form of its standardized sample average is
    asymptotically chi-squared with ``dim(x')`` degrees of freedom. The
    centering hard-codes treatment probability 1/2, so other designs are
    refused.
    """
    if not dataset.is_binary:
        raise InvalidRandomizationError("linear-CATE test requires a binary design")
    if not np.allclose(dataset.mu, 0.5):
        raise InvalidRandomizationError(
            "linear-CATE test requires treatment probability 1/2 for every subject"
        )
    if design is None:
        design = DesignSpec(interactions=True, estimator="least-squares")
    x, y, a = dataset.x, dataset.y, dataset.a
    built = build_design(design, x)
    xp = built.transform(x)
    beta = fit_regression(xp, y, design.estimator, design.huber_c)
    resid = y - xp @ beta
    b_rows = (a - 0.5)[:, None] * resid[:, None] * xp
    n, p = b_rows.shape
    b_bar = b_rows.mean(axis=0)
    cov = np.cov(b_rows.T, ddof=1).reshape(p, p)

    scale = max(1.0, float(np.max(np.abs(y))))
    if float(np.max(np.abs(b_rows))) < 1e-9 * scale:
        # outcome explained by the covariates alone: the moment vector is
        # identically zero and the quadratic form is 0/0 — report S = 0
        return CateResult(statistic=0.0, df=p, p_value=1.0, reject=False, rank_deficient=False)

    rank_deficient = False
    if np.linalg.cond(cov) > 1e12:
        warnings.warn(
            "covariance of the CATE moment vector is ill-conditioned; using a pseudo-inverse",
            RuntimeWarning,
            stacklevel=2,
        )
        cov_inv = np.linalg.pinv(cov)
        rank_deficient = np.linalg.matrix_rank(cov) < p
    else:
        cov_inv = np.linalg.inv(cov)
    statistic = float(n * b_bar @ cov_inv @ b_bar)
    p_value = float(chi2.sf(statistic, df=p))
    reject = (not rank_deficient) and statistic > float(chi2.ppf(1.0 - alpha, df=p))
    return CateResult(
        statistic=statistic, df=p, p_value=p_value, reject=reject, rank_deficient=rank_deficient
    )


# -- multi-sample rank statistics -------------------------------------------------


def kruskal_wallis_stat(dataset: Dataset, assignments: np.ndarray | None = None) -> float:
    """Kruskal-Wallis H: between-group variation of mean ranks relative to
    total rank variation, with average-rank ties. Returns 0 when all
    outcomes are identical."""
    a = dataset.a if assignments is None else np.asarray(assignments)
    ranks = rankdata(dataset.y)
    n = len(ranks)
    grand = ranks.mean()
    denom = float(np.sum((ranks - grand) ** 2))
    if denom == 0.0:
        return 0.0
    num = 0.0
    for level in np.unique(a):
        group = ranks[a == level]
        if len(group) == 0:
            continue
        num += len(group) * (group.mean() - grand) ** 2
    return float((n - 1) * num / denom)


def friedman_stat(blocks: Sequence[BlockRecord]) -> float:
    """Friedman statistic: squared deviations of per-treatment mean
    within-block ranks from their null expectation ``(k + 1) / 2``."""
    if not blocks:
        raise ValueError("need at least one block")
    k = len(blocks[0].y)
    totals = np.zeros(k)
    for block in blocks:
        if len(block.y) != k:
            raise ValueError(f"block {block.block_id} has {len(block.y)} subjects, expected {k}")
        ranks = rankdata(block.y)
        for rank, a in zip(ranks, block.a):
            totals[a - 1] += rank
    mean_ranks = totals / len(blocks)
    return float(np.sum((mean_ranks - (1 + k) / 2.0) ** 2))


def friedman_permutation_test(
    blocks: Sequence[BlockRecord],
    b: int = 200,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
) -> PermutationResult:
    """Calibrate the Friedman statistic by re-randomizing treatments within
    blocks, which is exactly the block design's randomization under the
    null."""
    if rng is None:
        rng = np.random.default_rng(0)
    if b < 20:
        raise ConfigError(f"need at least 20 permutations, got b={b}")
    k = len(blocks[0].y)
    values = np.empty(b)
    values[0] = friedman_stat(blocks)
    for i in range(1, b):
        shuffled = [
            BlockRecord(
                block_id=bl.block_id,
                y=bl.y,
                a=tuple(int(v) for v in rng.permutation(np.arange(1, k + 1))),
                x=bl.x,
            )
            for bl in blocks
        ]
        values[i] = friedman_stat(shuffled)
    observed = float(values[0])
    p_value = float(np.sum(values >= observed - 1e-12) / b)
    j = int(alpha * b)
    reject = j >= 1 and observed > float(np.sort(values)[::-1][j - 1])
    return PermutationResult(
        observed=observed, permuted=values, p_value=p_value, reject=reject, exhaustive=False
    )
