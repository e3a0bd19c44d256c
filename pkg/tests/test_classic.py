"""Classic tests: permutation framework, rank statistics, E-statistics, CATE."""

import itertools
import math

import numpy as np
import pytest
from scipy.stats import rankdata

from rankbet.classic import (
    EStatModels,
    EStatVariant,
    compute_e_stats,
    covadj_wilcoxon,
    covadj_wilcoxon_test,
    friedman_permutation_test,
    friedman_stat,
    kruskal_wallis_stat,
    linear_cate_test,
    permutation_test,
    signed_rank_stat,
    signed_rank_test,
)
from rankbet.data import BlockRecord, Dataset
from rankbet.errors import ConfigError, InvalidRandomizationError
from rankbet.models import DesignSpec
from rankbet.rng import stream_rng

from conftest import coin_dataset, make_dataset

CONST = DesignSpec(base_features=())


def treated_rank_sum(ds, a_vec):
    ranks = rankdata(ds.y)
    return float(np.sum(ranks[np.asarray(a_vec) == 1]))


class TestPermutationFramework:
    def test_exhaustive_matches_enumeration_oracle(self, rng):
        n = 6
        y = rng.standard_normal(n)
        a = np.array([1, 1, 1, 0, 0, 0])
        ds = make_dataset(y, a)
        res = permutation_test(treated_rank_sum, ds, alpha=0.05)
        assert res.exhaustive and res.b == math.factorial(n)

        # independent oracle: enumerate all relabelings directly
        ranks = rankdata(y)
        observed = float(np.sum(ranks[a == 1]))
        count = 0
        total = 0
        for perm in itertools.permutations(a.tolist()):
            total += 1
            count += float(np.sum(ranks[np.array(perm) == 1])) >= observed - 1e-12
        assert res.p_value == pytest.approx(count / total)
        assert res.observed == pytest.approx(observed)

    def test_first_replicate_is_observed(self, rng):
        ds = coin_dataset(30, rng)
        res = permutation_test(treated_rank_sum, ds, b=50, rng=rng)
        assert res.permuted[0] == res.observed
        assert res.p_value >= 1.0 / res.b

    def test_constant_statistic_degenerates_to_p_one(self, rng):
        ds = coin_dataset(25, rng)
        res = permutation_test(lambda d, a: 3.14, ds, b=40, rng=rng)
        assert res.p_value == 1.0
        assert not res.reject

    def test_granularity_is_one_over_b(self, rng):
        ds = coin_dataset(30, rng)
        res = permutation_test(treated_rank_sum, ds, b=200, rng=rng)
        assert (res.p_value * 200) == pytest.approx(round(res.p_value * 200))

    def test_small_b_refused(self, rng):
        ds = coin_dataset(30, rng)
        with pytest.raises(ConfigError):
            permutation_test(treated_rank_sum, ds, b=10, rng=rng)

    def test_superuniform_under_null(self):
        # empirical P(p <= u) must stay below u + 3 * MC standard error
        reps = 1000
        hits = {0.01: 0, 0.05: 0, 0.1: 0}
        for r in range(reps):
            rng = stream_rng(777, r)
            ds = coin_dataset(24, rng)
            res = covadj_wilcoxon_test(ds, CONST, b=100, rng=rng, exhaustive=False)
            for u in hits:
                hits[u] += res.p_value <= u
        for u, count in hits.items():
            assert count / reps <= u + 3 * math.sqrt(u * (1 - u) / reps)


class TestCovAdjWilcoxon:
    def test_hand_countable_ranks(self):
        # treated subjects hold the two largest residuals of four
        ds = make_dataset([1.0, 2.0, 3.0, 4.0], [0, 0, 1, 1])
        w = covadj_wilcoxon(ds, CONST)
        assert w == pytest.approx((3 + 4) - (1 + 2))

    def test_all_same_assignment_gives_max_magnitude(self):
        n = 6
        ds = make_dataset(np.arange(n, dtype=float), [1] * n)
        assert abs(covadj_wilcoxon(ds, CONST)) == n * (n + 1) / 2

    def test_matches_naive_quadratic_rank_oracle(self, rng):
        n = 19
        y = rng.standard_normal(n)
        a = (rng.random(n) < 0.5).astype(int)
        ds = make_dataset(y, a)
        resid = y - y.mean()
        # O(n^2) average-rank oracle
        ranks = np.array(
            [
                np.sum(resid < v) + 1 + (np.sum(resid == v) - 1) / 2.0
                for v in resid
            ]
        )
        expected = float(np.sum((2 * a - 1) * ranks))
        assert covadj_wilcoxon(ds, CONST) == pytest.approx(expected)

    def test_invariant_to_monotone_transform_of_residual_ranks(self, rng):
        # the statistic depends on residuals only through their ranks
        n = 15
        y = rng.standard_normal(n)
        a = (rng.random(n) < 0.5).astype(int)
        resid = y - y.mean()
        w1 = float(np.sum((2 * a - 1) * rankdata(resid)))
        w2 = float(np.sum((2 * a - 1) * rankdata(np.exp(resid) + resid**3)))
        assert w1 == pytest.approx(w2)


class _LinearModel:
    """Hand-specified prediction rule r_hat(x, a) = c0 + c1*x1 + c2*a."""

    def __init__(self, c0, c1, c2):
        self.c = (c0, c1, c2)

    def predict(self, x, a):
        x = np.atleast_2d(x)
        a = np.broadcast_to(np.asarray(a, dtype=float), (x.shape[0],))
        return self.c[0] + self.c[1] * x[:, 0] + self.c[2] * a


class TestEStats:
    def fixture(self):
        rng = stream_rng(99, 0)
        n = 10
        x = rng.standard_normal((n, 1))
        a = np.array([1, 0] * 5)
        y = 0.5 * x[:, 0] + a + rng.standard_normal(n)
        ds = Dataset.from_arrays(y, a, x, mu=0.5)
        r = y - y.mean()
        return ds, r

    def test_zero_predictor_collapses_to_r_of_x(self):
        ds, r = self.fixture()
        models = EStatModels(residuals=r, residual_model=_LinearModel(0, 0, 0))
        via_rhat = compute_e_stats(EStatVariant.R_MINUS_RHAT_FALSE_A, ds, models)
        plain = compute_e_stats(EStatVariant.R_OF_X, ds, EStatModels(residuals=r))
        assert np.allclose(via_rhat, plain)

    def test_perfect_residual_model_gives_nonnegative_diff(self):
        ds, r = self.fixture()

        class Perfect:
            def predict(self_inner, x, a):
                a = np.broadcast_to(np.asarray(a, dtype=float), (len(r),))
                # exactly reproduces r under the true assignment
                return np.where(a == ds.a, r, r + 1.0)

        models = EStatModels(residuals=r, residual_model=Perfect())
        diff = compute_e_stats(EStatVariant.DIFF_IN_PRED_ERROR, ds, models)
        assert np.all(diff >= 0)

    def test_all_variants_match_direct_evaluation_oracle(self):
        ds, r = self.fixture()
        y, x, a = ds.y, ds.x, ds.a
        sign = 2 * a - 1
        rhat = _LinearModel(0.2, 0.7, 1.1)
        yhat = _LinearModel(1.0, 0.5, 0.8)
        models = EStatModels(residuals=r, outcome_model=yhat, residual_model=rhat)

        rhat_true = 0.2 + 0.7 * x[:, 0] + 1.1 * a
        rhat_false = 0.2 + 0.7 * x[:, 0] + 1.1 * (1 - a)
        yhat_false = 1.0 + 0.5 * x[:, 0] + 0.8 * (1 - a)
        diff = np.abs(rhat_false - r) - np.abs(rhat_true - r)
        s1 = sign * (r - rhat_false) >= 0
        s2 = sign * (rhat_true - rhat_false) >= 0
        s = (s1 | s2).astype(float)
        expect = {
            EStatVariant.R_OF_X: sign * r,
            EStatVariant.R_OF_X_FALSE_A: sign * (y - yhat_false),
            EStatVariant.R_MINUS_RHAT_FALSE_A: sign * (r - rhat_false),
            EStatVariant.DIFF_IN_PRED_ERROR: diff,
            EStatVariant.SIGNED_DIFF_IN_PRED_ERROR: (2 * s - 1) * diff,
        }
        for variant, want in expect.items():
            got = compute_e_stats(variant, ds, models)
            assert np.allclose(got, want, atol=1e-9), variant

    def test_missing_fit_is_config_error(self):
        ds, r = self.fixture()
        with pytest.raises(ConfigError):
            compute_e_stats(EStatVariant.DIFF_IN_PRED_ERROR, ds, EStatModels(residuals=r))
        with pytest.raises(ConfigError):
            compute_e_stats(EStatVariant.R_OF_X_FALSE_A, ds, EStatModels(residuals=r))

    def test_signed_rank_stat_drops_zeros(self):
        assert signed_rank_stat(np.array([0.0, 1.0, -2.0])) == pytest.approx(
            rankdata([0.0, 1.0, 2.0])[1] - rankdata([0.0, 1.0, 2.0])[2]
        )

    def test_diff_variant_invariant_to_effect_sign_flip(self):
        # symmetric fixture: flipping the sign of outcomes (and residuals)
        # leaves the diff-in-prediction-error statistic unchanged
        rng = stream_rng(5, 1)
        n = 40
        x = rng.standard_normal((n, 1))
        a = (rng.random(n) < 0.5).astype(int)
        y = 2.0 * a * x[:, 0] + rng.standard_normal(n) * 0.1
        for flip in (1.0, -1.0):
            ds = Dataset.from_arrays(flip * y, a, x, mu=0.5)
            res = signed_rank_test(ds, EStatVariant.DIFF_IN_PRED_ERROR, model="knn",
                                   k=5, b=60, rng=stream_rng(6, 2), exhaustive=False)
            if flip == 1.0:
                first = res.observed
            else:
                assert res.observed == pytest.approx(first, rel=0.2)


class TestLinearCate:
    def test_zero_numerator_never_rejects(self, rng):
        n = 60
        x = rng.standard_normal((n, 3))
        a = (rng.random(n) < 0.5).astype(int)
        # outcome an exact linear function of the expanded covariates
        y = 1.0 + x @ np.array([0.5, -1.0, 2.0]) + 0.3 * x[:, 0] * x[:, 1]
        ds = make_dataset(y, a, x=x)
        res = linear_cate_test(ds)
        assert res.statistic == pytest.approx(0.0, abs=1e-12)
        assert not res.reject

    def test_requires_half_probability(self, rng):
        ds = coin_dataset(30, rng, mu=0.3)
        with pytest.raises(InvalidRandomizationError):
            linear_cate_test(ds)

    def test_strong_effect_detected(self, rng):
        n = 300
        x = rng.standard_normal((n, 3))
        a = (rng.random(n) < 0.5).astype(int)
        y = x @ np.array([1.0, 1.0, 1.0]) + 4.0 * x[:, 2] * a + rng.standard_normal(n)
        ds = make_dataset(y, a, x=x)
        res = linear_cate_test(ds)
        assert res.reject
        assert res.df == 7  # intercept + 3 covariates + 3 interactions


class TestKruskalWallis:
    def test_identical_group_multisets_give_zero(self):
        ds = make_dataset([1.0, 2.0, 3.0, 1.0, 2.0, 3.0], [1, 1, 1, 2, 2, 2],
                          support=(1, 2), mu=1.5)
        assert kruskal_wallis_stat(ds) == pytest.approx(0.0)

    def test_three_separated_groups_match_direct_formula(self):
        y = [1.0, 2.0, 10.0, 11.0, 20.0, 21.0]
        a = [1, 1, 2, 2, 3, 3]
        ds = make_dataset(y, a, support=(1, 2, 3), mu=2.0)
        # direct evaluation oracle
        ranks = rankdata(y)
        grand = ranks.mean()
        num = sum(
            2 * (ranks[np.array(a) == lvl].mean() - grand) ** 2 for lvl in (1, 2, 3)
        )
        den = float(np.sum((ranks - grand) ** 2))
        assert kruskal_wallis_stat(ds) == pytest.approx(5 * num / den)

    def test_hand_evaluated_two_group_example(self):
        # one group holds both top ranks: H = 3*(2*1 + 2*1)/5 = 2.4
        ds = make_dataset([1.0, 2.0, 3.0, 4.0], [1, 1, 2, 2], support=(1, 2), mu=1.5)
        assert kruskal_wallis_stat(ds) == pytest.approx(2.4)

    def test_all_identical_outcomes_guarded(self):
        ds = make_dataset([5.0] * 6, [1, 1, 2, 2, 3, 3], support=(1, 2, 3), mu=2.0)
        assert kruskal_wallis_stat(ds) == 0.0


def block(bid, y, a):
    return BlockRecord(block_id=bid, y=tuple(y), a=tuple(a), x=((0.0,),) * len(y))


class TestFriedman:
    def test_constant_ranking_direct_evaluation(self):
        # treatment j always ranked j: F = (1-2)^2 + (2-2)^2 + (3-2)^2 = 2
        blocks = [block(i, (1.0, 2.0, 3.0), (1, 2, 3)) for i in range(7)]
        assert friedman_stat(blocks) == pytest.approx(2.0)

    def test_single_block_two_treatments_forced(self):
        b2 = BlockRecord(block_id=0, y=(1.0, 2.0), a=(1, 2), x=((0.0,), (0.0,)))
        assert friedman_stat([b2]) == pytest.approx(0.5)

    def test_mean_matches_enumeration_oracle(self):
        # E[F] over uniform within-block permutations is k * Var(rank) / n;
        # enumerate the 6 permutations of k = 3: Var(rank) = 2/3, so 2/n
        perms = list(itertools.permutations((1, 2, 3)))
        ranks_of_treatment1 = [p.index(1) + 1 for p in perms]
        var_rank = np.var(ranks_of_treatment1)
        assert var_rank == pytest.approx(2.0 / 3.0)
        n_blocks, reps = 100, 300
        expected = 3 * var_rank / n_blocks
        vals = []
        for r in range(reps):
            rng = stream_rng(31, r)
            blocks = [
                block(i, (1.0, 2.0, 3.0), tuple(int(v) for v in rng.permutation([1, 2, 3])))
                for i in range(n_blocks)
            ]
            vals.append(friedman_stat(blocks))
        se = np.std(vals) / math.sqrt(reps)
        assert abs(np.mean(vals) - expected) <= 3 * se

    def test_duplicate_treatment_rejected(self):
        with pytest.raises(Exception):
            block(0, (1.0, 2.0, 3.0), (1, 1, 3))

    def test_permutation_calibration_runs(self, rng):
        blocks = [
            block(i, tuple(rng.standard_normal(3)), tuple(int(v) for v in rng.permutation([1, 2, 3])))
            for i in range(20)
        ]
        res = friedman_permutation_test(blocks, b=60, rng=rng)
        assert 0.0 < res.p_value <= 1.0
