"""Working models: EM posteriors, residual fits, robust regression, prediction."""

import math

import numpy as np
import pytest

from rankbet.data import Dataset
from rankbet.errors import ConfigError, DegenerateDesignError
from rankbet.models import (
    DesignSpec,
    build_design,
    fit_assignment_regression,
    fit_em,
    fit_regression,
    fit_residuals,
    predict_outcome,
    KNRegressor,
)
from rankbet.rng import stream_rng

from conftest import make_dataset

CONST = DesignSpec(base_features=())  # intercept only
LINEAR = DesignSpec()  # intercept + all covariates


def em_fixture_12():
    """12 subjects, 1 covariate, two arms separated by ~2 with 4 revealed."""
    rng = stream_rng(2024, 0)
    x = rng.standard_normal(12).reshape(-1, 1)
    a = np.array([1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0])
    y = 2.0 * a + 0.3 * x[:, 0] + rng.standard_normal(12) * 0.8
    ds = Dataset.from_arrays(y, a, x, mu=0.5)
    revealed = [0, 1, 2, 3]
    return ds, revealed


def observed_loglik_const(ds, revealed, theta0, theta1):
    """Independent evaluation of the observed-data log-likelihood for
    intercept-only arm means and unit noise scale."""
    total = 0.0
    rev = set(revealed)
    for s in ds:
        l1 = -0.5 * math.log(2 * math.pi) - 0.5 * (s.y - theta1) ** 2
        l0 = -0.5 * math.log(2 * math.pi) - 0.5 * (s.y - theta0) ** 2
        if s.id in rev:
            total += l1 if s.a == 1 else l0
        else:
            total += math.log(0.5 * math.exp(l1) + 0.5 * math.exp(l0))
    return total


class TestFitEM:
    def test_symmetric_fixed_point_gives_half(self, rng):
        # flat initialization is the symmetric fixed point: theta0 == theta1
        # after the first M-step, and the E-step returns exactly 1/2
        n = 30
        ds = make_dataset(rng.standard_normal(n), (rng.random(n) < 0.5).astype(int),
                          x=rng.standard_normal((n, 2)))
        fit = fit_em(ds, [], LINEAR, init_q=np.full(n, 0.5))
        assert np.allclose(fit.theta0, fit.theta1)
        assert np.max(np.abs(fit.q_hat - 0.5)) < 1e-6

    def test_separated_clusters_confident_posteriors(self, rng):
        n = 40
        a = (rng.random(n) < 0.5).astype(int)
        y = np.where(a == 1, 10.0, -10.0) + rng.standard_normal(n) * 0.5
        ds = make_dataset(y, a, x=np.zeros((n, 1)))
        fit = fit_em(ds, [0, 1, 2, 3], CONST)
        masked = [i for i in range(n) if i > 3]
        for i in masked:
            if y[i] > 0:
                assert fit.q_hat[i] > 0.999
            else:
                assert fit.q_hat[i] < 0.001

    def test_em_matches_grid_search_oracle(self):
        # brute-force the observed-data likelihood over a 0.01-step grid in
        # (theta0, theta1) and compare with the EM fixed point
        ds, revealed = em_fixture_12()
        fit = fit_em(ds, revealed, CONST, max_iter=500, tol=1e-10)
        grid = np.arange(-1.5, 3.5, 0.01)
        best, best_ll = None, -np.inf
        for t0 in grid:
            for t1 in grid:
                ll = observed_loglik_const(ds, revealed, t0, t1)
                if ll > best_ll:
                    best, best_ll = (t0, t1), ll
        assert abs(fit.theta0[0] - best[0]) <= 0.02
        assert abs(fit.theta1[0] - best[1]) <= 0.02

    def test_loglik_nondecreasing(self):
        ds, revealed = em_fixture_12()
        fit = fit_em(ds, revealed, DesignSpec(), max_iter=200)
        path = np.array(fit.loglik_path)
        assert np.all(np.diff(path) >= -1e-9)

    def test_revealed_posteriors_pinned(self):
        ds, revealed = em_fixture_12()
        fit = fit_em(ds, revealed, LINEAR)
        for sid in revealed:
            assert fit.q_hat[sid] == float(ds[sid].a)

    def test_label_symmetry(self, rng):
        # swapping the initial posteriors mirrors the posterior labels on
        # fully masked (symmetric-role) data
        n = 24
        y = np.concatenate([rng.standard_normal(12) - 2, rng.standard_normal(12) + 2])
        ds = make_dataset(y, [0, 1] * 12)
        init = np.clip(0.5 + 0.1 * np.sign(y), 0.01, 0.99)
        up = fit_em(ds, [], CONST, init_q=init)
        down = fit_em(ds, [], CONST, init_q=1.0 - init)
        assert np.allclose(up.q_hat, 1.0 - down.q_hat, atol=1e-6)
        assert np.allclose(up.theta1, down.theta0, atol=1e-6)

    def test_arm_collapse_warns_and_falls_back(self):
        ds = make_dataset([1.0, 2.0, 3.0, 4.0], [0, 0, 0, 0])
        with pytest.warns(RuntimeWarning, match="pooled"):
            fit_em(ds, ds.ids, CONST)

    def test_cold_start_without_revealed_arms(self, rng):
        n = 20
        ds = make_dataset(rng.standard_normal(n), [1] * n)
        fit = fit_em(ds, [], CONST)  # no revealed subjects at all
        assert fit.n_iter >= 1
        assert np.all((fit.q_hat >= 0) & (fit.q_hat <= 1))


class TestFitResiduals:
    def test_perfect_linear_fit(self, rng):
        x = rng.standard_normal((25, 2))
        y = 1.5 + 2.0 * x[:, 0] - x[:, 1]
        ds = make_dataset(y, (rng.random(25) < 0.5).astype(int), x=x)
        assert np.max(np.abs(fit_residuals(ds, LINEAR))) < 1e-9

    def test_constant_design_centers(self, rng):
        y = rng.standard_normal(15)
        ds = make_dataset(y, (rng.random(15) < 0.5).astype(int))
        r = fit_residuals(ds, CONST)
        assert np.allclose(r, y - y.mean())

    def test_huber_vs_direct_irls_oracle(self, rng):
        n = 50
        x = rng.standard_normal((n, 1))
        y = 1.0 + 0.5 * x[:, 0] + rng.standard_normal(n) * 0.3
        y[7] += 40.0  # one gross outlier
        ds = make_dataset(y, (rng.random(n) < 0.5).astype(int), x=x)
        huber = fit_residuals(ds, DesignSpec(estimator="huber-robust"))
        ls = fit_residuals(ds, LINEAR)
        assert abs(huber[7]) > abs(ls[7])
        others = np.delete(np.arange(n), 7)
        assert np.sqrt(np.mean(huber[others] ** 2)) < np.sqrt(np.mean(ls[others] ** 2))

        # independent scalar-loop IRLS oracle, iterated to 1e-10
        m = np.column_stack([np.ones(n), x[:, 0]])
        coef = np.linalg.lstsq(m, y, rcond=None)[0]
        for _ in range(500):
            r = y - m @ coef
            scale = np.median(np.abs(r)) / 0.6745
            w = np.minimum(1.0, 1.345 / (np.abs(r) / scale))
            wm = m * w[:, None]
            new = np.linalg.solve(m.T @ wm, wm.T @ y)
            if np.max(np.abs(new - coef)) < 1e-10:
                coef = new
                break
            coef = new
        assert np.allclose(huber, y - m @ coef, atol=1e-6)

    def test_huber_with_infinite_constant_matches_least_squares(self, rng):
        x = rng.standard_normal((30, 2))
        y = x @ np.array([1.0, -2.0]) + rng.standard_normal(30)
        ds = make_dataset(y, (rng.random(30) < 0.5).astype(int), x=x)
        huber = fit_residuals(ds, DesignSpec(estimator="huber-robust", huber_c=1e8))
        ls = fit_residuals(ds, LINEAR)
        assert np.allclose(huber, ls, atol=1e-6)

    def test_too_few_subjects_error(self, rng):
        ds = make_dataset([1.0, 2.0], [0, 1], x=[[1.0, 2.0], [2.0, 4.0]])
        with pytest.raises(DegenerateDesignError):
            fit_residuals(ds, DesignSpec(interactions=True, extra_terms=((0, 2), (1, 2))))


class TestPredictOutcome:
    def test_zero_treatment_coefficient(self, rng):
        n = 30
        x = rng.standard_normal((n, 1))
        y = 2.0 + x[:, 0]  # no treatment effect at all
        a = (rng.random(n) < 0.5).astype(int)
        fit = fit_assignment_regression(x, a, y, LINEAR)
        p1 = predict_outcome(fit, x, 1)
        p0 = predict_outcome(fit, x, 0)
        assert np.allclose(p1, p0, atol=1e-8)

    def test_perfect_fit_interpolates(self, rng):
        n = 20
        x = rng.standard_normal((n, 1))
        a = np.array([0, 1] * 10)
        y = 1.0 + 2.0 * x[:, 0] + 3.0 * a
        fit = fit_assignment_regression(x, a, y, LINEAR)
        pred = np.array([fit.predict(x[i], int(a[i]))[0] for i in range(n)])
        assert np.allclose(pred, y, atol=1e-8)

    def test_two_coefficient_fixture_matches_normal_equations(self):
        # y ~ intercept + x, solved by the hand-coded 2x2 normal equations
        x = np.array([[0.0], [1.0], [2.0], [3.0]])
        y = np.array([1.0, 2.2, 2.9, 4.1])
        m = np.column_stack([np.ones(4), x[:, 0]])
        ata = m.T @ m
        atb = m.T @ y
        det = ata[0, 0] * ata[1, 1] - ata[0, 1] * ata[1, 0]
        beta0 = (atb[0] * ata[1, 1] - ata[0, 1] * atb[1]) / det
        beta1 = (ata[0, 0] * atb[1] - atb[0] * ata[1, 0]) / det
        coef = fit_regression(m, y)
        assert coef[0] == pytest.approx(beta0, abs=1e-9)
        assert coef[1] == pytest.approx(beta1, abs=1e-9)

    def test_dimension_mismatch_error(self, rng):
        x = rng.standard_normal((10, 2))
        a = (rng.random(10) < 0.5).astype(int)
        fit = fit_assignment_regression(x, a, rng.standard_normal(10), LINEAR)
        with pytest.raises(ValueError):
            fit.predict(np.ones((3, 5)), 1)


class TestDesignSpec:
    def test_duplicate_columns_dropped_with_warning(self, rng, caplog):
        x = np.column_stack([rng.integers(0, 2, 20).astype(float), rng.standard_normal(20)])
        spec = DesignSpec(extra_terms=((0, 2),))  # square of a binary column
        with caplog.at_level("WARNING", logger="rankbet.models"):
            built = build_design(spec, x)
        assert "duplicate" in caplog.text
        assert built.dim == 3  # intercept, x1, x2 (x1^2 dropped)

    def test_second_order_interactions(self, rng):
        x = rng.standard_normal((10, 3))
        built = build_design(DesignSpec(interactions=True), x)
        assert built.dim == 1 + 3 + 3
        m = built.transform(x)
        assert np.allclose(m[:, 4], x[:, 0] * x[:, 1])

    def test_invalid_estimator(self):
        with pytest.raises(ConfigError):
            DesignSpec(estimator="lasso")

    def test_invalid_huber_constant(self):
        with pytest.raises(ConfigError):
            DesignSpec(huber_c=0.0)


class TestKNRegressor:
    def test_leave_one_out_excludes_self(self):
        x = np.array([[0.0], [0.1], [0.2], [5.0], [5.1], [5.2]])
        a = np.array([0, 0, 0, 1, 1, 1])
        r = np.array([1.0, 2.0, 3.0, 10.0, 20.0, 30.0])
        model = KNRegressor(x, a, r, k=2)
        loo = model.predict_training(True)
        assert loo[0] == pytest.approx((2.0 + 3.0) / 2)  # not its own value
        flipped = model.predict_training(False)
        assert flipped[0] == pytest.approx((10.0 + 20.0) / 2)

    def test_plain_prediction_averages_nearest(self):
        x = np.array([[0.0], [1.0], [10.0], [11.0]])
        a = np.array([1, 1, 1, 1])
        r = np.array([1.0, 3.0, 100.0, 102.0])
        model = KNRegressor(x, a, r, k=2)
        assert model.predict(np.array([[0.5]]), 1)[0] == pytest.approx(2.0)
