"""Simulation harness: population layout, outcome menus, power machinery."""

import csv
import io
import math

import numpy as np
import pytest

from rankbet.errors import ConfigError
from rankbet.rng import stream_rng
from rankbet.simulate import (
    CONTROLS,
    EFFECTS,
    PowerTable,
    SimulationConfig,
    TestSpec,
    estimate_power,
    export_results,
    generate_outcomes,
    generate_population,
    run_calibration,
)


class TestGeneratePopulation:
    def test_exact_cell_counts(self, rng):
        x = generate_population(500, 30, rng)
        both = np.sum((x[:, 0] == 1) & (x[:, 1] == 1))
        neither = np.sum((x[:, 0] == 0) & (x[:, 1] == 0))
        assert both == 30 and neither == 30

    def test_balanced_quarter_cells(self, rng):
        x = generate_population(400, 100, rng)
        for v1 in (0, 1):
            for v2 in (0, 1):
                assert np.sum((x[:, 0] == v1) & (x[:, 1] == v2)) == 100

    def test_exact_marginals(self, rng):
        x = generate_population(500, 30, rng)
        assert np.sum(x[:, 0] == 1) == 250
        assert np.sum(x[:, 1] == 1) == 250

    def test_infeasible_counts_rejected(self, rng):
        with pytest.raises(ConfigError):
            generate_population(100, 60, rng)
        with pytest.raises(ConfigError):
            generate_population(101, 30, rng)


class TestGenerateOutcomes:
    def test_hand_substitution_into_the_menus(self):
        x = np.array([[1.0, 1.0, 0.0]])
        # effect at (1,1,0) is 1*1 + 0 = 1; bell control is 5*(1+1+0) = 10
        assert EFFECTS["linear-two-sided"](x)[0] == pytest.approx(1.0)
        assert CONTROLS["bell"](x)[0] == pytest.approx(10.0)
        for s_delta in (0.5, 2.0):
            noiseless = s_delta * EFFECTS["linear-two-sided"](x) + CONTROLS["bell"](x)
            assert noiseless[0] == pytest.approx(s_delta + 10.0)

    def test_quadratic_effect_vanishes_at_one(self):
        x = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        assert np.allclose(EFFECTS["quadratic"](x), 0.0)

    def test_zero_scale_is_a_null(self, rng):
        x = generate_population(100, 10, rng)
        a1 = np.zeros(100, dtype=int)
        a2 = np.ones(100, dtype=int)
        y1 = generate_outcomes(x, a1, "linear-two-sided", 0.0, "bell", "gaussian",
                               stream_rng(4, 0))
        y2 = generate_outcomes(x, a2, "linear-two-sided", 0.0, "bell", "gaussian",
                               stream_rng(4, 0))
        assert np.array_equal(y1, y2)

    def test_unknown_tags_rejected(self, rng):
        x = generate_population(10, 2, rng)
        a = np.zeros(10, dtype=int)
        with pytest.raises(ConfigError):
            generate_outcomes(x, a, "no-such-effect", 1.0, "bell", "gaussian", rng)
        with pytest.raises(ConfigError):
            generate_outcomes(x, a, "linear-two-sided", 1.0, "no-such-control", "gaussian", rng)

    def test_cauchy_noise_is_inverse_cdf_of_uniform(self):
        draws = generate_outcomes(
            np.zeros((4, 3)), np.zeros(4, dtype=int), "linear-two-sided", 0.0,
            "skewed", "cauchy", stream_rng(9, 3),
        )
        expected = np.tan(np.pi * (stream_rng(9, 3).random(4) - 0.5))
        assert np.allclose(draws, expected)


def quick_config(**overrides):
    base = dict(
        tests=(TestSpec("linear-cate"), TestSpec("covadj-wilcoxon", {"b": 60})),
        n=80,
        n0=8,
        s_delta_grid=(0.0, 3.0),
        repetitions=30,
        seed=11,
    )
    base.update(overrides)
    return SimulationConfig(**base)


class TestEstimatePower:
    def test_null_calibration_and_power_separation(self):
        table = estimate_power(quick_config())
        for row in table.rows:
            if row.s_delta == 0.0:
                assert row.power <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / row.reps)
        assert table.power_of("linear-cate", 3.0) > 0.5

    def test_deterministic_given_seed(self):
        t1 = estimate_power(quick_config())
        t2 = estimate_power(quick_config())
        assert t1 == t2
        assert t1.to_csv() == t2.to_csv()

    def test_parallel_merge_matches_serial(self):
        cfg = quick_config(repetitions=12)
        assert estimate_power(cfg, jobs=2) == estimate_power(cfg, jobs=1)

    def test_power_has_mean_stop_time_for_betting_tests(self):
        cfg = quick_config(tests=(TestSpec("auto-ibet", {"gamma": 0.1}),),
                           repetitions=10, s_delta_grid=(3.0,))
        table = estimate_power(cfg)
        assert table.rows[0].mean_stop_time is not None

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            quick_config(s_delta_grid=())
        with pytest.raises(ConfigError):
            quick_config(n=81)
        with pytest.raises(ConfigError):
            quick_config(tests=())

    def test_config_json_round_trip(self):
        cfg = quick_config()
        doc = cfg.to_dict()
        assert SimulationConfig.from_dict(doc) == cfg


class TestExportResults:
    def test_empty_table_writes_header_only(self, tmp_path):
        path = tmp_path / "out.csv"
        export_results(PowerTable(rows=()), path)
        assert path.read_text() == "test,s_delta,power,se,mean_stop_time,reps,seed\n"

    def test_row_round_trips(self, tmp_path):
        table = estimate_power(quick_config(repetitions=5, s_delta_grid=(0.0,)))
        path = tmp_path / "out.csv"
        export_results(table, path)
        rows = list(csv.DictReader(io.StringIO(path.read_text())))
        assert len(rows) == len(table.rows)
        for parsed, row in zip(rows, table.rows):
            assert parsed["test"] == row.test
            assert float(parsed["power"]) == row.power
            assert int(parsed["reps"]) == row.reps

    def test_fixed_seed_gives_byte_identical_files(self, tmp_path):
        cfg = quick_config(repetitions=5)
        p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
        export_results(estimate_power(cfg), p1)
        export_results(estimate_power(cfg), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestCalibration:
    def test_zero_reps_rejected(self):
        with pytest.raises(ConfigError):
            run_calibration(reps=0)

    def test_small_run_reports_all_tests(self):
        report = run_calibration(reps=8, alpha=0.05, seed=3, n=60)
        assert len(report["criteria"]) == 6
        assert {c["test"] for c in report["criteria"]} == {
            "auto-ibet",
            "seq-bet",
            "i-friedman",
            "i-kw",
            "covadj-wilcoxon",
            "linear-cate",
        }
