"""Simulation harness: populations, effect menus, and power estimation.

Populations follow a fixed two-binary-plus-one-Gaussian covariate layout:
the two binary attributes are marginally balanced with a configurable
diagonal cell count, and the continuous attribute is independent standard
normal. Outcomes are generated as ``effect(x) * a + control(x) + noise``
with registered effect, control-outcome, and noise menus covering dense,
sparse, quadratic, and two-sided heterogeneous effects, bell-shaped and
skewed control outcomes, and Gaussian or Cauchy noise.

Power is the rejection frequency over repeated fresh draws. Repetitions
are embarrassingly parallel: every repetition (and every test inside it)
owns a dedicated Philox sub-stream, so results are bit-identical for a
given master seed regardless of the number of worker processes.
"""

from __future__ import annotations

import concurrent.futures
import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .classic import (
    EStatVariant,
    covadj_wilcoxon_test,
    friedman_permutation_test,
    kruskal_wallis_stat,
    linear_cate_test,
    permutation_test,
    signed_rank_test,
)
from .data import BlockRecord, Dataset
from .errors import ConfigError
from .models import DesignSpec
from .policies import AutoPolicyConfig, run_auto_ibet, run_seq_bet
from .rng import stream_rng
from .transforms import run_i_friedman, run_i_kruskal_wallis

__all__ = [
    "EFFECTS",
    "CONTROLS",
    "TestSpec",
    "SimulationConfig",
    "TestOutcome",
    "PowerRow",
    "PowerTable",
    "generate_population",
    "generate_assignments",
    "generate_outcomes",
    "make_two_sample_dataset",
    "make_multi_dataset",
    "make_blocks",
    "run_test",
    "estimate_power",
    "export_results",
    "run_calibration",
]

logger = logging.getLogger(__name__)

# -- effect / control / noise menus --------------------------------------------

EFFECTS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    # both-signs Gaussian effect plus a constant bump for the (1, 1) cell
    "linear-two-sided": lambda x: x[:, 0] * x[:, 1] + x[:, 2],
    # dense, weak, strictly nonnegative
    "dense-weak": lambda x: 1.0 - np.abs(np.sin(3.0 * x[:, 2])),
    # strong effect confined to the upper tail of the continuous attribute
    "sparse-strong": lambda x: 2.0 * np.exp(x[:, 2]) * (x[:, 2] > 1.5),
    # quadratic in the continuous attribute, centered to mean zero
    "quadratic": lambda x: 0.6 * (x[:, 2] ** 2 - 1.0),
    # sparse strong positive tail plus a dense weak negative shift
    "sparse-pos-dense-neg": lambda x: np.exp(x[:, 2]) * (x[:, 2] > 2.0) - x[:, 0] / 2.0,
    # strong effects of both signs in both tails
    "sparse-both-signs": lambda x: x[:, 2] ** 3 * (np.abs(x[:, 2]) > 1.0),
    # dense weak oscillating effect of both signs
    "dense-weak-both-signs": lambda x: 0.4 * np.sin(3.0 * x[:, 2]),
}

CONTROLS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "bell": lambda x: 5.0 * (x[:, 0] + x[:, 1] + x[:, 2]),
    "skewed": lambda x: 2.0 * np.exp(-2.0 * x[:, 2]) * (x[:, 2] < -2.0),
}

_NOISES = ("gaussian", "cauchy")


def _draw_noise(noise: str, n: int, rng: np.random.Generator) -> np.ndarray:
    if noise == "gaussian":
        return rng.standard_normal(n)
    if noise == "cauchy":
        # inverse-CDF draw: exact and identical across platforms given the stream
        return np.tan(np.pi * (rng.random(n) - 0.5))
    raise ConfigError(f"unknown noise family {noise!r}")


# -- data generation -------------------------------------------------------------


def generate_population(n: int, n0: int, rng: np.random.Generator) -> np.ndarray:
    """Covariate matrix with exact cell counts.

    The (1,1) and (0,0) cells of the two binary attributes each hold ``n0``
    subjects, the off-diagonal cells ``n/2 - n0`` each, so both margins are
    exactly balanced. The third column is independent standard normal. Rows
    are returned in shuffled order.
    """
    if n % 2 != 0:
        raise ConfigError(f"population size n={n} must be even")
    if not (0 <= n0 <= n // 2):
        raise ConfigError(f"diagonal cell count n0={n0} must lie in [0, n/2]")
    off = n // 2 - n0
    x1 = np.concatenate([np.ones(n0), np.zeros(n0), np.ones(off), np.zeros(off)])
    x2 = np.concatenate([np.ones(n0), np.zeros(n0), np.zeros(off), np.ones(off)])
    x3 = rng.standard_normal(n)
    x = np.column_stack([x1, x2, x3])
    return x[rng.permutation(n)]


def generate_assignments(
    n: int,
    mu: float,
    rng: np.random.Generator,
    fixed_sum_m: int | None = None,
) -> np.ndarray:
    """Binary assignment vector: independent Bernoulli(mu) draws, or a
    uniformly random placement of exactly ``m`` treatments."""
    if fixed_sum_m is not None:
        a = np.zeros(n, dtype=int)
        a[rng.permutation(n)[:fixed_sum_m]] = 1
        return a
    return (rng.random(n) < mu).astype(int)


def generate_outcomes(
    x: np.ndarray,
    a: np.ndarray,
    effect: str,
    s_delta: float,
    control: str,
    noise: str,
    rng: np.random.Generator,
) -> np.ndarray:
    """Outcomes ``s_delta * effect(x) * a + control(x) + noise``."""
    if effect not in EFFECTS:
        raise ConfigError(f"unknown effect tag {effect!r}; known: {sorted(EFFECTS)}")
    if control not in CONTROLS:
        raise ConfigError(f"unknown control tag {control!r}; known: {sorted(CONTROLS)}")
    delta = s_delta * EFFECTS[effect](x)
    return delta * a + CONTROLS[control](x) + _draw_noise(noise, len(x), rng)


def make_two_sample_dataset(
    n: int,
    n0: int,
    effect: str,
    s_delta: float,
    control: str,
    noise: str,
    mu: float,
    rng: np.random.Generator,
    fixed_sum_m: int | None = None,
) -> Dataset:
    x = generate_population(n, n0, rng)
    a = generate_assignments(n, mu, rng, fixed_sum_m=fixed_sum_m)
    y = generate_outcomes(x, a, effect, s_delta, control, noise, rng)
    return Dataset.from_arrays(y, a, x, mu=mu, support=(0, 1))


def make_multi_dataset(
    n: int,
    n0: int,
    effect: str,
    s_delta: float,
    control: str,
    noise: str,
    rng: np.random.Generator,
) -> Dataset:
    """Three-level design with a stochastically ordered alternative:
    ``y = control(x) + s_delta * effect(x) * (a - 2) + noise``."""
    x = generate_population(n, n0, rng)
    a = rng.integers(1, 4, size=n)
    delta = s_delta * EFFECTS[effect](x)
    y = CONTROLS[control](x) + delta * (a - 2) + _draw_noise(noise, n, rng)
    return Dataset.from_arrays(y, a, x, mu=2.0, support=(1, 2, 3))


def make_blocks(
    n_blocks: int,
    effect: str,
    s_delta: float,
    control: str,
    noise: str,
    rng: np.random.Generator,
) -> list[BlockRecord]:
    """Blocks of three treatments; treatment 1 receives ``+delta``,
    treatment 3 ``-delta``, so treatment 1 is stochastically largest."""
    blocks = []
    for b in range(n_blocks):
        x = np.column_stack(
            [
                rng.integers(0, 2, size=3).astype(float),
                rng.integers(0, 2, size=3).astype(float),
                rng.standard_normal(3),
            ]
        )
        a = rng.permutation(np.arange(1, 4))
        delta = s_delta * EFFECTS[effect](x)
        y = CONTROLS[control](x) + delta * (2 - a) + _draw_noise(noise, 3, rng)
        blocks.append(
            BlockRecord(
                block_id=b,
                y=tuple(float(v) for v in y),
                a=tuple(int(v) for v in a),
                x=tuple(tuple(float(v) for v in row) for row in x),
            )
        )
    return blocks


# -- test specs and the registry ---------------------------------------------------


@dataclass(frozen=True)
class TestSpec:
    """A test tag plus its parameters, as they appear in config files."""

    __test__ = False  # not a pytest class, despite the name

    tag: str
    params: dict = field(default_factory=dict)
    label: str | None = None

    @property
    def name(self) -> str:
        return self.label or self.tag

    def to_dict(self) -> dict:
        doc = {"tag": self.tag, **self.params}
        if self.label:
            doc["label"] = self.label
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TestSpec":
        doc = dict(doc)
        tag = doc.pop("tag")
        label = doc.pop("label", None)
        return cls(tag=tag, params=doc, label=label)


@dataclass(frozen=True)
class TestOutcome:
    __test__ = False  # not a pytest class, despite the name

    reject: bool
    p_value: float
    statistic: float
    stop_time: int | None = None


def _design_from_params(params: dict) -> DesignSpec:
    return DesignSpec(
        interactions=bool(params.get("interactions", True)),
        extra_terms=tuple(tuple(t) for t in params.get("extra_terms", ())),
        estimator=params.get("estimator", "least-squares"),
        huber_c=float(params.get("huber_c", 1.345)),
    )


def _policy_config(params: dict, alpha: float) -> AutoPolicyConfig:
    return AutoPolicyConfig(
        gamma=float(params.get("gamma", 0.1)),
        bet_magnitude=float(params.get("bet_magnitude", 0.4)),
        refit_cadence=params.get("refit_cadence"),
        design=_design_from_params(params),
        alpha=alpha,
        seed=int(params.get("seed", 0)),
        posterior_model=params.get("posterior_model", "em"),
        fixed_sum_m=params.get("fixed_sum_m"),
    )


def design_kind(tag: str) -> str:
    """Which generated data a test consumes."""
    if tag == "i-kw":
        return "multi-3"
    if tag == "i-friedman":
        return "blocks-3"
    return "two-sample"


def run_test(spec: TestSpec, data, alpha: float, rng: np.random.Generator) -> TestOutcome:
    """Run one registered test on already generated data."""
    tag, params = spec.tag, spec.params
    if tag == "auto-ibet":
        record = run_auto_ibet(data, _policy_config(params, alpha), rng=rng)
        return TestOutcome(
            record.rejected, record.anytime_p, max(record.log_wealth), record.stop_step
        )
    if tag == "seq-bet":
        record = run_seq_bet(
            data.subjects,
            alpha=alpha,
            warmup=int(params.get("warmup", 50)),
            config=_policy_config(params, alpha),
        )
        return TestOutcome(
            record.rejected, record.anytime_p, max(record.log_wealth), record.stop_step
        )
    if tag == "covadj-wilcoxon":
        res = covadj_wilcoxon_test(
            data,
            _design_from_params(params),
            b=int(params.get("b", 200)),
            alpha=alpha,
            rng=rng,
            exhaustive=params.get("exhaustive"),
        )
        return TestOutcome(res.reject, res.p_value, res.observed)
    if tag == "linear-cate":
        res = linear_cate_test(data, alpha=alpha)
        return TestOutcome(res.reject, res.p_value, res.statistic)
    if tag == "signed-rank":
        res = signed_rank_test(
            data,
            EStatVariant(params.get("variant", "diff_in_pred_error")),
            model=params.get("model", "knn"),
            residual_fit=params.get("residual_fit", "linear"),
            design=_design_from_params(params),
            k=int(params.get("k", 15)),
            b=int(params.get("b", 200)),
            alpha=alpha,
            rng=rng,
            exhaustive=params.get("exhaustive"),
        )
        return TestOutcome(res.reject, res.p_value, res.observed)
    if tag == "kruskal-wallis":
        res = permutation_test(
            lambda ds, a_vec: kruskal_wallis_stat(ds, a_vec),
            data,
            b=int(params.get("b", 200)),
            alpha=alpha,
            rng=rng,
            exhaustive=params.get("exhaustive"),
        )
        return TestOutcome(res.reject, res.p_value, res.observed)
    if tag == "friedman":
        res = friedman_permutation_test(data, b=int(params.get("b", 200)), alpha=alpha, rng=rng)
        return TestOutcome(res.reject, res.p_value, res.observed)
    if tag == "i-kw":
        record = run_i_kruskal_wallis(data, alpha=alpha, config=_policy_config(params, alpha), rng=rng)
        return TestOutcome(
            record.rejected, record.anytime_p, max(record.log_wealth), record.stop_step
        )
    if tag == "i-friedman":
        params = dict(params)
        params.setdefault("posterior_model", "logistic")
        record = run_i_friedman(data, alpha=alpha, config=_policy_config(params, alpha), rng=rng)
        return TestOutcome(
            record.rejected, record.anytime_p, max(record.log_wealth), record.stop_step
        )
    raise ConfigError(f"unknown test tag {tag!r}")


# -- power estimation ----------------------------------------------------------------


@dataclass(frozen=True)
class SimulationConfig:
    """One power study: a data-generating scenario crossed with a test roster."""

    tests: tuple[TestSpec, ...]
    n: int = 500
    n0: int = 30
    effect: str = "linear-two-sided"
    s_delta_grid: tuple[float, ...] = (0.0, 0.5, 1.0)
    control: str = "bell"
    noise: str = "gaussian"
    mu: float = 0.5
    fixed_sum_m: int | None = None
    repetitions: int = 500
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n % 2 != 0:
            raise ConfigError("n must be even")
        if not (0 <= self.n0 <= self.n // 2):
            raise ConfigError("n0 must lie in [0, n/2]")
        if not self.s_delta_grid:
            raise ConfigError("the signal-scale grid must be nonempty")
        if not self.tests:
            raise ConfigError("the test roster must be nonempty")
        if self.noise not in _NOISES:
            raise ConfigError(f"unknown noise family {self.noise!r}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be positive")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "n0": self.n0,
            "effect": self.effect,
            "s_delta_grid": list(self.s_delta_grid),
            "control": self.control,
            "noise": self.noise,
            "mu": self.mu,
            "fixed_sum_m": self.fixed_sum_m,
            "repetitions": self.repetitions,
            "alpha": self.alpha,
            "seed": self.seed,
            "tests": [t.to_dict() for t in self.tests],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SimulationConfig":
        return cls(
            tests=tuple(TestSpec.from_dict(t) for t in doc["tests"]),
            n=int(doc.get("n", 500)),
            n0=int(doc.get("n0", 30)),
            effect=doc.get("effect", "linear-two-sided"),
            s_delta_grid=tuple(float(v) for v in doc.get("s_delta_grid", (0.0, 0.5, 1.0))),
            control=doc.get("control", "bell"),
            noise=doc.get("noise", "gaussian"),
            mu=float(doc.get("mu", 0.5)),
            fixed_sum_m=doc.get("fixed_sum_m"),
            repetitions=int(doc.get("repetitions", 500)),
            alpha=float(doc.get("alpha", 0.05)),
            seed=int(doc.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "SimulationConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PowerRow:
    test: str
    s_delta: float
    power: float
    se: float
    mean_stop_time: float | None
    reps: int
    seed: int
    failures: int = 0


@dataclass(frozen=True)
class PowerTable:
    rows: tuple[PowerRow, ...]

    def power_of(self, test: str, s_delta: float) -> float:
        for row in self.rows:
            if row.test == test and row.s_delta == s_delta:
                return row.power
        raise KeyError((test, s_delta))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["test", "s_delta", "power", "se", "mean_stop_time", "reps", "seed"])
        for r in self.rows:
            writer.writerow(
                [
                    r.test,
                    repr(r.s_delta),
                    repr(r.power),
                    repr(r.se),
                    "" if r.mean_stop_time is None else repr(r.mean_stop_time),
                    r.reps,
                    r.seed,
                ]
            )
        return buf.getvalue()

    @property
    def total_failures(self) -> int:
        return sum(r.failures for r in self.rows)


# Sub-stream slots inside one repetition: data draws first, one per design
# kind, then one stream per test. Adding a test never shifts another
# test's stream.
_DATA_SLOTS = {"two-sample": 0, "multi-3": 1, "blocks-3": 2}
_N_DATA_SLOTS = 3


def _rep_stride(config: SimulationConfig) -> int:
    return _N_DATA_SLOTS + len(config.tests)


def _generate_for_kind(config: SimulationConfig, kind: str, s_delta: float, rng) :
    if kind == "two-sample":
        return make_two_sample_dataset(
            config.n,
            config.n0,
            config.effect,
            s_delta,
            config.control,
            config.noise,
            config.mu,
            rng,
            fixed_sum_m=config.fixed_sum_m,
        )
    if kind == "multi-3":
        return make_multi_dataset(
            config.n, config.n0, config.effect, s_delta, config.control, config.noise, rng
        )
    if kind == "blocks-3":
        return make_blocks(
            config.n // 3, config.effect, s_delta, config.control, config.noise, rng
        )
    raise ConfigError(f"unknown design kind {kind!r}")


def _run_repetition(
    config: SimulationConfig, grid_index: int, rep: int
) -> list[tuple[str, bool, int | None, bool]]:
    """One repetition: fresh data per design kind, every test on the same
    draw. Returns (label, reject, stop_time, failed) per test."""
    s_delta = config.s_delta_grid[grid_index]
    base = (grid_index * config.repetitions + rep) * _rep_stride(config)
    kinds_needed = {design_kind(t.tag) for t in config.tests}
    data = {
        kind: _generate_for_kind(
            config, kind, s_delta, stream_rng(config.seed, base + _DATA_SLOTS[kind])
        )
        for kind in kinds_needed
    }
    results = []
    for j, spec in enumerate(config.tests):
        rng = stream_rng(config.seed, base + _N_DATA_SLOTS + j)
        try:
            outcome = run_test(spec, data[design_kind(spec.tag)], config.alpha, rng)
            results.append((spec.name, outcome.reject, outcome.stop_time, False))
        except Exception:  # noqa: BLE001 - a failed repetition is excluded, not fatal
            logger.exception("test %s failed on repetition %d", spec.name, rep)
            results.append((spec.name, False, None, True))
    return results


def _worker(args: tuple[dict, int, int]) -> tuple[int, int, list]:
    doc, grid_index, rep = args
    config = SimulationConfig.from_dict(doc)
    return grid_index, rep, _run_repetition(config, grid_index, rep)


def estimate_power(config: SimulationConfig, jobs: int = 1) -> PowerTable:
    """Estimate rejection frequency for every (test, signal scale) pair.

    Deterministic for a given master seed: every repetition derives its
    data and per-test randomness from dedicated Philox sub-streams and
    results are merged by repetition index.
    """
    tasks = [
        (config.to_dict(), g, r)
        for g in range(len(config.s_delta_grid))
        for r in range(config.repetitions)
    ]
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_worker, tasks, chunksize=max(1, len(tasks) // (jobs * 8))))
    else:
        raw = [_worker(t) for t in tasks]
    raw.sort(key=lambda item: (item[0], item[1]))

    rows = []
    for g, s_delta in enumerate(config.s_delta_grid):
        per_test: dict[str, dict] = {
            spec.name: {"rejects": 0, "stops": [], "failures": 0} for spec in config.tests
        }
        for gg, _rep, results in raw:
            if gg != g:
                continue
            for label, reject, stop, failed in results:
                slot = per_test[label]
                if failed:
                    slot["failures"] += 1
                    continue
                slot["rejects"] += int(reject)
                if stop is not None:
                    slot["stops"].append(stop)
        for spec in config.tests:
            slot = per_test[spec.name]
            effective = config.repetitions - slot["failures"]
            power = slot["rejects"] / effective if effective else float("nan")
            se = math.sqrt(power * (1 - power) / effective) if effective else float("nan")
            rows.append(
                PowerRow(
                    test=spec.name,
                    s_delta=s_delta,
                    power=power,
                    se=se,
                    mean_stop_time=(
                        float(np.mean(slot["stops"])) if slot["stops"] else None
                    ),
                    reps=effective,
                    seed=config.seed,
                    failures=slot["failures"],
                )
            )
    table = PowerTable(rows=tuple(rows))
    if table.total_failures:
        logger.warning("%d repetition run(s) failed and were excluded", table.total_failures)
    return table


def export_results(table: PowerTable, path) -> None:
    """Write the power table as CSV (header only for an empty table)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(table.to_csv())


def default_roster(b: int = 200) -> tuple[TestSpec, ...]:
    """The six-test roster used for null calibration."""
    return (
        TestSpec("auto-ibet"),
        TestSpec("seq-bet"),
        TestSpec("i-friedman"),
        TestSpec("i-kw"),
        TestSpec("covadj-wilcoxon", {"b": b}),
        TestSpec("linear-cate"),
    )


def run_calibration(
    reps: int = 500,
    alpha: float = 0.05,
    seed: int = 0,
    n: int = 200,
    jobs: int = 1,
) -> dict:
    """Null calibration of the whole roster at signal scale zero.

    Every test's rejection rate must stay below
    ``alpha + 3 * sqrt(alpha * (1 - alpha) / reps)``.
    """
    if reps < 1:
        raise ConfigError("repetitions must be positive")
    config = SimulationConfig(
        tests=default_roster(),
        n=n,
        n0=max(2, int(round(n * 0.06))),
        s_delta_grid=(0.0,),
        repetitions=reps,
        alpha=alpha,
        seed=seed,
    )
    table = estimate_power(config, jobs=jobs)
    bound = alpha + 3.0 * math.sqrt(alpha * (1.0 - alpha) / reps)
    criteria = []
    for row in table.rows:
        criteria.append(
            {
                "test": row.test,
                "rejection_rate": row.power,
                "bound": bound,
                "reps": row.reps,
                "pass": row.power <= bound,
            }
        )
    return {
        "alpha": alpha,
        "reps": reps,
        "n": n,
        "seed": seed,
        "bound": bound,
        "criteria": criteria,
        "pass": all(c["pass"] for c in criteria),
    }
