"""Automated betting policies.

The default automated policy reveals a random holdout, fits the EM working
model on everything the filtration allows, then repeatedly bets on the
unrevealed subject whose treatment posterior is farthest from 1/2, staking
0.4 in the direction of the guess (clipped into the legal stake interval
when the treatment probability is not 1/2). The streaming variant does the
same over an arriving subject stream after a fully revealed warm-up
prefix, including every arrival by default.

Both runners drive the betting session state machine, so the commit-before-
reveal discipline is enforced mechanically and a finished run carries an
audit log that replays to the same wealth path.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from . import betting
from .betting import BettingSession, SessionStatus, bet_bounds, bet_factor
from .data import Dataset, Subject
from .errors import ConfigError, SessionExhaustedError
from .models import DesignSpec, fit_em, logistic_scores
from .rng import master_rng

__all__ = [
    "AutoPolicyConfig",
    "StepRecord",
    "RunRecord",
    "select_next",
    "posterior_suggestions",
    "run_auto_ibet",
    "run_seq_bet",
    "MaskedSubject",
    "replay_wealth",
    "run_record_to_json",
    "run_record_to_csv",
]


@dataclass(frozen=True)
class AutoPolicyConfig:
    """Knobs of the automated policy.

    ``refit_cadence=None`` means refit every ``floor(n/5)`` steps (with an
    initial fit at the first step). ``posterior_model`` picks the guesser:
    the EM mixture fit, or a logistic regression of revealed assignments on
    (covariates, outcome) for data where the Gaussian working model makes
    no sense (e.g. pseudo-assignments from block designs).
    """

    gamma: float = 0.1
    bet_magnitude: float = 0.4
    refit_cadence: int | None = None
    design: DesignSpec = field(default_factory=lambda: DesignSpec(interactions=True))
    alpha: float = 0.05
    seed: int = 0
    posterior_model: str = "em"
    estimate_sigma: bool = False
    fixed_sum_m: int | None = None

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise ConfigError(f"holdout ratio gamma={self.gamma} must lie in [0, 1)")
        if not (0.0 < self.bet_magnitude <= 1.0):
            raise ConfigError("bet magnitude must lie in (0, 1]")
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha={self.alpha} must lie strictly inside (0, 1)")
        if self.posterior_model not in ("em", "logistic"):
            raise ConfigError(f"unknown posterior model {self.posterior_model!r}")
        if self.refit_cadence is not None and self.refit_cadence < 1:
            raise ConfigError("refit cadence must be at least 1")


@dataclass(frozen=True)
class StepRecord:
    """One resolved bet."""

    step: int
    subject_id: int
    q: float
    w: float
    mu: float
    revealed_a: int
    factor: float
    included: bool = True


@dataclass(frozen=True)
class RunRecord:
    """Complete, replayable record of one automated betting run."""

    rejected: bool
    stop_step: int
    log_wealth: tuple[float, ...]
    ordering: tuple[int, ...]
    steps: tuple[StepRecord, ...]
    anytime_p: float
    alpha: float
    holdout: tuple[int, ...] = ()
    seed: int | None = None
    warmup: int = 0


def select_next(posteriors: dict[int, float]) -> int:
    """Id with posterior farthest from 1/2; ties go to the lowest id."""
    if not posteriors:
        raise SessionExhaustedError("no candidates left to select from")
    return max(posteriors.items(), key=lambda kv: (abs(kv[1] - 0.5), -kv[0]))[0]


def posterior_suggestions(
    dataset: Dataset,
    revealed_ids,
    design: DesignSpec,
    posterior_model: str = "em",
    estimate_sigma: bool = False,
) -> dict[int, float]:
    """Treatment posteriors for all unrevealed subjects, using only the
    filtration (outcomes, covariates, revealed assignments)."""
    revealed_ids = frozenset(revealed_ids)
    ids = dataset.ids
    revealed_rows = np.array([sid in revealed_ids for sid in ids])
    if posterior_model == "em":
        fit = fit_em(
            dataset,
            [sid for sid in ids if sid in revealed_ids],
            design,
            estimate_sigma=estimate_sigma,
        )
        q = fit.q_hat
    else:
        features = np.column_stack([dataset.x, dataset.y])
        labels = dataset.a[revealed_rows]
        if revealed_rows.any() and len(np.unique(labels)) == 2:
            q = np.full(len(ids), 0.5)
            q[~revealed_rows] = logistic_scores(
                features[revealed_rows], labels, features[~revealed_rows]
            )
        else:
            y = dataset.y
            sd = float(np.std(y))
            z = (y - float(np.mean(y))) / sd if sd > 0 else np.zeros_like(y)
            q = np.clip(0.5 + 0.01 * z, 0.001, 0.999)
    return {sid: float(q[i]) for i, sid in enumerate(ids) if sid not in revealed_ids}


def _clip_stake(w: float, lo: float, hi: float) -> float:
    return min(max(w, lo), hi)


def run_auto_ibet(
    dataset: Dataset,
    config: AutoPolicyConfig,
    rng: np.random.Generator | None = None,
) -> RunRecord:
    """Run the automated interactive betting test on a batch dataset.

    Reveals a uniformly random ``gamma`` fraction up front, refits the
    working model on the stated cadence, always bets on the subject whose
    posterior is farthest from 1/2, and stops at rejection (wealth reaching
    ``1/alpha``) or exhaustion. Identical (dataset, config, seed) inputs
    produce identical records.
    """
    if not dataset.is_binary and config.posterior_model == "em":
        raise ConfigError("the automated policy bets on binary assignments")
    if rng is None:
        rng = master_rng(config.seed)
    n = len(dataset)
    holdout_size = int(config.gamma * n)
    if config.gamma > 0 and holdout_size < 1:
        raise ConfigError(f"gamma={config.gamma} selects an empty holdout for n={n}")
    if holdout_size >= n:
        raise ConfigError("holdout would swallow the whole dataset; nothing left to bet on")
    holdout = tuple(int(i) for i in rng.choice(dataset.ids, size=holdout_size, replace=False))

    session = betting.new_session(dataset, config.alpha, fixed_sum_m=config.fixed_sum_m)
    session = betting.reveal_holdout(session, holdout)

    cadence = config.refit_cadence if config.refit_cadence is not None else max(1, n // 5)
    posteriors: dict[int, float] = {}
    steps: list[StepRecord] = []
    t = 0
    while session.status is SessionStatus.BETTING:
        t += 1
        if t == 1 or t % cadence == 0:
            posteriors = posterior_suggestions(
                dataset,
                session.revealed_ids,
                config.design,
                posterior_model=config.posterior_model,
                estimate_sigma=config.estimate_sigma,
            )
        candidates = {sid: posteriors.get(sid, 0.5) for sid in session.unrevealed_ids}
        pick = select_next(candidates)
        q = candidates[pick]
        mu = session.current_mu(pick)
        lo, hi = session.bounds_for(pick)
        if lo == hi == 0.0:
            w = 0.0  # forced fixed-sum assignment; betting would be degenerate
        else:
            w = _clip_stake(config.bet_magnitude * (2 * int(q > 0.5) - 1), lo, hi)
        session = betting.commit_bet(session, pick, w)
        session = betting.reveal(session)
        entry = session.audit[-1]
        steps.append(
            StepRecord(
                step=t,
                subject_id=pick,
                q=q,
                w=w,
                mu=entry.mu,
                revealed_a=entry.revealed_a,
                factor=entry.factor,
            )
        )
        posteriors.pop(pick, None)

    return RunRecord(
        rejected=session.status is SessionStatus.REJECTED,
        stop_step=session.step,
        log_wealth=session.log_wealth,
        ordering=session.ordering,
        steps=tuple(steps),
        anytime_p=betting.anytime_p(session),
        alpha=config.alpha,
        holdout=holdout,
        seed=config.seed,
    )


@dataclass(frozen=True)
class MaskedSubject:
    """What a streaming policy may see before committing: everything except
    the assignment."""

    id: int
    y: float
    x: tuple[float, ...]
    mu: float


def run_seq_bet(
    stream: Iterable[Subject],
    alpha: float = 0.05,
    warmup: int = 50,
    config: AutoPolicyConfig | None = None,
    max_steps: int | None = None,
    inclusion=None,
) -> RunRecord:
    """Streaming bet test over arriving subjects.

    The first ``warmup`` arrivals are fully revealed and only train the
    model. Each later arrival is inspected masked (outcome and covariates
    only), a stake is committed, and only then is the assignment revealed
    and the wealth multiplied by ``1 + w * (a/mu - 1)``. Every arrival is
    included by default; pass ``inclusion`` (a predicate of the masked view
    and the current fit) to filter arrivals. The model is refit every
    ``refit_cadence`` arrivals (25 unless configured). Stops when the
    wealth reaches ``1/alpha``, the stream ends, or ``max_steps``
    post-warmup arrivals have been processed.
    """
    if config is None:
        config = AutoPolicyConfig(alpha=alpha)
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha={alpha} must lie strictly inside (0, 1)")
    if warmup < 0:
        raise ConfigError("warmup must be nonnegative")
    cadence = config.refit_cadence if config.refit_cadence is not None else 25

    seen: list[Subject] = []
    fit = None
    log_wealth = [0.0]
    max_log = 0.0
    boundary = math.log(1.0 / alpha) - 1e-12
    steps: list[StepRecord] = []
    rejected = False
    it: Iterator[Subject] = iter(stream)

    def refit():
        ds = Dataset(seen)
        return fit_em(ds, ds.ids, config.design, estimate_sigma=config.estimate_sigma)

    t = 0
    for subject in it:
        if len(seen) < warmup:
            seen.append(subject)
            if len(seen) == warmup:
                fit = refit()
            continue
        t += 1
        masked = MaskedSubject(id=subject.id, y=subject.y, x=subject.x, mu=subject.mu)
        include = True if inclusion is None else bool(inclusion(masked, fit))
        if fit is None:
            q = 0.5
        else:
            q = float(fit.posterior(np.array([masked.y]), np.array([masked.x]))[0])
        lo, hi = bet_bounds(masked.mu)
        w = _clip_stake(config.bet_magnitude * (2 * int(q > 0.5) - 1), lo, hi) if include else 0.0
        # the assignment is read only now, after (include, w) are fixed
        factor = bet_factor(w, subject.a, masked.mu) if include else 1.0
        log_wealth.append(log_wealth[-1] + (math.log(factor) if factor > 0 else -math.inf))
        max_log = max(max_log, log_wealth[-1])
        steps.append(
            StepRecord(
                step=t,
                subject_id=subject.id,
                q=q,
                w=w,
                mu=masked.mu,
                revealed_a=subject.a,
                factor=factor,
                included=include,
            )
        )
        seen.append(subject)
        if max_log >= boundary:
            rejected = True
            break
        if t % cadence == 0:
            fit = refit()
        if max_steps is not None and t >= max_steps:
            break

    return RunRecord(
        rejected=rejected,
        stop_step=t,
        log_wealth=tuple(log_wealth),
        ordering=tuple(s.subject_id for s in steps),
        steps=tuple(steps),
        anytime_p=min(1.0, math.exp(-max_log)),
        alpha=alpha,
        seed=config.seed,
        warmup=warmup,
    )


# -- record utilities ----------------------------------------------------------


def replay_wealth(record: RunRecord) -> tuple[float, ...]:
    """Recompute the log-wealth path from the recorded bets and reveals.

    A faithful record replays to exactly the path it stores: every bet was
    committed before its reveal, so (w, mu, a) per step determines the
    factor.
    """
    path = [0.0]
    for s in record.steps:
        factor = bet_factor(s.w, s.revealed_a, s.mu) if s.included else 1.0
        path.append(path[-1] + (math.log(factor) if factor > 0 else -math.inf))
    return tuple(path)


def _running_p(log_wealth: Sequence[float]) -> list[float]:
    out, best = [], 0.0
    for v in log_wealth:
        best = max(best, v)
        out.append(min(1.0, math.exp(-best)))
    return out


def run_record_to_json(record: RunRecord) -> str:
    doc = {
        "rejected": record.rejected,
        "stop_step": record.stop_step,
        "alpha": record.alpha,
        "anytime_p": record.anytime_p,
        "holdout": list(record.holdout),
        "ordering": list(record.ordering),
        "seed": record.seed,
        "warmup": record.warmup,
        "log_wealth": [repr(v) for v in record.log_wealth],
        "steps": [
            {
                "step": s.step,
                "subject_id": s.subject_id,
                "q": s.q,
                "w": s.w,
                "mu": s.mu,
                "revealed_a": s.revealed_a,
                "factor": s.factor,
                "included": s.included,
            }
            for s in record.steps
        ],
    }
    return json.dumps(doc)


def run_record_to_csv(record: RunRecord) -> str:
    """Flat per-step rows for plotting: step, logM, p, bet, correct."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "log_wealth", "p", "bet", "correct"])
    ps = _running_p(record.log_wealth)
    writer.writerow([0, repr(0.0), 1.0, "", ""])
    for s, p in zip(record.steps, ps[1:]):
        correct = "" if s.factor == 1.0 else str(int(s.factor > 1.0))
        writer.writerow([s.step, repr(record.log_wealth[s.step]), p, s.w, correct])
    return buf.getvalue()
