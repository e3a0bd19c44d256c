"""Reductions of paired, multi-sample, and block designs to the betting core.

Each transform compresses a structured design into pseudo subjects whose
pseudo assignment is independent of the pseudo outcome and covariates
under the null, with a known expected value — exactly the setup the
betting session needs. Paired data becomes a binary pseudo assignment with
probability 1/2; blocks of three treatments are encoded by whether the
outcome-ordered assignment vector is within one exchange of the identity
ordering; and three-level unpaired designs are bet on directly against
their expected assignment of 2.
"""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from . import betting
from .data import BlockRecord, Dataset, PairedRecord, Subject
from .errors import ConfigError, SchemaError
from .policies import AutoPolicyConfig, RunRecord, StepRecord, run_auto_ibet
from .rng import master_rng

__all__ = [
    "pair_to_pseudo",
    "pair_to_signed_diff",
    "friedman_pseudo_assignment",
    "blocks_to_pseudo",
    "run_i_friedman",
    "run_i_kruskal_wallis",
]

logger = logging.getLogger(__name__)

# Outcome-ordered assignment vectors within one exchange of (1, 2, 3) map
# to pseudo assignment 1, the rest to 0.
_FRIEDMAN_ENCODING = {
    (1, 2, 3): 1,
    (2, 1, 3): 1,
    (1, 3, 2): 1,
    (3, 1, 2): 0,
    (2, 3, 1): 0,
    (3, 2, 1): 0,
}


def pair_to_pseudo(pairs: Sequence[PairedRecord]) -> Dataset:
    """Compress pairs to unpaired form: pseudo assignment
    ``(a1 - a2 + 1) / 2``, pseudo outcome ``y1 - y2``, covariates
    concatenated, treatment probability 1/2."""
    subjects = []
    for p in pairs:
        if p.a1 + p.a2 != 1:
            raise SchemaError(
                f"pair {p.pair_id}: exactly one member must be treated, got ({p.a1}, {p.a2})"
            )
        subjects.append(
            Subject(
                id=p.pair_id,
                y=p.y1 - p.y2,
                a=(p.a1 - p.a2 + 1) // 2,
                x=p.x1 + p.x2,
                mu=0.5,
            )
        )
    return Dataset(subjects, support=(0, 1))


def pair_to_signed_diff(pairs: Sequence[PairedRecord]) -> Dataset:
    """Treatment-minus-control differences: pseudo outcome ``|d|`` with
    ``d = (a1 - a2) * (y1 - y2)`` and pseudo assignment ``1{d > 0}``
    (probability 1/2 under the null for continuous outcomes). Tied pairs
    carry no sign information and are dropped with a logged count."""
    subjects = []
    dropped = 0
    for p in pairs:
        if p.a1 + p.a2 != 1:
            raise SchemaError(
                f"pair {p.pair_id}: exactly one member must be treated, got ({p.a1}, {p.a2})"
            )
        d = (p.a1 - p.a2) * (p.y1 - p.y2)
        if d == 0:
            dropped += 1
            continue
        subjects.append(
            Subject(id=p.pair_id, y=abs(d), a=int(d > 0), x=p.x1 + p.x2, mu=0.5)
        )
    if dropped:
        logger.warning("dropped %d tied pair(s) with zero outcome difference", dropped)
    if not subjects:
        raise SchemaError("all pairs are tied; no information left")
    return Dataset(subjects, support=(0, 1))


def friedman_pseudo_assignment(ordered_assignments: Sequence[int]) -> int:
    """Binary encoding of a block's outcome-ordered assignment vector.

    The input lists the treatments of the block's subjects sorted by
    descending outcome. Vectors needing at most one exchange to reach
    (1, 2, 3) encode to 1, vectors needing two or three encode to 0.
    """
    key = tuple(int(v) for v in ordered_assignments)
    if key not in _FRIEDMAN_ENCODING:
        raise SchemaError(f"{key} is not a permutation of (1, 2, 3)")
    return _FRIEDMAN_ENCODING[key]


def blocks_to_pseudo(blocks: Sequence[BlockRecord]) -> Dataset:
    """Pseudo dataset for betting on blocks of three treatments.

    Each block becomes one pseudo subject: assignment from
    :func:`friedman_pseudo_assignment` applied to the outcome-ordered
    treatments (probability 1/2 under the null), outcome the within-block
    spread, covariates the sorted outcomes followed by the members'
    covariates in outcome-sorted order. Blocks with tied outcomes have no
    strict ordering and are dropped with a logged count.
    """
    subjects = []
    dropped = 0
    for block in blocks:
        if len(block.y) != 3:
            raise ConfigError("the block encoding is defined for exactly three treatments")
        y = np.asarray(block.y, dtype=float)
        if len(np.unique(y)) != 3:
            dropped += 1
            continue
        order = np.argsort(-y)  # descending outcome
        ordered_a = tuple(int(block.a[j]) for j in order)
        pseudo_a = friedman_pseudo_assignment(ordered_a)
        sorted_y = tuple(float(y[j]) for j in order)
        sorted_x: tuple[float, ...] = ()
        for j in order:
            sorted_x = sorted_x + tuple(block.x[j])
        subjects.append(
            Subject(
                id=block.block_id,
                y=float(y.max() - y.min()),
                a=pseudo_a,
                x=sorted_y + sorted_x,
                mu=0.5,
            )
        )
    if dropped:
        logger.warning("dropped %d block(s) with tied outcomes", dropped)
    if not subjects:
        raise SchemaError("all blocks are tied; no information left")
    return Dataset(subjects, support=(0, 1))


def run_i_friedman(
    blocks: Sequence[BlockRecord],
    alpha: float = 0.05,
    config: AutoPolicyConfig | None = None,
    rng: np.random.Generator | None = None,
) -> RunRecord:
    """Interactive betting test for blocks of three treatments.

    Blocks are compressed by :func:`blocks_to_pseudo` and the automated
    policy bets on the binary pseudo assignments with a logistic guesser
    (the Gaussian mixture working model does not describe block features).
    """
    if config is None:
        config = AutoPolicyConfig(alpha=alpha, posterior_model="logistic")
    elif config.posterior_model != "logistic":
        raise ConfigError("block pseudo data uses the logistic posterior model")
    pseudo = blocks_to_pseudo(blocks)
    return run_auto_ibet(pseudo, config, rng=rng)


def run_i_kruskal_wallis(
    dataset: Dataset,
    alpha: float = 0.05,
    config: AutoPolicyConfig | None = None,
    rng: np.random.Generator | None = None,
) -> RunRecord:
    """Interactive betting test for a three-level unpaired design.

    Bets on whether the assignment exceeds its expected value 2 under
    uniform randomization over {1, 2, 3}: the wealth factor is
    ``1 + w * (a/2 - 1)`` with the stake inside the nonnegativity interval
    [-2, 2]. The guesser scores ``a - 2`` by a linear regression of the
    revealed assignments on (covariates, outcome); the stake is twice the
    configured bet magnitude, signed by the score, so the extreme levels
    move the wealth by the same factors as a 0.4 stake in the binary test.
    This targets stochastically ordered alternatives.
    """
    if dataset.support != (1, 2, 3):
        raise ConfigError("i-Kruskal-Wallis betting requires assignments in {1, 2, 3}")
    if not np.allclose(dataset.mu, 2.0):
        raise ConfigError("only uniform randomization over {1, 2, 3} is supported (mu = 2)")
    if config is None:
        config = AutoPolicyConfig(alpha=alpha)
    if rng is None:
        rng = master_rng(config.seed)

    n = len(dataset)
    holdout_size = int(config.gamma * n)
    if holdout_size >= n:
        raise ConfigError("holdout would swallow the whole dataset")
    holdout = tuple(int(i) for i in rng.choice(dataset.ids, size=holdout_size, replace=False))
    session = betting.new_session(dataset, config.alpha)
    session = betting.reveal_holdout(session, holdout)

    cadence = config.refit_cadence if config.refit_cadence is not None else max(1, n // 5)
    features = np.column_stack([np.ones(n), dataset.x, dataset.y])
    a_centered = dataset.a.astype(float) - 2.0
    id_to_row = {sid: i for i, sid in enumerate(dataset.ids)}

    scores: dict[int, float] = {}
    steps = []
    t = 0
    while session.status is betting.SessionStatus.BETTING:
        t += 1
        if t == 1 or t % cadence == 0:
            scores = _assignment_scores(session, features, a_centered, id_to_row)
        candidates = {sid: scores.get(sid, 0.0) for sid in session.unrevealed_ids}
        pick = max(candidates.items(), key=lambda kv: (abs(kv[1]), -kv[0]))[0]
        s = candidates[pick]
        lo, hi = session.bounds_for(pick)
        w = min(max(2.0 * config.bet_magnitude * (1.0 if s > 0 else -1.0), lo), hi)
        session = betting.commit_bet(session, pick, w)
        session = betting.reveal(session)
        entry = session.audit[-1]
        steps.append(
            StepRecord(
                step=t,
                subject_id=pick,
                q=0.5 + s,  # score recentred for the record; not a probability
                w=w,
                mu=entry.mu,
                revealed_a=entry.revealed_a,
                factor=entry.factor,
            )
        )
    return RunRecord(
        rejected=session.status is betting.SessionStatus.REJECTED,
        stop_step=session.step,
        log_wealth=session.log_wealth,
        ordering=session.ordering,
        steps=tuple(steps),
        anytime_p=betting.anytime_p(session),
        alpha=config.alpha,
        holdout=holdout,
        seed=config.seed,
    )


def _assignment_scores(session, features, a_centered, id_to_row) -> dict[int, float]:
    revealed = sorted(session.revealed_ids)
    if len(revealed) >= features.shape[1]:
        rows = [id_to_row[sid] for sid in revealed]
        z = features[rows]
        coef, *_ = np.linalg.lstsq(z, a_centered[rows], rcond=None)
        pred = features @ coef
    else:
        pred = np.zeros(features.shape[0])
    return {
        sid: float(pred[id_to_row[sid]])
        for sid in session.dataset.ids
        if sid not in session.revealed_ids
    }
