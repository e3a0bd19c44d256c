"""Wealth-process arithmetic and the betting session state machine.

The test bets toy money on masked treatment assignments. After each bet
``w`` on a subject with expected assignment ``mu``, revealing the true
assignment ``a`` multiplies the wealth by the factor ``1 + w * (a/mu - 1)``.
Under the null the assignment is independent of everything the bettor has
seen, the factor has conditional mean one, and the wealth process is a
nonnegative martingale with initial value one. Ville's inequality then
bounds ``P(exists t: M_t >= 1/alpha) <= alpha``, which justifies rejecting
as soon as the wealth reaches ``1/alpha``. The running infimum of ``1/M_s``
is an anytime-valid p-value.

Wealth is tracked in log space (real sessions reach 1e15); a zero factor
is stored as ``-inf`` and is absorbing: once the wealth hits exactly zero
it can never recover.

A :class:`BettingSession` is an immutable snapshot; every operation returns
a new session, so snapshots are safe to share across threads and the audit
log of a finished session is a complete replayable record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from .data import Dataset, Subject
from .errors import (
    AlreadyRejectedError,
    AlreadyRevealedError,
    BetRangeError,
    InvalidRandomizationError,
    ProtocolViolationError,
    SessionExhaustedError,
)

__all__ = [
    "BOUNDS_SLACK",
    "SessionStatus",
    "Bet",
    "AuditEntry",
    "BettingSession",
    "bet_bounds",
    "bet_factor",
    "fixed_sum_mu",
    "new_session",
    "reveal_holdout",
    "commit_bet",
    "update_wealth",
    "reveal",
    "anytime_p",
    "continue_session",
    "session_to_json",
    "session_from_json",
]

# Absolute slack for stake-boundary checks: a bet exactly on the closed
# boundary must survive decimal round-trips.
BOUNDS_SLACK = 1e-12

# Slack for the wealth >= 1/alpha comparison, in log space.
_REJECT_SLACK = 1e-12


class SessionStatus(str, Enum):
    WARMUP = "warmup"
    BETTING = "betting"
    BET_COMMITTED = "bet-committed"
    REJECTED = "rejected"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class Bet:
    """A stake committed on a subject before its assignment is revealed."""

    subject_id: int
    w: float
    step: int


@dataclass(frozen=True)
class AuditEntry:
    """One event in the append-only session audit log."""

    event: str  # "holdout" | "reveal" | "extend"
    step: int
    subject_id: int | None
    w: float | None
    revealed_a: int | None
    factor: float | None
    mu: float | None
    timestamp: float | None = None


def bet_bounds(mu: float, support: Sequence[int] = (0, 1)) -> tuple[float, float]:
    """Closed interval of stakes keeping ``1 + w*(a/mu - 1) >= 0`` on ``support``.

    For the binary support this is ``[-mu/(1-mu), 1]``. For a general
    support it is the maximal interval on which every attainable factor is
    nonnegative; a support level equal to ``mu`` never binds.
    """
    support = tuple(sorted(support))
    if support == (0, 1):
        if not (0.0 < mu < 1.0):
            raise InvalidRandomizationError(f"mu={mu} must lie strictly inside (0, 1)")
        return (-mu / (1.0 - mu), 1.0)
    if not (support[0] < mu < support[-1]):
        raise InvalidRandomizationError(
            f"mu={mu} must lie strictly inside ({support[0]}, {support[-1]})"
        )
    lo, hi = -math.inf, math.inf
    for a in support:
        coef = a / mu - 1.0
        if coef > 0:
            lo = max(lo, -1.0 / coef)
        elif coef < 0:
            hi = min(hi, -1.0 / coef)
    return (lo, hi)


def bet_factor(w: float, a: int, mu: float) -> float:
    """Wealth factor ``1 + w * (a/mu - 1)`` for a revealed assignment.

    A zero stake is the identity factor regardless of ``mu`` (including the
    forced fixed-sum case ``mu`` in {0, 1}, where the ratio ``a/mu`` would
    be undefined). Stakes outside the legal interval raise rather than
    clamp; tiny negative results from float round-off are snapped to zero.
    """
    if w == 0.0:
        return 1.0
    factor = 1.0 + w * (a / mu - 1.0)
    if factor < -BOUNDS_SLACK:
        raise BetRangeError(
            f"stake w={w} gives negative factor {factor} at a={a}, mu={mu}; "
            "stake is outside bet_bounds"
        )
    return max(factor, 0.0)


def fixed_sum_mu(m_total: int, treated_revealed: int, n: int, revealed: int) -> float:
    """Conditional treatment probability in a fixed-sum (completely
    randomized) design: ``(m - treated so far) / (n - revealed so far)``.

    Returns exactly 0 or 1 when the remaining assignments are forced, in
    which case betting on them is degenerate and the stake must be zero.
    """
    if revealed >= n:
        raise ZeroDivisionError("all subjects already revealed")
    if treated_revealed > m_total:
        raise ValueError("more treated revealed than the design allows")
    remaining_treated = m_total - treated_revealed
    remaining = n - revealed
    if remaining_treated > remaining:
        raise ValueError("not enough subjects left to place the remaining treatments")
    return remaining_treated / remaining


@dataclass(frozen=True)
class BettingSession:
    """Immutable snapshot of a live betting test.

    ``log_wealth`` starts at ``(0.0,)`` (wealth one) and gains one entry per
    reveal. ``ordering`` lists bet-on subjects in reveal order; ``holdout``
    lists subjects revealed up front for model warm-up. The anytime p-value
    is ``min(1, exp(-max log-wealth))`` and is nonincreasing over the life
    of the session.
    """

    dataset: Dataset
    alpha: float
    holdout: tuple[int, ...]
    ordering: tuple[int, ...]
    log_wealth: tuple[float, ...]
    max_log_wealth: float
    status: SessionStatus
    pending: Bet | None
    audit: tuple[AuditEntry, ...]
    fixed_sum_m: int | None = None  # None => independent (bernoulli-mu) design
    treated_revealed: int = 0

    # -- derived views -------------------------------------------------------

    @property
    def step(self) -> int:
        """Number of bets resolved so far."""
        return len(self.ordering)

    @property
    def revealed_ids(self) -> frozenset[int]:
        return frozenset(self.holdout) | frozenset(self.ordering)

    @property
    def unrevealed_ids(self) -> tuple[int, ...]:
        revealed = self.revealed_ids
        return tuple(i for i in self.dataset.ids if i not in revealed)

    @property
    def wealth(self) -> float:
        return math.exp(self.log_wealth[-1]) if self.log_wealth[-1] != -math.inf else 0.0

    @property
    def randomization_mode(self) -> str:
        return "bernoulli-mu" if self.fixed_sum_m is None else f"fixed-sum({self.fixed_sum_m})"

    def current_mu(self, subject_id: int) -> float:
        """Expected assignment of ``subject_id`` for the next reveal, given
        everything revealed so far."""
        if self.fixed_sum_m is None:
            return self.dataset[subject_id].mu
        return fixed_sum_mu(
            self.fixed_sum_m, self.treated_revealed, len(self.dataset), len(self.revealed_ids)
        )

    def bounds_for(self, subject_id: int) -> tuple[float, float]:
        """Legal stake interval for ``subject_id`` right now.

        Forced fixed-sum subjects (conditional mu exactly 0 or 1) admit only
        the zero stake.
        """
        mu = self.current_mu(subject_id)
        if self.fixed_sum_m is not None and (mu == 0.0 or mu == 1.0):
            return (0.0, 0.0)
        return bet_bounds(mu, self.dataset.support)


def new_session(
    dataset: Dataset,
    alpha: float,
    fixed_sum_m: int | None = None,
) -> BettingSession:
    """Fresh session in warm-up state (no assignments revealed yet)."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha={alpha} must lie strictly inside (0, 1)")
    if fixed_sum_m is not None:
        if not dataset.is_binary:
            raise InvalidRandomizationError("fixed-sum mode requires a binary design")
        if not (0 < fixed_sum_m < len(dataset)):
            raise InvalidRandomizationError(
                f"fixed-sum m={fixed_sum_m} must lie strictly between 0 and n={len(dataset)}"
            )
        if int(dataset.a.sum()) != fixed_sum_m:
            raise InvalidRandomizationError(
                "dataset does not contain exactly m treated subjects"
            )
    return BettingSession(
        dataset=dataset,
        alpha=alpha,
        holdout=(),
        ordering=(),
        log_wealth=(0.0,),
        max_log_wealth=0.0,
        status=SessionStatus.WARMUP,
        pending=None,
        audit=(),
        fixed_sum_m=fixed_sum_m,
    )


def reveal_holdout(
    session: BettingSession, ids: Sequence[int], timestamp: float | None = None
) -> BettingSession:
    """Reveal the warm-up holdout and move the session into betting state."""
    if session.status is not SessionStatus.WARMUP:
        raise ProtocolViolationError("holdout can only be revealed once, before betting")
    ids = tuple(ids)
    if len(set(ids)) != len(ids):
        raise AlreadyRevealedError("duplicate ids in holdout")
    treated = session.treated_revealed
    entries = []
    for i in ids:
        subject = session.dataset[i]  # KeyError for unknown ids
        treated += int(subject.a == 1)
        entries.append(
            AuditEntry(
                event="holdout",
                step=0,
                subject_id=i,
                w=None,
                revealed_a=subject.a,
                factor=None,
                mu=None,
                timestamp=timestamp,
            )
        )
    exhausted = len(ids) == len(session.dataset)
    return replace(
        session,
        holdout=ids,
        status=SessionStatus.EXHAUSTED if exhausted else SessionStatus.BETTING,
        treated_revealed=treated,
        audit=session.audit + tuple(entries),
    )


def commit_bet(
    session: BettingSession, subject_id: int, w: float
) -> BettingSession:
    """Commit stake ``w`` on an unrevealed subject (durably, before reveal)."""
    if session.status is SessionStatus.REJECTED:
        raise AlreadyRejectedError("session already rejected; betting is frozen")
    if session.status is SessionStatus.EXHAUSTED:
        raise SessionExhaustedError("no subjects left to bet on")
    if session.status is SessionStatus.BET_COMMITTED:
        raise ProtocolViolationError(
            f"a bet on subject {session.pending.subject_id} is already pending reveal"
        )
    if session.status is not SessionStatus.BETTING:
        raise ProtocolViolationError(f"cannot bet while in {session.status.value} state")
    if subject_id not in session.dataset:
        raise KeyError(subject_id)
    if subject_id in session.revealed_ids:
        raise AlreadyRevealedError(f"subject {subject_id} is already revealed")
    lo, hi = session.bounds_for(subject_id)
    if lo == hi == 0.0 and w != 0.0:
        raise BetRangeError(
            f"assignment of subject {subject_id} is forced by the fixed-sum design; "
            "only a zero stake is legal"
        )
    if not (lo - BOUNDS_SLACK <= w <= hi + BOUNDS_SLACK):
        raise BetRangeError(
            f"stake w={w} outside the legal interval [{lo}, {hi}] for subject {subject_id}"
        )
    bet = Bet(subject_id=subject_id, w=float(w), step=session.step + 1)
    return replace(session, status=SessionStatus.BET_COMMITTED, pending=bet)


def update_wealth(
    session: BettingSession,
    bet: Bet,
    revealed_a: int,
    timestamp: float | None = None,
) -> BettingSession:
    """Resolve a committed bet against the revealed assignment.

    Appends the log factor to the wealth path, moves the subject into the
    revealed set, refreshes the anytime p-value, and flips the status to
    ``rejected`` the moment the wealth reaches ``1/alpha`` (Ville boundary,
    inclusive).
    """
    if session.status is not SessionStatus.BET_COMMITTED or session.pending is None:
        raise ProtocolViolationError("no committed bet to resolve (reveal before commit)")
    if bet != session.pending:
        raise ProtocolViolationError(
            f"bet {bet} does not match the committed bet {session.pending}"
        )
    if bet.subject_id in session.revealed_ids:
        raise AlreadyRevealedError(f"subject {bet.subject_id} is already revealed")
    if revealed_a not in session.dataset.support:
        raise ValueError(f"revealed assignment {revealed_a} outside support")

    mu = session.current_mu(bet.subject_id)
    factor = bet_factor(bet.w, revealed_a, mu)
    log_factor = math.log(factor) if factor > 0.0 else -math.inf
    new_log = session.log_wealth[-1] + log_factor
    log_path = session.log_wealth + (new_log,)
    max_log = max(session.max_log_wealth, new_log)

    ordering = session.ordering + (bet.subject_id,)
    treated = session.treated_revealed + int(revealed_a == 1)
    n_revealed = len(session.holdout) + len(ordering)

    if max_log >= math.log(1.0 / session.alpha) - _REJECT_SLACK:
        status = SessionStatus.REJECTED
    elif n_revealed == len(session.dataset):
        status = SessionStatus.EXHAUSTED
    else:
        status = SessionStatus.BETTING

    entry = AuditEntry(
        event="reveal",
        step=bet.step,
        subject_id=bet.subject_id,
        w=bet.w,
        revealed_a=revealed_a,
        factor=factor,
        mu=mu,
        timestamp=timestamp,
    )
    return replace(
        session,
        ordering=ordering,
        log_wealth=log_path,
        max_log_wealth=max_log,
        status=status,
        pending=None,
        treated_revealed=treated,
        audit=session.audit + (entry,),
    )


def reveal(session: BettingSession, timestamp: float | None = None) -> BettingSession:
    """Resolve the pending bet against the dataset's true assignment."""
    if session.status is not SessionStatus.BET_COMMITTED or session.pending is None:
        raise ProtocolViolationError("no committed bet to reveal")
    true_a = session.dataset[session.pending.subject_id].a
    return update_wealth(session, session.pending, true_a, timestamp=timestamp)


def anytime_p(session: BettingSession) -> float:
    """Anytime-valid p-value: ``min(1, inf_{s<=t} 1/M_s)``, nonincreasing."""
    return min(1.0, math.exp(-session.max_log_wealth))


def continue_session(
    session: BettingSession,
    new_subjects: Sequence[Subject],
    timestamp: float | None = None,
) -> BettingSession:
    """Optional continuation: extend an unrejected session with new subjects.

    Betting resumes from the current wealth; no multiplicity correction is
    needed because the extended process is still a nonnegative martingale
    under the null.
    """
    if session.status is SessionStatus.REJECTED:
        raise AlreadyRejectedError("cannot extend a rejected session")
    if session.status is SessionStatus.BET_COMMITTED:
        raise ProtocolViolationError("resolve the pending bet before extending")
    new_subjects = tuple(new_subjects)
    if not new_subjects:
        return session
    if session.fixed_sum_m is not None:
        raise InvalidRandomizationError(
            "continuation of fixed-sum sessions is not supported; extend with a "
            "new independent-randomization batch instead"
        )
    dataset = session.dataset.extended(new_subjects)
    entry = AuditEntry(
        event="extend",
        step=session.step,
        subject_id=None,
        w=None,
        revealed_a=None,
        factor=float(len(new_subjects)),
        mu=None,
        timestamp=timestamp,
    )
    status = session.status
    if status is SessionStatus.EXHAUSTED:
        status = SessionStatus.BETTING
    return replace(session, dataset=dataset, status=status, audit=session.audit + (entry,))


# -- serialization ------------------------------------------------------------


def session_to_json(session: BettingSession) -> dict:
    """JSON document for a session snapshot.

    Log-wealth values are serialized as shortest round-trip decimal strings
    so the path survives serialization bit-for-bit.
    """
    return {
        "version": 1,
        "dataset_digest": session.dataset.digest(),
        "alpha": session.alpha,
        "randomization_mode": session.randomization_mode,
        "fixed_sum_m": session.fixed_sum_m,
        "holdout": list(session.holdout),
        "ordering": list(session.ordering),
        "bets": [
            {"subject_id": e.subject_id, "w": e.w, "step": e.step}
            for e in session.audit
            if e.event == "reveal"
        ],
        "pending": None
        if session.pending is None
        else {
            "subject_id": session.pending.subject_id,
            "w": session.pending.w,
            "step": session.pending.step,
        },
        "log_wealth": [repr(v) for v in session.log_wealth],
        "status": session.status.value,
        "audit": [
            {
                "event": e.event,
                "step": e.step,
                "subject_id": e.subject_id,
                "w": e.w,
                "revealed_a": e.revealed_a,
                "factor": e.factor,
                "mu": e.mu,
                "timestamp": e.timestamp,
            }
            for e in session.audit
        ],
    }


def session_from_json(doc: dict, dataset: Dataset) -> BettingSession:
    """Rebuild a session snapshot against its dataset."""
    if doc.get("version") != 1:
        raise ValueError(f"unsupported session document version {doc.get('version')}")
    if doc["dataset_digest"] != dataset.digest():
        raise ValueError("dataset digest does not match the session document")
    audit = tuple(
        AuditEntry(
            event=e["event"],
            step=e["step"],
            subject_id=e["subject_id"],
            w=e["w"],
            revealed_a=e["revealed_a"],
            factor=e["factor"],
            mu=e["mu"],
            timestamp=e["timestamp"],
        )
        for e in doc.get("audit", [])
    )
    log_wealth = tuple(float(v) for v in doc["log_wealth"])
    pending = doc.get("pending")
    return BettingSession(
        dataset=dataset,
        alpha=doc["alpha"],
        holdout=tuple(doc["holdout"]),
        ordering=tuple(doc["ordering"]),
        log_wealth=log_wealth,
        max_log_wealth=max(log_wealth),
        status=SessionStatus(doc["status"]),
        pending=None
        if pending is None
        else Bet(subject_id=pending["subject_id"], w=pending["w"], step=pending["step"]),
        audit=audit,
        fixed_sum_m=doc.get("fixed_sum_m"),
        treated_revealed=sum(
            1 for e in audit if e.revealed_a == 1 and e.event in ("holdout", "reveal")
        ),
    )
