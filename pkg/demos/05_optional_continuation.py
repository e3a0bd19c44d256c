"""Optional continuation: extend an inconclusive experiment, no correction.

If the wealth never reached 1/alpha, just recruit more subjects and keep
betting from the current wealth. The wealth process is still a nonnegative
martingale under the null, so the probability it EVER crosses 1/alpha
stays at alpha — no multiplicity adjustment, unlike re-running a
permutation test on the pooled data.

The first wave below is deliberately too small to ever reject: eight bets
of 0.4 cap the wealth at 1.4^8 ~ 14.76 < 20. A permutation test at n = 8
would be similarly stuck near its granularity floor. The betting test just
keeps going.

Run:  python demos/05_optional_continuation.py
"""

import rankbet.betting as bt
from rankbet.data import Dataset, Subject
from rankbet.models import DesignSpec
from rankbet.policies import posterior_suggestions, select_next
from rankbet.rng import master_rng

rng = master_rng(3)
alpha = 0.05
design = DesignSpec()


def wave(start_id, n):
    """A strongly separated wave: outcome ~ 6 * assignment plus noise."""
    subjects = []
    for i in range(n):
        a = int(rng.random() < 0.5)
        subjects.append(
            Subject(
                id=start_id + i,
                y=6.0 * a + 0.3 * float(rng.standard_normal()),
                a=a,
                x=(float(rng.standard_normal()),),
                mu=0.5,
            )
        )
    return subjects


def bet_through(session):
    """Bet greedily until rejection or exhaustion, refitting every 5 steps."""
    q_by_id = {}
    step = 0
    while session.status is bt.SessionStatus.BETTING:
        if step % 5 == 0:
            q_by_id = posterior_suggestions(session.dataset, session.revealed_ids, design)
        step += 1
        candidates = {i: q_by_id.get(i, 0.5) for i in session.unrevealed_ids}
        pick = select_next(candidates)
        session = bt.commit_bet(session, pick, 0.4 if candidates[pick] > 0.5 else -0.4)
        session = bt.reveal(session)
    return session


# a strong, easily guessed effect — but only eight subjects in wave one
wave1 = Dataset(wave(0, 8))
session = bet_through(bt.reveal_holdout(bt.new_session(wave1, alpha), ()))
print(f"wave 1 (n=8):   status={session.status.value:9s} wealth={session.wealth:6.2f} "
      f"p={bt.anytime_p(session):.3f}   (1.4^8 = 14.76 can never reach 20)")

# recruit twenty more subjects and continue from the current wealth
fresh = wave(100, 20)
session = bt.continue_session(session, fresh)
print(f"extension:      +{len(fresh)} subjects, wealth carried over at {session.wealth:.2f}")

session = bet_through(session)
print(f"wave 2 (n=28):  status={session.status.value:9s} wealth={session.wealth:6.2f} "
      f"p={bt.anytime_p(session):.4f}")
assert session.status is bt.SessionStatus.REJECTED
print("rejected without any multiple-testing correction — the boundary-crossing")
print("probability under the null was at most alpha from the start")
