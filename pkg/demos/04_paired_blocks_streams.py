"""Beyond two unpaired samples: paired data, blocks, and streams.

Every extension reduces the design to the same betting core by finding a
pseudo assignment that is a known-probability coin under the null:

* matched pairs   -> which member was treated (probability 1/2)
* blocks of three -> is the outcome-ordered assignment vector within one
                     exchange of (1, 2, 3)? (probability 1/2)
* three levels    -> bet on the assignment exceeding its expected value 2
* a subject stream-> bet on each arrival as it comes, stop any time

Run:  python demos/04_paired_blocks_streams.py
"""

import numpy as np

from rankbet.data import PairedRecord
from rankbet.policies import AutoPolicyConfig, run_auto_ibet, run_seq_bet
from rankbet.rng import master_rng
from rankbet.simulate import make_blocks, make_multi_dataset, make_two_sample_dataset
from rankbet.transforms import pair_to_pseudo, run_i_friedman, run_i_kruskal_wallis

rng = master_rng(5)

# -- paired data ---------------------------------------------------------------
pairs = []
for i in range(150):
    x1, x2 = rng.standard_normal(2)
    a1 = int(rng.random() < 0.5)
    effect = 2.0
    y1 = effect * a1 + x1 + rng.standard_normal() * 0.5
    y2 = effect * (1 - a1) + x2 + rng.standard_normal() * 0.5
    pairs.append(PairedRecord(i, y1, y2, a1, 1 - a1, (x1,), (x2,)))

pseudo = pair_to_pseudo(pairs)
record = run_auto_ibet(pseudo, AutoPolicyConfig(alpha=0.05, seed=1))
print(f"paired test:   rejected={record.rejected} after {record.stop_step} bets, "
      f"p = {record.anytime_p:.4f}")

# -- blocks of three treatments --------------------------------------------------
blocks = make_blocks(150, "dense-weak", 3.0, "bell", "gaussian", rng)
record = run_i_friedman(blocks, alpha=0.05)
print(f"block test:    rejected={record.rejected} after {record.stop_step} bets, "
      f"p = {record.anytime_p:.4f}")

# -- three unpaired treatment levels ---------------------------------------------
multi = make_multi_dataset(300, 30, "dense-weak", 2.0, "bell", "gaussian", rng)
record = run_i_kruskal_wallis(multi, alpha=0.05)
print(f"3-level test:  rejected={record.rejected} after {record.stop_step} bets, "
      f"p = {record.anytime_p:.4f}")

# -- streaming arrivals -----------------------------------------------------------
stream = make_two_sample_dataset(400, 40, "linear-two-sided", 1.5, "bell",
                                 "gaussian", 0.5, rng).subjects
record = run_seq_bet(stream, alpha=0.05, warmup=50)
print(f"stream test:   rejected={record.rejected} at arrival {record.stop_step} "
      f"(after a 50-subject warm-up), p = {record.anytime_p:.4f}")
