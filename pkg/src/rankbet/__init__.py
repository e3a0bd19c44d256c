"""Sequential causal inference for randomized experiments.

Test the global null of no treatment effect by betting on masked treatment
assignments: any filtration-respecting betting policy produces a wealth
process that is a nonnegative martingale under the null, so rejecting when
the wealth reaches ``1/alpha`` controls the type-I error at ``alpha`` — at
any stopping time, with optional continuation, and regardless of how wrong
the working models guiding the bets are. Classical rank, permutation, and
CATE baselines plus a simulation harness ship alongside for comparison.
"""

from .betting import (
    Bet,
    BettingSession,
    SessionStatus,
    anytime_p,
    bet_bounds,
    bet_factor,
    commit_bet,
    continue_session,
    fixed_sum_mu,
    new_session,
    reveal,
    reveal_holdout,
    session_from_json,
    session_to_json,
    update_wealth,
)
from .classic import (
    EStatVariant,
    PermutationResult,
    compute_e_stats,
    covadj_wilcoxon,
    covadj_wilcoxon_test,
    friedman_stat,
    kruskal_wallis_stat,
    linear_cate_test,
    permutation_test,
    signed_rank_stat,
    signed_rank_test,
)
from .data import (
    BlockRecord,
    Dataset,
    PairedRecord,
    Subject,
    load_block_csv,
    load_paired_csv,
    load_unpaired_csv,
)
from .models import (
    DesignSpec,
    WorkingModelFit,
    fit_em,
    fit_residuals,
    predict_outcome,
)
from .policies import (
    AutoPolicyConfig,
    RunRecord,
    run_auto_ibet,
    run_seq_bet,
    select_next,
)
from .simulate import (
    SimulationConfig,
    TestSpec,
    estimate_power,
    export_results,
    generate_outcomes,
    generate_population,
    run_calibration,
)
from .transforms import (
    friedman_pseudo_assignment,
    pair_to_pseudo,
    pair_to_signed_diff,
    run_i_friedman,
    run_i_kruskal_wallis,
)

__version__ = "0.1.0"

__all__ = [
    "Bet",
    "BettingSession",
    "SessionStatus",
    "anytime_p",
    "bet_bounds",
    "bet_factor",
    "commit_bet",
    "continue_session",
    "fixed_sum_mu",
    "new_session",
    "reveal",
    "reveal_holdout",
    "session_from_json",
    "session_to_json",
    "update_wealth",
    "EStatVariant",
    "PermutationResult",
    "compute_e_stats",
    "covadj_wilcoxon",
    "covadj_wilcoxon_test",
    "friedman_stat",
    "kruskal_wallis_stat",
    "linear_cate_test",
    "permutation_test",
    "signed_rank_stat",
    "signed_rank_test",
    "BlockRecord",
    "Dataset",
    "PairedRecord",
    "Subject",
    "load_block_csv",
    "load_paired_csv",
    "load_unpaired_csv",
    "DesignSpec",
    "WorkingModelFit",
    "fit_em",
    "fit_residuals",
    "predict_outcome",
    "AutoPolicyConfig",
    "RunRecord",
    "run_auto_ibet",
    "run_seq_bet",
    "select_next",
    "SimulationConfig",
    "TestSpec",
    "estimate_power",
    "export_results",
    "generate_outcomes",
    "generate_population",
    "run_calibration",
    "friedman_pseudo_assignment",
    "pair_to_pseudo",
    "pair_to_signed_diff",
    "run_i_friedman",
    "run_i_kruskal_wallis",
    "__version__",
]
