"""uuaudit: audit black-box classifier predictions for overconfident
unknown unknowns via budgeted oracle queries."""

from .dataset import (
    TestPoint,
    TestSet,
    derive_features,
    euclidean_distance,
    load_testset,
    sample_testset,
    write_testset,
)
from .errors import UUAuditError
from .evaluation import (
    McSummary,
    OverconfidenceProfile,
    monte_carlo,
    overconfidence_profile,
    sdr,
    sdr_summary,
    utility_trajectory,
)
from .phi import PhiModel, fit_cluster_rates, fit_logistic, predict_phi, prior_phi
from .search import (
    InteractiveSearch,
    Oracle,
    QueryStep,
    QueryTrace,
    SearchConfig,
    bandit_search,
    coverage_greedy_search,
    greedy_fl_search,
    make_simulated_oracle,
    most_uncertain_search,
    read_trace,
    run_strategy,
    write_trace,
)
from .utility import (
    SearchState,
    UtilityValue,
    coverage_utility,
    expected_coverage_gain,
    expected_fl_utility,
    facility_utility,
    fl_gain,
    reward,
    similarity,
)

__version__ = "0.1.0"

__all__ = [
    "TestPoint", "TestSet", "load_testset", "write_testset", "sample_testset",
    "derive_features", "euclidean_distance",
    "SearchState", "UtilityValue", "reward", "similarity",
    "facility_utility", "expected_fl_utility", "fl_gain",
    "coverage_utility", "expected_coverage_gain",
    "PhiModel", "prior_phi", "fit_logistic", "predict_phi", "fit_cluster_rates",
    "Oracle", "QueryStep", "QueryTrace", "SearchConfig", "InteractiveSearch",
    "greedy_fl_search", "most_uncertain_search", "coverage_greedy_search",
    "bandit_search", "make_simulated_oracle", "run_strategy",
    "read_trace", "write_trace",
    "McSummary", "OverconfidenceProfile", "sdr", "sdr_summary",
    "utility_trajectory", "overconfidence_profile", "monte_carlo",
    "UUAuditError",
]
