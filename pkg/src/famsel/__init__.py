"""Selection-adjusted multiple testing across families of hypotheses.

Select promising families from the data, then run any within-family
error-controlling procedure at a selection-adjusted level so that the
expected average error measure over the selected families stays at the
nominal level. Ships the selection rules, global-null p-value combiners,
R_min machinery, and a Monte Carlo verification harness.
"""

from .adjust import (
    AdjustedAnalysis,
    NonConvergenceError,
    guaranteed_rejection_analysis,
    iterative_simple_adjusted,
    selection_adjusted,
    simple_selection_adjusted,
    unadjusted_analysis,
)
from .core import (
    ErrorMetric,
    FamilyDecision,
    PValueEnsemble,
    SelectionOutcome,
    average_over_selected,
    metric_value,
    pooled_fdp,
)
from .procedures import (
    Procedure,
    bh,
    bonferroni,
    hochberg,
    holm,
    lehmann_romano_kfwer,
    step_down,
    step_up,
    two_stage_adaptive,
)
from .selection import (
    GlobalNullTest,
    MinPThreshold,
    TopKMinP,
    UnsupportedRuleError,
    check_concordant,
    check_simple,
    combine,
    combined_pvalues,
    r_min,
    select,
)
from .sim import (
    ScenarioConfig,
    SimEstimate,
    closed_form_example1,
    estimate,
    generate,
    prds_control_check,
)

__version__ = "0.1.0"

__all__ = [
    "AdjustedAnalysis",
    "ErrorMetric",
    "FamilyDecision",
    "GlobalNullTest",
    "MinPThreshold",
    "NonConvergenceError",
    "PValueEnsemble",
    "Procedure",
    "ScenarioConfig",
    "SelectionOutcome",
    "SimEstimate",
    "TopKMinP",
    "UnsupportedRuleError",
    "average_over_selected",
    "bh",
    "bonferroni",
    "check_concordant",
    "check_simple",
    "closed_form_example1",
    "combine",
    "combined_pvalues",
    "estimate",
    "generate",
    "guaranteed_rejection_analysis",
    "hochberg",
    "holm",
    "iterative_simple_adjusted",
    "lehmann_romano_kfwer",
    "metric_value",
    "pooled_fdp",
    "prds_control_check",
    "r_min",
    "select",
    "selection_adjusted",
    "simple_selection_adjusted",
    "step_down",
    "step_up",
    "two_stage_adaptive",
    "unadjusted_analysis",
]
