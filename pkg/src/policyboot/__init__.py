"""Nonparametric Bayesian policy learning from experimental data.

Weight draws from a Dirichlet-process posterior on the data distribution are
pushed through exact welfare maximizers, giving posterior distributions over
optimal policies, their welfare, and treated shares.
"""

from .data import (
    Dataset,
    OverlapConfig,
    OverlapReport,
    OverlapViolation,
    ScoreTable,
    compute_scores,
    load_dataset,
    validate_overlap,
)
from .errors import ConfigError, DataError, PolicybootError, SolverError
from .inference import (
    ClassSummary,
    Comparison,
    EwmFit,
    SummaryReport,
    compare_classes,
    ewm_bootstrap_ci,
    ewm_fit,
    export_figure_data,
    render_markdown,
    summarize,
)
from .policies import (
    FiniteClass,
    Leaf,
    LinearClass,
    LinearRule,
    Policy,
    PolicyClassSpec,
    Split,
    TreeClass,
    TreeRule,
    arm_shares,
    assign,
    assign_all,
    class_spec_from_dict,
    class_spec_to_dict,
    never_treat,
    policy_from_dict,
    policy_to_dict,
    serialize_policy,
    treat_all,
    treated_share,
    weighted_welfare,
)
from .posterior import (
    BaseMeasure,
    DrawResult,
    NbplRun,
    StickBreakDraw,
    WeightDraw,
    bb_weights,
    default_truncation,
    draw_bb_weights,
    draw_stick_breaking,
    run_nbpl,
)
from .seeding import derive_seed, rng_for
from .simlab import (
    DgpSpec,
    FiniteGrid,
    ProductUniform,
    RateReport,
    SelectionReport,
    TruthOracle,
    make_dataset,
    one_hot_grid,
    one_hot_subset_class,
    regret_experiment,
    selection_experiment,
    true_regret,
)
from .solvers import SolveResult, solve_class, solve_linear, solve_tree

__version__ = "0.1.0"

__all__ = [
    "BaseMeasure",
    "ClassSummary",
    "Comparison",
    "ConfigError",
    "DataError",
    "Dataset",
    "DgpSpec",
    "DrawResult",
    "EwmFit",
    "FiniteClass",
    "FiniteGrid",
    "Leaf",
    "LinearClass",
    "LinearRule",
    "NbplRun",
    "OverlapConfig",
    "OverlapReport",
    "OverlapViolation",
    "Policy",
    "PolicyClassSpec",
    "PolicybootError",
    "ProductUniform",
    "RateReport",
    "ScoreTable",
    "SelectionReport",
    "SolveResult",
    "SolverError",
    "Split",
    "StickBreakDraw",
    "SummaryReport",
    "TreeClass",
    "TreeRule",
    "TruthOracle",
    "WeightDraw",
    "arm_shares",
    "assign",
    "assign_all",
    "bb_weights",
    "class_spec_from_dict",
    "class_spec_to_dict",
    "compare_classes",
    "compute_scores",
    "default_truncation",
    "derive_seed",
    "draw_bb_weights",
    "draw_stick_breaking",
    "ewm_bootstrap_ci",
    "ewm_fit",
    "export_figure_data",
    "load_dataset",
    "make_dataset",
    "never_treat",
    "one_hot_grid",
    "one_hot_subset_class",
    "policy_from_dict",
    "policy_to_dict",
    "regret_experiment",
    "render_markdown",
    "rng_for",
    "run_nbpl",
    "selection_experiment",
    "serialize_policy",
    "solve_class",
    "solve_linear",
    "solve_tree",
    "summarize",
    "treat_all",
    "treated_share",
    "true_regret",
    "validate_overlap",
    "weighted_welfare",
]
