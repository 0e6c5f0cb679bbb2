"""Predictive hierarchical clustering of predefined data subgroups.

Subgroups are merged bottom-up; each candidate merge is scored by a Bayesian
hypothesis test comparing the held-out predictive likelihood of one pooled
penalized logistic model against the subtrees' separate models, with a
Dirichlet-style prior over merges.
"""

__version__ = "0.1.0"

from .data import (
    BINARY,
    CONTINUOUS,
    ColumnMeta,
    DataError,
    Dataset,
    DataView,
    Role,
    SplitAssignment,
    apply_normal_scores,
    assign_splits,
    export_split_manifest,
    filter_min_group_size,
    load_csv,
    normal_scores_transform,
    subgroup_view,
    write_csv,
)
from .glm import (
    ConvergenceError,
    CVFitResult,
    FittedModel,
    GlmOptions,
    LambdaPath,
    LassoLogistic,
    LassoLogisticCV,
    cv_select_lambda,
    fit_lasso_logistic,
    fit_lasso_logistic_cv,
    fit_lasso_path,
    kkt_violation,
    lambda_max,
    log_predictive_likelihood,
    make_lambda_path,
    predict_proba,
    standardize,
)
from .cluster import (
    ClusterAssignment,
    Dendrogram,
    MergeCandidate,
    PhcRunError,
    PredictiveHierarchicalClustering,
    TreeNode,
    cut_tree,
    export_dendrogram,
    load_dendrogram,
    posterior_merge_probability,
    read_assignment_csv,
    run_phc,
    score_leaf,
    score_merge,
    update_prior,
    write_assignment_csv,
)
from .baseline import (
    AgglomerativeBaseline,
    LinkageDendrogram,
    cut_k,
    euclidean_distances,
    linkage_cluster,
    subgroup_means,
)
from .simulate import GroundTruth, SimConfig, read_truth_csv, simulate, true_assignment, write_truth_csv
from .metrics import (
    MetricReport,
    ScoredPredictions,
    adjusted_rand_index,
    auprc,
    auroc,
    evaluate_clustering,
    pr_points,
    roc_points,
)

__all__ = [name for name in dir() if not name.startswith("_")]
