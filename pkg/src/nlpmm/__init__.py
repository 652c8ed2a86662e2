"""Next-location prediction with blended global and personal Markov models."""

__version__ = "0.1.0"

from .ensemble import NLPMM, BlendWeights, blend_predict, fit_blend, top_k, train_nlpmm
from .evaluation import (
    ExperimentConfig,
    accuracy_at_k,
    average_precision,
    make_examples,
    one_error,
    prediction_coverage,
    run_experiment,
)
from .markov import (
    ContextTree,
    build_context_tree,
    build_gmm,
    build_pmm,
    predict_gmm,
    predict_pmm,
    zero_order_distribution,
)
from .temporal import (
    TimeAwarePredictor,
    TimeBinConfig,
    assign_bins,
    build_time_aware,
    cluster_bins,
    cosine_similarity,
    predict_time_aware,
    transition_distributions,
)
from .trajectory_core import (
    Trajectory,
    TrajectoryUnit,
    dataset_stats,
    induce_candidates,
    location_sequence,
    parse_records,
    sessionize,
)
