"""confprop: confidence-gated pseudo-labeling toolkit.

Trains a feature learner on a few labeled samples, projects its latent
features to 2D, propagates labels through an optimum-path forest, keeps
only high-confidence pseudo-labels, retrains, and repeats.
"""

from confprop.core import (
    Dataset,
    LabeledSample,
    LabelSource,
    MetricsRecord,
    Split,
    accuracy,
    cohen_kappa,
    compute_metrics,
    propagation_accuracy,
    stratified_split,
)
from confprop.opf import (
    ForestResult,
    PropagationGraph,
    brute_force_minimax,
    confidence,
    fit_propagate,
    per_class_cost_map,
)
from confprop.tsne import Affinities, Embedding2D, TsneParams, run_tsne
from confprop.learner import (
    ExternalFeatureStore,
    FeatureLearner,
    IdentityLearner,
    MlpConfig,
    MlpLearner,
    identity_learner,
    load_external_features,
)
from confprop.pipeline import (
    IterationReport,
    LoopConfig,
    LoopState,
    Regime,
    run_loop,
    select_confident,
    tau_for_iteration,
)

__version__ = "0.1.0"
