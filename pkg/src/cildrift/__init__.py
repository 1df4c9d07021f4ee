"""Class-incremental learning engine over frozen, precomputed feature vectors.

Trains per-session linear classifier blocks with a handful of strategies
(collective baseline, individually trained blocks, frozen previous logits,
constant OTHER logit, experience replay), evaluates them under a
session-permutation protocol, and tracks the logit drift that makes the
collective baseline forget.
"""

from .core import OTHER, FeatureStore, Instance, Ontology, SessionPlan, SessionView, relabel_for_session
from .data_io import SyntheticSpec, generate_synthetic, load_features, standard_benchmark, write_features
from .drift import LogitTrace, make_probe, track
from .evaluation import ConfusionAccumulator, SessionMetrics, evaluate_session, macro_f1, micro_f1
from .numerics import AdamWState, LogitVector, SessionClassifier, adamw_step, forward, grad_weights, softmax_ce_loss
from .runner import ExperimentConfig, RunReport, permute_plan, run_experiment, split_ontology_greedy
from .strategies import (
    EnsembleClassifier,
    ReplayMemory,
    StrategyConfig,
    herding_select,
    predict,
    train_session,
    training_logits,
)

__version__ = "0.1.0"

__all__ = [
    "OTHER",
    "AdamWState",
    "ConfusionAccumulator",
    "EnsembleClassifier",
    "ExperimentConfig",
    "FeatureStore",
    "Instance",
    "LogitTrace",
    "LogitVector",
    "Ontology",
    "ReplayMemory",
    "RunReport",
    "SessionClassifier",
    "SessionMetrics",
    "SessionPlan",
    "SessionView",
    "StrategyConfig",
    "SyntheticSpec",
    "adamw_step",
    "evaluate_session",
    "forward",
    "generate_synthetic",
    "grad_weights",
    "herding_select",
    "load_features",
    "macro_f1",
    "make_probe",
    "micro_f1",
    "permute_plan",
    "predict",
    "relabel_for_session",
    "run_experiment",
    "softmax_ce_loss",
    "split_ontology_greedy",
    "standard_benchmark",
    "track",
    "train_session",
    "training_logits",
    "write_features",
]
