"""iqreward: Interaction Quality estimation as a dialogue reward signal."""

from .config import ExperimentConfig, GpConfig, IqModelConfig, RewardConfig, SynthConfig, load_experiment_config
from .corpus import Vocab, build_vocab, iq_labels, load_corpus, make_folds, save_corpus, synthesize_corpus
from .domain import DomainSpec, load_domain
from .env import run_episode
from .estimator import BaseEstimator, InProcessEstimator, OracleEstimator, ServiceEstimator
from .iq_model import IqModel, load_params, predict_sequence, save_params, train
from .metrics import score_predictions
from .models import (
    ActType,
    AnnotatedDialogue,
    AnnotatedTurn,
    DialogueAct,
    EpisodeResult,
    IqPrediction,
    UserGoal,
)
from .policy import ActionSpace, GpSarsaPolicy, ScriptedPolicy, load_policy, save_policy
from .registry import EstimatorRegistry, get_default_registry, register, reset_default_registry

__all__ = [
    "ActType",
    "ActionSpace",
    "AnnotatedDialogue",
    "AnnotatedTurn",
    "BaseEstimator",
    "DialogueAct",
    "DomainSpec",
    "EpisodeResult",
    "EstimatorRegistry",
    "ExperimentConfig",
    "GpConfig",
    "GpSarsaPolicy",
    "InProcessEstimator",
    "IqModel",
    "IqModelConfig",
    "IqPrediction",
    "OracleEstimator",
    "RewardConfig",
    "ScriptedPolicy",
    "ServiceEstimator",
    "SynthConfig",
    "UserGoal",
    "Vocab",
    "build_vocab",
    "get_default_registry",
    "iq_labels",
    "load_corpus",
    "load_domain",
    "load_experiment_config",
    "load_params",
    "load_policy",
    "make_folds",
    "predict_sequence",
    "register",
    "reset_default_registry",
    "run_episode",
    "save_corpus",
    "save_params",
    "save_policy",
    "score_predictions",
    "synthesize_corpus",
    "train",
]
