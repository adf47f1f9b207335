"""Federated time-series forecasting with temporal-logic-guided client filtering."""

from . import aggregation, attacks, data, defenses, inference, models, stl
from .attacks import AttackConfig
from .config import ConfigError, config_from_dict, config_to_dict, resolve
from .data import ClientDataset, GeneratorConfig, ServerValidationSet, generate
from .defenses import Floral, make_defense
from .inference import InferredProperty, PropertyTemplate, infer_property
from .models import ModelSpec, ParamVector
from .runtime import ExperimentConfig, ExperimentResult, RoundRecord, TrainingConfig, evaluate, run_experiment

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "ClientDataset",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "Floral",
    "GeneratorConfig",
    "InferredProperty",
    "ModelSpec",
    "ParamVector",
    "PropertyTemplate",
    "RoundRecord",
    "ServerValidationSet",
    "TrainingConfig",
    "aggregation",
    "attacks",
    "config_from_dict",
    "config_to_dict",
    "data",
    "defenses",
    "evaluate",
    "generate",
    "infer_property",
    "inference",
    "make_defense",
    "models",
    "resolve",
    "run_experiment",
    "stl",
]
