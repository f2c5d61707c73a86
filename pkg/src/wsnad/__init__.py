"""Distributed autoencoder anomaly detection for sensor networks.

Sensors reconstruct each day of readings with a small autoencoder and flag
slots whose residual leaves a p-sigma envelope; a cloud actor retrains the
model and the envelope on a configurable period.
"""
__version__ = "0.1.0"

from .autoencoder import ModelParams, NetworkShape, TrainingConfig, cost, forward, gradient, init_params, sigmoid, train
from .cloud import ModelUpdate, RetrainPolicy, TrainingStore, assemble_training_set, broadcast_update, maybe_retrain
from .datagen import AnomalySpec, LabeledDataset, SignalConfig, generate_clean, inject, inject_burst, inject_spike
from .detector import ResidualStats, compute_stats, detect, residual
from .errors import ContractError, SimulationError, TrainingDiverged
from .evaluation import auc, roc, tpr_fpr_at
from .sensor_node import SensorNode, UploadMessage
from .sim import SimConfig, SimResult, communication_report, run_simulation

__all__ = [
    "ModelParams", "NetworkShape", "TrainingConfig", "cost", "forward", "gradient", "init_params",
    "sigmoid", "train", "ModelUpdate", "RetrainPolicy", "TrainingStore", "assemble_training_set",
    "broadcast_update", "maybe_retrain", "AnomalySpec", "LabeledDataset", "SignalConfig",
    "generate_clean", "inject", "inject_burst", "inject_spike", "ResidualStats", "compute_stats",
    "detect", "residual", "ContractError", "SimulationError", "TrainingDiverged", "auc", "roc",
    "tpr_fpr_at", "SensorNode", "UploadMessage", "SimConfig", "SimResult", "communication_report",
    "run_simulation",
]
