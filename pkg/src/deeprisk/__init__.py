"""Learned latent risk factors, a factor covariance pipeline and minimum-variance portfolios."""

from .errors import ConfigError, DataError, DeepRiskError, NumericalError
from .factornet import FactorMatrix, NetConfig, forward, init_params
from .objective import LossConfig, multitask_loss, r_squared, vif_trace
from .panel import PanelDataset, load_panel, split
from .synth import SynthSpec, generate_panel
from .trainer import TrainConfig, infer_factors, train

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DeepRiskError",
    "FactorMatrix",
    "LossConfig",
    "NetConfig",
    "NumericalError",
    "PanelDataset",
    "SynthSpec",
    "TrainConfig",
    "forward",
    "generate_panel",
    "infer_factors",
    "init_params",
    "load_panel",
    "multitask_loss",
    "r_squared",
    "split",
    "train",
    "vif_trace",
]
