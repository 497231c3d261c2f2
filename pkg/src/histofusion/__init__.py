"""Desk-scale nighttime dehazing network with histogram attention and frequency refinement."""
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ModelConfig, load_config, parse_config_text
from .network import HistoFusionNet, build_model, forward, parameter_count

__version__ = "0.1.0"

__all__ = [
    "HistoFusionNet", "ModelConfig", "build_model", "forward", "load_checkpoint", "load_config",
    "parameter_count", "parse_config_text", "save_checkpoint",
]
