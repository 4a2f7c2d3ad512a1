# __init__.py

from .config_manager import load_settings, load_json, resolve_settings, build_run_config, RunConfig
from .logger import setup_logger, log_flag
from .initialize import initialize_system
from .checkpoint import Checkpoint, save_checkpoint, load_checkpoint
from .run_tracker import log_training_step

__all__ = [
    "load_settings", "load_json", "resolve_settings", "build_run_config", "RunConfig",
    "setup_logger", "log_flag",
    "initialize_system",
    "Checkpoint", "save_checkpoint", "load_checkpoint",
    "log_training_step",
]
