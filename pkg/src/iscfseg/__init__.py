"""U-shaped efficient-attention segmentation network with inter-scale context fusion."""

from .config import ConfigError, ModelConfig, RunConfig, desk_config
from .decoder import NetParams, count_params, forward, init_params

__all__ = [
    "ConfigError",
    "ModelConfig",
    "NetParams",
    "RunConfig",
    "count_params",
    "desk_config",
    "forward",
    "init_params",
]

__version__ = "0.1.0"
