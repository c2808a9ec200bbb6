"""Cascade popularity prediction with multi-hop influence and time-weighted snapshots."""

from .cascade import Activation, Cascade, ConfigError, DataError, ObservationConfig, UserIndex
from .influence import HopSampleConfig
from .network import CasCIFF, ModelConfig
from .training import TrainConfig

__version__ = "0.1.0"
