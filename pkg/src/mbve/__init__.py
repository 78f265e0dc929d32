"""Soft Actor-Critic with model-based and oracle-based value expansion."""

from .config import TrainConfig
from .training import RunMetrics, train, train_run

__all__ = ["TrainConfig", "RunMetrics", "train", "train_run"]
__version__ = "0.1.0"
