"""Multi-turn policy optimization with similarity-weighted (SPO) and group-mean (GRPO) baselines."""

__version__ = "0.1.0"

from .advantage import AdvantageConfig, compute_advantage, grpo_advantage, spo_advantage, spo_weights
from .kernels import BACKEND
from .trajectory import RolloutGroup, Trajectory, Turn

__all__ = [
    "AdvantageConfig",
    "BACKEND",
    "RolloutGroup",
    "Trajectory",
    "Turn",
    "__version__",
    "compute_advantage",
    "grpo_advantage",
    "spo_advantage",
    "spo_weights",
]
