"""Mean-field and bandit-scale laboratory for group-normalized policy gradients with noisy rewards."""

from .noise import NoiseSchedule, NoiseSpec, reward_stats, youden
from .simplex import BlockState, decompose, recompose, softmax

__all__ = [
    "BlockState",
    "NoiseSchedule",
    "NoiseSpec",
    "decompose",
    "recompose",
    "reward_stats",
    "softmax",
    "youden",
]

__version__ = "0.1.0"
