from .config import ExperimentConfig, load_config
from .evaluate import evaluate_positive_collapse, evaluate_rollout
from .plot import plot
from .train import Trainer, TrainingFault, read_metrics, train

__all__ = ["ExperimentConfig", "Trainer", "TrainingFault", "evaluate_positive_collapse", "evaluate_rollout",
           "load_config", "plot", "read_metrics", "train"]
