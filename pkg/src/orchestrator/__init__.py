"""
Orchestration of training, evaluation and ablation runs.
"""
from .ablation import load_presets, run_ablation
from .evaluation import run_eval
from .training import TrainingRun, TrainResult, run_train

__all__ = ["TrainResult", "TrainingRun", "load_presets", "run_ablation", "run_eval", "run_train"]
