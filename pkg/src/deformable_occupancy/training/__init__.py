"""Pertes, optimiseur, boucle d'entraînement et évaluation."""

from deformable_occupancy.training.evaluation import evaluate_grids, evaluate_model
from deformable_occupancy.training.trainer import TrainResult, train

__all__ = ["TrainResult", "evaluate_grids", "evaluate_model", "train"]
