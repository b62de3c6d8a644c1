"""Utilitaires: journalisation, lancer de rayons, métriques, checkpoints, figures."""

from deformable_occupancy.utils.logger import get_logger, setup_logger

__all__ = ["get_logger", "setup_logger"]
