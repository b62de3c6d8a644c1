"""
Module de configuration du logger pour l'application.

Fournit des fonctions pour initialiser et configurer les loggers
avec différents niveaux de verbosité et handlers. Le niveau par défaut
est lu dans la variable d'environnement DEGO_LOG (error, info, debug),
éventuellement définie dans un fichier .env.
"""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

LOG_ENV_VAR = "DEGO_LOG"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
ALLOWED_LEVELS = {"error": "ERROR", "info": "INFO", "debug": "DEBUG"}


def resolve_level(value: Optional[str] = None) -> str:
    """
    Convertit une valeur DEGO_LOG en niveau logging.

    Args:
        value: Valeur brute (error, info, debug). Si None, lue dans
            l'environnement après chargement d'un éventuel fichier .env.

    Returns:
        str: Nom du niveau logging (ERROR, INFO ou DEBUG).
    """
    if value is None:
        load_dotenv()
        value = os.environ.get(LOG_ENV_VAR, "info")

    level = ALLOWED_LEVELS.get(value.strip().lower())
    if level is None:
        logging.getLogger(__name__).warning(
            "Valeur %s=%r invalide, utilisation de info", LOG_ENV_VAR, value
        )
        return "INFO"
    return level


def setup_logger(
    name: str, log_file: Optional[str] = None, level: Optional[str] = None
) -> logging.Logger:
    """
    Configure et retourne un logger.

    Args:
        name: Nom du logger.
        log_file: Chemin optionnel vers le fichier de log.
        level: Niveau de log (DEBUG, INFO, ERROR...). Si None, DEGO_LOG.

    Returns:
        logging.Logger: Logger configuré.
    """
    level = (level or resolve_level()).upper()
    logger = logging.getLogger(name)
    logger.setLevel(getattr(logging, level))

    formatter = logging.Formatter(LOG_FORMAT)

    # Éviter les doublons de handlers
    if not any(type(h) is logging.StreamHandler for h in logger.handlers):
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

    for handler in logger.handlers:
        handler.setLevel(getattr(logging, level))

    # File handler (optionnel)
    if log_file:
        log_path = Path(log_file).resolve()
        known = {
            Path(h.baseFilename).resolve()
            for h in logger.handlers
            if isinstance(h, logging.FileHandler)
        }
        if log_path not in known:
            log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_path)
            file_handler.setLevel(getattr(logging, level))
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

    return logger


def get_logger(name: str) -> logging.Logger:
    """
    Récupère ou crée un logger de module.

    Les loggers du paquet propagent vers le logger de tête de paquet
    (``deformable_occupancy``); s'il n'a encore aucun handler, un handler
    console minimal y est installé au niveau DEGO_LOG.

    Args:
        name: Nom du logger (généralement __name__).

    Returns:
        logging.Logger: Logger configuré.
    """
    logger = logging.getLogger(name)
    package_logger = logging.getLogger(name.split(".")[0])

    if not package_logger.handlers and not logging.getLogger().handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        package_logger.addHandler(handler)
        package_logger.setLevel(getattr(logging, resolve_level()))

    return logger
