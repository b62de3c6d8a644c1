"""Gestionnaire de checkpoints DEGO-CKPT1 d'un répertoire d'exécution."""

import hashlib
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from deformable_occupancy.data.formats import (
    CheckpointData,
    read_checkpoint,
    write_checkpoint,
)
from deformable_occupancy.errors import DigestMismatchError, MissingFileError
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

CHECKPOINT_SUFFIX = ".ckpt"


def parameter_digest(params: Dict[str, np.ndarray]) -> str:
    """Empreinte SHA-256 des paramètres (noms triés, valeurs f64 little-endian).

    Args:
        params: Nom -> tableau.

    Returns:
        Empreinte hexadécimale.
    """
    h = hashlib.sha256()
    for name in sorted(params):
        value = np.ascontiguousarray(np.asarray(params[name], dtype="<f8"))
        h.update(name.encode("utf-8"))
        h.update(str(value.shape).encode("ascii"))
        h.update(value.tobytes())
    return h.hexdigest()


class CheckpointManager:
    """Sauvegarde, relecture et suppression des checkpoints d'une exécution."""

    def __init__(self, run_dir: str = "runs/default"):
        """Initialise le gestionnaire.

        Args:
            run_dir: Repertoire de l'execution
        """
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def get_checkpoint_path(self, name: str) -> Path:
        """Retourne le chemin du fichier checkpoint.

        Args:
            name: Nom du checkpoint (sans extension)

        Returns:
            Chemin complet du fichier
        """
        return self.run_dir / f"{name}{CHECKPOINT_SUFFIX}"

    def checkpoint_exists(self, name: str) -> bool:
        """Verifie si le checkpoint existe.

        Args:
            name: Nom du checkpoint

        Returns:
            True si le fichier existe
        """
        path = self.get_checkpoint_path(name)
        exists = path.exists()

        if exists:
            size = path.stat().st_size / (1024 * 1024)
            logger.info("Checkpoint trouve: %s (%.1f MB)", path, size)
        else:
            logger.warning("Checkpoint introuvable: %s", path)

        return exists

    def save_checkpoint(self, name: str, ckpt: CheckpointData) -> Path:
        """Sauvegarde un checkpoint.

        Args:
            name: Nom du checkpoint
            ckpt: Parametres, pas et metadonnees

        Returns:
            Chemin ecrit

        Raises:
            OutputIOError: Ecriture impossible.
        """
        path = write_checkpoint(self.get_checkpoint_path(name), ckpt)
        logger.info(
            "Checkpoint sauvegarde: %s (pas %d, %d tenseurs)", path, ckpt.step, len(ckpt.params)
        )
        return path

    def load_checkpoint(self, name: str) -> CheckpointData:
        """Charge un checkpoint.

        Args:
            name: Nom du checkpoint

        Returns:
            CheckpointData relu

        Raises:
            MissingFileError: Fichier absent.
            BadMagicError, TruncatedFileError: Fichier corrompu.
        """
        path = self.get_checkpoint_path(name)
        if not path.exists():
            logger.error("Checkpoint introuvable: %s", path)
            raise MissingFileError(f"checkpoint introuvable: {path}")

        ckpt = read_checkpoint(path)
        logger.info("Checkpoint charge: %s (pas %d)", path, ckpt.step)
        return ckpt

    def delete_checkpoint(self, name: str) -> bool:
        """Supprime un checkpoint.

        Args:
            name: Nom du checkpoint

        Returns:
            True si un fichier a ete supprime
        """
        path = self.get_checkpoint_path(name)

        if not path.exists():
            logger.warning("Checkpoint inexistant: %s", path)
            return False

        path.unlink()
        logger.info("Checkpoint supprime: %s", path)
        return True


def load_checkpoint_file(path: str, expected_digest: Optional[str] = None) -> CheckpointData:
    """
    Charge un checkpoint par chemin et vérifie l'empreinte de ses paramètres.

    L'empreinte de référence est expected_digest, ou à défaut celle enregistrée
    dans les métadonnées (clé parameter_digest) quand elle existe.

    Raises:
        MissingFileError: Fichier absent.
        DigestMismatchError: Paramètres différents de ceux enregistrés.
    """
    path = Path(path)
    if not path.exists():
        logger.error("Checkpoint introuvable: %s", path)
        raise MissingFileError(f"checkpoint introuvable: {path}")
    ckpt = read_checkpoint(path)
    if expected_digest is None:
        expected_digest = ckpt.metadata.get("parameter_digest")
    if expected_digest is not None and parameter_digest(ckpt.params) != expected_digest:
        logger.error("Empreinte de parametres inattendue: %s", path)
        raise DigestMismatchError(f"{path}: empreinte de parametres inattendue")
    return ckpt
