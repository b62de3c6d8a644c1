"""
Formats binaires du paquet.

    DEGO-VOX1   grilles d'étiquettes (u8 par voxel)
    DEGO-IMG1   cartes flottantes H x W x P (f32)
    DEGO-TF1    caractéristiques enseignant (f32)
    DEGO-CKPT1  checkpoints (f64) suivis de métadonnées JSON

Tous les entiers et flottants sont little-endian.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from deformable_occupancy.errors import (
    BadMagicError,
    NonFiniteValueError,
    OutputIOError,
    ShapeMismatchError,
    TruncatedFileError,
)
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

VOX_MAGIC = b"DEGO-VOX1".ljust(16, b"\0")
IMG_MAGIC = b"DEGO-IMG1"
TF_MAGIC = b"DEGO-TF1"
CKPT_MAGIC = b"DEGO-CKPT1"
TF_VERSION = 1
CKPT_VERSION = 1

PathLike = Union[str, Path]


class _Reader:
    """Curseur de lecture qui lève TruncatedFileError en fin de tampon."""

    def __init__(self, buffer: bytes, path: PathLike) -> None:
        self.buffer = buffer
        self.path = path
        self.pos = 0

    def remaining(self) -> int:
        return len(self.buffer) - self.pos

    def take(self, size: int) -> bytes:
        if size < 0 or self.pos + size > len(self.buffer):
            logger.error("Fichier tronque: %s", self.path)
            raise TruncatedFileError(
                f"{self.path}: {size} octets attendus, {self.remaining()} disponibles"
            )
        chunk = self.buffer[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype).copy()


def _read_bytes(path: PathLike, magic: bytes) -> _Reader:
    data = Path(path).read_bytes()
    reader = _Reader(data, path)
    if len(data) < len(magic) or data[:len(magic)] != magic:
        logger.error("Signature invalide pour %s", path)
        raise BadMagicError(f"{path}: signature {magic!r} attendue")
    reader.pos = len(magic)
    return reader


def _write_bytes(path: PathLike, payload: bytes) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as e:
        logger.error("Ecriture impossible: %s (%s)", path, e)
        raise OutputIOError(f"ecriture impossible: {path} ({e})") from e
    return path


def _check_finite(values: np.ndarray, path: PathLike) -> None:
    if not np.all(np.isfinite(values)):
        logger.error("Valeurs non finies dans %s", path)
        raise NonFiniteValueError(f"{path}: valeurs non finies")


# ---------------------------------------------------------------------------
# Grilles de voxels
# ---------------------------------------------------------------------------


def write_voxels(path: PathLike, labels: np.ndarray) -> Path:
    """
    Écrit une grille d'étiquettes (X, Y, Z) au format DEGO-VOX1.

    L'indice x varie le plus lentement, z le plus vite.
    """
    labels = np.asarray(labels)
    if labels.ndim != 3:
        raise ShapeMismatchError(f"grille de rang {labels.ndim} != 3")
    header = VOX_MAGIC + struct.pack("<3I", *labels.shape)
    body = np.ascontiguousarray(labels, dtype=np.uint8).tobytes(order="C")
    return _write_bytes(path, header + body)


def read_voxels(path: PathLike) -> np.ndarray:
    """Relit une grille DEGO-VOX1, tableau uint8 (X, Y, Z)."""
    reader = _read_bytes(path, VOX_MAGIC)
    dims = reader.unpack("<3I")
    count = int(np.prod(dims))
    return reader.array("u1", count).reshape(dims)


# ---------------------------------------------------------------------------
# Images flottantes
# ---------------------------------------------------------------------------


def write_image(path: PathLike, image: np.ndarray) -> Path:
    """Écrit une carte (H, W) ou (H, W, P) au format DEGO-IMG1."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[..., None]
    if image.ndim != 3:
        raise ShapeMismatchError(f"image de rang {image.ndim} invalide")
    header = IMG_MAGIC + struct.pack("<3I", *image.shape)
    body = np.ascontiguousarray(image, dtype="<f4").tobytes(order="C")
    return _write_bytes(path, header + body)


def read_image(path: PathLike) -> np.ndarray:
    """Relit une carte DEGO-IMG1, tableau float32 (H, W, P)."""
    reader = _read_bytes(path, IMG_MAGIC)
    h, w, p = reader.unpack("<3I")
    values = reader.array("<f4", h * w * p).reshape(h, w, p)
    _check_finite(values, path)
    return values


# ---------------------------------------------------------------------------
# Caracteristiques enseignant
# ---------------------------------------------------------------------------


def write_teacher_file(path: PathLike, features: np.ndarray, block_index: int) -> Path:
    """
    Écrit des caractéristiques enseignant (V, H', W', canaux) au format DEGO-TF1.
    """
    features = np.asarray(features)
    if features.ndim != 4:
        raise ShapeMismatchError(f"pile enseignant de rang {features.ndim} != 4")
    views, h, w, channels = features.shape
    header = TF_MAGIC + struct.pack(
        "<6I", TF_VERSION, views, h, w, channels, block_index
    )
    body = np.ascontiguousarray(features, dtype="<f4").tobytes(order="C")
    return _write_bytes(path, header + body)


def read_teacher_file(path: PathLike) -> Tuple[np.ndarray, int]:
    """
    Relit un fichier DEGO-TF1.

    Returns:
        Tuple[np.ndarray, int]: Caractéristiques float32 (V, H', W', canaux)
        et indice de bloc.

    Raises:
        BadMagicError, TruncatedFileError, NonFiniteValueError.
    """
    reader = _read_bytes(path, TF_MAGIC)
    version, views, h, w, channels, block_index = reader.unpack("<6I")
    if version != TF_VERSION:
        raise BadMagicError(f"{path}: version {version} non supportee")
    values = reader.array("<f4", views * h * w * channels).reshape(views, h, w, channels)
    _check_finite(values, path)
    return values, block_index


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class CheckpointData:
    """Paramètres nommés, pas d'optimisation et métadonnées d'un checkpoint."""

    params: Dict[str, np.ndarray]
    step: int = 0
    metadata: Dict[str, Any] = field(default_factory=dict)


def encode_checkpoint(ckpt: CheckpointData) -> bytes:
    """Sérialise un checkpoint DEGO-CKPT1 (paramètres en f64, ordre d'insertion)."""
    chunks = [CKPT_MAGIC, struct.pack("<IQI", CKPT_VERSION, ckpt.step, len(ckpt.params))]
    for name, value in ckpt.params.items():
        value = np.asarray(value, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        chunks.append(np.ascontiguousarray(value).tobytes(order="C"))
    meta = json.dumps(ckpt.metadata, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta)) + meta)
    return b"".join(chunks)


def write_checkpoint(path: PathLike, ckpt: CheckpointData) -> Path:
    return _write_bytes(path, encode_checkpoint(ckpt))


def read_checkpoint(path: PathLike) -> CheckpointData:
    """
    Relit un checkpoint DEGO-CKPT1.

    Un fichier sans bloc de métadonnées final donne des métadonnées vides.
    """
    reader = _read_bytes(path, CKPT_MAGIC)
    version, step, count = reader.unpack("<IQI")
    if version != CKPT_VERSION:
        raise BadMagicError(f"{path}: version {version} non supportee")

    params: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        params[name] = reader.array("<f8", size).reshape(shape)
        _check_finite(params[name], path)

    metadata: Dict[str, Any] = {}
    if reader.remaining():
        (meta_len,) = reader.unpack("<I")
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    return CheckpointData(params, int(step), metadata)
