"""
Configuration du pipeline d'occupation déformable.

Ce module regroupe les valeurs par défaut documentées, les dataclasses de
configuration de chaque module et la lecture d'un fichier JSON de
configuration.
"""

import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import torch

from deformable_occupancy.errors import (
    ConfigTypeError,
    MissingFileError,
    OutputIOError,
    UnknownKeyError,
)
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

DTYPE = torch.float64

FREE = 255
IGNORE = 255
NUM_CLASSES = 15

# Grille d'evaluation de reference et grille synthetique par defaut
REFERENCE_GRID = {
    "min_corner": (-40.0, -40.0, -1.0),
    "max_corner": (40.0, 40.0, 5.4),
    "voxel_size": 0.4,
}
SYNTHETIC_GRID = {
    "min_corner": (-8.0, -8.0, -1.0),
    "max_corner": (8.0, 8.0, 3.0),
    "voxel_size": 0.5,
}

DEFAULT_IMAGE_SIZE = (64, 112)
DEFAULT_FRAME_OFFSETS = (-8, -6, -4, -2, 0, 2, 4, 6)
RAYIOU_THRESHOLDS = (1.0, 2.0, 4.0)
TEACHER_HALVES = ("both", "spatial", "temporal")
TEACHER_MODES = ("synthetic", "file")


@dataclass(frozen=True)
class EncodingConfig:
    """Bandes de fréquence des encodages et largeur du plongement temporel."""

    L_p: int = 6
    L_t: int = 4
    C_t: int = 32

    def __post_init__(self) -> None:
        _require(self.L_p >= 1 and self.L_t >= 1 and self.C_t >= 1,
                 "encoding: L_p, L_t et C_t doivent etre >= 1")

    @property
    def position_width(self) -> int:
        return 3 * (2 * self.L_p + 1)

    @property
    def time_width(self) -> int:
        return 2 * self.L_t + 1


@dataclass(frozen=True)
class ModelConfig:
    """Taille de l'ensemble de gaussiennes et du réseau de déformation."""

    num_gaussians: int = 512
    feature_dim: int = 32
    hidden_dim: int = 256
    depth: int = 6
    num_classes: int = NUM_CLASSES
    init_scale_multiplier: float = 1.0
    init_opacity: float = 0.1
    init_feature_range: float = 0.01
    occupancy_gain: float = 20.0
    density_threshold: float = 0.15

    def __post_init__(self) -> None:
        _require(self.num_gaussians >= 1, "model.num_gaussians doit etre >= 1")
        _require(self.feature_dim >= 1, "model.feature_dim doit etre >= 1")
        _require(self.hidden_dim >= 1 and self.depth >= 1,
                 "model.hidden_dim et model.depth doivent etre >= 1")
        _require(0.0 < self.init_opacity < 1.0, "model.init_opacity hors de ]0,1[")
        _require(self.init_scale_multiplier > 0, "model.init_scale_multiplier <= 0")
        _require(self.density_threshold >= 0, "model.density_threshold < 0")


@dataclass(frozen=True)
class SplatConfig:
    """Paramètres du splatting gaussienne -> voxels."""

    truncation_sigma: float = 3.0
    weight_epsilon: float = 1e-8
    occupancy_threshold: float = 0.5

    def __post_init__(self) -> None:
        _require(self.truncation_sigma > 0, "splat.truncation_sigma doit etre > 0")
        _require(self.weight_epsilon > 0, "splat.weight_epsilon doit etre > 0")
        _require(0.0 < self.occupancy_threshold < 1.0,
                 "splat.occupancy_threshold hors de ]0,1[")


@dataclass(frozen=True)
class LossWeights:
    """Poids de la perte totale."""

    lambda_seg: float = 1.0
    lambda_dep: float = 0.05
    lambda_distill: float = 1.0
    lambda_def: float = 1.0

    def __post_init__(self) -> None:
        _require_nonnegative(self, "loss_weights")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.lambda_seg, self.lambda_dep, self.lambda_distill, self.lambda_def)


@dataclass(frozen=True)
class DeformationLossWeights:
    """Poids de la régularisation de déformation et du masque de rigidité."""

    lambda_mu: float = 1.0
    lambda_rot: float = 1.0
    lambda_scale: float = 1.0
    lambda_opacity: float = 1.0
    lambda_reg: float = 1e-3
    lambda_mask: float = 1e-2

    def __post_init__(self) -> None:
        _require_nonnegative(self, "deformation_loss")


@dataclass(frozen=True)
class DeformationConfig:
    """Interrupteurs d'ablation du module de déformation."""

    enabled: bool = True
    rotation: bool = True
    scale: bool = True
    opacity: bool = True
    mask: bool = True
    rigid_snap_threshold: float = 0.1

    def __post_init__(self) -> None:
        _require(0.0 <= self.rigid_snap_threshold < 0.5,
                 "deformation.rigid_snap_threshold hors de [0,0.5[")


@dataclass(frozen=True)
class OptimizerConfig:
    """AdamW avec échauffement linéaire puis décroissance cosinus."""

    base_lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_iters: int = 200
    warmup_ratio: float = 0.001
    min_lr_ratio: float = 0.01
    grad_clip_norm: float = 5.0

    def __post_init__(self) -> None:
        _require(self.base_lr > 0, "optimizer.base_lr doit etre > 0")
        _require(self.weight_decay >= 0, "optimizer.weight_decay doit etre >= 0")
        _require(0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0,
                 "optimizer.beta1/beta2 hors de [0,1[")
        _require(self.eps > 0, "optimizer.eps doit etre > 0")
        _require(self.warmup_iters >= 0, "optimizer.warmup_iters doit etre >= 0")
        _require(self.warmup_ratio >= 0, "optimizer.warmup_ratio doit etre >= 0")
        _require(self.min_lr_ratio >= 0, "optimizer.min_lr_ratio doit etre >= 0")
        _require(self.grad_clip_norm > 0, "optimizer.grad_clip_norm doit etre > 0")


@dataclass(frozen=True)
class DistillationConfig:
    """Projection enseignant/élève et source des caractéristiques enseignant."""

    aligned_dim: int = 32
    patch_size: int = 8
    teacher_dim: int = 64
    block_index: int = 22
    teacher_mode: str = "synthetic"
    teacher_path: Optional[str] = None
    teacher_halves: str = "both"

    def __post_init__(self) -> None:
        _require(self.aligned_dim >= 1, "distillation.aligned_dim doit etre >= 1")
        _require(self.patch_size >= 1, "distillation.patch_size doit etre >= 1")
        _require(self.teacher_dim >= 1, "distillation.teacher_dim doit etre >= 1")
        _require(self.teacher_mode in TEACHER_MODES,
                 f"distillation.teacher_mode doit etre parmi {TEACHER_MODES}")
        _require(self.teacher_halves in TEACHER_HALVES,
                 f"distillation.teacher_halves doit etre parmi {TEACHER_HALVES}")
        _require(self.teacher_mode != "file" or self.teacher_path is not None,
                 "distillation.teacher_path requis en mode file")


@dataclass(frozen=True)
class TrainConfig:
    """Boucle d'entraînement: décalages de frames, caméras, journalisation."""

    steps: int = 2000
    frame_offsets: Tuple[int, ...] = DEFAULT_FRAME_OFFSETS
    cameras: Optional[Tuple[int, ...]] = None
    log_every: int = 50
    eval_every: int = 500

    def __post_init__(self) -> None:
        _require(self.steps > 0, "train.steps doit etre > 0")
        _require(len(self.frame_offsets) > 0, "train.frame_offsets vide")
        _require(all(-8 <= o <= 8 for o in self.frame_offsets),
                 "train.frame_offsets hors de [-8,8]")
        _require(self.log_every >= 1 and self.eval_every >= 0,
                 "train.log_every >= 1 et train.eval_every >= 0 requis")


@dataclass(frozen=True)
class EvalConfig:
    """Options d'évaluation."""

    visible_only: bool = False
    rayiou: bool = True
    thresholds: Tuple[float, ...] = RAYIOU_THRESHOLDS
    frame_offsets: Tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        _require(len(self.thresholds) > 0 and all(t > 0 for t in self.thresholds),
                 "eval.thresholds doit contenir des valeurs > 0")


@dataclass(frozen=True)
class SceneConfig:
    """Emplacement du répertoire de scène."""

    path: Optional[str] = None


@dataclass(frozen=True)
class Config:
    """Configuration complète d'une exécution."""

    seed: int = 0
    output_dir: str = "runs/default"
    taxonomy_path: Optional[str] = None
    scene: SceneConfig = field(default_factory=SceneConfig)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    splat: SplatConfig = field(default_factory=SplatConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    deformation_loss: DeformationLossWeights = field(
        default_factory=DeformationLossWeights
    )
    deformation: DeformationConfig = field(default_factory=DeformationConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    distillation: DistillationConfig = field(default_factory=DistillationConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> Dict[str, Any]:
        """Retourne la configuration sous forme de dictionnaire JSON."""
        return _jsonable(asdict(self))

    def digest(self) -> str:
        """Empreinte SHA-256 du JSON canonique de la configuration."""
        payload = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def with_overrides(self, **sections: Any) -> "Config":
        """Copie de la configuration avec des sections remplacées."""
        return replace(self, **sections)


def _require(condition: bool, message: str) -> None:
    if not condition:
        logger.error(message)
        raise ConfigTypeError(message)


def _require_nonnegative(obj: Any, section: str) -> None:
    for f in fields(obj):
        if getattr(obj, f.name) < 0:
            _require(False, f"{section}.{f.name} doit etre >= 0")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _coerce(value: Any, annotation: Any, key: str) -> Any:
    """Vérifie le type JSON d'une valeur et la convertit vers l'annotation."""
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if origin is typing.Union:
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(value, inner, key)

    if is_dataclass(annotation):
        if not isinstance(value, dict):
            raise ConfigTypeError(f"{key}: objet JSON attendu")
        return _build(annotation, value, key)

    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigTypeError(f"{key}: liste JSON attendue")
        return tuple(_coerce(v, args[0], f"{key}[{i}]") for i, v in enumerate(value))

    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigTypeError(f"{key}: booleen attendu")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigTypeError(f"{key}: entier attendu")
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigTypeError(f"{key}: nombre attendu")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigTypeError(f"{key}: chaine attendue")
        return value
    raise ConfigTypeError(f"{key}: type non gere {annotation!r}")


def _build(cls: Any, data: Dict[str, Any], prefix: str = "") -> Any:
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            dotted = f"{prefix}.{key}" if prefix else key
            logger.error("Cle de configuration inconnue: %s", dotted)
            raise UnknownKeyError(f"cle inconnue: {dotted}")
    kwargs = {}
    for key, value in data.items():
        dotted = f"{prefix}.{key}" if prefix else key
        kwargs[key] = _coerce(value, hints[key], dotted)
    return cls(**kwargs)


def config_from_dict(data: Dict[str, Any]) -> Config:
    """
    Construit une configuration à partir d'un dictionnaire JSON.

    Args:
        data: Dictionnaire suivant le schéma documenté.

    Returns:
        Config: Configuration, valeurs par défaut pour les clés absentes.

    Raises:
        UnknownKeyError: Clé inconnue (le chemin pointé est dans le message).
        ConfigTypeError: Type ou valeur hors invariants.
    """
    if not isinstance(data, dict):
        raise ConfigTypeError("la configuration doit etre un objet JSON")
    return _build(Config, data)


def check_paths(config: Config) -> None:
    """Vérifie que tous les chemins référencés existent."""
    referenced = {
        "scene.path": config.scene.path,
        "taxonomy_path": config.taxonomy_path,
        "distillation.teacher_path": config.distillation.teacher_path,
    }
    for key, value in referenced.items():
        if value is not None and not Path(value).exists():
            logger.error("Chemin introuvable pour %s: %s", key, value)
            raise MissingFileError(f"{key}: chemin introuvable {value}")


def echo_config(config: Config, output_dir: Optional[str] = None) -> Path:
    """
    Écrit la configuration résolue dans le répertoire de sortie.

    Returns:
        Path: Chemin du fichier config.json écrit.
    """
    out = Path(output_dir or config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "config.json"
        path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    except OSError as e:
        logger.error("Ecriture de la configuration impossible: %s", e)
        raise OutputIOError(f"ecriture impossible dans {out}: {e}") from e
    return path


def parse_config(path: str, echo: bool = True) -> Config:
    """
    Lit un fichier JSON de configuration.

    Args:
        path: Chemin du fichier JSON.
        echo: Si True, recopie la configuration résolue dans output_dir.

    Returns:
        Config: Configuration complète.

    Raises:
        MissingFileError: Fichier de configuration ou chemin référencé absent.
        UnknownKeyError: Clé inconnue.
        ConfigTypeError: JSON invalide, mauvais type ou valeur hors bornes.

    Example:
        >>> config = parse_config("configs/train.json")
        >>> config.optimizer.base_lr
        0.0001
    """
    config_path = Path(path)
    if not config_path.exists():
        logger.error("Fichier de configuration introuvable: %s", path)
        raise MissingFileError(f"fichier de configuration introuvable: {path}")

    try:
        data = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigTypeError(f"{path}: JSON invalide ({e})") from e

    config = config_from_dict(data)
    check_paths(config)
    logger.info("Configuration chargee depuis %s (digest %s)", path, config.digest()[:12])

    if echo:
        echo_config(config)
    return config
