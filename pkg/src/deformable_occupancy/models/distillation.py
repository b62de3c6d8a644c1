"""
Distillation factorisée de caractéristiques.

Les caractéristiques enseignant de la frame de référence concatènent deux
moitiés de canaux (bloc d'attention inter-caméras puis bloc d'attention
inter-frames). Elles sont projetées vers la largeur alignée C_a puis
suréchantillonnées à la taille du rendu; l'élève projette ses
caractéristiques de gaussiennes vers C_a avant rendu. La perte est
1 - cos entre les deux cartes, moyennée sur les pixels valides.

Deux fournisseurs d'enseignant: un fichier DEGO-TF1 produit hors ligne, ou
un enseignant synthétique dérivé de la vérité terrain d'une scène.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from deformable_occupancy.config import DTYPE, NUM_CLASSES
from deformable_occupancy.data import formats
from deformable_occupancy.data.synthetic_scene import SyntheticScene, flow_bins, flow_grid
from deformable_occupancy.errors import (
    MissingGroundTruthError,
    NonFiniteValueError,
    ShapeMismatchError,
)
from deformable_occupancy.models.encoding import init_linear
from deformable_occupancy.utils.logger import get_logger
from deformable_occupancy.utils.raycast import cast_rays

logger = get_logger(__name__)

NORM_EPS = 1e-8


@dataclass
class TeacherFeatureStack:
    """
    Caractéristiques enseignant par vue à la frame de référence.

    Attributes:
        features: (V, H', W', canaux) float32; les canaux sont
            [spatial | temporel] quand les deux moitiés sont présentes.
        block_index: Indice du bloc enseignant d'origine.
        frame: Frame de référence (toujours 0).
    """

    features: np.ndarray
    block_index: int = 22
    frame: int = 0

    def __post_init__(self) -> None:
        if self.features.ndim != 4:
            raise ShapeMismatchError(
                f"pile enseignant de forme {self.features.shape}, rang 4 attendu"
            )
        if not np.all(np.isfinite(self.features)):
            logger.error("Pile enseignant non finie")
            raise NonFiniteValueError("caracteristiques enseignant non finies")

    @property
    def num_views(self) -> int:
        return self.features.shape[0]

    @property
    def grid_size(self) -> Tuple[int, int]:
        return self.features.shape[1], self.features.shape[2]

    @property
    def channels(self) -> int:
        return self.features.shape[3]

    def select_halves(self, halves: str = "both") -> "TeacherFeatureStack":
        """
        Garde les deux moitiés de canaux, ou seulement la spatiale ou la temporelle.
        """
        if halves == "both":
            return self
        if self.channels % 2:
            raise ShapeMismatchError(f"{self.channels} canaux: moitiés indéfinies")
        half = self.channels // 2
        part = self.features[..., :half] if halves == "spatial" else self.features[..., half:]
        return TeacherFeatureStack(np.ascontiguousarray(part), self.block_index, self.frame)


class AlignmentProjectors(nn.Module):
    """Projections enseignant (canaux -> C_a) et élève (C_g -> C_a)."""

    def __init__(
        self,
        teacher_channels: int,
        feature_dim: int = 32,
        aligned_dim: int = 32,
        generator: Optional[torch.Generator] = None,
    ) -> None:
        super().__init__()
        if aligned_dim < 1:
            raise ShapeMismatchError("C_a doit etre >= 1")
        self.aligned_dim = aligned_dim
        self.teacher_proj = init_linear(
            nn.Linear(teacher_channels, aligned_dim, dtype=DTYPE), generator
        )
        self.student_proj = init_linear(
            nn.Linear(feature_dim, aligned_dim, dtype=DTYPE), generator
        )


def project_teacher(
    stack: TeacherFeatureStack,
    projectors: AlignmentProjectors,
    target_h: int,
    target_w: int,
) -> torch.Tensor:
    """
    Projette chaque cellule de patch vers C_a puis suréchantillonne en bilinéaire.

    Convention align-corners-false: les centres d'échantillons sont en
    (i + 0.5) / n.

    Returns:
        torch.Tensor: (V, target_h, target_w, C_a).

    Raises:
        ShapeMismatchError: Canaux incompatibles avec teacher_proj.
    """
    if stack.channels != projectors.teacher_proj.in_features:
        logger.error(
            "Pile enseignant a %d canaux, projecteur attend %d",
            stack.channels, projectors.teacher_proj.in_features,
        )
        raise ShapeMismatchError(
            f"{stack.channels} canaux != {projectors.teacher_proj.in_features}"
        )
    cells = projectors.teacher_proj(torch.as_tensor(stack.features, dtype=DTYPE))
    grid = cells.permute(0, 3, 1, 2)
    upsampled = F.interpolate(
        grid, size=(target_h, target_w), mode="bilinear", align_corners=False
    )
    return upsampled.permute(0, 2, 3, 1)


def project_student(feat: torch.Tensor, projectors: AlignmentProjectors) -> torch.Tensor:
    """Charges utiles de distillation par gaussienne, (N, C_a)."""
    if feat.shape[-1] != projectors.student_proj.in_features:
        raise ShapeMismatchError(
            f"caracteristiques de largeur {feat.shape[-1]} != "
            f"{projectors.student_proj.in_features}"
        )
    return projectors.student_proj(feat)


def distillation_loss(
    teacher_maps: torch.Tensor,
    student_maps: torch.Tensor,
    valid_mask: torch.Tensor,
    return_excluded: bool = False,
) -> Union[torch.Tensor, Tuple[torch.Tensor, int]]:
    """
    Moyenne de 1 - cos(T'(u), S'(u)) sur les pixels valides de toutes les vues.

    Les vecteurs de norme < 1e-8 sont écartés et comptés comme exclus.

    Args:
        teacher_maps: (..., H, W, C_a).
        student_maps: Même forme.
        valid_mask: (..., H, W) booléen (alpha >= 0.01).
        return_excluded: Retourner aussi le nombre de pixels exclus.

    Returns:
        Scalaire dans [0, 2], 0 s'il n'y a aucun pixel valide.
    """
    if teacher_maps.shape != student_maps.shape or valid_mask.shape != teacher_maps.shape[:-1]:
        logger.error(
            "Formes enseignant %s / eleve %s / masque %s incompatibles",
            tuple(teacher_maps.shape), tuple(student_maps.shape), tuple(valid_mask.shape),
        )
        raise ShapeMismatchError("cartes enseignant/eleve/masque incompatibles")

    t = teacher_maps[valid_mask]
    s = student_maps[valid_mask]
    with torch.no_grad():
        keep = (torch.linalg.vector_norm(t, dim=-1) >= NORM_EPS) & (
            torch.linalg.vector_norm(s, dim=-1) >= NORM_EPS
        )
    excluded = int((~keep).sum())

    if not bool(keep.any()):
        loss = torch.zeros((), dtype=DTYPE)
    else:
        t, s = t[keep], s[keep]
        cos = (t * s).sum(-1) / (
            torch.linalg.vector_norm(t, dim=-1) * torch.linalg.vector_norm(s, dim=-1)
        )
        loss = (1.0 - cos).mean()

    if excluded:
        logger.debug("Distillation: %d pixels exclus (norme nulle)", excluded)
    return (loss, excluded) if return_excluded else loss


def load_teacher_features(path: Union[str, Path]) -> TeacherFeatureStack:
    """
    Charge une pile enseignant depuis un fichier DEGO-TF1.

    Raises:
        BadMagicError, TruncatedFileError, NonFiniteValueError.
    """
    features, block_index = formats.read_teacher_file(path)
    stack = TeacherFeatureStack(features, block_index)
    logger.info(
        "Caracteristiques enseignant chargees: %d vues, grille %s, %d canaux",
        stack.num_views, stack.grid_size, stack.channels,
    )
    return stack


def save_teacher_features(path: Union[str, Path], stack: TeacherFeatureStack) -> Path:
    return formats.write_teacher_file(path, stack.features, stack.block_index)


def embedding_table(rows: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """
    Table de plongements (rows, dim) à lignes orthonormées si rows <= dim,
    sinon lignes aléatoires normalisées.
    """
    if rows <= dim:
        q, _ = np.linalg.qr(rng.standard_normal((dim, rows)))
        return q.T.copy()
    table = rng.standard_normal((rows, dim))
    return table / np.linalg.norm(table, axis=1, keepdims=True)


def _patch_majority(codes: np.ndarray, patch_size: int, num_codes: int) -> np.ndarray:
    h, w = codes.shape
    ph, pw = h // patch_size, w // patch_size
    blocks = codes[: ph * patch_size, : pw * patch_size].reshape(ph, patch_size, pw, patch_size)
    blocks = blocks.transpose(0, 2, 1, 3).reshape(ph, pw, -1)
    result = np.empty((ph, pw), dtype=np.int64)
    for i in range(ph):
        for j in range(pw):
            result[i, j] = int(np.argmax(np.bincount(blocks[i, j], minlength=num_codes)))
    return result


def synth_teacher(
    scene: SyntheticScene,
    cameras: Optional[Sequence[int]] = None,
    patch_size: int = 8,
    teacher_dim: int = 64,
    seed: Optional[int] = None,
    block_index: int = 22,
    num_classes: int = NUM_CLASSES,
) -> TeacherFeatureStack:
    """
    Enseignant synthétique déterministe dérivé de la vérité terrain.

    Pour chaque vue et chaque cellule de patch, code majoritaire des pixels:
    moitié spatiale = plongement de (classe ou ciel, vue), moitié temporelle
    = plongement de (classe ou ciel, classe de flot de scène). Les tables
    de plongement sont tirées d'une graine fixe.

    Args:
        scene: SyntheticScene avec sa frame 0.
        cameras: Indices de caméras (toutes par défaut).
        patch_size: Côté d'un patch en pixels.
        teacher_dim: Canaux par moitié (C_T).
        seed: Graine des tables; celle de la recette par défaut.
        block_index: Métadonnée d'indice de bloc.
        num_classes: Nombre de classes C (le ciel prend l'identifiant C).

    Returns:
        TeacherFeatureStack: (V, H/patch, W/patch, 2 * teacher_dim).

    Raises:
        MissingGroundTruthError: Vérité terrain de la frame 0 absente.
    """
    if 0 not in getattr(scene, "grids", {}):
        logger.error("Verite terrain de la frame 0 absente")
        raise MissingGroundTruthError("la scene ne contient pas la frame 0")

    views: List[int] = list(range(len(scene.cameras))) if cameras is None else list(cameras)
    seed = scene.recipe.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    num_views = len(scene.cameras)
    num_bins = 4
    spatial_table = embedding_table((num_classes + 1) * num_views, teacher_dim, rng)
    temporal_table = embedding_table((num_classes + 1) * num_bins, teacher_dim, rng)

    grid = scene.grids[0]
    bins = flow_bins(flow_grid(scene, 0))

    stacks = []
    for v in views:
        camera = scene.cameras[v]
        shape = (camera.height, camera.width)
        origins, directions, _ = camera.pixel_rays()
        hits = cast_rays(grid.labels, grid.spec, origins, directions)
        vox = hits.voxel[hits.hit]

        cls = np.full(hits.hit.shape, num_classes, dtype=np.int64)
        cls[hits.hit] = grid.labels[vox[:, 0], vox[:, 1], vox[:, 2]]
        cls = cls.reshape(shape)
        pixel_bins = np.zeros(hits.hit.shape, dtype=np.int64)
        pixel_bins[hits.hit] = bins[vox[:, 0], vox[:, 1], vox[:, 2]]
        pixel_bins = pixel_bins.reshape(shape)

        spatial_codes = _patch_majority(cls * num_views + v, patch_size,
                                        (num_classes + 1) * num_views)
        temporal_codes = _patch_majority(cls * num_bins + pixel_bins, patch_size,
                                         (num_classes + 1) * num_bins)
        stacks.append(
            np.concatenate([spatial_table[spatial_codes], temporal_table[temporal_codes]],
                           axis=-1)
        )

    features = np.stack(stacks).astype(np.float32)
    logger.info(
        "Enseignant synthetique: %d vues, grille %s, %d canaux",
        features.shape[0], features.shape[1:3], features.shape[3],
    )
    return TeacherFeatureStack(features, block_index)
