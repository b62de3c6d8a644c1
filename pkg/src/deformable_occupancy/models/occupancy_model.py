"""
Modèle complet: gaussiennes canoniques optimisées directement, réseau de
déformation, projecteurs d'alignement et têtes de prédiction.

Les champs des gaussiennes sont stockés sous forme brute (position,
quaternion non normalisé, log-échelle, logit d'opacité, caractéristique)
et activés par `canonical()`.
"""

from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from deformable_occupancy.config import DTYPE, Config, config_from_dict
from deformable_occupancy.data.formats import CheckpointData
from deformable_occupancy.errors import ShapeMismatchError
from deformable_occupancy.models.deformation import (
    DeformationNetwork,
    DeformationOutput,
    deform_frames,
)
from deformable_occupancy.models.distillation import AlignmentProjectors
from deformable_occupancy.models.gaussian import (
    FeatureVolume,
    GaussianSet,
    SemanticLabelGrid,
    VoxelGridSpec,
    normalize_quaternion,
)
from deformable_occupancy.models.splatting import (
    PredictionHeads,
    extract_occupancy,
    occupancy_head,
    semantic_head,
    splat_features,
)
from deformable_occupancy.utils.checkpoint_manager import parameter_digest
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

CANONICAL_MASK = 0.5


class OccupancyModel(nn.Module):
    """
    Conteneur de tous les paramètres entraînables.

    Attributes:
        raw_mu: Positions (N, 3).
        raw_rot: Quaternions non normalisés (N, 4).
        log_scale: Log-échelles (N, 3).
        opacity_logit: Logits d'opacité (N,).
        feat: Caractéristiques (N, C_g).
        deformation: Réseau de déformation.
        projectors: Projecteurs enseignant/élève.
        heads: Têtes d'occupation et de sémantique.

    Example:
        >>> model = OccupancyModel.from_config(config, spec, teacher_channels=128)
        >>> grid = model.predict_occupancy(offset=0)
    """

    def __init__(self, config: Config, spec: VoxelGridSpec, teacher_channels: int) -> None:
        super().__init__()
        self.config = config
        self.spec = spec
        self.teacher_channels = teacher_channels

        mc = config.model
        generator = torch.Generator().manual_seed(config.seed)
        n = mc.num_gaussians

        lo = torch.as_tensor(spec.min_corner, dtype=DTYPE)
        hi = torch.as_tensor(spec.max_corner, dtype=DTYPE)
        mu = lo + torch.rand((n, 3), generator=generator, dtype=DTYPE) * (hi - lo)
        rot = torch.zeros((n, 4), dtype=DTYPE)
        rot[:, 0] = 1.0
        log_scale = torch.full(
            (n, 3), float(np.log(spec.voxel_size * mc.init_scale_multiplier)), dtype=DTYPE
        )
        p = mc.init_opacity
        opacity_logit = torch.full((n,), float(np.log(p / (1.0 - p))), dtype=DTYPE)
        r = mc.init_feature_range
        feat = (torch.rand((n, mc.feature_dim), generator=generator, dtype=DTYPE) * 2 - 1) * r

        self.raw_mu = nn.Parameter(mu)
        self.raw_rot = nn.Parameter(rot)
        self.log_scale = nn.Parameter(log_scale)
        self.opacity_logit = nn.Parameter(opacity_logit)
        self.feat = nn.Parameter(feat)

        self.deformation = DeformationNetwork(
            feature_dim=mc.feature_dim,
            encoding=config.encoding,
            hidden_dim=mc.hidden_dim,
            depth=mc.depth,
            switches=config.deformation,
            generator=generator,
        )
        self.projectors = AlignmentProjectors(
            teacher_channels,
            feature_dim=mc.feature_dim,
            aligned_dim=config.distillation.aligned_dim,
            generator=generator,
        )
        self.heads = PredictionHeads(mc.feature_dim, mc.num_classes, generator, density_input=True)
        self.heads.density_gate(mc.occupancy_gain, mc.density_threshold)

        logger.info(
            "Modele initialise: %d gaussiennes, %d parametres",
            n, sum(t.numel() for t in self.parameters()),
        )

    @classmethod
    def from_config(
        cls, config: Config, spec: VoxelGridSpec, teacher_channels: int
    ) -> "OccupancyModel":
        return cls(config, spec, teacher_channels)

    @classmethod
    def from_checkpoint(cls, ckpt: CheckpointData) -> "OccupancyModel":
        """
        Reconstruit un modèle à partir des métadonnées et des paramètres d'un checkpoint.

        Raises:
            ShapeMismatchError: Métadonnées absentes ou paramètres incompatibles.
        """
        meta = ckpt.metadata
        missing = [k for k in ("config", "grid", "teacher_channels") if k not in meta]
        if missing:
            logger.error("Metadonnees de checkpoint manquantes: %s", missing)
            raise ShapeMismatchError(f"metadonnees de checkpoint manquantes: {missing}")
        model = cls(
            config_from_dict(meta["config"]),
            VoxelGridSpec.from_dict(meta["grid"]),
            int(meta["teacher_channels"]),
        )
        model.load_arrays(ckpt.params)
        return model

    @property
    def num_gaussians(self) -> int:
        return self.raw_mu.shape[0]

    def canonical(self) -> GaussianSet:
        """Ensemble canonique activé (t = 0)."""
        return GaussianSet(
            mu=self.raw_mu,
            rot=normalize_quaternion(self.raw_rot),
            scale=torch.exp(self.log_scale),
            opacity=torch.sigmoid(self.opacity_logit),
            feat=self.feat,
            mask=torch.full((self.num_gaussians,), CANONICAL_MASK, dtype=DTYPE),
        )

    def frames(self, offsets: Sequence[int]) -> DeformationOutput:
        """Déforme l'ensemble canonique vers chaque décalage."""
        return deform_frames(self.canonical(), offsets, self.deformation)

    def semantic_logits(self, gaussians: GaussianSet) -> torch.Tensor:
        return self.heads.semantic_logits(gaussians.feat)

    def volume(self, gaussians: GaussianSet) -> FeatureVolume:
        return splat_features(gaussians, self.spec, self.config.splat)

    def predict(self, gaussians: GaussianSet) -> Tuple[torch.Tensor, torch.Tensor]:
        """Probabilités d'occupation (X, Y, Z) et de classes (X, Y, Z, C)."""
        volume = self.volume(gaussians)
        return occupancy_head(volume, self.heads), semantic_head(volume, self.heads)

    def predict_occupancy(self, offset: int = 0) -> SemanticLabelGrid:
        """Grille sémantique prédite au décalage demandé."""
        with torch.no_grad():
            gaussians = self.frames([offset]).frames[int(offset)]
            p_occ, p_sem = self.predict(gaussians)
        return extract_occupancy(
            p_occ, p_sem, self.spec, self.config.splat.occupancy_threshold
        )

    def named_arrays(self) -> Dict[str, np.ndarray]:
        """Paramètres nommés en tableaux float64, ordre d'enregistrement."""
        return {
            name: t.detach().cpu().numpy().astype(np.float64)
            for name, t in self.state_dict().items()
        }

    def load_arrays(self, params: Dict[str, np.ndarray]) -> None:
        """
        Charge des paramètres nommés.

        Raises:
            ShapeMismatchError: Nom manquant, inattendu ou forme différente.
        """
        state = self.state_dict()
        missing = sorted(set(state) - set(params))
        extra = sorted(set(params) - set(state))
        if missing or extra:
            logger.error("Parametres manquants %s / inattendus %s", missing, extra)
            raise ShapeMismatchError(f"parametres manquants {missing} / inattendus {extra}")
        loaded = {}
        for name, ref in state.items():
            value = torch.as_tensor(np.asarray(params[name]), dtype=DTYPE)
            if tuple(value.shape) != tuple(ref.shape):
                raise ShapeMismatchError(
                    f"{name}: forme {tuple(value.shape)} != {tuple(ref.shape)}"
                )
            loaded[name] = value
        self.load_state_dict(loaded)

    def digest(self) -> str:
        """Empreinte SHA-256 de tous les paramètres."""
        return parameter_digest(self.named_arrays())

    def checkpoint(self, step: int, metadata: Optional[Dict] = None) -> CheckpointData:
        meta = {
            "config": self.config.to_dict(),
            "config_digest": self.config.digest(),
            "grid": self.spec.to_dict(),
            "teacher_channels": self.teacher_channels,
        }
        meta.update(metadata or {})
        return CheckpointData(self.named_arrays(), step, meta)
