"""
Lecture et écriture des répertoires de scène.

Disposition:

    scene.json                               recette, caméras, décalages, empreinte
    gt/frame_{k}.vox                         vérité terrain (DEGO-VOX1)
    labels/frame_{k}_cam_{v}.depth.img       profondeur (DEGO-IMG1, P = 1)
    labels/frame_{k}_cam_{v}.seg.img         segmentation (DEGO-IMG1, P = 1)

k est l'indice de la frame dans la liste frame_offsets de scene.json.
"""

import json
from pathlib import Path
from typing import Dict, List, Union

import numpy as np

from deformable_occupancy.data.formats import (
    read_image,
    read_voxels,
    write_image,
    write_voxels,
)
from deformable_occupancy.data.synthetic_scene import (
    SceneRecipe,
    SyntheticScene,
    scene_hash,
)
from deformable_occupancy.errors import (
    DigestMismatchError,
    MissingGroundTruthError,
    OutputIOError,
    ShapeMismatchError,
)
from deformable_occupancy.models.gaussian import (
    CameraModel,
    SemanticLabelGrid,
    VoxelGridSpec,
)
from deformable_occupancy.utils.logger import get_logger

logger = get_logger(__name__)

SCENE_FILE = "scene.json"


def frame_file(k: int) -> str:
    return f"gt/frame_{k}.vox"


def label_files(k: int, v: int) -> List[str]:
    return [f"labels/frame_{k}_cam_{v}.depth.img", f"labels/frame_{k}_cam_{v}.seg.img"]


def save_scene(scene: SyntheticScene, out_dir: Union[str, Path]) -> Path:
    """
    Écrit une scène dans un répertoire.

    Args:
        scene: Scène générée.
        out_dir: Répertoire cible (créé si besoin).

    Returns:
        Path: Répertoire écrit.

    Raises:
        OutputIOError: Répertoire non inscriptible.
    """
    out = Path(out_dir)
    offsets = scene.frame_offsets
    for k, offset in enumerate(offsets):
        write_voxels(out / frame_file(k), scene.grids[offset].labels)
        for v in range(len(scene.cameras)):
            depth_name, seg_name = label_files(k, v)
            write_image(out / depth_name, scene.depth[offset][v])
            write_image(out / seg_name, scene.seg[offset][v].astype(np.float32))

    meta = {
        "recipe": scene.recipe.to_dict(),
        "grid": scene.spec.to_dict(),
        "frame_offsets": offsets,
        "cameras": [c.to_dict() for c in scene.cameras],
        "num_classes": scene.grids[offsets[0]].num_classes,
        "digest": scene_hash(scene),
    }
    try:
        (out / SCENE_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True))
    except OSError as e:
        logger.error("Ecriture de la scene impossible: %s", e)
        raise OutputIOError(f"ecriture impossible: {out / SCENE_FILE} ({e})") from e

    logger.info("Scene ecrite dans %s (%d frames)", out, len(offsets))
    return out


class SceneLoader:
    """
    Charge un répertoire de scène et reconstruit la SyntheticScene.

    Attributes:
        scene_path: Répertoire de la scène.

    Example:
        >>> loader = SceneLoader("runs/scene")
        >>> scene = loader.load()
        >>> scene.frame_offsets
        [-8, -7, ..., 8]
    """

    REQUIRED_FILES = [SCENE_FILE]

    def __init__(self, scene_path: Union[str, Path]) -> None:
        """
        Args:
            scene_path: Répertoire de la scène.

        Raises:
            MissingGroundTruthError: Répertoire inexistant.
        """
        self.scene_path = Path(scene_path)
        if not self.scene_path.is_dir():
            logger.error("Le dossier %s n'existe pas", scene_path)
            raise MissingGroundTruthError(f"dossier de scene introuvable: {scene_path}")

    def read_meta(self) -> Dict:
        path = self.scene_path / SCENE_FILE
        if not path.exists():
            logger.error("Fichier manquant: %s", path)
            raise MissingGroundTruthError(f"fichier manquant: {path}")
        return json.loads(path.read_text(encoding="utf-8"))

    def check_required_files(self) -> List[str]:
        """
        Liste les fichiers requis absents (scene.json, grilles, étiquettes).

        Returns:
            List[str]: Fichiers manquants, vide si la scène est complète.
        """
        missing = [f for f in self.REQUIRED_FILES if not (self.scene_path / f).exists()]
        if missing:
            logger.error("%d fichiers manquants", len(missing))
            return missing

        meta = self.read_meta()
        for k in range(len(meta["frame_offsets"])):
            names = [frame_file(k)]
            for v in range(len(meta["cameras"])):
                names += label_files(k, v)
            missing += [n for n in names if not (self.scene_path / n).exists()]

        for name in missing:
            logger.warning("Fichier manquant: %s", name)
        if missing:
            logger.error("%d fichiers manquants", len(missing))
        return missing

    def load(self, verify: bool = True) -> SyntheticScene:
        """
        Charge la scène.

        Args:
            verify: Recalcule l'empreinte et la compare à scene.json.

        Returns:
            SyntheticScene: Scène reconstruite.

        Raises:
            MissingGroundTruthError: Fichiers manquants.
            DigestMismatchError: Contenu différent de l'empreinte enregistrée.
        """
        missing = self.check_required_files()
        if missing:
            raise MissingGroundTruthError(f"fichiers manquants: {', '.join(missing)}")

        meta = self.read_meta()
        recipe = SceneRecipe.from_dict(meta["recipe"])
        spec = VoxelGridSpec.from_dict(meta["grid"])
        cameras = [CameraModel.from_dict(c) for c in meta["cameras"]]
        num_classes = int(meta.get("num_classes", 15))

        grids, depth, seg = {}, {}, {}
        for k, offset in enumerate(meta["frame_offsets"]):
            labels = read_voxels(self.scene_path / frame_file(k))
            if tuple(labels.shape) != tuple(spec.dims):
                raise ShapeMismatchError(f"{frame_file(k)}: {labels.shape} != {spec.dims}")
            grids[offset] = SemanticLabelGrid(spec, labels, num_classes)
            depths, segs = [], []
            for v in range(len(cameras)):
                depth_name, seg_name = label_files(k, v)
                depths.append(read_image(self.scene_path / depth_name)[..., 0])
                segs.append(read_image(self.scene_path / seg_name)[..., 0].astype(np.uint8))
            depth[offset] = np.stack(depths)
            seg[offset] = np.stack(segs)

        scene = SyntheticScene(recipe, spec, grids, cameras, depth, seg)
        if verify and scene_hash(scene) != meta.get("digest"):
            logger.error("Empreinte de scene inattendue: %s", self.scene_path)
            raise DigestMismatchError(f"{self.scene_path}: empreinte de scene inattendue")

        logger.info("Scene chargee: %s (%d frames)", self.scene_path, len(grids))
        return scene


def load_scene(scene_path: Union[str, Path], verify: bool = True) -> SyntheticScene:
    """Raccourci pour SceneLoader(scene_path).load(verify)."""
    return SceneLoader(scene_path).load(verify)
