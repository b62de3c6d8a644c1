"""
Génération déterministe de scènes dynamiques synthétiques.

Une recette décrit des objets statiques (boîtes, cylindres) et des objets
mobiles (trajectoire linéaire ou sinusoïdale, pulsation d'échelle pour les
classes humaines). La scène générée contient, pour chaque décalage de frame,
la grille d'étiquettes de vérité terrain et, par caméra, des pseudo-étiquettes
de profondeur et de segmentation obtenues par lancer de rayons.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from deformable_occupancy.config import (
    DEFAULT_IMAGE_SIZE,
    FREE,
    IGNORE,
    NUM_CLASSES,
    SYNTHETIC_GRID,
)
from deformable_occupancy.errors import (
    ConfigTypeError,
    InvalidLabelError,
    OutOfGridError,
)
from deformable_occupancy.models.gaussian import (
    CameraModel,
    SemanticLabelGrid,
    VoxelGridSpec,
    look_at,
    make_grid_spec,
    pinhole_intrinsics,
)
from deformable_occupancy.utils.logger import get_logger
from deformable_occupancy.utils.raycast import cast_rays

logger = get_logger(__name__)

HUMAN_CLASSES = (0, 1, 2)
VEHICLE_CLASSES = (3, 4, 5, 6, 7)
MOVER_CLASSES = HUMAN_CLASSES + VEHICLE_CLASSES
DEFAULT_FRAME_RANGE = tuple(range(-8, 9))
FLOW_BIN_EDGES = (0.05, 0.2, 0.5)
CAMERA_RIGS = ("inward", "outward")


@dataclass(frozen=True)
class SceneObject:
    """
    Forme analytique étiquetée.

    Attributes:
        kind: "box" ou "cylinder" (axe vertical).
        class_id: Classe sémantique.
        center: Centre (m).
        size: Demi-étendues (3) pour une boîte, (rayon, demi-hauteur) pour
            un cylindre.
    """

    kind: str
    class_id: int
    center: Tuple[float, float, float]
    size: Tuple[float, ...]

    def __post_init__(self) -> None:
        expected = {"box": 3, "cylinder": 2}
        if self.kind not in expected or len(self.size) != expected[self.kind]:
            raise ConfigTypeError(f"forme invalide: {self.kind} / {self.size}")
        if not 0 <= self.class_id < NUM_CLASSES:
            raise InvalidLabelError(f"classe d'objet {self.class_id} invalide")

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Masque des points (..., 3) à l'intérieur de la forme."""
        d = points - np.asarray(self.center)
        if self.kind == "box":
            return np.all(np.abs(d) <= np.asarray(self.size), axis=-1)
        radius, half_height = self.size
        return (d[..., 0] ** 2 + d[..., 1] ** 2 <= radius**2) & (
            np.abs(d[..., 2]) <= half_height
        )

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Boîte englobante (min, max)."""
        c = np.asarray(self.center)
        if self.kind == "box":
            half = np.asarray(self.size)
        else:
            half = np.array([self.size[0], self.size[0], self.size[1]])
        return c - half, c + half

    def transformed(self, center: np.ndarray, factor: float = 1.0) -> "SceneObject":
        return SceneObject(
            self.kind,
            self.class_id,
            tuple(float(v) for v in center),
            tuple(float(s * factor) for s in self.size),
        )


@dataclass(frozen=True)
class Mover:
    """
    Objet mobile.

    Attributes:
        shape: Forme à la frame 0.
        trajectory: "linear" (center + velocity * t) ou "sinusoidal"
            (center + velocity * sin(2 pi t / period + phase)).
        velocity: Vitesse (m/frame) ou amplitude du mouvement sinusoïdal (m).
        period: Période en frames du mouvement sinusoïdal et de la pulsation.
        pulse: Amplitude relative de la pulsation d'échelle (0.2 = +-20%).
        phase: Phase (rad).
    """

    shape: SceneObject
    trajectory: str = "linear"
    velocity: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    period: float = 8.0
    pulse: float = 0.0
    phase: float = 0.0

    def __post_init__(self) -> None:
        if self.trajectory not in ("linear", "sinusoidal"):
            raise ConfigTypeError(f"trajectoire inconnue: {self.trajectory}")
        if self.shape.class_id not in MOVER_CLASSES:
            raise InvalidLabelError(
                f"classe {self.shape.class_id} non autorisee pour un objet mobile"
            )
        if self.period <= 0 or not 0.0 <= self.pulse < 1.0:
            raise ConfigTypeError("periode <= 0 ou pulsation hors de [0,1[")

    def center_at(self, t: float) -> np.ndarray:
        c = np.asarray(self.shape.center, dtype=np.float64)
        v = np.asarray(self.velocity, dtype=np.float64)
        if self.trajectory == "linear":
            return c + v * t
        return c + v * np.sin(2 * np.pi * t / self.period + self.phase)

    def scale_at(self, t: float) -> float:
        if self.pulse == 0.0:
            return 1.0
        return 1.0 + self.pulse * np.sin(2 * np.pi * t / self.period + self.phase)

    def shape_at(self, t: float) -> SceneObject:
        return self.shape.transformed(self.center_at(t), self.scale_at(t))

    def flow_magnitude(self, offsets: Sequence[int]) -> float:
        """Déplacement moyen par frame du centre sur le clip."""
        offsets = sorted(offsets)
        if len(offsets) < 2:
            return 0.0
        steps = [
            np.linalg.norm(self.center_at(b) - self.center_at(a)) / (b - a)
            for a, b in zip(offsets[:-1], offsets[1:])
        ]
        return float(np.mean(steps))


@dataclass(frozen=True)
class SceneRecipe:
    """
    Description complète d'une scène synthétique.

    Attributes:
        seed: Graine des perturbations et du bruit.
        grid: Grille {min_corner, max_corner, voxel_size}.
        frame_offsets: Décalages de frame générés.
        objects: Objets statiques (les suivants écrasent les précédents).
        movers: Objets mobiles, voxelisés après les statiques.
        camera_rig: "inward" (caméras autour de la scène) ou "outward".
        num_cameras: Nombre de caméras.
        image_size: (hauteur, largeur) en pixels.
        label_flip_rate: Probabilité de remplacer une étiquette touchée par
            une classe aléatoire.
        depth_jitter: Écart-type relatif du bruit de profondeur.
    """

    seed: int = 0
    grid: Dict[str, Any] = field(default_factory=lambda: dict(SYNTHETIC_GRID))
    frame_offsets: Tuple[int, ...] = DEFAULT_FRAME_RANGE
    objects: Tuple[SceneObject, ...] = ()
    movers: Tuple[Mover, ...] = ()
    camera_rig: str = "inward"
    num_cameras: int = 4
    image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE
    label_flip_rate: float = 0.0
    depth_jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.camera_rig not in CAMERA_RIGS:
            raise ConfigTypeError(f"camera_rig doit etre parmi {CAMERA_RIGS}")
        if self.num_cameras < 1 or min(self.image_size) < 1:
            raise ConfigTypeError("num_cameras et image_size doivent etre >= 1")
        if not 0.0 <= self.label_flip_rate <= 1.0 or self.depth_jitter < 0:
            raise ConfigTypeError("label_flip_rate hors de [0,1] ou depth_jitter < 0")

    def spec(self) -> VoxelGridSpec:
        return make_grid_spec(
            self.grid["min_corner"], self.grid["max_corner"], self.grid["voxel_size"]
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["grid"] = {k: list(v) if isinstance(v, tuple) else v for k, v in self.grid.items()}
        return json.loads(json.dumps(data))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneRecipe":
        """Reconstruit une recette depuis son dictionnaire JSON."""
        data = dict(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigTypeError(f"cles de recette inconnues: {sorted(unknown)}")

        def obj(d: Dict[str, Any]) -> SceneObject:
            return SceneObject(d["kind"], int(d["class_id"]), tuple(d["center"]),
                               tuple(d["size"]))

        def mover(d: Dict[str, Any]) -> Mover:
            d = dict(d)
            d["shape"] = obj(d["shape"])
            d["velocity"] = tuple(d.get("velocity", (0.0, 0.0, 0.0)))
            return Mover(**d)

        if "objects" in data:
            data["objects"] = tuple(obj(d) for d in data["objects"])
        if "movers" in data:
            data["movers"] = tuple(mover(d) for d in data["movers"])
        for key in ("frame_offsets", "image_size"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def default_recipe(seed: int = 0) -> SceneRecipe:
    """
    Recette par défaut: sol, trottoir, bâtiment, végétation, barrière,
    une voiture en mouvement linéaire et un piéton pulsant.

    La graine perturbe les positions de façon déterministe.
    """
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-0.5, 0.5, size=(6, 2))
    phase = float(rng.uniform(0, 2 * np.pi))

    def at(x: float, y: float, z: float, k: int) -> Tuple[float, float, float]:
        return (x + float(jitter[k, 0]), y + float(jitter[k, 1]), z)

    objects = (
        SceneObject("box", 10, (0.0, 0.0, -0.75), (8.0, 8.0, 0.25)),
        SceneObject("box", 11, (0.0, 6.5, -0.5), (8.0, 1.5, 0.25)),
        SceneObject("box", 13, at(-5.0, 5.5, 1.0, 0), (1.5, 1.0, 1.5)),
        SceneObject("cylinder", 14, at(5.0, -5.5, 0.75, 1), (1.0, 1.25)),
        SceneObject("box", 8, at(4.5, 3.5, 0.0, 2), (1.5, 0.25, 0.5)),
    )
    movers = (
        Mover(
            SceneObject("box", 4, at(-4.0, -2.0, 0.0, 3), (1.0, 0.5, 0.5)),
            trajectory="linear",
            velocity=(0.3, 0.0, 0.0),
        ),
        Mover(
            SceneObject("cylinder", 2, at(1.5, 1.5, 0.25, 4), (0.6, 0.75)),
            trajectory="sinusoidal",
            velocity=(1.5, 0.0, 0.0),
            period=8.0,
            pulse=0.2,
            phase=phase,
        ),
    )
    return SceneRecipe(seed=seed, objects=objects, movers=movers)


@dataclass
class SyntheticScene:
    """
    Scène générée.

    Attributes:
        recipe: Recette d'origine.
        spec: Discrétisation.
        grids: Décalage -> grille de vérité terrain.
        cameras: Caméras fixes dans le repère monde.
        depth: Décalage -> profondeurs caméra (V, H, W) float32, 0 sans impact.
        seg: Décalage -> segmentation (V, H, W) uint8, IGNORE sans impact.
    """

    recipe: SceneRecipe
    spec: VoxelGridSpec
    grids: Dict[int, SemanticLabelGrid]
    cameras: List[CameraModel]
    depth: Dict[int, np.ndarray]
    seg: Dict[int, np.ndarray]

    @property
    def frame_offsets(self) -> List[int]:
        return sorted(self.grids)

    @property
    def image_size(self) -> Tuple[int, int]:
        return (self.cameras[0].height, self.cameras[0].width)

    def digest(self) -> str:
        return scene_hash(self)


def build_camera_rig(
    spec: VoxelGridSpec,
    rig: str = "inward",
    num_cameras: int = 4,
    image_size: Tuple[int, int] = DEFAULT_IMAGE_SIZE,
) -> List[CameraModel]:
    """
    Caméras sténopé régulièrement réparties autour de l'axe vertical.

    "inward": à l'extérieur de la grille, visant son centre;
    "outward": au centre de la grille, visant vers l'extérieur.
    Champ horizontal de 90 degrés.
    """
    height, width = image_size
    K = pinhole_intrinsics(width / 2.0, width / 2.0, width / 2.0, height / 2.0)
    lo = np.asarray(spec.min_corner)
    hi = np.asarray(spec.max_corner)
    center = (lo + hi) / 2.0
    radius = 1.25 * max(hi[0] - lo[0], hi[1] - lo[1]) / 2.0

    cameras = []
    for k in range(num_cameras):
        theta = 2 * np.pi * k / num_cameras + np.pi / 4
        ring = np.array([np.cos(theta), np.sin(theta), 0.0])
        if rig == "inward":
            eye = center + radius * ring + np.array([0.0, 0.0, hi[2] - center[2] + 1.0])
            target = np.array([center[0], center[1], lo[2] + 1.0])
        else:
            eye = np.array([center[0], center[1], lo[2] + 2.0])
            target = eye + ring - np.array([0.0, 0.0, 0.2])
        cameras.append(look_at(eye, target, K, width, height))
    return cameras


def voxelize(
    spec: VoxelGridSpec, shapes: Sequence[SceneObject], centers: Optional[np.ndarray] = None
) -> np.ndarray:
    """Étiquette chaque voxel dont le centre est dans une forme, FREE ailleurs."""
    centers = spec.voxel_centers() if centers is None else centers
    labels = np.full(spec.dims, FREE, dtype=np.uint8)
    for shape in shapes:
        labels[shape.contains(centers)] = shape.class_id
    return labels


def check_movers(recipe: SceneRecipe, spec: VoxelGridSpec) -> None:
    """Lève OutOfGridError si un objet mobile sort de la grille."""
    lo = np.asarray(spec.min_corner)
    hi = np.asarray(spec.max_corner)
    for i, mover in enumerate(recipe.movers):
        for t in recipe.frame_offsets:
            b_lo, b_hi = mover.shape_at(t).bounds()
            if np.any(b_lo < lo) or np.any(b_hi > hi):
                logger.error("Objet mobile %d hors de la grille a la frame %d", i, t)
                raise OutOfGridError(f"objet mobile {i} hors de la grille a la frame {t}")


def pseudo_labels(
    grid: SemanticLabelGrid,
    camera: CameraModel,
    label_flip_rate: float = 0.0,
    depth_jitter: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Pseudo-étiquettes d'une caméra par lancer de rayons.

    Profondeur = distance à la face d'entrée du premier voxel occupé,
    convertie en profondeur caméra (axe z); segmentation = classe de ce
    voxel; sans impact: profondeur 0 et IGNORE.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Profondeur float32 (H, W) et
        segmentation uint8 (H, W).
    """
    origins, directions, cos_axis = camera.pixel_rays()
    hits = cast_rays(grid.labels, grid.spec, origins, directions)

    depth = np.where(hits.hit, hits.distance * cos_axis, 0.0)
    seg = np.where(hits.hit, hits.label, IGNORE).astype(np.uint8)

    if rng is not None and (label_flip_rate > 0 or depth_jitter > 0):
        flips = hits.hit & (rng.random(seg.shape) < label_flip_rate)
        seg[flips] = rng.integers(0, grid.num_classes, size=int(flips.sum()))
        noise = rng.normal(0.0, depth_jitter, size=depth.shape)
        depth = np.where(hits.hit, np.maximum(depth * (1.0 + noise), 1e-3), 0.0)

    shape = (camera.height, camera.width)
    return depth.astype(np.float32).reshape(shape), seg.reshape(shape)


def generate_scene(recipe: SceneRecipe) -> SyntheticScene:
    """
    Génère une scène à partir d'une recette (fonction pure de la recette).

    Raises:
        OutOfGridError: Un objet mobile sort de la grille.
    """
    spec = recipe.spec()
    check_movers(recipe, spec)
    centers = spec.voxel_centers()
    cameras = build_camera_rig(spec, recipe.camera_rig, recipe.num_cameras,
                               recipe.image_size)
    noisy = recipe.label_flip_rate > 0 or recipe.depth_jitter > 0
    rng = np.random.default_rng(recipe.seed) if noisy else None

    grids: Dict[int, SemanticLabelGrid] = {}
    depth: Dict[int, np.ndarray] = {}
    seg: Dict[int, np.ndarray] = {}
    for t in recipe.frame_offsets:
        shapes = list(recipe.objects) + [m.shape_at(t) for m in recipe.movers]
        grids[t] = SemanticLabelGrid(spec, voxelize(spec, shapes, centers))
        maps = [
            pseudo_labels(grids[t], cam, recipe.label_flip_rate, recipe.depth_jitter, rng)
            for cam in cameras
        ]
        depth[t] = np.stack([d for d, _ in maps])
        seg[t] = np.stack([s for _, s in maps])

    scene = SyntheticScene(recipe, spec, grids, cameras, depth, seg)
    logger.info(
        "Scene generee: %d frames, %d cameras, grille %s",
        len(grids), len(cameras), spec.dims,
    )
    return scene


def scene_hash(scene: SyntheticScene) -> str:
    """
    Empreinte SHA-256 stable des grilles, cartes et caméras.

    Les tableaux sont sérialisés en ordre C avec un type little-endian
    explicite, indépendamment de leur disposition mémoire.
    """
    h = hashlib.sha256()
    for t in sorted(scene.grids):
        h.update(np.int32(t).astype("<i4").tobytes())
        h.update(np.ascontiguousarray(scene.grids[t].labels, dtype="<u1").tobytes())
        h.update(np.ascontiguousarray(scene.depth[t], dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(scene.seg[t], dtype="<u1").tobytes())
    cameras = json.dumps([c.to_dict() for c in scene.cameras], sort_keys=True)
    h.update(cameras.encode("utf-8"))
    return h.hexdigest()


def flow_grid(scene: SyntheticScene, offset: int = 0) -> np.ndarray:
    """
    Magnitude de flot de scène par voxel à un décalage donné.

    Chaque voxel d'un objet mobile reçoit le déplacement moyen par frame de
    cet objet sur le clip; les voxels statiques ou libres valent 0.
    """
    spec = scene.spec
    centers = spec.voxel_centers()
    flow = np.zeros(spec.dims)
    offsets = scene.recipe.frame_offsets
    for mover in scene.recipe.movers:
        inside = mover.shape_at(offset).contains(centers)
        flow[inside] = mover.flow_magnitude(offsets)
    return flow


def flow_bins(flow: np.ndarray) -> np.ndarray:
    """Quantifie des magnitudes de flot en 4 classes (bords 0.05, 0.2, 0.5 m/frame)."""
    return np.digitize(flow, FLOW_BIN_EDGES)
