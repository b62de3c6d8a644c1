"""
Interface en ligne de commande.

    deformable-occupancy gen-scene     [--recipe R]             --out DIR
    deformable-occupancy train         [--config C] [--scene S] --out DIR [--plot]
    deformable-occupancy eval          --checkpoint K --scene S --out DIR
                                       [--visible-only] [--no-rayiou] [--gt-as-pred]
                                       [--frames T ...] [--plot]
    deformable-occupancy render        --checkpoint K --scene S --frame T --camera V --out DIR
    deformable-occupancy dump-teacher  --scene S [--mode synthetic] --out DIR
    deformable-occupancy export-voxels --checkpoint K [--frame T] --out DIR

Options communes: --seed, --threads, --out. Codes de sortie: 0 succès,
2 configuration, 3 données, 4 numérique.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from deformable_occupancy.config import (
    Config,
    EvalConfig,
    SceneConfig,
    check_paths,
    config_from_dict,
    echo_config,
    parse_config,
)
from deformable_occupancy.data.data_loader import load_scene, save_scene
from deformable_occupancy.data.formats import write_image, write_voxels
from deformable_occupancy.data.synthetic_scene import (
    SceneRecipe,
    default_recipe,
    generate_scene,
)
from deformable_occupancy.errors import (
    DigestMismatchError,
    IndexOutOfRangeError,
    MissingFileError,
    OccupancyError,
    OutputIOError,
)
from deformable_occupancy.models.distillation import save_teacher_features, synth_teacher
from deformable_occupancy.models.occupancy_model import OccupancyModel
from deformable_occupancy.models.rendering import argmax_image, render_all
from deformable_occupancy.training.evaluation import evaluate_grids, evaluate_model
from deformable_occupancy.training.trainer import train
from deformable_occupancy.utils.checkpoint_manager import load_checkpoint_file
from deformable_occupancy.utils.logger import get_logger, setup_logger
from deformable_occupancy.utils.metrics import ClassTaxonomy
from deformable_occupancy.utils.plotting import plot_class_iou, plot_loss_curve

logger = get_logger(__name__)

PACKAGE = "deformable_occupancy"
REPORT_FILE = "report.json"
TIMING_FILE = "timing.json"
TEACHER_FILE = "teacher.tf"
EXPORT_FILE = "occupancy.vox"
MAX_OFFSET = 8


def _write_json(path: Path, payload: Dict) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    except OSError as e:
        logger.error("Ecriture impossible: %s (%s)", path, e)
        raise OutputIOError(f"ecriture impossible: {path} ({e})") from e
    return path


def _load_model(checkpoint: str) -> Tuple[OccupancyModel, Dict]:
    """Modèle et métadonnées d'un checkpoint, empreinte de configuration vérifiée."""
    ckpt = load_checkpoint_file(checkpoint)
    meta = ckpt.metadata
    if "config" in meta and "config_digest" in meta:
        if config_from_dict(meta["config"]).digest() != meta["config_digest"]:
            logger.error("Empreinte de configuration incoherente: %s", checkpoint)
            raise DigestMismatchError(f"{checkpoint}: empreinte de configuration incoherente")
    return OccupancyModel.from_checkpoint(ckpt), meta


def _check_scene_digest(model_meta: Dict, scene, checkpoint: str) -> None:
    expected = model_meta.get("scene_digest")
    if expected is not None and expected != scene.digest():
        logger.error("Checkpoint %s entraine sur une autre scene", checkpoint)
        raise DigestMismatchError(f"{checkpoint}: scene differente de celle d'entrainement")


def _taxonomy(config: Config) -> ClassTaxonomy:
    if config.taxonomy_path:
        return ClassTaxonomy.from_file(config.taxonomy_path)
    return ClassTaxonomy()


def _check_frame(frame: int) -> int:
    if not -MAX_OFFSET <= frame <= MAX_OFFSET:
        logger.error("Decalage de frame hors plage: %d", frame)
        raise IndexOutOfRangeError(f"decalage {frame} hors de [-8, 8]")
    return frame


# ---------------------------------------------------------------------------
# Commandes
# ---------------------------------------------------------------------------


def cmd_gen_scene(args: argparse.Namespace) -> int:
    """Génère une scène synthétique et écrit son répertoire."""
    if args.recipe:
        path = Path(args.recipe)
        if not path.exists():
            raise MissingFileError(f"recette introuvable: {path}")
        recipe = SceneRecipe.from_dict(json.loads(path.read_text(encoding="utf-8")))
        if args.seed is not None:
            recipe = replace(recipe, seed=args.seed)
    else:
        recipe = default_recipe(args.seed or 0)

    scene = generate_scene(recipe)
    save_scene(scene, args.out)
    digest = scene.digest()
    print(digest)
    logger.info("Empreinte de scene: %s", digest)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    """Entraîne un modèle; écrit checkpoint, journal de métriques et config."""
    config = parse_config(args.config, echo=False) if args.config else Config()
    overrides = {"output_dir": args.out or config.output_dir}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.scene:
        overrides["scene"] = SceneConfig(path=args.scene)
    if args.steps is not None:
        overrides["train"] = replace(config.train, steps=args.steps)
    config = config.with_overrides(**overrides)

    if config.scene.path is None:
        logger.error("Aucune scene fournie (scene.path ou --scene)")
        raise MissingFileError("scene.path absent")
    check_paths(config)
    echo_config(config, config.output_dir)

    scene = load_scene(config.scene.path)
    result = train(scene, config, output_dir=config.output_dir)
    if args.plot:
        plot_loss_curve(result.history, Path(config.output_dir) / "loss_curve.png")

    final = float(result.history["loss_total"].iloc[-1])
    print(f"{final:.12f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """Évalue un checkpoint (ou la vérité terrain elle-même) et écrit le rapport."""
    scene = load_scene(args.scene)
    out = Path(args.out)

    if args.gt_as_pred:
        config = Config()
        eval_config = EvalConfig(
            visible_only=args.visible_only,
            rayiou=not args.no_rayiou,
            frame_offsets=tuple(args.frames or (0,)),
        )
        predictions = {o: scene.grids.get(o) for o in eval_config.frame_offsets}
        report = evaluate_grids(predictions, scene, eval_config, _taxonomy(config))
        timing = {"inference_seconds": 0.0, "frames": len(predictions)}
    else:
        if not args.checkpoint:
            raise MissingFileError("--checkpoint requis sans --gt-as-pred")
        model, meta = _load_model(args.checkpoint)
        _check_scene_digest(meta, scene, args.checkpoint)
        config = model.config
        eval_config = replace(
            config.eval,
            visible_only=args.visible_only or config.eval.visible_only,
            rayiou=config.eval.rayiou and not args.no_rayiou,
            frame_offsets=tuple(args.frames) if args.frames else config.eval.frame_offsets,
        )
        result = evaluate_model(model, scene, eval_config, _taxonomy(config))
        report, timing = result.report, result.timing

    _write_json(out / REPORT_FILE, report)
    _write_json(out / TIMING_FILE, timing)
    if args.plot:
        plot_class_iou(report["per_class"], out / "class_iou.png", title="IoU par classe")
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_render(args: argparse.Namespace) -> int:
    """Rend sémantique, profondeur et alpha d'une frame déformée pour une caméra."""
    scene = load_scene(args.scene)
    frame = _check_frame(args.frame)
    if not 0 <= args.camera < len(scene.cameras):
        logger.error("Camera %d hors plage (%d cameras)", args.camera, len(scene.cameras))
        raise IndexOutOfRangeError(
            f"camera {args.camera} hors plage ({len(scene.cameras)} cameras)"
        )
    model, _ = _load_model(args.checkpoint)
    camera = scene.cameras[args.camera]

    with torch.no_grad():
        gaussians = model.frames([frame]).frames[frame]
        render = render_all(gaussians, model.semantic_logits(gaussians), camera)

    out = Path(args.out)
    stem = f"frame_{frame}_cam_{args.camera}"
    write_image(out / f"{stem}.semantic.img", argmax_image(render.semantic).astype(np.float32))
    write_image(out / f"{stem}.depth.img", render.depth.numpy())
    write_image(out / f"{stem}.alpha.img", render.alpha.numpy())
    logger.info("Rendu ecrit: %s/%s.*.img", out, stem)
    return 0


def cmd_dump_teacher(args: argparse.Namespace) -> int:
    """Écrit la pile enseignant synthétique de la frame 0 au format DEGO-TF1."""
    scene = load_scene(args.scene)
    stack = synth_teacher(
        scene,
        patch_size=args.patch_size,
        teacher_dim=args.teacher_dim,
        seed=args.seed,
        block_index=args.block_index,
    )
    path = save_teacher_features(Path(args.out) / TEACHER_FILE, stack)
    print(path)
    return 0


def cmd_export_voxels(args: argparse.Namespace) -> int:
    """Exporte la grille d'occupation prédite d'une frame au format DEGO-VOX1."""
    model, _ = _load_model(args.checkpoint)
    grid = model.predict_occupancy(_check_frame(args.frame))
    path = write_voxels(Path(args.out) / EXPORT_FILE, grid.labels)
    logger.info("Occupation exportee: %s (%d voxels occupes)", path, int(grid.occupied.sum()))
    print(path)
    return 0


COMMANDS = {
    "gen-scene": cmd_gen_scene,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
    "dump-teacher": cmd_dump_teacher,
    "export-voxels": cmd_export_voxels,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="graine (prioritaire)")
    common.add_argument("--threads", type=int, default=None,
                        help="threads torch (1 = chemin deterministe de reference)")
    common.add_argument("--out", default=None, help="repertoire de sortie")

    parser = argparse.ArgumentParser(
        prog="deformable-occupancy",
        description="Occupation semantique par gaussiennes deformables",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", parents=[common], help="generer une scene synthetique")
    p.add_argument("--recipe", default=None, help="recette JSON (defaut: recette integree)")

    p = sub.add_parser("train", parents=[common], help="entrainer un modele")
    p.add_argument("--config", default=None, help="configuration JSON")
    p.add_argument("--scene", default=None, help="repertoire de scene (remplace scene.path)")
    p.add_argument("--steps", type=int, default=None, help="nombre de pas")
    p.add_argument("--plot", action="store_true", help="ecrire loss_curve.png")

    p = sub.add_parser("eval", parents=[common], help="evaluer un checkpoint")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--scene", required=True)
    p.add_argument("--visible-only", action="store_true",
                   help="n'evaluer que les voxels vus par une camera")
    p.add_argument("--no-rayiou", action="store_true", help="desactiver le RayIoU")
    p.add_argument("--gt-as-pred", action="store_true",
                   help="evaluer la verite terrain contre elle-meme (debogage)")
    p.add_argument("--frames", type=int, nargs="+", default=None,
                   help="decalages evalues (defaut: configuration)")
    p.add_argument("--plot", action="store_true", help="ecrire class_iou.png")

    p = sub.add_parser("render", parents=[common], help="rendre une vue")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--camera", type=int, default=0)

    p = sub.add_parser("dump-teacher", parents=[common], help="ecrire la pile enseignant")
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=["synthetic"], default="synthetic")
    p.add_argument("--patch-size", type=int, default=8)
    p.add_argument("--teacher-dim", type=int, default=64)
    p.add_argument("--block-index", type=int, default=22)

    p = sub.add_parser("export-voxels", parents=[common], help="exporter l'occupation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frame", type=int, default=0)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Point d'entrée.

    Returns:
        int: Code de sortie (0, 2, 3 ou 4).
    """
    args = build_parser().parse_args(argv)
    if args.out is None and args.command != "train":
        args.out = "."
    log_file = str(Path(args.out) / "run.log") if args.out else None
    try:
        setup_logger(PACKAGE, log_file=log_file)
    except OSError:
        setup_logger(PACKAGE)

    if args.threads is not None:
        torch.set_num_threads(max(1, args.threads))

    try:
        return COMMANDS[args.command](args)
    except OccupancyError as e:
        logger.error("%s: %s", type(e).__name__, e)
        print(f"erreur: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
