"""Compare l'entrainement avec et sans deformation (et le nombre de gaussiennes)."""

import sys

from deformable_occupancy.data.synthetic_scene import generate_scene
from deformable_occupancy.training.ablation import (
    ABLATION_EVAL_OFFSETS,
    ablation_recipe,
    run_deformation_ablation,
)

GAUSSIAN_COUNTS = (128, 256)
STEPS = 2000
SEED = 0


def main():
    print("=" * 60)
    print("ABLATION: AVEC vs SANS DEFORMATION")
    print("=" * 60)
    print()

    print("Generation de la scene...")
    scene = generate_scene(ablation_recipe(SEED))
    print(f"Grille: {scene.spec.dims}, cameras: {len(scene.cameras)}")
    print(f"Decalages evalues: {list(ABLATION_EVAL_OFFSETS)}")
    print()

    steps = int(sys.argv[1]) if len(sys.argv) > 1 else STEPS
    results = run_deformation_ablation(SEED, steps, GAUSSIAN_COUNTS, scene=scene)

    print("=" * 60)
    print("RESULTATS")
    print("=" * 60)
    print(f"{'N':<8} {'Deformation':<14} {'mIoU':<10} {'IoU':<10} {'Temps (s)':<10}")
    print("-" * 60)
    for row in results.itertuples():
        miou = row.miou if row.miou is not None else 0.0
        label = "oui" if row.deformation else "non"
        print(
            f"{row.num_gaussians:<8} {label:<14} {miou:<10.4f} {row.iou:<10.4f} "
            f"{row.train_seconds:<10.1f}"
        )
    print()

    for count in GAUSSIAN_COUNTS:
        subset = results[results["num_gaussians"] == count].set_index("deformation")
        on, off = subset.loc[True, "miou"] or 0.0, subset.loc[False, "miou"] or 0.0
        ratio = on / off if off > 0 else float("inf")
        print(f"N={count}: mIoU avec / sans deformation = {ratio:.2f}x")


if __name__ == "__main__":
    main()
