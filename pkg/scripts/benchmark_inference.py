"""Mesure le temps d'inference (deformation + splatting + extraction) selon N."""

import time

import numpy as np
import torch

from deformable_occupancy.config import Config, ModelConfig
from deformable_occupancy.models.gaussian import make_grid_spec
from deformable_occupancy.models.occupancy_model import OccupancyModel

GAUSSIAN_COUNTS = (128, 256, 512, 1024)
OFFSETS = (0, 4)
REPEATS = 3


def main():
    print("=" * 60)
    print("BENCHMARK INFERENCE")
    print("=" * 60)
    print()

    torch.set_num_threads(1)
    spec = make_grid_spec((-8.0, -8.0, -1.0), (8.0, 8.0, 3.0), 0.5)
    print(f"Grille: {spec.dims} ({int(np.prod(spec.dims))} voxels)")
    print()

    print(f"{'N':<8} {'Decalage':<10} {'Moyenne (s)':<14} {'Occupes':<10}")
    print("-" * 60)
    for count in GAUSSIAN_COUNTS:
        config = Config(model=ModelConfig(num_gaussians=count))
        model = OccupancyModel.from_config(config, spec, teacher_channels=128)
        for offset in OFFSETS:
            timings = []
            for _ in range(REPEATS):
                start = time.time()
                grid = model.predict_occupancy(offset)
                timings.append(time.time() - start)
            occupied = int(grid.occupied.sum())
            print(f"{count:<8} {offset:<10} {np.mean(timings):<14.4f} {occupied:<10}")
    print()


if __name__ == "__main__":
    main()
