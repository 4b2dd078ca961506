import numpy as np
import pytest
import torch

from bandex import world


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def small_dungeon():
    cfg = world.DungeonConfig(map_size_m=12.0, room_count_range=(2, 4), seed=5,
                              resolution_m=0.5)
    return world.generate_dungeon(cfg)


@pytest.fixture(scope="session")
def toy_dungeon():
    cfg = world.DungeonConfig(map_size_m=30.0, room_count_range=(4, 7), seed=3,
                              corridor_width_m=3.5)
    return world.generate_dungeon(cfg)


def open_room_map(size_cells: int = 12, resolution: float = 1.0) -> world.GridMap:
    """Occupied border, fully free interior."""
    cells = np.full((size_cells, size_cells), world.OCCUPIED, dtype=np.uint8)
    cells[1:-1, 1:-1] = world.FREE
    return world.GridMap(cells=cells, resolution=resolution)
