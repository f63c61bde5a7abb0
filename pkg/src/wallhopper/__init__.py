"""wallhopper: multi-jump trajectory planning for a two-rope wall-climbing robot."""

__version__ = "0.1.0"

from .dynamics import RobotParams
from .terrain import HeightMap, generate_terrain, load_heightmap, save_heightmap
from .costmap import CostMap, PatchCatalog, compose, partition

__all__ = [
    "RobotParams",
    "HeightMap",
    "generate_terrain",
    "load_heightmap",
    "save_heightmap",
    "CostMap",
    "PatchCatalog",
    "compose",
    "partition",
]
