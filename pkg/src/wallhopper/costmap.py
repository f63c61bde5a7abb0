"""Landing cost maps and patch catalogs built from height maps.

Three morphology filters score each grid node: slope (first derivatives),
roughness (second derivatives) and a deep filter flagging nodes recessed far
behind the anchor plane.  Their weighted sum is the landing cost; the map is
then tiled into rectangular patches whose mean costs feed the outer-loop
planner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .terrain import HeightMap

# Finite sentinel returned for landing-cost queries outside the map, so that
# optimizer iterates that briefly leave the extent keep a well-defined objective.
OUT_OF_EXTENT_COST = 1.0e4

DEFAULT_DEEP_THRESHOLD = 0.5  # meters behind the anchor plane


def slope_layer(hm: HeightMap) -> np.ndarray:
    """Gradient-magnitude ||(df/dy, df/dz)|| per node, central differences inside."""
    d = hm.depth
    h = hm.resolution
    gy = np.gradient(d, h, axis=1)
    gz = np.gradient(d, h, axis=0)
    return np.hypot(gy, gz)


def roughness_layer(hm: HeightMap) -> np.ndarray:
    """Absolute discrete Laplacian |f_yy + f_zz| per node (5-point stencil).

    Boundary nodes reuse their nearest interior neighbor (edge replication).
    """
    d = hm.depth
    h2 = hm.resolution**2
    padded = np.pad(d, 1, mode="edge")
    lap = (
        padded[1:-1, :-2] + padded[1:-1, 2:] + padded[:-2, 1:-1] + padded[2:, 1:-1] - 4.0 * d
    ) / h2
    return np.abs(lap)


def deep_layer(hm: HeightMap, anchors=None, threshold: float = DEFAULT_DEEP_THRESHOLD) -> np.ndarray:
    """Binary layer: 1 where the wall is more than ``threshold`` behind the anchor plane.

    The anchor plane is X = min over anchors of the anchor X coordinate
    (X = 0 for the standard setup).
    """
    if threshold < 0:
        raise ConfigError(f"deep threshold must be non-negative, got {threshold}")
    plane_x = 0.0
    if anchors is not None:
        plane_x = min(float(a[0]) for a in anchors)
    return (hm.depth < plane_x - threshold).astype(float)


@dataclass(frozen=True)
class CostMap:
    """Per-node landing cost on the same grid geometry as the source height map.

    ``layers`` stores the three filter outputs after per-layer normalization to
    [0, 1] (by each layer's own max), so the weights stay comparable across
    terrains; ``cost`` is exactly their weighted sum at every node.
    """

    origin_y: float
    origin_z: float
    resolution: float
    cost: np.ndarray
    layers: dict
    weights: tuple

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=float)
        c.setflags(write=False)
        object.__setattr__(self, "cost", c)

    @property
    def n_y(self) -> int:
        return self.cost.shape[1]

    @property
    def n_z(self) -> int:
        return self.cost.shape[0]

    @property
    def y_max(self) -> float:
        return self.origin_y + (self.n_y - 1) * self.resolution

    @property
    def z_max(self) -> float:
        return self.origin_z + (self.n_z - 1) * self.resolution

    def in_extent(self, y: float, z: float) -> bool:
        return (self.origin_y <= y <= self.y_max) and (self.origin_z <= z <= self.z_max)


def _normalized(layer: np.ndarray) -> np.ndarray:
    m = layer.max()
    return layer / m if m > 0 else layer.copy()


def compose(hm: HeightMap, weights, anchors=None, deep_threshold: float = DEFAULT_DEEP_THRESHOLD) -> CostMap:
    """Weighted sum of the normalized filter layers.

    ``weights`` is (w_sl, w_sd, w_d); all must be non-negative.
    """
    w = tuple(float(v) for v in weights)
    if len(w) != 3:
        raise ConfigError(f"expected 3 weights (slope, roughness, deep), got {len(w)}")
    if any(v < 0 for v in w):
        raise ConfigError(f"cost-map weights must be non-negative, got {w}")
    layers = {
        "slope": _normalized(slope_layer(hm)),
        "roughness": _normalized(roughness_layer(hm)),
        "deep": deep_layer(hm, anchors=anchors, threshold=deep_threshold),
    }
    cost = w[0] * layers["slope"] + w[1] * layers["roughness"] + w[2] * layers["deep"]
    return CostMap(
        origin_y=hm.origin_y,
        origin_z=hm.origin_z,
        resolution=hm.resolution,
        cost=cost,
        layers=layers,
        weights=w,
    )


def landing_cost(cm: CostMap, y: float, z: float) -> float:
    """Bilinear interpolation of the cost grid; sentinel outside the extent."""
    if not cm.in_extent(y, z):
        return OUT_OF_EXTENT_COST
    fy = (y - cm.origin_y) / cm.resolution
    fz = (z - cm.origin_z) / cm.resolution
    iy = min(max(int(np.floor(fy)), 0), cm.n_y - 2)
    iz = min(max(int(np.floor(fz)), 0), cm.n_z - 2)
    ty, tz = fy - iy, fz - iz
    c = cm.cost
    return float(
        c[iz, iy] * (1 - ty) * (1 - tz)
        + c[iz, iy + 1] * ty * (1 - tz)
        + c[iz + 1, iy] * (1 - ty) * tz
        + c[iz + 1, iy + 1] * ty * tz
    )


@dataclass(frozen=True)
class PatchCatalog:
    """Rectangular tiling of the cost map into landing-candidate patches.

    Patches are indexed row-major from the map origin: id = iz * n_w + iy.
    ``centroids`` has shape (n_patches, 2) in (Y, Z) meters; ``mean_cost`` the
    arithmetic mean of the node costs each patch covers.
    """

    n_w: int
    n_h: int
    origin_y: float
    origin_z: float
    patch_w: float
    patch_h: float
    centroids: np.ndarray
    mean_cost: np.ndarray
    node_counts: np.ndarray

    @property
    def n_patches(self) -> int:
        return self.n_w * self.n_h

    @property
    def half_extent(self) -> np.ndarray:
        return np.array([self.patch_w / 2.0, self.patch_h / 2.0])

    def patch_of(self, y: float, z: float) -> int:
        """Patch id containing (y, z); boundary points go to the higher patch."""
        iy = int(np.clip((y - self.origin_y) / self.patch_w, 0, self.n_w - 1e-9))
        iz = int(np.clip((z - self.origin_z) / self.patch_h, 0, self.n_h - 1e-9))
        return iz * self.n_w + iy


def partition(cm: CostMap, n_w: int, n_h: int) -> PatchCatalog:
    """Tile the map into n_w x n_h equal rectangles aligned with the cell grid."""
    cells_y = cm.n_y - 1
    cells_z = cm.n_z - 1
    if n_w < 1 or n_h < 1 or cells_y % n_w != 0 or cells_z % n_h != 0:
        def near(cells, n):
            divs = [d for d in range(1, cells + 1) if cells % d == 0]
            return min(divs, key=lambda d: abs(d - n))
        raise ConfigError(
            f"patch grid {n_w}x{n_h} does not divide the {cells_y}x{cells_z} cell grid; "
            f"nearest valid dims: {near(cells_y, n_w)}x{near(cells_z, n_h)}"
        )
    cpy = cells_y // n_w  # cells per patch along Y
    cpz = cells_z // n_h
    patch_w = cpy * cm.resolution
    patch_h = cpz * cm.resolution

    centroids = np.zeros((n_w * n_h, 2))
    mean_cost = np.zeros(n_w * n_h)
    counts = np.zeros(n_w * n_h, dtype=int)

    # node ownership: node index // cells-per-patch, top/right border nodes
    # fold into the last patch
    iy_of = np.minimum(np.arange(cm.n_y) // cpy, n_w - 1)
    iz_of = np.minimum(np.arange(cm.n_z) // cpz, n_h - 1)
    for iz_p in range(n_h):
        rows = np.where(iz_of == iz_p)[0]
        for iy_p in range(n_w):
            cols = np.where(iy_of == iy_p)[0]
            pid = iz_p * n_w + iy_p
            block = cm.cost[np.ix_(rows, cols)]
            mean_cost[pid] = block.mean()
            counts[pid] = block.size
            centroids[pid] = (
                cm.origin_y + (iy_p + 0.5) * patch_w,
                cm.origin_z + (iz_p + 0.5) * patch_h,
            )
    return PatchCatalog(
        n_w=n_w,
        n_h=n_h,
        origin_y=cm.origin_y,
        origin_z=cm.origin_z,
        patch_w=patch_w,
        patch_h=patch_h,
        centroids=centroids,
        mean_cost=mean_cost,
        node_counts=counts,
    )


def save_costmap(cm: CostMap, path, layer: str | None = None) -> None:
    """Write the cost grid (or one named layer) in the height-map text format."""
    grid = cm.cost if layer is None else cm.layers[layer]
    with open(path, "w") as fh:
        fh.write(f"{cm.n_y} {cm.n_z} {cm.resolution:.17g} {cm.origin_y:.17g} {cm.origin_z:.17g}\n")
        for iz in range(cm.n_z):
            fh.write(" ".join(f"{v:.17g}" for v in grid[iz]) + "\n")


def save_patch_catalog(cat: PatchCatalog, path) -> None:
    with open(path, "w") as fh:
        fh.write("id,centroid_y,centroid_z,mean_cost\n")
        for pid in range(cat.n_patches):
            fh.write(
                f"{pid},{cat.centroids[pid, 0]:.17g},{cat.centroids[pid, 1]:.17g},"
                f"{cat.mean_cost[pid]:.17g}\n"
            )
