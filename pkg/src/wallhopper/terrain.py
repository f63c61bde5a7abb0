"""Height-map terrain: storage, smooth interpolation, surface normals, generators.

Frame convention (shared by every module): the world origin sits at the left
rope anchor, Y points toward the right anchor, Z points up, X points outward
from the wall.  A height map stores the wall depth (X value of the surface) on
a regular (Y, Z) node grid; everything below the anchors has negative Z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, ParseError


@dataclass(frozen=True)
class HeightMap:
    """Regular grid of wall-depth values over the (Y, Z) plane.

    ``depth`` has shape (n_z, n_y): row iz, column iy holds the X value of the
    surface at (origin_y + iy*resolution, origin_z + iz*resolution).
    """

    origin_y: float
    origin_z: float
    resolution: float
    depth: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=float)
        if d.ndim != 2 or d.shape[0] < 2 or d.shape[1] < 2:
            raise ConfigError(f"depth grid must be at least 2x2, got shape {d.shape}")
        if not np.isfinite(d).all():
            iz, iy = np.argwhere(~np.isfinite(d))[0]
            raise ConfigError(f"non-finite depth at cell (iz={iz}, iy={iy})")
        if not (self.resolution > 0):
            raise ConfigError(f"resolution must be positive, got {self.resolution}")
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)

    @property
    def n_y(self) -> int:
        return self.depth.shape[1]

    @property
    def n_z(self) -> int:
        return self.depth.shape[0]

    @property
    def length_y(self) -> float:
        return (self.n_y - 1) * self.resolution

    @property
    def length_z(self) -> float:
        return (self.n_z - 1) * self.resolution

    @property
    def y_max(self) -> float:
        return self.origin_y + self.length_y

    @property
    def z_max(self) -> float:
        return self.origin_z + self.length_z

    def in_extent(self, y: float, z: float) -> bool:
        return (self.origin_y <= y <= self.y_max) and (self.origin_z <= z <= self.z_max)

    def node_coords(self):
        """Node coordinate vectors (ys, zs)."""
        ys = self.origin_y + self.resolution * np.arange(self.n_y)
        zs = self.origin_z + self.resolution * np.arange(self.n_z)
        return ys, zs


@dataclass(frozen=True)
class SurfaceSample:
    """Interpolated surface height, slopes and outward unit normal at a query point."""

    height: float
    grad_y: float
    grad_z: float
    normal: np.ndarray
    one_sided: bool = False  # boundary query, one-sided differences used


def _cell_fractions(hm: HeightMap, y: float, z: float):
    """Cell indices and in-cell fractions for a query, clamped to the last cell."""
    fy = (y - hm.origin_y) / hm.resolution
    fz = (z - hm.origin_z) / hm.resolution
    iy = min(int(np.floor(fy)), hm.n_y - 2)
    iz = min(int(np.floor(fz)), hm.n_z - 2)
    iy = max(iy, 0)
    iz = max(iz, 0)
    return iy, iz, fy - iy, fz - iz


def interpolate(hm: HeightMap, y: float, z: float) -> float:
    """Bilinear interpolation of the depth grid; exact at nodes.

    Raises DomainError for queries outside the map extent.
    """
    if not hm.in_extent(y, z):
        raise DomainError(
            f"query (y={y:.6g}, z={z:.6g}) outside extent "
            f"[{hm.origin_y:.6g}, {hm.y_max:.6g}] x [{hm.origin_z:.6g}, {hm.z_max:.6g}]"
        )
    iy, iz, ty, tz = _cell_fractions(hm, y, z)
    d = hm.depth
    f00 = d[iz, iy]
    f01 = d[iz, iy + 1]
    f10 = d[iz + 1, iy]
    f11 = d[iz + 1, iy + 1]
    return float(
        f00 * (1 - ty) * (1 - tz)
        + f01 * ty * (1 - tz)
        + f10 * (1 - ty) * tz
        + f11 * ty * tz
    )


def surface_sample(hm: HeightMap, y: float, z: float) -> SurfaceSample:
    """Height, central-difference slopes and outward normal at (y, z).

    The gradient uses central differences of the interpolant with step equal to
    the grid resolution; queries closer than one step to the border fall back
    to one-sided differences and are flagged.  The normal is the outward
    direction (+1, -df/dy, -df/dz), normalized.
    """
    h = hm.resolution
    height = interpolate(hm, y, z)

    one_sided = False

    def d1(coord: str) -> float:
        nonlocal one_sided
        if coord == "y":
            lo, hi = hm.origin_y, hm.y_max
            q = y
            f = lambda v: interpolate(hm, v, z)
        else:
            lo, hi = hm.origin_z, hm.z_max
            q = z
            f = lambda v: interpolate(hm, y, v)
        if q - h >= lo and q + h <= hi:
            return (f(q + h) - f(q - h)) / (2 * h)
        one_sided = True
        if q + h <= hi:
            return (f(q + h) - f(q)) / h
        return (f(q) - f(q - h)) / h

    gy = d1("y")
    gz = d1("z")
    n = np.array([1.0, -gy, -gz])
    n /= np.linalg.norm(n)
    return SurfaceSample(height=height, grad_y=gy, grad_z=gz, normal=n, one_sided=one_sided)


# ---------------------------------------------------------------------------
# Procedural generators
# ---------------------------------------------------------------------------

TERRAIN_KINDS = ("flat", "hemisphere", "bulged_pillars", "rocky")

_DEFAULTS = {
    "extent_y": 10.0,
    "extent_z": 20.0,
    "resolution": 0.5,
    "origin_y": 0.0,
    "origin_z": -20.0,
}


def _grid(params):
    p = dict(_DEFAULTS)
    p.update(params or {})
    res = float(p["resolution"])
    ex_y, ex_z = float(p["extent_y"]), float(p["extent_z"])
    if res <= 0 or ex_y <= 0 or ex_z <= 0:
        raise ConfigError("extent and resolution must be positive")
    n_y = int(round(ex_y / res)) + 1
    n_z = int(round(ex_z / res)) + 1
    ys = float(p["origin_y"]) + res * np.arange(n_y)
    zs = float(p["origin_z"]) + res * np.arange(n_z)
    yy, zz = np.meshgrid(ys, zs)  # shape (n_z, n_y)
    return p, yy, zz


def gaussian_bulges(yy, zz, bulges):
    """Sum of isotropic Gaussian bumps; ``bulges`` is a list of (cy, cz, amp, sigma)."""
    out = np.zeros_like(yy)
    for cy, cz, amp, sigma in bulges:
        r2 = (yy - cy) ** 2 + (zz - cz) ** 2
        out += amp * np.exp(-r2 / (2.0 * sigma**2))
    return out


def gaussian_bulges_grad(yy, zz, bulges):
    """Analytic (d/dy, d/dz) of :func:`gaussian_bulges`; oracle for gradient tests."""
    gy = np.zeros_like(yy)
    gz = np.zeros_like(zz)
    for cy, cz, amp, sigma in bulges:
        r2 = (yy - cy) ** 2 + (zz - cz) ** 2
        e = amp * np.exp(-r2 / (2.0 * sigma**2)) / sigma**2
        gy += -(yy - cy) * e
        gz += -(zz - cz) * e
    return gy, gz


def spherical_cap(yy, zz, cy, cz, radius):
    """Spherical-cap bulge: height sqrt(R^2 - r^2) inside radius R, zero outside."""
    r2 = (yy - cy) ** 2 + (zz - cz) ** 2
    return np.sqrt(np.maximum(radius**2 - r2, 0.0))


def _lattice_noise(shape, ys, zs, cell, rng):
    """Gradient (Perlin-style) lattice noise evaluated on the node grid."""
    gy0, gz0 = ys[0], zs[0]
    nyl = int(np.ceil((ys[-1] - gy0) / cell)) + 2
    nzl = int(np.ceil((zs[-1] - gz0) / cell)) + 2
    ang = rng.uniform(0.0, 2.0 * np.pi, size=(nzl, nyl))
    gvy, gvz = np.cos(ang), np.sin(ang)

    py = (ys - gy0) / cell
    pz = (zs - gz0) / cell
    iy = np.clip(py.astype(int), 0, nyl - 2)
    iz = np.clip(pz.astype(int), 0, nzl - 2)
    ty = py - iy
    tz = pz - iz
    tym, tzm = np.meshgrid(ty, tz)
    iym, izm = np.meshgrid(iy, iz)

    def dot(dy, dz):
        g_y = gvy[izm + dz, iym + dy]
        g_z = gvz[izm + dz, iym + dy]
        return g_y * (tym - dy) + g_z * (tzm - dz)

    # smootherstep fade keeps the field C1 across lattice cells
    fy = tym**3 * (tym * (tym * 6 - 15) + 10)
    fz = tzm**3 * (tzm * (tzm * 6 - 15) + 10)
    n0 = dot(0, 0) * (1 - fy) + dot(1, 0) * fy
    n1 = dot(0, 1) * (1 - fy) + dot(1, 1) * fy
    return n0 * (1 - fz) + n1 * fz


def fractal_noise(yy, zz, rng, base_cell=4.0, octaves=4, persistence=0.5, amplitude=1.0):
    """Octave-summed lattice noise over the node grid."""
    ys = yy[0, :]
    zs = zz[:, 0]
    out = np.zeros_like(yy)
    amp = amplitude
    cell = base_cell
    for _ in range(octaves):
        out += amp * _lattice_noise(yy.shape, ys, zs, cell, rng)
        amp *= persistence
        cell /= 2.0
    return out


def _ridge_field(yy, zz, ridges):
    """Crest/dihedral features: signed triangular profile along line segments.

    ``ridges`` is a list of (y0, z0, y1, z1, depth, width); positive depth is a
    protruding crest, negative carves a dihedral into the wall.
    """
    out = np.zeros_like(yy)
    for y0, z0, y1, z1, depth, width in ridges:
        vy, vz = y1 - y0, z1 - z0
        L2 = vy * vy + vz * vz
        t = np.clip(((yy - y0) * vy + (zz - z0) * vz) / L2, 0.0, 1.0)
        dy = yy - (y0 + t * vy)
        dz = zz - (z0 + t * vz)
        dist = np.hypot(dy, dz)
        out += depth * np.maximum(0.0, 1.0 - dist / width)
    return out


def generate_terrain(kind: str, params=None, seed: int = 0) -> HeightMap:
    """Build one of the experiment terrains; deterministic given (kind, params, seed)."""
    if kind not in TERRAIN_KINDS:
        raise ConfigError(f"unknown terrain kind {kind!r}; expected one of {TERRAIN_KINDS}")
    p, yy, zz = _grid(params)
    rng = np.random.default_rng(seed)

    if kind == "flat":
        depth = np.zeros_like(yy)

    elif kind == "hemisphere":
        cy = float(p.get("center_y", (yy.min() + yy.max()) / 2))
        cz = float(p.get("center_z", (zz.min() + zz.max()) / 2))
        radius = float(p.get("radius", 3.5))
        if radius <= 0:
            raise ConfigError("hemisphere radius must be positive")
        if not (yy.min() <= cy <= yy.max() and zz.min() <= cz <= zz.max()):
            raise ConfigError(f"hemisphere center ({cy}, {cz}) outside extent")
        depth = spherical_cap(yy, zz, cy, cz, radius)

    elif kind == "bulged_pillars":
        bulges = p.get("bulges")
        if bulges is None:
            # default: three pillars staggered across the wall
            bulges = [
                (2.5, -14.0, 2.0, 1.2),
                (6.0, -11.0, 2.2, 1.4),
                (3.5, -7.0, 1.8, 1.1),
            ]
        for cy, cz, amp, sigma in bulges:
            if sigma <= 0:
                raise ConfigError("bulge sigma must be positive")
            if not (yy.min() <= cy <= yy.max() and zz.min() <= cz <= zz.max()):
                raise ConfigError(f"bulge center ({cy}, {cz}) outside extent")
        depth = gaussian_bulges(yy, zz, bulges)

    else:  # rocky
        max_ridge_depth = float(p.get("max_ridge_depth", 0.5))
        ridges = p.get("ridges")
        if ridges is None:
            n_ridges = int(p.get("n_ridges", 6))
            ridges = []
            for _ in range(n_ridges):
                y0 = rng.uniform(yy.min(), yy.max())
                z0 = rng.uniform(zz.min(), zz.max())
                ang = rng.uniform(0, 2 * np.pi)
                length = rng.uniform(2.0, 6.0)
                sign = 1.0 if rng.uniform() < 0.5 else -1.0
                ridges.append(
                    (
                        y0,
                        z0,
                        y0 + length * np.cos(ang),
                        z0 + length * np.sin(ang),
                        sign * rng.uniform(0.3, 1.0) * max_ridge_depth * 2.0,
                        rng.uniform(0.6, 1.5),
                    )
                )
        depth = _ridge_field(yy, zz, ridges)
        depth += fractal_noise(
            yy,
            zz,
            rng,
            base_cell=float(p.get("noise_cell", 4.0)),
            octaves=int(p.get("noise_octaves", 4)),
            amplitude=float(p.get("noise_amplitude", 0.35)),
        )
        bulges = p.get("bulges")
        if bulges:
            depth += gaussian_bulges(yy, zz, bulges)
        depth = np.maximum(depth, -max_ridge_depth)

    return HeightMap(
        origin_y=float(p["origin_y"]),
        origin_z=float(p["origin_z"]),
        resolution=float(p["resolution"]),
        depth=depth,
    )


# ---------------------------------------------------------------------------
# File format: header "ny nz resolution origin_y origin_z", then n_z rows of
# n_y whitespace-separated depth values (meters).
# ---------------------------------------------------------------------------


def save_heightmap(hm: HeightMap, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{hm.n_y} {hm.n_z} {hm.resolution:.17g} {hm.origin_y:.17g} {hm.origin_z:.17g}\n")
        for iz in range(hm.n_z):
            fh.write(" ".join(f"{v:.17g}" for v in hm.depth[iz]) + "\n")


def load_heightmap(path) -> HeightMap:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 5:
            raise ParseError(f"bad header: expected 5 fields, got {len(header)}")
        try:
            n_y, n_z = int(header[0]), int(header[1])
            resolution, origin_y, origin_z = (float(v) for v in header[2:])
        except ValueError as exc:
            raise ParseError(f"bad header: {exc}") from exc
        if resolution <= 0:
            raise ConfigError(f"header resolution must be positive, got {resolution}")
        if n_y < 2 or n_z < 2:
            raise ConfigError(f"grid must be at least 2x2, got {n_y}x{n_z}")
        rows = []
        for iz in range(n_z):
            line = fh.readline()
            if not line:
                raise ParseError(f"unexpected end of file at row {iz}")
            vals = line.split()
            if len(vals) != n_y:
                raise ParseError(f"row {iz}: expected {n_y} values, got {len(vals)}")
            try:
                row = np.array([float(v) for v in vals])
            except ValueError as exc:
                raise ParseError(f"row {iz}: {exc}") from exc
            if not np.isfinite(row).all():
                iy = int(np.flatnonzero(~np.isfinite(row))[0])
                raise ParseError(f"non-finite value at row {iz}, column {iy}")
            rows.append(row)
    return HeightMap(origin_y=origin_y, origin_z=origin_z, resolution=resolution, depth=np.array(rows))
