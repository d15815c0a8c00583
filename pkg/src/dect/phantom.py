"""Material library and the suitcase phantom."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ImageGrid
from .physics import ImagePair


@dataclass(frozen=True)
class Material:
    name: str
    c: float  # cm^-1
    p: float  # keV cm^-1

    def __post_init__(self):
        if self.c < 0 or self.p < 0:
            raise ValueError(f"{self.name}: coefficients must be non-negative")


# Least-squares fits of c*f_KN(E) + p*E^-3 to tabulated total attenuation on
# 20-140 keV (scripts/fit_materials.py). Relative RMS residual in comments.
MATERIALS = {
    "air": Material("air", 0.0, 0.0),
    "water": Material("water", 0.167978, 4746.22),  # 0.20 %
    "doped_water": Material("doped_water", 0.177374, 9125.92),  # 10 wt% NaCl, 0.13 %
    "plastic": Material("plastic", 0.194211, 3487.11),  # PMMA, 0.14 %
    "aluminum": Material("aluminum", 0.394923, 69313.59),  # 0.37 %
    "neoprene": Material("neoprene", 0.193702, 31245.23),  # C4H5Cl, 0.06 %
}


def material_coefficients(name: str) -> Material:
    try:
        return MATERIALS[name]
    except KeyError:
        raise KeyError(f"unknown material {name!r}; known: {sorted(MATERIALS)}") from None


def _local_coords(X, Y, center, rotation_deg):
    th = math.radians(rotation_deg)
    dx, dy = X - center[0], Y - center[1]
    return dx * math.cos(th) + dy * math.sin(th), -dx * math.sin(th) + dy * math.cos(th)


@dataclass(frozen=True)
class Shape:
    """Geometric primitive in cm.

    kind:
      ``rectangle``  size = (width, height); ``thickness`` > 0 makes it a frame
      ``ellipse``    size = (semi-axis x, semi-axis y); ``thickness`` > 0 makes a rim
      ``annulus``    size = (r_inner, r_outer); ``gap_deg`` cuts a C-shape opening
                     centred on the local +x axis
    """

    kind: str
    center: tuple[float, float]
    size: tuple[float, float]
    rotation: float = 0.0
    thickness: float = 0.0
    gap_deg: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rectangle", "ellipse", "annulus"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if min(self.size) <= 0:
            raise ValueError("shape sizes must be positive")

    def contains(self, X, Y) -> np.ndarray:
        u, v = _local_coords(X, Y, self.center, self.rotation)
        a, b = self.size
        if self.kind == "rectangle":
            inside = (np.abs(u) <= a / 2) & (np.abs(v) <= b / 2)
            if self.thickness > 0:
                t = self.thickness
                inside &= ~((np.abs(u) < a / 2 - t) & (np.abs(v) < b / 2 - t))
            return inside
        if self.kind == "ellipse":
            inside = (u / a) ** 2 + (v / b) ** 2 <= 1
            if self.thickness > 0:
                t = self.thickness
                inside &= ~((u / (a - t)) ** 2 + (v / (b - t)) ** 2 < 1)
            return inside
        r = np.hypot(u, v)
        inside = (r >= a) & (r <= b)
        if self.gap_deg > 0:
            ang = np.degrees(np.abs(np.arctan2(v, u)))
            inside &= ang > self.gap_deg / 2
        return inside


@dataclass(frozen=True)
class SceneObject:
    name: str
    shape: Shape
    material: str


@dataclass
class PhantomScene:
    """Ordered objects (later ones overwrite earlier) and their final pixel masks."""

    grid: ImageGrid
    objects: list[SceneObject]
    masks: dict[str, np.ndarray] = field(default_factory=dict)

    def material_of(self, name: str) -> str:
        return next(o.material for o in self.objects if o.name == name)


def rasterize(grid: ImageGrid, objects) -> tuple[ImagePair, PhantomScene]:
    """Paint objects in order at pixel centres; masks record final ownership."""
    X, Y = grid.pixel_centers()
    owner = np.full(grid.shape, -1, dtype=int)
    for i, obj in enumerate(objects):
        material_coefficients(obj.material)
        owner[obj.shape.contains(X, Y)] = i
    c = np.zeros(grid.shape)
    p = np.zeros(grid.shape)
    masks = {}
    for i, obj in enumerate(objects):
        m = owner == i
        if not m.any():
            raise ValueError(f"object {obj.name!r} covers no pixels on a {grid.nx}x{grid.ny} grid")
        mat = material_coefficients(obj.material)
        c[m] = mat.c
        p[m] = mat.p
        masks[obj.name] = m
    return ImagePair(grid, c, p), PhantomScene(grid, list(objects), masks)


def suitcase_objects() -> list[SceneObject]:
    """Default suitcase layout on a 40 cm field of view.

    Plastic case, central aluminium block, C-shaped neoprene sheet (lower
    left) and a plastic bottle of water (upper right).
    """
    return [
        SceneObject("case", Shape("rectangle", (0.0, 0.0), (36.0, 26.0), thickness=1.3), "plastic"),
        SceneObject("aluminum", Shape("rectangle", (0.0, -1.0), (6.0, 4.5)), "aluminum"),
        SceneObject("neoprene", Shape("annulus", (-9.5, -3.0), (2.6, 5.0), gap_deg=70.0), "neoprene"),
        SceneObject("bottle", Shape("ellipse", (9.0, 4.5), (5.5, 4.2), rotation=15.0, thickness=0.8),
                    "plastic"),
        SceneObject("water", Shape("ellipse", (9.0, 4.5), (4.7, 3.4), rotation=15.0), "water"),
    ]


def build_suitcase_phantom(grid: ImageGrid, objects=None) -> tuple[ImagePair, PhantomScene]:
    """Ground-truth (c, p) images and object masks for the suitcase phantom.

    The grid must be at least 64x64 and cover the 36 x 26 cm case.
    """
    if grid.nx < 64 or grid.ny < 64:
        raise ValueError(f"suitcase phantom needs at least a 64x64 grid, got {grid.nx}x{grid.ny}")
    xmin, xmax, ymin, ymax = grid.extent
    if min(-xmin, xmax) < 18.0 or min(-ymin, ymax) < 13.0:
        raise ValueError("grid field of view too small for the 36 x 26 cm case")
    return rasterize(grid, suitcase_objects() if objects is None else objects)


def objects_from_records(records) -> list[SceneObject]:
    """Scene-file records -> objects. Each record: name, type, center, size,
    material and optional rotation, thickness, gap_deg."""
    allowed = {"name", "type", "center", "size", "material", "rotation", "thickness", "gap_deg"}
    out = []
    for i, rec in enumerate(records):
        extra = set(rec) - allowed
        if extra:
            raise ValueError(f"scene record {i}: unknown keys {sorted(extra)}")
        missing = {"name", "type", "center", "size", "material"} - set(rec)
        if missing:
            raise ValueError(f"scene record {i}: missing keys {sorted(missing)}")
        shape = Shape(rec["type"], tuple(map(float, rec["center"])), tuple(map(float, rec["size"])),
                      float(rec.get("rotation", 0.0)), float(rec.get("thickness", 0.0)),
                      float(rec.get("gap_deg", 0.0)))
        out.append(SceneObject(str(rec["name"]), shape, str(rec["material"])))
    return out


def homogeneous_objects(scene: PhantomScene) -> list[str]:
    """Objects whose cloud statistics are meaningful (excludes the case shell)."""
    return [o.name for o in scene.objects if o.name != "case"]
