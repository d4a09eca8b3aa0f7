"""Desk-scale stand-ins for measured data: a designed basis and procedural probes.

The designed basis has three material groups (diffuse, glossy
phenolic-like, sharp metallic specular).  Every material is a Lambertian
term plus a normalized Blinn-Phong lobe scaled by a Schlick Fresnel factor
in ``theta_d``, multiplied per channel by log-normal noise whose spread
grows toward grazing ``theta_d`` the way gonioreflectometer data does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .brdf import DESK_RESOLUTION, BasisSet, BrdfGrid, _as_resolution, bin_centers
from .envlight import EnvironmentMap

GROUPS = ("diffuse", "glossy", "specular")


@dataclass(frozen=True)
class GroupDesign:
    """Sampling ranges of one material group (uniform draws)."""

    diffuse: tuple[float, float]
    specular: tuple[float, float]
    exponent: tuple[float, float]
    f0: tuple[float, float]
    colored_specular: bool = False


DESIGN = {
    "diffuse": GroupDesign((0.1, 0.9), (0.0, 0.04), (1.0, 4.0), (0.02, 0.06)),
    "glossy": GroupDesign((0.05, 0.3), (0.2, 0.3), (80.0, 120.0), (0.03, 0.08)),
    "specular": GroupDesign((0.0, 0.03), (0.3, 0.9), (800.0, 1200.0), (0.5, 0.95), colored_specular=True),
}

NOISE = 0.1  # log-normal spread at normal incidence
GRAZING_NOISE_GAIN = 3.0  # spread is NOISE * (1 + gain * (theta_d / (pi/2))**4)


def schlick(f0: float, theta_d) -> np.ndarray:
    return f0 + (1.0 - f0) * (1.0 - np.cos(theta_d)) ** 5


def material(group: str, rng: np.random.Generator, resolution=DESK_RESOLUTION, noise: float = NOISE):
    """Draw one material of ``group``; returns its ``(R, G, B)`` grids."""
    if group not in DESIGN:
        raise ValueError(f"unknown material group {group!r}")
    d = DESIGN[group]
    res = _as_resolution(resolution)
    theta_h, theta_d, _ = bin_centers(res)
    th, td = np.meshgrid(theta_h, theta_d, indexing="ij")

    kd = rng.uniform(*d.diffuse, 3)
    ks = rng.uniform(*d.specular, 3) if d.colored_specular else np.full(3, rng.uniform(*d.specular))
    k = rng.uniform(*d.exponent)
    f0 = rng.uniform(*d.f0)
    lobe = (k + 2.0) / (2.0 * np.pi) * np.cos(th) ** k * schlick(f0, td) / f0
    spread = noise * (1.0 + GRAZING_NOISE_GAIN * (td / (0.5 * np.pi)) ** 4)

    grids = []
    for c in range(3):
        clean = np.broadcast_to((kd[c] / np.pi + ks[c] * lobe)[:, :, None], res)
        jitter = np.exp(spread[:, :, None] * rng.standard_normal(res)) if noise else 1.0
        grids.append(BrdfGrid(clean * jitter))
    return tuple(grids)


def designed_basis(per_group: int = 10, resolution=DESK_RESOLUTION, seed: int = 7, noise: float = NOISE):
    """Basis of ``3 * per_group`` materials (three columns each) with known groups.

    Returns
    -------
    basis : BasisSet
    groups : dict
        Material name to its design group.
    """
    rng = np.random.default_rng(seed)
    materials, groups = [], {}
    for group in GROUPS:
        for i in range(per_group):
            name = f"{group}-{i:02d}"
            materials.append((name, material(group, rng, resolution, noise)))
            groups[name] = group
    return BasisSet.from_materials(materials), groups


def _blob(dirs, center, width_rad):
    c = np.asarray(center, dtype=np.float64)
    c = c / np.linalg.norm(c)
    cosang = np.clip(dirs @ c, -1.0, 1.0)
    return np.exp(-((np.arccos(cosang) / width_rad) ** 2))


# Probe A puts its sun close to the viewer (small theta_d highlights);
# probe B lights the sphere from behind, exposing grazing theta_d.
_LAYOUTS = {
    "A": dict(sky=(0.35, 0.5, 0.9), ground=(0.25, 0.18, 0.1),
              sun=((0.3, 0.35, 0.89), 60.0, (1.0, 0.95, 0.8)),
              blobs=[((-0.8, 0.2, -0.3), 0.35, (0.9, 0.3, 0.1), 2.0),
                     ((0.2, -0.1, 0.9), 0.5, (0.2, 0.8, 0.3), 1.2)]),
    "B": dict(sky=(0.8, 0.7, 0.55), ground=(0.1, 0.12, 0.2),
              sun=((-0.3, 0.4, -0.87), 90.0, (0.7, 0.8, 1.0)),
              blobs=[((0.7, 0.3, 0.4), 0.3, (0.2, 0.4, 1.0), 3.0),
                     ((-0.1, 0.1, -0.9), 0.6, (1.0, 0.9, 0.4), 1.0)]),
    "C": dict(sky=(0.5, 0.5, 0.5), ground=(0.3, 0.3, 0.3),
              sun=((0.0, 0.9, -0.4), 40.0, (1.0, 1.0, 1.0)),
              blobs=[((0.9, -0.2, 0.1), 0.4, (1.0, 0.5, 0.5), 2.0)]),
}
PROBES = tuple(_LAYOUTS) + ("uniform",)


def procedural_image(kind: str = "A", height: int = 64, width: int = 64) -> np.ndarray:
    """Lat-long radiance image with a sky gradient, a sun and colored area lights."""
    if kind == "uniform":
        return np.ones((height, width, 3))
    if kind not in _LAYOUTS:
        raise ValueError(f"unknown probe layout {kind!r}; choose from {PROBES}")
    spec = _LAYOUTS[kind]
    dirs = EnvironmentMap.from_image(np.ones((height, width, 3)), "latlong").directions
    t = 0.5 * (dirs[..., 1:2] + 1.0)
    image = t * np.asarray(spec["sky"]) + (1.0 - t) * np.asarray(spec["ground"])
    sun_dir, sun_power, sun_rgb = spec["sun"]
    image = image + sun_power * _blob(dirs, sun_dir, 0.06)[..., None] * np.asarray(sun_rgb)
    for center, width_rad, rgb, power in spec["blobs"]:
        image = image + power * _blob(dirs, center, width_rad)[..., None] * np.asarray(rgb)
    return image


def procedural_probe(kind: str = "A", height: int = 64, width: int = 64, scale: float = 1.0) -> EnvironmentMap:
    return EnvironmentMap.from_image(procedural_image(kind, height, width) * scale, "latlong", name=f"procedural-{kind}")
