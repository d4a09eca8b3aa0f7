"""Distant natural lighting from HDR light-probe images.

Two probe layouts are understood.  Both put the image center at direction
``(0, 0, -1)`` and image-up at ``+y``:

``angular``
    Debevec angular map.  A texel at normalized disc coordinates ``(u, v)``
    with radius ``r`` looks along polar angle ``pi * r`` measured from ``-z``.
    Texels outside the unit disc carry no light.
``latlong``
    Equirectangular map, polar angle from ``+y`` down the rows and azimuth
    across the columns.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .hdrio import read_hdr_image

MAPPINGS = ("angular", "latlong")
_ANGULAR_SUBSAMPLES = 4


def _angular_directions(u, v):
    r = np.hypot(u, v)
    theta = np.pi * np.minimum(r, 1.0)
    safe_r = np.where(r > 0.0, r, 1.0)
    s = np.sin(theta)
    x = np.where(r > 0.0, s * u / safe_r, 0.0)
    y = np.where(r > 0.0, s * v / safe_r, 0.0)
    return np.stack([x, y, -np.cos(theta)], axis=-1)


def _angular_geometry(height: int, width: int):
    cols = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    rows = 1.0 - (np.arange(height) + 0.5) / height * 2.0
    u, v = np.meshgrid(cols, rows)
    directions = _angular_directions(u, v)
    # dω = pi * sin(pi r) / r du dv, integrated on a sub-grid per texel
    k = _ANGULAR_SUBSAMPLES
    du, dv = 2.0 / width, 2.0 / height
    offsets = (np.arange(k) + 0.5) / k - 0.5
    solid = np.zeros((height, width))
    for ox in offsets:
        for oy in offsets:
            us, vs = u + ox * du, v + oy * dv
            r = np.hypot(us, vs)
            inside = r <= 1.0
            jac = np.where(r > 0.0, np.pi * np.sin(np.pi * np.minimum(r, 1.0)) / np.where(r > 0.0, r, 1.0), np.pi**2)
            solid += np.where(inside, jac, 0.0)
    solid *= du * dv / (k * k)
    return directions, solid


def _latlong_geometry(height: int, width: int):
    phi = (np.arange(width) + 0.5) / width * 2.0 * np.pi - np.pi
    theta = (np.arange(height) + 0.5) / height * np.pi
    ph, th = np.meshgrid(phi, theta)
    directions = np.stack(
        [np.sin(th) * np.sin(ph), np.cos(th), -np.sin(th) * np.cos(ph)], axis=-1
    )
    edges = np.arange(height + 1) / height * np.pi
    band = np.cos(edges[:-1]) - np.cos(edges[1:])  # exact integral of sin over the row
    solid = np.repeat((band * 2.0 * np.pi / width)[:, None], width, axis=1)
    return directions, solid


@dataclass(frozen=True, eq=False)
class EnvironmentMap:
    """Distant lighting as a texel grid with per-texel direction and solid angle."""

    radiance: np.ndarray  # (H, W, 3)
    mapping: str
    directions: np.ndarray  # (H, W, 3), unit
    solid_angles: np.ndarray  # (H, W), sr
    name: str = ""

    @classmethod
    def from_image(cls, image, mapping: str, name: str = "") -> "EnvironmentMap":
        if mapping not in MAPPINGS:
            raise ValueError(f"mapping must be one of {MAPPINGS}, got {mapping!r}")
        radiance = np.asarray(image, dtype=np.float64)
        if radiance.ndim == 2:
            radiance = np.repeat(radiance[..., None], 3, axis=2)
        if radiance.ndim != 3 or radiance.shape[2] != 3:
            raise ValueError(f"probe image must be (H, W, 3), got {radiance.shape}")
        height, width = radiance.shape[:2]
        if height * width < 2:
            raise ValueError(f"probe of {width}x{height} texels cannot cover the sphere")
        if not np.all(np.isfinite(radiance)):
            raise DataError("probe radiance contains non-finite texels")
        if np.any(radiance < 0.0):
            raise DataError("probe radiance contains negative texels")
        if mapping == "angular":
            if height != width:
                raise DataError(f"angular probes are square; got {width}x{height} (wrong --mapping?)")
            directions, solid = _angular_geometry(height, width)
        else:
            directions, solid = _latlong_geometry(height, width)
        for arr in (radiance, directions, solid):
            arr.flags.writeable = False
        return cls(radiance, mapping, directions, solid, name)

    @property
    def height(self) -> int:
        return self.radiance.shape[0]

    @property
    def width(self) -> int:
        return self.radiance.shape[1]

    @property
    def texel_count(self) -> int:
        return self.height * self.width

    def _flat(self, index) -> int:
        if isinstance(index, tuple):
            row, col = index
            if not (0 <= row < self.height and 0 <= col < self.width):
                raise IndexError(f"texel {index} outside {self.height}x{self.width} probe")
            return row * self.width + col
        index = int(index)
        if not 0 <= index < self.texel_count:
            raise IndexError(f"texel index {index} outside probe of {self.texel_count} texels")
        return index

    def texel_direction(self, index) -> np.ndarray:
        return self.directions.reshape(-1, 3)[self._flat(index)].copy()

    def texel_solid_angle(self, index) -> float:
        return float(self.solid_angles.reshape(-1)[self._flat(index)])

    def scaled(self, factor: float) -> "EnvironmentMap":
        return EnvironmentMap.from_image(self.radiance * float(factor), self.mapping, self.name)

    def samples(self):
        """Lit texels as flat ``(directions, radiance, solid_angles)`` arrays."""
        d = self.directions.reshape(-1, 3)
        L = self.radiance.reshape(-1, 3)
        w = self.solid_angles.reshape(-1)
        keep = (w > 0.0) & np.any(L > 0.0, axis=1)
        return d[keep], L[keep], w[keep]

    def irradiance(self, normal) -> np.ndarray:
        """Cosine-weighted irradiance (RGB) onto a surface with ``normal``."""
        d, L, w = self.samples()
        cos = np.maximum(d @ np.asarray(normal, dtype=np.float64), 0.0)
        return (cos * w) @ L

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.mapping.encode())
        h.update(np.ascontiguousarray(self.radiance).tobytes())
        h.update(str(self.radiance.shape).encode())
        return h.hexdigest()[:16]


def load_probe(source, mapping: str, name: str = "") -> EnvironmentMap:
    """Decode a Radiance or PFM light probe."""
    return EnvironmentMap.from_image(read_hdr_image(source), mapping, name)
