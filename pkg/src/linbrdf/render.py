"""Linear reflectance-map renderer.

For fixed lighting and sphere geometry, rendering a tabulated BRDF is a
matrix-vector product ``y_c = T_c @ rho`` where ``T_c`` is a sparse
``(pixels, bins)`` matrix per color channel.  Entry ``(k, j)`` of ``T_c``
sums ``cos(theta_i) * L_c(w_i) * solid_angle`` over every lit texel whose
direction pair with pixel ``k`` falls into BRDF bin ``j``.  Quadrature is a
plain sum over texels, so the renderer is exactly linear in the BRDF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .brdf import BasisSet, BrdfGrid, _as_resolution, flat_bin_index
from .envlight import EnvironmentMap

VIEW = np.array([0.0, 0.0, 1.0])
_PAIRS_PER_CHUNK = 1 << 20


def local_frames(normals: np.ndarray) -> np.ndarray:
    """Rows ``(tangent, bitangent, normal)`` for each unit normal.

    The tangent is ``normalize(a x n)`` with ``a = +z``, switching to ``+x``
    when ``|n . z| > 0.999``.
    """
    normals = np.asarray(normals, dtype=np.float64)
    near_pole = np.abs(normals[:, 2]) > 0.999
    a = np.where(near_pole[:, None], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0])
    t = np.cross(a, normals)
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    b = np.cross(normals, t)
    return np.stack([t, b, normals], axis=1)


@dataclass(frozen=True, eq=False)
class SphereGeometry:
    """Orthographic view of a unit sphere along ``-z`` on a square image."""

    size: int = 128

    def __post_init__(self):
        size = int(self.size)
        if size < 1:
            raise ValueError("image size must be positive")
        c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
        x, y = np.meshgrid(c, -c)  # row 0 is the top of the image
        r2 = x * x + y * y
        mask = r2 <= 1.0
        normals = np.stack([x[mask], y[mask], np.sqrt(np.maximum(1.0 - r2[mask], 0.0))], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        frames = local_frames(normals)
        for arr in (mask, normals, frames):
            arr.flags.writeable = False
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "frames", frames)

    @property
    def n_pixels(self) -> int:
        return self.normals.shape[0]

    @property
    def identifier(self) -> str:
        return f"sphere-ortho-{self.size}"

    def view_local(self) -> np.ndarray:
        """The view direction in every pixel's local frame, ``(M, 3)``."""
        return self.frames @ VIEW

    def to_image(self, values, fill: float = 0.0) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        shape = (self.size, self.size) + values.shape[1:]
        image = np.full(shape, fill, dtype=np.float64)
        image[self.mask] = values
        return image

    def from_image(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        if image.shape[:2] != (self.size, self.size):
            raise ValueError(
                f"image of shape {image.shape[:2]} does not match {self.size}x{self.size} geometry"
            )
        return image[self.mask]


@dataclass(frozen=True, eq=False)
class ReflectanceMap:
    """Per-pixel RGB radiance of the on-sphere pixels."""

    geometry: SphereGeometry
    pixels: np.ndarray  # (M, 3)
    valid: np.ndarray | None = None  # (M,) bool

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim == 1:
            pixels = pixels[:, None]
        if pixels.shape[0] != self.geometry.n_pixels:
            raise ValueError("pixel count does not match geometry")
        valid = np.isfinite(pixels).all(axis=1)
        if self.valid is not None:
            valid &= np.asarray(self.valid, dtype=bool)
        pixels = np.where(valid[:, None], pixels, 0.0)
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_image(cls, image, geometry: SphereGeometry, mask=None) -> "ReflectanceMap":
        """Non-finite pixels and pixels where ``mask`` is False are invalid."""
        pixels = geometry.from_image(image)
        valid = None if mask is None else geometry.from_image(np.asarray(mask, dtype=bool))
        return cls(geometry, pixels, valid)

    def to_image(self, fill: float = 0.0) -> np.ndarray:
        return self.geometry.to_image(self.pixels, fill)

    def channel(self, c: int) -> np.ndarray:
        return self.pixels[:, c]


@dataclass(frozen=True, eq=False)
class TransportOperator:
    matrices: tuple[sp.csr_matrix, sp.csr_matrix, sp.csr_matrix]
    geometry: SphereGeometry
    resolution: tuple[int, int, int]
    lighting_id: str = ""

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrices[0].shape

    def _vector(self, brdf) -> np.ndarray:
        vec = brdf.vector if isinstance(brdf, BrdfGrid) else np.asarray(brdf, dtype=np.float64).reshape(-1)
        if vec.size != self.shape[1]:
            raise ValueError(f"BRDF vector of length {vec.size}, transport expects {self.shape[1]}")
        return vec

    def render(self, brdf, channel: int = 0) -> np.ndarray:
        """One color channel of the reflectance map of a monochrome BRDF."""
        return self.matrices[channel] @ self._vector(brdf)

    def render_rgb(self, grids) -> ReflectanceMap:
        if isinstance(grids, BrdfGrid):
            grids = (grids, grids, grids)
        if len(grids) != 3:
            raise ValueError("render_rgb needs one BRDF per color channel")
        pixels = np.stack([self.render(g, c) for c, g in enumerate(grids)], axis=1)
        return ReflectanceMap(self.geometry, pixels)

    def render_basis(self, basis: BasisSet) -> "ObservationMatrix":
        return render_basis(self, basis)


@dataclass(frozen=True, eq=False)
class ObservationMatrix:
    """Renderings of every basis column under every light channel.

    ``Y[c, :, i]`` is basis column ``i`` rendered with channel ``c`` of the
    lighting.
    """

    Y: np.ndarray  # (3, M, n)
    labels: tuple[tuple[str, str], ...]
    lighting_id: str = ""

    @property
    def n(self) -> int:
        return self.Y.shape[2]

    def select(self, indices) -> "ObservationMatrix":
        idx = np.asarray(indices, dtype=np.int64)
        return ObservationMatrix(self.Y[:, :, idx], tuple(self.labels[i] for i in idx), self.lighting_id)

    def dot(self, weights) -> np.ndarray:
        """``(M, 3)`` rendering of per-channel weights ``(3, n)``."""
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim == 1:
            w = np.broadcast_to(w, (3, w.size))
        return np.einsum("cmn,cn->mc", self.Y, w)


def _assemble(directions, power, geometry: SphereGeometry, resolution) -> tuple[sp.csr_matrix, ...]:
    """Sparse transport for point samples ``directions`` carrying ``power``.

    ``power[k, c]`` is radiance times solid angle (or irradiance for a
    directional light) of sample ``k`` in color channel ``c``.
    """
    res = _as_resolution(resolution)
    p = int(np.prod(res))
    frames = geometry.frames
    wo_all = geometry.view_local()
    n_pix = geometry.n_pixels
    n_dir = directions.shape[0]
    chunk = max(1, _PAIRS_PER_CHUNK // max(n_dir, 1))

    indptr = np.zeros(n_pix + 1, dtype=np.int64)
    index_parts = []
    data_parts = ([], [], [])
    for start in range(0, n_pix, chunk):
        stop = min(start + chunk, n_pix)
        fr = frames[start:stop]
        cos = fr[:, 2, :] @ directions.T
        rows, ks = np.nonzero(cos > 0.0)
        if rows.size == 0:
            indptr[start + 1:stop + 1] = indptr[start]
            continue
        weight = cos[rows, ks]
        wi = np.stack(
            [(fr[:, 0, :] @ directions.T)[rows, ks], (fr[:, 1, :] @ directions.T)[rows, ks], weight],
            axis=1,
        )
        bins = flat_bin_index(wi, wo_all[start + rows], res)
        keys = rows * p + bins
        uniq, inverse = np.unique(keys, return_inverse=True)
        for c in range(3):
            data_parts[c].append(
                np.bincount(inverse, weights=weight * power[ks, c], minlength=uniq.size)
            )
        index_parts.append(uniq % p)
        counts = np.bincount(uniq // p, minlength=stop - start)
        indptr[start + 1:stop + 1] = indptr[start] + np.cumsum(counts)

    indices = np.concatenate(index_parts) if index_parts else np.zeros(0, dtype=np.int64)
    indices = indices.astype(np.int32 if p < 2**31 else np.int64)
    matrices = []
    for c in range(3):
        data = np.concatenate(data_parts[c]) if data_parts[c] else np.zeros(0)
        matrices.append(sp.csr_matrix((data, indices, indptr), shape=(n_pix, p)))
    return tuple(matrices)


def build_transport(env: EnvironmentMap, geometry: SphereGeometry, resolution) -> TransportOperator:
    """Transport operator of a sphere under distant environment lighting."""
    directions, radiance, solid = env.samples()
    power = radiance * solid[:, None]
    matrices = _assemble(directions, power, geometry, resolution)
    lighting = f"{env.name or 'probe'}:{env.digest()}"
    return TransportOperator(matrices, geometry, _as_resolution(resolution), lighting)


def build_directional_transport(direction, geometry: SphereGeometry, resolution, irradiance=(1.0, 1.0, 1.0)) -> TransportOperator:
    """Transport for a single distant directional light (world direction toward the light)."""
    d = np.asarray(direction, dtype=np.float64)
    d = (d / np.linalg.norm(d))[None, :]
    power = np.broadcast_to(np.asarray(irradiance, dtype=np.float64), (1, 3))
    matrices = _assemble(d, power, geometry, resolution)
    lighting = "directional:" + ",".join(f"{v:.6g}" for v in d[0])
    return TransportOperator(matrices, geometry, _as_resolution(resolution), lighting)


def render(T: TransportOperator, brdf, channel: int = 0) -> np.ndarray:
    return T.render(brdf, channel)


def render_rgb(T: TransportOperator, grids) -> ReflectanceMap:
    return T.render_rgb(grids)


def render_basis(T: TransportOperator, basis: BasisSet) -> ObservationMatrix:
    """Precompute ``Y`` with one column per basis BRDF and light channel."""
    if basis.resolution != T.resolution:
        raise ValueError(f"basis resolution {basis.resolution} differs from transport {T.resolution}")
    Y = np.stack([np.asarray(T.matrices[c] @ basis.matrix) for c in range(3)], axis=0)
    return ObservationMatrix(Y, basis.labels, T.lighting_id)


def tonemap(values, gamma: float = 2.2, exposure: float = 1.0) -> np.ndarray:
    """Display encoding: clip(value * exposure, 0, 1) ** (1/gamma) as uint8."""
    v = np.clip(np.asarray(values, dtype=np.float64) * exposure, 0.0, 1.0)
    return np.round(255.0 * v ** (1.0 / gamma)).astype(np.uint8)


def save_png(path, image_linear, gamma: float = 2.2, exposure: float = 1.0) -> None:
    from PIL import Image

    Image.fromarray(tonemap(image_linear, gamma, exposure)).save(path)
