"""Tabulated isotropic BRDFs in the MERL half/difference-angle layout.

A BRDF is stored as a dense ``(theta_h, theta_d, phi_d)`` table of linear
values in 1/sr, one table per color channel.  The ``theta_h`` axis uses the
MERL square-root warp, ``phi_d`` covers ``[0, pi)`` (reciprocity folds the
other half).  Tables are flattened in C order, which matches the on-disk MERL
ordering (``theta_h`` outer, ``phi_d`` inner).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .errors import DataError, DomainError, FormatError

MERL_RESOLUTION = (90, 90, 180)
DESK_RESOLUTION = (16, 16, 16)
CHANNELS = ("R", "G", "B")
# Per-channel radiometric scale of the MERL binary files.
MERL_SCALE = (1.0 / 1500.0, 1.15 / 1500.0, 1.66 / 1500.0)
_INVALID_RAW = -1.0

HALF_PI = 0.5 * np.pi


def _as_resolution(resolution: Sequence[int]) -> tuple[int, int, int]:
    res = tuple(int(r) for r in resolution)
    if len(res) != 3 or min(res) < 1:
        raise ValueError(f"resolution must be three positive counts, got {resolution!r}")
    return res  # type: ignore[return-value]


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class BrdfGrid:
    """One color channel of a tabulated BRDF.

    ``values`` holds 0 wherever ``valid`` is False; ``valid=None`` means every
    bin is valid.
    """

    values: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError(f"BRDF table must be 3-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("BRDF table contains non-finite values")
        valid = self.valid
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != values.shape:
                raise ValueError("validity mask shape differs from table shape")
            if valid.all():
                valid = None
            else:
                values = np.where(valid, values, 0.0)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "valid", None if valid is None else _frozen(valid))

    @classmethod
    def from_vector(cls, vector, resolution, valid=None) -> "BrdfGrid":
        res = _as_resolution(resolution)
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != np.prod(res):
            raise ValueError(f"vector of length {vector.size} does not fit resolution {res}")
        mask = None if valid is None else np.asarray(valid, dtype=bool).reshape(res)
        return cls(vector.reshape(res), mask)

    @classmethod
    def constant(cls, value: float, resolution=DESK_RESOLUTION) -> "BrdfGrid":
        return cls(np.full(_as_resolution(resolution), float(value)))

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def vector(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def valid_vector(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.size, dtype=bool)
        return self.valid.reshape(-1)

    def eval(self, wi, wo) -> np.ndarray | float:
        return evaluate(self, wi, wo)

    def __eq__(self, other):
        if not isinstance(other, BrdfGrid):
            return NotImplemented
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.valid_vector, other.valid_vector)
        )

    __hash__ = None  # type: ignore[assignment]


# ---------------------------------------------------------------------------
# Half/difference-angle coordinates
# ---------------------------------------------------------------------------


def half_diff_angles(wi, wo):
    """Convert local-frame direction pairs to ``(theta_h, theta_d, phi_d)``.

    Directions are unit vectors with ``z`` along the surface normal.  The
    formulas are chosen to be exactly symmetric under ``wi <-> wo``:
    ``theta_d`` comes from ``wi . wo = cos(2 theta_d)`` and ``phi_d`` from the
    antisymmetric difference ``wi - wo`` with a canonical sign, so swapping the
    pair never moves a lookup to a neighbouring bin.
    """
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    h = wi + wo
    h_norm = np.linalg.norm(h, axis=-1, keepdims=True)
    h = h / np.where(h_norm > 0.0, h_norm, 1.0)
    hx, hy, hz = h[..., 0], h[..., 1], h[..., 2]
    theta_h = np.arccos(np.clip(hz, -1.0, 1.0))
    phi_h = np.arctan2(hy, hx)

    cos_2td = np.clip(np.sum(wi * wo, axis=-1), -1.0, 1.0)
    theta_d = 0.5 * np.arccos(cos_2td)

    # Frame of the half vector: x' = Rz(phi_h) Ry(theta_h) e_x, y' = Rz(phi_h) e_y.
    cp, sp = np.cos(phi_h), np.sin(phi_h)
    ct, st = np.cos(theta_h), np.sin(theta_h)
    d = wi - wo
    dx = d[..., 0] * cp * ct + d[..., 1] * sp * ct - d[..., 2] * st
    dy = -d[..., 0] * sp + d[..., 1] * cp
    flip = (dy < 0.0) | ((dy == 0.0) & (dx < 0.0))
    dx = np.where(flip, -dx, dx)
    dy = np.where(flip, -dy, dy)
    phi_d = np.arctan2(dy, dx)
    phi_d = np.where(phi_d >= np.pi, 0.0, phi_d)
    return theta_h, theta_d, phi_d


def angles_to_directions(theta_h, theta_d, phi_d, phi_h=0.0):
    """Inverse of :func:`half_diff_angles` for a chosen half-vector azimuth."""
    theta_h, theta_d, phi_d, phi_h = np.broadcast_arrays(
        *(np.asarray(a, dtype=np.float64) for a in (theta_h, theta_d, phi_d, phi_h))
    )
    cp, sp = np.cos(phi_h), np.sin(phi_h)
    ct, st = np.cos(theta_h), np.sin(theta_h)
    h = np.stack([st * cp, st * sp, ct], axis=-1)
    xp = np.stack([cp * ct, sp * ct, -st], axis=-1)
    yp = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
    tangential = np.cos(phi_d)[..., None] * xp + np.sin(phi_d)[..., None] * yp
    cd, sd = np.cos(theta_d)[..., None], np.sin(theta_d)[..., None]
    wi = cd * h + sd * tangential
    wo = cd * h - sd * tangential
    return wi, wo


def bin_indices(theta_h, theta_d, phi_d, resolution):
    """Nearest-bin indices with the square-root warp on ``theta_h``."""
    n_th, n_td, n_pd = _as_resolution(resolution)
    th = np.clip(np.asarray(theta_h, dtype=np.float64), 0.0, HALF_PI)
    i_h = np.floor(np.sqrt(th / HALF_PI) * n_th).astype(np.int64)
    i_d = np.floor(np.asarray(theta_d, dtype=np.float64) / HALF_PI * n_td).astype(np.int64)
    phi = np.asarray(phi_d, dtype=np.float64)
    phi = np.where(phi < 0.0, phi + np.pi, phi)
    i_p = np.floor(phi / np.pi * n_pd).astype(np.int64)
    return (
        np.clip(i_h, 0, n_th - 1),
        np.clip(i_d, 0, n_td - 1),
        np.clip(i_p, 0, n_pd - 1),
    )


def flat_bin_index(wi, wo, resolution) -> np.ndarray:
    n_th, n_td, n_pd = _as_resolution(resolution)
    i_h, i_d, i_p = bin_indices(*half_diff_angles(wi, wo), resolution)
    return (i_h * n_td + i_d) * n_pd + i_p


def bin_centers(resolution):
    """Angles at the centers of every bin along each axis."""
    n_th, n_td, n_pd = _as_resolution(resolution)
    theta_h = ((np.arange(n_th) + 0.5) / n_th) ** 2 * HALF_PI
    theta_d = (np.arange(n_td) + 0.5) / n_td * HALF_PI
    phi_d = (np.arange(n_pd) + 0.5) / n_pd * np.pi
    return theta_h, theta_d, phi_d


def evaluate(brdf: BrdfGrid, wi, wo):
    """Nearest-bin BRDF value for local-frame direction pairs.

    Invalid bins evaluate to 0.  Raises :class:`DomainError` for directions
    below the horizon.
    """
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if np.any(wi[..., 2] < 0.0) or np.any(wo[..., 2] < 0.0):
        raise DomainError("BRDF lookup with a direction below the horizon")
    idx = flat_bin_index(wi, wo, brdf.resolution)
    out = brdf.vector[idx]
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# MERL binary I/O
# ---------------------------------------------------------------------------


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


def load_merl(source: bytes | BinaryIO | str | os.PathLike) -> tuple[BrdfGrid, BrdfGrid, BrdfGrid]:
    """Decode a MERL ``.binary`` file into R, G, B grids.

    Negative stored values mark unmeasured bins; they come back as masked
    zeros.
    """
    data = _read_bytes(source)
    if len(data) < 12:
        raise FormatError("MERL stream shorter than its 12-byte header")
    dims = struct.unpack("<3i", data[:12])
    if min(dims) < 1:
        raise FormatError(f"MERL header has non-positive dimensions {dims}")
    count = int(np.prod(dims, dtype=np.int64))
    expected = 12 + 3 * count * 8
    if len(data) != expected:
        raise FormatError(
            f"MERL payload size mismatch: header {dims} needs {expected} bytes, got {len(data)}"
        )
    raw = np.frombuffer(data, dtype="<f8", offset=12).reshape((3, *dims))
    if not np.all(np.isfinite(raw)):
        raise DataError("MERL payload contains non-finite values")
    grids = []
    for c in range(3):
        valid = raw[c] >= 0.0
        values = np.where(valid, raw[c] * MERL_SCALE[c], 0.0)
        grids.append(BrdfGrid(values, valid))
    return tuple(grids)  # type: ignore[return-value]


def save_merl(grids: Sequence[BrdfGrid]) -> bytes:
    """Encode three channel grids in the MERL binary layout."""
    if len(grids) != 3:
        raise ValueError("MERL files hold exactly three channels")
    res = grids[0].resolution
    if any(g.resolution != res for g in grids):
        raise ValueError("channel grids have different resolutions")
    payload = np.empty((3, *res), dtype="<f8")
    for c, grid in enumerate(grids):
        raw = grid.values / MERL_SCALE[c]
        if grid.valid is not None:
            raw = np.where(grid.valid, raw, _INVALID_RAW)
        payload[c] = raw
    return struct.pack("<3i", *res) + payload.tobytes()


def read_merl(path) -> tuple[BrdfGrid, BrdfGrid, BrdfGrid]:
    return load_merl(path)


def write_merl(path, grids: Sequence[BrdfGrid]) -> None:
    with open(path, "wb") as fh:
        fh.write(save_merl(grids))


# ---------------------------------------------------------------------------
# Synthetic materials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lobe:
    """Normalized Blinn-Phong lobe ``albedo * (k + 2) / (2 pi) * cos(theta_h)**k``."""

    albedo: tuple[float, float, float]
    exponent: float

    def __post_init__(self):
        albedo = tuple(float(a) for a in self.albedo)
        if len(albedo) != 3 or min(albedo) < 0.0 or not all(np.isfinite(albedo)):
            raise ValueError(f"lobe albedo must be three finite values >= 0, got {self.albedo!r}")
        if not (self.exponent > 0.0 and np.isfinite(self.exponent)):
            raise ValueError(f"lobe exponent must be positive, got {self.exponent!r}")
        object.__setattr__(self, "albedo", albedo)
        object.__setattr__(self, "exponent", float(self.exponent))


@dataclass(frozen=True)
class SyntheticBrdfSpec:
    diffuse_albedo: tuple[float, float, float] = (0.0, 0.0, 0.0)
    lobes: tuple[Lobe, ...] = field(default_factory=tuple)

    def __post_init__(self):
        diffuse = tuple(float(a) for a in self.diffuse_albedo)
        if len(diffuse) != 3 or not all(np.isfinite(diffuse)) or min(diffuse) < 0.0:
            raise ValueError(f"diffuse albedo must be three values >= 0, got {self.diffuse_albedo!r}")
        lobes = tuple(self.lobes)
        if max(diffuse) == 0.0 and not any(max(l.albedo) > 0.0 for l in lobes):
            raise ValueError("synthetic BRDF is identically zero")
        object.__setattr__(self, "diffuse_albedo", diffuse)
        object.__setattr__(self, "lobes", lobes)

    def value(self, theta_h) -> np.ndarray:
        """Closed-form BRDF value, shape ``theta_h.shape + (3,)``."""
        cos_h = np.cos(np.asarray(theta_h, dtype=np.float64))[..., None]
        out = np.broadcast_to(np.asarray(self.diffuse_albedo) / np.pi, cos_h.shape[:-1] + (3,)).copy()
        for lobe in self.lobes:
            k = lobe.exponent
            out += np.asarray(lobe.albedo) * (k + 2.0) / (2.0 * np.pi) * cos_h**k
        return out


def synthesize(spec: SyntheticBrdfSpec, resolution=DESK_RESOLUTION) -> tuple[BrdfGrid, BrdfGrid, BrdfGrid]:
    """Sample a synthetic BRDF at the bin centers of the tabulation."""
    res = _as_resolution(resolution)
    theta_h, _, _ = bin_centers(res)
    per_th = spec.value(theta_h)  # (n_th, 3)
    return tuple(
        BrdfGrid(np.broadcast_to(per_th[:, c, None, None], res))
        for c in range(3)
    )  # type: ignore[return-value]


# ---------------------------------------------------------------------------
# Basis matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Basis BRDFs stacked as columns of a ``(p, n)`` matrix.

    ``labels[i]`` is ``(material, channel)`` for column ``i``.  ``valid`` is
    the per-column validity mask (None when every bin of every column is
    valid).
    """

    matrix: np.ndarray
    labels: tuple[tuple[str, str], ...]
    resolution: tuple[int, int, int]
    valid: np.ndarray | None = None

    def __post_init__(self):
        res = _as_resolution(self.resolution)
        matrix = np.asarray(self.matrix, dtype=np.float64)
        labels = tuple((str(m), str(c)) for m, c in self.labels)
        if matrix.ndim != 2 or matrix.shape[0] != int(np.prod(res)):
            raise ValueError(f"basis matrix shape {matrix.shape} does not match resolution {res}")
        if matrix.shape[1] < 2:
            raise ValueError("a basis needs at least two columns")
        if matrix.shape[1] != len(labels):
            raise ValueError("one label per basis column is required")
        if not np.all(np.isfinite(matrix)):
            raise DataError("basis matrix contains non-finite values")
        valid = self.valid
        if valid is not None:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != matrix.shape:
                raise ValueError("basis validity mask must match the matrix shape")
            valid = None if valid.all() else _frozen(valid)
        object.__setattr__(self, "matrix", _frozen(matrix))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_materials(cls, materials: Iterable[tuple[str, Sequence[BrdfGrid]]]) -> "BasisSet":
        """Stack ``(name, (R, G, B))`` materials, three columns each."""
        columns, labels, masks = [], [], []
        res = None
        for name, grids in materials:
            if len(grids) != 3:
                raise ValueError(f"material {name!r} must have three channels")
            for channel, grid in zip(CHANNELS, grids):
                if res is None:
                    res = grid.resolution
                elif grid.resolution != res:
                    raise ValueError(f"material {name!r} has resolution {grid.resolution}, expected {res}")
                columns.append(grid.vector)
                masks.append(grid.valid_vector)
                labels.append((name, channel))
        if res is None:
            raise ValueError("no materials given")
        matrix = np.stack(columns, axis=1)
        valid = np.stack(masks, axis=1)
        return cls(matrix, tuple(labels), res, valid)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @property
    def materials(self) -> list[str]:
        seen = {}
        for name, _ in self.labels:
            seen.setdefault(name, None)
        return list(seen)

    def columns_of(self, material: str) -> list[int]:
        cols = [i for i, (name, _) in enumerate(self.labels) if name == material]
        if not cols:
            raise KeyError(material)
        return cols

    def material_grids(self, material: str) -> tuple[BrdfGrid, BrdfGrid, BrdfGrid]:
        by_channel = {self.labels[i][1]: i for i in self.columns_of(material)}
        return tuple(self.column(by_channel[c]) for c in CHANNELS)  # type: ignore[return-value]

    def column(self, i: int) -> BrdfGrid:
        valid = None if self.valid is None else self.valid[:, i]
        return BrdfGrid.from_vector(self.matrix[:, i], self.resolution, valid)

    def column_valid(self, i: int) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.p, dtype=bool)
        return self.valid[:, i]

    def select(self, indices: Sequence[int]) -> "BasisSet":
        idx = np.asarray(indices, dtype=np.int64)
        valid = None if self.valid is None else self.valid[:, idx]
        return BasisSet(self.matrix[:, idx], tuple(self.labels[i] for i in idx), self.resolution, valid)

    def without(self, material: str) -> "BasisSet":
        """Drop every channel column of ``material`` (leave-one-out)."""
        drop = set(self.columns_of(material))
        return self.select([i for i in range(self.n) if i not in drop])

    def combine(self, w) -> BrdfGrid:
        return combine(self, w)


def combine(basis: BasisSet, w) -> BrdfGrid:
    """Linear combination ``sum_i w_i b_i`` as a grid; no clamping."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.size != basis.n:
        raise ValueError(f"weight vector has length {w.size}, basis has {basis.n} columns")
    return BrdfGrid.from_vector(basis.matrix @ w, basis.resolution)
