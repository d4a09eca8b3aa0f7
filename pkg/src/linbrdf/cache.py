"""Content-addressed on-disk cache of precomputed arrays.

Entries are ``.npz`` archives written byte-for-byte reproducibly (fixed zip
timestamps, no pickled objects) and atomically (temp file, then rename), so
a cache hit is byte-identical to a fresh recomputation.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataError

CACHE_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)
_META = "__meta__"


def array_digest(*arrays) -> str:
    """SHA-256 over dtype, shape and raw bytes of each array."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(f"{a.dtype.str}{a.shape}".encode())
        h.update(a.tobytes())
    return h.hexdigest()


def key_digest(**params) -> str:
    """Stable hash of JSON-serializable parameters."""
    blob = json.dumps({"version": CACHE_VERSION, **params}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:24]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_npz(arrays: dict, meta: dict | None = None) -> bytes:
    """Serialize arrays (and JSON metadata) into a reproducible npz archive.

    ``None`` values are left out; readers treat them as absent keys.
    """
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        items = {k: v for k, v in arrays.items() if v is not None}
        items[_META] = np.frombuffer(json.dumps(meta or {}, sort_keys=True).encode(), dtype=np.uint8)
        for name in sorted(items):
            member = io.BytesIO()
            np.lib.format.write_array(member, np.ascontiguousarray(items[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
            info.external_attr = 0o644 << 16
            zf.writestr(info, member.getvalue())
    return buf.getvalue()


def save_npz(path, arrays: dict, meta: dict | None = None) -> None:
    atomic_write(path, dump_npz(arrays, meta))


def load_npz(path) -> tuple[dict, dict]:
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files if k != _META}
            meta = json.loads(bytes(z[_META]).decode()) if _META in z.files else {}
    except (zipfile.BadZipFile, ValueError, KeyError, OSError) as exc:
        raise DataError(f"unreadable cache entry {path}: {exc}") from exc
    return arrays, meta


def sparse_to_arrays(prefix: str, m: sp.csr_matrix) -> dict:
    m = sp.csr_matrix(m)
    return {
        f"{prefix}data": m.data,
        f"{prefix}indices": m.indices,
        f"{prefix}indptr": m.indptr,
        f"{prefix}shape": np.asarray(m.shape, dtype=np.int64),
    }


def sparse_from_arrays(prefix: str, arrays: dict) -> sp.csr_matrix:
    shape = tuple(int(v) for v in arrays[f"{prefix}shape"])
    return sp.csr_matrix(
        (arrays[f"{prefix}data"], arrays[f"{prefix}indices"], arrays[f"{prefix}indptr"]), shape=shape
    )


class Cache:
    """Directory of ``<kind>-<key>.npz`` entries; ``root=None`` disables caching."""

    def __init__(self, root=None):
        self.root = None if root is None else Path(root)
        self.hits = 0
        self.misses = 0

    def path(self, kind: str, key: str) -> Path | None:
        return None if self.root is None else self.root / f"{kind}-{key}.npz"

    def get(self, kind: str, key: str):
        path = self.path(kind, key)
        if path is None or not path.exists():
            self.misses += 1
            return None
        self.hits += 1
        return load_npz(path)

    def put(self, kind: str, key: str, arrays: dict, meta: dict | None = None) -> Path | None:
        path = self.path(kind, key)
        if path is not None:
            save_npz(path, arrays, meta)
        return path
