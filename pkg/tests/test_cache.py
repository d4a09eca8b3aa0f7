import numpy as np
import pytest
import scipy.sparse as sp

from linbrdf.cache import (
    Cache,
    array_digest,
    dump_npz,
    key_digest,
    load_npz,
    save_npz,
    sparse_from_arrays,
    sparse_to_arrays,
)
from linbrdf.errors import DataError


def test_dump_is_reproducible(rng):
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.arange(5)}
    assert dump_npz(arrays, {"x": 1}) == dump_npz(arrays, {"x": 1})


def test_round_trip(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 4)), "i": np.arange(5, dtype=np.int32), "none": None}
    save_npz(tmp_path / "e.npz", arrays, {"k": [1, 2]})
    back, meta = load_npz(tmp_path / "e.npz")
    np.testing.assert_array_equal(back["a"], arrays["a"])
    assert back["i"].dtype == np.int32
    assert meta == {"k": [1, 2]}
    assert "none" not in back


def test_corrupt_entry(tmp_path):
    (tmp_path / "bad.npz").write_bytes(b"not a zip")
    with pytest.raises(DataError):
        load_npz(tmp_path / "bad.npz")


def test_sparse_round_trip(rng):
    m = sp.random(20, 30, density=0.1, random_state=1, format="csr")
    back = sparse_from_arrays("T_", sparse_to_arrays("T_", m))
    assert (back != m).nnz == 0


def test_key_digest_is_order_independent():
    assert key_digest(a=1, b=[1, 2]) == key_digest(b=[1, 2], a=1)
    assert key_digest(a=1) != key_digest(a=2)


def test_array_digest_sees_dtype_and_shape():
    a = np.zeros(4)
    assert array_digest(a) != array_digest(a.reshape(2, 2))
    assert array_digest(a) != array_digest(a.astype(np.float32))


def test_cache_counts(tmp_path):
    c = Cache(tmp_path)
    assert c.get("k", "x") is None
    c.put("k", "x", {"v": np.ones(2)})
    arrays, _ = c.get("k", "x")
    np.testing.assert_array_equal(arrays["v"], 1.0)
    assert (c.hits, c.misses) == (1, 1)


def test_disabled_cache():
    c = Cache(None)
    assert c.put("k", "x", {"v": np.ones(2)}) is None
    assert c.get("k", "x") is None
