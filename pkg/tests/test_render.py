import math

import numpy as np
import pytest

from linbrdf.brdf import BasisSet, BrdfGrid, evaluate
from linbrdf.envlight import EnvironmentMap
from linbrdf.render import (
    SphereGeometry,
    build_directional_transport,
    build_transport,
    local_frames,
    render_basis,
    tonemap,
)

RES = (6, 6, 6)


def loop_render(grid, env, size, channel):
    """Pixel-by-pixel, texel-by-texel reference renderer."""
    out = []
    for row in range(size):
        for col in range(size):
            x = (col + 0.5) / size * 2 - 1
            y = -((row + 0.5) / size * 2 - 1)
            if x * x + y * y > 1.0:
                continue
            n = np.array([x, y, math.sqrt(max(1 - x * x - y * y, 0.0))])
            n /= np.linalg.norm(n)
            a = np.array([1.0, 0, 0]) if abs(n[2]) > 0.999 else np.array([0, 0, 1.0])
            t = np.cross(a, n)
            t /= np.linalg.norm(t)
            b = np.cross(n, t)
            wo = np.array([t[2], b[2], n[2]])
            total = 0.0
            for i in range(env.height):
                for j in range(env.width):
                    d = env.directions[i, j]
                    cos = d @ n
                    L = env.radiance[i, j, channel]
                    if cos <= 0.0 or L == 0.0 or env.solid_angles[i, j] == 0.0:
                        continue
                    wi = np.array([d @ t, d @ b, cos])
                    total += evaluate(grid, wi, wo) * cos * L * env.solid_angles[i, j]
            out.append(total)
    return np.array(out)


@pytest.fixture(scope="module")
def random_env():
    img = np.random.default_rng(11).uniform(0.0, 4.0, (5, 7, 3))  # odd grid: no texel on a bin boundary
    return EnvironmentMap.from_image(img, "latlong")


@pytest.fixture(scope="module")
def random_grid():
    return BrdfGrid(np.random.default_rng(12).uniform(0.0, 1.0, RES))


def test_matches_loop_renderer(random_env, random_grid):
    geom = SphereGeometry(11)
    T = build_transport(random_env, geom, RES)
    for c in range(3):
        np.testing.assert_allclose(T.render(random_grid, c), loop_render(random_grid, random_env, 11, c), rtol=1e-10, atol=1e-12)


def test_frames_orthonormal_and_pole_switch():
    n = np.array([[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, 1.0, 0.0]])
    F = local_frames(n)
    for f in F:
        np.testing.assert_allclose(f @ f.T, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(F[0, 0], [0.0, -1.0, 0.0], atol=1e-12)  # x cross z


def test_zero_lighting_gives_zero_transport():
    env = EnvironmentMap.from_image(np.zeros((8, 16, 3)), "latlong")
    T = build_transport(env, SphereGeometry(12), RES)
    assert all(m.nnz == 0 for m in T.matrices)


def test_uniform_closure():
    env = EnvironmentMap.from_image(np.ones((64, 64, 3)), "latlong")
    T = build_transport(env, SphereGeometry(32), RES)
    y = T.render(BrdfGrid.constant(1.0 / np.pi, RES))
    np.testing.assert_allclose(y, 1.0, rtol=0.02)


def test_linearity(random_env, rng):
    T = build_transport(random_env, SphereGeometry(16), RES)
    a, b = rng.uniform(0, 1, (2,) + RES)
    s, t = rng.normal(size=2)
    lhs = T.render(s * a.ravel() + t * b.ravel())
    rhs = s * T.render(a.ravel()) + t * T.render(b.ravel())
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12 * np.abs(rhs).max())


def test_basis_rendering_matches_combined_brdf(small_basis, rng):
    env = EnvironmentMap.from_image(rng.uniform(0, 2, (8, 16, 3)), "latlong")
    T = build_transport(env, SphereGeometry(16), small_basis.resolution)
    obs = render_basis(T, small_basis)
    assert obs.Y.shape == (3, T.shape[0], small_basis.n)
    w = rng.normal(size=small_basis.n)
    direct = T.render_rgb(small_basis.combine(w)).pixels
    np.testing.assert_allclose(obs.dot(w), direct, rtol=1e-10, atol=1e-12)


def test_basis_columns_render_independently(rng):
    g, h = BrdfGrid(rng.uniform(0, 1, RES)), BrdfGrid(rng.uniform(0, 1, RES))
    basis = BasisSet(np.stack([g.vector, h.vector], axis=1), (("a", "R"), ("b", "R")), RES)
    env = EnvironmentMap.from_image(rng.uniform(0, 1, (8, 16, 3)), "latlong")
    T = build_transport(env, SphereGeometry(8), RES)
    Y = render_basis(T, basis).Y
    for c in range(3):
        np.testing.assert_allclose(Y[c, :, 0], T.render(g, c))
        np.testing.assert_allclose(Y[c, :, 1], T.render(h, c))


@pytest.mark.parametrize("s", [0.1, 10.0])
def test_probe_scale(random_env, random_grid, s):
    geom = SphereGeometry(12)
    a = build_transport(random_env, geom, RES).render(random_grid, 1)
    b = build_transport(random_env.scaled(s), geom, RES).render(random_grid, 1)
    np.testing.assert_allclose(b, s * a, rtol=1e-12)


def test_mirror_highlight_position():
    res = (4, 8, 8)
    vals = np.zeros(res)
    vals[0] = 1.0  # theta_h below 90/16 degrees
    light = np.array([0.5, 0.5, 0.7071])
    light /= np.linalg.norm(light)
    geom = SphereGeometry(64)
    T = build_directional_transport(light, geom, res)
    y = T.render(BrdfGrid(vals))
    lit = geom.normals[y > 0]
    bisector = (light + [0, 0, 1]) / np.linalg.norm(light + [0, 0, 1])
    assert lit.shape[0] > 0
    assert np.min(np.degrees(np.arccos(np.clip(lit @ bisector, -1, 1)))) < 2.0
    assert np.all(lit @ bisector > np.cos(np.radians(90.0 / 16 + 0.5)))


def test_tonemap():
    out = tonemap(np.array([0.0, 1.0, 5.0, 0.5, 0.25]))
    assert out[0] == 0 and out[1] == 255 and out[2] == 255
    assert out[3] == round(255 * 0.5 ** (1 / 2.2))
    assert tonemap(np.array([0.25]), exposure=2.0)[0] == out[3]


def test_transport_deterministic(random_env):
    a = build_transport(random_env, SphereGeometry(12), RES)
    b = build_transport(random_env, SphereGeometry(12), RES)
    for ma, mb in zip(a.matrices, b.matrices):
        np.testing.assert_array_equal(ma.indptr, mb.indptr)
        np.testing.assert_array_equal(ma.indices, mb.indices)
        np.testing.assert_array_equal(ma.data, mb.data)


def test_resolution_mismatch(random_env, small_basis):
    T = build_transport(random_env, SphereGeometry(8), RES)
    with pytest.raises(ValueError):
        render_basis(T, small_basis)
    with pytest.raises(ValueError):
        T.render(np.ones(7))


def test_geometry_round_trip():
    geom = SphereGeometry(9)
    img = np.arange(81.0).reshape(9, 9)
    back = geom.to_image(geom.from_image(img), fill=-1.0)
    np.testing.assert_array_equal(back[geom.mask], img[geom.mask])
    assert np.all(back[~geom.mask] == -1.0)
    with pytest.raises(ValueError):
        geom.from_image(np.zeros((8, 8)))
