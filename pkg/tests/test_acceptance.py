"""Exit criteria, each at its stated tolerance.

Run ``pytest tests/test_acceptance.py -rA`` to see the per-criterion
PASS/FAIL summary printed at the end of the session.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

from linbrdf.brdf import BrdfGrid
from linbrdf.cache import Cache
from linbrdf.envlight import EnvironmentMap
from linbrdf.estimate import estimate_rgb, normal_equation_solution, solve_class
from linbrdf.gmm import assign, em_fit
from linbrdf.pipeline import PipelineConfig, evaluate, fit_classes, material_observation
from linbrdf.render import SphereGeometry, build_transport, render_basis
from linbrdf.synthetic import designed_basis, procedural_probe

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")

MERL_DIR = os.environ.get("LINBRDF_MERL_DIR", "")


@pytest.mark.acceptance(1)
def test_renderer_linearity(record_property):
    """Rendering B w equals Y w for 100 random weight vectors."""
    start = time.perf_counter()
    full, _ = designed_basis(per_group=10)
    basis = full.select(range(0, full.n, 3))  # n = 30, one column per material
    T = build_transport(procedural_probe("A", 64, 64), SphereGeometry(64), basis.resolution)
    Y = render_basis(T, basis).Y
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        w = rng.normal(size=basis.n)
        yw = Y[0] @ w
        direct = T.render(basis.combine(w), 0)
        worst = max(worst, np.linalg.norm(direct - yw) / np.linalg.norm(yw))
    elapsed = time.perf_counter() - start
    record_property("max_rel_err", f"{worst:.2e}")
    record_property("seconds", f"{elapsed:.1f}")
    assert basis.n == 30
    assert worst <= 1e-10
    assert elapsed < 10.0


@pytest.mark.acceptance(2)
def test_uniform_closure(record_property):
    """Constant 1/pi BRDF under unit uniform lighting renders to 1."""
    env = EnvironmentMap.from_image(np.ones((64, 64, 3)), "latlong")
    res = (16, 16, 16)
    T = build_transport(env, SphereGeometry(64), res)
    y = T.render_rgb(BrdfGrid.constant(1.0 / np.pi, res)).pixels
    dev = float(np.max(np.abs(y - 1.0)))
    record_property("max_deviation", f"{dev:.4f}")
    assert dev <= 0.02


@pytest.mark.acceptance(3)
def test_em_oracle(record_property):
    """EM recovers a known 4-D, 4-component mixture with 8 sigma separation."""
    rng = np.random.default_rng(3)
    sigma = 1.0
    means = 8.0 * sigma * np.array([[0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 1]], dtype=float)
    weights = np.array([0.1, 0.2, 0.3, 0.4])
    counts = (weights * 8000).astype(int)
    pts = np.concatenate([m + sigma * rng.standard_normal((c, 4)) for m, c in zip(means, counts)])
    truth = np.repeat(np.arange(4), counts)
    model = em_fit(pts, K=4, seed=0)
    # match components by nearest generating mean
    order = [int(np.argmin(np.linalg.norm(model.means - m, axis=1))) for m in means]
    mean_err = float(max(np.linalg.norm(model.means[o] - m) for o, m in zip(order, means)))
    weight_err = float(np.max(np.abs(model.weights[order] - weights)))
    ll = np.asarray(model.log_likelihoods)
    labels = assign(model, pts).labels
    accuracy = float(np.mean(np.asarray(order)[truth] == labels))
    record_property("mean_err_sigma", f"{mean_err / sigma:.3f}")
    record_property("weight_err", f"{weight_err:.4f}")
    record_property("accuracy", f"{accuracy:.4f}")
    assert len(set(order)) == 4
    assert mean_err <= 0.1 * sigma
    assert weight_err <= 0.05
    assert np.all(np.diff(ll) >= -1e-9 * np.abs(ll[:-1]))
    assert accuracy >= 0.99


@pytest.mark.acceptance(4)
def test_solver_oracle(record_property):
    """Augmented solve matches the normal equations; both limits hold."""
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(50):
        m, c = int(rng.integers(20, 200)), int(rng.integers(2, 12))
        Y = rng.normal(size=(m, c)) + np.eye(m, c) * 3.0
        y = rng.normal(size=m)
        lam_j = float(rng.uniform(1e-3, 10.0))
        assert np.linalg.cond(Y) < 1e3
        worst = max(worst, float(np.max(np.abs(solve_class(Y, y, lam_j) - normal_equation_solution(Y, y, lam_j)))))
    Y = rng.normal(size=(60, 5))
    y = rng.normal(size=60)
    ls, *_ = np.linalg.lstsq(Y, y, rcond=None)
    low = float(np.max(np.abs(solve_class(Y, y, 1e-12) - ls)))
    high = float(np.max(np.abs(solve_class(Y, y, 1e6 * np.linalg.norm(Y, 2) ** 2 * 10) - 0.2)))
    record_property("max_diff", f"{worst:.1e}")
    record_property("lambda_to_0", f"{low:.1e}")
    record_property("lambda_to_inf", f"{high:.1e}")
    assert worst <= 1e-8
    assert low <= 1e-8
    assert high <= 1e-3


@pytest.mark.acceptance(5)
def test_scale_invariance(record_property):
    """Scaling probe radiance by 0.1 or 10 leaves class weights and selection unchanged."""
    basis, groups = designed_basis(per_group=10)
    model = fit_classes(basis.without("glossy-04"), 4, 3, 0)
    held = basis.columns_of("glossy-04")
    keep = [i for i in range(basis.n) if i not in held]
    geometry = SphereGeometry(64)

    def solve(scale):
        T = build_transport(procedural_probe("A", 64, 64, scale=scale), geometry, basis.resolution)
        Y = render_basis(T, basis).Y
        return estimate_rgb(Y[:, :, keep], material_observation(Y, held), model.assignment)

    base = solve(1.0)
    worst = 0.0
    for s in (0.1, 10.0):
        scaled = solve(s)
        assert scaled.selected == base.selected
        for key, cand in base.candidates.items():
            worst = max(worst, float(np.max(np.abs(scaled.candidates[key].weights - cand.weights))))
    record_property("max_weight_change", f"{worst:.1e}")
    assert worst <= 1e-8


@pytest.fixture(scope="module")
def leave_one_out():
    config = PipelineConfig(clusters=3, lam=0.5, image_size=128, probe="procedural:A", relight_probe="procedural:B")
    start = time.perf_counter()
    report = evaluate(config, Cache(None))
    return report, time.perf_counter() - start


@pytest.mark.acceptance(6)
@pytest.mark.slow
def test_leave_one_out_relighting(leave_one_out, record_property):
    """Held-out materials relit under a novel probe: median error, baseline, group match."""
    report, elapsed = leave_one_out
    med = report.medians()
    ours, naive = med["multiclass"]["relit_error"], med["naive"]["relit_error"]
    match = report.group_match_rate()
    record_property("median", f"{ours:.4f}")
    record_property("naive", f"{naive:.4f}")
    record_property("group_match", f"{match:.2f}")
    record_property("seconds", f"{elapsed:.0f}")
    assert len(report.trials) == 30
    assert ours <= 0.10
    assert ours <= naive
    assert match >= 0.90
    assert elapsed < 300.0


@pytest.mark.acceptance(7)
@pytest.mark.slow
def test_multiclass_beats_single_class(leave_one_out, record_property):
    """Multi-class median relit error is at most the single-class one."""
    med = leave_one_out[0].medians()
    ours, single = med["multiclass"]["relit_error"], med["single-class"]["relit_error"]
    record_property("median", f"{ours:.4f}")
    record_property("single_class", f"{single:.4f}")
    assert ours <= single


# Reference selections for four measured materials: each lands in a
# different class, so a faithful run selects four distinct classes.
MEASURED_CASES = ("dark-blue-paint", "violet-acrylic", "chrome-steel", "red-metallic-paint")
REFERENCE_SIZES = (137, 99, 24, 40)


@pytest.mark.acceptance(8)
@pytest.mark.slow
@pytest.mark.skipif(not Path(MERL_DIR).is_dir() or not MERL_DIR, reason="set LINBRDF_MERL_DIR to a directory of measured .binary files")
def test_measured_database(record_property):
    """Full-resolution measured basis: class sizes and per-class selection."""
    config = PipelineConfig(basis=MERL_DIR, subspace_dim=4, clusters=4, seed=0, image_size=64)
    from linbrdf.pipeline import leave_one_out_trial, load_basis, load_lighting, observations_cached, transport_cached

    loaded = load_basis(config)
    assert loaded.basis.resolution == (90, 90, 180)
    sizes = sorted(fit_classes(loaded.basis, 4, 4, 0).assignment.counts.tolist(), reverse=True)
    record_property("class_sizes", sizes)
    record_property("reference_sizes", sorted(REFERENCE_SIZES, reverse=True))
    cache = Cache(config.cache_dir)
    geometry = SphereGeometry(config.image_size)
    T, _ = transport_cached(cache, load_lighting(config.probe, config), geometry, loaded.basis.resolution)
    T2, _ = transport_cached(cache, load_lighting(config.relight_probe, config), geometry, loaded.basis.resolution)
    Y, _ = observations_cached(cache, T, loaded.basis)
    Y2, _ = observations_cached(cache, T2, loaded.basis)
    present = [m for m in MEASURED_CASES if m in loaded.basis.materials]
    trials = [leave_one_out_trial(loaded, m, Y, Y2, config.replace(baselines=False)) for m in present]
    record_property("selected", [t.selected_class for t in trials])
    assert len(present) == len(MEASURED_CASES)
    assert len({t.selected_class for t in trials}) == len(MEASURED_CASES)
