import json

import numpy as np
import pytest

from linbrdf.cli import build_parser, main, resolve_config
from linbrdf.hdrio import read_pfm, write_pfm

FAST = ["--resolution", "8,8,8", "--image-size", "24", "--probe-size", "16"]


def run(*argv):
    return main(list(argv))


def read_json(path):
    return json.loads(path.read_text())


def test_flags_then_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"clusters": 5}))
    args = build_parser().parse_args(["fit-gmm", "--clusters", "2", "--lambda", "0.1", "--config", str(cfg)])
    config = resolve_config(args)
    assert config.clusters == 5 and config.lam == 0.1


def test_resolution_syntax():
    args = build_parser().parse_args(["fit-gmm", "--resolution", "4x6x8"])
    assert resolve_config(args).resolution == (4, 6, 8)


@pytest.mark.parametrize(
    "argv, code",
    [
        (["fit-gmm", "--clusters", "0"], 2),
        (["fit-gmm", "--lambda", "-1"], 2),
        (["fit-gmm", "--config", "/nonexistent.json"], 2),
        (["fit-gmm", "--basis", "/nonexistent-dir"], 3),
        (["synth", "--basis", "/tmp"], 2),
    ],
)
def test_exit_codes(tmp_path, argv, code):
    assert run(*argv, "--out", str(tmp_path)) == code


def test_fit_gmm_cache_and_design_agreement(tmp_path):
    common = ["--cache-dir", str(tmp_path / "cache"), "--clusters", "3"]
    assert run("fit-gmm", *common, "--out", str(tmp_path / "a")) == 0
    assert run("fit-gmm", *common, "--out", str(tmp_path / "b")) == 0
    a, b = read_json(tmp_path / "a/classes.json"), read_json(tmp_path / "b/classes.json")
    assert (a["cache_hit"], b["cache_hit"]) == (False, True)
    assert a["model_digest"] == b["model_digest"]
    assert a["design_agreement"] >= 0.9
    assert sum(a["class_sizes"]) == 90
    assert run("fit-gmm", *common, "--seed", "1", "--out", str(tmp_path / "c")) == 0
    assert read_json(tmp_path / "c/classes.json")["cache_hit"] is False


def test_manifest_lists_outputs(tmp_path):
    assert run("render-basis", *FAST, "--out", str(tmp_path)) == 0
    man = read_json(tmp_path / "manifest.json")
    assert man["command"] == "render-basis"
    assert "observations.json" in man["outputs"]
    obs = read_json(tmp_path / "observations.json")
    assert obs["columns"] == 90


def test_deterministic_outputs(tmp_path):
    for d in ("a", "b"):
        assert run("render-basis", *FAST, "--out", str(tmp_path / d)) == 0
    a, b = read_json(tmp_path / "a/manifest.json"), read_json(tmp_path / "b/manifest.json")
    assert a["outputs"] == b["outputs"] and a["inputs"] == b["inputs"]
    assert a["config"] == {**b["config"], "out_dir": a["config"]["out_dir"]}


def test_estimate_sanity_mode(tmp_path):
    assert run("estimate", *FAST, "--clusters", "3", "--lambda", "1e-10", "--material", "glossy-02", "--out", str(tmp_path)) == 0
    res = read_json(tmp_path / "result.json")
    assert res["observation_residual"] < 1e-6
    assert len(res["classes"]) == 3
    for name in ("fit", "relit", "directional"):
        assert (tmp_path / f"{name}.png").exists() and (tmp_path / f"{name}-reference.png").exists()
    assert (tmp_path / "reconstruction.binary").stat().st_size == 12 + 3 * 8 * 8 * 8 * 8


def test_estimate_from_image_with_mask(tmp_path):
    synth = tmp_path / "synth"
    assert run("synth", *FAST, "--out", str(synth), "--targets", "diffuse-01") == 0
    target = synth / "targets/diffuse-01.pfm"
    img = read_pfm(target.read_bytes())
    mask = np.ones_like(img)
    mask[:12] = 0.0
    (tmp_path / "mask.pfm").write_bytes(write_pfm(mask))
    out = tmp_path / "est"
    assert run("estimate", *FAST, "--clusters", "3", "--target", str(target), "--mask", str(tmp_path / "mask.pfm"), "--out", str(out)) == 0
    res = read_json(out / "result.json")
    assert res["valid_pixels"] < (img.max(axis=2) > 0).sum()
    assert run("estimate", "--target", str(target), "--image-size", "32", "--resolution", "8,8,8", "--out", str(out)) == 3


def test_eval_outputs(tmp_path):
    out = tmp_path / "eval"
    assert run("eval", *FAST, "--clusters", "3", "--materials", "diffuse-00", "specular-09", "--out", str(out)) == 0
    rows = read_json(out / "report.json")
    assert len(rows) == 2 * 3
    lines = (out / "class_table.csv").read_text().splitlines()
    assert lines[0] == "material,class_0,class_1,class_2,baseline,selected"
    assert len(lines) == 3
    summary = read_json(out / "summary.json")
    assert summary["materials"] == 2
    assert run("eval", *FAST, "--materials", "nope", "--out", str(out)) == 2
