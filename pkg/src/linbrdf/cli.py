"""Command-line entry point: ``linbrdf <verb> [options]``.

Verbs
-----
synth         write the designed synthetic basis, procedural probes and target maps
fit-gmm       project the basis, fit the material-class mixture (cached)
render-basis  precompute the basis observations under a probe (cached)
estimate      reconstruct a material from one reflectance map
eval          leave-one-out evaluation against the naive and single-class baselines

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .brdf import CHANNELS, BrdfGrid, save_merl
from .cache import Cache, atomic_write
from .errors import ConfigError, DataError, LinBrdfError, NumericalError
from .estimate import class_table, estimate_rgb, full_map_loss, naive_ls
from .hdrio import read_hdr_image, write_pfm, write_rgbe
from .pipeline import (
    PipelineConfig,
    evaluate,
    fit_classes_cached,
    format_class_table,
    load_basis,
    load_lighting,
    manifest,
    material_observation,
    observations_cached,
    predict,
    relative_l2,
    transport_cached,
)
from .render import SphereGeometry, build_directional_transport, tonemap
from .synthetic import GROUPS

log = logging.getLogger("linbrdf")

# flag name -> PipelineConfig field
_FLAG_FIELDS = {
    "basis": "basis",
    "probe": "probe",
    "relight_probe": "relight_probe",
    "cache_dir": "cache_dir",
    "out": "out_dir",
    "subspace_dim": "subspace_dim",
    "clusters": "clusters",
    "lam": "lam",
    "seed": "seed",
    "image_size": "image_size",
    "resolution": "resolution",
    "mapping": "mapping",
    "probe_size": "probe_size",
    "materials": "materials",
}


def _resolution(text: str) -> tuple[int, int, int]:
    parts = text.replace("x", ",").replace(" ", ",").split(",")
    try:
        res = tuple(int(p) for p in parts if p)
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must look like 16,16,16, got {text!r}") from None
    if len(res) != 3:
        raise argparse.ArgumentTypeError(f"resolution needs three sizes, got {text!r}")
    return res


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="JSON file; its values override command-line flags")
    g.add_argument("--basis", help="directory of MERL .binary files or synthetic[:seed] (default synthetic)")
    g.add_argument("--probe", help="fit lighting: HDR file or procedural:{A,B,C,uniform} (default procedural:A)")
    g.add_argument("--relight-probe", dest="relight_probe", help="held-out lighting (default procedural:B)")
    g.add_argument("--cache-dir", dest="cache_dir", help="directory for precomputed models and observations")
    g.add_argument("--out", help="output directory (default linbrdf-out)")
    g.add_argument("--lambda", dest="lam", type=float, help="balancing constant (default 0.5)")
    g.add_argument("--clusters", type=int, help="material classes K (default 4)")
    g.add_argument("--subspace-dim", dest="subspace_dim", type=int, help="subspace dimension N (default 4)")
    g.add_argument("--seed", type=int, help="clustering seed (default 0)")
    g.add_argument("--mapping", choices=("angular", "latlong"), help="probe image layout (default latlong)")
    g.add_argument("--image-size", dest="image_size", type=int, help="sphere image side in pixels (default 128)")
    g.add_argument("--resolution", type=_resolution, help="synthetic BRDF table size (default 16,16,16)")
    g.add_argument("--probe-size", dest="probe_size", type=int, help="procedural probe side in texels (default 64)")
    g.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linbrdf", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write the designed synthetic basis and procedural probes")
    _common(p)
    p.add_argument("--targets", nargs="*", default=None, metavar="MATERIAL",
                   help="also write reflectance maps of these materials under --probe (no names: all)")

    p = sub.add_parser("fit-gmm", help="fit the material-class mixture")
    _common(p)

    p = sub.add_parser("render-basis", help="precompute basis observations under --probe")
    _common(p)

    p = sub.add_parser("estimate", help="reconstruct a material from one reflectance map")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--target", help="reflectance map (PFM or Radiance HDR), image-size square")
    src.add_argument("--material", help="render this basis material under --probe as the target")
    p.add_argument("--mask", help="image whose positive pixels mark valid target pixels")
    p.add_argument("--leave-out", action="store_true",
                   help="with --material: drop the material's columns from the basis first")
    p.add_argument("--exposure", type=float, default=1.0, help="preview exposure (display only)")

    p = sub.add_parser("eval", help="leave-one-out evaluation with baselines")
    _common(p)
    p.add_argument("--materials", nargs="+", help="subset of basis materials (default all)")
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then command-line flags, then the config file."""
    values = {}
    for flag, name in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[name] = v
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {args.config!r} does not exist")
        try:
            overrides = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(overrides, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(overrides)
    return PipelineConfig.from_dict(values)


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


class Outputs:
    """Writes files atomically under one directory and records their hashes."""

    def __init__(self, root):
        self.root = Path(root)
        self.files: dict[str, str] = {}

    def write(self, name: str, data: bytes | str) -> Path:
        if isinstance(data, str):
            data = data.encode()
        path = self.root / name
        atomic_write(path, data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def png(self, name: str, image_linear, exposure: float = 1.0) -> Path:
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(tonemap(image_linear, exposure=exposure)).save(buf, format="PNG")
        return self.write(name, buf.getvalue())

    def csv(self, name: str, rows: list[dict]) -> Path:
        buf = io.StringIO()
        if rows:
            writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        return self.write(name, buf.getvalue())


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finish(out: Outputs, command: str, config: PipelineConfig, inputs: dict, cache: Cache, extra=None) -> None:
    record = manifest(command, config, inputs, dict(out.files), {"cache": {"hits": cache.hits, "misses": cache.misses}, **(extra or {})})
    out.json("manifest.json", record)


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def cmd_synth(args, config: PipelineConfig) -> int:
    if not config.basis.startswith("synthetic"):
        raise ConfigError("synth writes the designed basis; --basis must be synthetic[:seed]")
    loaded = load_basis(config)
    out = Outputs(config.out_dir)
    for m in loaded.basis.materials:
        out.write(f"basis/{m}.binary", save_merl(loaded.basis.material_grids(m)))
    out.json("basis/groups.json", loaded.groups)
    for kind in ("A", "B", "C"):
        env = load_lighting(f"procedural:{kind}", config)
        out.write(f"probes/{kind}.pfm", write_pfm(env.radiance))
        out.write(f"probes/{kind}.hdr", write_rgbe(env.radiance))
    if args.targets is not None:
        cache = Cache(config.cache_dir)
        geometry = SphereGeometry(config.image_size)
        T, _ = transport_cached(cache, load_lighting(config.probe, config), geometry, loaded.basis.resolution)
        for m in args.targets or loaded.basis.materials:
            if m not in loaded.basis.materials:
                raise ConfigError(f"material {m!r} is not in the basis")
            y = T.render_rgb(loaded.basis.material_grids(m))
            out.write(f"targets/{m}.pfm", write_pfm(y.to_image()))
    _finish(out, "synth", config, {"basis": loaded.digest}, Cache(None))
    print(f"wrote {len(out.files)} files to {config.out_dir}")
    return 0


def cmd_fit_gmm(args, config: PipelineConfig) -> int:
    cache = Cache(config.cache_dir)
    loaded = load_basis(config)
    model, hit = fit_classes_cached(cache, loaded.basis, config.subspace_dim, config.clusters, config.seed)
    labels = model.assignment.labels
    members = {
        str(j): sorted({loaded.basis.labels[i][0] + ":" + loaded.basis.labels[i][1] for i in model.assignment.members(j)})
        for j in range(model.assignment.K)
    }
    summary = {
        "K": model.assignment.K,
        "N": model.subspace.N,
        "seed": config.seed,
        "cache_hit": hit,
        "model_digest": model.digest(),
        "converged": model.gmm.converged,
        "iterations": len(model.gmm.log_likelihoods),
        "log_likelihoods": list(model.gmm.log_likelihoods),
        "reseeds": list(model.gmm.reseeds),
        "weights": model.gmm.weights,
        "class_sizes": model.assignment.counts,
        "members": members,
    }
    if loaded.groups:
        design = np.array([loaded.groups.get(m) for m, _ in loaded.basis.labels], dtype=object)
        agree = 0
        composition = {}
        for j in range(model.assignment.K):
            groups = design[labels == j].tolist()
            composition[str(j)] = {g: groups.count(g) for g in GROUPS if g in groups}
            if groups:
                agree += max(groups.count(g) for g in set(groups))
        summary["design_composition"] = composition
        summary["design_agreement"] = agree / labels.size
    out = Outputs(config.out_dir)
    out.json("classes.json", summary)
    _finish(out, "fit-gmm", config, {"basis": loaded.digest}, cache)
    print(f"classes {model.assignment.counts.tolist()} (cache {'hit' if hit else 'miss'}, model {summary['model_digest']})")
    return 0


def cmd_render_basis(args, config: PipelineConfig) -> int:
    cache = Cache(config.cache_dir)
    loaded = load_basis(config)
    env = load_lighting(config.probe, config)
    geometry = SphereGeometry(config.image_size)
    T, t_hit = transport_cached(cache, env, geometry, loaded.basis.resolution)
    Y, y_hit = observations_cached(cache, T, loaded.basis)
    out = Outputs(config.out_dir)
    out.json("observations.json", {
        "columns": int(Y.shape[2]),
        "pixels": int(Y.shape[1]),
        "lighting": T.lighting_id,
        "geometry": geometry.identifier,
        "resolution": list(T.resolution),
        "transport_nnz": int(T.matrices[0].nnz),
        "cache_hit": bool(t_hit and y_hit),
    })
    _finish(out, "render-basis", config, {"basis": loaded.digest, "probe": env.digest()}, cache)
    print(f"Y: {Y.shape[1]} pixels x {Y.shape[2]} columns per channel (cache {'hit' if y_hit else 'miss'})")
    return 0


def cmd_estimate(args, config: PipelineConfig) -> int:
    cache = Cache(config.cache_dir)
    loaded = load_basis(config)
    basis = loaded.basis
    geometry = SphereGeometry(config.image_size)
    env = load_lighting(config.probe, config)
    env_rel = load_lighting(config.relight_probe, config)
    T, _ = transport_cached(cache, env, geometry, basis.resolution)
    T_rel, _ = transport_cached(cache, env_rel, geometry, basis.resolution)
    T_dir = build_directional_transport(config.light_direction, geometry, basis.resolution)
    Y_full, _ = observations_cached(cache, T, basis)
    inputs = {"basis": loaded.digest, "probe": env.digest(), "relight_probe": env_rel.digest()}

    reference = None
    valid = None
    if args.material:
        if args.material not in basis.materials:
            raise ConfigError(f"material {args.material!r} is not in the basis")
        target_cols = basis.columns_of(args.material)
        y = material_observation(Y_full, target_cols)
        reference = basis.material_grids(args.material)
        if args.leave_out:
            keep = [i for i in range(basis.n) if i not in set(target_cols)]
            basis = basis.select(keep)
            Y_full = Y_full[:, :, keep]
        inputs["target"] = f"material:{args.material}"
    else:
        image = read_hdr_image(args.target)
        if image.shape[:2] != (geometry.size, geometry.size):
            raise DataError(f"target is {image.shape[1]}x{image.shape[0]}, expected {geometry.size}x{geometry.size} (--image-size)")
        y = geometry.from_image(image)
        valid = np.isfinite(y).all(axis=1)
        if args.mask:
            mask = read_hdr_image(args.mask)
            if mask.shape[:2] != image.shape[:2]:
                raise DataError("mask and target sizes differ")
            valid &= geometry.from_image(mask.max(axis=2)) > 0.0
        y = np.where(valid[:, None], y, 0.0)
        inputs["target"] = hashlib.sha256(Path(args.target).read_bytes()).hexdigest()

    model, _ = fit_classes_cached(cache, basis, config.subspace_dim, config.clusters, config.seed)
    provenance = {"probe": T.lighting_id, "seed": config.seed, "model": model.key}
    result = estimate_rgb(Y_full, y, model.assignment, config.estimator(), valid, provenance)
    w = result.weights

    grids = tuple(BrdfGrid.from_vector(basis.matrix @ w[c], basis.resolution) for c in range(3))
    out = Outputs(config.out_dir)
    out.write("reconstruction.binary", save_merl(grids))

    previews = {"fit": T, "relit": T_rel, "directional": T_dir}
    for name, op in previews.items():
        rec = op.render_rgb(grids).to_image()
        out.write(f"{name}.pfm", write_pfm(rec))
        out.png(f"{name}.png", rec, args.exposure)
        if reference is not None:
            ref = op.render_rgb(reference).to_image()
            out.png(f"{name}-reference.png", ref, args.exposure)

    rows = np.ones(y.shape[0], dtype=bool) if valid is None else valid
    w_naive = naive_ls(Y_full, y, valid)
    map_losses = [
        full_map_loss(result.class_weights(j), Y_full, y, model.gmm, model.subspace, basis.matrix, valid=valid)
        if np.isfinite(result.class_logliks[j]) else None
        for j in range(result.K)
    ]
    record = {
        "selected_class": result.selected,
        "classes": class_table(result),
        "class_sizes": model.assignment.counts,
        "map_losses": map_losses,
        "observation_residual": relative_l2(predict(Y_full, w), y, valid),
        "naive_observation_residual": relative_l2(predict(Y_full, w_naive), y, valid),
        "valid_pixels": int(rows.sum()),
        "weights": {f"{m}:{c}": [float(w[k, i]) for k in range(3)] for i, (m, c) in enumerate(basis.labels) if np.any(w[:, i])},
        "channels": list(CHANNELS),
        "provenance": result.provenance,
    }
    if reference is not None:
        truth = T_rel.render_rgb(reference).pixels
        record["relit_error"] = relative_l2(T_rel.render_rgb(grids).pixels, truth)
    out.json("result.json", record)
    _finish(out, "estimate", config, inputs, cache)
    line = f"selected class {result.selected}; observation residual {record['observation_residual']:.4g}"
    if "relit_error" in record:
        line += f"; relit error {record['relit_error']:.4g}"
    print(line)
    return 0


def cmd_eval(args, config: PipelineConfig) -> int:
    cache = Cache(config.cache_dir)
    loaded = load_basis(config)
    report = evaluate(config, cache, loaded)
    out = Outputs(config.out_dir)
    out.csv("report.csv", report.rows())
    out.json("report.json", report.rows())
    table = report.class_table()
    out.csv("class_table.csv", table)
    out.write("class_table.txt", format_class_table(table) + "\n")
    summary = report.summary()
    out.json("summary.json", summary)
    _finish(out, "eval", config, {"basis": loaded.digest}, cache)
    for method, m in summary["median"].items():
        print(f"{method:>13}: median relit error {m['relit_error']:.4f}, observation residual {m['obs_residual']:.4f}")
    if summary["selected_group_match"] is not None:
        print(f"selected class matches design group in {100 * summary['selected_group_match']:.0f}% of trials")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "fit-gmm": cmd_fit_gmm,
    "render-basis": cmd_render_basis,
    "estimate": cmd_estimate,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except (DataError, LinBrdfError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        # remaining argument/shape errors come from user-supplied inputs
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
