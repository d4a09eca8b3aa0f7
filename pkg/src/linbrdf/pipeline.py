"""Batch orchestration: configuration, cached precomputation and evaluation.

The CLI verbs are thin wrappers around the functions here, so the same
paths are exercised by the acceptance tests.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .brdf import DESK_RESOLUTION, BasisSet, _as_resolution, read_merl
from .cache import Cache, array_digest, key_digest, sparse_from_arrays, sparse_to_arrays
from .envlight import MAPPINGS, EnvironmentMap, load_probe
from .errors import ConfigError, DataError
from .estimate import (
    EstimatorConfig,
    estimate_rgb,
    full_map_loss,
    naive_ls,
    single_class_estimate,
)
from .gmm import ClassAssignment, GmmModel, assign, em_fit
from .render import SphereGeometry, TransportOperator, build_transport
from .subspace import Subspace, fit_subspace
from .synthetic import PROBES, designed_basis, procedural_probe

log = logging.getLogger(__name__)

METHODS = ("multiclass", "naive", "single-class")


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    basis: str = "synthetic"  # directory of MERL files, or "synthetic[:seed]"
    probe: str = "procedural:A"  # lighting of the observation
    relight_probe: str = "procedural:B"  # held-out lighting for relit previews and metrics
    cache_dir: str | None = None
    out_dir: str = "linbrdf-out"
    subspace_dim: int = 4
    clusters: int = 4
    lam: float = 0.5
    seed: int = 0
    image_size: int = 128
    resolution: tuple[int, int, int] = DESK_RESOLUTION  # synthetic bases only
    mapping: str = "latlong"
    probe_size: int = 64  # texels per side of procedural probes
    baselines: bool = True
    materials: tuple[str, ...] = ()  # eval subset; empty means every material
    light_direction: tuple[float, float, float] = (0.3, 0.6, 0.74)

    def __post_init__(self):
        try:
            object.__setattr__(self, "resolution", _as_resolution(self.resolution))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad resolution {self.resolution!r}: {exc}") from None
        object.__setattr__(self, "materials", tuple(str(m) for m in self.materials))
        object.__setattr__(self, "light_direction", tuple(float(v) for v in self.light_direction))
        checks = [
            (self.subspace_dim >= 1, "subspace dimension must be >= 1"),
            (self.clusters >= 1, "cluster count must be >= 1"),
            (self.lam > 0.0 and np.isfinite(self.lam), "lambda must be positive and finite"),
            (self.image_size >= 4, "image size must be >= 4"),
            (self.probe_size >= 2, "probe size must be >= 2"),
            (self.mapping in MAPPINGS, f"mapping must be one of {MAPPINGS}"),
            (len(self.light_direction) == 3 and any(self.light_direction), "light direction must be a non-zero 3-vector"),
            (self.seed >= 0, "seed must be non-negative"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["resolution"] = list(self.resolution)
        d["materials"] = list(self.materials)
        d["light_direction"] = list(self.light_direction)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "PipelineConfig":
        return self.from_dict({**self.to_dict(), **changes})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"configuration is not valid JSON: {exc}") from None
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        return cls.from_dict(d)

    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(lam=self.lam)


# ---------------------------------------------------------------------------
# Inputs
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LoadedBasis:
    basis: BasisSet
    groups: dict  # material -> design group; empty for measured data
    source: str

    @property
    def digest(self) -> str:
        return basis_digest(self.basis)


def basis_digest(basis: BasisSet) -> str:
    labels = np.frombuffer(json.dumps(basis.labels).encode(), dtype=np.uint8)
    parts = [basis.matrix, labels, np.asarray(basis.resolution)]
    if basis.valid is not None:
        parts.append(basis.valid)
    return array_digest(*parts)[:24]


def load_basis(config: PipelineConfig) -> LoadedBasis:
    """Designed synthetic basis or a directory of MERL ``.binary`` files."""
    spec = config.basis
    if spec == "synthetic" or spec.startswith("synthetic:"):
        seed = 7
        if ":" in spec:
            try:
                seed = int(spec.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad synthetic basis seed in {spec!r}") from None
        basis, groups = designed_basis(resolution=config.resolution, seed=seed)
        return LoadedBasis(basis, groups, spec)
    root = Path(spec)
    if not root.is_dir():
        raise DataError(f"basis directory {spec!r} does not exist")
    files = sorted(root.glob("*.binary"))
    if len(files) < 2:
        raise DataError(f"basis directory {spec!r} holds fewer than two .binary files")
    materials = [(f.stem, read_merl(f)) for f in files]
    groups = {}
    groups_file = root / "groups.json"
    if groups_file.exists():
        groups = json.loads(groups_file.read_text())
    return LoadedBasis(BasisSet.from_materials(materials), groups, str(root))


def load_lighting(spec: str, config: PipelineConfig) -> EnvironmentMap:
    """``procedural:<layout>`` or an HDR probe file read with ``config.mapping``."""
    if spec.startswith("procedural:"):
        kind = spec.split(":", 1)[1]
        if kind not in PROBES:
            raise ConfigError(f"unknown procedural probe {kind!r}; choose from {PROBES}")
        return procedural_probe(kind, config.probe_size, config.probe_size)
    path = Path(spec)
    if not path.is_file():
        raise DataError(f"probe file {spec!r} does not exist")
    return load_probe(path, config.mapping, name=path.stem)


# ---------------------------------------------------------------------------
# Material classes (cached)
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassModel:
    subspace: Subspace
    gmm: GmmModel
    assignment: ClassAssignment
    key: str = ""

    def to_arrays(self) -> dict:
        g = self.gmm
        return {
            "U_hat": self.subspace.U_hat,
            "singular_values": self.subspace.singular_values,
            "V": self.subspace.V,
            "weights": g.weights,
            "means": g.means,
            "covariances": g.covariances,
            "log_likelihoods": np.asarray(g.log_likelihoods, dtype=np.float64),
            "reseeds": np.asarray(g.reseeds, dtype=np.int64),
            "labels": self.assignment.labels,
            "gamma": self.assignment.gamma,
        }

    @classmethod
    def from_arrays(cls, a: dict, meta: dict, key: str = "") -> "ClassModel":
        sub = Subspace(a["U_hat"], a["singular_values"], a["V"])
        gmm = GmmModel(
            a["weights"],
            a["means"],
            a["covariances"],
            tuple(float(v) for v in a["log_likelihoods"]),
            tuple(int(v) for v in a["reseeds"]),
            bool(meta["converged"]),
            int(meta["seed"]),
        )
        assignment = ClassAssignment(a["labels"].astype(np.int64), int(meta["K"]), a.get("gamma"))
        return cls(sub, gmm, assignment, key)

    def digest(self) -> str:
        arrays = self.to_arrays()
        return array_digest(*(arrays[k] for k in sorted(arrays)))[:24]


def fit_classes(basis: BasisSet, N: int = 4, K: int = 4, seed: int = 0) -> ClassModel:
    """Project every basis column into the leading subspace and cluster it."""
    sub = fit_subspace(basis, N)
    points = sub.project(basis.matrix).T
    gmm = em_fit(points, K, seed)
    return ClassModel(sub, gmm, assign(gmm, points))


def fit_classes_cached(cache: Cache, basis: BasisSet, N: int, K: int, seed: int) -> tuple[ClassModel, bool]:
    """Returns ``(model, hit)``."""
    key = key_digest(kind="classes", basis=basis_digest(basis), N=N, K=K, seed=seed)
    entry = cache.get("classes", key)
    if entry is not None:
        arrays, meta = entry
        return ClassModel.from_arrays(arrays, meta, key), True
    model = fit_classes(basis, N, K, seed)
    model = dataclasses.replace(model, key=key)
    meta = {"K": K, "N": N, "seed": seed, "converged": model.gmm.converged, "version": __version__}
    cache.put("classes", key, model.to_arrays(), meta)
    return model, False


# ---------------------------------------------------------------------------
# Transport and observations (cached)
# ---------------------------------------------------------------------------


def transport_cached(cache: Cache, env: EnvironmentMap, geometry: SphereGeometry, resolution) -> tuple[TransportOperator, bool]:
    res = _as_resolution(resolution)
    key = key_digest(kind="transport", probe=env.digest(), geometry=geometry.identifier, resolution=list(res))
    entry = cache.get("transport", key)
    lighting = f"{env.name or 'probe'}:{env.digest()}"
    if entry is not None:
        arrays, _ = entry
        mats = tuple(sparse_from_arrays(f"T{c}_", arrays) for c in range(3))
        return TransportOperator(mats, geometry, res, lighting), True
    T = build_transport(env, geometry, res)
    arrays = {}
    for c in range(3):
        arrays.update(sparse_to_arrays(f"T{c}_", T.matrices[c]))
    cache.put("transport", key, arrays, {"lighting": lighting, "geometry": geometry.identifier})
    return T, False


def observations_cached(cache: Cache, T: TransportOperator, basis: BasisSet) -> tuple[np.ndarray, bool]:
    """Basis observation tensor ``Y`` of shape ``(3, pixels, n)``."""
    if basis.resolution != T.resolution:
        raise ConfigError(f"basis resolution {basis.resolution} differs from transport {T.resolution}")
    key = key_digest(kind="observations", lighting=T.lighting_id, geometry=T.geometry.identifier, basis=basis_digest(basis))
    entry = cache.get("observations", key)
    if entry is not None:
        return entry[0]["Y"], True
    Y = T.render_basis(basis).Y
    cache.put("observations", key, {"Y": Y}, {"lighting": T.lighting_id})
    return Y, False


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def relative_l2(pred, truth, valid=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if valid is not None:
        valid = np.asarray(valid, dtype=bool)
        pred, truth = pred[valid], truth[valid]
    denom = np.linalg.norm(truth)
    if denom == 0.0:
        return float(np.linalg.norm(pred))
    return float(np.linalg.norm(pred - truth) / denom)


def predict(Y, weights) -> np.ndarray:
    """``(M, 3)`` rendering of per-channel weights under observations ``Y``."""
    return np.einsum("cmn,cn->mc", Y, weights)


def material_observation(Y, columns) -> np.ndarray:
    """``(M, 3)`` reflectance map of a basis material from its three columns."""
    return np.stack([Y[c, :, columns[c]] for c in range(3)], axis=1)


def brdf_error(basis: BasisSet, cols, weights, target_cols) -> float:
    """Relative L2 in BRDF space over bins valid for the target and the sub-basis."""
    B = basis.matrix
    rec = B[:, cols] @ np.asarray(weights).T  # (p, 3)
    truth = B[:, target_cols]
    valid = np.ones(B.shape[0], dtype=bool)
    if basis.valid is not None:
        valid = basis.valid[:, target_cols].all(axis=1) & basis.valid[:, cols].all(axis=1)
    return relative_l2(rec[valid], truth[valid])


# ---------------------------------------------------------------------------
# Leave-one-out harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TrialResult:
    material: str
    group: str | None
    selected_class: int
    selected_group: str | None
    class_sizes: list
    class_logliks: list
    naive_loglik: float
    metrics: dict  # method -> {"obs_residual", "relit_error", "brdf_error"}
    map_losses: list  # full non-linear objective per class candidate (diagnostic)
    map_argmin: int | None

    def rows(self, probe: str) -> list[dict]:
        out = []
        for method, m in self.metrics.items():
            out.append({
                "material": self.material,
                "probe": probe,
                "method": method,
                "group": self.group,
                "selected_class": self.selected_class if method == "multiclass" else None,
                "selected_group": self.selected_group if method == "multiclass" else None,
                **m,
            })
        return out


def leave_one_out_trial(
    loaded: LoadedBasis,
    material: str,
    Y_fit: np.ndarray,
    Y_relit: np.ndarray,
    config: PipelineConfig,
    observation=None,
    valid=None,
) -> TrialResult:
    """Hold out every channel column of ``material``, refit classes, estimate and score.

    ``observation`` defaults to the material's own noise-free rendering under
    the fit probe.
    """
    basis = loaded.basis
    target_cols = basis.columns_of(material)
    cols = [i for i in range(basis.n) if i not in set(target_cols)]
    sub_basis = basis.select(cols)
    model = fit_classes(sub_basis, config.subspace_dim, config.clusters, config.seed)

    y = material_observation(Y_fit, target_cols) if observation is None else np.asarray(observation)
    y_relit = material_observation(Y_relit, target_cols)
    Y = Y_fit[:, :, cols]
    Yr = Y_relit[:, :, cols]
    est_cfg = config.estimator()

    result = estimate_rgb(Y, y, model.assignment, est_cfg, valid, {"material": material})
    weights = {"multiclass": result.weights}
    w_naive = naive_ls(Y, y, valid)
    if config.baselines:
        weights["naive"] = w_naive
        weights["single-class"] = single_class_estimate(Y, y, est_cfg, valid).weights

    metrics = {}
    for method, w in weights.items():
        metrics[method] = {
            "obs_residual": relative_l2(predict(Y, w), y, valid),
            "relit_error": relative_l2(predict(Yr, w), y_relit),
            "brdf_error": brdf_error(basis, cols, w, target_cols),
        }

    map_losses = []
    for j in range(result.K):
        if np.isfinite(result.class_logliks[j]):
            map_losses.append(full_map_loss(result.class_weights(j), Y, y, model.gmm, model.subspace, sub_basis.matrix, valid=valid))
        else:
            map_losses.append(None)
    finite = [(v, j) for j, v in enumerate(map_losses) if v is not None]
    map_argmin = min(finite)[1] if finite else None

    sub_labels = np.array([loaded.groups.get(m) for m, _ in sub_basis.labels], dtype=object)
    selected_group = None
    if loaded.groups:
        members = sub_labels[model.assignment.labels == result.selected]
        selected_group = Counter(members.tolist()).most_common(1)[0][0] if members.size else None

    rows = np.ones(y.shape[0], dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    r_naive = predict(Y, w_naive)[rows] - y[rows]
    return TrialResult(
        material=material,
        group=loaded.groups.get(material),
        selected_class=result.selected,
        selected_group=selected_group,
        class_sizes=model.assignment.counts.tolist(),
        class_logliks=[float(v) if np.isfinite(v) else None for v in result.class_logliks],
        naive_loglik=float(np.sum(r_naive * r_naive)),
        metrics=metrics,
        map_losses=map_losses,
        map_argmin=map_argmin,
    )


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    trials: list
    probe: str
    config: PipelineConfig = field(repr=False, default=None)

    def rows(self) -> list[dict]:
        return [row for t in self.trials for row in t.rows(self.probe)]

    def medians(self) -> dict:
        out = {}
        for method in METHODS:
            vals = [t.metrics[method] for t in self.trials if method in t.metrics]
            if vals:
                out[method] = {k: float(np.median([v[k] for v in vals])) for k in vals[0]}
        return out

    def group_match_rate(self) -> float | None:
        scored = [t for t in self.trials if t.group is not None]
        if not scored:
            return None
        return float(np.mean([t.selected_group == t.group for t in scored]))

    def selection_disagreements(self) -> list[str]:
        """Materials where the full non-linear objective prefers another class."""
        return [t.material for t in self.trials if t.map_argmin is not None and t.map_argmin != t.selected_class]

    def summary(self) -> dict:
        return {
            "materials": len(self.trials),
            "probe": self.probe,
            "median": self.medians(),
            "selected_group_match": self.group_match_rate(),
            "map_selection_disagreements": self.selection_disagreements(),
        }

    def class_table(self) -> list[dict]:
        """One row per material: data term per class, the naive baseline, the selection."""
        K = max(len(t.class_logliks) for t in self.trials)
        table = []
        for t in self.trials:
            row = {"material": t.material}
            for j in range(K):
                v = t.class_logliks[j] if j < len(t.class_logliks) else None
                row[f"class_{j}"] = v
            row["baseline"] = t.naive_loglik
            row["selected"] = t.selected_class
            table.append(row)
        return table


def format_class_table(table: list[dict]) -> str:
    """Plain-text table with the selected class marked by ``*``."""
    if not table:
        return ""
    keys = [k for k in table[0] if k.startswith("class_")]
    header = ["material"] + keys + ["baseline"]
    lines = ["  ".join(f"{h:>14}" for h in header)]
    for row in table:
        cells = [f"{row['material']:>14}"]
        for j, k in enumerate(keys):
            v = row[k]
            mark = "*" if j == row["selected"] else " "
            cells.append(f"{'invalid':>13} " if v is None else f"{v:13.6g}{mark}")
        cells.append(f"{row['baseline']:14.6g}")
        lines.append("  ".join(cells))
    return "\n".join(lines)


def evaluate(config: PipelineConfig, cache: Cache | None = None, loaded: LoadedBasis | None = None) -> EvaluationReport:
    """Leave-one-out over the configured materials under the fit probe, scored under the relight probe."""
    cache = cache or Cache(config.cache_dir)
    loaded = loaded or load_basis(config)
    geometry = SphereGeometry(config.image_size)
    T_fit, _ = transport_cached(cache, load_lighting(config.probe, config), geometry, loaded.basis.resolution)
    T_rel, _ = transport_cached(cache, load_lighting(config.relight_probe, config), geometry, loaded.basis.resolution)
    Y_fit, _ = observations_cached(cache, T_fit, loaded.basis)
    Y_rel, _ = observations_cached(cache, T_rel, loaded.basis)
    materials = list(config.materials) or loaded.basis.materials
    trials = []
    for m in materials:
        if m not in loaded.basis.materials:
            raise ConfigError(f"material {m!r} is not in the basis")
        trials.append(leave_one_out_trial(loaded, m, Y_fit, Y_rel, config))
        log.info("%s: class %d, relit error %.4f", m, trials[-1].selected_class, trials[-1].metrics["multiclass"]["relit_error"])
    return EvaluationReport(trials, config.relight_probe, config)


def manifest(command: str, config: PipelineConfig, inputs: dict, outputs: dict, extra: dict | None = None) -> dict:
    """Machine-readable record of a command run (no timestamps, so reruns match)."""
    return {
        "command": command,
        "version": __version__,
        "config": config.to_dict(),
        "inputs": inputs,
        "outputs": outputs,
        **(extra or {}),
    }


__all__ = [
    "PipelineConfig",
    "LoadedBasis",
    "ClassModel",
    "TrialResult",
    "EvaluationReport",
    "METHODS",
    "load_basis",
    "load_lighting",
    "basis_digest",
    "fit_classes",
    "fit_classes_cached",
    "transport_cached",
    "observations_cached",
    "relative_l2",
    "predict",
    "material_observation",
    "brdf_error",
    "leave_one_out_trial",
    "evaluate",
    "format_class_table",
    "manifest",
]
