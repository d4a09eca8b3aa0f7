"""Per-material-class regularized least squares and candidate selection.

For every material class ``j`` and color channel ``c`` the weights of the
class's basis columns solve

    min_w ||Y_c^(j) w - y_c||^2 + lambda_j / Sigma^2 * ||w - mu'_j||^2

with ``lambda_j = lambda * ||y_c||^2 / c_j`` and ``mu'_j`` the uniform
``1 / c_j`` vector.  The three channel solutions of a class form one RGB
candidate; the candidate with the smallest RGB data term wins, so all three
channels are reconstructed from the same class.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import nnls

from .errors import EstimationError, IllPosedError
from .gmm import ClassAssignment, GmmModel
from .subspace import Subspace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EstimatorConfig:
    lam: float = 0.5
    sigma: float = 1.0  # data-term std; only rescales, never changes the selection
    class_sigma: float = 1.0  # scalar spread of the per-class weight prior
    rcond: float | None = None
    nonnegative: bool = False

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not self.sigma > 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.class_sigma > 0.0:
            raise ValueError(f"class sigma must be positive, got {self.class_sigma}")


def balance(lam: float, y, c_j: int) -> float:
    """Balancing weight ``lam * ||y||^2 / c_j``."""
    if c_j < 1:
        raise ValueError("balancing term of an empty material class")
    y = np.asarray(y, dtype=np.float64)
    return float(lam * np.sum(y * y) / c_j)


def solve_class(Y_j, y, lam_j: float, class_sigma: float = 1.0, rcond=None, nonnegative: bool = False) -> np.ndarray:
    """Minimize ``||Y_j w - y||^2 + lam_j / class_sigma^2 * ||w - mu'||^2``.

    Solved as the stacked system ``[Y_j; s I] w = [y; s mu']`` with
    ``s = sqrt(lam_j) / class_sigma`` through an SVD-based least-squares
    driver.
    """
    Y_j = np.asarray(Y_j, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if Y_j.ndim != 2 or Y_j.shape[0] != y.size:
        raise ValueError(f"shape mismatch: Y_j {Y_j.shape}, y {y.shape}")
    c_j = Y_j.shape[1]
    if c_j < 1:
        raise ValueError("material class without basis columns")
    if lam_j < 0.0:
        raise ValueError("balancing weight must be non-negative")
    mu = np.full(c_j, 1.0 / c_j)
    s = np.sqrt(lam_j) / class_sigma
    if s == 0.0:
        if np.linalg.matrix_rank(Y_j) < c_j:
            raise IllPosedError("rank-deficient class observations without regularization")
        A, b = Y_j, y
    else:
        A = np.vstack([Y_j, s * np.eye(c_j)])
        b = np.concatenate([y, s * mu])
    if nonnegative:
        w, _ = nnls(A, b, maxiter=50 * c_j)
        return w
    w, *_ = la.lstsq(A, b, cond=rcond, lapack_driver="gelsd")
    return w


def normal_equation_solution(Y_j, y, lam_j: float, class_sigma: float = 1.0) -> np.ndarray:
    """Closed form ``(Y^T Y + a I) w = Y^T y + a mu'`` with ``a = lam_j / class_sigma^2``."""
    Y_j = np.asarray(Y_j, dtype=np.float64)
    c_j = Y_j.shape[1]
    a = lam_j / class_sigma**2
    mu = np.full(c_j, 1.0 / c_j)
    return np.linalg.solve(Y_j.T @ Y_j + a * np.eye(c_j), Y_j.T @ y + a * mu)


def data_loglik(Y, w, y, valid=None) -> float:
    """Squared residual ``||Y w - y||^2`` over valid pixels.

    With ``Y`` of shape ``(3, M, n)``, ``w`` of shape ``(3, n)`` and ``y`` of
    shape ``(M, 3)`` the channels are summed.
    """
    Y = np.asarray(Y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if Y.ndim == 3:
        r = np.einsum("cmn,cn->mc", Y, w) - y
    else:
        r = Y @ w - y
    if valid is not None:
        r = r[np.asarray(valid, dtype=bool)]
    return float(np.sum(r * r))


@dataclass(frozen=True, eq=False)
class ClassCandidate:
    class_id: int
    channel: int
    columns: np.ndarray  # basis column indices of the class
    weights: np.ndarray  # (c_j,)
    loglik: float  # data term of this channel
    residual: float  # ||Y^(j) w - y||
    lam_j: float


@dataclass(frozen=True, eq=False)
class EstimationResult:
    candidates: dict  # (class_id, channel) -> ClassCandidate
    class_logliks: np.ndarray  # (K,) RGB data term, inf for invalid classes
    selected: int
    weights: np.ndarray  # (3, n), zero outside the selected class
    config: EstimatorConfig
    provenance: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.class_logliks.size

    def class_weights(self, j: int) -> np.ndarray:
        """Expanded ``(3, n)`` weights of class ``j``'s candidate."""
        w = np.zeros_like(self.weights)
        for c in range(3):
            cand = self.candidates.get((j, c))
            if cand is None:
                raise KeyError(f"class {j} has no valid candidate")
            w[c, cand.columns] = cand.weights
        return w

    @property
    def valid_classes(self) -> list[int]:
        return [j for j in range(self.K) if np.isfinite(self.class_logliks[j])]


def _as_rgb(Y_rgb, y_rgb):
    Y_rgb = np.asarray(Y_rgb, dtype=np.float64)
    y_rgb = np.asarray(y_rgb, dtype=np.float64)
    if Y_rgb.ndim != 3 or Y_rgb.shape[0] != 3:
        raise ValueError(f"Y must be (3, pixels, n), got {Y_rgb.shape}")
    if y_rgb.shape != (Y_rgb.shape[1], 3):
        raise ValueError(f"y must be (pixels, 3) = ({Y_rgb.shape[1]}, 3), got {y_rgb.shape}")
    return Y_rgb, y_rgb


def estimate_rgb(
    Y_rgb,
    y_rgb,
    assignment: ClassAssignment,
    config: EstimatorConfig = EstimatorConfig(),
    valid=None,
    provenance: dict | None = None,
) -> EstimationResult:
    """Solve every class per channel, then pick the class with the lowest RGB data term."""
    Y_rgb, y_rgb = _as_rgb(Y_rgb, y_rgb)
    n = Y_rgb.shape[2]
    if assignment.labels.size != n:
        raise ValueError(f"class assignment covers {assignment.labels.size} columns, Y has {n}")
    rows = np.ones(Y_rgb.shape[1], dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    Yv, yv = Y_rgb[:, rows, :], y_rgb[rows]

    candidates = {}
    class_logliks = np.full(assignment.K, np.inf)
    for j in range(assignment.K):
        cols = assignment.members(j)
        if cols.size == 0:
            log.debug("class %d is empty; no candidate", j)
            continue
        total = 0.0
        parts = {}
        try:
            for c in range(3):
                lam_j = balance(config.lam, yv[:, c], cols.size)
                Yj = Yv[c][:, cols]
                w = solve_class(Yj, yv[:, c], lam_j, config.class_sigma, config.rcond, config.nonnegative)
                if not np.all(np.isfinite(w)):
                    raise IllPosedError("non-finite class weights")
                r = Yj @ w - yv[:, c]
                ll = float(r @ r) / config.sigma**2
                parts[c] = ClassCandidate(j, c, cols, w, ll, float(np.sqrt(r @ r)), lam_j)
                total += ll
        except (IllPosedError, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("class %d candidate rejected: %s", j, exc)
            continue
        candidates.update({(j, c): cand for c, cand in parts.items()})
        class_logliks[j] = total
    if not np.isfinite(class_logliks).any():
        raise EstimationError("no material class produced a valid candidate")
    selected = int(np.argmin(class_logliks))  # first index wins exact ties
    weights = np.zeros((3, n))
    for c in range(3):
        cand = candidates[(selected, c)]
        weights[c, cand.columns] = cand.weights
    prov = {"lambda": config.lam}
    prov.update(provenance or {})
    return EstimationResult(candidates, class_logliks, selected, weights, config, prov)


def single_class_estimate(Y_rgb, y_rgb, config: EstimatorConfig = EstimatorConfig(), valid=None) -> EstimationResult:
    """Baseline: one class holding the whole basis (Tikhonov toward the mean BRDF)."""
    n = np.asarray(Y_rgb).shape[2]
    return estimate_rgb(Y_rgb, y_rgb, ClassAssignment.single(n), config, valid, {"method": "single-class"})


def naive_ls(Y, y, valid=None) -> np.ndarray:
    """Unregularized minimum-norm least squares over all columns.

    ``Y`` of shape ``(M, n)`` with ``y`` of shape ``(M,)`` gives ``(n,)``;
    ``(3, M, n)`` with ``(M, 3)`` gives per-channel ``(3, n)`` weights.
    """
    Y = np.asarray(Y, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    rows = slice(None) if valid is None else np.asarray(valid, dtype=bool)
    if Y.ndim == 3:
        return np.stack([naive_ls(Y[c], y[:, c], valid) for c in range(Y.shape[0])])
    w, *_ = la.lstsq(Y[rows], y[rows], lapack_driver="gelsd")
    return w


def log_prior(w, basis_matrix, gmm: GmmModel, subspace: Subspace) -> float:
    """``log sum_j pi_j N(U_hat^T B w | mu_j, Sigma_j)``."""
    coords = subspace.project(np.asarray(basis_matrix) @ np.asarray(w, dtype=np.float64))
    return float(gmm.score_samples(coords[None, :])[0])


def full_map_loss(w, Y, y, gmm: GmmModel, subspace: Subspace, basis_matrix, sigma: float = 1.0, valid=None) -> float:
    """Non-linear MAP objective ``||Y w - y||^2 / sigma^2 - log P(U_hat^T B w)``.

    Diagnostic only.  For RGB input (``Y`` of shape ``(3, M, n)``, ``w`` of
    shape ``(3, n)``) both terms are summed over channels.
    """
    w = np.asarray(w, dtype=np.float64)
    data = data_loglik(Y, w, y, valid) / sigma**2
    B = np.asarray(basis_matrix, dtype=np.float64)
    if w.ndim == 2:
        coords = subspace.project(B @ w.T).T  # (3, N)
        prior = float(np.sum(gmm.score_samples(coords)))
    else:
        prior = log_prior(w, B, gmm, subspace)
    return data - prior


def class_table(result: EstimationResult) -> list[dict]:
    """Per-class rows: data term, validity and the selection mark."""
    return [
        {
            "class": j,
            "loglik": float(result.class_logliks[j]) if np.isfinite(result.class_logliks[j]) else None,
            "selected": j == result.selected,
        }
        for j in range(result.K)
    ]


__all__ = [
    "EstimatorConfig",
    "ClassCandidate",
    "EstimationResult",
    "balance",
    "solve_class",
    "normal_equation_solution",
    "data_loglik",
    "estimate_rgb",
    "single_class_estimate",
    "naive_ls",
    "full_map_loss",
    "log_prior",
    "class_table",
]
