"""Gaussian mixture over projected BRDF coordinates.

Expectation-maximization bootstrapped from k-means++ / Lloyd clustering.
Every component of the mixture is a material class; a basis BRDF belongs to
the class with the largest responsibility.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular
from scipy.special import logsumexp

from .errors import NumericalError

log = logging.getLogger(__name__)

COV_REG = 1e-6
MAX_RESEEDS = 10  # re-seed events per fit; afterwards starved components are kept
LOG_2PI = np.log(2.0 * np.pi)


def _regularize(cov: np.ndarray, fallback_scale: float) -> np.ndarray:
    """Add ``COV_REG * trace / N`` to the diagonal (``fallback_scale`` for zero trace)."""
    N = cov.shape[0]
    scale = np.trace(cov) / N
    if not scale > 0.0:
        scale = fallback_scale
    return cov + COV_REG * scale * np.eye(N)


def _fallback_scale(points: np.ndarray) -> float:
    s = np.trace(np.atleast_2d(np.cov(points.T, bias=True))) / points.shape[1]
    if s > 0.0:
        return s
    return max(float(np.mean(points**2)), 1.0)


def _check_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be an (n, N) array, got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise ValueError("points contain non-finite values")
    return points


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


def _sq_dist(points, centers):
    return (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centers.T
        + np.sum(centers**2, axis=1)[None, :]
    ).clip(min=0.0)


def kmeans_plusplus(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((K, points.shape[1]))
    chosen = [int(rng.integers(n))]
    centers[0] = points[chosen[0]]
    closest = _sq_dist(points, centers[:1])[:, 0]
    for j in range(1, K):
        total = closest.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining points coincide with a center
            idx = int(rng.choice([i for i in range(n) if i not in chosen]))
        chosen.append(idx)
        centers[j] = points[idx]
        closest = np.minimum(closest, _sq_dist(points, centers[j:j + 1])[:, 0])
    return centers


def kmeans(points, K: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-9):
    """k-means++ seeding then Lloyd iterations; returns ``(centers, labels)``."""
    points = _check_points(points)
    n = points.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"cannot form {K} clusters from {n} points")
    rng = np.random.default_rng(seed)
    centers = kmeans_plusplus(points, K, rng)
    labels = np.argmin(_sq_dist(points, centers), axis=1)
    for _ in range(max_iter):
        new = centers.copy()
        for j in range(K):
            members = labels == j
            if members.any():
                new[j] = points[members].mean(axis=0)
            else:
                # steal the point farthest from its own center
                d = _sq_dist(points, new)[np.arange(n), labels]
                far = int(np.argmax(d))
                new[j] = points[far]
                labels[far] = j
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        labels = np.argmin(_sq_dist(points, centers), axis=1)
        if shift < tol:
            break
    return centers, labels


def kmeans_init(points, K: int, seed: int = 0):
    """Initial ``(weights, means, covariances)`` for EM from a k-means partition.

    Clusters with a single member get the (regularized) covariance of the
    whole point set.
    """
    points = _check_points(points)
    n, N = points.shape
    if n < K:
        raise ValueError(f"need at least K={K} points, got {n}")
    centers, labels = kmeans(points, K, seed)
    fallback = _fallback_scale(points)
    global_cov = np.atleast_2d(np.cov(points.T, bias=True)) if n > 1 else np.zeros((N, N))
    weights = np.empty(K)
    covs = np.empty((K, N, N))
    for j in range(K):
        members = points[labels == j]
        weights[j] = members.shape[0] / n
        if members.shape[0] > 1:
            diff = members - centers[j]
            cov = diff.T @ diff / members.shape[0]
        else:
            cov = global_cov
        if not np.trace(cov) > 0.0:
            cov = global_cov
        covs[j] = _regularize(cov, fallback)
    return weights, centers, covs


# ---------------------------------------------------------------------------
# Mixture model
# ---------------------------------------------------------------------------


def _log_gaussians(points: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """``log N(x_i | mu_j, Sigma_j)`` as an ``(n, K)`` array."""
    n, N = points.shape
    out = np.empty((n, means.shape[0]))
    for j in range(means.shape[0]):
        try:
            L, _ = cho_factor(covs[j], lower=True, check_finite=True)
        except np.linalg.LinAlgError:
            raise NumericalError(f"covariance of component {j} is not positive definite") from None
        L = np.tril(L)
        z = solve_triangular(L, (points - means[j]).T, lower=True)
        out[:, j] = -0.5 * (N * LOG_2PI + np.sum(z**2, axis=0)) - np.sum(np.log(np.diag(L)))
    return out


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, N)
    covariances: np.ndarray  # (K, N, N)
    log_likelihoods: tuple[float, ...] = ()
    reseeds: tuple[int, ...] = ()  # iterations at which a component was re-seeded
    converged: bool = False
    seed: int = 0

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @property
    def N(self) -> int:
        return self.means.shape[1]

    def log_weighted_densities(self, points) -> np.ndarray:
        """``log(pi_j N(x | mu_j, Sigma_j))``, shape ``(n, K)``."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if points.shape[1] != self.N:
            raise ValueError(f"points have dimension {points.shape[1]}, model has {self.N}")
        with np.errstate(divide="ignore"):
            log_pi = np.log(self.weights)
        return _log_gaussians(points, self.means, self.covariances) + log_pi

    def score_samples(self, points) -> np.ndarray:
        """Per-point mixture log density."""
        return logsumexp(self.log_weighted_densities(points), axis=1)

    def log_likelihood(self, points) -> float:
        return float(np.sum(self.score_samples(points)))

    def responsibilities(self, points) -> np.ndarray:
        return responsibilities(self, points)


def responsibilities(model: GmmModel, point) -> np.ndarray:
    """Posterior class probabilities; ``(K,)`` for one point, ``(n, K)`` for many."""
    x = np.asarray(point, dtype=np.float64)
    single = x.ndim == 1
    lw = model.log_weighted_densities(np.atleast_2d(x))
    gamma = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
    return gamma[0] if single else gamma


def em_fit(points, K: int = 4, seed: int = 0, tol: float = 1e-6, max_iter: int = 500) -> GmmModel:
    """Fit a ``K``-component full-covariance mixture by EM.

    Stops when the relative change of the total log-likelihood drops below
    ``tol``.  Each M-step adds ``1e-6 * trace(Sigma_j) / N`` to the diagonal of
    every covariance; a component whose weight falls under ``1 / (10 n)`` is
    re-seeded at the worst-explained point, at most ``MAX_RESEEDS`` times.
    """
    points = _check_points(points)
    n, N = points.shape
    if n < K:
        raise ValueError(f"need at least K={K} points, got {n}")
    weights, means, covs = kmeans_init(points, K, seed)
    fallback = _fallback_scale(points)
    global_cov = _regularize(np.atleast_2d(np.cov(points.T, bias=True)), fallback)
    history: list[float] = []
    reseeds: list[int] = []
    converged = False
    for it in range(max_iter):
        model = GmmModel(weights, means, covs)
        lw = model.log_weighted_densities(points)
        per_point = logsumexp(lw, axis=1)
        ll = float(np.sum(per_point))
        if not np.isfinite(ll):
            raise NumericalError(f"EM log-likelihood became non-finite at iteration {it}")
        gamma = np.exp(lw - per_point[:, None])
        if history and abs(ll - history[-1]) <= tol * abs(history[-1]) and (not reseeds or reseeds[-1] < it):
            history.append(ll)
            converged = True
            break
        history.append(ll)

        # M-step
        Nk = gamma.sum(axis=0)
        weights = Nk / n
        means = np.empty((K, N))
        covs = np.empty((K, N, N))
        for j in range(K):
            if Nk[j] <= 0.0:
                means[j] = points[int(np.argmin(per_point))]
                covs[j] = global_cov
                continue
            means[j] = gamma[:, j] @ points / Nk[j]
            diff = points - means[j]
            covs[j] = _regularize((gamma[:, j, None] * diff).T @ diff / Nk[j], fallback)
        starved = np.flatnonzero(weights < 1.0 / (10.0 * n))
        if starved.size and len(reseeds) >= MAX_RESEEDS:
            if len(reseeds) == MAX_RESEEDS:
                log.warning("re-seed budget spent; keeping starved components %s", starved.tolist())
                reseeds.append(-1)  # marker: budget exhausted, never repeated
            starved = starved[:0]
        if starved.size:
            order = np.argsort(per_point, kind="stable")
            for rank, j in enumerate(starved):
                means[j] = points[order[rank]]
                covs[j] = global_cov
                weights[j] = 1.0 / n
            weights /= weights.sum()
            reseeds.append(it + 1)
            log.debug("re-seeded components %s at iteration %d", starved.tolist(), it + 1)
    else:
        log.warning("EM stopped after %d iterations without converging", max_iter)
    return GmmModel(
        np.asarray(weights),
        np.asarray(means),
        np.asarray(covs),
        tuple(history),
        tuple(r for r in reseeds if r >= 0),
        converged,
        int(seed),
    )


# ---------------------------------------------------------------------------
# Hard class assignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClassAssignment:
    labels: np.ndarray  # (n,) class id per basis column
    K: int
    gamma: np.ndarray | None = field(default=None, repr=False)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.K)

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.labels == j)

    @classmethod
    def single(cls, n: int) -> "ClassAssignment":
        """Every column in one class."""
        return cls(np.zeros(n, dtype=np.int64), 1)


def assign(model: GmmModel, points) -> ClassAssignment:
    """Hard assignment by maximum responsibility (lowest index on ties)."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    gamma = responsibilities(model, points)
    labels = np.argmax(gamma, axis=1)
    return ClassAssignment(labels.astype(np.int64), model.K, gamma)
