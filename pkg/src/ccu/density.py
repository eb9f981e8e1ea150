"""Gaussian mixtures under the shared metric, evaluated in log space.

Each mixture has K centroids with one isotropic scale per component
(scales live in whitened-distance units).  Mixing weights are uniform, so
the log weight of component k is fully determined by its scale:

    log w_k = -log K - (d/2) log(2 pi scale_k^2) - (1/2) log det C

which keeps the mixture a normalized density on R^d.  Weights are always
recomputed from the scales, never cached.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .metric import MetricTransform

__all__ = [
    "GaussianMixture",
    "EmTrace",
    "em_init",
    "em_init_traced",
    "project_scale_constraint",
    "SCALE_FLOOR",
]

log = logging.getLogger(__name__)

# Floor on component scales (whitened units); prevents collapse to point masses.
SCALE_FLOOR = 1e-3


@dataclass
class GaussianMixture:
    """K isotropic components in the shared metric.

    Safe for concurrent evaluation; mutation (EM, training updates,
    constraint projection) requires exclusive access.
    """

    centroids: np.ndarray  # (K, d), original coordinates
    scales: np.ndarray  # (K,), > 0, whitened-distance units
    metric: MetricTransform

    def __post_init__(self) -> None:
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=float))
        self.scales = np.asarray(self.scales, dtype=float).reshape(-1)
        if self.centroids.shape[0] != self.scales.shape[0]:
            raise ValueError("one scale per centroid required")
        if self.centroids.shape[1] != self.metric.dim:
            raise ValueError("centroid dimension does not match metric")
        if np.any(self.scales <= 0) or not np.all(np.isfinite(self.scales)):
            raise ValueError("scales must be positive and finite")

    @property
    def n_components(self) -> int:
        return self.scales.shape[0]

    @property
    def dim(self) -> int:
        return self.metric.dim

    def log_weights(self) -> np.ndarray:
        """Per-component log mixing weight, recomputed from the scales."""
        k, d = self.n_components, self.dim
        return (
            -np.log(k)
            - 0.5 * d * np.log(2.0 * np.pi * self.scales**2)
            - 0.5 * self.metric.log_det
        )

    def _logits(self, z: np.ndarray) -> np.ndarray:
        """(n, K) array of log w_k - ||z - zeta_k||^2 / (2 scale_k^2)."""
        zeta = self.metric.whiten(self.centroids)
        diff = z[:, None, :] - zeta[None, :, :]
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        return self.log_weights()[None, :] - sq / (2.0 * self.scales**2)[None, :]

    def log_density(self, x: np.ndarray) -> np.ndarray | float:
        """Log mixture density; finite for every finite input."""
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("log_density requires finite input")
        single = x.ndim == 1
        logits = self._logits(self.metric.whiten(np.atleast_2d(x)))
        out = _logsumexp(logits, axis=1)
        return float(out[0]) if single else out

    def log_density_and_point_grad(
        self, x: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Batched log density plus its gradient w.r.t. the input points."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = self.metric.whiten(x)
        zeta = self.metric.whiten(self.centroids)
        logits = self._logits(z)
        dens = _logsumexp(logits, axis=1)
        resp = np.exp(logits - dens[:, None])
        # d logdens / dz = -sum_k resp_k (z - zeta_k) / scale_k^2
        coef = resp / (self.scales**2)[None, :]
        gz = -(coef.sum(axis=1)[:, None] * z - coef @ zeta)
        return dens, self.metric.grad_to_original(gz)

    def log_density_grad(self, x: np.ndarray) -> "DensityGrad":
        """Gradient of the log density at a single point.

        Returns gradients w.r.t. the centroids, the log scales (so scale
        positivity is unconstrained during optimization), and the point.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 1:
            raise ValueError("log_density_grad takes a single point")
        if not np.all(np.isfinite(x)):
            raise ValueError("log_density_grad requires finite input")
        d_cent, d_logscale = self.weighted_param_grad(x[None, :], np.ones(1))
        _, gx = self.log_density_and_point_grad(x[None, :])
        return DensityGrad(d_cent, d_logscale, gx[0])

    def weighted_param_grad(
        self, x: np.ndarray, weights: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Sum over points of ``weights_n * grad_params log_density(x_n)``.

        Used by the training loop, where each point carries a chain-rule
        coefficient.  Returns (d_centroids, d_log_scales).
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        weights = np.asarray(weights, dtype=float).reshape(-1)
        z = self.metric.whiten(x)
        zeta = self.metric.whiten(self.centroids)
        logits = self._logits(z)
        dens = _logsumexp(logits, axis=1)
        resp = np.exp(logits - dens[:, None])
        c = resp * weights[:, None]  # (n, K)
        inv_var = 1.0 / self.scales**2
        # centroid gradient, whitened space: sum_n c_nk (z_n - zeta_k) / scale_k^2
        acc = c.T @ z - c.sum(axis=0)[:, None] * zeta
        d_cent = self.metric.grad_to_original(acc * inv_var[:, None])
        diff = z[:, None, :] - zeta[None, :, :]
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        d_logscale = np.einsum("nk,nk->k", c, sq * inv_var[None, :] - self.dim)
        return d_cent, d_logscale


@dataclass
class DensityGrad:
    centroids: np.ndarray  # (K, d)
    log_scales: np.ndarray  # (K,)
    point: np.ndarray  # (d,)


@dataclass
class EmTrace:
    """Per-iteration log-likelihood plus the floor/reseed interventions."""

    log_likelihood: list[float] = field(default_factory=list)
    floored_iterations: list[int] = field(default_factory=list)
    reseeded_iterations: list[int] = field(default_factory=list)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def _farthest_point_centroids(z: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++-style seeding: random first pick, then greedy farthest point."""
    chosen = [int(rng.integers(z.shape[0]))]
    min_sq = ((z - z[chosen[0]]) ** 2).sum(axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(min_sq))
        chosen.append(nxt)
        min_sq = np.minimum(min_sq, ((z - z[nxt]) ** 2).sum(axis=1))
    return z[np.array(chosen)]


def em_init_traced(
    data: np.ndarray,
    k: int,
    metric: MetricTransform,
    iters: int = 100,
    seed: int = 0,
    rel_tol: float = 1e-6,
) -> tuple[GaussianMixture, EmTrace]:
    """EM with spherical per-component variance in whitened coordinates.

    E-step responsibilities come from the current component log densities;
    the M-step sets each centroid to the responsibility-weighted mean and
    each variance to the responsibility-weighted mean squared whitened
    distance divided by d.  Scales are floored at ``SCALE_FLOOR`` and empty
    components are reseeded to a random data point; both interventions are
    recorded in the trace (they are the only events that may break the
    monotone log-likelihood).
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    if n == 0:
        raise ValueError("em_init requires non-empty data")
    if k < 1:
        raise ValueError("component count must be >= 1")
    if k > n:
        raise ValueError(f"component count {k} exceeds data size {n}")

    rng = np.random.default_rng(seed)
    z = metric.whiten(data)
    d = metric.dim
    zeta = _farthest_point_centroids(z, k, rng)

    # Initial scales from a hard assignment to the seeded centroids.
    sq_all = ((z[:, None, :] - zeta[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(sq_all, axis=1)
    global_scale = max(float(np.sqrt(z.var(axis=0).sum() / d)), SCALE_FLOOR)
    scales = np.full(k, global_scale)
    for j in range(k):
        mask = assign == j
        if mask.any():
            scales[j] = max(np.sqrt(sq_all[mask, j].mean() / d), SCALE_FLOOR)

    gmm = GaussianMixture(metric.unwhiten(zeta), scales, metric)
    trace = EmTrace()
    prev_ll = -np.inf
    for it in range(iters):
        logits = gmm._logits(z)
        per_point = _logsumexp(logits, axis=1)
        trace.log_likelihood.append(float(per_point.sum()))
        resp = np.exp(logits - per_point[:, None])
        mass = resp.sum(axis=0)

        zeta = gmm.metric.whiten(gmm.centroids)
        new_zeta = np.empty_like(zeta)
        new_scales = np.empty(k)
        floored = reseeded = False
        for j in range(k):
            if mass[j] < 1e-12:
                new_zeta[j] = z[int(rng.integers(n))]
                new_scales[j] = global_scale
                reseeded = True
                continue
            new_zeta[j] = resp[:, j] @ z / mass[j]
            sq = ((z - new_zeta[j]) ** 2).sum(axis=1)
            var = float(resp[:, j] @ sq / (mass[j] * d))
            s = np.sqrt(var)
            if s < SCALE_FLOOR:
                s = SCALE_FLOOR
                floored = True
            new_scales[j] = s
        if floored:
            trace.floored_iterations.append(it)
            log.debug("em_init: scale floor fired at iteration %d", it)
        if reseeded:
            trace.reseeded_iterations.append(it)
            log.debug("em_init: empty component reseeded at iteration %d", it)

        gmm.centroids = metric.unwhiten(new_zeta)
        gmm.scales = new_scales
        ll = trace.log_likelihood[-1]
        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= rel_tol * abs(prev_ll):
            break
        prev_ll = ll
    return gmm, trace


def em_init(
    data: np.ndarray,
    k: int,
    metric: MetricTransform,
    iters: int = 100,
    seed: int = 0,
) -> GaussianMixture:
    """Fit a mixture by EM; see :func:`em_init_traced` for the mechanics."""
    return em_init_traced(data, k, metric, iters=iters, seed=seed)[0]


def project_scale_constraint(
    in_mixture: GaussianMixture, out_mixture: GaussianMixture
) -> GaussianMixture:
    """Raise out-mixture scales to at least twice the largest in-scale.

    Guarantees the strict scale separation the confidence bounds need;
    scales already satisfying the constraint are untouched.  Mutates and
    returns ``out_mixture``.
    """
    if in_mixture.metric is not out_mixture.metric:
        raise ValueError("mixtures must share one metric")
    out_mixture.scales = np.maximum(out_mixture.scales, 2.0 * in_mixture.scales.max())
    return out_mixture
