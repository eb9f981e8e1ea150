"""Data-adapted Mahalanobis-type metric.

The metric is ``d(x, y) = ||C^(-1/2) (x - y)||_2`` where ``C`` is the
eigenvalue-floored empirical covariance of a training sample.  In whitened
coordinates ``z = diag(eigenvalues)^(-1/2) U^T x`` the metric is Euclidean,
which every downstream consumer (densities, certificates, attacks) relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["MetricTransform", "fit_covariance"]


@dataclass
class MetricTransform:
    """Eigendecomposition ``C = U diag(eigenvalues) U^T`` defining the metric.

    Immutable after construction: concurrent readers are safe.
    """

    eigenvectors: np.ndarray  # (d, d), columns are the eigenvectors
    eigenvalues: np.ndarray  # (d,), strictly positive after flooring
    log_det: float
    dim: int
    _fwd: np.ndarray = field(init=False, repr=False)  # whitening matrix
    _inv: np.ndarray = field(init=False, repr=False)  # its inverse

    def __post_init__(self) -> None:
        self.eigenvectors = np.asarray(self.eigenvectors, dtype=float)
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        if self.eigenvectors.shape != (self.dim, self.dim):
            raise ValueError("eigenvector matrix must be dim x dim")
        if self.eigenvalues.shape != (self.dim,):
            raise ValueError("need one eigenvalue per dimension")
        if np.any(self.eigenvalues <= 0) or not np.all(np.isfinite(self.eigenvalues)):
            raise ValueError("eigenvalues must be positive and finite")
        inv_sqrt = 1.0 / np.sqrt(self.eigenvalues)
        self._fwd = inv_sqrt[:, None] * self.eigenvectors.T
        self._inv = self.eigenvectors * np.sqrt(self.eigenvalues)[None, :]

    @classmethod
    def identity(cls, dim: int) -> "MetricTransform":
        """Euclidean metric in ``dim`` dimensions (C = I)."""
        return cls(np.eye(dim), np.ones(dim), 0.0, dim)

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {x.shape[-1]}")
        return x

    def whiten(self, x: np.ndarray) -> np.ndarray:
        """Map to coordinates in which the metric is the Euclidean norm."""
        return self._check_dim(x) @ self._fwd.T

    def unwhiten(self, z: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`whiten`."""
        return self._check_dim(z) @ self._inv.T

    def grad_to_whitened(self, grad_x: np.ndarray) -> np.ndarray:
        """Convert a gradient w.r.t. x into a gradient w.r.t. whiten(x)."""
        return self._check_dim(grad_x) @ self._inv

    def grad_to_original(self, grad_z: np.ndarray) -> np.ndarray:
        """Convert a gradient w.r.t. whiten(x) back into one w.r.t. x."""
        return self._check_dim(grad_z) @ self._fwd

    def distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray | float:
        """Metric distance; broadcasts over leading axes of either argument."""
        diff = self.whiten(x) - self.whiten(y)
        out = np.linalg.norm(diff, axis=-1)
        return float(out) if out.ndim == 0 else out


def fit_covariance(samples: np.ndarray, floor_ratio: float = 1e-6) -> MetricTransform:
    """Fit the metric from a sample matrix.

    The empirical covariance (mean-subtracted, 1/(n-1) normalization) is
    eigendecomposed and every eigenvalue is floored at ``floor_ratio`` times
    the largest one, which makes the result full rank.

    Raises
    ------
    ValueError
        For fewer than two samples, non-finite entries, ragged rows, a
        ``floor_ratio`` outside (0, 1), or an all-zero covariance (identical
        samples), for which the relative floor is undefined.
    """
    try:
        x = np.asarray(samples, dtype=float)
    except ValueError as exc:
        raise ValueError("samples must form a rectangular matrix") from exc
    if x.ndim != 2:
        raise ValueError("samples must be a 2-d array (n, d)")
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least 2 samples to fit a covariance")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples contain non-finite entries")
    if not 0.0 < floor_ratio < 1.0:
        raise ValueError("floor_ratio must lie in (0, 1)")

    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T)  # kill float asymmetry before the symmetric solver
    vals, vecs = np.linalg.eigh(cov)
    top = vals.max()
    if top <= 0.0:
        raise ValueError("all samples identical: covariance has no positive eigenvalue")
    vals = np.maximum(vals, floor_ratio * top)
    return MetricTransform(vecs, vals, float(np.log(vals).sum()), d)
