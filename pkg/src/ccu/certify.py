"""Confidence certificates: ball bounds, certified radii, distance checks.

All ratio computations run in log space.  The worst-case in/out density
ratio over a metric ball of radius R around x0 is

    ratio(R) = [sum_k a_k exp(-max(d(x0,mu_k) - R, 0)^2 / (2 s_k^2))]
             / [sum_l b_l exp(-(d(x0,nu_l) + R)^2 / (2 t_l^2))]

which is non-decreasing in R, so the radius certifying a target confidence
is found by bisection after a geometric bracket expansion.  Bounds are
turned into confidences through the same guarded blend as the predictive
distribution, so the soundness comparison is apples to apples.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .metric import MetricTransform
from .model import CcuModel, blend_with_uniform
from .serialize import model_fingerprint

__all__ = [
    "Certificate",
    "DistanceCheck",
    "CensusResult",
    "NoCertificate",
    "ball_log_ratio_bound",
    "ball_bound",
    "certified_radius",
    "required_distance",
    "ball_contains_points",
    "low_confidence_census",
]

_BRACKET_CAP = 2.0**60
_BISECT_MAX_ITER = 200
_BISECT_REL_TOL = 1e-6
_BISECT_ABS_TOL = 1e-12


class NoCertificate(ValueError):
    """The ratio at radius zero already exceeds the target: no radius >= 0
    certifies the requested confidence (the point is too in-distribution)."""


@dataclass(frozen=True)
class Certificate:
    """Verified statement: confidence over the ball B(center, radius) <= bound."""

    center: np.ndarray
    radius: float
    bound: float
    log_ratio_bound: float
    target_nu: float | None
    model_fingerprint: str


class DistanceCheck(NamedTuple):
    required: float
    actual: float
    satisfied: bool


class CensusResult(NamedTuple):
    min_confidence: float
    count_below: int


def _logsumexp(a: np.ndarray) -> float:
    m = float(np.max(a))
    return m + float(np.log(np.exp(a - m).sum()))


def ball_log_ratio_bound(model: CcuModel, x0: np.ndarray, radius: float) -> float:
    """Log of the worst-case in/out density ratio over the radius-R ball.

    At radius zero this collapses to the log density difference at x0
    exactly.  Numerator and denominator are each a log-sum-exp.
    """
    if radius < 0:
        raise ValueError("radius must be non-negative")
    x0 = np.asarray(x0, dtype=float)
    gi, go = model.in_mixture, model.out_mixture
    d_in = np.asarray(model.metric.distance(gi.centroids, x0), dtype=float)
    d_out = np.asarray(model.metric.distance(go.centroids, x0), dtype=float)
    num = gi.log_weights() - np.maximum(d_in - radius, 0.0) ** 2 / (2.0 * gi.scales**2)
    den = go.log_weights() - (d_out + radius) ** 2 / (2.0 * go.scales**2)
    return _logsumexp(num) - _logsumexp(den)


def ball_bound(model: CcuModel, x0: np.ndarray, radius: float) -> Certificate:
    """Certificate bounding the confidence everywhere in the ball."""
    log_ratio = ball_log_ratio_bound(model, x0, radius)
    bound = float(
        blend_with_uniform(1.0, log_ratio - np.log(model.prior_odds), model.n_classes)
    )
    return Certificate(
        center=np.asarray(x0, dtype=float).copy(),
        radius=float(radius),
        bound=bound,
        log_ratio_bound=log_ratio,
        target_nu=None,
        model_fingerprint=model_fingerprint(model),
    )


def certified_radius(model: CcuModel, x0: np.ndarray, nu: float) -> Certificate:
    """Largest certifiable radius for the confidence target nu / n_classes.

    Solves ratio(R) = (nu - 1) / (M - nu) * prior_odds by bisection; the
    monotone ratio makes the root unique.  The returned radius sits on the
    conservative side of the tolerance, so the certificate bound never
    exceeds nu / M.

    Raises :class:`NoCertificate` when the ratio at radius zero is already
    above the target.
    """
    m = model.n_classes
    if not 1.0 < nu < m:
        raise ValueError(f"nu must lie in (1, {m})")
    log_target = float(np.log((nu - 1.0) / (m - nu) * model.prior_odds))

    log_b0 = ball_log_ratio_bound(model, x0, 0.0)
    if log_b0 > log_target:
        raise NoCertificate(
            f"ratio at radius 0 (log {log_b0:.6g}) exceeds the target "
            f"(log {log_target:.6g})"
        )

    def certificate(radius: float, log_ratio: float) -> Certificate:
        bound = float(
            blend_with_uniform(1.0, log_ratio - np.log(model.prior_odds), m)
        )
        return Certificate(
            center=np.asarray(x0, dtype=float).copy(),
            radius=float(radius),
            bound=bound,
            log_ratio_bound=log_ratio,
            target_nu=float(nu),
            model_fingerprint=model_fingerprint(model),
        )

    if log_b0 == log_target:
        return certificate(0.0, log_b0)

    hi = 1.0
    log_b_hi = ball_log_ratio_bound(model, x0, hi)
    while log_b_hi < log_target:
        hi *= 2.0
        if hi > _BRACKET_CAP:
            raise RuntimeError("bracket expansion exceeded its cap")
        log_b_hi = ball_log_ratio_bound(model, x0, hi)

    lo, log_b_lo = 0.0, log_b0
    # Converge the lower endpoint: ratio(lo) <= target keeps the bound valid.
    close_enough = float(np.log1p(-_BISECT_REL_TOL))
    for _ in range(_BISECT_MAX_ITER):
        if log_b_lo - log_target >= close_enough or hi - lo <= _BISECT_ABS_TOL:
            break
        mid = 0.5 * (lo + hi)
        log_b_mid = ball_log_ratio_bound(model, x0, mid)
        if log_b_mid <= log_target:
            lo, log_b_lo = mid, log_b_mid
        else:
            hi = mid
    return certificate(lo, log_b_lo)


def required_distance(
    model: CcuModel,
    z: np.ndarray,
    train_points: np.ndarray,
    epsilon: float,
) -> DistanceCheck:
    """Distance from the training set beyond which confidence is certified
    to stay below (1 + epsilon) / n_classes.

    With the nearest-by-scaled-distance in-component (index via lowest-index
    tie-break), the nearest training point, and the smallest out-component
    term, the sufficient distance is

        d(x*, mu*) + d(mu*, nu*) (2/D + 1/sqrt(D))
                   + t* sqrt(2 max(0, log A)) / sqrt(D)

    where D = t*^2/s*^2 - 1 and
    A = (M-1)/(epsilon * prior_odds) * sum_k a_k / b_l*.  A log argument
    below one makes the last term vacuous and it is clamped away.  When
    ``train_points`` is a subsample, the reported actual distance is an
    upper bound on the true minimum, which can only flip ``satisfied``
    toward the conservative side.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    train_points = np.atleast_2d(np.asarray(train_points, dtype=float))
    if train_points.shape[0] == 0:
        raise ValueError("train_points must be non-empty")
    gi, go = model.in_mixture, model.out_mixture
    if go.scales.min() <= gi.scales.max():
        raise ValueError(
            "every out-scale must strictly exceed every in-scale; "
            "run the scale-constraint projection first"
        )
    z = np.asarray(z, dtype=float)
    metric = model.metric

    d_mu = np.asarray(metric.distance(gi.centroids, z), dtype=float)
    d_train = np.asarray(metric.distance(train_points, z), dtype=float)
    d_nu = np.asarray(metric.distance(go.centroids, z), dtype=float)

    k_star = int(np.argmin(d_mu / gi.scales))
    i_star = int(np.argmin(d_train))
    out_terms = go.log_weights() - d_nu**2 / (2.0 * go.scales**2)
    l_star = int(np.argmin(out_terms))

    sigma = gi.scales[k_star]
    theta = go.scales[l_star]
    delta = theta**2 / sigma**2 - 1.0
    d_x_mu = float(metric.distance(train_points[i_star], gi.centroids[k_star]))
    d_mu_nu = float(metric.distance(gi.centroids[k_star], go.centroids[l_star]))

    log_arg = (
        np.log(model.n_classes - 1.0)
        - np.log(epsilon)
        - np.log(model.prior_odds)
        + _logsumexp(gi.log_weights())
        - go.log_weights()[l_star]
    )
    tail = theta / np.sqrt(delta) * np.sqrt(2.0 * max(log_arg, 0.0))
    required = d_x_mu + d_mu_nu * (2.0 / delta + 1.0 / np.sqrt(delta)) + tail
    actual = float(d_train[i_star])
    return DistanceCheck(float(required), actual, actual >= required)


def ball_contains_points(
    metric: MetricTransform, x0: np.ndarray, radius: float, points: np.ndarray
) -> int:
    """How many of the given points fall inside the closed metric ball."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = np.asarray(metric.distance(points, np.asarray(x0, dtype=float)))
    return int(np.count_nonzero(d <= radius))


def low_confidence_census(
    model: CcuModel, points: np.ndarray, threshold: float
) -> CensusResult:
    """Minimum confidence over the dataset and the count strictly below
    the threshold."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] == 0:
        raise ValueError("census requires a non-empty dataset")
    conf = np.asarray(model.confidence(points))
    return CensusResult(float(conf.min()), int(np.count_nonzero(conf < threshold)))
