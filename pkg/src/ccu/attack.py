"""Adversarial-noise search: maximize confidence inside a metric ball.

Projected gradient ascent runs in whitened coordinates where the ball is a
Euclidean ball; every restart follows the backtracking schedule (grow the
step on improvement, revert and halve on failure).  With the unit box
enabled, each ball projection is followed by a clip in original
coordinates, and a final alternating-projection pass repairs any residual
infeasibility (both sets are convex and contain the seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metric import MetricTransform
from .model import CcuModel

__all__ = ["AttackConfig", "AttackResult", "pgd_max_confidence",
           "alternating_projection", "feasibility_residual"]

_FEASIBILITY_TOL = 1e-6


@dataclass
class AttackConfig:
    steps: int = 500
    restarts: int = 50
    initial_step: float = 3.0
    grow: float = 1.1
    shrink: float = 2.0
    final_altproj_steps: int = 10
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("steps and restarts must be >= 1")
        if self.grow <= 1.0 or self.shrink <= 1.0:
            raise ValueError("grow and shrink factors must exceed 1")


@dataclass
class AttackResult:
    best_point: np.ndarray
    best_confidence: float
    per_restart_best: np.ndarray  # best confidence reached by each restart
    feasibility_residual: float


def feasibility_residual(
    metric: MetricTransform,
    x: np.ndarray,
    x0: np.ndarray,
    radius: float,
    box: bool,
) -> float:
    """Distance beyond the ball plus the worst per-coordinate box violation."""
    excess = max(float(metric.distance(x, x0)) - radius, 0.0)
    if box:
        excess += float(np.maximum(np.maximum(x - 1.0, -x), 0.0).max())
    return excess


def _project_ball(z: np.ndarray, z0: np.ndarray, radius: float) -> np.ndarray:
    delta = z - z0
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    scale = np.where(norms > radius, radius / np.maximum(norms, 1e-300), 1.0)
    return z0 + delta * scale


def alternating_projection(
    metric: MetricTransform,
    x: np.ndarray,
    x0: np.ndarray,
    radius: float,
    box: bool,
    steps: int,
) -> tuple[np.ndarray, float]:
    """Alternate ball projection (radial shrink in whitened coordinates)
    with the box clip for a fixed number of rounds.

    Returns the final iterate and its feasibility residual.  A feasible
    input is a fixed point and comes back unchanged.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    z0 = metric.whiten(x0)
    for _ in range(steps):
        z = _project_ball(metric.whiten(x), z0, radius)
        x = metric.unwhiten(z)
        if box:
            x = np.clip(x, 0.0, 1.0)
        if feasibility_residual(metric, x, x0, radius, box) == 0.0:
            break
    return x, feasibility_residual(metric, x, x0, radius, box)


def _repair(
    metric: MetricTransform,
    x: np.ndarray,
    x0: np.ndarray,
    radius: float,
    box: bool,
    steps: int,
) -> np.ndarray:
    """Drive a candidate into the feasible set.

    Runs the configured alternating-projection rounds, then extra rounds if
    needed, and finally shrinks toward the seed (which lies in both sets).
    """
    x, residual = alternating_projection(metric, x, x0, radius, box, steps)
    extra = 0
    while residual > _FEASIBILITY_TOL and extra < 1000:
        x, residual = alternating_projection(metric, x, x0, radius, box, 10)
        extra += 1
    if residual > _FEASIBILITY_TOL:
        lo, hi = 0.0, 1.0  # x0 + t (x - x0); t = 0 is feasible
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            cand = x0 + mid * (x - x0)
            if feasibility_residual(metric, cand, x0, radius, box) <= _FEASIBILITY_TOL / 2:
                lo = mid
            else:
                hi = mid
        x = x0 + lo * (x - x0)
    return x


def pgd_max_confidence(
    model: CcuModel,
    x0: np.ndarray,
    radius: float,
    box: bool = False,
    config: AttackConfig | None = None,
) -> AttackResult:
    """Best feasible confidence found by multi-restart projected ascent.

    Restarts start uniformly inside the whitened ball and run in one batch;
    each keeps its own adaptive step size, and its per-restart RNG stream is
    derived from (seed, restart index) so results do not depend on
    scheduling.  The seed point itself is always a candidate, so the result
    is never worse than the confidence at ``x0``.
    """
    cfg = config or AttackConfig()
    x0 = np.asarray(x0, dtype=float)
    if radius <= 0:
        raise ValueError("radius must be positive")
    if box and (np.any(x0 < 0.0) or np.any(x0 > 1.0)):
        raise ValueError("seed point must lie inside the unit box")
    metric = model.metric
    d = metric.dim
    n = cfg.restarts
    z0 = metric.whiten(x0)

    inits = np.empty((n, d))
    for i in range(n):
        rng = np.random.default_rng([cfg.seed, i])
        direction = rng.standard_normal(d)
        direction /= max(np.linalg.norm(direction), 1e-300)
        inits[i] = z0 + direction * radius * rng.random() ** (1.0 / d)

    def settle(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Ball projection then optional box clip; returns (z, x)."""
        z = _project_ball(z, z0, radius)
        x = metric.unwhiten(z)
        if box:
            x = np.clip(x, 0.0, 1.0)
            z = metric.whiten(x)
        return z, x

    z_cur, x_cur = settle(inits)
    conf_cur, _ = model.confidence_and_grad(x_cur)
    best_x = x_cur.copy()
    best_conf = conf_cur.copy()
    step = np.full(n, cfg.initial_step)

    for _ in range(cfg.steps):
        _, grad_x = model.confidence_and_grad(x_cur)
        g = metric.grad_to_whitened(grad_x)
        norms = np.linalg.norm(g, axis=1, keepdims=True)
        direction = np.where(norms > 0, g / np.maximum(norms, 1e-300), 0.0)
        z_prop, x_prop = settle(z_cur + step[:, None] * direction)
        conf_prop, _ = model.confidence_and_grad(x_prop)
        improved = conf_prop > conf_cur
        z_cur = np.where(improved[:, None], z_prop, z_cur)
        x_cur = np.where(improved[:, None], x_prop, x_cur)
        conf_cur = np.where(improved, conf_prop, conf_cur)
        step = np.where(improved, step * cfg.grow, step / cfg.shrink)
        gained = conf_cur > best_conf
        best_x = np.where(gained[:, None], x_cur, best_x)
        best_conf = np.where(gained, conf_cur, best_conf)

    # Repair each restart's best point, then pick the feasible maximum;
    # the seed is the fallback candidate with residual zero.
    candidates = [x0]
    confidences = [float(model.confidence(x0))]
    per_restart = np.empty(n)
    for i in range(n):
        repaired = _repair(metric, best_x[i], x0, radius, box, cfg.final_altproj_steps)
        c = float(model.confidence(repaired))
        per_restart[i] = c
        if feasibility_residual(metric, repaired, x0, radius, box) <= _FEASIBILITY_TOL:
            candidates.append(repaired)
            confidences.append(c)
    winner = int(np.argmax(confidences))
    best_point = np.asarray(candidates[winner], dtype=float)
    return AttackResult(
        best_point=best_point,
        best_confidence=confidences[winner],
        per_restart_best=per_restart,
        feasibility_residual=feasibility_residual(metric, best_point, x0, radius, box),
    )
