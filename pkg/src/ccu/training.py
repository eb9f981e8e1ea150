"""Joint gradient ascent on the classifier and mixture parameters.

The objective is the averaged joint log likelihood (label terms plus
marginal density terms for both data streams).  Classifier parameters and
mixture parameters move with separate learning rates; mixture scales are
optimized as log scales so positivity is unconstrained, and after every
step the scale floor and the out-scale constraint are re-applied.  The
metric is fixed before training and never differentiated through.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .classifier import log_softmax, softmax
from .density import SCALE_FLOOR, project_scale_constraint
from .model import CcuModel, stable_sigmoid

__all__ = ["TrainConfig", "EpochStats", "GradientBundle", "TrainingDiverged",
           "loss_and_grads", "train"]


class TrainingDiverged(RuntimeError):
    """Raised when the objective or a parameter goes non-finite.

    The model is left at the last finite parameter state.
    """


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128  # in-batch size; the out-batch always matches it
    lr_classifier: float = 0.1
    lr_gmm: float | None = None  # default keeps the 1e-5 : 0.1 ratio
    weight_decay_classifier: float = 5e-4  # never applied to mixture params
    momentum: float = 0.0
    lr_decay_fractions: tuple[float, ...] = (0.5, 0.75, 0.9)
    lr_decay_factor: float = 0.1
    seed: int = 0
    freeze_out_centroids: bool = False

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_classifier < 0:
            raise ValueError("learning rates must be >= 0")
        if self.lr_gmm is None:
            self.lr_gmm = 1e-5 * (self.lr_classifier / 0.1)
        if self.lr_gmm < 0:
            raise ValueError("learning rates must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    objective: float
    train_accuracy: float
    mean_out_confidence: float


@dataclass
class GradientBundle:
    """Ascent gradients for every trainable parameter."""

    clf_weights: list[np.ndarray]
    clf_biases: list[np.ndarray]
    in_centroids: np.ndarray
    in_log_scales: np.ndarray
    out_centroids: np.ndarray
    out_log_scales: np.ndarray


def loss_and_grads(
    model: CcuModel,
    in_points: np.ndarray,
    in_labels: np.ndarray,
    out_points: np.ndarray,
    freeze_out_centroids: bool = False,
) -> tuple[float, GradientBundle]:
    """Objective value and its exact gradient bundle for one batch pair.

    The objective equals :meth:`CcuModel.joint_log_likelihood`.  Writing the
    per-point contribution as log((s_y * p_in + (odds/M) * p_out) / (1+odds))
    makes the chain rule a single posterior weight per (point, label):
    w = sigmoid(log s_y + r + log M) multiplies the classifier and in-density
    gradients, (1 - w) the out-density gradient.
    """
    in_points = np.atleast_2d(np.asarray(in_points, dtype=float))
    out_points = np.atleast_2d(np.asarray(out_points, dtype=float))
    in_labels = np.asarray(in_labels)
    n_in, n_out = in_points.shape[0], out_points.shape[0]
    if n_in == 0 or n_out == 0:
        raise ValueError("loss_and_grads requires non-empty batches")
    m = model.n_classes
    if in_labels.min() < 1 or in_labels.max() > m:
        raise ValueError("labels must lie in {1..n_classes}")
    lam = model.prior_odds
    log_lam, log_m = np.log(lam), np.log(m)

    points = np.concatenate([in_points, out_points], axis=0)
    logits = model.classifier.forward(points)
    log_s = log_softmax(logits)
    s = softmax(logits)
    log_in = np.asarray(model.in_mixture.log_density(points), dtype=float)
    log_out = np.asarray(model.out_mixture.log_density(points), dtype=float)
    r = log_in - log_out - log_lam

    rows_in = np.arange(n_in)
    u_in = log_s[rows_in, in_labels - 1] + r[:n_in]
    w_in = stable_sigmoid(u_in + log_m)  # (n_in,)
    u_out = log_s[n_in:] + r[n_in:, None]
    w_out = stable_sigmoid(u_out + log_m)  # (n_out, m)

    # Objective, evaluated in log space from the same intermediates.
    joint_in = np.logaddexp(u_in, -log_m) + log_lam + log_out[:n_in] - np.log1p(lam)
    joint_out = np.logaddexp(u_out, -log_m) + (log_lam + log_out[n_in:] - np.log1p(lam))[:, None]
    objective = float(joint_in.mean() + lam * joint_out.mean(axis=1).mean())

    # Classifier upstream: per-point weight times (one_hot(label) - softmax).
    upstream = np.zeros_like(s)
    upstream[rows_in, in_labels - 1] = w_in
    upstream[:n_in] -= w_in[:, None] * s[:n_in]
    upstream[:n_in] /= n_in
    coef_out = lam / (n_out * m)
    upstream[n_in:] = coef_out * (w_out - w_out.sum(axis=1)[:, None] * s[n_in:])
    dws, dbs, _ = model.classifier.backward_batch(points, upstream)

    # Density coefficients per point.
    c_in = np.concatenate([w_in / n_in, coef_out * w_out.sum(axis=1)])
    c_out = np.concatenate([(1.0 - w_in) / n_in, coef_out * (m - w_out.sum(axis=1))])
    d_in_cent, d_in_ls = model.in_mixture.weighted_param_grad(points, c_in)
    d_out_cent, d_out_ls = model.out_mixture.weighted_param_grad(points, c_out)
    if freeze_out_centroids:
        d_out_cent = np.zeros_like(d_out_cent)

    return objective, GradientBundle(dws, dbs, d_in_cent, d_in_ls, d_out_cent, d_out_ls)


@dataclass
class _Momentum:
    clf_w: list[np.ndarray]
    clf_b: list[np.ndarray]
    in_c: np.ndarray
    in_ls: np.ndarray
    out_c: np.ndarray
    out_ls: np.ndarray

    @classmethod
    def zeros_like(cls, model: CcuModel) -> "_Momentum":
        return cls(
            [np.zeros_like(w) for w in model.classifier.weights],
            [np.zeros_like(b) for b in model.classifier.biases],
            np.zeros_like(model.in_mixture.centroids),
            np.zeros_like(model.in_mixture.scales),
            np.zeros_like(model.out_mixture.centroids),
            np.zeros_like(model.out_mixture.scales),
        )


def _snapshot(model: CcuModel):
    return (
        [w.copy() for w in model.classifier.weights],
        [b.copy() for b in model.classifier.biases],
        model.in_mixture.centroids.copy(),
        model.in_mixture.scales.copy(),
        model.out_mixture.centroids.copy(),
        model.out_mixture.scales.copy(),
    )


def _restore(model: CcuModel, snap) -> None:
    ws, bs, ic, isc, oc, osc = snap
    model.classifier.weights = [w.copy() for w in ws]
    model.classifier.biases = [b.copy() for b in bs]
    model.in_mixture.centroids = ic.copy()
    model.in_mixture.scales = isc.copy()
    model.out_mixture.centroids = oc.copy()
    model.out_mixture.scales = osc.copy()


def _all_finite(model: CcuModel) -> bool:
    arrays = (
        model.classifier.weights
        + model.classifier.biases
        + [
            model.in_mixture.centroids,
            model.in_mixture.scales,
            model.out_mixture.centroids,
            model.out_mixture.scales,
        ]
    )
    return all(np.all(np.isfinite(a)) for a in arrays)


def _apply_step(model: CcuModel, grads: GradientBundle, vel: _Momentum,
                cfg: TrainConfig, lr_clf: float, lr_gmm: float) -> None:
    mu, wd = cfg.momentum, cfg.weight_decay_classifier
    clf = model.classifier
    for i in range(len(clf.weights)):
        g = grads.clf_weights[i] - wd * clf.weights[i]
        vel.clf_w[i] = mu * vel.clf_w[i] + g
        clf.weights[i] = clf.weights[i] + lr_clf * vel.clf_w[i]
        vel.clf_b[i] = mu * vel.clf_b[i] + grads.clf_biases[i]
        clf.biases[i] = clf.biases[i] + lr_clf * vel.clf_b[i]

    vel.in_c = mu * vel.in_c + grads.in_centroids
    model.in_mixture.centroids = model.in_mixture.centroids + lr_gmm * vel.in_c
    vel.out_c = mu * vel.out_c + grads.out_centroids
    model.out_mixture.centroids = model.out_mixture.centroids + lr_gmm * vel.out_c
    vel.in_ls = mu * vel.in_ls + grads.in_log_scales
    model.in_mixture.scales = model.in_mixture.scales * np.exp(lr_gmm * vel.in_ls)
    vel.out_ls = mu * vel.out_ls + grads.out_log_scales
    model.out_mixture.scales = model.out_mixture.scales * np.exp(lr_gmm * vel.out_ls)

    # Floors and the out-scale constraint run after every step.
    model.in_mixture.scales = np.maximum(model.in_mixture.scales, SCALE_FLOOR)
    model.out_mixture.scales = np.maximum(model.out_mixture.scales, SCALE_FLOOR)
    project_scale_constraint(model.in_mixture, model.out_mixture)


def train(
    model: CcuModel,
    in_points: np.ndarray,
    in_labels: np.ndarray,
    out_points: np.ndarray,
    cfg: TrainConfig,
    out_monitor: np.ndarray | None = None,
    step_hook: Callable[[CcuModel, int], None] | None = None,
    checkpoint_writer: Callable[[CcuModel, int], None] | None = None,
) -> tuple[CcuModel, list[EpochStats]]:
    """SGD ascent over epochs; mutates and returns the model plus a log.

    In-data is shuffled without replacement each epoch; out-data is cycled
    through an independent shuffled stream, one out-point per in-point.
    ``out_monitor`` (defaults to the full out-data) feeds the per-epoch mean
    out-confidence column.  ``step_hook`` runs after every optimizer step,
    ``checkpoint_writer`` after every epoch.

    Raises :class:`TrainingDiverged` when a batch objective or any parameter
    stops being finite; the offending step is rolled back first.
    """
    in_points = np.atleast_2d(np.asarray(in_points, dtype=float))
    out_points = np.atleast_2d(np.asarray(out_points, dtype=float))
    in_labels = np.asarray(in_labels)
    if in_points.shape[0] == 0 or out_points.shape[0] == 0:
        raise ValueError("train requires non-empty in- and out-data")
    if out_monitor is None:
        out_monitor = out_points

    rng = np.random.default_rng(cfg.seed)
    vel = _Momentum.zeros_like(model)
    lr_clf, lr_gmm = cfg.lr_classifier, float(cfg.lr_gmm)
    decay_at = {int(f * cfg.epochs) for f in cfg.lr_decay_fractions}
    n_in, n_out = in_points.shape[0], out_points.shape[0]

    out_order = rng.permutation(n_out)
    out_pos = 0
    stats: list[EpochStats] = []
    step_index = 0
    for epoch in range(cfg.epochs):
        if epoch in decay_at and epoch > 0:
            lr_clf *= cfg.lr_decay_factor
            lr_gmm *= cfg.lr_decay_factor
        order = rng.permutation(n_in)
        for start in range(0, n_in, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            take = idx.shape[0]
            out_idx = np.empty(take, dtype=int)
            filled = 0
            while filled < take:
                if out_pos == n_out:
                    out_order = rng.permutation(n_out)
                    out_pos = 0
                chunk = min(take - filled, n_out - out_pos)
                out_idx[filled : filled + chunk] = out_order[out_pos : out_pos + chunk]
                out_pos += chunk
                filled += chunk

            snap = _snapshot(model)
            objective, grads = loss_and_grads(
                model, in_points[idx], in_labels[idx], out_points[out_idx],
                freeze_out_centroids=cfg.freeze_out_centroids,
            )
            # A non-finite step is rolled back below; don't warn on the way.
            with np.errstate(over="ignore", invalid="ignore"):
                _apply_step(model, grads, vel, cfg, lr_clf, lr_gmm)
            if not np.isfinite(objective) or not _all_finite(model):
                _restore(model, snap)
                raise TrainingDiverged(
                    f"non-finite objective or parameter at epoch {epoch}, "
                    f"step {step_index}; last finite state restored"
                )
            if step_hook is not None:
                step_hook(model, step_index)
            step_index += 1

        full_objective = model.joint_log_likelihood(in_points, in_labels, out_points)
        pred = np.argmax(model.classifier.forward(in_points), axis=1) + 1
        acc = float(np.mean(pred == in_labels))
        mean_out_conf = float(np.mean(model.confidence(out_monitor)))
        stats.append(EpochStats(epoch, full_objective, acc, mean_out_conf))
        if checkpoint_writer is not None:
            checkpoint_writer(model, epoch)
    return model, stats
