"""Predictive distribution: softmax calibrated by the in/out density ratio.

With ``r = log p(x|in) - log p(x|out) - log(prior_odds)`` the class
probabilities are the convex combination

    p(y|x) = sigmoid(r) * softmax(f(x))_y + (1 - sigmoid(r)) / M

so the single guarded exponentiation site is the sigmoid, which is branched
on the sign of ``r``.  Far from the training data ``r -> -inf`` and the
prediction collapses to the uniform distribution; close to it the softmax
dominates.  The argmax is the softmax argmax either way: calibration never
changes the ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import ReluClassifier, log_softmax, softmax
from .density import GaussianMixture

__all__ = ["CcuModel", "stable_sigmoid", "blend_with_uniform"]


def stable_sigmoid(r: np.ndarray) -> np.ndarray:
    """Logistic sigmoid, overflow-safe for either sign."""
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    pos = r >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-r[pos]))
    e = np.exp(r[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def blend_with_uniform(s: np.ndarray, log_xi: np.ndarray, m: int) -> np.ndarray:
    """(s * xi + 1/M) / (xi + 1) evaluated through sigmoid(log xi).

    Shared by the predictive distribution and the ball certificates so the
    soundness comparison runs through one code path.
    """
    w = stable_sigmoid(np.asarray(log_xi, dtype=float))
    return w * s + (1.0 - w) / m


@dataclass
class CcuModel:
    """Classifier plus in/out mixtures sharing one metric.

    ``prior_odds`` is the ratio of the out prior to the in prior; the class
    count is ``n_classes``.  Immutable during inference.
    """

    classifier: ReluClassifier
    in_mixture: GaussianMixture
    out_mixture: GaussianMixture
    prior_odds: float
    n_classes: int

    def __post_init__(self) -> None:
        if self.prior_odds <= 0:
            raise ValueError("prior_odds must be positive")
        if self.in_mixture.metric is not self.out_mixture.metric:
            raise ValueError("both mixtures must reference the same metric")
        if self.classifier.n_classes != self.n_classes:
            raise ValueError("classifier output size must equal n_classes")
        if self.classifier.in_dim != self.metric.dim:
            raise ValueError("classifier input size must equal metric dimension")

    @property
    def metric(self):
        return self.in_mixture.metric

    @property
    def dim(self) -> int:
        return self.metric.dim

    def log_ratio(self, x: np.ndarray) -> np.ndarray | float:
        """log p(x|in) - log p(x|out) - log prior_odds; finite for finite x."""
        out = (
            self.in_mixture.log_density(x)
            - self.out_mixture.log_density(x)
            - np.log(self.prior_odds)
        )
        return out

    def predictive(self, x: np.ndarray) -> np.ndarray:
        """Calibrated class probabilities; rows sum to one."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xb = np.atleast_2d(x)
        s = softmax(self.classifier.forward(xb))
        r = np.asarray(self.log_ratio(xb), dtype=float)
        p = blend_with_uniform(s, r[:, None], self.n_classes)
        return p[0] if single else p

    def confidence(self, x: np.ndarray) -> np.ndarray | float:
        """max_y p(y|x); lives in [1/M, 1)."""
        p = self.predictive(x)
        out = p.max(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def softmax_confidence(self, x: np.ndarray) -> np.ndarray | float:
        """Uncalibrated max softmax probability (ablation baseline)."""
        s = softmax(self.classifier.forward(x))
        out = s.max(axis=-1)
        return float(out) if np.ndim(out) == 0 else out

    def confidence_and_grad(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batched confidence and its gradient w.r.t. the input.

        At argmax ties the gradient of the lowest-index maximizer is used.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        s = softmax(self.classifier.forward(x))
        top = np.argmax(s, axis=1)
        s_top = s[np.arange(n), top]

        log_in, g_in = self.in_mixture.log_density_and_point_grad(x)
        log_out, g_out = self.out_mixture.log_density_and_point_grad(x)
        r = log_in - log_out - np.log(self.prior_odds)
        w = stable_sigmoid(r)
        conf = w * s_top + (1.0 - w) / self.n_classes

        upstream = -s_top[:, None] * s
        upstream[np.arange(n), top] += s_top
        ds_dx = self.classifier.input_grad(x, upstream)
        dr_dx = g_in - g_out
        grad = w[:, None] * ds_dx + (w * (1.0 - w) * (s_top - 1.0 / self.n_classes))[
            :, None
        ] * dr_dx
        return conf, grad

    def joint_log_likelihood(
        self,
        in_points: np.ndarray,
        in_labels: np.ndarray,
        out_points: np.ndarray,
    ) -> float:
        """Average joint log likelihood of labeled in-data and out-data.

        The out-distribution label term averages the class log probabilities
        uniformly; the marginal density is the prior-weighted mixture of the
        two fitted densities.  Labels are 1-based.
        """
        in_points = np.atleast_2d(np.asarray(in_points, dtype=float))
        out_points = np.atleast_2d(np.asarray(out_points, dtype=float))
        in_labels = np.asarray(in_labels)
        if in_points.shape[0] == 0 or out_points.shape[0] == 0:
            raise ValueError("joint_log_likelihood requires non-empty batches")
        if in_labels.shape[0] != in_points.shape[0]:
            raise ValueError("one label per in-point required")
        if in_labels.min() < 1 or in_labels.max() > self.n_classes:
            raise ValueError("labels must lie in {1..n_classes}")

        lam, m = self.prior_odds, self.n_classes
        log_lam = np.log(lam)

        def parts(points: np.ndarray):
            log_s = log_softmax(self.classifier.forward(points))
            li = np.asarray(self.in_mixture.log_density(points), dtype=float)
            lo = np.asarray(self.out_mixture.log_density(points), dtype=float)
            # log(s_y p_i + (lam/M) p_o) per class, then the marginal term.
            joint = np.logaddexp(
                log_s + li[:, None], (log_lam - np.log(m)) + lo[:, None]
            )
            return joint, li, lo

        joint_in, li_in, lo_in = parts(in_points)
        n_in = in_points.shape[0]
        rows = np.arange(n_in)
        label_term = joint_in[rows, in_labels - 1] - np.logaddexp(li_in, log_lam + lo_in)
        marg_in = np.logaddexp(li_in, log_lam + lo_in) - np.log1p(lam)

        joint_out, li_out, lo_out = parts(out_points)
        denom_out = np.logaddexp(li_out, log_lam + lo_out)
        label_term_out = joint_out.mean(axis=1) - denom_out
        marg_out = denom_out - np.log1p(lam)

        return float(
            label_term.mean()
            + marg_in.mean()
            + lam * (label_term_out.mean() + marg_out.mean())
        )
