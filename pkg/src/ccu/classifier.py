"""Small fully-connected ReLU network with exact reverse-mode gradients.

The network is piecewise affine (ReLU hidden layers, identity output), so
logits of finite inputs are always finite.  The ReLU subgradient at exactly
zero is taken to be zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ReluClassifier", "ClassifierGrads", "softmax", "log_softmax"]


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax; invariant to adding a constant to all logits."""
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise ValueError("softmax requires finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=float)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class ClassifierGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    point: np.ndarray


@dataclass
class ReluClassifier:
    """Layers as (out, in) weight matrices plus bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self) -> None:
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        if len(self.weights) != len(self.biases):
            raise ValueError("one bias vector per weight matrix required")
        for w, b in zip(self.weights, self.biases):
            if w.shape[0] != b.shape[0]:
                raise ValueError("bias length must match layer output size")
        for wa, wb in zip(self.weights, self.weights[1:]):
            if wb.shape[1] != wa.shape[0]:
                raise ValueError("consecutive layer shapes do not chain")

    @classmethod
    def init(cls, widths: list[int], seed: int = 0) -> "ReluClassifier":
        """He-style initialization: weights ~ N(0, 2/fan_in), zero biases."""
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for fan_in, fan_out in zip(widths, widths[1:]):
            ws.append(rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    def _activations(self, x: np.ndarray) -> list[np.ndarray]:
        h = [x]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h[-1] @ w.T + b
            h.append(pre if i == len(self.weights) - 1 else np.maximum(pre, 0.0))
        return h

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Logits for a single point (d,) or a batch (n, d)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"expected input dimension {self.in_dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError("forward requires finite input")
        single = x.ndim == 1
        out = self._activations(np.atleast_2d(x))[-1]
        return out[0] if single else out

    def backward(self, x: np.ndarray, upstream: np.ndarray) -> ClassifierGrads:
        """Exact gradient of ``upstream . logits`` for a single point."""
        x = np.asarray(x, dtype=float)
        upstream = np.asarray(upstream, dtype=float)
        if x.ndim != 1 or upstream.shape != (self.n_classes,):
            raise ValueError("backward takes one point and one upstream row")
        dws, dbs, dx = self.backward_batch(x[None, :], upstream[None, :])
        return ClassifierGrads(dws, dbs, dx[0])

    def backward_batch(
        self, x: np.ndarray, upstream: np.ndarray
    ) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
        """Parameter gradients summed over the batch, plus per-row input grads."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        upstream = np.atleast_2d(np.asarray(upstream, dtype=float))
        if upstream.shape != (x.shape[0], self.n_classes):
            raise ValueError("upstream shape must be (n, n_classes)")
        h = self._activations(x)
        delta = upstream
        dws: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        dbs: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        for i in range(len(self.weights) - 1, -1, -1):
            dws[i] = delta.T @ h[i]
            dbs[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
            if i > 0:
                delta = delta * (h[i] > 0.0)
        return dws, dbs, delta

    def input_grad(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Per-row gradient of ``upstream . logits`` w.r.t. the inputs only."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        h = self._activations(x)
        delta = np.atleast_2d(np.asarray(upstream, dtype=float))
        for i in range(len(self.weights) - 1, -1, -1):
            delta = delta @ self.weights[i]
            if i > 0:
                delta = delta * (h[i] > 0.0)
        return delta
