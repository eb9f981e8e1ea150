import numpy as np
import pytest

from ccu.classifier import ReluClassifier
from ccu.density import GaussianMixture
from ccu.metric import MetricTransform, fit_covariance
from ccu.model import CcuModel


def make_random_metric(rng: np.random.Generator, d: int) -> MetricTransform:
    mix = rng.normal(size=(d, d))
    data = rng.normal(size=(12 * d, d)) @ mix.T
    return fit_covariance(data)


def make_random_model(
    rng: np.random.Generator,
    d: int = 2,
    m: int = 2,
    k_in: int = 3,
    k_out: int = 3,
    widths: tuple[int, ...] = (8,),
    prior_odds: float = 1.0,
    identity_metric: bool = False,
) -> CcuModel:
    """Random model whose scales already satisfy the out >= 2 * in constraint."""
    metric = MetricTransform.identity(d) if identity_metric else make_random_metric(rng, d)
    in_c = metric.unwhiten(rng.normal(size=(k_in, d)))
    out_c = metric.unwhiten(rng.normal(size=(k_out, d)) * 2.0)
    in_s = rng.uniform(0.3, 1.0, k_in)
    out_s = in_s.max() * rng.uniform(2.1, 4.0, k_out)
    in_gmm = GaussianMixture(in_c, in_s, metric)
    out_gmm = GaussianMixture(out_c, out_s, metric)
    clf = ReluClassifier.init([d, *widths, m], seed=int(rng.integers(2**31)))
    return CcuModel(clf, in_gmm, out_gmm, prior_odds, m)


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function, one entry at a time."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        step = h * max(1.0, abs(xf[i]))
        orig = xf[i]
        xf[i] = orig + step
        hi = f(x)
        xf[i] = orig - step
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def block_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
