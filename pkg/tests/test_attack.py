import numpy as np
import pytest

from ccu.attack import (
    AttackConfig,
    alternating_projection,
    feasibility_residual,
    pgd_max_confidence,
)
from ccu.certify import ball_bound
from ccu.classifier import ReluClassifier
from ccu.density import GaussianMixture
from ccu.metric import MetricTransform
from ccu.model import CcuModel

from conftest import make_random_model


def flat_model(d=2, m=2):
    """Zero classifier and identical mixtures: constant confidence 1/M."""
    metric = MetricTransform.identity(d)
    a = GaussianMixture(np.zeros((1, d)), np.ones(1), metric)
    b = GaussianMixture(np.zeros((1, d)), np.ones(1), metric)
    clf = ReluClassifier([np.zeros((m, d))], [np.zeros(m)])
    return CcuModel(clf, a, b, 1.0, m)


def test_flat_objective_returns_uniform_confidence():
    model = flat_model()
    res = pgd_max_confidence(model, np.zeros(2), 1.0,
                             config=AttackConfig(steps=20, restarts=3, seed=0))
    assert res.best_confidence == pytest.approx(0.5, abs=1e-12)
    assert res.feasibility_residual <= 1e-6


def test_one_dimensional_push_to_boundary():
    # In-component sits at x0 + 2R: confidence increases toward it, so the
    # attack should end on the near ball boundary.  A grid search over the
    # feasible interval is the oracle.
    metric = MetricTransform.identity(1)
    radius = 1.5
    x0 = np.array([0.0])
    in_gmm = GaussianMixture(np.array([[2 * radius]]), np.array([0.8]), metric)
    out_gmm = GaussianMixture(np.array([[-6.0]]), np.array([2.0]), metric)
    clf = ReluClassifier([np.array([[1.0], [-1.0]])], [np.zeros(2)])
    model = CcuModel(clf, in_gmm, out_gmm, 1.0, 2)

    res = pgd_max_confidence(model, x0, radius,
                             config=AttackConfig(steps=300, restarts=4, seed=1))
    grid = np.linspace(-radius, radius, 20001)[:, None]
    oracle = float(np.max(model.confidence(grid)))
    assert res.best_confidence == pytest.approx(oracle, abs=1e-9)
    assert abs(res.best_point[0] - radius) <= 1e-6


def test_attack_never_beats_certificate(rng):
    for _ in range(5):
        model = make_random_model(rng, d=2, m=2)
        x0 = model.metric.unwhiten(rng.standard_normal(2) * 6)
        cert = ball_bound(model, x0, 2.0)
        res = pgd_max_confidence(model, x0, 2.0,
                                 config=AttackConfig(steps=60, restarts=5, seed=3))
        assert res.best_confidence <= cert.bound + 1e-9


def test_result_feasible_and_at_least_seed(rng):
    for trial in range(5):
        model = make_random_model(rng, d=3, m=3)
        x0 = model.metric.unwhiten(rng.standard_normal(3))
        radius = float(rng.uniform(0.5, 3.0))
        res = pgd_max_confidence(model, x0, radius,
                                 config=AttackConfig(steps=40, restarts=3, seed=trial))
        assert res.feasibility_residual <= 1e-6
        assert float(model.metric.distance(res.best_point, x0)) <= radius + 1e-6
        assert res.best_confidence >= float(model.confidence(x0)) - 1e-12
        assert res.best_confidence == pytest.approx(
            float(model.confidence(res.best_point)), abs=1e-12
        )


def test_box_constraint_respected(rng):
    model = make_random_model(rng, d=2, m=2, identity_metric=True)
    x0 = np.array([0.95, 0.5])
    res = pgd_max_confidence(model, x0, 2.0, box=True,
                             config=AttackConfig(steps=50, restarts=4, seed=2))
    assert np.all(res.best_point >= -1e-12)
    assert np.all(res.best_point <= 1.0 + 1e-12)
    assert res.feasibility_residual <= 1e-6


def test_longer_runs_never_worse(rng):
    # The adaptive trajectory shares its prefix, so doubling the budget can
    # only improve each restart's recorded best (box off: repair is exact).
    model = make_random_model(rng, d=2, m=2)
    x0 = model.metric.unwhiten(rng.standard_normal(2) * 3)
    short = pgd_max_confidence(model, x0, 1.5,
                               config=AttackConfig(steps=25, restarts=4, seed=5))
    long = pgd_max_confidence(model, x0, 1.5,
                              config=AttackConfig(steps=50, restarts=4, seed=5))
    assert np.all(long.per_restart_best >= short.per_restart_best - 1e-12)


def test_determinism(rng):
    model = make_random_model(rng, d=2, m=2)
    x0 = model.metric.unwhiten(rng.standard_normal(2) * 4)
    cfg = AttackConfig(steps=30, restarts=5, seed=9)
    a = pgd_max_confidence(model, x0, 1.0, config=cfg)
    b = pgd_max_confidence(model, x0, 1.0, config=cfg)
    assert a.best_confidence == b.best_confidence
    assert np.array_equal(a.best_point, b.best_point)
    assert np.array_equal(a.per_restart_best, b.per_restart_best)


def test_attack_validation(rng):
    model = make_random_model(rng, identity_metric=True)
    with pytest.raises(ValueError):
        pgd_max_confidence(model, np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        pgd_max_confidence(model, np.array([1.5, 0.0]), 1.0, box=True)
    with pytest.raises(ValueError):
        AttackConfig(steps=0)
    with pytest.raises(ValueError):
        AttackConfig(grow=0.9)


def test_alternating_projection_fixed_point():
    metric = MetricTransform.identity(2)
    x0 = np.array([0.5, 0.5])
    inside = np.array([0.6, 0.5])
    out, residual = alternating_projection(metric, inside, x0, 0.5, True, 10)
    assert np.array_equal(out, inside)
    assert residual == 0.0


def test_alternating_projection_ball_inside_box():
    metric = MetricTransform.identity(2)
    x0 = np.array([0.5, 0.5])
    far = np.array([3.0, 0.5])
    out, residual = alternating_projection(metric, far, x0, 0.2, True, 1)
    assert residual == 0.0
    assert np.allclose(out, [0.7, 0.5], atol=1e-12)


def test_alternating_projection_converges(rng):
    metric = MetricTransform.identity(5)
    for trial in range(10):
        x0 = rng.random(5)
        radius = float(rng.uniform(0.1, 0.8))
        start = rng.standard_normal(5) * 3
        short, r_short = alternating_projection(metric, start, x0, radius, True, 10)
        _, r_long = alternating_projection(metric, start, x0, radius, True, 1000)
        assert r_short <= r_long + 1e-8
        assert r_short <= 1e-6


def test_feasibility_residual_components():
    metric = MetricTransform.identity(2)
    x0 = np.array([0.5, 0.5])
    assert feasibility_residual(metric, np.array([0.5, 0.9]), x0, 0.1, False) == pytest.approx(0.3)
    assert feasibility_residual(metric, np.array([1.2, 0.5]), x0, 1.0, True) == pytest.approx(0.2)
