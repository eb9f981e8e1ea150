import numpy as np
import pytest

from ccu.classifier import ReluClassifier, softmax
from ccu.density import GaussianMixture
from ccu.metric import MetricTransform
from ccu.model import CcuModel, blend_with_uniform

from conftest import block_rel_err, central_diff, make_random_model


def single_gaussian_model(sigma=1.0, theta=2.0, prior_odds=1.0, logits=None):
    """d=1, identity metric, one component per side, centered at zero."""
    metric = MetricTransform.identity(1)
    in_gmm = GaussianMixture(np.zeros((1, 1)), np.array([sigma]), metric)
    out_gmm = GaussianMixture(np.zeros((1, 1)), np.array([theta]), metric)
    if logits is None:
        clf = ReluClassifier([np.zeros((2, 1))], [np.zeros(2)])
    else:
        clf = ReluClassifier([np.zeros((2, 1))], [np.asarray(logits, dtype=float)])
    return CcuModel(clf, in_gmm, out_gmm, prior_odds, 2)


def model_with_fixed_ratio(log_ratio_value, logits, m=2):
    """Identical mixtures give ratio zero; shift it through the prior odds."""
    metric = MetricTransform.identity(1)
    gmm_a = GaussianMixture(np.zeros((1, 1)), np.ones(1), metric)
    gmm_b = GaussianMixture(np.zeros((1, 1)), np.ones(1), metric)
    clf = ReluClassifier([np.zeros((m, 1))], [np.asarray(logits, dtype=float)])
    return CcuModel(clf, gmm_a, gmm_b, float(np.exp(-log_ratio_value)), m)


def test_log_ratio_identical_mixtures():
    m = model_with_fixed_ratio(0.0, [0.0, 0.0])
    assert m.log_ratio(np.array([0.3])) == pytest.approx(0.0, abs=1e-12)
    m2 = model_with_fixed_ratio(-np.log(2.0), [0.0, 0.0])  # prior odds 2
    assert m2.log_ratio(np.array([0.3])) == pytest.approx(-np.log(2.0), rel=1e-12)


def test_log_ratio_single_gaussians_weight_ratio():
    m = single_gaussian_model(sigma=1.0, theta=2.0)
    # At the shared centroid both exponents vanish; the ratio is the weight
    # ratio theta/sigma = 2 in one dimension.
    assert m.log_ratio(np.zeros(1)) == pytest.approx(np.log(2.0), rel=1e-12)


def test_predictive_limits():
    logits = [2.0, -1.0]
    strong_in = model_with_fixed_ratio(200.0, logits)
    p = strong_in.predictive(np.zeros(1))
    assert np.allclose(p, softmax(np.array(logits)), atol=1e-12)
    strong_out = model_with_fixed_ratio(-200.0, logits)
    p = strong_out.predictive(np.zeros(1))
    assert np.allclose(p, 0.5, atol=1e-12)


def test_predictive_hand_example():
    # s = (0.9, 0.1), ratio 0 -> ((0.9 + 0.5) / 2, (0.1 + 0.5) / 2)
    logits = [0.0, np.log(1.0 / 9.0)]
    m = model_with_fixed_ratio(0.0, logits)
    p = m.predictive(np.zeros(1))
    assert np.allclose(p, [0.7, 0.3], atol=1e-12)
    assert m.confidence(np.zeros(1)) == pytest.approx(0.7, abs=1e-12)


def test_predictive_between_softmax_and_uniform(rng):
    for _ in range(20):
        model = make_random_model(rng, d=2, m=3)
        x = rng.standard_normal(2) * 4
        s = softmax(model.classifier.forward(x))
        p = model.predictive(x)
        lo = np.minimum(s, 1.0 / 3.0) - 1e-12
        hi = np.maximum(s, 1.0 / 3.0) + 1e-12
        assert np.all(p >= lo) and np.all(p <= hi)
        assert p.sum() == pytest.approx(1.0, abs=1e-10)


def test_confidence_uniform_softmax_is_floor():
    m = model_with_fixed_ratio(5.0, [0.0, 0.0])
    assert m.confidence(np.zeros(1)) == pytest.approx(0.5, abs=1e-12)


def test_confidence_bounds(rng):
    model = make_random_model(rng, d=2, m=4)
    x = rng.standard_normal((200, 2)) * 10
    conf = model.confidence(x)
    assert np.all(conf >= 0.25 - 1e-12)
    assert np.all(conf < 1.0)


def test_ranking_invariance(rng):
    # Sampled over the data region, where the calibration weight is
    # representable; far away the predictive saturates at exactly uniform.
    model = make_random_model(rng, d=2, m=3)
    x = model.metric.unwhiten(rng.standard_normal((500, 2)))
    p = model.predictive(x)
    s = softmax(model.classifier.forward(x))
    assert np.array_equal(np.argmax(p, axis=1), np.argmax(s, axis=1))


def test_confidence_monotone_in_ratio(rng):
    # Rescaling the prior odds shifts the ratio; with a non-uniform softmax
    # the confidence must strictly increase as the ratio grows.
    logits = [1.0, 0.0]
    values = [model_with_fixed_ratio(r, logits).confidence(np.zeros(1))
              for r in np.linspace(-6, 6, 25)]
    assert np.all(np.diff(values) > 0)


def test_blend_guarded_both_signs():
    assert blend_with_uniform(1.0, 800.0, 2) == pytest.approx(1.0)
    assert blend_with_uniform(1.0, -800.0, 2) == pytest.approx(0.5)
    assert np.isfinite(blend_with_uniform(0.3, np.array([700.0, -700.0]), 4)).all()


def test_joint_log_likelihood_uniform_out_term():
    m = model_with_fixed_ratio(0.0, [0.0, 0.0])
    # Uniform predictive: the averaged label term is -log M per out point;
    # identical mixtures make the marginal collapse to the in-density.
    z = np.array([[0.5]])
    ll = m.joint_log_likelihood(np.array([[0.1]]), np.array([1]), z)
    li = m.in_mixture.log_density(np.array([0.1]))
    lz = m.in_mixture.log_density(np.array([0.5]))
    expected = (np.log(0.5) + li) + 1.0 * (-np.log(2.0) + lz)
    assert ll == pytest.approx(expected, abs=1e-12)


def test_joint_log_likelihood_matches_naive(rng):
    for _ in range(5):
        model = make_random_model(rng, d=2, m=3, prior_odds=float(rng.uniform(0.5, 2.0)))
        xi = rng.standard_normal((3, 2))
        yi = rng.integers(1, 4, 3)
        zo = rng.standard_normal((3, 2))
        ours = model.joint_log_likelihood(xi, yi, zo)

        lam, m = model.prior_odds, 3

        def naive_parts(x):
            s = softmax(model.classifier.forward(x))
            pi = np.exp(model.in_mixture.log_density(x))
            po = np.exp(model.out_mixture.log_density(x))
            pred = (s * pi + (lam / m) * po) / (pi + lam * po)
            marginal = (pi + lam * po) / (1 + lam)
            return pred, marginal

        total = 0.0
        for j in range(3):
            pred, marg = naive_parts(xi[j])
            total += (np.log(pred[yi[j] - 1]) + np.log(marg)) / 3
        for j in range(3):
            pred, marg = naive_parts(zo[j])
            total += lam * (np.log(pred).mean() + np.log(marg)) / 3
        assert ours == pytest.approx(total, abs=1e-9)


def test_joint_log_likelihood_validation(rng):
    model = make_random_model(rng)
    with pytest.raises(ValueError):
        model.joint_log_likelihood(np.zeros((0, 2)), np.zeros(0, int), np.zeros((1, 2)))
    with pytest.raises(ValueError):
        model.joint_log_likelihood(np.zeros((1, 2)), np.array([3]), np.zeros((1, 2)))


def test_confidence_and_grad_matches_fd(rng):
    for _ in range(5):
        model = make_random_model(rng, d=2, m=3)
        x = model.metric.unwhiten(rng.standard_normal(2))
        conf, grad = model.confidence_and_grad(x[None, :])
        assert conf[0] == pytest.approx(float(model.confidence(x)), abs=1e-12)
        fd = central_diff(lambda p: float(model.confidence(p)), x.copy(), h=1e-6)
        assert block_rel_err(grad[0], fd) < 1e-5


def test_model_validation(rng):
    model = make_random_model(rng)
    with pytest.raises(ValueError):
        CcuModel(model.classifier, model.in_mixture, model.out_mixture, -1.0, 2)
    other = make_random_model(rng)
    with pytest.raises(ValueError):
        CcuModel(model.classifier, model.in_mixture, other.out_mixture, 1.0, 2)
