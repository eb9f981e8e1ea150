import numpy as np
import pytest

from ccu.classifier import ReluClassifier, log_softmax, softmax

from conftest import block_rel_err, central_diff


def test_zero_network_uniform_softmax():
    clf = ReluClassifier([np.zeros((3, 2)), np.zeros((4, 3))], [np.zeros(3), np.zeros(4)])
    logits = clf.forward(np.array([0.7, -1.2]))
    assert np.allclose(logits, 0.0)
    assert np.allclose(softmax(logits), 0.25)


def test_single_identity_layer():
    clf = ReluClassifier([np.eye(3)], [np.zeros(3)])
    x = np.array([0.5, -2.0, 3.0])
    assert np.allclose(clf.forward(x), x)


def test_forward_matches_straight_line_oracle(rng):
    w1, b1 = rng.standard_normal((5, 3)), rng.standard_normal(5)
    w2, b2 = rng.standard_normal((2, 5)), rng.standard_normal(2)
    clf = ReluClassifier([w1, w2], [b1, b2])
    x = rng.standard_normal(3)
    expected = w2 @ np.maximum(w1 @ x + b1, 0.0) + b2
    assert np.abs(clf.forward(x) - expected).max() <= 1e-12


def test_softmax_examples():
    assert np.allclose(softmax(np.array([0.0, 0.0])), [0.5, 0.5])
    big = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(big))
    assert big[0] == pytest.approx(1.0, abs=1e-12)
    probs = softmax(np.array([1.0, 2.0, 3.0]))
    assert np.allclose(probs, [0.09003057317038046, 0.24472847105479767, 0.6652409557748219])
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_softmax_shift_invariant(rng):
    z = rng.standard_normal(6)
    assert np.allclose(softmax(z), softmax(z + 123.4), atol=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(ValueError):
        softmax(np.array([np.inf, 0.0]))


def test_log_softmax_consistent(rng):
    z = rng.standard_normal((4, 3)) * 10
    assert np.allclose(np.exp(log_softmax(z)), softmax(z), atol=1e-12)


def test_linear_layer_gradient_is_outer_product(rng):
    w, b = rng.standard_normal((3, 4)), rng.standard_normal(3)
    clf = ReluClassifier([w], [b])
    x, up = rng.standard_normal(4), rng.standard_normal(3)
    grads = clf.backward(x, up)
    assert np.allclose(grads.weights[0], np.outer(up, x), atol=1e-12)
    assert np.allclose(grads.biases[0], up, atol=1e-12)
    assert np.allclose(grads.point, w.T @ up, atol=1e-12)


def test_zero_upstream_zero_gradients(rng):
    clf = ReluClassifier.init([3, 6, 2], seed=0)
    grads = clf.backward(rng.standard_normal(3), np.zeros(2))
    assert all(np.all(g == 0.0) for g in grads.weights)
    assert all(np.all(g == 0.0) for g in grads.biases)
    assert np.all(grads.point == 0.0)


def test_gradient_check_50_random_nets(rng):
    for trial in range(50):
        widths = [int(rng.integers(2, 5)) for _ in range(3)]
        clf = ReluClassifier.init(widths, seed=trial)
        x = rng.standard_normal(widths[0])
        up = rng.standard_normal(widths[-1])
        grads = clf.backward(x, up)

        for layer in range(len(clf.weights)):
            def f_w(w, clf=clf, layer=layer, x=x, up=up):
                ws = [w if i == layer else wi for i, wi in enumerate(clf.weights)]
                return float(up @ ReluClassifier(ws, clf.biases).forward(x))

            def f_b(b, clf=clf, layer=layer, x=x, up=up):
                bs = [b if i == layer else bi for i, bi in enumerate(clf.biases)]
                return float(up @ ReluClassifier(clf.weights, bs).forward(x))

            assert block_rel_err(grads.weights[layer],
                                 central_diff(f_w, clf.weights[layer].copy())) < 1e-5
            assert block_rel_err(grads.biases[layer],
                                 central_diff(f_b, clf.biases[layer].copy())) < 1e-5

        def f_x(p, clf=clf, up=up):
            return float(up @ clf.forward(p))

        assert block_rel_err(grads.point, central_diff(f_x, x.copy())) < 1e-5


def test_batched_backward_sums_param_grads(rng):
    clf = ReluClassifier.init([3, 5, 2], seed=7)
    xs = rng.standard_normal((4, 3))
    ups = rng.standard_normal((4, 2))
    dws, dbs, dx = clf.backward_batch(xs, ups)
    acc_w = [np.zeros_like(w) for w in clf.weights]
    acc_b = [np.zeros_like(b) for b in clf.biases]
    for i in range(4):
        g = clf.backward(xs[i], ups[i])
        for j in range(len(acc_w)):
            acc_w[j] += g.weights[j]
            acc_b[j] += g.biases[j]
        assert np.allclose(dx[i], g.point, atol=1e-12)
    for j in range(len(acc_w)):
        assert np.allclose(dws[j], acc_w[j], atol=1e-12)
        assert np.allclose(dbs[j], acc_b[j], atol=1e-12)


def test_argmax_preserved_by_softmax(rng):
    clf = ReluClassifier.init([2, 8, 4], seed=1)
    x = rng.standard_normal((100, 2)) * 3
    logits = clf.forward(x)
    assert np.array_equal(np.argmax(logits, axis=1), np.argmax(softmax(logits), axis=1))


def test_forward_validation():
    clf = ReluClassifier.init([3, 4, 2], seed=0)
    with pytest.raises(ValueError):
        clf.forward(np.zeros(2))
    with pytest.raises(ValueError):
        clf.forward(np.array([np.nan, 0.0, 1.0]))
    with pytest.raises(ValueError):
        ReluClassifier([np.zeros((3, 2)), np.zeros((4, 5))], [np.zeros(3), np.zeros(4)])
