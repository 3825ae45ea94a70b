import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nsseg import IGNORE, NEG, POS
from nsseg.errors import NumericError, ParameterError
from nsseg.model import (
    TinyFCN,
    forward,
    frame_bce_loss,
    frame_score,
    masked_bce_loss,
    sgd_step,
    sigmoid,
    stack_score,
)


def central_difference_check(model, x, labels, h=1e-4):
    """Worst relative error between backprop and central differences over all parameters."""

    def loss_of(m):
        z, _ = m.forward_train(x)
        return masked_bce_loss(sigmoid(z), labels)[0]

    z, cache = model.forward_train(x)
    _, g = masked_bce_loss(sigmoid(z), labels)
    grads = model.backward(cache, g)
    worst = 0.0
    for p, gp in zip(model.parameters(), grads):
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = loss_of(model)
            p[idx] = orig - h
            down = loss_of(model)
            p[idx] = orig
            fd = (up - down) / (2 * h)
            an = gp[idx]
            if max(abs(fd), abs(an)) < 1e-4:
                assert abs(fd - an) < 1e-6
                continue
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an)))
    return worst


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    model = TinyFCN.init(4, channels=(1, 4, 1), dtype=np.float64)
    x = rng.random((1, 1, 8, 8))
    labels = rng.choice([NEG, POS, IGNORE], size=(1, 8, 8), p=[0.6, 0.3, 0.1]).astype(np.uint8)
    assert central_difference_check(model, x, labels) < 1e-3


def test_gradient_default_architecture():
    rng = np.random.default_rng(1)
    model = TinyFCN.init(5, channels=(1, 3, 4, 2, 1), dtype=np.float64)
    x = rng.random((2, 1, 8, 8))
    labels = (rng.random((2, 8, 8)) < 0.3).astype(np.uint8)
    assert central_difference_check(model, x, labels) < 1e-3


def test_zero_model_gives_half():
    probs = forward(TinyFCN.zeros(), np.random.default_rng(0).random((12, 9)).astype(np.float32))
    assert probs.shape == (12, 9)
    assert np.all(probs == 0.5)


@given(st.integers(0, 1000), st.integers(8, 20), st.integers(8, 20))
def test_forward_shape_and_range(seed, h, w):
    model = TinyFCN.init(seed)
    frame = np.random.default_rng(seed).random((h, w)).astype(np.float32)
    probs = forward(model, frame)
    assert probs.shape == (h, w)
    assert np.all((probs > 0) & (probs < 1))


def test_forward_does_not_mutate():
    model = TinyFCN.init(2)
    before = [p.copy() for p in model.parameters()]
    forward(model, np.ones((10, 10), np.float32))
    assert all(np.array_equal(a, b) for a, b in zip(before, model.parameters()))


def test_forward_non_finite():
    model = TinyFCN.init(2)
    model.weights[0][0, 0, 1, 1] = np.nan
    with pytest.raises(NumericError):
        forward(model, np.ones((10, 10), np.float32))


def test_architecture_contract():
    model = TinyFCN.init(0)
    assert model.channels == (1, 8, 16, 16, 1)
    assert model.kernel_sizes == ((3, 3),) * 4
    with pytest.raises(ParameterError):
        TinyFCN([np.zeros((2, 1, 3, 3))], [np.zeros(2)])


def test_bce_values():
    loss, _ = masked_bce_loss(np.array([0.5]), np.array([1], np.uint8))
    assert abs(loss - math.log(2)) < 1e-12
    loss, grad = masked_bce_loss(np.array([0.9, 0.1]), np.array([1, 0], np.uint8))
    assert abs(loss + math.log(0.9)) < 1e-12
    assert abs(-math.log(0.9) - 0.105361) < 1e-6
    np.testing.assert_allclose(grad, [(0.9 - 1) / 2, 0.1 / 2])


def test_bce_all_ignore():
    loss, grad = masked_bce_loss(np.full((4, 4), 0.3), np.full((4, 4), IGNORE, np.uint8))
    assert loss == 0.0
    assert np.all(grad == 0)


@given(st.integers(0, 10_000))
def test_ignore_pixels_are_inert(seed):
    rng = np.random.default_rng(seed)
    labels = rng.choice([NEG, POS, IGNORE], size=(6, 6)).astype(np.uint8)
    logits = rng.normal(0, 3, size=(6, 6))
    bumped = logits.copy()
    ign = labels == IGNORE
    bumped[ign] += rng.normal(0, 5, size=int(ign.sum()))
    l1, g1 = masked_bce_loss(sigmoid(logits), labels)
    l2, g2 = masked_bce_loss(sigmoid(bumped), labels)
    assert l1 == l2
    assert np.array_equal(g1, g2)
    assert np.all(g1[ign] == 0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.integers(0, 99))
def test_bce_non_negative(ps, seed):
    labels = np.random.default_rng(seed).choice([0, 1, 255], size=len(ps)).astype(np.uint8)
    loss, _ = masked_bce_loss(np.array(ps), labels)
    assert loss >= 0


def test_bce_epsilon_floor():
    loss, _ = masked_bce_loss(np.array([0.0]), np.array([1], np.uint8))
    assert np.isfinite(loss) and abs(loss + math.log(1e-7)) < 1e-9


def _one_param_model(w):
    return TinyFCN([np.full((1, 1, 1, 1), w)], [np.zeros(1)])


def test_sgd_zero_lr():
    model = TinyFCN.init(0)
    grads = [np.ones_like(p) for p in model.parameters()]
    new, _ = sgd_step(model, grads, 0.0, 0.9)
    assert all(np.array_equal(a, b) for a, b in zip(model.parameters(), new.parameters()))


def test_sgd_plain_step():
    model = _one_param_model(1.0)
    new, _ = sgd_step(model, [np.full((1, 1, 1, 1), 2.0), np.zeros(1)], 0.1, 0.0)
    assert abs(new.weights[0].item() - 0.8) < 1e-12
    assert model.weights[0].item() == 1.0


def test_sgd_momentum_recurrence():
    model = _one_param_model(0.0)
    g = [np.full((1, 1, 1, 1), 1.0), np.zeros(1)]
    m1, v = sgd_step(model, g, 0.1, 0.9)
    m2, _ = sgd_step(m1, g, 0.1, 0.9, v)
    first = m1.weights[0].item() - model.weights[0].item()
    second = m2.weights[0].item() - m1.weights[0].item()
    assert abs(second - 1.9 * first) < 1e-12


def test_sgd_rejects_bad_grads():
    model = TinyFCN.init(0)
    grads = [np.zeros_like(p) for p in model.parameters()]
    grads[0][0, 0, 0, 0] = np.inf
    with pytest.raises(NumericError):
        sgd_step(model, grads, 0.1, 0.9)


def test_frame_score():
    assert frame_score(np.full((5, 5), 0.42)) == pytest.approx(0.42)
    m = np.full((5, 5), 0.1)
    m[2, 3] = 0.93
    assert frame_score(m) == pytest.approx(0.93)
    with pytest.raises(ParameterError):
        frame_score(np.zeros((0, 0)))


@given(st.lists(st.floats(0.001, 0.999), min_size=4, max_size=4), st.integers(0, 3),
       st.floats(0, 0.5))
def test_frame_score_monotone(vals, i, bump):
    m = np.array(vals)
    raised = m.copy()
    raised[i] = min(raised[i] + bump, 0.999)
    assert frame_score(raised) >= frame_score(m)


def test_stack_score():
    assert stack_score([0.2, 0.9, 0.4]) == 0.9
    assert stack_score([0.3]) == 0.3
    assert stack_score([0.2, 0.9, 0.4, 0.0]) == stack_score([0.2, 0.9, 0.4])
    with pytest.raises(ParameterError):
        stack_score([])


def test_frame_loss():
    loss, grad = frame_bce_loss(np.full((3, 3), 0.5), 0)
    assert abs(loss - math.log(2)) < 1e-12
    p = np.full((4, 4), 1e-9)
    loss, _ = frame_bce_loss(p, 0)
    assert loss < 1e-6
    p = np.random.default_rng(0).random((5, 5))
    _, grad = frame_bce_loss(p, 1)
    nz = np.argwhere(grad != 0)
    assert nz.tolist() == [list(np.unravel_index(np.argmax(p), p.shape))]
