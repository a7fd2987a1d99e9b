import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qscl.autodiff import ShapeError, Tensor, backward
from qscl.losses import (LossConfig, bidirectional_loss, cross_entropy, finetune_loss, mse_loss,
                         simclr_loss)


def unit_rows(rng, b, d):
    z = rng.normal(size=(b, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def reference_direction(a, b, tau):
    """Plain-loop softmax cross-entropy of each row of ``a`` against all rows of ``b``."""
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    total = 0.0
    for i in range(len(a)):
        logits = [a[i] @ b[k] / tau for k in range(len(b))]
        total += -(logits[i] - np.log(np.sum(np.exp(logits))))
    return total / len(a)


@pytest.mark.parametrize("b", [2, 8, 64])
def test_identical_embeddings_give_log_b(b):
    z = np.tile([[1.0, 0.0, 0.0]], (b, 1))
    _, _, l = bidirectional_loss(z, z, 0.1)
    assert abs(l.item() - np.log(b)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 10), st.integers(2, 8), st.floats(0.05, 2.0), st.integers(0, 1000))
def test_swap_symmetry(b, d, tau, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(b, d)), rng.normal(size=(b, d))
    ls_xy, lw_xy, _ = bidirectional_loss(x, y, tau)
    ls_yx, lw_yx, _ = bidirectional_loss(y, x, tau)
    assert abs(ls_xy.item() - lw_yx.item()) <= 1e-12
    assert abs(lw_xy.item() - ls_yx.item()) <= 1e-12


def test_orthogonal_alignment_near_zero():
    e = np.eye(4)
    _, _, l = bidirectional_loss(e, e, 0.05)
    assert l.item() < 1e-3


def test_bidirectional_matches_reference_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    ls, lw, l = bidirectional_loss(a, b, 0.3)
    assert ls.item() == pytest.approx(reference_direction(a, b, 0.3), abs=1e-12)
    assert lw.item() == pytest.approx(reference_direction(b, a, 0.3), abs=1e-12)
    assert l.item() == pytest.approx((ls.item() + lw.item()) / 2, abs=1e-15)


def test_simclr_matches_reference():
    rng = np.random.default_rng(1)
    z = unit_rows(rng, 6, 4)
    pairing = np.array([3, 4, 5, 0, 1, 2])
    tau = 0.5
    sims = z @ z.T / tau
    ref = 0.0
    for i in range(6):
        others = [k for k in range(6) if k != i]
        ref += -(sims[i, pairing[i]] - np.log(np.exp(sims[i, others]).sum()))
    assert simclr_loss(z, pairing, tau).item() == pytest.approx(ref / 6, abs=1e-12)


def test_simclr_validation():
    z = np.eye(4)
    with pytest.raises(ValueError):
        simclr_loss(z, [0, 2, 3, 1], 0.1)
    with pytest.raises(ValueError):
        simclr_loss(np.eye(2), [1, 0], 0.1)
    with pytest.raises(ShapeError):
        simclr_loss(z, [1, 0], 0.1)


def test_temperature_validated():
    with pytest.raises(ValueError):
        bidirectional_loss(np.eye(2), np.eye(2), 0.0)
    with pytest.raises(ValueError):
        LossConfig(tau=-1)
    with pytest.raises(ShapeError):
        bidirectional_loss(np.eye(2), np.eye(3), 0.1)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 1000))
def test_loss_bounded_below_by_zero(b, seed):
    rng = np.random.default_rng(seed)
    ls, lw, _ = bidirectional_loss(rng.normal(size=(b, 3)), rng.normal(size=(b, 3)), 0.2)
    assert ls.item() >= 0 and lw.item() >= 0


def test_supervised_losses():
    assert mse_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])).item() == pytest.approx(2.5)
    logits = np.log(np.array([[0.25, 0.75], [0.5, 0.5]]))
    ce = cross_entropy(logits, [1, 0]).item()
    assert ce == pytest.approx(-(np.log(0.75) + np.log(0.5)) / 2)
    with pytest.raises(ValueError):
        cross_entropy(logits, [2, 0])
    total = finetune_loss(Tensor(2.0), Tensor(1.0), Tensor(0.5), LossConfig(lambda_reg=2, lambda_class=3))
    assert total.item() == pytest.approx(2 * 2 + 3 * 1.5)


def test_contrastive_gradient_pulls_positives_together():
    rng = np.random.default_rng(2)
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 3)))
    _, _, l = bidirectional_loss(a, b, 0.5)
    backward(l)
    a2 = Tensor(a.data - 0.01 * a.grad)
    assert bidirectional_loss(a2, b, 0.5)[2].item() < l.item()
