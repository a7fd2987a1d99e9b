"""Contrastive and supervised objectives, all differentiable through the autodiff graph."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ops
from .autodiff.tensor import ShapeError, Tensor, as_tensor


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    lambda_reg: float = 1.0
    lambda_class: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.lambda_reg < 0 or self.lambda_class < 0:
            raise ValueError("loss weights must be non-negative")


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")


def simclr_loss(z, pairing, tau: float) -> Tensor:
    """NT-Xent over 2B embeddings; ``pairing[i]`` is the positive of row i.

    Averaged over all 2B anchors; each anchor's denominator excludes itself.
    """
    _check_tau(tau)
    z = as_tensor(z)
    pairing = np.asarray(pairing, dtype=np.intp)
    n = z.shape[0]
    if z.ndim != 2 or pairing.shape != (n,):
        raise ShapeError(f"simclr_loss: embeddings {z.shape} vs pairing {pairing.shape}")
    if n < 4:
        raise ValueError("simclr_loss needs at least two pairs (B >= 2) to have negatives")
    if np.any(pairing == np.arange(n)):
        raise ValueError("an anchor cannot be its own positive")
    logits = ops.mul(ops.cosine_sim_matrix(z, z), 1.0 / tau)
    # -inf on the diagonal drops k == i from the softmax
    logits = ops.add(logits, np.where(np.eye(n, dtype=bool), -np.inf, 0.0))
    return ops.neg(ops.mean(ops.pick(ops.log_softmax(logits, axis=1), pairing)))


def _directional(anchor: Tensor, other: Tensor, tau: float) -> Tensor:
    logits = ops.mul(ops.cosine_sim_matrix(anchor, other), 1.0 / tau)
    return ops.neg(ops.mean(ops.pick(ops.log_softmax(logits, axis=1), np.arange(anchor.shape[0]))))


def bidirectional_loss(c_st, c_wt, tau: float) -> tuple[Tensor, Tensor, Tensor]:
    """Strong->weak, weak->strong and averaged contrastive losses.

    Row i of each view is the positive for row i of the other; every other
    row of the opposite view is a negative. Each direction is averaged over
    the batch.
    """
    _check_tau(tau)
    c_st, c_wt = as_tensor(c_st), as_tensor(c_wt)
    if c_st.ndim != 2 or c_st.shape != c_wt.shape:
        raise ShapeError(f"bidirectional_loss: {c_st.shape} vs {c_wt.shape}")
    if c_st.shape[0] == 0:
        raise ValueError("bidirectional_loss needs a non-empty batch")
    l_s = _directional(c_st, c_wt, tau)
    l_w = _directional(c_wt, c_st, tau)
    return l_s, l_w, ops.mul(ops.add(l_s, l_w), 0.5)


def mse_loss(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = ops.sub(pred, target)
    return ops.mean(ops.mul(diff, diff))


def cross_entropy(logits, labels) -> Tensor:
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    return ops.neg(ops.mean(ops.pick(ops.log_softmax(logits, axis=1), labels.astype(np.intp))))


def finetune_loss(mse, ce_floor, ce_building, cfg: LossConfig) -> Tensor:
    return ops.add(ops.mul(mse, cfg.lambda_reg),
                   ops.mul(ops.add(ce_floor, ce_building), cfg.lambda_class))
