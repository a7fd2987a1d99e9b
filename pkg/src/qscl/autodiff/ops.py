"""Differentiable primitives over :class:`~qscl.autodiff.tensor.Tensor`.

Every function takes tensors (or array-likes, treated as constants) and
returns a new tensor with its backward rule attached.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_node, shape_error


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise shape_error(op, a.shape, b.shape) from None


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


# -- elementwise -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return make_node(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return make_node(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return make_node(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return make_node(
        out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _stable_sigmoid(a.data)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


# -- reductions --------------------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(out, (a,), _bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.size // max(out.size, 1) if a.size else 1

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / count,)

    return make_node(out, (a,), _bw)


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), _bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    probs = np.exp(out)

    def _bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (a,), _bw)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance (no affine)."""
    _check_eps(eps)
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def _bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv_std * (g - gm - xhat * gxm),)

    return make_node(xhat, (a,), _bw)


def l2_normalize(a, eps: float = 1e-12) -> Tensor:
    """Scale each last-axis vector to unit length; vectors shorter than eps are divided by eps."""
    _check_eps(eps)
    a = as_tensor(a)
    norm = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, eps)
    out = a.data / denom

    def _bw(g):
        radial = (g * out).sum(axis=-1, keepdims=True)
        return (np.where(big, (g - out * radial) / denom, g / denom),)

    return make_node(out, (a,), _bw)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise shape_error("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise shape_error("matmul", a.shape, b.shape) from None

    def _bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), _bw)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise shape_error("linear", x.shape, weight.shape)
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise shape_error("linear bias", bias.shape, (weight.shape[0],))
        out = out + bias.data
        parents.append(bias)

    def _bw(g):
        gx = g @ weight.data
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1])
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return grads

    return make_node(out, parents, _bw)


def conv1d(x, weight, bias=None, dilation: int = 1) -> Tensor:
    """Dilated 1-D convolution with zero "same" padding.

    x is (B, C, L), weight is (F, C, K); output is (B, F, L). For an even
    receptive field the extra pad element goes on the right.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if dilation < 1 or int(dilation) != dilation:
        raise ValueError(f"dilation must be a positive integer, got {dilation}")
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise shape_error("conv1d", x.shape, weight.shape)
    batch, _, length = x.shape
    _, _, k = weight.shape
    span = dilation * (k - 1)
    left = span // 2
    xpad = np.pad(x.data, ((0, 0), (0, 0), (left, span - left)))
    # cols[b, c, j, l] = xpad[b, c, l + j * dilation]
    cols = np.stack([xpad[:, :, j * dilation: j * dilation + length] for j in range(k)], axis=2)
    out = np.einsum("fcj,bcjl->bfl", weight.data, cols, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise shape_error("conv1d bias", bias.shape, (weight.shape[0],))
        out = out + bias.data[None, :, None]
        parents.append(bias)

    def _bw(g):
        gw = np.einsum("bfl,bcjl->fcj", g, cols, optimize=True)
        gcols = np.einsum("bfl,fcj->bcjl", g, weight.data, optimize=True)
        gpad = np.zeros_like(xpad)
        for j in range(k):
            gpad[:, :, j * dilation: j * dilation + length] += gcols[:, :, j, :]
        grads = [gpad[:, :, left: left + length], gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2)))
        return grads

    return make_node(out, parents, _bw)


def adaptive_bins(length: int, target: int) -> list[tuple[int, int]]:
    """Contiguous [start, end) bins covering ``length`` items in ``target`` groups."""
    return [((i * length) // target, -((-(i + 1) * length) // target)) for i in range(target)]


def adaptive_max_pool1d(x, target: int) -> Tensor:
    """Per-bin maximum over the last axis of a (B, C, L) tensor.

    Gradient flows to the first maximal element of each bin.
    """
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[-1] < 1:
        raise shape_error("adaptive_max_pool1d", x.shape, ("B", "C", ">=1"))
    if target < 1:
        raise ValueError(f"target length must be >= 1, got {target}")
    bins = adaptive_bins(x.shape[-1], target)
    out = np.empty(x.shape[:2] + (target,))
    arg = np.empty(x.shape[:2] + (target,), dtype=np.intp)
    for i, (lo, hi) in enumerate(bins):
        window = x.data[:, :, lo:hi]
        idx = window.argmax(axis=-1)
        arg[:, :, i] = lo + idx
        out[:, :, i] = np.take_along_axis(window, idx[..., None], axis=-1)[..., 0]

    def _bw(g):
        gx = np.zeros_like(x.data)
        b_idx, c_idx = np.meshgrid(np.arange(x.shape[0]), np.arange(x.shape[1]), indexing="ij")
        for i in range(target):
            np.add.at(gx, (b_idx, c_idx, arg[:, :, i]), g[:, :, i])
        return (gx,)

    return make_node(out, (x,), _bw)


# -- shape -------------------------------------------------------------------

def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise shape_error("reshape", a.shape, tuple(shape)) from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise shape_error("concat", *(t.shape for t in tensors)) from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return make_node(out, tensors, lambda g: np.split(g, splits, axis=axis))


def pick(a, index) -> Tensor:
    """Select ``a[i, index[i]]`` from a 2-D tensor."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if a.ndim != 2 or index.shape != (a.shape[0],):
        raise shape_error("pick", a.shape, index.shape)
    rows = np.arange(a.shape[0])

    def _bw(g):
        gx = np.zeros_like(a.data)
        gx[rows, index] = g
        return (gx,)

    return make_node(a.data[rows, index], (a,), _bw)


# -- composites --------------------------------------------------------------

def cosine_sim_matrix(a, b, eps: float = 1e-12) -> Tensor:
    """Pairwise cosine similarity between rows: (B, D) x (B', D) -> (B, B')."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise shape_error("cosine_sim_matrix", a.shape, b.shape)
    return matmul(l2_normalize(a, eps), transpose(l2_normalize(b, eps), (1, 0)))


def scaled_dot_attention(q, k, v, heads: int = 1) -> tuple[Tensor, Tensor]:
    """Multi-head scaled dot-product attention over (B, T, D) inputs.

    Returns the merged (B, T, D) output and the (B, heads, T, T) weights.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 3 or q.shape != k.shape or k.shape != v.shape:
        raise shape_error("scaled_dot_attention", q.shape, k.shape, v.shape)
    batch, steps, dim = q.shape
    if heads < 1 or dim % heads:
        raise ValueError(f"model dim {dim} is not divisible by {heads} heads")
    head_dim = dim // heads

    def split(t):
        return transpose(reshape(t, (batch, steps, heads, head_dim)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = mul(matmul(qh, transpose(kh, (0, 1, 3, 2))), 1.0 / np.sqrt(head_dim))
    weights = softmax(scores, axis=-1)
    merged = reshape(transpose(matmul(weights, vh), (0, 2, 1, 3)), (batch, steps, dim))
    return merged, weights
