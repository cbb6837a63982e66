"""Differentiable op vocabulary. Each op returns a Tensor wired with its VJP.

Shape rules are strict: elementwise ops want identical shapes (a trailing
broadcast is allowed for bias-style adds), matmul wants either a stacked
left operand against a 2-D right operand or equal leading dimensions.
Anything else is a ShapeError, not silent broadcasting.
"""

from __future__ import annotations

import numpy as np

from idt.errors import DomainError, ShapeError
from idt.numerics.tensor import Tensor, as_tensor, make_result

_SQRT_2_OVER_PI = 0.7978845608028654  # sqrt(2/pi)
_GELU_C = 0.044715


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad or t._parents:
        t.accumulate_grad(g)


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient over the leading axes a trailing broadcast created."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape[a.ndim - b.ndim :] != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def vjp(g: np.ndarray) -> None:
        _acc(a, g)
        _acc(b, _sum_to_shape(g, b.shape))

    return make_result(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.shape[a.ndim - b.ndim :] != b.shape:
        raise ShapeError(f"sub: {a.shape} vs {b.shape}")
    out = a.data - b.data

    def vjp(g: np.ndarray) -> None:
        _acc(a, g)
        _acc(b, -_sum_to_shape(g, b.shape))

    return make_result(out, (a, b), vjp)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; b may be a python scalar."""
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        s = float(b)
        out = a.data * s

        def vjp_s(g: np.ndarray) -> None:
            _acc(a, g * s)

        return make_result(out, (a,), vjp_s)
    b = as_tensor(b)
    if a.shape != b.shape and a.shape[a.ndim - b.ndim :] != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")
    out = a.data * b.data

    def vjp(g: np.ndarray) -> None:
        _acc(a, g * b.data)
        _acc(b, _sum_to_shape(g * a.data, b.shape))

    return make_result(out, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul wants matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims: {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul leading dims: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g: np.ndarray) -> None:
        _acc(a, g @ np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            k = a.shape[-1]
            n = g.shape[-1]
            _acc(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))
        else:
            _acc(b, np.swapaxes(a.data, -1, -2) @ g)

    return make_result(out, (a, b), vjp)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0).astype(a.dtype)

    def vjp(g: np.ndarray) -> None:
        _acc(a, np.where(mask, g, 0.0).astype(a.dtype))

    return make_result(out, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GeLU; exact erf form is avoided for determinism
    across libm builds."""
    a = as_tensor(a)
    x = a.data
    u = _SQRT_2_OVER_PI * (x + _GELU_C * x**3)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def vjp(g: np.ndarray) -> None:
        du = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * x**2)
        dx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du
        _acc(a, (g * dx).astype(a.dtype))

    return make_result(out.astype(a.dtype), (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise DomainError("softmax over non-finite input")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> None:
        dot = np.sum(g * out, axis=axis, keepdims=True)
        _acc(a, (out * (g - dot)).astype(a.dtype))

    return make_result(out, (a,), vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm params {gain.shape}/{bias.shape} vs feature dim {d}")
    if d < 2:
        raise ShapeError("layer_norm needs at least 2 features")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gain.data * xhat + bias.data

    def vjp(g: np.ndarray) -> None:
        lead = tuple(range(g.ndim - 1))
        _acc(gain, np.sum(g * xhat, axis=lead))
        _acc(bias, np.sum(g, axis=lead))
        dxhat = g * gain.data
        m1 = np.mean(dxhat, axis=-1, keepdims=True)
        m2 = np.mean(dxhat * xhat, axis=-1, keepdims=True)
        _acc(x, (inv * (dxhat - m1 - xhat * m2)).astype(x.dtype))

    return make_result(out.astype(x.dtype), (x, gain, bias), vjp)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def vjp(g: np.ndarray) -> None:
        _acc(a, g.reshape(a.shape))

    return make_result(out, (a,), vjp)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def vjp(g: np.ndarray) -> None:
        _acc(a, np.transpose(g, inv))

    return make_result(out, (a,), vjp)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g: np.ndarray) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _acc(t, g[tuple(idx)])

    return make_result(out, tuple(tensors), vjp)


def take(a: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Row gather: embedding lookups (axis 0, any index shape) and position
    selection (other axes, 1-D indices). Gradient is a scatter-add."""
    a = as_tensor(a)
    idx = np.asarray(indices)
    if axis != 0 and idx.ndim != 1:
        raise ShapeError("take on axis != 0 wants 1-D indices")
    out = np.take(a.data, idx, axis=axis)

    def vjp(g: np.ndarray) -> None:
        da = np.zeros_like(a.data)
        if axis == 0:
            flat_idx = idx.reshape(-1)
            g_flat = g.reshape((flat_idx.size,) + a.shape[1:])
            np.add.at(da, flat_idx, g_flat)
        else:
            da_m = np.moveaxis(da, axis, 0)
            g_m = np.moveaxis(g, axis, 0)
            np.add.at(da_m, idx, g_m)
        _acc(a, da)

    return make_result(out, (a,), vjp)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray) -> None:
        if axis is None:
            _acc(a, np.broadcast_to(g, a.shape).astype(a.dtype))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, a.shape).astype(a.dtype))

    return make_result(np.asarray(out), (a,), vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; callers only apply it in training mode."""
    a = as_tensor(a)
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    out = a.data * keep

    def vjp(g: np.ndarray) -> None:
        _acc(a, g * keep)

    return make_result(out, (a,), vjp)


def cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean masked cross-entropy over (N, C) logits against integer targets.

    Masked positions contribute exactly zero loss and exactly zero gradient.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy wants (N, C) logits, got {logits.shape}")
    n, c = logits.shape
    tgt = np.asarray(targets).reshape(-1)
    if tgt.shape[0] != n:
        raise ShapeError(f"cross_entropy: {n} rows vs {tgt.shape[0]} targets")
    if mask is None:
        m = np.ones(n, dtype=logits.dtype)
    else:
        m = np.asarray(mask).astype(logits.dtype).reshape(-1)
    denom = max(float(m.sum()), 1.0)
    z = logits.data - np.max(logits.data, axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1, keepdims=True))
    logp = z - lse
    nll = -logp[np.arange(n), tgt]
    out = np.asarray(np.sum(nll * m) / denom)

    def vjp(g: np.ndarray) -> None:
        p = np.exp(logp)
        p[np.arange(n), tgt] -= 1.0
        p *= (m / denom)[:, None]
        _acc(logits, (p * g).astype(logits.dtype))

    return make_result(out, (logits,), vjp)
