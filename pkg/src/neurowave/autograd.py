"""Minimal define-by-run reverse-mode differentiation over float64 numpy arrays.

Only the operations the emotion classifier needs are provided. Every op that
receives a tensor with ``requires_grad`` records its inputs and a backward rule;
:func:`backward` replays those records in exact reverse execution order.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_sequence = itertools.count()


class GradError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._seq = next(_sequence)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = ""
    out._seq = next(_sequence)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    out.grad = None
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# tape


def tape_of(loss: Tensor) -> list[Tensor]:
    """Every recorded node reachable from ``loss``, in execution order."""
    seen = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen[id(t)] = t
        stack.extend(t._parents)
    return sorted(seen.values(), key=lambda t: t._seq)


def backward(loss: Tensor) -> None:
    """Fill ``.grad`` for every tensor on the tape; leaf gradients accumulate."""
    if loss.data.size != 1:
        raise GradError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape_of(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.zero_grad()


# --------------------------------------------------------------------------
# elementwise and shape ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), back)


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return _result(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def reshape(x: Tensor, shape) -> Tensor:
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    """Permute axes; default swaps the last two."""
    if axes is None:
        axes = list(range(x.data.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    inverse = np.argsort(axes)
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def sum_all(x: Tensor) -> Tensor:
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


# --------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """``(..., m, k) @ (..., k, n)``; a 2-D right operand is shared across the batch."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise GradError("matmul needs operands of rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise GradError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def back(g):
        da = g @ np.swapaxes(b.data, -1, -2)
        db = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(da, a.shape), _unbroadcast(db, b.shape)

    return _result(a.data @ b.data, (a, b), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` stored as (out, in)."""
    y = matmul(x, transpose(weight))
    return add(y, bias) if bias is not None else y


def conv1d_same(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Cross-correlation over the last axis with zero 'same' padding.

    ``x`` is (..., C_in, T), ``kernels`` (C_out, C_in, K) with odd K, ``bias`` (C_out,).
    """
    c_out, c_in, k = kernels.shape
    if k % 2 == 0:
        raise GradError("conv1d_same needs an odd kernel size")
    if x.shape[-2] != c_in:
        raise GradError(f"conv1d_same: input has {x.shape[-2]} channels, kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise GradError("conv1d_same: bias shape must be (C_out,)")
    t = x.shape[-1]
    half = (k - 1) // 2
    widths = [(0, 0)] * (x.data.ndim - 1) + [(half, half)]
    xp = np.pad(x.data, widths)
    win = sliding_window_view(xp, k, axis=-1)  # (..., C_in, T, K)
    out = np.einsum("...ctk,ock->...ot", win, kernels.data) + bias.data[:, None]

    def back(g):
        dk = np.einsum("not,nctk->ock", g.reshape(-1, c_out, t), win.reshape(-1, c_in, t, k))
        db = g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,))
        gw = np.einsum("...ot,ock->...ctk", g, kernels.data)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[..., j : j + t] += gw[..., j]
        return dxp[..., half : half + t], dk, db

    return _result(out, (x, kernels, bias), back)


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then scale by ``gain`` and add ``shift``."""
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise GradError(f"layer_norm: gain/shift must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    xhat = (x.data - mu) * inv
    lead = tuple(range(x.data.ndim - 1))

    def back(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gain.data + shift.data, (x, gain, shift), back)


def masked_softmax(scores: Tensor, key_mask) -> Tensor:
    """Softmax over the last axis; keys where ``key_mask`` is False get zero weight."""
    mask = np.asarray(key_mask, dtype=bool)
    mask = np.broadcast_to(mask, scores.shape)
    if not np.all(mask.any(axis=-1)):
        raise GradError("attention row has no valid key")
    z = np.where(mask, scores.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _result(p, (scores,), back)


def multi_head_attention(x: Tensor, weights: dict, mask, n_heads: int) -> Tensor:
    """Scaled dot-product self-attention with a key padding mask.

    ``x`` is (T, d) or (B, T, d); ``mask`` is (T,) or (B, T) booleans, True = valid.
    ``weights`` holds ``wq wk wv wo`` (d x d, stored out x in) and biases
    ``bq bv bo``; ``bk`` is optional since a key bias cannot change the softmax.
    """
    d = x.shape[-1]
    if d % n_heads:
        raise GradError(f"model width {d} not divisible by {n_heads} heads")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape[:-1]:
        raise GradError(f"mask shape {mask.shape} does not match input {x.shape[:-1]}")
    if not np.all(mask.any(axis=-1)):
        raise GradError("all positions masked")
    dk = d // n_heads
    lead = x.shape[:-2]
    t = x.shape[-2]
    perm = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]

    def heads(name):
        y = linear(x, weights["w" + name], weights.get("b" + name))
        return transpose(reshape(y, (*lead, t, n_heads, dk)), perm)  # (..., h, T, dk)

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(dk))
    key_mask = mask[..., None, None, :]  # (..., 1, 1, T)
    attn = masked_softmax(scores, key_mask)
    ctx = transpose(matmul(attn, v), perm)  # (..., T, h, dk)
    return linear(reshape(ctx, (*lead, t, d)), weights["wo"], weights["bo"])


def attention_weights(x: Tensor, weights: dict, mask, n_heads: int) -> np.ndarray:
    """The per-head attention matrix (..., h, T, T); inspection helper."""
    d = x.shape[-1]
    dk = d // n_heads
    lead, t = x.shape[:-2], x.shape[-2]

    def proj(name):
        y = x.data @ weights["w" + name].data.T
        if "b" + name in weights:
            y = y + weights["b" + name].data
        return np.moveaxis(y.reshape(*lead, t, n_heads, dk), -2, -3)

    s = proj("q") @ np.swapaxes(proj("k"), -1, -2) / math.sqrt(dk)
    return masked_softmax(Tensor(s), np.asarray(mask, bool)[..., None, None, :]).data


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over axis -2 of (B, T, d) restricted to valid positions of ``mask`` (B, T)."""
    m = np.asarray(mask, dtype=np.float64)[..., None]
    count = m.sum(axis=-2, keepdims=True)
    if np.any(count == 0):
        raise GradError("pooling over an all-masked sequence")
    out = (x.data * m).sum(axis=-2) / count[..., 0, :]
    return _result(out, (x,), lambda g: (g[..., None, :] * m / count,))


# --------------------------------------------------------------------------
# regularization and loss


def dropout(x: Tensor, p: float, train: bool, rng=None) -> Tensor:
    """Inverted dropout; identity outside training. ``rng`` is a Generator or a seed."""
    if not 0 <= p < 1:
        raise GradError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.PCG64(rng))
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean categorical cross-entropy of (B, C) logits against integer targets."""
    targets = np.asarray(targets, dtype=np.int64)
    b, c = logits.shape
    if targets.shape != (b,):
        raise GradError("need one target per row")
    if np.any(targets < 0) or np.any(targets >= c):
        raise GradError(f"target out of range [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = np.mean(lse - z[rows, targets])
    probs = np.exp(z - lse[:, None])

    def back(g):
        d = probs.copy()
        d[rows, targets] -= 1.0
        return (g * d / b,)

    return _result(np.array(loss), (logits,), back)


# --------------------------------------------------------------------------
# gradient checking


def relative_error(analytic, numeric) -> np.ndarray:
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))


def numeric_gradient(f, x: Tensor, h: float = 1e-5) -> np.ndarray:
    num = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    out = num.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x).data)
        flat[i] = orig - h
        fm = float(f(x).data)
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return num


def finite_difference_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between backward's gradient and central differences.

    ``f`` maps ``x`` (a leaf with ``requires_grad``) to a scalar tensor.
    """
    if h <= 0:
        raise GradError("step must be positive")
    if not x.requires_grad:
        raise GradError("tensor under check must require grad")
    x.zero_grad()
    backward(f(x))
    analytic = x.grad.copy()
    numeric = numeric_gradient(f, x, h)
    return float(relative_error(analytic, numeric).max()) if analytic.size else 0.0
