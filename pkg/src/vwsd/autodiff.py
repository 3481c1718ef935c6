"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps an ndarray and remembers how it was produced; calling
:func:`backward` on a scalar loss walks the recorded graph in reverse
topological order and accumulates gradients into every reachable tensor.
Primitives cover exactly what the fusers need: dense matmul, broadcasting
add, relu, concatenation/stacking, sequence-sum pooling, layer norm,
multi-head self-attention, L2 normalization, and a cross-entropy head.

Reductions along the *sequence* axis (attention's softmax denominator, the
attention-weighted value sum, and sum pooling) accumulate in sorted value
order.  Floating-point addition is commutative but not associative, so a
canonical order makes those reductions bitwise independent of how the input
rows were arranged — which is what makes the no-positional-encoding fuser
exactly permutation invariant rather than approximately so.

Dtype follows the inputs: float32 in normal training, float64 when a test
wants finite-difference headroom.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "backward",
    "add",
    "matmul",
    "relu",
    "concat",
    "stack",
    "seq_sum",
    "layer_norm",
    "attention",
    "unit",
    "scale_by",
    "cross_entropy",
    "mean",
]


class Tensor:
    """A node in the computation graph: value, gradient, and provenance."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents: Sequence["Tensor"] = ()):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward: Callable[[], None] = lambda: None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def gradient(self) -> np.ndarray:
        """Accumulated gradient; zeros if this tensor never saw the loss."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the graph below ``loss``.

    ``loss`` must be a scalar.  Gradients accumulate into ``.grad``; leaves
    not reachable from the loss simply keep ``grad = None``.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(loss, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack_.append((parent, False))

    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        node._backward()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` after a broadcasting forward."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _sorted_sum(x: np.ndarray, axis: int) -> np.ndarray:
    """Sum along ``axis`` accumulating in ascending value order.

    The result is bitwise independent of any permutation applied along
    ``axis`` (addition of a canonically ordered sequence).
    """
    return np.sort(x, axis=axis).sum(axis=axis)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, (a, b))

    def back() -> None:
        a.accumulate(_unbroadcast(out.grad, a.data.shape))
        b.accumulate(_unbroadcast(out.grad, b.data.shape))

    out._backward = back
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data @ b.data, (a, b))
    a_nd, b_nd = a.data.ndim, b.data.ndim

    def back() -> None:
        g = out.grad
        if a_nd == 2 and b_nd == 2:
            a.accumulate(g @ b.data.T)
            b.accumulate(a.data.T @ g)
        elif a_nd == 1 and b_nd == 2:
            a.accumulate(b.data @ g)
            b.accumulate(np.outer(a.data, g))
        elif a_nd == 2 and b_nd == 1:
            a.accumulate(np.outer(g, b.data))
            b.accumulate(a.data.T @ g)
        elif a_nd == 1 and b_nd == 1:
            a.accumulate(g * b.data)
            b.accumulate(g * a.data)
        else:  # pragma: no cover - guarded by forward shapes
            raise ValueError(f"unsupported matmul ranks {a_nd} x {b_nd}")

    out._backward = back
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0), (a,))

    def back() -> None:
        a.accumulate(out.grad * (a.data > 0))

    out._backward = back
    return out


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors into one long vector."""
    if any(t.data.ndim != 1 for t in parts):
        raise ValueError("concat expects 1-D tensors")
    out = Tensor(np.concatenate([t.data for t in parts]), tuple(parts))
    sizes = [t.data.shape[0] for t in parts]

    def back() -> None:
        offset = 0
        for t, size in zip(parts, sizes):
            t.accumulate(out.grad[offset : offset + size])
            offset += size

    out._backward = back
    return out


def stack(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors into a (len(rows), D) matrix."""
    if any(t.data.ndim != 1 for t in rows):
        raise ValueError("stack expects 1-D tensors")
    out = Tensor(np.stack([t.data for t in rows]), tuple(rows))

    def back() -> None:
        for i, t in enumerate(rows):
            t.accumulate(out.grad[i])

    out._backward = back
    return out


def seq_sum(x: Tensor) -> Tensor:
    """Sum a (S, D) sequence over its rows, order-canonical per column."""
    if x.data.ndim != 2:
        raise ValueError("seq_sum expects a 2-D tensor")
    out = Tensor(_sorted_sum(x.data, axis=0), (x,))

    def back() -> None:
        x.accumulate(np.broadcast_to(out.grad, x.data.shape).copy())

    out._backward = back
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization of a (S, D) tensor."""
    if x.data.ndim != 2:
        raise ValueError("layer_norm expects a 2-D tensor")
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(gain.data * xhat + bias.data, (x, gain, bias))

    def back() -> None:
        g = out.grad
        gain.accumulate((g * xhat).sum(axis=0))
        bias.accumulate(g.sum(axis=0))
        dxhat = g * gain.data
        # Standard layer-norm backward, rows independent.
        dvar = (dxhat * centered * -0.5 * inv**3).sum(axis=-1, keepdims=True)
        dmu = (-dxhat * inv).sum(axis=-1, keepdims=True) + dvar * (-2.0 * centered).mean(
            axis=-1, keepdims=True
        )
        x.accumulate(dxhat * inv + dvar * 2.0 * centered / d + dmu / d)

    out._backward = back
    return out


def attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, n_heads: int) -> Tensor:
    """Multi-head self-attention over a (S, D) sequence, no masking.

    Softmax denominators and the attention-weighted value sums reduce over
    the key axis in sorted order, so the output rows are an exact
    permutation of the input rows' outputs whenever the inputs are permuted.
    """
    s, d = x.data.shape
    if d % n_heads != 0:
        raise ValueError(f"model width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    scale = 1.0 / np.sqrt(dh)

    q = x.data @ wq.data
    k = x.data @ wk.data
    v = x.data @ wv.data
    # (S, D) -> (h, S, dh)
    qh = q.reshape(s, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(s, n_heads, dh).transpose(1, 0, 2)
    vh = v.reshape(s, n_heads, dh).transpose(1, 0, 2)

    scores = (qh @ kh.transpose(0, 2, 1)) * scale  # (h, S, S)
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    denom = _sorted_sum(e, axis=-1)[..., None]
    weights = e / denom  # (h, Sq, Sk)

    # ctx[h, i] = sum_k weights[h, i, k] * vh[h, k]; accumulate keys sorted.
    prod = weights[:, :, :, None] * vh[:, None, :, :]  # (h, Sq, Sk, dh)
    ctx = _sorted_sum(prod, axis=2)  # (h, Sq, dh)
    ctx_flat = ctx.transpose(1, 0, 2).reshape(s, d)
    out = Tensor(ctx_flat @ wo.data, (x, wq, wk, wv, wo))

    def back() -> None:
        g = out.grad  # (S, D)
        wo.accumulate(ctx_flat.T @ g)
        dctx_flat = g @ wo.data.T
        dctx = dctx_flat.reshape(s, n_heads, dh).transpose(1, 0, 2)

        dweights = dctx @ vh.transpose(0, 2, 1)  # (h, Sq, Sk)
        dvh = weights.transpose(0, 2, 1) @ dctx  # (h, Sk, dh)

        # softmax backward per (head, query) row over keys
        inner = (dweights * weights).sum(axis=-1, keepdims=True)
        dscores = weights * (dweights - inner)

        dqh = (dscores @ kh) * scale
        dkh = (dscores.transpose(0, 2, 1) @ qh) * scale

        dq = dqh.transpose(1, 0, 2).reshape(s, d)
        dk = dkh.transpose(1, 0, 2).reshape(s, d)
        dv = dvh.transpose(1, 0, 2).reshape(s, d)

        wq.accumulate(x.data.T @ dq)
        wk.accumulate(x.data.T @ dk)
        wv.accumulate(x.data.T @ dv)
        x.accumulate(dq @ wq.data.T + dk @ wk.data.T + dv @ wv.data.T)

    out._backward = back
    return out


def unit(x: Tensor) -> Tensor:
    """L2-normalize a 1-D vector; errors on zero norm."""
    if x.data.ndim != 1:
        raise ValueError("unit expects a 1-D tensor")
    norm = float(np.linalg.norm(x.data.astype(np.float64)))
    if norm <= 1e-12:
        raise ValueError("degenerate fused embedding (zero norm)")
    y = (x.data / x.data.dtype.type(norm)).astype(x.data.dtype)
    out = Tensor(y, (x,))

    def back() -> None:
        g = out.grad
        x.accumulate((g - y * (y * g).sum()) / norm)

    out._backward = back
    return out


def scale_by(x: Tensor, factor: float) -> Tensor:
    out = Tensor(x.data * x.data.dtype.type(factor), (x,))

    def back() -> None:
        x.accumulate(out.grad * factor)

    out._backward = back
    return out


def cross_entropy(logits: Tensor, gold_index: int) -> Tensor:
    """−log softmax(logits)[gold], computed via log-sum-exp."""
    z = logits.data
    if z.ndim != 1:
        raise ValueError("cross_entropy expects 1-D logits")
    if not 0 <= gold_index < z.shape[0]:
        raise ValueError(f"gold index {gold_index} out of range for {z.shape[0]} candidates")
    zmax = z.max()
    lse = np.log(np.exp(z - zmax).sum()) + zmax
    out = Tensor(np.asarray(lse - z[gold_index], dtype=z.dtype), (logits,))
    probs = np.exp(z - lse)

    def back() -> None:
        g = probs.copy()
        g[gold_index] -= 1.0
        logits.accumulate(g * out.grad)

    out._backward = back
    return out


def mean(values: Sequence[Tensor]) -> Tensor:
    """Mean of scalar tensors, summed in argument order."""
    if not values:
        raise ValueError("mean of no values")
    if any(t.data.shape != () for t in values):
        raise ValueError("mean expects scalar tensors")
    total = values[0].data.dtype.type(0.0)
    for t in values:
        total = total + t.data
    out = Tensor(np.asarray(total / len(values)), tuple(values))

    def back() -> None:
        share = out.grad / len(values)
        for t in values:
            t.accumulate(np.asarray(share, dtype=t.data.dtype))

    out._backward = back
    return out
