"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the primitives the detection network needs are implemented: spatial
3x3 convolution, dilated temporal convolution, batch norm, ReLU/sigmoid,
channel concat, linear layers, softmax attention pieces, pooling and a
handful of elementwise/reduction ops. Everything is float64 end to end.

The computation graph is implicit: every Tensor produced by an op keeps
references to its parent tensors and a closure that propagates gradients.
`backward(loss)` walks that DAG in reverse topological order and fills in
`.grad` on every leaf with `requires_grad=True`.

Convolutions accumulate kernel positions in a fixed documented order
(row-major over the kernel, channel reduction per position via matmul),
so on integer-valued float64 inputs they are bit-exact against a naive
nested-loop summation regardless of platform.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when an operation's input shapes violate its contract."""


def _shape_of(x) -> tuple:
    return tuple(np.asarray(x).shape)


class Tensor:
    """A dense float64 array plus an autodiff tape node.

    Leaf tensors (parameters, inputs) are created directly; interior
    tensors are created by the ops below and carry a backward closure.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor shape entries must be strictly positive, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def _topo_order(root: Tensor) -> list[Tensor]:
    """Topological order of the sub-DAG that can influence gradients."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Fills `.grad` on every requires_grad tensor reachable from `loss` and
    returns a map from each gradient-carrying leaf to its gradient array.
    Grads from any previous call are discarded, not accumulated.
    """
    if loss.data.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    if not loss.requires_grad:
        return {}
    loss.grad = np.ones(())
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(order):
        if node.grad is None:
            continue
        if node._backward is not None:
            node._backward(node.grad)
        elif not node._parents:
            leaves[node] = node.grad
    return leaves


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"add requires equal shapes, got {x.shape} vs {y.shape}")

    def bw(g):
        if x.requires_grad:
            x._accum(g)
        if y.requires_grad:
            y._accum(g)

    return Tensor(x.data + y.data, _parents=(x, y), _backward=bw)


def sub(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"sub requires equal shapes, got {x.shape} vs {y.shape}")

    def bw(g):
        if x.requires_grad:
            x._accum(g)
        if y.requires_grad:
            y._accum(-g)

    return Tensor(x.data - y.data, _parents=(x, y), _backward=bw)


def mul(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"mul requires equal shapes, got {x.shape} vs {y.shape}")

    def bw(g):
        if x.requires_grad:
            x._accum(g * y.data)
        if y.requires_grad:
            y._accum(g * x.data)

    return Tensor(x.data * y.data, _parents=(x, y), _backward=bw)


def div(x: Tensor, y: Tensor) -> Tensor:
    if x.shape != y.shape:
        raise ShapeError(f"div requires equal shapes, got {x.shape} vs {y.shape}")

    def bw(g):
        if x.requires_grad:
            x._accum(g / y.data)
        if y.requires_grad:
            y._accum(-g * x.data / (y.data * y.data))

    return Tensor(x.data / y.data, _parents=(x, y), _backward=bw)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        if x.requires_grad:
            x._accum(g * s)

    return Tensor(x.data * s, _parents=(x,), _backward=bw)


def add_scalar(x: Tensor, c: float) -> Tensor:
    def bw(g):
        if x.requires_grad:
            x._accum(g)

    return Tensor(x.data + float(c), _parents=(x,), _backward=bw)


def mul_const(x: Tensor, c) -> Tensor:
    """Elementwise multiply by a constant array (no gradient into c)."""
    c = np.asarray(c, dtype=np.float64)

    def bw(g):
        if x.requires_grad:
            x._accum(g * c)

    return Tensor(x.data * c, _parents=(x,), _backward=bw)


def const_minus(c: float, x: Tensor) -> Tensor:
    """c - x for a scalar constant c."""

    def bw(g):
        if x.requires_grad:
            x._accum(-g)

    return Tensor(float(c) - x.data, _parents=(x,), _backward=bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def bw(g):
        if x.requires_grad:
            x._accum(g * mask)

    return Tensor(np.maximum(x.data, 0.0), _parents=(x,), _backward=bw)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        if x.requires_grad:
            x._accum(g * s * (1.0 - s))

    return Tensor(s, _parents=(x,), _backward=bw)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def bw(g):
        if x.requires_grad:
            x._accum(g * e)

    return Tensor(e, _parents=(x,), _backward=bw)


def log(x: Tensor) -> Tensor:
    def bw(g):
        if x.requires_grad:
            x._accum(g / x.data)

    return Tensor(np.log(x.data), _parents=(x,), _backward=bw)


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)

    def bw(g):
        if x.requires_grad:
            x._accum(g * 0.5 / r)

    return Tensor(r, _parents=(x,), _backward=bw)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient is zero where the clamp binds."""
    mask = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        if x.requires_grad:
            x._accum(g * mask)

    return Tensor(np.clip(x.data, lo, hi), _parents=(x,), _backward=bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")

    def bw(g):
        if x.requires_grad:
            x._accum(g.reshape(x.data.shape))

    return Tensor(x.data.reshape(shape), _parents=(x,), _backward=bw)


def transpose_last2(x: Tensor) -> Tensor:
    def bw(g):
        if x.requires_grad:
            x._accum(np.swapaxes(g, -1, -2))

    return Tensor(np.swapaxes(x.data, -1, -2), _parents=(x,), _backward=bw)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not x.requires_grad:
            return
        if axis is None:
            x._accum(np.full_like(x.data, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            x._accum(np.broadcast_to(gg, x.data.shape).copy())

    return Tensor(out, _parents=(x,), _backward=bw)


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    return scale(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last (channel) axis."""
    if not xs:
        raise ShapeError("concat_channels needs at least one input")
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat_channels inputs disagree on non-channel dims: {xs[0].shape} vs {t.shape}")
    widths = [t.shape[-1] for t in xs]
    offsets = np.cumsum([0] + widths)

    def bw(g):
        for t, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t._accum(g[..., lo:hi])

    return Tensor(np.concatenate([t.data for t in xs], axis=-1),
                  _parents=tuple(xs), _backward=bw)


def pad_channels(x: Tensor, width: int) -> Tensor:
    """Zero-pad the channel axis on the right to `width`."""
    c = x.shape[-1]
    if width < c:
        raise ShapeError(f"pad_channels target {width} below current {c}")
    if width == c:
        return x
    pad = [(0, 0)] * (x.ndim - 1) + [(0, width - c)]

    def bw(g):
        if x.requires_grad:
            x._accum(g[..., :c])

    return Tensor(np.pad(x.data, pad), _parents=(x,), _backward=bw)


# ---------------------------------------------------------------------------
# linear algebra


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w (+ b) over the last axis; x may have any leading shape."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias shape {b.shape} != ({w.shape[1]},)")
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        g2 = g.reshape(-1, w.shape[1])
        if x.requires_grad:
            x._accum((g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            w._accum(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out.reshape(lead + (w.shape[1],)), _parents=parents, _backward=bw)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul [N,A,B] @ [N,B,C]."""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm shapes incompatible: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accum(np.swapaxes(a.data, -1, -2) @ g)

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=bw)


def softmax_last(x: Tensor) -> Tensor:
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        if x.requires_grad:
            x._accum(s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return Tensor(s, _parents=(x,), _backward=bw)


# ---------------------------------------------------------------------------
# convolutions

_K2 = 3  # spatial kernel side
_K1 = 3  # temporal kernel length


def conv2d_spatial(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 same-padded spatial convolution applied per time step.

    x: [N,T,H,W,Cin], w: [3,3,Cin,Cout], b: [Cout].  Kernel positions are
    accumulated in row-major (dy, dx) order starting from the bias.
    """
    if x.ndim != 5:
        raise ShapeError(f"conv2d_spatial expects [N,T,H,W,C] input, got {x.shape}")
    if w.ndim != 4 or w.shape[0] != _K2 or w.shape[1] != _K2:
        raise ShapeError(f"conv2d_spatial expects a [3,3,Cin,Cout] kernel, got {w.shape}")
    N, T, H, W, Cin = x.shape
    if w.shape[2] != Cin:
        raise ShapeError(f"conv2d_spatial: input has {Cin} channels, kernel expects {w.shape[2]}")
    Cout = w.shape[3]
    if b.shape != (Cout,):
        raise ShapeError(f"conv2d_spatial: bias shape {b.shape} != ({Cout},)")

    xp = np.zeros((N, T, H + 2, W + 2, Cin))
    xp[:, :, 1:H + 1, 1:W + 1, :] = x.data
    out = np.broadcast_to(b.data, (N * T * H * W, Cout)).copy()
    for dy in range(_K2):
        for dx in range(_K2):
            sl = np.ascontiguousarray(xp[:, :, dy:dy + H, dx:dx + W, :]).reshape(-1, Cin)
            out += sl @ w.data[dy, dx]

    def bw(g):
        g2 = g.reshape(-1, Cout)
        if b.requires_grad:
            b._accum(g2.sum(axis=0))
        need_x = x.requires_grad
        gxp = np.zeros_like(xp) if need_x else None
        for dy in range(_K2):
            for dx in range(_K2):
                if w.requires_grad:
                    sl = np.ascontiguousarray(xp[:, :, dy:dy + H, dx:dx + W, :]).reshape(-1, Cin)
                    if w.grad is None:
                        w.grad = np.zeros_like(w.data)
                    w.grad[dy, dx] += sl.T @ g2
                if need_x:
                    gxp[:, :, dy:dy + H, dx:dx + W, :] += (g2 @ w.data[dy, dx].T).reshape(N, T, H, W, Cin)
        if need_x:
            x._accum(gxp[:, :, 1:H + 1, 1:W + 1, :])

    return Tensor(out.reshape(N, T, H, W, Cout), _parents=(x, w, b), _backward=bw)


def conv1d_temporal(x: Tensor, w: Tensor, b: Tensor, dilation: int) -> Tensor:
    """Length-3 dilated temporal convolution applied per spatial location.

    x: [N,T,H,W,Cin], w: [3,Cin,Cout], b: [Cout].  Zero padding of width
    `dilation` on each side of the time axis; taps accumulated in order.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if x.ndim != 5:
        raise ShapeError(f"conv1d_temporal expects [N,T,H,W,C] input, got {x.shape}")
    if w.ndim != 3 or w.shape[0] != _K1:
        raise ShapeError(f"conv1d_temporal expects a [3,Cin,Cout] kernel, got {w.shape}")
    N, T, H, W, Cin = x.shape
    if w.shape[1] != Cin:
        raise ShapeError(f"conv1d_temporal: input has {Cin} channels, kernel expects {w.shape[1]}")
    Cout = w.shape[2]
    if b.shape != (Cout,):
        raise ShapeError(f"conv1d_temporal: bias shape {b.shape} != ({Cout},)")

    d = int(dilation)
    xp = np.zeros((N, T + 2 * d, H, W, Cin))
    xp[:, d:d + T] = x.data
    out = np.broadcast_to(b.data, (N * T * H * W, Cout)).copy()
    for j in range(_K1):
        sl = np.ascontiguousarray(xp[:, j * d:j * d + T]).reshape(-1, Cin)
        out += sl @ w.data[j]

    def bw(g):
        g2 = g.reshape(-1, Cout)
        if b.requires_grad:
            b._accum(g2.sum(axis=0))
        need_x = x.requires_grad
        gxp = np.zeros_like(xp) if need_x else None
        for j in range(_K1):
            if w.requires_grad:
                sl = np.ascontiguousarray(xp[:, j * d:j * d + T]).reshape(-1, Cin)
                if w.grad is None:
                    w.grad = np.zeros_like(w.data)
                w.grad[j] += sl.T @ g2
            if need_x:
                gxp[:, j * d:j * d + T] += (g2 @ w.data[j].T).reshape(N, T, H, W, Cin)
        if need_x:
            x._accum(gxp[:, d:d + T])

    return Tensor(out.reshape(N, T, H, W, Cout), _parents=(x, w, b), _backward=bw)


# ---------------------------------------------------------------------------
# batch norm


class BatchNormState:
    """Running statistics buffer for one batch-norm layer."""

    __slots__ = ("mean", "var", "momentum")

    def __init__(self, channels: int, momentum: float = 0.9):
        self.mean = np.zeros(channels)
        self.var = np.ones(channels)
        self.momentum = momentum

    def copy(self) -> "BatchNormState":
        s = BatchNormState(len(self.mean), self.momentum)
        s.mean = self.mean.copy()
        s.var = self.var.copy()
        return s


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               mode: str = "train", eps: float = 1e-5) -> Tensor:
    """Normalize over all axes except the last (channels).

    Train mode uses batch statistics and folds them into the running
    buffers; eval mode applies the running statistics as a fixed affine.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    C = x.shape[-1]
    if C == 0:
        raise ShapeError("batch_norm: zero-size channel axis")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm: gamma/beta must be ({C},), got {gamma.shape}/{beta.shape}")
    axes = tuple(range(x.ndim - 1))
    m = x.data.size // C

    if mode == "eval":
        ivstd = 1.0 / np.sqrt(state.var + eps)
        xhat = (x.data - state.mean) * ivstd

        def bw_eval(g):
            if x.requires_grad:
                x._accum(g * (gamma.data * ivstd))
            if gamma.requires_grad:
                gamma._accum((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta._accum(g.sum(axis=axes))

        return Tensor(gamma.data * xhat + beta.data,
                      _parents=(x, gamma, beta), _backward=bw_eval)

    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    ivstd = 1.0 / np.sqrt(var + eps)
    xc = x.data - mu
    xhat = xc * ivstd
    mom = state.momentum
    state.mean = mom * state.mean + (1.0 - mom) * mu
    state.var = mom * state.var + (1.0 - mom) * var

    def bw(g):
        if gamma.requires_grad:
            gamma._accum((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accum(g.sum(axis=axes))
        if x.requires_grad:
            dxhat = g * gamma.data
            dvar = (dxhat * xc).sum(axis=axes) * (-0.5) * ivstd ** 3
            dmu = -(dxhat.sum(axis=axes)) * ivstd + dvar * (-2.0 / m) * xc.sum(axis=axes)
            x._accum(dxhat * ivstd + dvar * (2.0 / m) * xc + dmu / m)

    return Tensor(gamma.data * xhat + beta.data, _parents=(x, gamma, beta), _backward=bw)


# ---------------------------------------------------------------------------
# pooling, dropout, attention


def avg_pool_spatial(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2 over H and W (floor semantics)."""
    if x.ndim != 5:
        raise ShapeError(f"avg_pool_spatial expects [N,T,H,W,C], got {x.shape}")
    N, T, H, W, C = x.shape
    Ho, Wo = H // 2, W // 2
    if Ho == 0 or Wo == 0:
        raise ShapeError(f"avg_pool_spatial: spatial dims too small to pool, got {H}x{W}")
    v = x.data[:, :, :2 * Ho, :2 * Wo, :]
    out = 0.25 * (v[:, :, 0::2, 0::2] + v[:, :, 0::2, 1::2]
                  + v[:, :, 1::2, 0::2] + v[:, :, 1::2, 1::2])

    def bw(g):
        if not x.requires_grad:
            return
        gx = np.zeros_like(x.data)
        q = 0.25 * g
        gx[:, :, 0:2 * Ho:2, 0:2 * Wo:2] += q
        gx[:, :, 0:2 * Ho:2, 1:2 * Wo:2] += q
        gx[:, :, 1:2 * Ho:2, 0:2 * Wo:2] += q
        gx[:, :, 1:2 * Ho:2, 1:2 * Wo:2] += q
        x._accum(gx)

    return Tensor(out, _parents=(x,), _backward=bw)


def global_avg_spatial(x: Tensor) -> Tensor:
    """Mean over H and W: [N,T,H,W,C] -> [N,T,C]."""
    if x.ndim != 5:
        raise ShapeError(f"global_avg_spatial expects [N,T,H,W,C], got {x.shape}")
    N, T, H, W, C = x.shape
    inv = 1.0 / (H * W)

    def bw(g):
        if x.requires_grad:
            x._accum(np.broadcast_to(g[:, :, None, None, :] * inv, x.data.shape).copy())

    return Tensor(x.data.mean(axis=(2, 3)), _parents=(x,), _backward=bw)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted-scaling dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0,1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def bw(g):
        if x.requires_grad:
            x._accum(g * mask)

    return Tensor(x.data * mask, _parents=(x,), _backward=bw)


def init_attention_params(dim: int, rng: np.random.Generator,
                          prefix: str = "attn") -> dict[str, Tensor]:
    """Glorot-initialized parameters for one self-attention layer."""
    std = math.sqrt(1.0 / dim)
    params = {}
    for key in ("wq", "wk", "wv", "wo"):
        params[key] = Tensor(rng.normal(0.0, std, size=(dim, dim)),
                             requires_grad=True, name=f"{prefix}.{key}")
    for key in ("bq", "bk", "bv", "bo"):
        params[key] = Tensor(np.zeros(dim), requires_grad=True, name=f"{prefix}.{key}")
    return params


def self_attention_layer(x: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Single-head scaled dot-product attention with a residual output.

    x: [N,T,D].  out = x + Wo @ softmax(Q K^T / sqrt(D)) V + bo.
    """
    if x.ndim != 3:
        raise ShapeError(f"self_attention_layer expects [N,T,D], got {x.shape}")
    D = x.shape[-1]
    if params["wq"].shape != (D, D):
        raise ShapeError(
            f"self_attention_layer: input dim {D} does not match params {params['wq'].shape}")
    q = linear(x, params["wq"], params["bq"])
    k = linear(x, params["wk"], params["bk"])
    v = linear(x, params["wv"], params["bv"])
    scores = scale(bmm(q, transpose_last2(k)), 1.0 / math.sqrt(D))
    attn = softmax_last(scores)
    ctx = bmm(attn, v)
    return add(x, linear(ctx, params["wo"], params["bo"]))


def attention_weights(x: np.ndarray, params: dict[str, Tensor]) -> np.ndarray:
    """The softmax attention matrix for inspection/testing: [N,T,T]."""
    D = x.shape[-1]
    q = x @ params["wq"].data + params["bq"].data
    k = x @ params["wk"].data + params["bk"].data
    s = (q @ np.swapaxes(k, -1, -2)) / math.sqrt(D)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(build_loss: Callable[[], Tensor], params: Iterable[Tensor],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `build_loss` must rebuild the scalar loss from the params' current
    `.data` on every call (a pure function of the parameter values).
    Error per element is |analytic - fd| / max(1, |analytic|).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"grad_check eps must be in [1e-7, 1e-3], got {eps}")
    params = list(params)
    loss = build_loss()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build_loss().data)
            flat[i] = orig - eps
            dn = float(build_loss().data)
            flat[i] = orig
            fd = (up - dn) / (2.0 * eps)
            err = abs(aflat[i] - fd) / max(1.0, abs(aflat[i]))
            if err > worst:
                worst = err
    return worst
