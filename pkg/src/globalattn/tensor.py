"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a float64 numpy array plus an optional gradient
buffer of the same shape.  Differentiable operations append one record to
the innermost active :class:`GradientTape`; :func:`backward` replays the
tape in reverse execution order, accumulating gradients additively, so a
tensor consumed by k operations receives the sum of k contributions.

Only the layer types the two networks need are provided: conv2d, relu,
sigmoid, 2x2 max-pooling, reshape/flatten, fully-connected, channel
concatenation, softmax cross-entropy, the broadcast attention multiply,
mean-absolute-value, and sum/mean reductions.  Everything runs on the CPU
in float64; shapes are fixed at call time.

Spatial tensors are laid out ``(batch, channels, width, height)`` in
row-major order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, ShapeError

__all__ = [
    "Tensor",
    "GradientTape",
    "backward",
    "add",
    "scale",
    "mul",
    "relu",
    "sigmoid",
    "tensor_sum",
    "tensor_mean",
    "l1_mean",
    "reshape",
    "flatten",
    "concat_channels",
    "conv2d",
    "conv2d_output_size",
    "maxpool2x2",
    "linear",
    "softmax_cross_entropy",
    "broadcast_mul",
]


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


class _Record:
    """One executed operation: output, inputs, and its backward rule."""

    __slots__ = ("output", "inputs", "backward_fn")

    def __init__(self, output: Tensor, inputs: tuple[Tensor, ...],
                 backward_fn: Callable[[np.ndarray], None]):
        self.output = output
        self.inputs = inputs
        self.backward_fn = backward_fn


# Innermost active tape last.  Forward/backward is single-threaded by
# contract, so a plain module-level stack suffices.
_TAPES: list["GradientTape"] = []


class GradientTape:
    """Ordered record of executed operations for one backward pass.

    Use as a context manager; operations executed inside the ``with`` block
    whose output requires a gradient are recorded.  ``clear()`` empties the
    record and zeroes the gradient buffers of every tensor it touched.
    """

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "GradientTape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, rec: _Record) -> None:
        self._records.append(rec)

    def clear(self) -> None:
        for rec in self._records:
            rec.output.zero_grad()
            for t in rec.inputs:
                t.zero_grad()
        self._records.clear()


def backward(loss: Tensor, tape: GradientTape) -> None:
    """Accumulate d(loss)/d(tensor) into every tensor reachable on ``tape``.

    ``loss`` must be a single-element tensor produced through the tape.
    Gradients add onto existing buffers; callers zero them between steps
    (``tape.clear()`` or the optimizer's ``zero_grad``).
    """
    if loss.data.size != 1:
        raise ContractError(
            f"backward() requires a scalar loss, got shape {loss.shape}")
    _accumulate(loss, np.ones_like(loss.data))
    for rec in reversed(tape._records):
        g = rec.output.grad
        if g is None:
            continue
        rec.backward_fn(g)


def _apply(out_data: np.ndarray, inputs: tuple[Tensor, ...],
           backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad and _TAPES:
        _TAPES[-1]._record(_Record(out, inputs, backward_fn))
    return out


# ---------------------------------------------------------------------------
# elementwise and reduction ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, g)

    return _apply(a.data + b.data, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * c)

    return _apply(a.data * c, (a,), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product of two same-shape tensors."""
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, g * a.data)

    return _apply(a.data * b.data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is 0."""
    mask = x.data > 0

    def bw(g):
        if x.requires_grad:
            _accumulate(x, g * mask)

    return _apply(np.where(mask, x.data, 0.0), (x,), bw)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # Split by sign so neither branch exponentiates a large positive value.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function 1/(1+e^-x), overflow-safe for large |x|."""
    s = _sigmoid_stable(x.data)

    def bw(g):
        if x.requires_grad:
            _accumulate(x, g * s * (1.0 - s))

    return _apply(s, (x,), bw)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all elements, as a rank-0 tensor."""

    def bw(g):
        if x.requires_grad:
            _accumulate(x, np.full_like(x.data, float(g)))

    return _apply(np.asarray(x.data.sum()), (x,), bw)


def tensor_mean(x: Tensor) -> Tensor:
    """Mean of all elements, as a rank-0 tensor."""
    n = x.data.size

    def bw(g):
        if x.requires_grad:
            _accumulate(x, np.full_like(x.data, float(g) / n))

    return _apply(np.asarray(x.data.mean()), (x,), bw)


def l1_mean(x: Tensor) -> Tensor:
    """Mean absolute value; backward is sign(x)/n with sign(0) = 0."""
    n = x.data.size

    def bw(g):
        if x.requires_grad:
            _accumulate(x, (float(g) / n) * np.sign(x.data))

    return _apply(np.asarray(np.abs(x.data).mean()), (x,), bw)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    """View the same values under a new shape of equal element count."""
    shape = tuple(shape)

    def bw(g):
        if x.requires_grad:
            _accumulate(x, g.reshape(x.data.shape))

    return _apply(x.data.reshape(shape), (x,), bw)


def flatten(x: Tensor) -> Tensor:
    """Collapse all but the leading (batch) dimension."""
    return reshape(x, (x.shape[0], -1))


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate (B, C_i, W, H) tensors along the channel axis."""
    parts = tuple(parts)
    if not parts:
        raise ContractError("concat_channels: empty input list")
    base = parts[0].shape
    for p in parts[1:]:
        if p.shape[0] != base[0] or p.shape[2:] != base[2:]:
            raise ShapeError("concat_channels: non-channel dims differ")
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                _accumulate(p, g[:, lo:hi])

    return _apply(np.concatenate([p.data for p in parts], axis=1), parts, bw)


# ---------------------------------------------------------------------------
# convolution / pooling / linear
# ---------------------------------------------------------------------------

def conv2d_output_size(size: int, k: int, stride: int, padding: int) -> int:
    """Output extent of one spatial axis: (size + 2*padding - k) // stride + 1."""
    return (size + 2 * padding - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, wo: int, ho: int) -> np.ndarray:
    b, c = xp.shape[:2]
    col = np.empty((b, c, k, k, wo, ho), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            col[:, :, i, j] = xp[:, :, i:i + wo * stride:stride,
                                 j:j + ho * stride:stride]
    return col


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``x`` is (B, Cin, W, H), ``kernel`` is (Cout, Cin, k, k) with k odd,
    ``bias`` is (Cout,).  out[b,o,x,y] = bias[o] +
    sum_{c,i,j} x[b,c,x*stride+i-padding, y*stride+j-padding] * kernel[o,c,i,j],
    reading out-of-range input as zero.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError("conv2d: input and kernel must be rank 4")
    b, cin, w, h = x.shape
    cout, kc, k, k2 = kernel.shape
    if k != k2:
        raise ConfigError(f"conv2d: kernel must be square, got {k}x{k2}")
    if k % 2 == 0:
        raise ConfigError(f"conv2d: kernel size must be odd, got {k}")
    if kc != cin:
        raise ShapeError(
            f"conv2d: input has {cin} channels but kernel expects {kc}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1:
        raise ConfigError(f"conv2d: stride must be positive, got {stride}")
    if padding < 0:
        raise ConfigError(f"conv2d: padding must be >= 0, got {padding}")
    if w + 2 * padding < k or h + 2 * padding < k:
        raise ShapeError(
            f"conv2d: {w}x{h} input too small for kernel {k} at padding {padding}")

    wo = conv2d_output_size(w, k, stride, padding)
    ho = conv2d_output_size(h, k, stride, padding)
    if padding > 0:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding),
                             (padding, padding)))
    else:
        xp = x.data
    col = _im2col(xp, k, stride, wo, ho)
    colm = col.reshape(b, cin * k * k, wo * ho)
    km = kernel.data.reshape(cout, cin * k * k)
    out = np.matmul(km, colm).reshape(b, cout, wo, ho)
    out += bias.data.reshape(1, cout, 1, 1)

    def bw(g):
        gm = g.reshape(b, cout, wo * ho)
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if kernel.requires_grad:
            gk = np.matmul(gm, colm.transpose(0, 2, 1)).sum(axis=0)
            _accumulate(kernel, gk.reshape(kernel.data.shape))
        if x.requires_grad:
            dcol = np.matmul(km.T, gm).reshape(b, cin, k, k, wo, ho)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + wo * stride:stride,
                        j:j + ho * stride:stride] += dcol[:, :, i, j]
            if padding > 0:
                gxp = gxp[:, :, padding:padding + w, padding:padding + h]
            _accumulate(x, gxp)

    return _apply(out, (x, kernel, bias), bw)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties route the gradient to the first max."""
    b, c, w, h = x.shape
    if w % 2 or h % 2:
        raise ShapeError(f"maxpool2x2: spatial size {w}x{h} not even")
    wo, ho = w // 2, h // 2
    windows = (x.data.reshape(b, c, wo, 2, ho, 2)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(b, c, wo, ho, 4))
    idx = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        if not x.requires_grad:
            return
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = (gw.reshape(b, c, wo, ho, 2, 2)
              .transpose(0, 1, 2, 4, 3, 5)
              .reshape(b, c, w, h))
        _accumulate(x, gx)

    return _apply(out, (x,), bw)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully-connected layer: (B, D) @ (D, L) + (L,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ShapeError("linear: input and weight must be rank 2")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"linear: {x.shape[1]} input features but weight expects {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias shape {bias.shape} mismatched")

    def bw(g):
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=0))
        if weight.requires_grad:
            _accumulate(weight, x.data.T @ g)
        if x.requires_grad:
            _accumulate(x, g @ weight.data.T)

    return _apply(x.data @ weight.data + bias.data, (x, weight, bias), bw)


def softmax_cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-softmax of the true class over the batch.

    Computed in the max-shifted form, so logits of any magnitude stay finite.
    """
    if logits.data.ndim != 2:
        raise ShapeError("softmax_cross_entropy: logits must be (B, L)")
    b, l = logits.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (b,):
        raise ShapeError(
            f"softmax_cross_entropy: {b} rows but {y.size} labels")
    if y.size and (y.min() < 0 or y.max() >= l):
        raise IndexError(
            f"softmax_cross_entropy: label out of range [0, {l})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exps = np.exp(shifted)
    denom = exps.sum(axis=1, keepdims=True)
    logp = shifted - np.log(denom)
    loss = -logp[np.arange(b), y].mean()
    softmax = exps / denom

    def bw(g):
        if logits.requires_grad:
            delta = softmax.copy()
            delta[np.arange(b), y] -= 1.0
            _accumulate(logits, (float(g) / b) * delta)

    return _apply(np.asarray(loss), (logits,), bw)


def broadcast_mul(images: Tensor, weight_map: Tensor) -> Tensor:
    """Multiply every image and channel by one shared (1, 1, W, H) map.

    The map gradient sums the upstream gradient over batch and channel, one
    contribution per broadcast copy.
    """
    if images.data.ndim != 4 or weight_map.data.ndim != 4:
        raise ShapeError("broadcast_mul: operands must be rank 4")
    if weight_map.shape[0] != 1 or weight_map.shape[1] != 1:
        raise ShapeError(
            f"broadcast_mul: map must be (1, 1, W, H), got {weight_map.shape}")
    if images.shape[2:] != weight_map.shape[2:]:
        raise ShapeError(
            f"broadcast_mul: spatial dims {images.shape[2:]} != {weight_map.shape[2:]}")

    def bw(g):
        if images.requires_grad:
            _accumulate(images, g * weight_map.data)
        if weight_map.requires_grad:
            _accumulate(weight_map,
                        (g * images.data).sum(axis=(0, 1), keepdims=True))

    return _apply(images.data * weight_map.data, (images, weight_map), bw)
