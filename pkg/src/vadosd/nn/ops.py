"""Differentiable operators over :class:`Tensor`.

Layout conventions: sequence tensors are channels-last, ``B x T x C``;
``linear`` works on the last axis of any rank. No general broadcasting is
provided; operands must have matching shapes unless an
operator documents otherwise.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, make_result


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same("add", a, b)
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same("sub", a, b)
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same("mul", a, b)
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    f = x.data.dtype.type(factor)
    return make_result(x.data * f, (x,), lambda g: (g * f,), "scale")


def square(x: Tensor) -> Tensor:
    return make_result(x.data * x.data, (x,), lambda g: (2 * g * x.data,), "square")


def log(x: Tensor, offset: float = 0.0) -> Tensor:
    """Natural log of ``x + offset``."""
    shifted = x.data + x.data.dtype.type(offset)
    return make_result(np.log(shifted), (x,), lambda g: (g / shifted,), "log")


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    src = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def sum(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:  # noqa: A001
    out = np.sum(x.data, axis=axis, keepdims=True)

    def backward(g):
        return (np.broadcast_to(g.reshape(out.shape), x.shape).copy(),)

    squeezed = out.reshape(()) if axis is None else np.squeeze(out, axis=axis)
    return make_result(squeezed, (x,), backward, "sum")


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum(x, axis), 1.0 / n)


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return make_result(np.where(active, x.data, 0).astype(x.dtype), (x,), lambda g: (g * active,), "relu")


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """Parametric ReLU with one slope per channel (last axis)."""
    if alpha.ndim != 1 or alpha.shape[0] != x.shape[-1]:
        raise ValueError(f"prelu: slope shape {alpha.shape} incompatible with input {x.shape}")
    slope = np.where(x.data < 0, alpha.data, x.dtype.type(1))
    out = x.data * slope

    def backward(g):
        gx = g * slope if x.requires_grad else None
        ga = None
        if alpha.requires_grad:
            ga = (g * np.minimum(x.data, 0)).reshape(-1, alpha.shape[0]).sum(axis=0)
        return gx, ga

    return make_result(out, (x, alpha), backward, "prelu")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is ``out x in``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias {bias.shape} incompatible with weight {weight.shape}")
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[0])

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "linear")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``np.matmul`` with gradients; a 2-d left operand is shared across the batch of ``b``."""
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            while ga.ndim > a.ndim:
                ga = ga.sum(axis=0)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            while gb.ndim > b.ndim:
                gb = gb.sum(axis=0)
        return ga, gb

    return make_result(out, (a, b), backward, "matmul")


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with explicit output subscripts.

    Every subscript of an operand must appear in the output or in the other
    operand, which is what makes the gradient another einsum.
    """
    inputs, out_sub = spec.replace(" ", "").split("->")
    sa, sb = inputs.split(",")
    for own, other in ((sa, sb), (sb, sa)):
        missing = set(own) - set(out_sub) - set(other)
        if missing:
            raise ValueError(f"einsum {spec!r}: subscripts {sorted(missing)} are summed out of one operand only")
    out = np.einsum(spec, a.data, b.data, optimize=True)

    def backward(g):
        ga = np.einsum(f"{out_sub},{sb}->{sa}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_sub},{sa}->{sb}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward, "einsum")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - np.sum(g * p, axis=axis, keepdims=True)),)

    return make_result(p, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * np.sum(g, axis=axis, keepdims=True),)

    return make_result(out, (x,), backward, "log_softmax")


def masked_cross_entropy(logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood over unmasked frames.

    ``logits`` is ``B x T x C``; ``targets`` integer ``B x T``; ``mask`` boolean
    ``B x T`` (True = frame counts). Masked frames receive exactly zero
    gradient.
    """
    if logits.ndim != 3 or targets.shape != logits.shape[:2]:
        raise ValueError(f"masked_cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    if mask is None:
        mask = np.ones(targets.shape, dtype=bool)
    if mask.shape != targets.shape:
        raise ValueError(f"masked_cross_entropy: mask {mask.shape} vs targets {targets.shape}")
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise ValueError("masked_cross_entropy: every frame is masked")
    z = logits.data
    shifted = z - z.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    idx = targets.astype(np.intp)[..., None]
    picked = np.take_along_axis(logp, idx, axis=-1)[..., 0]
    weights = mask.astype(z.dtype) / z.dtype.type(n_valid)
    loss = -np.sum(picked * weights)

    def backward(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, idx, np.take_along_axis(grad, idx, axis=-1) - 1, axis=-1)
        return (grad * (weights[..., None] * g),)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward, "masked_cross_entropy")


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each frame across channels (last axis), then apply a per-channel affine map.

    Statistics are per frame, so the operator is local in time and batch-free.
    """
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"channel_norm: input {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        ggamma = (g * xhat).reshape(-1, C).sum(axis=0) if gamma.requires_grad else None
        gbeta = g.reshape(-1, C).sum(axis=0) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "channel_norm")


def affine_const(x: Tensor, shift: np.ndarray, scale_: np.ndarray) -> Tensor:
    """``(x - shift) * scale_`` with constant, broadcastable statistics."""
    s = np.asarray(scale_, dtype=x.dtype)
    out = (x.data - np.asarray(shift, dtype=x.dtype)) * s
    return make_result(out, (x,), lambda g: (np.broadcast_to(g * s, x.shape).copy(),), "affine_const")


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, dilation: int = 1, padding: int | str = "same") -> Tensor:
    """Stride-1 1-d convolution (cross-correlation) over the time axis of a ``B x T x Cin`` input.

    ``weight`` is ``Cout x Cin x K``. ``padding="same"`` zero-pads
    ``dilation*(K-1)/2`` frames on each side (K must be odd); an integer pads
    that many frames on both sides. Implemented as one GEMM over an
    unfolded ``(B*T) x (K*Cin)`` matrix.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ValueError(f"conv1d: input {x.shape} incompatible with weight {weight.shape}")
    B, T, cin = x.shape
    cout, _, K = weight.shape
    if padding == "same":
        if K % 2 == 0:
            raise ValueError(f"conv1d: 'same' padding needs an odd kernel, got K={K}")
        pad = dilation * (K - 1) // 2
    else:
        pad = int(padding)
    t_out = T + 2 * pad - dilation * (K - 1)
    if t_out < 1:
        raise ValueError(f"conv1d: input length {T} too short for kernel {K} at dilation {dilation}")

    w2 = weight.data.transpose(2, 1, 0).reshape(K * cin, cout)
    if K == 1 and pad == 0:
        cols = x.data.reshape(B * T, cin)
    else:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0))) if pad else x.data
        cols = np.concatenate([xp[:, k * dilation : k * dilation + t_out, :] for k in range(K)], axis=2)
        cols = cols.reshape(B * t_out, K * cin)
    out = cols @ w2
    if bias is not None:
        out += bias.data
    out = out.reshape(B, t_out, cout)

    def backward(g):
        gx = gw = gb = None
        g2 = g.reshape(B * t_out, cout)
        if weight.requires_grad:
            gw = (cols.T @ g2).reshape(K, cin, cout).transpose(2, 1, 0)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=0)
        if x.requires_grad:
            gcols = g2 @ w2.T
            if K == 1 and pad == 0:
                gx = gcols.reshape(B, T, cin)
            else:
                gcols = gcols.reshape(B, t_out, K, cin)
                gxp = np.zeros((B, T + 2 * pad, cin), dtype=g.dtype)
                for k in range(K):
                    gxp[:, k * dilation : k * dilation + t_out, :] += gcols[:, :, k, :]
                gx = gxp[:, pad : pad + T, :] if pad else gxp
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, backward, "conv1d")


__all__ = [
    "add",
    "affine_const",
    "as_tensor",
    "channel_norm",
    "conv1d",
    "dropout",
    "einsum",
    "linear",
    "log",
    "log_softmax",
    "masked_cross_entropy",
    "matmul",
    "mean",
    "mul",
    "prelu",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "square",
    "sub",
    "sum",
    "transpose",
]
