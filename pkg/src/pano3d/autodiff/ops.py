"""Differentiable operations.

Conventions:
  * Convolutions are cross-correlations (no kernel flip). Transposed
    convolutions are the exact adjoint of the matching convolution with the
    same stride/pad, so <conv(x,w), y> == <x, tconv(y,w)>.
  * max_reduce routes the incoming gradient to the first maximal element
    along the axis (lowest index wins ties).
  * Elementwise binary ops broadcast like numpy; backward sums the
    broadcast axes back out.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, active_tape

__all__ = [
    "add", "sub", "mul", "neg", "matmul", "sigmoid", "swish", "softmax",
    "layer_norm", "instance_norm", "concat", "reshape", "transpose",
    "getitem", "mean", "sum_", "max_reduce", "gather_rows", "dropout",
    "conv2d", "conv3d", "transposed_conv2d", "transposed_conv3d",
]


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _binary(a, b, fwd, bwd_a, bwd_b, op):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(fwd(a.data, b.data))
    tape = active_tape()
    if tape is None:
        return out
    na, nb = tape.needs_grad(a), tape.needs_grad(b)
    if not (na or nb):
        return out
    ash, bsh = a.data.shape, b.data.shape
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(bwd_a(g, ad, bd), ash) if na else None
        gb = _unbroadcast(bwd_b(g, ad, bd), bsh) if nb else None
        return ga, gb

    return tape.record(out, (a, b), bwd, op)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g, "add")


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g, "sub")


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x, "mul")


def neg(x):
    x = as_tensor(x)
    out = Tensor(-x.data)
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    return tape.record(out, (x,), lambda g: (-g,), "neg")


def matmul(a, b):
    """Matrix product; 2-D or batched with identical leading batch dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {tuple(a.shape)} @ {tuple(b.shape)}")
    if a.shape[:-2] != b.shape[:-2]:
        raise ValueError(
            f"matmul batch dims must match exactly: {tuple(a.shape)} @ {tuple(b.shape)}"
        )
    out = Tensor(a.data @ b.data)
    tape = active_tape()
    if tape is None:
        return out
    na, nb = tape.needs_grad(a), tape.needs_grad(b)
    if not (na or nb):
        return out
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ np.swapaxes(bd, -1, -2) if na else None
        gb = np.swapaxes(ad, -1, -2) @ g if nb else None
        return ga, gb

    return tape.record(out, (a, b), bwd, "matmul")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Stable: exp of a non-positive argument only.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)
    out = Tensor(y)
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    return tape.record(out, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def swish(x, beta=1.0):
    """x * sigmoid(beta * x); beta must be positive."""
    if beta <= 0:
        raise ValueError(f"swish beta must be positive, got {beta}")
    x = as_tensor(x)
    s = _sigmoid(beta * x.data)
    out = Tensor(x.data * s)
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    xd = x.data

    def bwd(g):
        return (g * (s + beta * xd * s * (1.0 - s)),)

    return tape.record(out, (x,), bwd, "swish")


def _check_axis(axis, ndim, op):
    if not -ndim <= axis < ndim:
        raise ValueError(f"{op}: axis {axis} out of range for {ndim}-D tensor")
    return axis % ndim


def softmax(x, axis=-1):
    x = as_tensor(x)
    axis = _check_axis(axis, x.ndim, "softmax")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return tape.record(out, (x,), bwd, "softmax")


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ValueError(
            f"layer_norm affine shapes {tuple(gain.shape)}/{tuple(bias.shape)} "
            f"do not match feature dim {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = Tensor(xh * gain.data + bias.data)
    tape = active_tape()
    if tape is None:
        return out
    nx, ng, nb = tape.needs_grad(x), tape.needs_grad(gain), tape.needs_grad(bias)
    if not (nx or ng or nb):
        return out
    gd = gain.data
    red = tuple(range(x.ndim - 1))

    def bwd(g):
        gx = None
        if nx:
            gh = g * gd
            gx = inv * (
                gh
                - gh.mean(axis=-1, keepdims=True)
                - xh * (gh * xh).mean(axis=-1, keepdims=True)
            )
        gg = (g * xh).sum(axis=red) if ng else None
        gb = g.sum(axis=red) if nb else None
        return gx, gg, gb

    return tape.record(out, (x, gain, bias), bwd, "layer_norm")


def instance_norm(x, eps=1e-5):
    """Normalize each (sample, channel) over its spatial axes; no affine."""
    x = as_tensor(x)
    if x.ndim < 3:
        raise ValueError(f"instance_norm needs (N, C, spatial...) input, got {x.shape}")
    axes = tuple(range(2, x.ndim))
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    out = Tensor(xh)
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out

    def bwd(g):
        return (
            inv
            * (
                g
                - g.mean(axis=axes, keepdims=True)
                - xh * (g * xh).mean(axis=axes, keepdims=True)
            ),
        )

    return tape.record(out, (x,), bwd, "instance_norm")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of empty list")
    axis = _check_axis(axis, tensors[0].ndim, "concat")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    tape = active_tape()
    if tape is None:
        return out
    need = [tape.needs_grad(t) for t in tensors]
    if not any(need):
        return out
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        outs = []
        for k, n in enumerate(need):
            if not n:
                outs.append(None)
                continue
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[k], offsets[k + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return tape.record(out, tuple(tensors), bwd, "concat")


def reshape(x, shape):
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    orig = x.data.shape
    return tape.record(out, (x,), lambda g: (g.reshape(orig),), "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    out = Tensor(x.data.transpose(axes))
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    inv = np.argsort(axes)
    return tape.record(out, (x,), lambda g: (g.transpose(inv),), "transpose")


def getitem(x, key):
    """Basic (slice/int/ellipsis) indexing with scatter backward."""
    x = as_tensor(x)
    out = Tensor(x.data[key])
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    shape, dtype = x.data.shape, x.data.dtype

    def bwd(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[key] = g
        return (gx,)

    return tape.record(out, (x,), bwd, "getitem")


def _reduce(x, axis, keepdims, op):
    x = as_tensor(x)
    if axis is not None:
        ax = axis if isinstance(axis, tuple) else (axis,)
        ax = tuple(_check_axis(a, x.ndim, op) for a in ax)
    else:
        ax = None
    return x, ax


def mean(x, axis=None, keepdims=False):
    x, ax = _reduce(x, axis, keepdims, "mean")
    out = Tensor(x.data.mean(axis=ax, keepdims=keepdims))
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    shape = x.data.shape
    count = x.data.size if ax is None else int(np.prod([shape[a] for a in ax]))

    def bwd(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape) / count,)

    return tape.record(out, (x,), bwd, "mean")


def sum_(x, axis=None, keepdims=False):
    x, ax = _reduce(x, axis, keepdims, "sum")
    out = Tensor(x.data.sum(axis=ax, keepdims=keepdims))
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    shape = x.data.shape

    def bwd(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return tape.record(out, (x,), bwd, "sum")


def max_reduce(x, axis):
    """Max along one axis; gradient goes to the first maximal element only."""
    x = as_tensor(x)
    axis = _check_axis(axis, x.ndim, "max_reduce")
    out = Tensor(x.data.max(axis=axis))
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)  # argmax = first max
    shape, dtype = x.data.shape, x.data.dtype

    def bwd(g):
        gx = np.zeros(shape, dtype=dtype)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
        return (gx,)

    return tape.record(out, (x,), bwd, "max_reduce")


def gather_rows(table, idx):
    """table[idx] for a 2-D table and integer index vector.

    Backward is a scatter-add into the touched rows (via bincount, summed
    serially, so batch gradients are order-independent).
    """
    table = as_tensor(table)
    if table.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-D table, got {table.shape}")
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("gather_rows index must be integral")
    out = Tensor(table.data[idx])
    tape = active_tape()
    if tape is None or not tape.needs_grad(table):
        return out
    rows, feats = table.shape
    dtype = table.data.dtype
    flat_idx = idx.reshape(-1)

    def bwd(g):
        g2 = g.reshape(-1, feats)
        gt = np.empty((rows, feats), dtype=dtype)
        for f in range(feats):
            gt[:, f] = np.bincount(flat_idx, weights=g2[:, f], minlength=rows)
        return (gt,)

    return tape.record(out, (table,), bwd, "gather_rows")


def dropout(x, p, rng):
    """Inverted-scaling dropout; caller passes a per-step seeded Generator."""
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / np.asarray(
        1.0 - p, dtype=x.data.dtype
    )
    out = Tensor(x.data * mask)
    tape = active_tape()
    if tape is None or not tape.needs_grad(x):
        return out
    return tape.record(out, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------------------
# Convolutions (im2col + GEMM; cross-correlation convention)
# ---------------------------------------------------------------------------


def _pair(v, n, name):
    if isinstance(v, (tuple, list)):
        vals = tuple(int(x) for x in v)
        if len(vals) != n:
            raise ValueError(f"{name} must have {n} entries, got {v}")
    else:
        vals = (int(v),) * n
    return vals


def _conv_geometry(x_spatial, k_spatial, stride, pad, op):
    nd = len(x_spatial)
    stride = _pair(stride, nd, f"{op} stride")
    pad = _pair(pad, nd, f"{op} pad")
    if any(s <= 0 for s in stride):
        raise ValueError(f"{op}: stride must be positive, got {stride}")
    if any(p < 0 for p in pad):
        raise ValueError(f"{op}: pad must be non-negative, got {pad}")
    out_spatial = []
    for dim, k, s, p in zip(x_spatial, k_spatial, stride, pad):
        span = dim + 2 * p - k
        if span < 0:
            raise ValueError(
                f"{op}: kernel {k_spatial} does not fit input {x_spatial} with pad {pad}"
            )
        out_spatial.append(span // s + 1)
    return stride, pad, tuple(out_spatial)


def _im2col(xp: np.ndarray, k_spatial, stride, out_spatial):
    """(N, C, *padded) -> (N * prod(out), C * prod(k)) view-backed copy."""
    n, c = xp.shape[:2]
    nd = len(k_spatial)
    win = sliding_window_view(xp, k_spatial, axis=tuple(range(2, 2 + nd)))
    # win: (N, C, *out_full, *k); subsample by stride
    sl = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    win = win[sl]
    # -> (N, *out, C, *k)
    perm = (0,) + tuple(range(2, 2 + nd)) + (1,) + tuple(range(2 + nd, 2 + 2 * nd))
    cols = win.transpose(perm).reshape(
        n * int(np.prod(out_spatial)), c * int(np.prod(k_spatial))
    )
    return np.ascontiguousarray(cols)


def _col2im(cols: np.ndarray, x_padded_shape, k_spatial, stride, out_spatial):
    """Adjoint of _im2col: scatter-add column gradients back to the padded input."""
    n, c = x_padded_shape[:2]
    nd = len(k_spatial)
    xp = np.zeros(x_padded_shape, dtype=cols.dtype)
    cols = cols.reshape((n,) + tuple(out_spatial) + (c,) + tuple(k_spatial))
    perm = (0, 1 + nd) + tuple(range(1, 1 + nd)) + tuple(range(2 + nd, 2 + 2 * nd))
    cols = cols.transpose(perm)  # (N, C, *out, *k)
    if nd == 2:
        kh, kw = k_spatial
        sh, sw = stride
        oh, ow = out_spatial
        for i in range(kh):
            for j in range(kw):
                xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += cols[
                    :, :, :, :, i, j
                ]
    else:
        kd, kh, kw = k_spatial
        sd, sh, sw = stride
        od, oh, ow = out_spatial
        for a in range(kd):
            for i in range(kh):
                for j in range(kw):
                    xp[
                        :,
                        :,
                        a : a + sd * od : sd,
                        i : i + sh * oh : sh,
                        j : j + sw * ow : sw,
                    ] += cols[:, :, :, :, :, a, i, j]
    return xp


def _pad_input(x, pad):
    if not any(pad):
        return x
    return np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in pad))


def _unpad(xp, pad, spatial):
    sl = (slice(None), slice(None)) + tuple(
        slice(p, p + d) for p, d in zip(pad, spatial)
    )
    return xp[sl]


def _conv(x, w, b, stride, pad, nd, op):
    x, w = as_tensor(x), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ValueError(f"{op}: expected {nd + 2}-D input/weight, got {x.shape}/{w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"{op}: channel mismatch, input has {x.shape[1]} channels, weight expects {w.shape[1]}"
        )
    n, c = x.shape[:2]
    o = w.shape[0]
    k_spatial = tuple(w.shape[2:])
    stride, pad, out_spatial = _conv_geometry(tuple(x.shape[2:]), k_spatial, stride, pad, op)
    if b is not None and b.shape != (o,):
        raise ValueError(f"{op}: bias shape {tuple(b.shape)} != ({o},)")

    xp = _pad_input(x.data, pad)
    cols = _im2col(xp, k_spatial, stride, out_spatial)
    wmat = w.data.reshape(o, -1)
    out2 = cols @ wmat.T
    if b is not None:
        out2 = out2 + b.data
    out_nd = out2.reshape((n,) + tuple(out_spatial) + (o,))
    perm = (0, nd + 1) + tuple(range(1, nd + 1))
    out = Tensor(np.ascontiguousarray(out_nd.transpose(perm)))

    tape = active_tape()
    if tape is None:
        return out
    inputs = (x, w) if b is None else (x, w, b)
    need = [tape.needs_grad(t) for t in inputs]
    if not any(need):
        return out
    xp_shape = xp.shape
    x_spatial = tuple(x.shape[2:])
    inv_perm = (0,) + tuple(range(2, nd + 2)) + (1,)

    def bwd(g):
        g2 = g.transpose(inv_perm).reshape(-1, o)
        gx = gw = gb = None
        if need[0]:
            gcols = g2 @ wmat
            gxp = _col2im(gcols, xp_shape, k_spatial, stride, out_spatial)
            gx = np.ascontiguousarray(_unpad(gxp, pad, x_spatial))
        if need[1]:
            gw = (g2.T @ cols).reshape(w.data.shape)
        if b is not None and need[2]:
            gb = g2.sum(axis=0)
        return (gx, gw) if b is None else (gx, gw, gb)

    return tape.record(out, inputs, bwd, op)


def conv2d(x, w, b=None, stride=1, pad=0):
    """Cross-correlate (N,C,H,W) with (O,C,kh,kw) -> (N,O,H',W')."""
    return _conv(x, w, b, stride, pad, 2, "conv2d")


def conv3d(x, w, b=None, stride=1, pad=0):
    """Cross-correlate (N,C,D,H,W) with (O,C,kd,kh,kw) -> (N,O,D',H',W')."""
    return _conv(x, w, b, stride, pad, 3, "conv3d")


def _transposed_conv(y, w, b, stride, pad, nd, op):
    """Adjoint of _conv w.r.t. its input, used as a forward op.

    Weight keeps the convolution layout (O, C, *k); y has O channels and the
    output has C channels with spatial dims (in-1)*stride + k - 2*pad.
    """
    y, w = as_tensor(y), as_tensor(w)
    b = as_tensor(b) if b is not None else None
    if y.ndim != nd + 2 or w.ndim != nd + 2:
        raise ValueError(f"{op}: expected {nd + 2}-D input/weight, got {y.shape}/{w.shape}")
    o, c = w.shape[0], w.shape[1]
    if y.shape[1] != o:
        raise ValueError(
            f"{op}: channel mismatch, input has {y.shape[1]} channels, weight expects {o}"
        )
    n = y.shape[0]
    k_spatial = tuple(w.shape[2:])
    in_spatial = tuple(y.shape[2:])
    stride = _pair(stride, nd, f"{op} stride")
    pad = _pair(pad, nd, f"{op} pad")
    if any(s <= 0 for s in stride):
        raise ValueError(f"{op}: stride must be positive, got {stride}")
    out_spatial = tuple(
        (i - 1) * s + k - 2 * p for i, s, k, p in zip(in_spatial, stride, k_spatial, pad)
    )
    if any(d <= 0 for d in out_spatial):
        raise ValueError(f"{op}: output dims {out_spatial} must be positive")
    if b is not None and b.shape != (c,):
        raise ValueError(f"{op}: bias shape {tuple(b.shape)} != ({c},)")

    xp_shape = (n, c) + tuple(d + 2 * p for d, p in zip(out_spatial, pad))
    wmat = w.data.reshape(o, -1)
    perm_in = (0,) + tuple(range(2, nd + 2)) + (1,)
    y2 = np.ascontiguousarray(y.data.transpose(perm_in)).reshape(-1, o)
    cols = y2 @ wmat
    outp = _col2im(cols, xp_shape, k_spatial, stride, in_spatial)
    out_arr = np.ascontiguousarray(_unpad(outp, pad, out_spatial))
    if b is not None:
        out_arr = out_arr + b.data.reshape((1, c) + (1,) * nd)
    out = Tensor(out_arr)

    tape = active_tape()
    if tape is None:
        return out
    inputs = (y, w) if b is None else (y, w, b)
    need = [tape.needs_grad(t) for t in inputs]
    if not any(need):
        return out
    perm_out = (0, nd + 1) + tuple(range(1, nd + 1))
    y_shape = y.data.shape

    def bwd(g):
        gp = _pad_input(g, pad)
        gy = gw = gb = None
        gcols = None
        if need[0] or need[1]:
            gcols = _im2col(gp, k_spatial, stride, in_spatial)
        if need[0]:
            gy2 = gcols @ wmat.T
            gy = np.ascontiguousarray(
                gy2.reshape((n,) + in_spatial + (o,)).transpose(perm_out)
            )
        if need[1]:
            gw = (y2.T @ gcols).reshape(w.data.shape)
        if b is not None and need[2]:
            gb = g.sum(axis=(0,) + tuple(range(2, nd + 2)))
        return (gy, gw) if b is None else (gy, gw, gb)

    return tape.record(out, inputs, bwd, op)


def transposed_conv2d(y, w, b=None, stride=1, pad=0):
    """Gradient of conv2d w.r.t. its input, reused as a forward upsampling op."""
    return _transposed_conv(y, w, b, stride, pad, 2, "transposed_conv2d")


def transposed_conv3d(y, w, b=None, stride=1, pad=0):
    return _transposed_conv(y, w, b, stride, pad, 3, "transposed_conv3d")
