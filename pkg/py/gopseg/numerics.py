# Licensed under a 3-clause BSD style license - see LICENSE.rst
# -*- coding: utf-8 -*-
"""
gopseg.numerics
=======================

A small deterministic tensor kernel with reverse-mode differentiation.

Every layer used by the segmentation pipeline is built from the operations
in this module.  Operations record a tape (the parents of each result and a
closure returning the parent gradients) when any input requires a gradient,
and :func:`backward` walks the tape in reverse topological order.

Arrays use single precision by default.  Gradient checks switch to double
precision with the :func:`default_dtype` context manager.

"""
from __future__ import absolute_import, division, print_function

import os
import struct

from collections import OrderedDict
from contextlib import contextmanager

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

from scipy.special import expit, log_expit

from .utils import Logger, ShapeError, CheckpointError, NonFiniteError


class _State(object):
    def __init__(self):
        self.dtype = np.float32
        self.grad_enabled = True


_state = _State()

# Additive bias on attention logits of masked keys.  exp() of this offset
# underflows to exactly zero in both precisions.
MASK_BIAS = -1.0e9


def get_default_dtype():
    return _state.dtype


def set_default_dtype(dtype):
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("unsupported dtype {}".format(dtype))
    _state.dtype = dtype


@contextmanager
def default_dtype(dtype):
    """Temporarily change the precision of newly created tensors.
    """
    old = _state.dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


@contextmanager
def no_grad():
    """Disable tape recording (evaluation and finite differences).
    """
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


class FlopCounter(object):
    """Accumulate multiply-accumulate counts of the heavy operations.

    Use as a context manager; counters can be nested.

    """
    _active = list()

    def __init__(self):
        self.macs = 0
        self.by_op = OrderedDict()

    @property
    def flops(self):
        return 2 * self.macs

    def __enter__(self):
        FlopCounter._active.append(self)
        return self

    def __exit__(self, *args):
        FlopCounter._active.remove(self)
        return False


def _count_macs(op, macs):
    for ctr in FlopCounter._active:
        ctr.macs += int(macs)
        ctr.by_op[op] = ctr.by_op.get(op, 0) + int(macs)


class Tensor(object):
    """Dense array with an optional gradient accumulator.

    Args:
        data (array_like):  The values.  Converted to the default dtype.
        requires_grad (bool):  If True, gradients are accumulated into
            ``grad`` by :func:`backward`.

    """

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=_state.dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return "Tensor(shape={}, requires_grad={})".format(
            self.shape, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A learnable tensor.

    The name is assigned from the attribute path inside the owning model
    (see :meth:`Module.name_parameters`).  The momentum buffer is used by
    :func:`sgd_momentum_step`.

    """

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.momentum_buffer = np.zeros_like(self.data)

    @property
    def tensor(self):
        return self

    def __repr__(self):
        return "Parameter(name={}, shape={})".format(self.name, self.shape)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(data, parents, backward_fn):
    out = Tensor(data)
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back to the operand shape.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, length in enumerate(shape):
        if length == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op, ashape, bshape):
    try:
        return np.broadcast_shapes(ashape, bshape)
    except ValueError:
        raise ShapeError("{}: shapes {} and {} are not broadcastable"
                         .format(op, ashape, bshape))


# ---------------------------------------------------------------------------
# Elementwise and structural operations
# ---------------------------------------------------------------------------

def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)

    def _bw(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), _bw)


def neg(a):
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)

    def _bw(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), _bw)


def broadcast_mul(a, b):
    """Element-wise product after duplicating singleton axes.

    Both operands must have the same rank, and every axis must either match
    or have length one in one of the operands.

    """
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim != b.ndim:
        raise ShapeError("broadcast_mul: rank {} vs rank {}"
                         .format(a.ndim, b.ndim))
    for axis, (la, lb) in enumerate(zip(a.shape, b.shape)):
        if la != lb and la != 1 and lb != 1:
            raise ShapeError("broadcast_mul: axis {} has lengths {} and {}"
                             .format(axis, la, lb))
    return mul(a, b)


def expand(a, shape):
    """Explicitly broadcast singleton axes to ``shape``.
    """
    a = _as_tensor(a)
    shape = tuple(shape)
    if _broadcast_shape("expand", a.shape, shape) != shape:
        raise ShapeError("expand: cannot expand {} to {}".format(a.shape, shape))
    return _result(np.broadcast_to(a.data, shape).copy(), (a,),
                   lambda g: (_unbroadcast(g, a.shape),))


def reshape(a, shape):
    a = _as_tensor(a)
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inv),))


def getitem(a, index):
    a = _as_tensor(a)

    def _bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, index, g)
        return (ga,)

    return _result(a.data[index], (a,), _bw)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    if len(tensors) == 0:
        raise ShapeError("concat: no tensors")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors[1:]:
        if t.ndim != ndim:
            raise ShapeError("concat: rank {} vs rank {}".format(ndim, t.ndim))
        for i in range(ndim):
            if i != ax and t.shape[i] != tensors[0].shape[i]:
                raise ShapeError(
                    "concat: axis {} has lengths {} and {}"
                    .format(i, tensors[0].shape[i], t.shape[i]))
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax),
                   tensors, _bw)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), _bw)


def mean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[x] for x in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reciprocal(a):
    a = _as_tensor(a)
    inv = 1.0 / a.data
    return _result(inv, (a,), lambda g: (-g * inv * inv,))


def relu(a):
    a = _as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = _as_tensor(a)
    s = expit(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),))


def softmax(a, axis=-1):
    """Softmax along ``axis`` with max subtraction.
    """
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (a,), _bw)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def _bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _result(y, (a,), _bw)


def bce_with_logits(logits, targets):
    """Element-wise binary cross-entropy on logits.

    Args:
        logits (Tensor):  Raw scores.
        targets (array):  Soft targets in [0, 1], same shape as logits.

    Returns:
        (Tensor):  Per-element loss.

    """
    logits = _as_tensor(logits)
    t = np.asarray(targets, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ShapeError("bce_with_logits: logits {} vs targets {}"
                         .format(logits.shape, t.shape))
    x = logits.data
    loss = -(t * log_expit(x) + (1.0 - t) * log_expit(-x))

    def _bw(g):
        return (g * (expit(x) - t),)

    return _result(loss, (logits,), _bw)


def layer_norm(a, gamma=None, beta=None, eps=1.0e-5):
    """Normalize over the last axis, then apply the optional affine map.
    """
    a = _as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    parents = [a]
    y = xhat
    if gamma is not None:
        parents.append(gamma)
        y = y * gamma.data
    if beta is not None:
        parents.append(beta)
        y = y + beta.data

    def _bw(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gamma.data if gamma is not None else g
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=lead))
        if beta is not None:
            grads.append(g.sum(axis=lead))
        return tuple(grads)

    return _result(y, parents, _bw)


# ---------------------------------------------------------------------------
# Linear algebra and convolutions
# ---------------------------------------------------------------------------

def matmul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul: operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul: axis -1 of {} does not match axis -2 of {}"
                         .format(a.shape, b.shape))
    out = np.matmul(a.data, b.data)
    _count_macs("matmul", out.size * a.shape[-1])

    def _bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _result(out, (a, b), _bw)


def linear(x, weight, bias=None):
    """Affine map over the last axis: ``x @ weight.T + bias``.
    """
    x = _as_tensor(x)
    if weight.ndim != 2:
        raise ShapeError("linear: weight must have rank 2")
    dout, din = weight.shape
    if x.shape[-1] != din:
        raise ShapeError("linear: input axis {} has length {} but weight "
                         "expects {}".format(x.ndim - 1, x.shape[-1], din))
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, din)
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    _count_macs("linear", x2.shape[0] * din * dout)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def _bw(g):
        g2 = g.reshape(-1, dout)
        grads = [(g2 @ weight.data).reshape(x.shape), g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    return _result(out.reshape(lead + (dout,)), parents, _bw)


def conv2d(x, weight, bias=None, stride=1, pad=None, pad_mode="zeros"):
    """2D cross-correlation.

    Args:
        x (Tensor):  Input of shape [C_in, H, W] or [N, C_in, H, W].
        weight (Tensor):  Kernel of shape [C_out, C_in, k, k], k odd.
        bias (Tensor):  Optional [C_out].
        stride (int):  Spatial stride.
        pad (int):  Padding; defaults to k // 2 ("same" for stride 1).
        pad_mode (str):  "zeros", or "edge" to replicate the border pixels.

    Returns:
        (Tensor):  Output with the same rank as the input.

    """
    x = _as_tensor(x)
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError("conv2d: weight shape {} is not [C_out, C_in, k, k]"
                         .format(weight.shape))
    cout, cin, k, _ = weight.shape
    if k % 2 == 0:
        raise ShapeError("conv2d: kernel size {} is not odd".format(k))
    if stride < 1:
        raise ShapeError("conv2d: stride must be >= 1")
    single = (x.ndim == 3)
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ShapeError("conv2d: input rank {} is not 3 or 4".format(x.ndim))
    n, c, h, w = xd.shape
    if c != cin:
        raise ShapeError("conv2d: input channel axis {} has length {} but "
                         "weight expects {}".format(x.ndim - 3, c, cin))
    if pad is None:
        pad = k // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: input {}x{} too small for kernel {}"
                         .format(h, w, k))
    if pad_mode not in ("zeros", "edge"):
        raise ValueError("unknown pad_mode {}".format(pad_mode))
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)),
                mode=("constant" if pad_mode == "zeros" else "edge"))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    w2 = weight.data.reshape(cout, c * k * k)
    out = np.matmul(w2, cols)
    if bias is not None:
        out = out + bias.data[:, None]
    out = out.reshape(n, cout, ho, wo)
    _count_macs("conv2d", n * cout * c * k * k * ho * wo)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def _bw(g):
        g = g[None] if single else g
        g2 = g.reshape(n, cout, ho * wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
        gcols = np.matmul(w2.T, g2).reshape(n, c, k, k, ho, wo)
        gxp = np.zeros_like(xp)
        ylim = stride * (ho - 1) + 1
        xlim = stride * (wo - 1) + 1
        for ky in range(k):
            for kx in range(k):
                gxp[:, :, ky:ky + ylim:stride, kx:kx + xlim:stride] += \
                    gcols[:, :, ky, kx]
        if pad_mode == "edge":
            gx = _fold_edge_grad(gxp, pad)
        else:
            gx = gxp[:, :, pad:pad + h, pad:pad + w]
        if single:
            gx = gx[0]
        grads = [gx, gw.reshape(weight.shape)]
        if bias is not None:
            grads.append(g2.sum(axis=(0, 2)))
        return tuple(grads)

    return _result(out[0] if single else out, parents, _bw)


def _fold_edge_grad(gxp, pad):
    # Gradient of edge padding: border copies accumulate into the border.
    if pad == 0:
        return gxp
    g = gxp[:, :, pad:-pad].copy()
    g[:, :, 0] += gxp[:, :, :pad].sum(axis=2)
    g[:, :, -1] += gxp[:, :, -pad:].sum(axis=2)
    out = g[:, :, :, pad:-pad].copy()
    out[:, :, :, 0] += g[:, :, :, :pad].sum(axis=3)
    out[:, :, :, -1] += g[:, :, :, -pad:].sum(axis=3)
    return out


def avg_pool2d(x, factor):
    """Non-overlapping area average over factor x factor cells.

    Works on any array whose last two axes are divisible by factor.

    """
    x = _as_tensor(x)
    h, w = x.shape[-2:]
    if h % factor != 0 or w % factor != 0:
        raise ShapeError("avg_pool2d: {}x{} is not divisible by {}"
                         .format(h, w, factor))
    lead = x.shape[:-2]
    cells = reshape(x, lead + (h // factor, factor, w // factor, factor))
    nd = len(lead)
    return mean(cells, axis=(nd + 1, nd + 3))


def conv3d(x, weight, bias=None, stride_t=1):
    """Temporal convolution with kernel 3 along T and 1x1 spatially.

    The temporal axis is padded by one frame on each side by replicating the
    edge frames, so T' = ceil(T / stride_t).

    Args:
        x (Tensor):  Input of shape [C_in, T, H, W].
        weight (Tensor):  Kernel of shape [C_out, C_in, 3, 1, 1].
        bias (Tensor):  Optional [C_out].
        stride_t (int):  Temporal stride.

    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeError("conv3d: input rank {} is not 4".format(x.ndim))
    cin, t, h, w = x.shape
    if t < 1:
        raise ShapeError("conv3d: temporal extent must be >= 1")
    if weight.ndim != 5 or weight.shape[2:] != (3, 1, 1):
        raise ShapeError("conv3d: weight shape {} is not [C_out, C_in, 3, 1, 1]"
                         .format(weight.shape))
    cout = weight.shape[0]
    if weight.shape[1] != cin:
        raise ShapeError("conv3d: input channel axis 0 has length {} but "
                         "weight expects {}".format(cin, weight.shape[1]))
    s = int(stride_t)
    to = (t - 1) // s + 1
    xp = np.concatenate([x.data[:, :1], x.data, x.data[:, -1:]], axis=1)
    tlim = s * (to - 1) + 1
    taps = [weight.data[:, :, dt, 0, 0] for dt in range(3)]
    out = np.zeros((cout, to, h, w), dtype=x.dtype)
    for dt in range(3):
        out += np.tensordot(taps[dt], xp[:, dt:dt + tlim:s], axes=(1, 0))
    if bias is not None:
        out += bias.data[:, None, None, None]
    _count_macs("conv3d", 3 * cout * cin * to * h * w)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def _bw(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for dt in range(3):
            xs = xp[:, dt:dt + tlim:s]
            gw[:, :, dt, 0, 0] = np.tensordot(g, xs, axes=((1, 2, 3), (1, 2, 3)))
            gxp[:, dt:dt + tlim:s] += np.tensordot(taps[dt].T, g, axes=(1, 0))
        gx = gxp[:, 1:-1].copy()
        gx[:, 0] += gxp[:, 0]
        gx[:, -1] += gxp[:, -1]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return tuple(grads)

    return _result(out, parents, _bw)


def _interp_matrix(n_in, n_out, dtype):
    # Half-pixel centers, edge clamped.
    src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - w1)
    np.add.at(mat, (rows, i1), w1)
    return mat.astype(dtype)


def bilinear_resize(x, out_h, out_w):
    """Bilinear resampling of the last two axes.
    """
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("bilinear_resize: input rank must be >= 2")
    h, w = x.shape[-2:]
    ry = _interp_matrix(h, out_h, x.dtype)
    rx = _interp_matrix(w, out_w, x.dtype)
    out = np.matmul(np.matmul(ry, x.data), rx.T)

    def _bw(g):
        return (np.matmul(np.matmul(ry.T, g), rx),)

    return _result(out, (x,), _bw)


def multi_head_attention(q, k, v, heads, w_q, w_k, w_v, w_o,
                         b_q=None, b_k=None, b_v=None, b_o=None,
                         key_padding_mask=None, return_weights=False):
    """Scaled dot-product attention with ``heads`` heads.

    Args:
        q (Tensor):  Queries [L_q, D].
        k (Tensor):  Keys [L_k, D].
        v (Tensor):  Values [L_k, D].
        heads (int):  Number of heads; must divide D.
        w_q, w_k, w_v, w_o (Tensor):  [D, D] projections (b_* optional biases).
        key_padding_mask (array):  Optional boolean [L_k], True marks keys
            that receive zero attention weight.
        return_weights (bool):  Also return the [heads, L_q, L_k] weights.

    Returns:
        (Tensor):  [L_q, D] output (and the weights tensor if requested).

    """
    q = _as_tensor(q)
    k = _as_tensor(k)
    v = _as_tensor(v)
    d = q.shape[-1]
    if d % heads != 0:
        raise ShapeError("multi_head_attention: width {} is not divisible by "
                         "{} heads".format(d, heads))
    if k.shape[0] != v.shape[0]:
        raise ShapeError("multi_head_attention: {} keys vs {} values"
                         .format(k.shape[0], v.shape[0]))
    lq = q.shape[0]
    lk = k.shape[0]
    dh = d // heads
    qh = transpose(reshape(linear(q, w_q, b_q), (lq, heads, dh)), (1, 0, 2))
    kh = transpose(reshape(linear(k, w_k, b_k), (lk, heads, dh)), (1, 2, 0))
    vh = transpose(reshape(linear(v, w_v, b_v), (lk, heads, dh)), (1, 0, 2))
    scores = mul(matmul(qh, kh), 1.0 / np.sqrt(dh))
    if key_padding_mask is not None:
        kmask = np.asarray(key_padding_mask, dtype=bool)
        if kmask.shape != (lk,):
            raise ShapeError("multi_head_attention: key mask shape {} vs {} "
                             "keys".format(kmask.shape, lk))
        bias = np.where(kmask, MASK_BIAS, 0.0)[None, None, :]
        scores = add(scores, bias)
    att = softmax(scores, axis=-1)
    out = reshape(transpose(matmul(att, vh), (1, 0, 2)), (lq, d))
    out = linear(out, w_o, b_o)
    if return_weights:
        return out, att
    return out


# ---------------------------------------------------------------------------
# Modules and layers
# ---------------------------------------------------------------------------

class Module(object):
    """Container of parameters and sub-modules.

    Parameters and sub-modules are discovered from instance attributes (and
    lists of them) in definition order, so parameter order is deterministic.

    """

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError("forward not implemented")

    def named_parameters(self, prefix=""):
        seen = set()
        for name, val in vars(self).items():
            for pname, par in _walk(val, prefix + name):
                if id(par) in seen:
                    continue
                seen.add(id(par))
                yield pname, par

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def name_parameters(self):
        """Assign each parameter its attribute path as name.
        """
        names = set()
        for pname, par in self.named_parameters():
            if pname in names:
                raise ValueError("duplicate parameter name {}".format(pname))
            names.add(pname)
            par.name = pname

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def n_parameters(self):
        return int(sum(p.size for p in self.parameters()))


def _walk(val, path):
    if isinstance(val, Parameter):
        yield path, val
    elif isinstance(val, Module):
        for pname, par in val.named_parameters(prefix=path + "."):
            yield pname, par
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            for pname, par in _walk(item, "{}.{}".format(path, i)):
                yield pname, par


def he_normal(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def xavier_normal(rng, shape, fan_in, fan_out):
    return rng.standard_normal(shape) * np.sqrt(2.0 / (fan_in + fan_out))


class Linear(Module):
    def __init__(self, din, dout, rng, bias=True):
        self.weight = Parameter(xavier_normal(rng, (dout, din), din, dout))
        self.bias = Parameter(np.zeros(dout)) if bias else None

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=None,
                 pad_mode="zeros"):
        self.stride = stride
        self.pad = pad
        self.pad_mode = pad_mode
        self.weight = Parameter(he_normal(rng, (cout, cin, k, k), cin * k * k))
        self.bias = Parameter(np.zeros(cout))

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride,
                      pad=self.pad, pad_mode=self.pad_mode)


class Conv3dTemporal(Module):
    def __init__(self, cin, cout, rng, stride_t=2):
        self.stride_t = stride_t
        self.weight = Parameter(he_normal(rng, (cout, cin, 3, 1, 1), cin * 3))
        self.bias = Parameter(np.zeros(cout))

    def forward(self, x):
        return conv3d(x, self.weight, self.bias, stride_t=self.stride_t)


class LayerNorm(Module):
    def __init__(self, d):
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def forward(self, x):
        return layer_norm(x, self.gamma, self.beta)


class MultiHeadAttention(Module):
    def __init__(self, d, heads, rng):
        if d % heads != 0:
            raise ShapeError("attention width {} is not divisible by {} heads"
                             .format(d, heads))
        self.heads = heads
        self.w_q = Parameter(xavier_normal(rng, (d, d), d, d))
        self.w_k = Parameter(xavier_normal(rng, (d, d), d, d))
        self.w_v = Parameter(xavier_normal(rng, (d, d), d, d))
        self.w_o = Parameter(xavier_normal(rng, (d, d), d, d))
        self.b_q = Parameter(np.zeros(d))
        self.b_k = Parameter(np.zeros(d))
        self.b_v = Parameter(np.zeros(d))
        self.b_o = Parameter(np.zeros(d))

    def forward(self, q, k, v, key_padding_mask=None, return_weights=False):
        return multi_head_attention(
            q, k, v, self.heads, self.w_q, self.w_k, self.w_v, self.w_o,
            b_q=self.b_q, b_k=self.b_k, b_v=self.b_v, b_o=self.b_o,
            key_padding_mask=key_padding_mask, return_weights=return_weights)


# ---------------------------------------------------------------------------
# Differentiation and optimization
# ---------------------------------------------------------------------------

def _topological_order(root):
    order = list()
    visited = set()
    stack = [(root, False)]
    while len(stack) > 0:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for par in node._parents:
            if par.requires_grad and id(par) not in visited:
                stack.append((par, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every reachable leaf.

    Args:
        loss (Tensor):  A tensor with exactly one element.

    Returns:
        None

    """
    if loss.size != 1:
        raise ShapeError("backward: loss must be a scalar, got shape {}"
                         .format(loss.shape))
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is None:
                node.grad = np.array(g, dtype=node.dtype)
            else:
                node.grad += g
            continue
        pgrads = node._backward(g)
        for par, pg in zip(node._parents, pgrads):
            if pg is None or not par.requires_grad:
                continue
            key = id(par)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return


def sgd_momentum_step(params, lr=1.0e-4, momentum=0.9, weight_decay=5.0e-4):
    """One SGD-momentum update, then zero the gradients.

    v <- momentum * v + grad + weight_decay * param
    param <- param - lr * v

    """
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.momentum_buffer *= momentum
        p.momentum_buffer += g
        if weight_decay != 0.0:
            p.momentum_buffer += weight_decay * p.data
        p.data -= lr * p.momentum_buffer
        p.grad = np.zeros_like(p.data)
    return


def check_finite(named):
    """Raise NonFiniteError naming the first entry with non-finite values.

    Args:
        named (iterable):  (name, Tensor or array) pairs in evaluation order.

    """
    for name, val in named:
        arr = val.data if isinstance(val, Tensor) else np.asarray(val)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(
                "first non-finite tensor is '{}' (shape {})"
                .format(name, arr.shape), name=name)
    return


def gradient_check(fn, tensors, eps=1.0e-6, max_entries=None, seed=0,
                   floor=1.0e-3):
    """Compare analytic gradients to central finite differences.

    Args:
        fn (callable):  Builds and returns the scalar loss from scratch.
        tensors (list):  Leaf tensors (requires_grad) to check.
        eps (float):  Finite difference step.
        max_entries (int):  Check at most this many random entries per
            tensor (all entries if None).
        seed (int):  Seed for choosing the entries.
        floor (float):  Lower bound of the relative error denominator.

    Returns:
        (float):  The maximum relative error found.

    """
    for t in tensors:
        t.grad = None
    backward(fn())
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in tensors]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, agrad in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries,
                                     replace=False))
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + eps
                fp = fn().item()
                flat[i] = orig - eps
                fm = fn().item()
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            ana = agrad.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    for t in tensors:
        t.grad = None
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"CKPT"
CKPT_VERSION = 1


def write_checkpoint(path, named_arrays):
    """Write named arrays in the CKPT layout (float32 little-endian payload).

    Args:
        path (str):  Output file.
        named_arrays (list):  (name, array or Tensor) pairs.

    """
    items = [(n, v.data if isinstance(v, Tensor) else np.asarray(v))
             for n, v in named_arrays]
    buf = bytearray()
    buf += CKPT_MAGIC
    buf += struct.pack("<HI", CKPT_VERSION, len(items))
    for name, arr in items:
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb))
        buf += nb
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack("<{}I".format(arr.ndim), *arr.shape)
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as f:
            f.write(bytes(buf))
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError("cannot write checkpoint {}: {}"
                              .format(path, e))
    return


def read_checkpoint(path):
    """Read a CKPT file.

    Returns:
        (OrderedDict):  name -> float32 array.

    """
    if not os.path.isfile(path):
        raise CheckpointError("checkpoint {} does not exist".format(path))
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CKPT_MAGIC:
        raise CheckpointError("{} is not a checkpoint (bad magic)".format(path))
    off = 4

    def _take(nbytes):
        nonlocal off
        if off + nbytes > len(raw):
            raise CheckpointError("checkpoint {} is truncated".format(path))
        chunk = raw[off:off + nbytes]
        off += nbytes
        return chunk

    version, count = struct.unpack("<HI", _take(6))
    if version != CKPT_VERSION:
        raise CheckpointError("checkpoint {} has version {}, expected {}"
                              .format(path, version, CKPT_VERSION))
    out = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _take(2))
        name = _take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<B", _take(1))
        shape = struct.unpack("<{}I".format(rank), _take(4 * rank))
        nval = int(np.prod(shape)) if rank > 0 else 1
        arr = np.frombuffer(_take(4 * nval), dtype="<f4").reshape(shape)
        out[name] = arr.astype(np.float32)
    return out


def load_parameters(named_params, arrays):
    """Copy checkpoint arrays into parameters, validating names and shapes.

    Raises:
        CheckpointError:  listing every missing, unexpected or mis-shaped
            parameter name.

    """
    named_params = OrderedDict(named_params)
    bad = list()
    for name, par in named_params.items():
        if name not in arrays:
            bad.append(name)
        elif tuple(arrays[name].shape) != tuple(par.shape):
            bad.append(name)
    for name in arrays.keys():
        if name not in named_params:
            bad.append(name)
    if len(bad) > 0:
        raise CheckpointError(
            "checkpoint incompatible with model; mismatched parameters: {}"
            .format(", ".join(bad)), names=bad)
    for name, par in named_params.items():
        par.data[...] = arrays[name]
        par.grad = None
    log = Logger.get()
    log.debug("Loaded {} parameters".format(len(named_params)))
    return
