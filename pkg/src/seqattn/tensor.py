"""Dense tensors with reverse-mode differentiation.

Only the primitives needed by the attention models are provided. Every op
takes and returns :class:`Tensor`; gradients accumulate into ``.grad`` of
the leaves when :meth:`Tensor.backward` is called on a scalar.
"""
from __future__ import annotations

import contextlib
import logging
import threading
from dataclasses import dataclass

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)

_state = threading.local()


class DimensionError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class ContractViolation(ValueError):
    """A value violates a documented precondition (e.g. an unnormalised alignment)."""


class InvalidMaskError(ValueError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.data.shape)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Backpropagate from this tensor (a scalar unless ``grad`` is given)."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accum(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return index(self, idx)


def _topological(root):
    """Reverse topological order (root first), iterative to survive deep graphs."""
    seen = set()
    post = []
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            post.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    post.reverse()
    return post


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def parameter(data, name=None):
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)


def _result(data, parents, backward):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise arithmetic ------------------------------------------------

def _is_scalar(v):
    return isinstance(v, (int, float, np.floating, np.integer))


def add(a, b):
    if _is_scalar(b):
        a = as_tensor(a)
        return _result(a.data + b, (a,), lambda g: (g,))
    if _is_scalar(a):
        return add(b, a)
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    if _is_scalar(b):
        return add(a, -b)
    if _is_scalar(a):
        b = as_tensor(b)
        return _result(a - b.data, (b,), lambda g: (-g,))
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b):
    if _is_scalar(a):
        a, b = b, a
    if _is_scalar(b):
        a = as_tensor(a)
        return _result(a.data * b, (a,), lambda g: (g * b,))
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward)


def square(x):
    xd = x.data
    return _result(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def log(x):
    xd = x.data
    return _result(np.log(xd), (x,), lambda g: (g / xd,))


def clip(x, lo, hi):
    """Clamp values; gradient flows only where the input was inside [lo, hi]."""
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _result(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


def sum(x, axis=None, keepdims=False):  # noqa: A001
    xd = x.data
    out = xd.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xd.shape),)

    return _result(out, (x,), backward)


def mean(x, axis=None):
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


# --- shape manipulation ----------------------------------------------------

def reshape(x, shape):
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, slice, type(None))) or i is Ellipsis for i in items)


def index(x, idx):
    xd = x.data
    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros_like(xd)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(xd[idx], (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(data, tensors, backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(data, tensors, backward)


def embedding(table, ids):
    ids = np.asarray(ids, dtype=np.int64)
    td = table.data

    def backward(g):
        full = np.zeros_like(td)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, td.shape[1]))
        return (full,)

    return _result(td[ids], (table,), backward)


# --- linear algebra --------------------------------------------------------

def affine(x, W, b=None):
    """y = x Wᵀ + b over the last axis of ``x``."""
    x = as_tensor(x)
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"affine: input shape {x.shape} incompatible with weight shape {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"affine: bias shape {b.shape} incompatible with weight shape {W.shape}")
    xd, Wd = x.data, W.data
    y = xd @ Wd.T
    if b is not None:
        y = y + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wd
        gW = g2.T @ xd.reshape(-1, xd.shape[-1])
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return _result(y, parents, backward)


def weighted_sum(weights, values):
    """Σ_s weights[..., s] · values[..., s, :] (expected value under an alignment)."""
    if weights.shape != values.shape[:-1]:
        raise DimensionError(f"weighted_sum: weights {weights.shape} vs values {values.shape}")
    wd, vd = weights.data, values.data
    out = np.einsum("...s,...sm->...m", wd, vd)

    def backward(g):
        gw = np.einsum("...m,...sm->...s", g, vd)
        gv = wd[..., :, None] * g[..., None, :]
        return gw, gv

    return _result(out, (weights, values), backward)


def dot_last(a, b):
    """Σ over the last axis of a·b with broadcasting of leading axes."""
    return sum(mul(a, b), axis=-1)


# --- nonlinearities ----------------------------------------------------------

LEAKY_SLOPE = 0.01


def leaky_relu(x, alpha=LEAKY_SLOPE):
    xd = x.data
    slope = np.where(xd >= 0, 1.0, alpha).astype(xd.dtype)
    return _result(xd * slope, (x,), lambda g: (g * slope,))


def tanh(x):
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def _sigmoid(v):
    return np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))


def sigmoid(x):
    y = _sigmoid(x.data).astype(x.dtype)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),))


ACTIVATIONS = {"leaky_relu": leaky_relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(x, kind, alpha=LEAKY_SLOPE):
    if kind == "leaky_relu":
        return leaky_relu(x, alpha)
    try:
        return ACTIVATIONS[kind](x)
    except KeyError:
        raise ConfigurationError(f"unknown activation {kind!r}") from None


# --- masking and normalisation ---------------------------------------------

@dataclass(frozen=True)
class Mask:
    """Prefix validity mask: the first ``length`` of ``total`` positions are real."""

    length: int
    total: int

    def __post_init__(self):
        if not 0 < self.length <= self.total:
            raise InvalidMaskError(f"mask needs 0 < length <= total, got {self.length}/{self.total}")

    def to_array(self):
        return np.arange(self.total) < self.length


def lengths_to_mask(lengths, total=None):
    lengths = np.asarray(lengths)
    total = int(lengths.max()) if total is None else total
    return np.arange(total)[None, :] < lengths[:, None]


def _mask_array(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = mask.to_array() if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    if m.shape[-1] != shape[-1]:
        raise InvalidMaskError(f"mask covers {m.shape[-1]} positions, scores have {shape[-1]}")
    return np.broadcast_to(m, shape)


def softmax_masked(scores, mask=None):
    """Softmax over the last axis; masked positions come out exactly zero."""
    sd = scores.data
    m = _mask_array(mask, sd.shape)
    if not m.any(axis=-1).all():
        raise InvalidMaskError("every position of some row is masked")
    z = np.where(m, sd, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(m, np.exp(z), 0.0)
    y = (e / e.sum(axis=-1, keepdims=True)).astype(sd.dtype)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (scores,), backward)


def log_softmax(x):
    xd = x.data
    z = xd - xd.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), backward)


def nll_sum(logits, targets, mask=None):
    """Σ over valid positions of −log softmax(logits)[target]."""
    ld = logits.data
    targets = np.asarray(targets, dtype=np.int64)
    V = ld.shape[-1]
    if targets.shape != ld.shape[:-1]:
        raise DimensionError(f"nll_sum: logits {ld.shape} vs targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        raise ValueError(f"target symbol outside vocabulary of size {V}")
    m = np.ones(targets.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    z = ld - ld.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    nll = np.where(m, lse - picked, 0.0)
    out = np.array(nll.sum(), dtype=ld.dtype)

    def backward(g):
        p = np.exp(z - lse[..., None])
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
        return ((p - onehot) * m[..., None] * g,)

    return _result(out, (logits,), backward)


# --- convolution -------------------------------------------------------------

_warned_widths = set()


def conv1d_same(x, F):
    """Same-padded 1-D convolution.

    ``x`` is [..., S, Cin]; ``F`` is [Cin, width, Cout] with odd width.
    Position s sums x over [s - width//2, s + width//2] with zeros outside.
    """
    if F.ndim != 3:
        raise DimensionError(f"conv1d_same: filter must be [Cin, width, Cout], got {F.shape}")
    width = F.shape[1]
    if width % 2 == 0:
        raise ConfigurationError(f"conv1d_same needs an odd width, got {width}")
    if x.ndim < 2 or x.shape[-1] != F.shape[0]:
        raise DimensionError(f"conv1d_same: input shape {x.shape} incompatible with filter shape {F.shape}")
    S = x.shape[-2]
    if S < 1:
        raise DimensionError("conv1d_same: empty input")
    if width > 2 * S + 1 and width not in _warned_widths:
        _warned_widths.add(width)
        logger.warning("conv1d_same: width %d exceeds 2S+1 for S=%d (further cases not logged)", width, S)
    lead = x.shape[:-2]
    xd = x.data.reshape((-1,) + x.shape[-2:])
    Fd = F.data
    y = kernels.conv1d_same_forward(xd, Fd).astype(xd.dtype, copy=False)

    def backward(g):
        gx, gF = kernels.conv1d_same_backward(xd, Fd, g.reshape((-1, S, Fd.shape[2])))
        return gx.reshape(x.shape), gF

    return _result(y.reshape(lead + (S, Fd.shape[2])), (x, F), backward)


# --- recurrent cells ---------------------------------------------------------

def _lstm_forward(xw, h, c, U):
    """One LSTM update given the precomputed input part ``xw`` = x Wᵀ + b.

    Gate order along the 4H axis: input, forget, candidate, output.
    """
    H = h.shape[-1]
    z = xw + h @ U.T
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    gg = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c_new = f * c + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, gg, o, tc)


def _lstm_backward(gh, gc, c, U, cache):
    """Gradients w.r.t. the gate pre-activation z and the previous h, c."""
    i, f, gg, o, tc = cache
    go = gh * tc
    gc = gc + gh * o * (1.0 - tc * tc)
    gi = gc * gg
    gf = gc * c
    ggg = gc * i
    gz = np.concatenate(
        [gi * i * (1 - i), gf * f * (1 - f), ggg * (1 - gg * gg), go * o * (1 - o)], axis=-1
    )
    return gz, gz @ U, gc * f


def lstm_cell(x, h, c, W, U, b):
    """Fused LSTM step. Returns [.., 2H] holding (h_new, c_new) side by side."""
    H = h.shape[-1]
    if W.shape != (4 * H, x.shape[-1]) or U.shape != (4 * H, H) or b.shape != (4 * H,):
        raise DimensionError(
            f"lstm_cell: x {x.shape}, h {h.shape}, W {W.shape}, U {U.shape}, b {b.shape} do not conform"
        )
    xd, hd, cd, Wd, Ud = x.data, h.data, c.data, W.data, U.data
    h_new, c_new, cache = _lstm_forward(xd @ Wd.T + b.data, hd, cd, Ud)

    def backward(g):
        gz, gh_prev, gc_prev = _lstm_backward(g[..., :H], g[..., H:], cd, Ud, cache)
        gz2 = gz.reshape(-1, 4 * H)
        return (
            gz @ Wd,
            gh_prev,
            gc_prev,
            gz2.T @ xd.reshape(-1, xd.shape[-1]),
            gz2.T @ hd.reshape(-1, H),
            gz2.sum(axis=0),
        )

    return _result(np.concatenate([h_new, c_new], axis=-1), (x, h, c, W, U, b), backward)


def lstm_sequence(x, mask, W, U, b, reverse=False):
    """Run an LSTM over x [B, S, In] as one fused op, returning h for every step [B, S, H].

    At padded steps (mask False) the state is carried unchanged and the output
    is zero, so a reverse pass starts fresh at each sequence's true end.
    """
    B, S, In = x.shape
    H = U.shape[1]
    if W.shape != (4 * H, In) or U.shape != (4 * H, H) or b.shape != (4 * H,):
        raise DimensionError(f"lstm_sequence: x {x.shape}, W {W.shape}, U {U.shape}, b {b.shape} do not conform")
    m = np.ones((B, S), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    xd, Wd, Ud = x.data, W.data, U.data
    dt = xd.dtype
    xw = xd @ Wd.T + b.data
    steps = range(S - 1, -1, -1) if reverse else range(S)
    h = np.zeros((B, H), dtype=dt)
    c = np.zeros((B, H), dtype=dt)
    out = np.zeros((B, S, H), dtype=dt)
    tape = []
    for s in steps:
        ms = m[:, s:s + 1]
        h_new, c_new, cache = _lstm_forward(xw[:, s], h, c, Ud)
        tape.append((s, h, c, cache))
        h = np.where(ms, h_new, h)
        c = np.where(ms, c_new, c)
        out[:, s] = np.where(ms, h, 0.0)

    def backward(g):
        gxw = np.zeros((B, S, 4 * H), dtype=dt)
        gU = np.zeros_like(Ud)
        gh = np.zeros((B, H), dtype=dt)
        gc = np.zeros((B, H), dtype=dt)
        for s, h_prev, c_prev, cache in reversed(tape):
            ms = m[:, s:s + 1]
            gh_tot = gh + np.where(ms, g[:, s], 0.0)
            gz, gh_prev, gc_prev = _lstm_backward(np.where(ms, gh_tot, 0.0), np.where(ms, gc, 0.0), c_prev, Ud, cache)
            gz = np.where(ms, gz, 0.0)
            gxw[:, s] = gz
            gU += gz.T @ h_prev
            gh = np.where(ms, gh_prev, gh_tot)
            gc = np.where(ms, gc_prev, gc)
        gxw2 = gxw.reshape(-1, 4 * H)
        return gxw @ Wd, gxw2.T @ xd.reshape(-1, In), gU, gxw2.sum(axis=0)

    return _result(out, (x, W, U, b), backward)
