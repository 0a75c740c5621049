"""A small reverse-mode autodiff core over numpy arrays.

Only the operators the restoration networks need are provided: 2-D
convolution, leaky ReLU, channel concatenation, pixel shuffle, grouped
softmax / cross entropy and mean squared error. Every forward call records
its parents and a backward closure; ``Tensor.backward`` replays them in
reverse topological order.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DTYPE = np.float32


def get_dtype():
    return _DTYPE


def set_dtype(dtype) -> None:
    """Select the floating point precision for new tensors and parameters."""
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError("precision must be float32 or float64")
    _DTYPE = dtype


@contextmanager
def precision(dtype):
    old = _DTYPE
    set_dtype(dtype)
    try:
        yield
    finally:
        set_dtype(old)


class Tensor:
    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, scalar):
        return scale(self, scalar)

    __rmul__ = __mul__

    def item(self) -> float:
        return float(self.data)


class Parameter(Tensor):
    """A leaf tensor with Adam moment buffers."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0


def _node(data, parents, backward):
    parents = tuple(parents)
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, parents=parents if req else (), backward=backward if req else None)


def constant(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


# --- elementwise / structural ops ----------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def offset(a: Tensor, c: float) -> Tensor:
    return _node(a.data + c, (a,), lambda g: (g,))


def scale(a: Tensor, s: float) -> Tensor:
    return _node(a.data * s, (a,), lambda g: (g * s,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    if not 0 < slope < 1:
        raise ValueError("leaky slope must lie in (0, 1)")
    mask = x.data >= 0
    factor = np.where(mask, 1.0, slope).astype(x.data.dtype)
    return _node(x.data * factor, (x,), lambda g: (g * factor,))


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [constant(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(B, C*r*r, H, W) -> (B, C, H*r, W*r); channel c*r*r + i*r + j goes to offset (i, j)."""
    b, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"channels {c} not divisible by r^2 = {r * r}")
    oc = c // (r * r)
    out = x.data.reshape(b, oc, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(b, oc, h * r, w * r)

    def backward(g):
        return (g.reshape(b, oc, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c, h, w),)

    return _node(out, (x,), backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse permutation of :func:`pixel_shuffle`."""
    b, c, h, w = x.shape
    if h % r or w % r:
        raise ValueError("spatial dims not divisible by r")
    out = x.data.reshape(b, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(b, c * r * r, h // r, w // r)

    def backward(g):
        return (g.reshape(b, c, r, r, h // r, w // r).transpose(0, 1, 4, 2, 5, 3).reshape(b, c, h, w),)

    return _node(out, (x,), backward)


# --- convolution -----------------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patches of a padded (B, C, H, W) array as rows ordered (ki, kj, c).

    Going through a channel-last copy keeps the innermost gather contiguous,
    which is about twice as fast as gathering straight from NCHW.
    """
    bsz, c = xp.shape[:2]
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 1))
    win = sliding_window_view(xl, (k, k), axis=(1, 2))[:, : ho * stride : stride, : wo * stride : stride]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * ho * wo, k * k * c)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (B, C, H, W) input with (O, C, k, k) weights via im2col."""
    x = constant(x)
    bsz, c, h, w = x.shape
    o, wc, k, k2 = weight.shape
    if wc != c or k != k2:
        raise ValueError(f"conv weight {weight.shape} does not match input channels {c}")
    if h + 2 * pad < k or w + 2 * pad < k:
        raise ValueError("input smaller than kernel")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = weight.data.transpose(0, 2, 3, 1).reshape(o, k * k * c)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(bsz, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(bsz * ho * wo, o)
        gw = (gm.T @ cols).reshape(o, k, k, c).transpose(0, 3, 1, 2) if weight.requires_grad else None
        gb = gm.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad and stride == 1:
            # full correlation of g with the rotated kernel, one matmul instead of a k*k scatter
            gp = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
            wrot = weight.data[:, :, ::-1, ::-1].transpose(1, 2, 3, 0).reshape(c, k * k * o)
            gxp = (_im2col(gp, k, 1, hp, wp) @ wrot.T).reshape(bsz, hp, wp, c).transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad : hp - pad, pad : wp - pad] if pad else gxp
        elif x.requires_grad:
            dcols = (gm @ wmat).reshape(bsz, ho, wo, k, k, c).transpose(0, 5, 1, 2, 3, 4)
            gxp = np.zeros((bsz, c, hp, wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[..., i, j]
            gx = gxp[:, :, pad : hp - pad, pad : wp - pad] if pad else gxp
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return _node(np.ascontiguousarray(out), parents, backward)


# --- losses ----------------------------------------------------------------------

def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_ce(logits, target: int) -> float:
    """Cross entropy of a single logit vector against a class index."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= target < logits.size:
        raise ValueError(f"target {target} out of range for {logits.size} classes")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[target])


def softmax_ce_grad(logits, target: int) -> np.ndarray:
    p = softmax(np.asarray(logits, dtype=np.float64))
    p[target] -= 1.0
    return p


def grouped_softmax(x: Tensor, n_cl: int) -> Tensor:
    """Softmax over consecutive groups of ``n_cl`` channels, independently per group."""
    b, c, h, w = x.shape
    if c % n_cl:
        raise ValueError(f"{c} channels not divisible into groups of {n_cl}")
    p = softmax(x.data.reshape(b, c // n_cl, n_cl, h, w), axis=2)

    def backward(g):
        g = g.reshape(p.shape)
        gx = p * (g - (g * p).sum(axis=2, keepdims=True))
        return (gx.reshape(b, c, h, w),)

    return _node(p.reshape(b, c, h, w), (x,), backward)


def grouped_softmax_ce(logits: Tensor, targets: np.ndarray, n_cl: int) -> Tensor:
    """Mean cross entropy over every (batch, group, y, x) cell.

    ``logits`` is (B, G*n_cl, H, W) with group ``g`` in channels
    ``g*n_cl .. g*n_cl + n_cl - 1``; ``targets`` is integer (B, G, H, W).
    """
    b, c, h, w = logits.shape
    groups = c // n_cl
    targets = np.asarray(targets)
    if c % n_cl or targets.shape != (b, groups, h, w):
        raise ValueError(f"targets {targets.shape} do not match logits {logits.shape} / n_cl={n_cl}")
    if targets.min() < 0 or targets.max() >= n_cl:
        raise ValueError("target class out of range")
    z = logits.data.reshape(b, groups, n_cl, h, w)
    z = z - z.max(axis=2, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=2))
    picked = np.take_along_axis(z, targets[:, :, None], axis=2)[:, :, 0]
    count = targets.size
    loss = (lse - picked).sum() / count

    def backward(g):
        p = np.exp(z - lse[:, :, None])
        np.put_along_axis(p, targets[:, :, None], np.take_along_axis(p, targets[:, :, None], axis=2) - 1.0, axis=2)
        return ((p * (g / count)).reshape(b, c, h, w).astype(logits.data.dtype),)

    return _node(np.asarray(loss), (logits,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target
    n = diff.size
    return _node(np.asarray((diff * diff).sum() / n), (pred,), lambda g: (g * 2.0 * diff / n,))


def dot(x: Tensor, weights) -> Tensor:
    """Scalar sum of ``x * weights`` for a constant array ``weights``."""
    weights = np.asarray(weights, dtype=x.data.dtype)
    if weights.shape != x.shape:
        raise ValueError(f"dot shape mismatch {x.shape} vs {weights.shape}")
    return _node(np.asarray((x.data * weights).sum()), (x,), lambda g: (g * weights,))


def mean(tensors) -> Tensor:
    tensors = list(tensors)
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return scale(total, 1.0 / len(tensors))


# --- modules, init, optimizer ----------------------------------------------------

class Module:
    """Base class collecting :class:`Parameter` attributes by dotted name."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def kaiming_uniform(rng, shape, slope: float = 0.2) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    gain = math.sqrt(2.0 / (1.0 + slope**2))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, k: int = 3, stride: int = 1, pad=None, slope: float = 0.2):
        self.weight = Parameter(kaiming_uniform(rng, (out_ch, in_ch, k, k), slope))
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def zero_(self):
        self.weight.data[...] = 0
        self.bias.data[...] = 0


class ResidualBlock(Module):
    """y = x + conv(lrelu(conv(x))), both 3x3, stride 1, pad 1."""

    def __init__(self, rng, ch: int, slope: float = 0.2):
        self.conv1 = Conv(rng, ch, ch, 3, slope=slope)
        self.conv2 = Conv(rng, ch, ch, 3, slope=slope)
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.conv1.weight.shape[1]:
            raise ValueError(f"residual block expects {self.conv1.weight.shape[1]} channels, got {x.shape[1]}")
        return add(x, self.conv2(leaky_relu(self.conv1(x), self.slope)))


def residual_block(x: Tensor, block: ResidualBlock) -> Tensor:
    return block(x)


def adam_step(params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update; gradients are cleared afterwards."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ValueError("adam_step called on a parameter without a gradient")
    for p in params:
        g = p.grad
        p.step_count += 1
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * g * g
        m_hat = p.adam_m / (1 - beta1**p.step_count)
        v_hat = p.adam_v / (1 - beta2**p.step_count)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
        p.grad = None


# --- finite-difference oracle ----------------------------------------------------

def grad_check(fn, wrt, eps: float = 1e-5, max_coords: int | None = None, rng=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` builds a scalar :class:`Tensor` from the current values of the
    tensors in ``wrt`` (leaf tensors with ``requires_grad``). The error per
    coordinate is ``|a - n| / max(1e-8, |a| + |n|)``. ``max_coords`` limits
    the probe to a random subset of coordinates per tensor.
    """
    if _DTYPE is not np.float64:
        raise RuntimeError("grad_check requires float64 precision")
    wrt = list(wrt)
    for t in wrt:
        t.grad = None
    fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in wrt]
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for t, ga in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn().item()
            flat[i] = orig - eps
            fm = fn().item()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            a = ga.reshape(-1)[i]
            err = abs(a - num) / max(1e-8, abs(a) + abs(num))
            worst = max(worst, err)
    for t in wrt:
        t.grad = None
    return worst
