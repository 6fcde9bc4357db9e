"""A small tape-based reverse-mode differentiation engine.

Only the fused primitives the operator network needs are provided. Every
primitive records its output value and a closure that maps the output
gradient to gradients of its parents. ``Tape.backward`` replays the records
in reverse creation order, so reductions happen in a fixed order and results
are deterministic.

Complex quantities never appear on the tape: spectral weights are stored as
separate real and imaginary arrays and the spectral convolution handles the
complex arithmetic internally.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import erf

from .errors import ContractError
from .fft import fft2, ifft2

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Node:
    __slots__ = ("tape", "value", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, tape, value, parents=(), backward_fn=None, requires_grad=False, name=None):
        self.tape = tape
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)


class Tape:
    """Records nodes in creation order; ``recording=False`` keeps no closures (inference)."""

    def __init__(self, recording=True):
        self.recording = recording
        self.nodes = []

    def leaf(self, value, name=None):
        node = Node(self, np.asarray(value, dtype=np.float64), requires_grad=self.recording, name=name)
        self.nodes.append(node)
        return node

    def constant(self, value):
        return Node(self, np.asarray(value, dtype=np.float64))

    def record(self, value, parents, backward_fn):
        if not (self.recording and any(p.requires_grad for p in parents)):
            return Node(self, value)
        node = Node(self, value, tuple(parents), backward_fn, requires_grad=True)
        self.nodes.append(node)
        return node

    def backward(self, loss):
        if loss.value.size != 1:
            raise ContractError("backward needs a scalar loss")
        for node in self.nodes:
            node.grad = None
        if not loss.requires_grad:
            return
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None or node.backward_fn is None:
                continue
            grads = node.backward_fn(node.grad)
            for parent, g in zip(node.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            node.backward_fn = None  # release cached activations

    def release(self):
        """Drop recorded nodes so activations are freed without waiting for the cycle collector."""
        for node in self.nodes:
            node.parents = ()
            node.backward_fn = None
            node.tape = None
        self.nodes = []

    def gradients(self, leaves):
        """Map ``name -> gradient`` for the given leaves; untouched leaves get zeros."""
        return {name: (node.grad if node.grad is not None else np.zeros_like(node.value))
                for name, node in leaves.items()}


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    tape = a.tape
    out = a.value + b.value
    return tape.record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def scale(a, c):
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    """Plain 2D matrix product."""
    out = a.value @ b.value
    return a.tape.record(out, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def sum_squares(a):
    return a.tape.record(np.array(np.sum(a.value ** 2)), (a,), lambda g: (2.0 * g * a.value,))


def channel_affine(x, w, b=None):
    """Pointwise linear map over the channel axis: (B, Ci, H, W) -> (B, Co, H, W).

    ``w`` has shape (Ci, Co) and ``b`` shape (Co,).
    """
    xv, wv = x.value, w.value
    if xv.ndim != 4 or xv.shape[1] != wv.shape[0]:
        raise ContractError(f"channel_affine: input {xv.shape} does not match weight {wv.shape}")
    out = np.einsum("bihw,io->bohw", xv, wv, optimize=True)
    if b is not None:
        out = out + b.value[None, :, None, None]

    def back(g):
        gx = np.einsum("bohw,io->bihw", g, wv, optimize=True)
        gw = np.einsum("bihw,bohw->io", xv, g, optimize=True)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return gx, gw, gb

    parents = (x, w, b) if b is not None else (x, w)
    return x.tape.record(out, parents, back)


def channel_bias(x, b):
    out = x.value + b.value[None, :, None, None]
    return x.tape.record(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))


def gelu(x):
    """Exact GeLU, x * Phi(x)."""
    xv = x.value
    cdf = 0.5 * (1.0 + erf(xv / _SQRT2))
    out = xv * cdf

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * xv * xv)
        return (g * (cdf + xv * pdf),)

    return x.tape.record(out, (x,), back)


# spectral convolution ---------------------------------------------------------

def retained_rows(modes):
    """Row frequencies kept by the truncation, in weight-array order."""
    return np.arange(-(modes - 1), modes)


@lru_cache(maxsize=32)
def _dft_mats(h, w, modes):
    kr = retained_rows(modes)
    kc = np.arange(modes)
    dr = np.exp(-2j * np.pi * np.outer(kr, np.arange(h)) / h)  # (2m-1, H)
    dc = np.exp(-2j * np.pi * np.outer(kc, np.arange(w)) / w)  # (m, W)
    # real column factors: analysis [Re; Im] stacked as (W, 2m), synthesis as (2m, W)
    col_an = np.concatenate([dc.real.T, dc.imag.T], axis=1)
    col_syn = np.concatenate([dc.real, dc.imag], axis=0)
    return dr, np.ascontiguousarray(dr.T), np.conj(dr), col_an, col_syn


def check_modes(h, w, modes):
    if modes < 1 or 2 * modes > h or 2 * modes > w:
        raise ContractError(f"{modes} modes need a grid of at least {2 * modes}x{2 * modes}, got {h}x{w}")


def partial_dft(x, modes):
    """Forward DFT coefficients of a real array's last two axes at the retained frequencies only."""
    lead, (h, w) = x.shape[:-2], x.shape[-2:]
    _, dr_t, _, col_an, _ = _dft_mats(h, w, modes)
    n = int(np.prod(lead))
    y = np.ascontiguousarray(x).reshape(n * h, w) @ col_an
    t = (y[:, :modes] + 1j * y[:, modes:]).reshape(n, h, modes)
    t = np.ascontiguousarray(t.transpose(0, 2, 1)).reshape(n * modes, h)
    z = (t @ dr_t).reshape(n, modes, 2 * modes - 1).transpose(0, 2, 1)
    return z.reshape(*lead, 2 * modes - 1, modes)


def partial_idft(z, h, w, modes):
    """Real part of the unnormalized synthesis sum over the retained frequencies (kernel exp(+...))."""
    lead = z.shape[:-2]
    _, _, dr_conj, _, col_syn = _dft_mats(h, w, modes)
    n = int(np.prod(lead))
    r = 2 * modes - 1
    t = np.ascontiguousarray(z.reshape(n, r, modes).transpose(0, 2, 1)).reshape(n * modes, r)
    a = (t @ dr_conj).reshape(n, modes, h).transpose(0, 2, 1)  # (n, H, m)
    ar = np.concatenate([a.real, a.imag], axis=2).reshape(n * h, 2 * modes)
    return (ar @ col_syn).reshape(*lead, h, w)


def _half_weights(modes):
    # columns ky >= 1 stand for the pair (k, -k); ky = 0 appears once
    s = np.full(modes, 2.0)
    s[0] = 1.0
    return s


def _contract(xhat, weight):
    # xhat (B, Ci, R, M), weight (R, M, Ci, Co) -> (B, Co, R, M)
    xt = np.transpose(xhat, (2, 3, 0, 1))
    z = np.matmul(xt, weight)
    return np.transpose(z, (2, 3, 0, 1))


def spectral_conv_values(x, wr, wi, method="dft"):
    """Forward value of the spectral convolution without taping.

    ``x`` is (B, Ci, H, W) real, ``wr``/``wi`` are (2m-1, m, Ci, Co). The real
    output equals the inverse transform of the Hermitian-completed truncated
    product. ``method="fft"`` goes through full radix-2 transforms and serves
    as a reference path.
    """
    h, w = x.shape[-2:]
    modes = wr.shape[1]
    check_modes(h, w, modes)
    weight = wr + 1j * wi
    if method == "dft":
        z = _contract(partial_dft(x, modes), weight)
        z = z * _half_weights(modes)
        return partial_idft(z, h, w, modes) / (h * w)
    if method != "fft":
        raise ContractError(f"unknown method {method!r}")
    spec = fft2(x)
    kr = retained_rows(modes)
    xhat = spec[..., kr % h, :modes]
    z = _contract(xhat, weight)
    zh = z.copy()
    zh[..., 0] *= 0.5
    full = np.zeros(z.shape[:2] + (h, w), dtype=np.complex128)
    rows = (kr % h)[:, None]
    cols = np.arange(modes)[None, :]
    full[..., rows, cols] += zh
    full[..., (-kr[:, None]) % h, (-cols) % w] += np.conj(zh)
    out = ifft2(full)
    residue = np.abs(out.imag).max() if out.size else 0.0
    assert residue <= 1e-9 * max(1.0, np.abs(out.real).max()), f"imaginary residue {residue}"
    return out.real


def spectral_conv(x, wr, wi):
    """Taped spectral convolution; gradients flow to the input and both weight arrays."""
    xv = x.value
    h, w = xv.shape[-2:]
    modes = wr.value.shape[1]
    check_modes(h, w, modes)
    if wr.value.shape[0] != 2 * modes - 1 or xv.shape[1] != wr.value.shape[2]:
        raise ContractError(f"spectral weights {wr.value.shape} do not fit input {xv.shape}")
    weight = wr.value + 1j * wi.value
    xhat = partial_dft(xv, modes)
    s = _half_weights(modes)
    z = _contract(xhat, weight)
    out = partial_idft(z * s, h, w, modes) / (h * w)

    def back(g):
        gz = partial_dft(g, modes) * (s / (h * w))  # (B, Co, R, M)
        gt = np.transpose(gz, (2, 3, 0, 1))  # (R, M, B, Co)
        xt = np.transpose(xhat, (2, 3, 0, 1))  # (R, M, B, Ci)
        gw = np.matmul(np.conj(np.swapaxes(xt, -1, -2)), gt)  # (R, M, Ci, Co)
        gxh = np.matmul(gt, np.conj(np.swapaxes(weight, -1, -2)))  # (R, M, B, Ci)
        gxh = np.transpose(gxh, (2, 3, 0, 1))
        gx = partial_idft(gxh, h, w, modes)
        return gx, gw.real, gw.imag

    return x.tape.record(out, (x, wr, wi), back)


# losses -----------------------------------------------------------------------

def relative_l2(pred, target, eps=1e-12):
    """Mean over the batch of ||pred - target|| / max(||target||, eps)."""
    p = pred.value
    t = np.asarray(target.value if isinstance(target, Node) else target)
    b = p.shape[0]
    diff = (p - t).reshape(b, -1)
    num = np.sqrt(np.sum(diff * diff, axis=1))
    den = np.maximum(np.sqrt(np.sum(t.reshape(b, -1) ** 2, axis=1)), eps)
    val = np.array(np.mean(num / den))

    def back(g):
        safe = np.where(num > 0, num, 1.0)
        coef = np.where(num > 0, 1.0 / (safe * den), 0.0) / b
        return (g * (coef[:, None] * diff).reshape(p.shape),)

    return pred.tape.record(val, (pred,), back)


def mse(pred, target):
    p = pred.value
    t = np.asarray(target.value if isinstance(target, Node) else target)
    diff = p - t
    val = np.array(np.mean(diff * diff))
    return pred.tape.record(val, (pred,), lambda g: (g * 2.0 * diff / diff.size,))
