"""Iterative radix-2 Cooley-Tukey FFT, vectorized over all leading axes.

Forward transforms are unnormalized (kernel ``exp(-2*pi*i*y*l/p)``); the
inverse applies ``exp(+2*pi*i*y*l/p)`` and divides by the number of points,
so ``ifft2(fft2(x)) == x`` up to rounding.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ContractError


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


@lru_cache(maxsize=None)
def _plan(n, sign):
    if not is_power_of_two(n):
        raise ContractError(f"FFT length must be a power of two, got {n}")
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    twiddles = []
    s = 1
    while s < n:
        twiddles.append(np.exp(sign * 2j * np.pi * np.arange(s) / (2 * s)))
        s *= 2
    return rev, tuple(twiddles)


def _transform(x, sign):
    x = np.asarray(x)
    n = x.shape[-1]
    rev, twiddles = _plan(n, sign)
    lead = x.shape[:-1]
    y = x[..., rev].astype(np.complex128)
    s = 1
    for tw in twiddles:
        y = y.reshape(*lead, n // (2 * s), 2, s)
        even = y[..., 0, :]
        odd = y[..., 1, :] * tw
        y = np.concatenate((even + odd, even - odd), axis=-1)
        s *= 2
    return y.reshape(*lead, n)


def fft(x):
    """Forward DFT along the last axis."""
    return _transform(x, -1)


def ifft(x):
    x = np.asarray(x)
    return _transform(x, +1) / x.shape[-1]


def fft2(x):
    """Forward 2D DFT over the last two axes (rows, columns)."""
    y = fft(x)
    return np.swapaxes(fft(np.swapaxes(y, -1, -2)), -1, -2)


def ifft2(x):
    y = ifft(x)
    return np.swapaxes(ifft(np.swapaxes(y, -1, -2)), -1, -2)


def fftfreq_int(n):
    """Integer frequencies in FFT order: 0, 1, ..., n/2-1, -n/2, ..., -1."""
    k = np.arange(n)
    return np.where(k < (n + 1) // 2, k, k - n)
