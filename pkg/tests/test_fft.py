import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from windfno.errors import ContractError
from windfno.fft import fft, fft2, fftfreq_int, ifft2


def direct_dft2(x):
    h, w = x.shape
    fy = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    fx = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    out = np.zeros((h, w), dtype=complex)
    for a in range(h):
        for b in range(w):
            out[a, b] = np.sum(x * fy[a][:, None] * fx[b][None, :])
    return out


def test_constant_and_impulse():
    c = np.full((4, 4), 2.0)
    s = fft2(c)
    assert s[0, 0] == pytest.approx(32.0)
    assert np.abs(s).sum() - 32.0 < 1e-12
    d = np.zeros((4, 4))
    d[0, 0] = 1.0
    assert np.allclose(fft2(d), 1.0)


def test_matches_direct_dft(rng):
    x = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    assert np.abs(fft2(x) - direct_dft2(x)).max() <= 1e-10


def test_non_power_of_two_rejected():
    with pytest.raises(ContractError):
        fft(np.ones(6))


def test_freqs():
    assert list(fftfreq_int(8)) == [0, 1, 2, 3, -4, -3, -2, -1]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_roundtrip_and_parseval(ph, pw, seed):
    x = np.random.default_rng(seed).normal(size=(2 ** ph, 2 ** pw))
    s = fft2(x)
    assert np.abs(ifft2(s) - x).max() <= 1e-10
    assert np.sum(x ** 2) == pytest.approx(np.sum(np.abs(s) ** 2) / x.size, rel=1e-8)
