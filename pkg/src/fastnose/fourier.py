"""Discrete Fourier transforms for arbitrary lengths.

Power-of-two lengths use an iterative radix-2 Cooley-Tukey with vectorised
butterfly stages; everything else goes through Bluestein's chirp-z algorithm
on top of the radix-2 core. ``dft_reference`` is the O(n^2) oracle the fast
path is tested against; it is deliberately written from the definition.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n, dtype=np.int64)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    a = x[_bit_reverse_indices(n)].astype(np.complex128)
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        a = a.reshape(n // m, m)
        odd = a[:, half:] * tw
        even = a[:, :half].copy()
        a[:, :half] = even + odd
        a[:, half:] = even - odd
        a = a.reshape(n)
        m *= 2
    return a


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[0]


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n, dtype=np.int64)
    # k^2 mod 2n keeps the chirp argument small and the angles accurate.
    ksq = (k * k) % (2 * n)
    w = np.exp(-1j * np.pi * ksq / n)
    a = np.zeros(m, dtype=np.complex128)
    a[:n] = x * w
    b = np.zeros(m, dtype=np.complex128)
    wc = np.conj(w)
    b[:n] = wc
    if n > 1:
        b[m - (n - 1):] = wc[1:][::-1]
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b))
    return conv[:n] * w


def fft(x) -> np.ndarray:
    """DFT of a 1-d sequence of any positive length."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.shape[0] == 0:
        raise DataError("fft expects a non-empty 1-d sequence")
    n = x.shape[0]
    if n == 1:
        return x.copy()
    if n & (n - 1) == 0:
        return _fft_pow2(x)
    return _fft_bluestein(x)


def ifft(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(x))) / x.shape[0]


def dft_reference(x, max_n: int = 4096) -> np.ndarray:
    """Direct O(n^2) DFT, used only as a test oracle."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[0]
    if n > max_n:
        raise DataError(f"reference DFT limited to {max_n} points")
    out = np.empty(n, dtype=np.complex128)
    j = np.arange(n)
    # Row chunks keep the n^2 twiddle matrix within a modest memory budget.
    chunk = max(1, (1 << 22) // max(n, 1))
    for k0 in range(0, n, chunk):
        ks = np.arange(k0, min(k0 + chunk, n))
        w = np.exp(-2j * np.pi * np.outer(ks, j) / n)
        out[k0 : k0 + ks.shape[0]] = w @ x
    return out


def bin_frequencies(n: int, sample_rate_hz: float) -> np.ndarray:
    """Frequency of each DFT bin; bin width = sample_rate / n."""
    return np.arange(n) * (sample_rate_hz / n)
