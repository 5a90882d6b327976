import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastnose.errors import DataError
from fastnose.fourier import bin_frequencies, dft_reference, fft, ifft


class TestReference:
    def test_length_two(self):
        out = dft_reference([3.0, 5.0])
        assert out[0] == pytest.approx(8.0)
        assert out[1] == pytest.approx(-2.0)

    def test_length_limit(self):
        with pytest.raises(DataError):
            dft_reference(np.zeros(5000))

    def test_parseval_identity(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=333) + 1j * rng.normal(size=333)
        X = dft_reference(x)
        lhs = np.sum(np.abs(x) ** 2)
        rhs = np.sum(np.abs(X) ** 2) / x.shape[0]
        assert abs(lhs - rhs) < 1e-9 * lhs


class TestFft:
    def test_matches_reference_all_small_lengths(self):
        rng = np.random.default_rng(2)
        for n in range(1, 129):
            x = rng.normal(size=n) + 1j * rng.normal(size=n)
            err = np.max(np.abs(fft(x) - dft_reference(x)))
            assert err < 1e-9 * np.linalg.norm(x), n

    def test_random_lengths_up_to_4096(self):
        rng = np.random.default_rng(3)
        for n in rng.integers(129, 4097, size=8):
            x = rng.normal(size=int(n))
            err = np.max(np.abs(fft(x) - dft_reference(x)))
            assert err < 1e-9 * np.linalg.norm(x), n

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x, y = rng.normal(size=300), rng.normal(size=300)
        lhs = fft(2.5 * x - 1.5 * y)
        rhs = 2.5 * fft(x) - 1.5 * fft(y)
        assert np.max(np.abs(lhs - rhs)) < 1e-10 * np.linalg.norm(x)

    def test_ifft_inverts(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=1099) + 1j * rng.normal(size=1099)
        assert np.max(np.abs(ifft(fft(x)) - x)) < 1e-10

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            fft([])

    def test_bin_frequencies(self):
        f = bin_frequencies(1000, 1000.0)
        assert f[1] == pytest.approx(1.0)
        assert f[500] == pytest.approx(500.0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(min_value=1, max_value=600), seed=st.integers(0, 2**31 - 1))
def test_fft_oracle_property(n, seed):
    """Correctness of the fast path is defined by the direct DFT."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    err = np.max(np.abs(fft(x) - dft_reference(x)))
    assert err < 1e-9 * max(np.linalg.norm(x), 1e-30)
