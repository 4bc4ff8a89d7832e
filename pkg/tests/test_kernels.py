import numpy as np
import pytest

from icarec import _kernels
from icarec._kernels import _numpy_impl
from oracles import conv1d_direct

compiled = pytest.importorskip(
    "icarec._kernels._fast", reason="compiled kernels not built")


def _pad(x, k):
    p = (k - 1) // 2
    return np.pad(x, ((0, 0), (0, 0), (p, p)))


class TestBackendAgreement:
    def test_matmul_bitwise(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            m, k, n = rng.integers(1, 40, 3)
            a = rng.standard_normal((m, k))
            b = rng.standard_normal((k, n))
            assert np.array_equal(compiled.matmul(a, b), _numpy_impl.matmul(a, b))

    def test_conv_forward_bitwise(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            b, cin, cout = rng.integers(1, 5, 3)
            t = int(rng.integers(3, 80))
            k = int(rng.choice([1, 3, 5, 7, 13]))
            xp = _pad(rng.standard_normal((b, cin, t)), k)
            w = rng.standard_normal((cout, cin, k))
            assert np.array_equal(
                compiled.conv1d_fwd(xp, w), _numpy_impl.conv1d_fwd(xp, w))

    def test_conv_grad_w_close(self):
        # reduction orders differ across backends; agreement to ~1e-12 relative
        rng = np.random.default_rng(2)
        for _ in range(10):
            b, cin, cout = rng.integers(1, 5, 3)
            t = int(rng.integers(3, 60))
            k = int(rng.choice([1, 3, 5]))
            g = rng.standard_normal((b, cout, t))
            xp = _pad(rng.standard_normal((b, cin, t)), k)
            np.testing.assert_allclose(
                compiled.conv1d_grad_w(g, xp, k),
                _numpy_impl.conv1d_grad_w(g, xp, k), rtol=1e-11, atol=1e-13)


class TestAgainstOracle:
    def test_forward_matches_sliding_window(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((2, 3, 17))
        w = rng.standard_normal((4, 3, 5))
        expect = conv1d_direct(x, w)
        for impl in (compiled, _numpy_impl):
            assert np.array_equal(impl.conv1d_fwd(_pad(x, 5), w), expect)

    def test_matmul_row_stability(self):
        # single-row product equals the corresponding row of the batched product
        rng = np.random.default_rng(4)
        a = rng.standard_normal((8, 12))
        b = rng.standard_normal((12, 6))
        for impl in (compiled, _numpy_impl):
            full = impl.matmul(a, b)
            for i in range(8):
                row = impl.matmul(a[i : i + 1].copy(), b)
                assert np.array_equal(row[0], full[i])


def test_active_backend_exposed():
    assert _kernels.backend_name() in ("compiled", "python")
