import numpy as np
import pytest

from conftest import fd_grad, rel_err
from deformgabor.tensor import (conv2d, conv2d_backward, conv2d_naive, dump_csv,
                                load_container, load_csv, load_tensor,
                                save_container, save_tensor, zeros)


def conv_scatter_oracle(x, w, stride=1, pad=0):
    """Independent reimplementation with the opposite loop order (input-scatter)."""
    cin, hi, wi = x.shape
    cout, _, kh, kw = w.shape
    ho = (hi + 2 * pad - kh) // stride + 1
    wo = (wi + 2 * pad - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for c in range(cin):
        for iy in range(hi):
            for ix in range(wi):
                for k in range(kh):
                    for l in range(kw):
                        oy, r1 = divmod(iy + pad - k, stride)
                        ox, r2 = divmod(ix + pad - l, stride)
                        if r1 == 0 and r2 == 0 and 0 <= oy < ho and 0 <= ox < wo:
                            out[:, oy, ox] += w[:, c, k, l] * x[c, iy, ix]
    return out


class TestZeros:
    def test_basic(self):
        np.testing.assert_array_equal(zeros([2, 2]), np.zeros((2, 2)))
        np.testing.assert_array_equal(zeros([1]), np.zeros(1))
        z = zeros([3, 1, 2])
        assert z.shape == (3, 1, 2) and z.size == 6 and not z.any()

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            zeros([])
        with pytest.raises(ValueError):
            zeros([2, 0])


class TestNaiveConv:
    def test_constant_field(self):
        x = np.ones((1, 3, 3))
        w = np.ones((1, 1, 3, 3))
        np.testing.assert_array_equal(conv2d_naive(x, w), [[[9.0]]])

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 4, 4))
        w = np.zeros((2, 2, 3, 3))
        w[0, 0, 1, 1] = 1.0
        w[1, 1, 1, 1] = 1.0
        np.testing.assert_allclose(conv2d_naive(x, w, pad=1), x, atol=0)

    def test_against_scatter_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        np.testing.assert_allclose(conv2d_naive(x, w), conv_scatter_oracle(x, w), atol=1e-13)

    def test_linearity(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 5, 5))
        y = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((2, 2, 3, 3))
        lhs = conv2d_naive(2.5 * x + 0.3 * y, w)
        rhs = 2.5 * conv2d_naive(x, w) + 0.3 * conv2d_naive(y, w)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_determinism(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 6, 6))
        w = rng.standard_normal((2, 1, 3, 3))
        a = conv2d_naive(x, w, stride=1, pad=1)
        b = conv2d_naive(x, w, stride=1, pad=1)
        assert a.tobytes() == b.tobytes()

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            conv2d_naive(np.zeros((2, 4, 4)), np.zeros((1, 3, 3, 3)))


class TestFastConv:
    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
    def test_matches_naive(self, stride, pad):
        rng = np.random.default_rng(stride * 10 + pad)
        x = rng.standard_normal((3, 7, 7))
        w = rng.standard_normal((4, 3, 3, 3))
        np.testing.assert_allclose(conv2d(x, w, stride, pad),
                                   conv2d_naive(x, w, stride, pad), atol=1e-12)

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1)])
    def test_backward_finite_differences(self, stride, pad):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 5, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        g = rng.standard_normal(conv2d(x, w, stride, pad).shape)

        def loss():
            return float(np.sum(conv2d(x, w, stride, pad) * g))

        gx, gw = conv2d_backward(g, x, w, stride, pad)
        assert rel_err(gx, fd_grad(loss, x)) < 1e-7
        assert rel_err(gw, fd_grad(loss, w)) < 1e-7

    def test_non_integral_output_rejected(self):
        with pytest.raises(ValueError):
            conv2d(np.zeros((1, 6, 6)), np.zeros((1, 1, 3, 3)), stride=2, pad=0)


class TestSerialization:
    def test_tensor_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((3, 2, 4))
        p = tmp_path / "t.bin"
        save_tensor(p, a)
        np.testing.assert_array_equal(load_tensor(p), a)

    def test_binary_layout(self, tmp_path):
        a = np.array([[1.0, 2.0]])
        p = tmp_path / "t.bin"
        save_tensor(p, a)
        raw = p.read_bytes()
        # u32 rank, u32 dims, f64 payload, little endian
        assert raw[:4] == (2).to_bytes(4, "little")
        assert raw[4:8] == (1).to_bytes(4, "little")
        assert raw[8:12] == (2).to_bytes(4, "little")
        assert np.frombuffer(raw[12:], dtype="<f8").tolist() == [1.0, 2.0]

    def test_container_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        sections = {"a": rng.standard_normal((2, 2)), "b.c": rng.standard_normal(3)}
        p = tmp_path / "c.bin"
        save_container(p, sections)
        back = load_container(p)
        assert set(back) == {"a", "b.c"}
        for k in sections:
            np.testing.assert_array_equal(back[k], sections[k])

    def test_csv_roundtrip(self, tmp_path):
        a = np.array([[1.5, -2.25], [0.0, 3.125]])
        p = tmp_path / "m.csv"
        dump_csv(p, a)
        np.testing.assert_array_equal(load_csv(p), a)

    def test_csv_rejects_3d(self, tmp_path):
        with pytest.raises(ValueError):
            dump_csv(tmp_path / "x.csv", np.zeros((2, 2, 2)))
