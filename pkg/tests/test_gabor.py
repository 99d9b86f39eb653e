import numpy as np
import pytest

from deformgabor.gabor import identity_bank, make_bank
from deformgabor.tensor import conv2d_naive


def gabor_formula(theta, H, sigma, lam):
    """Per-pixel evaluation of the unnormalized kernel, independent of make_bank."""
    half = (H - 1) // 2
    out = np.empty((H, H))
    for i in range(H):
        for j in range(H):
            y, x = i - half, j - half
            xr = x * np.cos(theta) + y * np.sin(theta)
            yr = -x * np.sin(theta) + y * np.cos(theta)
            out[i, j] = np.exp(-(xr ** 2 + yr ** 2) / (2 * sigma ** 2)) * np.cos(2 * np.pi * xr / lam)
    return out


class TestBankValues:
    def test_origin_value_before_normalization(self):
        for theta in (0.0, 0.7, np.pi / 2):
            raw = gabor_formula(theta, 5, 1.3, 2.0)
            assert raw[2, 2] == pytest.approx(1.0, abs=1e-15)

    def test_pointwise_formula_oracle(self):
        bank = make_bank(2, 3, sigma=1.0, lam=1.5)
        for u in range(2):
            raw = gabor_formula(u * np.pi / 2, 3, 1.0, 1.5)
            np.testing.assert_allclose(bank.filters[u], raw / np.linalg.norm(raw), atol=1e-14)

    def test_quarter_turn_rotation(self):
        bank = make_bank(4, 5, sigma=1.5, lam=2.5)
        # theta = pi/2 filter is the theta = 0 filter rotated 90 degrees on the grid
        np.testing.assert_allclose(bank.filters[2], np.rot90(bank.filters[0]), atol=1e-12)

    def test_pi_periodic_orientation(self):
        for theta in (0.0, 0.4, 1.1):
            a = gabor_formula(theta, 5, 1.2, 2.0)
            b = gabor_formula(theta + np.pi, 5, 1.2, 2.0)
            np.testing.assert_allclose(a, b, atol=1e-12)


class TestBankInvariants:
    @pytest.mark.parametrize("U,H", [(1, 3), (4, 5), (6, 7)])
    def test_unit_norm(self, U, H):
        bank = make_bank(U, H)
        for u in range(U):
            assert abs(np.linalg.norm(bank.filters[u]) - 1.0) < 1e-12

    def test_deterministic_bytes(self):
        a = make_bank(4, 5, 1.5, 2.5)
        b = make_bank(4, 5, 1.5, 2.5)
        assert a.filters.tobytes() == b.filters.tobytes()

    def test_defaults(self):
        bank = make_bank(4, 9)
        assert bank.sigma == pytest.approx(3.0)
        assert bank.lam == pytest.approx(4.5)


class TestValidation:
    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            make_bank(4, 4)

    def test_bad_hyperparameters_rejected(self):
        with pytest.raises(ValueError):
            make_bank(4, 5, sigma=0.0)
        with pytest.raises(ValueError):
            make_bank(4, 5, lam=-1.0)
        with pytest.raises(ValueError):
            make_bank(0, 5)


class TestIdentityBank:
    def test_convolution_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 5, 5))
        bank = identity_bank(3)
        out = conv2d_naive(x, bank.filters[None], pad=1)
        np.testing.assert_allclose(out, x, atol=0)

    def test_unit_norm(self):
        assert np.linalg.norm(identity_bank(5).filters) == 1.0
