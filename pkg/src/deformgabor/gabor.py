"""Fixed bank of orientation-selective Gabor filters.

One bank is built per network and shared by every layer that modulates
it; only the learned masks adapt. Filters are real-valued (Gaussian
envelope times cosine carrier, unit aspect ratio) and L2-normalized so
the masks carry all magnitude information.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["GaborBank", "make_bank", "identity_bank"]


@dataclass(frozen=True)
class GaborBank:
    """U fixed orientation filters of side H, plus the envelope/carrier hyperparameters."""

    U: int
    H: int
    filters: np.ndarray  # [U, H, H], each unit L2 norm
    sigma: float
    lam: float


def make_bank(U: int, H: int, sigma: float | None = None, lam: float | None = None) -> GaborBank:
    """Build the orientation bank.

    Orientation u (1-based) has angle (u-1)*pi/U; the cosine carrier makes
    the filters pi-periodic so angles cover [0, pi). On the centered grid
    x, y in {-(H-1)/2 .. (H-1)/2} the raw value is

        exp(-(x'^2 + y'^2) / (2 sigma^2)) * cos(2 pi x' / lam)

    with x' = x cos(theta) + y sin(theta), y' = -x sin(theta) + y cos(theta),
    then each filter is scaled to unit L2 norm. Defaults: sigma = H/3,
    lam = H/2.
    """
    if U < 1:
        raise ValueError("need at least one orientation")
    if H < 3 or H % 2 == 0:
        raise ValueError(f"kernel side must be odd and >= 3, got {H}")
    sigma = H / 3.0 if sigma is None else float(sigma)
    lam = H / 2.0 if lam is None else float(lam)
    if sigma <= 0 or lam <= 0:
        raise ValueError("sigma and lambda must be positive")

    half = (H - 1) // 2
    coords = np.arange(-half, half + 1, dtype=np.float64)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")  # row index is y, column is x

    filters = np.empty((U, H, H))
    for u in range(U):
        theta = u * np.pi / U
        xr = xx * np.cos(theta) + yy * np.sin(theta)
        yr = -xx * np.sin(theta) + yy * np.cos(theta)
        raw = np.exp(-(xr ** 2 + yr ** 2) / (2.0 * sigma ** 2)) * np.cos(2.0 * np.pi * xr / lam)
        filters[u] = raw / np.linalg.norm(raw)
    return GaborBank(U=U, H=H, filters=filters, sigma=sigma, lam=lam)


def identity_bank(H: int) -> GaborBank:
    """Single-orientation bank whose filter is the unit impulse at the center.

    Convolving with it is the identity, which reduces the Gabor stage to a
    pass-through; used by the plain-convolution reduction checks.
    """
    if H < 1 or H % 2 == 0:
        raise ValueError(f"kernel side must be odd, got {H}")
    f = np.zeros((1, H, H))
    f[0, (H - 1) // 2, (H - 1) // 2] = 1.0
    return GaborBank(U=1, H=H, filters=f, sigma=1.0, lam=1.0)
