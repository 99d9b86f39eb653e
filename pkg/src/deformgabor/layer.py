"""The deformable Gabor convolution layer.

One layer owns M*N*U learnable square filters, V learnable modulation
masks, and an offset-predicting convolution; it shares an immutable
orientation bank with every other layer. The forward pass runs in two
stages:

  1. deformable stage: the input's U orientation slices are flattened
     into N*U channels, offsets are predicted from them, and each of the
     V mask-modulated filter sets produces one intermediate map per
     output channel;
  2. Gabor stage: the V intermediate maps are combined by a plain
     "same"-padded convolution with the mask-modulated orientation
     filters, restoring U orientation slices.

Backward supports two modes. `exact` is the true gradient of the
composed map (the masks receive contributions through both stages, and
the offset branch feeds the input gradient). `paper` replaces the mask
and filter gradients with the approximate update directions

    dS = (dL/dGhat summed over orientations) o (sum_u G_u)
    dC = (dL/dDhat summed over masks)        o (sum_v S_v)

which ignore the masks' deformable-path term; offset and input
gradients stay exact in both modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .deform import (OffsetPredictor, predict_offsets, sample_backward,
                     sample_grid, sample_values, zero_predictor)
from .gabor import GaborBank
from .tensor import as_tensor, conv2d_backward

__all__ = [
    "LayerShape",
    "DGConvParams",
    "init_params",
    "expand_orientation",
    "modulate_conv",
    "modulate_gabor",
    "dgconv_forward",
    "dgconv_backward",
    "param_count",
]


@dataclass(frozen=True)
class LayerShape:
    """Channel bookkeeping for one layer.

    N and M are per-orientation input/output channel counts; N0 and M0 are
    the plain-convolution reference widths they were derived from (equal to
    N, M when the layer was sized directly).
    """

    U: int
    V: int
    H: int
    N: int
    M: int
    N0: int
    M0: int

    def __post_init__(self):
        if min(self.U, self.V, self.H, self.N, self.M) < 1:
            raise ValueError("all layer dimensions must be >= 1")
        if self.H % 2 == 0:
            raise ValueError("kernel side must be odd")

    @classmethod
    def from_reference(cls, N0: int, M0: int, U: int, V: int, H: int) -> "LayerShape":
        """Size the layer so filter parameters match a plain conv of widths N0, M0.

        Divides both widths by sqrt(U) (rounded), which cancels the U-fold
        filter replication.
        """
        root = math.sqrt(U)
        return cls(U=U, V=V, H=H, N=max(1, round(N0 / root)), M=max(1, round(M0 / root)),
                   N0=N0, M0=M0)


@dataclass
class DGConvParams:
    """Learnable state of one layer plus its shared orientation bank."""

    conv_filters: np.ndarray  # C: [M, N, U, H, H]
    masks: np.ndarray         # S: [V, H, H]
    offset_pred: OffsetPredictor
    gabor: GaborBank

    @property
    def shape(self) -> LayerShape:
        m, n, u, h, _ = self.conv_filters.shape
        return LayerShape(U=u, V=self.masks.shape[0], H=h, N=n, M=m, N0=n, M0=m)

    def scalar_counts(self) -> dict:
        """Actual learnable scalar counts, for cross-checking param_count."""
        return {
            "filters": self.conv_filters.size,
            "masks": self.masks.size,
            "offset": self.offset_pred.weight.size,
            "offset_bias": self.offset_pred.bias.size,
        }


def init_params(rng: np.random.Generator, shape: LayerShape, bank: GaborBank) -> DGConvParams:
    """Fresh layer: fan-in uniform filters, identity masks, zero offsets.

    With masks at one and a zero offset predictor the first forward pass is
    exactly a non-deformable Gabor-modulated convolution.
    """
    if bank.U != shape.U or bank.H != shape.H:
        raise ValueError(f"bank (U={bank.U}, H={bank.H}) does not match layer shape {shape}")
    bound = math.sqrt(1.0 / (shape.N * shape.U * shape.H * shape.H))
    filters = rng.uniform(-bound, bound, size=(shape.M, shape.N, shape.U, shape.H, shape.H))
    return DGConvParams(
        conv_filters=filters,
        masks=np.ones((shape.V, shape.H, shape.H)),
        offset_pred=zero_predictor(shape.N * shape.U, shape.H),
        gabor=bank,
    )


def expand_orientation(x: np.ndarray, U: int) -> np.ndarray:
    """Duplicate an [N, Hi, Wi] feature map into U orientation slices."""
    if U < 1:
        raise ValueError("need at least one orientation slice")
    x = as_tensor(x)
    return np.repeat(x[None], U, axis=0)


def modulate_conv(C: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Elementwise filter modulation: Dhat[m,n,u,v] = C[m,n,u] o S[v]."""
    C = as_tensor(C)
    S = as_tensor(S)
    if C.shape[-2:] != S.shape[-2:]:
        raise ValueError(f"filter side {C.shape[-2:]} differs from mask side {S.shape[-2:]}")
    return C[:, :, :, None] * S[None, None, None]


def modulate_gabor(bank: GaborBank, S: np.ndarray) -> np.ndarray:
    """Adaptive orientation filters: Ghat[v,u] = S[v] o G[u]."""
    S = as_tensor(S)
    if bank.H != S.shape[-1]:
        raise ValueError(f"bank side {bank.H} differs from mask side {S.shape[-1]}")
    return S[:, None] * bank.filters[None]


@dataclass
class DGConvCache:
    params: DGConvParams
    stride: int
    pad: int
    in_shape: tuple
    flat: np.ndarray          # [N*U, Hi, Wi] orientation-flattened input
    offsets: np.ndarray       # [2*H*H, Ho, Wo]
    samples: object           # bilinear corner cache
    v: np.ndarray             # sampled taps [N*U, H*H, Ho, Wo]
    c_flat: np.ndarray        # filters as [M, N*U, H*H] (tap-flattened, u-major channels)
    e_pad: np.ndarray         # padded intermediate maps [V, M, Ho+H-1, Wo+H-1]
    out_grid: tuple


def _flatten_filters(C: np.ndarray) -> np.ndarray:
    """[M, N, U, H, H] -> [M, U*N, H*H], matching the [U, N] -> U*N input flattening."""
    m, n, u, h, _ = C.shape
    return np.ascontiguousarray(C.transpose(0, 2, 1, 3, 4)).reshape(m, u * n, h * h)


def _unflatten_filters(c_flat: np.ndarray, n: int, u: int, h: int) -> np.ndarray:
    m = c_flat.shape[0]
    return np.ascontiguousarray(c_flat.reshape(m, u, n, h, h).transpose(0, 2, 1, 3, 4))


def dgconv_forward(x: np.ndarray, p: DGConvParams, stride: int = 1, pad: int = 0):
    """Run the two-stage layer on an oriented feature map.

    x: [U, N, Hi, Wi]. Returns (y, cache) with y: [U, M, Ho, Wo]; the Gabor
    stage uses "same" zero padding so y keeps the deformable stage's grid.
    """
    x = as_tensor(x)
    u, n, hi, wi = x.shape
    m, n_p, u_p, h, _ = p.conv_filters.shape
    if (u, n) != (u_p, n_p):
        raise ValueError(f"input [U={u}, N={n}] does not match filters [U={u_p}, N={n_p}]")
    if p.gabor.U != u or p.gabor.H != h:
        raise ValueError("orientation bank does not match the layer")
    v_cnt = p.masks.shape[0]

    flat = x.reshape(u * n, hi, wi)
    offsets = predict_offsets(flat, p.offset_pred, stride=stride, pad=pad)
    samples = sample_grid(flat, offsets, h, stride=stride, pad=pad)
    vals = sample_values(samples)  # [N*U, H*H, Ho, Wo]

    c_flat = _flatten_filters(p.conv_filters)
    s_flat = p.masks.reshape(v_cnt, h * h)
    # deformable stage, all V mask variants at once
    e = np.einsum("vk,mck,ckhw->vmhw", s_flat, c_flat, vals, optimize=True)

    ho, wo = e.shape[2], e.shape[3]
    p2 = (h - 1) // 2
    e_pad = np.zeros((v_cnt, m, ho + 2 * p2, wo + 2 * p2))
    e_pad[:, :, p2:p2 + ho, p2:p2 + wo] = e
    win = np.lib.stride_tricks.sliding_window_view(e_pad, (h, h), axis=(2, 3))
    ghat = modulate_gabor(p.gabor, p.masks)
    y = np.einsum("vmhwkl,vukl->umhw", win, ghat, optimize=True)

    cache = DGConvCache(params=p, stride=stride, pad=pad, in_shape=x.shape,
                        flat=flat, offsets=offsets, samples=samples, v=vals,
                        c_flat=c_flat, e_pad=e_pad, out_grid=(ho, wo))
    return y, cache


def dgconv_backward(grad_y: np.ndarray, cache: DGConvCache, mode: str = "exact") -> dict:
    """Gradients of the layer given upstream grad_y: [U, M, Ho, Wo].

    Returns {'conv_filters', 'masks', 'offset_weight', 'offset_bias', 'input'}.
    mode='exact' gives true gradients; mode='paper' swaps the mask and
    filter gradients for the approximate update directions (see module
    docstring) while keeping offsets and input exact.
    """
    if mode not in ("exact", "paper"):
        raise ValueError(f"unknown backward mode {mode!r}")
    p = cache.params
    u, n, hi, wi = cache.in_shape
    h = p.gabor.H
    v_cnt = p.masks.shape[0]
    ho, wo = cache.out_grid
    grad_y = as_tensor(grad_y)
    if grad_y.shape != (u, p.conv_filters.shape[0], ho, wo):
        raise ValueError(f"grad_y shape {grad_y.shape} does not match cached forward")

    g = p.gabor.filters
    s_flat = p.masks.reshape(v_cnt, h * h)
    ghat = modulate_gabor(p.gabor, p.masks)
    p2 = (h - 1) // 2

    # Gabor stage
    win = np.lib.stride_tricks.sliding_window_view(cache.e_pad, (h, h), axis=(2, 3))
    grad_ghat = np.einsum("umhw,vmhwkl->vukl", grad_y, win, optimize=True)
    grad_e_pad = np.zeros_like(cache.e_pad)
    for k in range(h):
        for l in range(h):
            grad_e_pad[:, :, k:k + ho, l:l + wo] += np.einsum(
                "vu,umhw->vmhw", ghat[:, :, k, l], grad_y, optimize=True)
    grad_e = grad_e_pad[:, :, p2:p2 + ho, p2:p2 + wo]

    # deformable stage
    grad_wfull = np.einsum("vmhw,ckhw->vmck", grad_e, cache.v, optimize=True)
    grad_samples = np.einsum("vmhw,mck,vk->ckhw", grad_e, cache.c_flat, s_flat, optimize=True)
    grad_flat, grad_offsets = sample_backward(cache.samples, grad_samples)

    # offset branch: predictor parameters plus its contribution to the input
    grad_flat_off, grad_pred_w = conv2d_backward(
        grad_offsets, cache.flat, p.offset_pred.weight, stride=cache.stride, pad=cache.pad)
    grad_pred_b = grad_offsets.sum(axis=(1, 2))
    grad_input = (grad_flat + grad_flat_off).reshape(u, n, hi, wi)

    if mode == "exact":
        grad_c_flat = np.einsum("vmck,vk->mck", grad_wfull, s_flat, optimize=True)
        grad_s = (np.einsum("vukl,ukl->vkl", grad_ghat, g, optimize=True)
                  + np.einsum("vmck,mck->vk", grad_wfull, cache.c_flat,
                              optimize=True).reshape(v_cnt, h, h))
    else:
        grad_c_flat = grad_wfull.sum(axis=0) * s_flat.sum(axis=0)[None, None, :]
        grad_s = grad_ghat.sum(axis=1) * g.sum(axis=0)[None]

    return {
        "conv_filters": _unflatten_filters(grad_c_flat, n, u, h),
        "masks": grad_s,
        "offset_weight": grad_pred_w,
        "offset_bias": grad_pred_b,
        "input": grad_input,
    }


def param_count(shape: LayerShape) -> dict:
    """Closed-form learnable scalar counts for one layer.

    filters: M*N*U*H^2, masks: V*H^2, offset: (2*H^2)*(N*U)*H^2, plus the
    offset bias 2*H^2 reported separately.
    """
    hh = shape.H * shape.H
    return {
        "filters": shape.M * shape.N * shape.U * hh,
        "masks": shape.V * hh,
        "offset": 2 * hh * shape.N * shape.U * hh,
        "offset_bias": 2 * hh,
    }
