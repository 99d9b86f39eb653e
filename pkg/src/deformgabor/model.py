"""Small image-classification stacks built from the layer primitives.

A model is a sequence of blocks (plain convolution for the low stages,
deformable Gabor convolution for the high stages, each followed by ReLU
and 2x2 average pooling) topped by a shared logistic patch head. All
convolutions run stride 1 with "same" padding; pooling does the
downsampling, so a W-pixel input yields a (W / 2^blocks) patch grid.

Widths are per-orientation channel counts for the Gabor blocks: a Gabor
block of width M costs the same filter parameters as a plain block of
width M*sqrt(U). `matched_plain_config` uses that rule, then pads the
final width until the plain baseline's total parameter count reaches
the Gabor model's, so robustness comparisons never favor the smaller
model.

Parameters live in a flat name -> array dict; names ending in `.masks`
are the modulation masks (they get their own learning rate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import layer as dg
from .gabor import GaborBank, make_bank
from .mil import MILHead, head_backward, patch_probs
from .tensor import as_tensor, conv2d, conv2d_backward, load_container, save_container

__all__ = [
    "ModelConfig",
    "Model",
    "ShapeMismatchError",
    "matched_plain_config",
    "param_table",
    "total_params",
    "save_checkpoint",
    "load_checkpoint",
]


class ShapeMismatchError(ValueError):
    """Checkpoint or input shapes do not match the configured model."""


@dataclass(frozen=True)
class ModelConfig:
    widths: tuple = (4, 8)
    plain_blocks: int = 1          # the first k stages stay plain convolutions
    in_channels: int = 1
    U: int = 4
    V: int = 2
    H: int = 3
    sigma: float | None = None
    lam: float | None = None
    task: str = "mil"              # "mil" or "miml"
    n_labels: int = 1

    def __post_init__(self):
        if not 0 <= self.plain_blocks <= len(self.widths):
            raise ValueError("plain_blocks must be between 0 and the number of stages")
        if self.task not in ("mil", "miml"):
            raise ValueError(f"unknown task {self.task!r}")

    @property
    def n_blocks(self) -> int:
        return len(self.widths)

    def block_kind(self, i: int) -> str:
        return "plain" if i < self.plain_blocks else "gabor"

    def head_channels(self) -> int:
        last = self.widths[-1]
        return last if self.block_kind(self.n_blocks - 1) == "plain" else last * self.U


def _relu(x):
    return np.maximum(x, 0.0)


def _avgpool2(x):
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ShapeMismatchError(f"2x2 pooling needs even spatial dims, got {(h, w)}")
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 0::2, 1::2]
                   + x[..., 1::2, 0::2] + x[..., 1::2, 1::2])


def _avgpool2_backward(grad, in_shape):
    out = np.zeros(in_shape)
    for dy in (0, 1):
        for dx in (0, 1):
            out[..., dy::2, dx::2] = 0.25 * grad
    return out


class Model:
    """Configured stack with explicit forward/backward and a flat parameter dict."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.bank: GaborBank | None = None
        if cfg.plain_blocks < cfg.n_blocks:
            self.bank = make_bank(cfg.U, cfg.H, cfg.sigma, cfg.lam)
        self.params: dict[str, np.ndarray] = {}
        self.dg_params: dict[int, dg.DGConvParams] = {}

        cin = cfg.in_channels
        for i, width in enumerate(cfg.widths):
            if cfg.block_kind(i) == "plain":
                bound = math.sqrt(1.0 / (cin * cfg.H * cfg.H))
                w = rng.uniform(-bound, bound, size=(width, cin, cfg.H, cfg.H))
                self.params[f"block{i}.weight"] = w
                cin = width
            else:
                shape = dg.LayerShape(U=cfg.U, V=cfg.V, H=cfg.H, N=cin, M=width,
                                      N0=cin, M0=width)
                p = dg.init_params(rng, shape, self.bank)
                self.dg_params[i] = p
                self.params[f"block{i}.conv_filters"] = p.conv_filters
                self.params[f"block{i}.masks"] = p.masks
                self.params[f"block{i}.offset_weight"] = p.offset_pred.weight
                self.params[f"block{i}.offset_bias"] = p.offset_pred.bias
                cin = width

        c_feat = cfg.head_channels()
        if cfg.task == "mil":
            hw = 0.01 * rng.standard_normal(c_feat)
            hb = np.zeros(1)
        else:
            hw = 0.01 * rng.standard_normal((cfg.n_labels, c_feat))
            hb = np.zeros(cfg.n_labels)
        self.params["head.w"] = hw
        self.params["head.b"] = hb

    @property
    def head(self) -> MILHead:
        b = self.params["head.b"]
        return MILHead(w=self.params["head.w"], b=float(b[0]) if b.size == 1 and self.cfg.task == "mil" else b)

    def forward(self, image: np.ndarray):
        """image: [in_channels, W, W] -> (PatchProbabilities, cache for backward)."""
        cfg = self.cfg
        x = as_tensor(image)
        if x.shape[0] != cfg.in_channels:
            raise ShapeMismatchError(f"expected {cfg.in_channels} input channels, got {x.shape[0]}")
        pad = (cfg.H - 1) // 2
        caches = []
        for i in range(cfg.n_blocks):
            if cfg.block_kind(i) == "plain":
                w = self.params[f"block{i}.weight"]
                pre = conv2d(x, w, stride=1, pad=pad)
                act = _relu(pre)
                out = _avgpool2(act)
                caches.append(("plain", i, x, pre, act.shape))
                x = out
            else:
                if x.ndim == 3:  # entering the oriented part of the stack
                    x = dg.expand_orientation(x, cfg.U)
                    entered = True
                else:
                    entered = False
                pre, cache = dg.dgconv_forward(x, self.dg_params[i], stride=1, pad=pad)
                act = _relu(pre)
                out = _avgpool2(act)
                caches.append(("gabor", i, cache, pre, act.shape, entered))
                x = out
        if x.ndim == 4:  # [U, M, h, w] -> [U*M, h, w]
            feat = x.reshape(-1, x.shape[2], x.shape[3])
        else:
            feat = x
        probs = patch_probs(feat, self.head)
        return probs, (caches, feat, probs)

    def backward(self, cache, grad_p: np.ndarray, mode: str = "exact") -> dict:
        """Gradients for every parameter given d(loss)/d(patch probabilities)."""
        caches, feat, probs = cache
        grad_w, grad_b, grad_feat = head_backward(grad_p, feat, self.head, probs)
        grads = {"head.w": grad_w,
                 "head.b": np.atleast_1d(np.asarray(grad_b, dtype=np.float64))}
        pad = (self.cfg.H - 1) // 2
        g = grad_feat
        for entry in reversed(caches):
            if entry[0] == "plain":
                _, i, x_in, pre, act_shape = entry
                g = _avgpool2_backward(g, act_shape)
                g = g * (pre > 0)
                g, gw = conv2d_backward(g, x_in, self.params[f"block{i}.weight"], stride=1, pad=pad)
                grads[f"block{i}.weight"] = gw
            else:
                _, i, dg_cache, pre, act_shape, entered = entry
                if g.ndim == 3:  # arrived flattened from the head
                    g = g.reshape(self.cfg.U, -1, g.shape[1], g.shape[2])
                g = _avgpool2_backward(g, act_shape)
                g = g * (pre > 0)
                block_grads = dg.dgconv_backward(g, dg_cache, mode=mode)
                grads[f"block{i}.conv_filters"] = block_grads["conv_filters"]
                grads[f"block{i}.masks"] = block_grads["masks"]
                grads[f"block{i}.offset_weight"] = block_grads["offset_weight"]
                grads[f"block{i}.offset_bias"] = block_grads["offset_bias"]
                g = block_grads["input"]
                if entered:
                    g = g.sum(axis=0)  # undo orientation duplication
        return grads


# ---------------------------------------------------------------------------
# Parameter accounting and the matched plain baseline.
# ---------------------------------------------------------------------------

def param_table(cfg: ModelConfig) -> list:
    """Per-block parameter breakdown rows: (name, kind, dict of counts)."""
    rows = []
    cin = cfg.in_channels
    hh = cfg.H * cfg.H
    for i, width in enumerate(cfg.widths):
        if cfg.block_kind(i) == "plain":
            rows.append((f"block{i}", "plain", {"filters": width * cin * hh}))
        else:
            shape = dg.LayerShape(U=cfg.U, V=cfg.V, H=cfg.H, N=cin, M=width, N0=cin, M0=width)
            rows.append((f"block{i}", "gabor", dg.param_count(shape)))
        cin = width
    c_feat = cfg.head_channels()
    head = c_feat * (1 if cfg.task == "mil" else cfg.n_labels)
    bias = 1 if cfg.task == "mil" else cfg.n_labels
    rows.append(("head", "head", {"filters": head, "bias": bias}))
    return rows


def total_params(cfg: ModelConfig) -> int:
    return sum(sum(counts.values()) for _, _, counts in param_table(cfg))


def matched_plain_config(cfg: ModelConfig) -> ModelConfig:
    """Plain-convolution baseline sized to at least the Gabor model's total parameters.

    Gabor-stage widths are scaled by sqrt(U) (the filter-matching rule), then
    the last width grows until the totals cross, compensating the mask and
    offset parameters the plain stack does not have.
    """
    root = math.sqrt(cfg.U)
    widths = [w if cfg.block_kind(i) == "plain" else max(1, round(w * root))
              for i, w in enumerate(cfg.widths)]
    target = total_params(cfg)
    plain = replace(cfg, widths=tuple(widths), plain_blocks=len(widths))
    while total_params(plain) < target:
        widths[-1] += 1
        plain = replace(cfg, widths=tuple(widths), plain_blocks=len(widths))
    return plain


# ---------------------------------------------------------------------------
# Checkpoints: named tensor sections in the binary container.
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: Model) -> None:
    sections = dict(model.params)
    if model.bank is not None:
        sections["bank.filters"] = model.bank.filters
        sections["bank.config"] = np.array([model.bank.U, model.bank.H,
                                            model.bank.sigma, model.bank.lam])
    save_container(path, sections)


def load_checkpoint(path, model: Model) -> None:
    """Copy saved parameters into an already-configured model, strict on shapes."""
    sections = load_container(path)
    for name, arr in model.params.items():
        if name not in sections:
            raise ShapeMismatchError(f"checkpoint is missing parameter {name!r}")
        if sections[name].shape != arr.shape:
            raise ShapeMismatchError(
                f"checkpoint {name!r} has shape {sections[name].shape}, model wants {arr.shape}")
        arr[...] = sections[name]
