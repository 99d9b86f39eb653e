"""Optimizers, the finite-difference gradient harness, and the training loop.

Mask parameters (names ending `.masks`) train under their own learning
rate; every other parameter, including the offset predictor, uses the
filter rate. Runs are bitwise reproducible: one seed determines
initialization, shuffling, and augmentation, and all reductions are
ordered.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .data import AugmentConfig, augment
from .metrics import auc
from .mil import (bag_prob, class_weights, miml_class_weights, miml_loss,
                  weighted_mil_loss)
from .model import Model, save_checkpoint

__all__ = [
    "OptimizerConfig",
    "NumericsError",
    "sgd_step",
    "adam_step",
    "grad_check",
    "gradcheck_problem",
    "batch_loss_and_grads",
    "evaluate",
    "train_model",
]


class NumericsError(FloatingPointError):
    """Loss or gradients went non-finite during training."""


@dataclass
class OptimizerConfig:
    kind: str = "adam"            # "adam" or "sgd_momentum"
    lr_masks: float = 1e-4
    lr_filters: float = 1e-4
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 50
    batch_size: int = 16
    lr_decay_every: int = 100     # adam: multiply rates by lr_decay_factor this often
    lr_decay_factor: float = 0.1
    plateau_patience: int = 10    # sgd: decay after this many epochs without val improvement
    seed: int = 0

    def __post_init__(self):
        if self.lr_masks < 0:
            raise ValueError("mask learning rate must be >= 0")
        if self.lr_filters <= 0:
            raise ValueError("filter learning rate must be > 0")
        if self.kind not in ("adam", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def _lr(name: str, cfg: OptimizerConfig) -> float:
    return cfg.lr_masks if name.split(".")[-1] == "masks" else cfg.lr_filters


def sgd_step(params: dict, grads: dict, state: dict, cfg: OptimizerConfig,
             lr_scale: float = 1.0) -> None:
    """In-place momentum step: v <- mu v + g; theta <- theta - lr v - lr wd theta."""
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} mismatches {name} {p.shape}")
        v = state.setdefault(name, np.zeros_like(p))
        v *= cfg.momentum
        v += g
        lr = _lr(name, cfg) * lr_scale
        p -= lr * v + lr * cfg.weight_decay * p


def adam_step(params: dict, grads: dict, state: dict, cfg: OptimizerConfig,
              lr_scale: float = 1.0) -> None:
    """In-place bias-corrected Adam; weight decay enters as an L2 gradient term."""
    t = state.get("t", 0) + 1
    state["t"] = t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} mismatches {name} {p.shape}")
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p
        m = state.setdefault(f"{name}.m", np.zeros_like(p))
        v = state.setdefault(f"{name}.v", np.zeros_like(p))
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * g * g
        mhat = m / (1 - cfg.beta1 ** t)
        vhat = v / (1 - cfg.beta2 ** t)
        p -= _lr(name, cfg) * lr_scale * mhat / (np.sqrt(vhat) + cfg.eps)


def optimizer_step(params, grads, state, cfg: OptimizerConfig, lr_scale: float = 1.0) -> None:
    if cfg.kind == "adam":
        adam_step(params, grads, state, cfg, lr_scale)
    else:
        sgd_step(params, grads, state, cfg, lr_scale)


# ---------------------------------------------------------------------------
# Gradient verification.
# ---------------------------------------------------------------------------

def grad_check(loss_and_grads, loss_only, params: dict, eps: float = 1e-5) -> dict:
    """Central finite differences against analytic gradients, per parameter block.

    `loss_and_grads()` returns (loss, grads dict) at the current parameter
    values; `loss_only()` just the loss. Parameters are perturbed in place
    and restored. Returns {name: max relative error}; never raises on
    disagreement, only reports.
    """
    _, analytic = loss_and_grads()
    report = {}
    for name, p in params.items():
        a = analytic[name]
        worst = 0.0
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_only()
            flat[i] = orig - eps
            down = loss_only()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            ai = float(a.reshape(-1)[i])
            rel = abs(ai - fd) / max(abs(ai), abs(fd), 1e-8)
            worst = max(worst, rel)
        report[name] = worst
    return report


def gradcheck_problem(model_cfg, seed: int = 0, image_size: int = 8, mode: str = "exact"):
    """Well-conditioned instance for verifying a whole model's gradients.

    Finite differences resolve a gradient entry only when it clears the
    roundoff floor of the loss, so the instance avoids degenerate operating
    points: offsets sit at fractional coordinates, offset weights and the
    head are non-zero, inputs are scaled up, and the loss mixes a positive
    and a negative bag. Returns (model, loss_and_grads, loss_only).
    """
    from .model import Model  # local import; model depends on this module's siblings

    rng = np.random.default_rng(seed)
    model = Model(model_cfg, rng)
    r2 = np.random.default_rng([seed, 17])
    for name, p in model.params.items():
        if name.endswith("offset_bias"):
            p[:] = r2.uniform(0.15, 0.35, size=p.shape)
        elif name.endswith("offset_weight"):
            p[:] = 0.1 * r2.standard_normal(p.shape)
        elif name == "head.w":
            p[:] = 2.0 * r2.standard_normal(p.shape)
    images = [3.0 * rng.random((model_cfg.in_channels, image_size, image_size))
              for _ in range(2)]
    if model_cfg.task == "mil":
        labels = [1, 0]
        weights = {0: 2.0, 1: 3.0}
        bag_loss = lambda probs, y: weighted_mil_loss([(probs, y)], weights)
    else:
        labels = [[1] + [0] * (model_cfg.n_labels - 1),
                  [0] * (model_cfg.n_labels - 1) + [1]]
        weights = None
        bag_loss = lambda probs, y: miml_loss([(probs, y)])

    def loss_and_grads(mode=mode):
        total = 0.0
        acc = {k: np.zeros_like(v) for k, v in model.params.items()}
        for img, y in zip(images, labels):
            probs, cache = model.forward(img)
            loss, gp = bag_loss(probs, y)
            total += loss
            for k, g in model.backward(cache, gp[0], mode=mode).items():
                acc[k] += g
        return total, acc

    def loss_only():
        return sum(bag_loss(model.forward(img)[0], y)[0]
                   for img, y in zip(images, labels))

    return model, loss_and_grads, loss_only


# ---------------------------------------------------------------------------
# Batched loss/gradients and evaluation.
# ---------------------------------------------------------------------------

def batch_loss_and_grads(model: Model, images, labels, weights, mode: str = "exact"):
    """Mean loss and mean parameter gradients over a batch of bags."""
    n = len(images)
    total = 0.0
    acc: dict[str, np.ndarray] = {}
    for img, y in zip(images, labels):
        probs, cache = model.forward(img)
        if model.cfg.task == "mil":
            loss, grads_p = weighted_mil_loss([(probs, y)], weights)
        else:
            loss, grads_p = miml_loss([(probs, y)], weights)
        total += loss
        grads = model.backward(cache, grads_p[0], mode=mode)
        for name, g in grads.items():
            if name in acc:
                acc[name] += g
            else:
                acc[name] = g.astype(np.float64, copy=True)
    for g in acc.values():
        g /= n
    return total / n, acc


def evaluate(model: Model, bags, weights=None, mode_scores_only: bool = False):
    """Bag-level scores, labels, and mean loss over a dataset.

    For the multi-label task scores are [n, C] per-class maxima.
    """
    scores = []
    labels = []
    total = 0.0
    for img, y in bags:
        probs, _ = model.forward(img)
        if model.cfg.task == "mil":
            scores.append(bag_prob(probs))
            if not mode_scores_only and weights is not None:
                total += weighted_mil_loss([(probs, y)], weights)[0]
        else:
            scores.append(np.asarray(probs.p).max(axis=1))
            if not mode_scores_only and weights is not None:
                total += miml_loss([(probs, y)], weights)[0]
        labels.append(y)
    return np.asarray(scores), np.asarray(labels), total / max(len(bags), 1)


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def train_model(model: Model, train_bags, val_bags, cfg: OptimizerConfig,
                out_dir: str | None = None, mode: str = "exact",
                augment_cfg: AugmentConfig | None = None):
    """Deterministic training run; returns the per-epoch history.

    Writes `train_log.csv`, `initial.ckpt`, `best.ckpt` (by validation AUC)
    and `last.ckpt` under out_dir when given. Adam decays both rates by
    lr_decay_factor every lr_decay_every epochs; SGD decays on a validation
    plateau. Raises NumericsError if the loss goes non-finite.
    """
    train_labels = [y for _, y in train_bags]
    if model.cfg.task == "mil":
        weights = class_weights(train_labels)
    else:
        weights = miml_class_weights(np.asarray(train_labels))

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "initial.ckpt"), model)

    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    state: dict = {}
    lr_scale = 1.0
    best_val_auc = -1.0
    best_val_loss = np.inf
    plateau = 0
    history = []

    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(train_bags))
        epoch_loss = 0.0
        for batch_idx in _chunks(order, cfg.batch_size):
            images = []
            labels = []
            for j in batch_idx:
                img, y = train_bags[j]
                if augment_cfg is not None:
                    img = augment(img, augment_cfg,
                                  seed=np.random.SeedSequence([cfg.seed, 2, epoch, int(j)]))
                images.append(img)
                labels.append(y)
            loss, grads = batch_loss_and_grads(model, images, labels, weights, mode=mode)
            if not np.isfinite(loss):
                raise NumericsError(f"non-finite training loss at epoch {epoch}")
            epoch_loss += loss * len(batch_idx)
            optimizer_step(model.params, grads, state, cfg, lr_scale)
        train_loss = epoch_loss / len(train_bags)

        val_scores, val_labels, val_loss = evaluate(model, val_bags, weights)
        if model.cfg.task == "mil":
            val_auc = auc(val_scores, val_labels)
        else:
            val_auc = float(np.mean([auc(val_scores[:, c], np.asarray(val_labels)[:, c])
                                     for c in range(val_scores.shape[1])]))
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "val_auc": val_auc})

        if cfg.kind == "adam":
            if (epoch + 1) % cfg.lr_decay_every == 0:
                lr_scale *= cfg.lr_decay_factor
        else:
            if val_loss < best_val_loss - 1e-12:
                best_val_loss = val_loss
                plateau = 0
            else:
                plateau += 1
                if plateau >= cfg.plateau_patience:
                    lr_scale *= cfg.lr_decay_factor
                    plateau = 0

        if out_dir is not None and val_auc > best_val_auc:
            save_checkpoint(os.path.join(out_dir, "best.ckpt"), model)
        best_val_auc = max(best_val_auc, val_auc)

    if out_dir is not None:
        if cfg.epochs > 0:
            save_checkpoint(os.path.join(out_dir, "last.ckpt"), model)
        with open(os.path.join(out_dir, "train_log.csv"), "w") as fh:
            fh.write("epoch,train_loss,val_loss,val_auc\n")
            for row in history:
                fh.write(f"{row['epoch']},{row['train_loss']!r},"
                         f"{row['val_loss']!r},{row['val_auc']!r}\n")
    return history
