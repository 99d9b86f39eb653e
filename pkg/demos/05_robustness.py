"""Single-seed cut of the robustness comparison (the acceptance suite runs three).

Trains the deformable Gabor stack and a plain stack of at least equal
total parameter count on clean bags, then corrupts the test set two
ways: random rotate+scale resampling, and 1% salt noise.
"""

import time

import numpy as np

from deformgabor import ModelConfig, OptimizerConfig
from deformgabor.data import (SynthLesionSpec, build_bags, deform_transform,
                              salt_noise)
from deformgabor.metrics import accuracy, auc
from deformgabor.model import Model, matched_plain_config, total_params
from deformgabor.train import evaluate, train_model

spec = SynthLesionSpec(image_size=32, lesion_count=(1, 2), lesion_radius=(4.0, 7.0),
                       contrast=0.6, noise_std=0.15, positive_fraction=0.5, seed=100)
train = build_bags(spec, 200)
val = build_bags(spec, 60, start_index=200)
test = build_bags(spec, 120, start_index=260)

rng = np.random.default_rng(5)
deformed, salted = [], []
for img, y in test:
    for _ in range(3):
        deformed.append((deform_transform(img, rng.uniform(0.5, 1.5),
                                          rng.uniform(0, 2 * np.pi)), y))
        salted.append((salt_noise(img, 0.01, 1.0, seed=int(rng.integers(2 ** 31))), y))

dg_cfg = ModelConfig(widths=(4, 8, 8), plain_blocks=2, U=4, V=2, H=3)
pl_cfg = matched_plain_config(dg_cfg)
print(f"deformable Gabor stack: widths {dg_cfg.widths}, {total_params(dg_cfg)} params")
print(f"plain baseline:         widths {pl_cfg.widths}, {total_params(pl_cfg)} params")

opt = OptimizerConfig(kind="adam", lr_masks=0.005, lr_filters=0.005,
                      epochs=40, batch_size=16, seed=0)
for name, cfg in (("deformable-gabor", dg_cfg), ("plain", pl_cfg)):
    t0 = time.time()
    model = Model(cfg, np.random.default_rng(0))
    train_model(model, train, val, opt, out_dir=None)
    s, y, _ = evaluate(model, test)
    clean_auc, clean_acc = auc(s, y), accuracy(s, y)
    s, y, _ = evaluate(model, deformed)
    deform_auc = auc(s, y)
    s, y, _ = evaluate(model, salted)
    noise_acc = accuracy(s, y)
    print(f"{name:>17}: clean AUC {clean_auc:.3f}  deformed AUC {deform_auc:.3f}  "
          f"clean acc {clean_acc:.3f}  salted acc {noise_acc:.3f}  "
          f"(drop {clean_acc - noise_acc:+.3f})  [{time.time() - t0:.0f} s]")
