"""Train a small stack on synthetic lesion bags with the weighted bag loss.

Only image-level labels supervise the run; the per-patch probability
heatmaps written at the end show the lesions being localized anyway.
"""

import os

import numpy as np

from deformgabor import ModelConfig, OptimizerConfig
from deformgabor.data import SynthLesionSpec, build_bags, gen_bag
from deformgabor.metrics import auc
from deformgabor.mil import save_heatmap
from deformgabor.model import Model
from deformgabor.train import evaluate, train_model

out = os.environ.get("DEFORMGABOR_OUT", "runs/demo04")
os.makedirs(out, exist_ok=True)

spec = SynthLesionSpec(image_size=32, lesion_count=(1, 2), lesion_radius=(4.0, 7.0),
                       contrast=0.6, noise_std=0.15, positive_fraction=0.5, seed=100)
train = build_bags(spec, 120)
val = build_bags(spec, 40, start_index=120)
print(f"{len(train)} training bags, {sum(y for _, y in train)} positive")

cfg = ModelConfig(widths=(4, 8), plain_blocks=1, U=4, V=2, H=3)
model = Model(cfg, np.random.default_rng(0))
opt = OptimizerConfig(kind="adam", lr_masks=0.005, lr_filters=0.005,
                      epochs=25, batch_size=16, seed=0)
history = train_model(model, train, val, opt, out_dir=out)
for row in history[::5] + [history[-1]]:
    print(f"  epoch {row['epoch']:2d}  train loss {row['train_loss']:.3f}  "
          f"val auc {row['val_auc']:.3f}")

scores, labels, _ = evaluate(model, train)
print(f"final train AUC: {auc(scores, labels):.3f}")

# heatmaps for two positive bags: the bright patch should sit on the lesion
shown = 0
for i in range(len(train)):
    img, label, truth = gen_bag(spec, i)
    if label != 1:
        continue
    probs, _ = model.forward(img)
    save_heatmap(os.path.join(out, f"heatmap_bag{i}"), probs)
    grid = probs.p.reshape(probs.grid)
    py, px = np.unravel_index(np.argmax(grid), grid.shape)
    scale = spec.image_size / probs.grid[0]
    print(f"bag {i}: lesion at {tuple(round(v) for v in truth[0][:2])}, "
          f"hottest patch center at ({py * scale + scale / 2:.0f}, {px * scale + scale / 2:.0f})")
    shown += 1
    if shown == 2:
        break
print(f"wrote heatmaps to {out}/")
