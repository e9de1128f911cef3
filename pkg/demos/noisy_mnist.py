"""
MNIST with a noisy half
=======================

Training digits are split into a clean half and a half where 20% of the
labels are replaced by a different digit. An MLP trained with ERMA weights
learns to trust the clean half more.

Set MIXWEIGHTS_MNIST_DIR to a folder with the four IDX files. Without it the
script exports the 5000-image subset bundled with mlxtend.
"""

import os
import tempfile

from mixweights import data, experiments

if not os.environ.get(experiments.MNIST_ENV):
    folder = tempfile.mkdtemp(prefix="mnist-")
    data.export_bundled_mnist(folder)
    os.environ[experiments.MNIST_ENV] = folder

cfg = experiments.with_replicates(experiments.preset("fig3"), 2)
res = experiments.run(cfg, "runs/demo-mnist",
                      progress=lambda m, r, tr: print(f"  {m} replicate {r} done", flush=True))

print(f"\n{'method':8s} accuracy  clean  noisy   w_clean/w_noisy")
for m in cfg.methods:
    acc = res.summary(m, "accuracy")[0]
    clean = res.summary(m, "clean_accuracy")[0]
    noisy = res.summary(m, "noisy_accuracy")[0]
    ratio = (res.values(m, "w_1") / res.values(m, "w_2")).mean()
    print(f"{m:8s} {acc:.4f}    {clean:.3f}  {noisy:.3f}   {ratio:.2f}")
