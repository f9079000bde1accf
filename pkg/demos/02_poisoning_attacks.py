"""
Poisoning a client's shard
==========================

FGSM, PGD and Gaussian noise perturb target-class rows; label flipping
relabels them. Everything else in the shard is left alone.
"""

import numpy as np

from weifed import nn
from weifed.attacks import AttackConfig, fgsm, label_flip, most_confused_flip_map, pgd
from weifed.attacks import poison_with_adversarial_samples
from weifed.data import synthesize

ds = synthesize(4, 20, [500, 250, 150, 100], separation=4.0, seed=1)
arch = nn.MlpArchitecture(20, (64, 32), 4)
sgd = nn.SgdSettings(lr=0.05, epochs=10, batch_size=32)
model = sgd.train(arch, nn.init_params(arch, 0), ds.features, ds.labels, seed=0)

# the raw attacks stay inside the eps-ball and the unit box
target = ds.labels == 3
X, y = ds.features[target], ds.labels[target]
for name, adv in [("FGSM", fgsm(arch, model, X, y, 0.35)),
                  ("PGD", pgd(arch, model, X, y, 0.35, 0.0875, 10))]:
    hit = np.mean(nn.predict(arch, model, adv) != 3)
    print(f"{name}: max shift {np.abs(adv - X).max():.3f}, misclassified {hit:.0%}")

# the poisoning pipeline keeps only crafted rows the global model gets wrong
cfg = AttackConfig("PGD", target_labels=(3,), poison_ratio=0.5)
shard = poison_with_adversarial_samples(arch, model, ds, cfg, sgd, seed=3)
print("picked", len(shard.poisoned_indices), "rows, replaced", len(shard.replaced_indices))

# label flipping towards the class a clean model confuses most often
flip = most_confused_flip_map(arch, model, ds, [3])
flipped = label_flip(ds, flip, 0.5, seed=4)
print("flip map", flip)
print("labels before", np.bincount(ds.labels), "after", np.bincount(flipped.data.labels))
