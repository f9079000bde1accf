"""
Training the traffic classifier
===============================

A 64-32 ReLU network on synthetic, imbalanced flow features.
"""

import numpy as np

from weifed import nn
from weifed.data import split, synthesize
from weifed.metrics import macro_f1, per_class_recall

# four classes in a 50/25/15/10 mix, 20 features scaled to [0, 1]
ds = synthesize(4, 20, [5000, 2500, 1500, 1000], separation=4.0, seed=0)
train_idx, test_idx, _ = split(ds, 0.2, seed=0)
train, test = ds.subset(train_idx), ds.subset(test_idx)

arch = nn.MlpArchitecture(ds.dim, (64, 32), ds.n_classes)
print("parameters:", arch.n_params)

params = nn.init_params(arch, seed=0)
for epoch in range(1, 6):
    params = nn.sgd_epochs(arch, params, train.features, train.labels, 0.05, 1, 32, seed=epoch)
    loss, _ = nn.backward(arch, params, train.features, train.labels)
    pred = nn.predict(arch, params, test.features)
    print(f"epoch {epoch}  loss {loss:.4f}  macro F1 {macro_f1(test.labels, pred, 4):.4f}")

print("per-class recall:", np.round(per_class_recall(test.labels, pred, 4), 3))
