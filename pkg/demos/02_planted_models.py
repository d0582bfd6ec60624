"""Fit every model family on planted synthetic families.

Run with ``python3 demos/02_planted_models.py``.
"""
import numpy as np

from kinverify import models
from kinverify.datakit import even_plan, kfold_split, synth_generate
from kinverify.evalkit import roc_auc

data = synth_generate(d=16, n_pos=1000, rank=3, noise_sigma=0.1, seed=7)
fold = kfold_split(data.positives, even_plan(1000), seed=7)[0]
train, test = fold.train, fold.test
print("train", len(train), "test", len(test))

# The generating model itself is the ceiling.
_, ceiling = roc_auc(data.planted_scores(test.father, test.mother, test.child),
                     test.labels)
print("planted scores AUC %.4f" % ceiling)

for kind in models.MODEL_KINDS:
    model = models.fit_model(kind, train)
    p = models.predict(model, test.father, test.mother, test.child)
    acc = np.mean(np.where(p >= 0.5, 1, -1) == test.labels)
    print("%-16s AUC %.4f  accuracy %.3f" % (kind, roc_auc(p, test.labels)[1], acc))

# Learned matrices are low rank, like the planted ones.
sbm = models.fit_sbm(train)
print("planted rank", np.linalg.matrix_rank(data.W_f),
      "| learned singular values", np.round(np.linalg.svd(sbm.W_f, compute_uv=False)[:5], 2))

# A trained triple model can still score a single parent.
print("pair score, father only: %.3f" % models.predict_pair(
    sbm, test.father[0], test.child[0], "father"))
