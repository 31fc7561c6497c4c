"""
Confidence and the two attention weightings
===========================================

Every item gets a confidence ``s``: the softmax probability its embedding
assigns to the identity of the set it came from. Two Gaussian bumps turn that
confidence into weights:

* the learning weight peaks at s = 0.5 and scales each item's
  classification loss,
* the fusion weight peaks at s = 1 and scales each item's share of the set
  embedding used by the contrastive loss.
"""

import math

import numpy as np

from idembed.attention import ffa_mh_score, ffa_score, fla_score, fuse_set, id_quality

# Confidence is a softmax entry. Equal logits over ten identities give 0.1;
# a 9:1 odds ratio between two identities gives 0.9.
print("s, uniform logits:", id_quality(np.zeros(10), 3))
print("s, logits (ln 9, 0):", id_quality(np.array([math.log(9.0), 0.0]), 0))

# The weights as a function of confidence. The learning weight is narrow
# (sigma 0.18) and ignores both hopeless and already-solved items; the fusion
# weight is wide (sigma 0.68) and grows steadily with confidence. The
# medium-hard fusion variant, centred at 0.5, is nearly flat over [0, 1].
print()
print(f"{'s':>5} {'learn':>8} {'fuse':>8} {'fuse_mh':>8}")
for s in np.linspace(0.0, 1.0, 11):
    print(f"{s:5.2f} {fla_score(s):8.4f} {ffa_score(s):8.4f} {ffa_mh_score(s):8.4f}")

# Fusion with these weights. Four clean items near (1, 0) and one outlier
# near (0, 1): with confidences taken from a classifier that trusts the clean
# items, the outlier's pull on the set embedding shrinks.
z = np.array([[1.0, 0.1], [0.9, -0.1], [1.1, 0.0], [1.0, 0.05], [0.0, 1.0]])
s = np.array([0.8, 0.7, 0.9, 0.85, 0.02])
print()
print("average fusion:   ", np.round(z.mean(axis=0), 3))
print("confidence fusion:", np.round(fuse_set(z, ffa_score(s)), 3))
