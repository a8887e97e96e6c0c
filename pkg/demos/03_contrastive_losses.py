#!/usr/bin/env python3
# The two contrastive objectives. The generalized loss contrasts shared
# representations across scenarios with reciprocal similarity weights; the
# individual loss contrasts scenario-specific views against hard negatives.

import numpy as np

import hc2.autodiff as ad
from hc2.autodiff import DiffNode
from hc2.losses import (IndividualTriple, WeightedPair, generalized_loss,
                        individual_loss, reciprocal_weight)

row = lambda *v: np.array([[float(x) for x in v]])

# Symmetric case: equal dots, unit weights, one negative -> ln 2.
anchor = DiffNode.param(row(1, 0))
same = DiffNode.constant(row(1, 0))
loss = generalized_loss(anchor, WeightedPair(1.0, same, "positive"),
                        [WeightedPair(1.0, same, "negative")], tau=1.0)
print("symmetric generalized loss:", loss.item(), "= ln 2 =", np.log(2))

# Reciprocal weights damp pairs whose embeddings already agree. A likely
# false negative (embedding dot 4.0) is weighted 1/4 and pulls less.
e_anchor, e_close, e_far = row(2, 0), row(2, 0), row(0.25, 0)
print("weight vs close embedding:", reciprocal_weight(e_anchor, e_close))
print("weight vs far embedding:  ", reciprocal_weight(e_anchor, e_far))

pos = WeightedPair(1.0, DiffNode.constant(row(0.9, 0.1)), "positive")
hard = DiffNode.constant(row(0.8, 0.0))
for s, tag in ((1.0, "unweighted"), (0.25, "damped 1/4")):
    val = generalized_loss(DiffNode.param(row(1, 0)), pos,
                           [WeightedPair(s, hard, "negative")], tau=0.5)
    print(f"  loss with {tag} negative: {val.item():.4f}")

# Individual loss: anchor view vs its dropout view, against an
# other-scenario negative and a cross-encoded one. Equal dots -> ln 3.
h = DiffNode.param(row(0, 1))
triple = IndividualTriple(h=h, h_aug=DiffNode.constant(row(0, 1)),
                          neg_other=[DiffNode.constant(row(0, 1))],
                          neg_cross=[DiffNode.constant(row(0, 1))])
print("three-way symmetric individual loss:", individual_loss(triple, tau=1.0).item(),
      "= ln 3 =", np.log(3))

# Gradients pull the positive dot up and push negatives down.
anchor = DiffNode.param(row(0.2, 0.1))
pos_rep = DiffNode.constant(row(1, 0))
neg_rep = DiffNode.constant(row(0, 1))
loss = generalized_loss(anchor, WeightedPair(1.0, pos_rep, "positive"),
                        [WeightedPair(1.0, neg_rep, "negative")], tau=0.5)
g = ad.backward(loss)[anchor]
print("anchor gradient:", g, "(negative along the positive direction)")
