#!/usr/bin/env python3
# Build a small computation graph by hand, run one backward pass, and
# check the analytic gradient against central differences.

import numpy as np

import hc2.autodiff as ad
from hc2.autodiff import DiffNode

# f(W, b) = sum(sigmoid(relu(x @ W) + b))
x = DiffNode.constant(np.array([[0.5, -1.0, 2.0]]))
W = DiffNode.param(np.array([[0.3, -0.2], [0.8, 0.5], [0.4, 0.1]]))
b = DiffNode.param(np.array([[0.05, -0.3]]))

hidden = ad.relu(ad.matmul(x, W))
out = ad.sum_all(ad.sigmoid(ad.add_rowvec(hidden, b)))
print("value:", out.item())

grads = ad.backward(out)
print("dL/dW:\n", grads[W])
print("dL/db:", grads[b])

# Same function as a flat-vector closure, checked with central differences.
def f(theta):
    W2 = DiffNode.param(theta[:6].reshape(3, 2))
    b2 = DiffNode.param(theta[6:].reshape(1, 2))
    root = ad.sum_all(ad.sigmoid(ad.add_rowvec(ad.relu(ad.matmul(x, W2)), b2)))
    g = ad.backward(root)
    return root.item(), np.concatenate([g[W2].ravel(), g[b2].ravel()])

theta0 = np.concatenate([W.value.ravel(), b.value.ravel()])
err = ad.finite_difference_check(f, theta0, eps=1e-6)
print(f"max relative error vs finite differences: {err:.2e}")

# A graph can only be walked backward once; a second call is an error.
try:
    ad.backward(out)
except Exception as exc:
    print("second backward refused:", exc)
