"""A short tour of the tape: forward, backward, and a gradient check.

Runs in well under a second.
"""

import numpy as np

from tlaser import autograd as ag

rng = np.random.default_rng(0)

with ag.precision(np.float64):
    w = ag.parameter(rng.normal(size=(4, 3)), "w")
    b = ag.parameter(np.zeros(3), "b")
x = ag.Tensor(rng.normal(size=(5, 4)))
labels = np.array([0, 2, 1, 1, 0])


def loss():
    z = ag.add(ag.matmul(x, w), b)
    return ag.smoothed_cross_entropy(z, labels, 0.1, np.full(5, 0.2))


with ag.Tape() as tape:
    y = loss()
grads = ag.backward(y, tape)
print("loss", y.item())
print("d loss / d b", grads[b])

# central differences agree with the tape
print(ag.grad_check(loss, {"w": w, "b": b}).summary())

# a layer norm row has zero mean and unit variance before its gain and bias
h = ag.layer_norm(ag.Tensor(rng.normal(size=(2, 6)) * 5 + 3),
                  ag.Tensor(np.ones(6)), ag.Tensor(np.zeros(6)))
print("row means", h.data.mean(-1).round(6), "row variances", h.data.var(-1).round(4))
