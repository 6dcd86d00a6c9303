"""The autodiff core: build a tiny network by hand, backpropagate, and check gradients.

Run: python demos/04_autodiff.py
"""

import numpy as np

from pyramidssl.nncore import (Adam, Tensor, backward, conv2d, dense, global_avgpool, gradcheck,
                               relu, softmax_cross_entropy)
from pyramidssl.verify import gradient_suite

rng = np.random.default_rng(0)
x = Tensor(rng.standard_normal((4, 8, 8, 3)))
y = np.array([0, 1, 2, 1])
w1 = Tensor(rng.standard_normal((3, 3, 3, 6)) * 0.3, requires_grad=True, name="w1")
b1 = Tensor(np.zeros(6), requires_grad=True, name="b1")
w2 = Tensor(rng.standard_normal((6, 3)) * 0.3, requires_grad=True, name="w2")
b2 = Tensor(np.zeros(3), requires_grad=True, name="b2")


def loss():
    h = global_avgpool(relu(conv2d(x, w1, b1, "same")))
    return softmax_cross_entropy(dense(h, w2, b2), y)


print("relative error of each gradient vs central differences:")
for name, err in gradcheck(loss, [w1, b1, w2, b2]).items():
    print(f"  {name}: {err:.2e}")

opt = Adam({"w1": w1, "b1": b1, "w2": w2, "b2": b2}, lr=0.05)
for step in range(30):
    opt.zero_grad()
    value = loss()
    backward(value)
    opt.step()
    if step % 10 == 0:
        print(f"step {step:2d} loss {float(value.data):.4f}")

print("\nworst error per op over 5 random shapes each:")
for op, err in gradient_suite(shapes_per_op=5).items():
    print(f"  {op:<22} {err:.1e}")
