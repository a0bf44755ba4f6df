"""Tour of the tensor engine: forward ops, reverse-mode gradients, and the
loss kernels used by both training stages."""

import math

import numpy as np

from vldistill import tensor as T
from vldistill.tensor import Tensor, backward, grad_check

print("== building a small computation and differentiating it ==")
x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
w = Tensor([[0.5], [-0.25]], requires_grad=True)
loss = T.mean_all(T.tanh(T.matmul(x, w)))
print("loss value:", loss.item())
backward(loss)
print("d loss / d x:\n", x.grad)
print("d loss / d w:\n", w.grad)

print("\n== finite differences agree with the backward pass ==")
err = grad_check(lambda t: T.mean_all(T.tanh(T.matmul(t, Tensor(w.data)))),
                 Tensor(x.data))
print(f"max relative error vs central differences: {err:.2e}")

print("\n== smooth-L1: quadratic below the junction, linear above ==")
for d in (0.1, 0.5, 1.0, 2.0, 5.0):
    value = T.smooth_l1(Tensor([[d]]), Tensor([[0.0]]), 1.0).item()
    branch = "quadratic" if d < 1.0 else "linear"
    print(f"  residual {d:4.1f} -> loss {value:.4f}  ({branch} branch)")

print("\n== softmax and row normalization, the InfoNCE substrate ==")
logits = Tensor([[0.0, math.log(3.0)]])
print("softmax of [0, ln 3]:", T.softmax_rows(logits).data, "(expect [0.25 0.75])")
print("l2-normalized [3, 4]:", T.l2_normalize_rows(Tensor([[3.0, 4.0]])).data)

print("\n== InfoNCE special cases ==")
from vldistill.align import AlignmentBatch, infonce_i2t

row = np.array([[1.0, 0.0, 0.0]])
for n in (2, 8):
    batch = AlignmentBatch(images=Tensor(np.tile(row, (n, 1))),
                           texts=Tensor(np.tile(row, (n, 1))))
    print(f"  all embeddings identical, N={n}: loss {infonce_i2t(batch, 1.0).item():.4f}"
          f"  (ln N = {math.log(n):.4f})")
perfect = AlignmentBatch(images=Tensor(np.eye(2)), texts=Tensor(np.eye(2)))
print(f"  two orthonormal matched pairs: {infonce_i2t(perfect, 1.0).item():.4f}"
      f"  (ln(1+e^-1) = {math.log(1 + math.exp(-1)):.4f})")
