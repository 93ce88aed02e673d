"""Finite-difference checks of the autodiff core, then a deliberately broken adjoint.

Run:  python demos/gradient_checks.py
"""
import numpy as np

from depthfocus import tensor as T
from depthfocus.gradcheck import grad_check
from depthfocus.tensor import Tensor

rng = np.random.default_rng(0)
with T.precision(np.float64):
    x = Tensor(rng.uniform(-1, 1, (2, 9, 9)), requires_grad=True)
    w = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)), requires_grad=True)
    r = Tensor(rng.uniform(-1, 1, (3, 5, 5)))

    def loss():
        return (T.gelu(T.conv2d(x, w, stride=2, padding=1)) * r).sum()

    print("conv2d + gelu:", grad_check(loss, {"x": x, "w": w}))

    a = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (4, 2)), requires_grad=True)
    print("matmul:", grad_check(lambda: (a @ b).sum(), {"a": a, "b": b}))

    # swap in a wrong matmul adjoint: the check has to notice
    honest = T._matmul_grads
    T._matmul_grads = lambda g, a_, b_, na, nb: (
        (1.1 * g @ b_.T if na else None), (a_.T @ g if nb else None))
    try:
        print("broken matmul:", grad_check(lambda: (a @ b).sum(), {"a": a, "b": b}))
    finally:
        T._matmul_grads = honest
