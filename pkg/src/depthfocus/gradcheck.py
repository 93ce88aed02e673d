"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    passed: bool
    max_error: float
    worst_path: str
    worst_index: tuple
    analytic: float
    numeric: float
    tolerance: float
    checked: int
    errors: dict[str, float] = field(default_factory=dict)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} max_err={self.max_error:.3e} (tol {self.tolerance:.0e}) over {self.checked} entries; "
                f"worst {self.worst_path}{list(self.worst_index)} analytic={self.analytic:.6e} numeric={self.numeric:.6e}")


def grad_check(f: Callable[[], Tensor], inputs: Mapping[str, Tensor] | list[Tensor], eps: float = 1e-6,
               tolerance: float = 1e-4, max_per_tensor: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare gradients of scalar ``f()`` against central differences.

    The error per entry is ``|analytic - fd| / max(1, |fd|)``.  ``max_per_tensor``
    limits how many entries of each input are probed (sampled with ``rng``),
    which keeps whole-network checks affordable.
    """
    if not isinstance(inputs, Mapping):
        inputs = {f"input{i}": t for i, t in enumerate(inputs)}
    for name, t in inputs.items():
        if t.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 inputs; {name} is {t.dtype}")
        t.data = np.ascontiguousarray(t.data)
        t.grad = None

    out = f()
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in inputs.items()}

    rng = rng or np.random.default_rng(0)
    worst = (-1.0, "", (), 0.0, 0.0)
    per_tensor: dict[str, float] = {}
    checked = 0
    for name, t in inputs.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = np.sort(rng.choice(flat.size, size=max_per_tensor, replace=False))
        tensor_worst = 0.0
        for j in idx:
            orig = flat[j]
            with no_grad():
                flat[j] = orig + eps
                fp = float(f().data)
                flat[j] = orig - eps
                fm = float(f().data)
                flat[j] = orig
            numeric = (fp - fm) / (2 * eps)
            a = float(analytic[name].reshape(-1)[j])
            err = abs(a - numeric) / max(1.0, abs(numeric))
            checked += 1
            tensor_worst = max(tensor_worst, err)
            if err > worst[0]:
                worst = (err, name, np.unravel_index(j, t.shape), a, numeric)
        per_tensor[name] = tensor_worst

    err, path, index, a, numeric = worst
    return GradCheckReport(passed=bool(err < tolerance), max_error=err, worst_path=path,
                           worst_index=tuple(int(i) for i in index), analytic=a, numeric=numeric,
                           tolerance=tolerance, checked=checked, errors=per_tensor)
