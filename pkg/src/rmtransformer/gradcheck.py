"""Central-difference gradient checker."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rng import Rng64
from .tensor import ParamSet, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    passed: bool = True
    h: float = 1e-4
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(
    f: Callable[[ParamSet], Tensor],
    params: ParamSet,
    h: float = 1e-4,
    tol: float = 1e-4,
    max_per_param: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backprop gradients of ``f(params)`` with central differences.

    Relative error is ``|a - n| / max(1, |a|, |n|)``. ``max_per_param`` limits
    the number of probed coordinates per tensor (sampled from ``seed``);
    ``None`` probes every element. Parameters must be float64.
    """
    for name, t in params.items():
        if t.data.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {t.data.dtype}")
    params.zero_grad()
    loss = f(params)
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in params.items()}

    rng = Rng64(seed)
    report = GradCheckReport(h=h, tol=tol)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            # partial Fisher-Yates: first max_per_param entries are a uniform sample
            for i in range(max_per_param):
                j = i + rng.below(flat.size - i)
                idx[i], idx[j] = idx[j], idx[i]
            idx = np.sort(idx[:max_per_param])
        a_flat = analytic[name].reshape(-1)
        worst = 0.0
        for k in idx:
            orig = flat[k]
            flat[k] = orig + h
            fp = f(params).item()
            flat[k] = orig - h
            fm = f(params).item()
            flat[k] = orig
            num = (fp - fm) / (2.0 * h)
            a = float(a_flat[k])
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            worst = max(worst, err)
        report.max_rel_error[name] = worst
        if not worst < tol:
            report.passed = False
    return report
