"""Gradient-check suite shared by the CLI and the acceptance tests."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import ops
from .gradcheck import GradCheckReport, grad_check
from .model import get_profile, init_params, mhsa, model_forward
from .tensor import ParamSet, Tensor, double_precision


def _conv(stride):
    def f(p):
        k = p["w"].shape[-1]
        return ops.sum_all(ops.gelu(ops.conv2d(p["x"], p["w"], p["b"], stride=stride, pad=k // 2)))
    return f


def _sq(y):
    return ops.sum_all(ops.mul(y, y))


# op name -> (list of shape dicts, loss builder)
OP_CASES: dict[str, tuple[list, Callable]] = {
    "add_sub_mul": ([dict(a=(3, 4), b=(4,)), dict(a=(2, 1, 3), b=(2, 5, 3))],
                    lambda p: _sq(ops.mul(ops.add(p["a"], p["b"]), ops.sub(p["a"], p["b"])))),
    "matmul": ([dict(a=(3, 4), b=(4, 2)), dict(a=(2, 3, 5), b=(2, 5, 4))],
               lambda p: _sq(ops.matmul(p["a"], p["b"]))),
    "linear": ([dict(x=(3, 4), w=(2, 4), b=(2,)), dict(x=(2, 3, 5), w=(5, 5), b=(5,))],
               lambda p: ops.sum_all(ops.gelu(ops.linear(p["x"], p["w"], p["b"])))),
    "softmax": ([dict(x=(4,)), dict(x=(2, 3, 5))],
                lambda p: _sq(ops.softmax_lastdim(p["x"]))),
    "gelu": ([dict(x=(5,)), dict(x=(2, 3, 4))],
             lambda p: ops.sum_all(ops.mul(ops.gelu(p["x"]), p["x"]))),
    "sigmoid": ([dict(x=(5,)), dict(x=(1, 1, 3, 3))],
                lambda p: ops.sum_all(ops.mul(ops.sigmoid(p["x"]), p["x"]))),
    "layer_norm": ([dict(x=(2, 3, 2, 2), g=(3,), b=(3,)), dict(x=(1, 5, 3, 1), g=(5,), b=(5,))],
                   lambda p: ops.sum_all(ops.gelu(ops.layer_norm_channels(p["x"], p["g"], p["b"])))),
    "conv2d": ([dict(x=(2, 3, 6, 6), w=(4, 3, 3, 3), b=(4,)), dict(x=(1, 2, 4, 4), w=(3, 2, 1, 1), b=(3,))],
               _conv(1)),
    "conv2d_stride2": ([dict(x=(1, 2, 8, 8), w=(3, 2, 3, 3), b=(3,))], _conv(2)),
    "conv_transpose2d": ([dict(x=(2, 3, 3, 3), w=(3, 4, 2, 2), b=(4,))],
                         lambda p: ops.sum_all(ops.gelu(ops.conv_transpose2d(p["x"], p["w"], p["b"])))),
    "concat": ([dict(a=(1, 2, 3, 3), b=(1, 1, 3, 3))],
               lambda p: ops.sum_all(ops.gelu(ops.concat_channels(p["a"], p["b"])))),
    "upsample": ([dict(x=(2, 1, 3, 2))], lambda p: ops.sum_all(ops.gelu(ops.upsample_nearest2x(p["x"])))),
    "reshape_permute": ([dict(x=(1, 2, 2, 3))],
                        lambda p: ops.sum_all(ops.gelu(ops.reshape(ops.permute(p["x"], (3, 1, 0, 2)), (-1,))))),
    "mhsa": ([dict(x=(2, 4, 8), wq=(8, 8), wk=(8, 8), wv=(8, 8), wo=(8, 8))],
             lambda p: _sq(mhsa(p["x"], p, 4))),
    "mse": ([dict(x=(1, 1, 4, 4), t=(1, 1, 4, 4))], lambda p: ops.mse(ops.sigmoid(p["x"]), p["t"])),
}


def _random_params(rng, shapes) -> ParamSet:
    return ParamSet({k: Tensor(rng.standard_normal(s)) for k, s in shapes.items()})


def _perturbed_model(cfg, kind, seed) -> ParamSet:
    params = init_params(cfg, seed, kind)
    rng = np.random.default_rng(seed)
    for name, t in params.items():
        if name.endswith((".b", ".beta")):
            t.data[...] = 0.1 * rng.standard_normal(t.shape)
        elif name.endswith(".gamma"):
            t.data[...] = 1.0 + 0.1 * rng.standard_normal(t.shape)
    return params


def end_to_end_check(kind: str = "rmt", seed: int = 0, max_per_param: int = 4,
                     tol: float = 1e-4) -> GradCheckReport:
    """MSE of the desk-mini model against a random target, probed per tensor."""
    cfg = get_profile("desk-mini")
    rng = np.random.default_rng(seed)
    with double_precision():
        params = _perturbed_model(cfg, kind, seed)
        g = np.zeros((1, 2, cfg.height, cfg.width))
        g[0, 0] = rng.random((cfg.height, cfg.width)) > 0.2
        g[0, 1, rng.integers(cfg.height), rng.integers(cfg.width)] = 1.0
        g, truth = Tensor(g), Tensor(rng.random((1, 1, cfg.height, cfg.width)))
        return grad_check(lambda p: ops.mse(model_forward(g, p, cfg, kind), truth), params,
                          tol=tol, max_per_param=max_per_param, seed=seed)


def run_suite(seed: int = 0, tol: float = 1e-4, end_to_end: bool = True) -> dict[str, GradCheckReport]:
    """Per-op checks plus (optionally) both desk-mini models. Keys name the component."""
    rng = np.random.default_rng(seed)
    out = {}
    with double_precision():
        for name, (shapes, f) in OP_CASES.items():
            merged = GradCheckReport(tol=tol)
            for s in shapes:
                r = grad_check(f, _random_params(rng, s), tol=tol)
                for k, v in r.max_rel_error.items():
                    merged.max_rel_error[k] = max(v, merged.max_rel_error.get(k, 0.0))
                merged.passed &= r.passed
            out[name] = merged
    if end_to_end:
        out["desk-mini/rmt"] = end_to_end_check("rmt", seed, tol=tol)
        out["desk-mini/baseline"] = end_to_end_check("baseline", seed, tol=tol)
    return out
