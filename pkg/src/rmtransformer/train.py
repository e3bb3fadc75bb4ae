"""Training loop, Adam, learning-rate schedule and evaluation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import ops
from .checkpoint import save_checkpoint
from .data import Dataset, assemble_batch
from .metrics import MetricsReport, compute_report
from .model import ModelConfig, init_params, model_forward
from .rng import Rng64, derive_seed
from .tensor import ParamSet, Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    seed: int = 0
    profile: str = "desk"
    threshold: float = 0.8
    train_frac: float = 0.9
    roi_loss: bool = False
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 < self.lr_end <= self.lr_start:
            raise ValueError("need 0 < lr_end <= lr_start")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if not 0 < self.train_frac <= 1:
            raise ValueError("train_frac must lie in (0, 1]")


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def mse_loss(pred: Tensor, truth, weight=None) -> Tensor:
    return ops.mse(pred, truth, weight)


def adam_step(params: ParamSet, grads: Optional[dict], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update in place. ``grads=None`` uses each tensor's ``.grad``."""
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad if grads is None else grads[name]
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if lr:
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Geometric decay from lr_start (first epoch) to lr_end (last epoch)."""
    E = cfg.epochs
    if not 0 <= epoch < E:
        raise ValueError(f"epoch {epoch} outside [0, {E})")
    if E == 1:
        return cfg.lr_start
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (epoch / (E - 1))


def _shuffled(indices: list, seed: int, epoch: int) -> list:
    idx = list(indices)
    rng = Rng64(derive_seed(seed, f"epoch{epoch}"))
    for i in range(len(idx) - 1, 0, -1):
        j = rng.below(i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def _batch(data: Dataset, idx: list):
    g = assemble_batch([data.samples[i].geo for i in idx])
    truth = np.stack([data.samples[i].radio for i in idx])[:, None].astype(g.data.dtype)
    roi = np.stack([data.samples[i].geo.roi_mask for i in idx])[:, None]
    return g, truth, roi


@dataclass
class TrainResult:
    params: ParamSet
    trace: list  # rows (step, epoch, lr, loss)
    train_indices: list
    test_indices: list
    checkpoint_hash: Optional[str] = None


def train(
    data: Dataset,
    cfg: TrainConfig,
    model_cfg: ModelConfig,
    kind: str = "rmt",
    indices: Optional[list] = None,
    checkpoint_path=None,
    trace_path=None,
    params: Optional[ParamSet] = None,
    on_step: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Minimise per-pixel MSE with Adam; one LR per epoch.

    ``indices`` defaults to the dataset's seeded train split.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    if indices is None:
        train_idx, test_idx = data.split(cfg.train_frac)
    else:
        train_idx, test_idx = list(indices), []
    if not train_idx:
        raise ValueError("training split is empty")
    if data.samples[0].radio.shape != (model_cfg.height, model_cfg.width):
        raise ValueError(
            f"data extents {data.samples[0].radio.shape} do not match profile "
            f"{model_cfg.profile!r} ({model_cfg.height}x{model_cfg.width})"
        )
    params = params if params is not None else init_params(model_cfg, cfg.seed, kind)
    state = AdamState()
    trace = []
    step = 0
    done = False
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        order = _shuffled(train_idx, cfg.seed, epoch)
        for start in range(0, len(order), cfg.batch_size):
            g, truth, roi = _batch(data, order[start:start + cfg.batch_size])
            params.zero_grad()
            pred = model_forward(g, params, model_cfg, kind)
            loss = mse_loss(pred, Tensor(truth), roi if cfg.roi_loss else None)
            loss.backward()
            adam_step(params, None, state, lr)
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"loss became {value} at step {step}")
            trace.append((step, epoch, lr, value))
            if on_step:
                on_step(step, value)
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        log.info("epoch %d lr %.3g last loss %.6g", epoch, lr, trace[-1][3])
        if done:
            break
    result = TrainResult(params, trace, train_idx, test_idx)
    if checkpoint_path is not None:
        result.checkpoint_hash = save_checkpoint(params, checkpoint_path)
    if trace_path is not None:
        write_trace(trace, trace_path)
    return result


def write_trace(trace: list, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "lr", "loss"])
        for step, epoch, lr, loss in trace:
            w.writerow([step, epoch, repr(float(lr)), repr(float(loss))])


def predict(data: Dataset, indices: list, params: ParamSet, model_cfg: ModelConfig,
            kind: str = "rmt", batch_size: int = 8) -> np.ndarray:
    """(N, H, W) predictions in float64."""
    out = []
    with no_grad():
        for start in range(0, len(indices), batch_size):
            idx = indices[start:start + batch_size]
            g = assemble_batch([data.samples[i].geo for i in idx])
            out.append(model_forward(g, params, model_cfg, kind).data[:, 0].astype(np.float64))
    return np.concatenate(out)


def evaluate(
    data: Dataset,
    params: Optional[ParamSet],
    model_cfg: ModelConfig,
    kind: str = "rmt",
    threshold: float = 0.8,
    indices: Optional[list] = None,
    train_frac: float = 0.9,
    per_sample: bool = False,
    oracle: bool = False,
) -> tuple[MetricsReport, np.ndarray]:
    """All three metrics over ``indices`` (default: the test split).

    ``oracle`` skips the network and predicts the ground truth (negative control).
    """
    if indices is None:
        indices = data.split(train_frac)[1]
    if not indices:
        raise ValueError("no samples to evaluate")
    truths = np.stack([data.samples[i].radio for i in indices])
    rois = np.stack([data.samples[i].geo.roi_mask for i in indices])
    if oracle:
        preds = truths.copy()
    else:
        if params is None:
            raise ValueError("evaluate needs parameters unless oracle=True")
        preds = predict(data, indices, params, model_cfg, kind)
    return compute_report(preds, truths, rois, threshold, per_sample), preds


def config_echo(cfg: TrainConfig, model_cfg: ModelConfig, kind: str) -> dict:
    return {"train": asdict(cfg), "model": model_cfg.to_dict(), "kind": kind}


def check_params_match(params: ParamSet, model_cfg: ModelConfig, kind: str) -> None:
    """Raise ValueError unless ``params`` has exactly the names/shapes of the profile."""
    from .model import param_specs

    expected = {name: shape for name, shape, _ in param_specs(model_cfg, kind)}
    got = {name: t.shape for name, t in params.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))[:3]
        extra = sorted(set(got) - set(expected))[:3]
        raise ValueError(
            f"checkpoint incompatible with profile {model_cfg.profile!r}/{kind}: "
            f"missing {missing}, unexpected {extra}"
        )
