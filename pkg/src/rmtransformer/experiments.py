"""Overfit and comparative runs used by scripts/ and the acceptance tests."""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, in_memory_dataset
from .metrics import metric_rmse
from .model import get_profile
from .train import TrainConfig, evaluate, predict, train


@dataclass
class OverfitResult:
    profile: str
    n_samples: int
    steps: int
    final_mse: float        # loss on the last step
    final_rmse: float       # sqrt of the full-batch training MSE after the last update
    trace: list
    seconds: float

    def moving_average(self, window: int = 20) -> np.ndarray:
        losses = np.array([r[3] for r in self.trace])
        return np.convolve(losses, np.ones(window) / window, mode="valid")


def overfit(profile: str, n_samples: int, steps: int, lr_start: float, lr_end: float,
            data_seed: int, seed: int = 0, data: Dataset | None = None) -> OverfitResult:
    """Train on ``n_samples`` samples in one batch for ``steps`` updates (one step per epoch)."""
    cfg_m = get_profile(profile)
    data = data or in_memory_dataset(n_samples, data_seed, cfg_m.height)
    idx = list(range(n_samples))
    cfg = TrainConfig(epochs=steps, batch_size=n_samples, lr_start=lr_start, lr_end=lr_end,
                      seed=seed, profile=profile)
    t0 = time.perf_counter()
    res = train(data, cfg, cfg_m, "rmt", indices=idx)
    preds = predict(data, idx, res.params, cfg_m, "rmt", batch_size=n_samples)
    truths = np.stack([s.radio for s in data.samples])
    return OverfitResult(profile, n_samples, len(res.trace), res.trace[-1][3],
                         metric_rmse(preds, truths), res.trace, time.perf_counter() - t0)


@dataclass
class ComparativeResult:
    seeds: list
    rmse: dict = field(default_factory=dict)  # kind -> list of test RMSE, one per seed
    seconds: float = 0.0

    def median(self, kind: str) -> float:
        return statistics.median(self.rmse[kind])

    @property
    def ratio(self) -> float:
        return self.median("rmt") / self.median("baseline")


def comparative(count: int = 512, data_seed: int = 2024, seeds=(0, 1, 2), epochs: int = 20,
                lr_start: float = 1e-3, lr_end: float = 1e-4, batch_size: int = 8,
                log=print) -> ComparativeResult:
    """Train both models per seed on the same split; report test RMSE."""
    t0 = time.perf_counter()
    data = in_memory_dataset(count, data_seed, 64)
    cfg_m = get_profile("desk")
    out = ComparativeResult(list(seeds), {"rmt": [], "baseline": []})
    for seed in seeds:
        cfg = TrainConfig(epochs=epochs, batch_size=batch_size, lr_start=lr_start, lr_end=lr_end,
                          seed=seed, profile="desk")
        for kind in ("rmt", "baseline"):
            res = train(data, cfg, cfg_m, kind)
            report, _ = evaluate(data, res.params, cfg_m, kind, indices=res.test_indices)
            if not math.isfinite(report.rmse):
                raise FloatingPointError(f"{kind} seed {seed} produced non-finite RMSE")
            out.rmse[kind].append(report.rmse)
            log(f"seed {seed} {kind:<8} test rmse {report.rmse:.5f} "
                f"({time.perf_counter() - t0:.0f}s elapsed)")
    out.seconds = time.perf_counter() - t0
    return out
