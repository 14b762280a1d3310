"""Inference timing of early exit and sequence repetition.

The base is the full-depth model without repetition. For every exit layer L and
repetition count r, the median wall-clock time of a forward pass over the
validation sentences is measured, and its speedup relative to the base is
reported. A cost model predicts the same grid from the number of active layers
and the repeated sequence length: time = layers * (alpha * len + beta * len^2),
with alpha and beta fitted to two full-depth timings (r = 0 and r = 1).

"""
import json
import os
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from scipy import stats

from bdlab import Config, Dataset
from bdlab.misc import ConfigurationError
from bdlab.model import LabModel

#: exit layers of a 32-layer reference stack
REFERENCE_EXITS = [9, 14, 19, 24]
REFERENCE_DEPTH = 32


def scaled_exits(n_layers: int, exits: Sequence[int] = REFERENCE_EXITS) -> List[int]:
    "Reference exits rescaled to `n_layers`, clamped to [2, N] and deduplicated."
    result = []
    for exit_layer in exits:
        scaled = min(max(round(exit_layer * n_layers / REFERENCE_DEPTH), 2), n_layers)
        if scaled not in result:
            result.append(scaled)
    return result


def median_time(fn: Callable[[], Any], warmup: int, repetitions: int) -> float:
    if repetitions < 1:
        raise ConfigurationError("need at least one timed repetition")
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def fit_cost_model(
    n_layers: int, length: float, time_r0: float, time_r1: float
) -> Dict[str, float]:
    """Solves for alpha and beta from full-depth timings at lengths len and 2 len."""
    a = np.array(
        [
            [n_layers * length, n_layers * length ** 2],
            [n_layers * 2 * length, n_layers * (2 * length) ** 2],
        ]
    )
    alpha, beta = np.linalg.solve(a, np.array([time_r0, time_r1]))
    return {"alpha": float(alpha), "beta": float(beta)}


def cost(layers: int, length: float, alpha: float, beta: float) -> float:
    return layers * (alpha * length + beta * length ** 2)


def is_decreasing(values: Sequence[float]) -> bool:
    return all(a > b for a, b in zip(values, values[1:]))


@dataclass
class ProfileResult:
    n_layers: int
    exits: List[int]
    reps: List[int]
    base_time: float
    #: median seconds per (exit, r)
    times: pd.DataFrame
    speedup: pd.DataFrame
    predicted_speedup: pd.DataFrame
    cost_model: Dict[str, float] = field(default_factory=dict)

    @property
    def spearman(self) -> float:
        measured = self.speedup.to_numpy().ravel()
        predicted = self.predicted_speedup.to_numpy().ravel()
        if len(measured) < 2:
            return float("nan")
        return float(stats.spearmanr(measured, predicted).correlation)

    @property
    def monotone_in_r(self) -> bool:
        return all(is_decreasing(list(row)) for _, row in self.speedup.iterrows())

    @property
    def monotone_in_exit(self) -> bool:
        return all(is_decreasing(list(self.speedup[c])) for c in self.speedup.columns)

    def summary(self) -> Dict[str, Any]:
        return {
            "n_layers": self.n_layers,
            "exits": self.exits,
            "reps": self.reps,
            "base_time": self.base_time,
            "cost_model": self.cost_model,
            "spearman": self.spearman,
            "monotone_in_r": self.monotone_in_r,
            "monotone_in_exit": self.monotone_in_exit,
        }

    def save(self, folder: str) -> List[str]:
        os.makedirs(folder, exist_ok=True)
        files = []
        for name, frame in [
            ("profile_times", self.times),
            ("profile_speedup", self.speedup),
            ("profile_cost_model", self.predicted_speedup),
        ]:
            filename = os.path.join(folder, name + ".csv")
            frame.to_csv(filename, float_format="%.17g")
            files.append(filename)
        filename = os.path.join(folder, "profile.json")
        with open(filename, "w", encoding="utf-8") as file:
            json.dump(self.summary(), file, sort_keys=True, indent=2)
            file.write("\n")
        files.append(filename)
        return files


def _grid(values: Dict, exits: List[int], reps: List[int]) -> pd.DataFrame:
    frame = pd.DataFrame(
        [[values[(e, r)] for r in reps] for e in exits],
        index=pd.Index(exits, name="exit_layer"),
        columns=["r={}".format(r) for r in reps],
    )
    return frame


@torch.no_grad()
def profile(
    config: Config,
    model: LabModel,
    dataset: Dataset,
    exits: Optional[List[int]] = None,
    reps: Optional[List[int]] = None,
) -> ProfileResult:
    """Measures the speedup grid of early exit and repetition on the validation split."""
    n_layers = model.n_layers
    exits = list(exits) if exits else scaled_exits(n_layers)
    reps = list(reps) if reps else list(config.get("profile.reps"))
    for exit_layer in exits:
        if not 2 <= exit_layer <= n_layers:
            raise ConfigurationError(
                "exit layer must be in [2, {}], found {}".format(n_layers, exit_layer)
            )
    if any(r < 0 for r in reps):
        raise ConfigurationError("repetition counts must be non-negative")
    warmup = config.get("profile.warmup")
    repetitions = config.get("profile.repetitions")
    max_sentences = config.get("profile.max_sentences")
    if len(dataset.split("valid")) == 0:
        raise ConfigurationError("profiling needs a non-empty validation split")
    batches = list(
        dataset.batches("valid", config.get("eval.batch_size"), limit=max_sentences)
    )
    mask_config = model.mask_config("repeat")
    length = float(
        np.mean([len(s.token_ids) for batch in batches for s in batch.sequences])
    )

    def forward(r: int):
        def fn():
            for batch in batches:
                model.forward_sl(batch.ids, batch.pad_flags, mask_config, r)

        return fn

    threads = torch.get_num_threads()
    torch.set_num_threads(config.get("profile.threads"))
    model.eval()
    try:
        model.clear_early_exit()
        base_time = median_time(forward(0), warmup, repetitions)
        time_r1 = median_time(forward(1), warmup, repetitions)
        config.log("Base forward time {:.6f}s".format(base_time))
        times = {}
        for exit_layer in exits:
            model.set_early_exit(exit_layer)
            for r in reps:
                times[(exit_layer, r)] = median_time(forward(r), warmup, repetitions)
                config.log(
                    "exit {:3d}, r {:2d}: {:.6f}s ({:.3f}x)".format(
                        exit_layer, r, times[(exit_layer, r)],
                        base_time / times[(exit_layer, r)],
                    )
                )
    finally:
        model.clear_early_exit()
        torch.set_num_threads(threads)

    cost_model = fit_cost_model(n_layers, length, base_time, time_r1)
    base_cost = cost(n_layers, length, **cost_model)
    predicted = {
        (e, r): base_cost / cost(e - 1, (r + 1) * length, **cost_model)
        for e in exits
        for r in reps
    }
    speedup = {key: base_time / value for key, value in times.items()}
    return ProfileResult(
        n_layers=n_layers,
        exits=exits,
        reps=reps,
        base_time=base_time,
        times=_grid(times, exits, reps),
        speedup=_grid(speedup, exits, reps),
        predicted_speedup=_grid(predicted, exits, reps),
        cost_model=dict(cost_model, length=length, time_r0=base_time, time_r1=time_r1),
    )
