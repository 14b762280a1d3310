from dataclasses import dataclass
from enum import Enum
from typing import List, Tuple

from bdlab.misc import ConfigurationError


class LayerMask(Enum):
    Causal = "C"
    Bidirectional = "B"


#: adaptation strategies and whether they allow repetition
STRATEGIES = ["masked", "repeat", "full_unmask", "middle_unmask"]


@dataclass
class LayerMaskConfig:
    per_layer: List[LayerMask]

    def __len__(self):
        return len(self.per_layer)

    def __getitem__(self, index: int) -> LayerMask:
        return self.per_layer[index]

    def bidirectional_layers(self) -> List[int]:
        "0-based indices of the bidirectional layers."
        return [
            i for i, mask in enumerate(self.per_layer) if mask == LayerMask.Bidirectional
        ]

    def __str__(self):
        return "".join(mask.value for mask in self.per_layer)


def middle_unmask_interval(n_layers: int) -> Tuple[int, int]:
    """Inclusive interval [lb, ub] of the layers to unmask in an N-layer stack.

    N_u is N // 3 rounded down to an even number, lb = N/2 - 1 - N_u/2 and
    ub = N/2 + N_u/2 (N // 2 for odd N). Indices refer to the 0-based layer list.

    """
    if n_layers < 6:
        raise ConfigurationError(
            "middle unmasking needs at least 6 layers, found {}".format(n_layers)
        )
    n_unmasked = n_layers // 3
    n_unmasked -= n_unmasked % 2
    middle = n_layers // 2
    return middle - 1 - n_unmasked // 2, middle + n_unmasked // 2


def build_mask_config(strategy: str, n_layers: int) -> LayerMaskConfig:
    """Per-layer masks of an adaptation strategy.

    "masked" and "repeat" keep every layer causal, "full_unmask" makes every layer
    bidirectional, and "middle_unmask" unmasks the interval of
    :func:`middle_unmask_interval`.

    """
    if n_layers < 1:
        raise ConfigurationError("number of layers must be positive")
    if strategy in ["masked", "repeat"]:
        return LayerMaskConfig([LayerMask.Causal] * n_layers)
    elif strategy == "full_unmask":
        return LayerMaskConfig([LayerMask.Bidirectional] * n_layers)
    elif strategy == "middle_unmask":
        lb, ub = middle_unmask_interval(n_layers)
        return LayerMaskConfig(
            [
                LayerMask.Bidirectional if lb <= i <= ub else LayerMask.Causal
                for i in range(n_layers)
            ]
        )
    raise ConfigurationError(
        "unknown strategy {}; allowed values are {}".format(strategy, STRATEGIES)
    )


def check_strategy(strategy: str, r: int):
    "Raise ConfigurationError for illegal strategy/repetition combinations."
    if strategy not in STRATEGIES:
        raise ConfigurationError(
            "unknown strategy {}; allowed values are {}".format(strategy, STRATEGIES)
        )
    if r < 0:
        raise ConfigurationError("r must be non-negative, found {}".format(r))
    if strategy != "repeat" and r != 0:
        raise ConfigurationError(
            "strategy {} does not allow repetition (found r={})".format(strategy, r)
        )


def skipped_fraction(n_layers: int, exit_layer: int) -> float:
    """Share of the decoder layers not evaluated when exiting at layer L.

    Layers 1..L-1 run, so N - L + 1 of N layers are skipped.

    """
    check_exit_layer(n_layers, exit_layer)
    return (n_layers - exit_layer + 1) / n_layers


def check_exit_layer(n_layers: int, exit_layer: int):
    if not 2 <= exit_layer <= n_layers:
        raise ConfigurationError(
            "exit layer must be in [2, {}], found {}".format(n_layers, exit_layer)
        )
