import os
from typing import Any, Dict

import torch

#: format tag of all checkpoints written by this package
MAGIC = "BDLAB1"


def save_checkpoint(checkpoint: Dict[str, Any], filename: str):
    "Write a checkpoint dictionary (tagged with the format magic) to `filename`."
    checkpoint = dict(checkpoint)
    checkpoint["magic"] = MAGIC
    folder = os.path.dirname(filename)
    if folder:
        os.makedirs(folder, exist_ok=True)
    torch.save(checkpoint, filename)


def load_checkpoint(checkpoint_file: str) -> Dict[str, Any]:
    if not os.path.exists(checkpoint_file):
        raise IOError(
            "Specified checkpoint file {} does not exist.".format(checkpoint_file)
        )
    checkpoint = torch.load(checkpoint_file, map_location="cpu", weights_only=True)
    if not isinstance(checkpoint, dict) or checkpoint.get("magic") != MAGIC:
        raise ValueError(
            "{} is not a checkpoint of format {}".format(checkpoint_file, MAGIC)
        )
    checkpoint["file"] = checkpoint_file
    checkpoint["folder"] = os.path.dirname(checkpoint_file)
    return checkpoint
