import importlib
from typing import Any, Dict, Optional

import torch

from bdlab.config import Config, Configurable


class LabModel(torch.nn.Module, Configurable):
    r"""Base class for the models of the laboratory.

    A model is created from a configuration whose ``model`` key names a section
    (e.g., ``decoder``) holding the model options and its ``class_name``. The
    vocabulary size and the number of labels come from the data.

    """

    def __init__(
        self,
        config: Config,
        vocab_size: int,
        n_labels: int,
        configuration_key: Optional[str] = None,
    ):
        self._init_configuration(config, configuration_key)
        torch.nn.Module.__init__(self)
        self.vocab_size = vocab_size
        self.n_labels = n_labels
        self.meta: Dict[str, Any] = dict()  #: meta-data stored with this module

    def _init_configuration(self, config: Config, configuration_key: Optional[str]):
        Configurable._init_configuration(self, config, configuration_key)
        if not self.configuration_key:
            self.configuration_key = config.get("model")

    def save(self) -> Dict[str, Any]:
        "Returns data structure to save state"
        meta = dict(self.meta)
        meta["vocab_size"] = self.vocab_size
        meta["n_labels"] = self.n_labels
        return {"state_dict": self.state_dict(), "meta": meta}

    def load(self, savepoint: Dict[str, Any]):
        "Loads state from a saved data structure"
        self.load_state_dict(savepoint["state_dict"])
        self.meta = dict(savepoint["meta"])

    def num_parameters(self, trainable_only=False) -> int:
        return sum(
            p.numel()
            for p in self.parameters()
            if p.requires_grad or not trainable_only
        )

    @staticmethod
    def create(
        config: Config,
        vocab_size: int,
        n_labels: int,
        seed: int = 0,
        configuration_key: Optional[str] = None,
    ) -> "LabModel":
        """Factory method for model creation."""
        try:
            model_name = config.get("model")
            class_name = config.get(model_name + ".class_name")
        except KeyError:
            raise ValueError("Can't find model class_name in config")
        module = importlib.import_module("bdlab.model")
        try:
            model_class = getattr(module, class_name)
        except AttributeError:
            raise ValueError(
                "Can't find class {} in 'bdlab.model' for model {}".format(
                    class_name, model_name
                )
            )
        device = config.check("job.device", ["cpu"])
        model = model_class(config, vocab_size, n_labels, configuration_key, seed=seed)
        return model.to(device)

    @staticmethod
    def create_from(checkpoint: Dict, config: Optional[Config] = None) -> "LabModel":
        """Rebuild a model (including early exit and adapters) from a checkpoint.

        Uses the configuration stored in the checkpoint unless `config` is given.

        """
        if config is None:
            config = Config.create_from(checkpoint)
        savepoint = checkpoint["model"]
        meta = savepoint["meta"]
        model = LabModel.create(config, meta["vocab_size"], meta["n_labels"])
        model.restore_structure(meta)
        model.load(savepoint)
        return model

    def restore_structure(self, meta: Dict[str, Any]):
        """Re-apply structural changes recorded in `meta` before loading weights."""
        pass
