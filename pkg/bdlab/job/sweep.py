import concurrent.futures
import json
import os
from typing import Any, Dict, List, Optional

from bdlab import Config, Dataset
from bdlab.job import Job
from bdlab.job.train import FinetuneJob, RunManifest
from bdlab.misc import ConfigurationError
from bdlab.util import load_checkpoint

#: model options taken over from a pretrained checkpoint
STRUCTURE_KEYS = ["d_model", "heads", "n_layers", "d_ff", "rope_base", "norm_eps"]


def load_pretrained(config: Config) -> Optional[Dict[str, Any]]:
    """Loads the checkpoint named by ``finetune.pretrained`` (if any).

    The structural model options of the checkpoint replace those of `config`, so
    that the fine-tuned model fits the pretrained weights.

    """
    filename = config.get("finetune.pretrained")
    if not filename:
        return None
    checkpoint = load_checkpoint(filename)
    if checkpoint.get("type") != "pretrain":
        raise ConfigurationError(
            "{} is not a pretrained model checkpoint".format(filename)
        )
    pretrained_config = Config.create_from(checkpoint)
    model = config.get("model")
    if pretrained_config.get("model") != model:
        raise ConfigurationError(
            "pretrained model {} does not match configured model {}".format(
                pretrained_config.get("model"), model
            )
        )
    for key in STRUCTURE_KEYS:
        value = pretrained_config.get(model + "." + key)
        if config.get(model + "." + key) != value:
            config.set(model + "." + key, value, log=True)
    config.set("dataset.chunk", checkpoint["dataset"]["tokenizer"]["chunk"])
    config.log("Loaded pretrained model from {}".format(filename))
    return checkpoint


class SweepJob(Job):
    """Fine-tuning runs of one configuration over the seeds in ``finetune.seeds``.

    Every seed runs as a :class:`FinetuneJob` with its own model, optimizer, and
    random streams. With ``finetune.jobs`` > 1, seeds run concurrently in a pool of
    worker threads. All runs share the dataset; outputs are per run.

    """

    def __init__(
        self, config: Config, dataset: Optional[Dataset] = None, parent_job=None
    ):
        self.pretrained = load_pretrained(config)
        if dataset is None:
            tokenizer = None
            if self.pretrained is not None:
                tokenizer = Dataset.tokenizer_from(self.pretrained)
            dataset = Dataset.create(config, tokenizer)
        super().__init__(config, dataset, parent_job)
        self.seeds: List[int] = list(config.get("finetune.seeds"))
        if len(self.seeds) == 0:
            raise ConfigurationError("finetune.seeds is empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError("duplicate seeds in {}".format(self.seeds))
        self.num_workers: int = config.check_range("finetune.jobs", 1, float("inf"))
        self.manifests: List[RunManifest] = []

        if self.__class__ == SweepJob:
            for f in Job.job_created_hooks:
                f(self)

    def _run_seed(self, seed: int) -> RunManifest:
        job = FinetuneJob(
            self.config.clone(),
            self.dataset,
            seed,
            parent_job=self,
            pretrained=self.pretrained,
        )
        manifest = job.run()
        job.save()
        return manifest

    def run(self) -> List[RunManifest]:
        with open(
            os.path.join(self.config.folder, "dataset.json"), "w", encoding="utf-8"
        ) as file:
            json.dump(self.dataset.manifest(), file, sort_keys=True, indent=2)
            file.write("\n")

        self.config.log(
            "Running {} seed(s) {} with {} worker(s)...".format(
                len(self.seeds), self.seeds, self.num_workers
            )
        )
        if self.num_workers == 1:
            self.manifests = [self._run_seed(seed) for seed in self.seeds]
        else:
            with concurrent.futures.ThreadPoolExecutor(
                max_workers=self.num_workers
            ) as pool:
                futures = [pool.submit(self._run_seed, seed) for seed in self.seeds]
                concurrent.futures.wait(
                    futures, return_when=concurrent.futures.FIRST_EXCEPTION
                )
                # re-raises the first failure, if any
                self.manifests = [future.result() for future in futures]

        for manifest in self.manifests:
            self.config.log(
                "  {}: test f1 {:.4f} (best epoch {})".format(
                    manifest.name, manifest.f1, manifest.best_epoch
                )
            )
        self.trace(
            event="run_completed",
            runs=[manifest.name for manifest in self.manifests],
            f1=[manifest.f1 for manifest in self.manifests],
        )
        return self.manifests
