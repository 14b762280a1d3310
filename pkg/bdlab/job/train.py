import copy
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterator, List, Optional

import numpy as np
import torch
from torch import Tensor

from bdlab import Config, Dataset
from bdlab.dataset import Batch, collate
from bdlab.job import Job
from bdlab.job.eval import EvaluationJob
from bdlab.misc import ConfigurationError, DivergenceError
from bdlab.model import LabModel
from bdlab.model.masking import STRATEGIES, check_strategy
from bdlab.util import LabOptimizer, save_checkpoint
from bdlab.util import ops
from bdlab.util.conll import OUTSIDE, LabeledSequence
from bdlab.util.synthetic import gen_copy_corpus, inventory
from bdlab.util.tokenizer import ChunkTokenizer


def epoch_generator(seed: int, epoch: int) -> torch.Generator:
    "Generator for the data order of one epoch of a run."
    state = np.random.SeedSequence([seed, epoch]).generate_state(1, np.uint64)[0]
    return torch.Generator().manual_seed(int(state) & 0x7FFF_FFFF_FFFF_FFFF)


def run_name(task: str, strategy: str, r: int, exit_layer: int, seed: int) -> str:
    return "{}_{}_r{}_L{}_s{}".format(task, strategy, r, exit_layer, seed)


def sl_loss_sum(logits: Tensor, batch: Batch) -> Tensor:
    "Summed cross-entropy over the first token of every word."
    return ops.cross_entropy(logits, batch.labels, batch.word_start, reduction="sum")


def lm_loss_sum(logits: Tensor, batch: Batch) -> Tensor:
    "Summed next-token cross-entropy over non-pad targets."
    return ops.cross_entropy(
        logits[:, :-1], batch.ids[:, 1:], ~batch.pad_flags[:, 1:], reduction="sum"
    )


@dataclass
class RunManifest:
    """Record of one fine-tuning run.

    `valid_f1` holds the validation micro-F1 after each epoch; `best_epoch`
    (1-indexed) maximizes it, and the test scores belong to the weights of that epoch.

    """

    dataset: str
    strategy: str
    r: int
    exit_layer: int
    seed: int
    f1: float
    precision: float
    recall: float
    test: Dict[str, float]
    valid_f1: List[float]
    best_epoch: int
    lora: bool
    trainable_parameters: int
    skipped_layer_fraction: float
    config: Dict[str, Any]
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return run_name(self.dataset, self.strategy, self.r, self.exit_layer, self.seed)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, filename: str):
        with open(filename, "w", encoding="utf-8") as file:
            json.dump(self.to_dict(), file, sort_keys=True, indent=2)
            file.write("\n")

    @staticmethod
    def load(filename: str) -> "RunManifest":
        with open(filename, "r", encoding="utf-8") as file:
            return RunManifest(**json.load(file))


class TrainingJob(Job):
    """Abstract base job for optimizing a model with AdamW and gradient accumulation.

    An update step processes a window of `train.grad_accum` micro-batches. The loss of
    each micro-batch is summed over its active positions and divided by the number
    of active positions of the whole window, so that a window yields the gradient
    of the mean loss over all of its positions.

    Subclasses implement `_loss_sum` and `run`.

    """

    def __init__(
        self, config: Config, dataset: Optional[Dataset], parent_job: Job = None
    ) -> None:
        super().__init__(config, dataset, parent_job)
        self.model: Optional[LabModel] = None
        self.optimizer = None
        self.abort_on_nan: bool = config.get("train.abort_on_nan")
        self.batch_size: int = config.get("train.batch_size")
        self.grad_accum: int = config.get("train.grad_accum")
        self.config.check_range("train.batch_size", 1, float("inf"))
        self.config.check_range("train.grad_accum", 1, float("inf"))
        self.config.check("train.trace_level", ["batch", "epoch"])
        self.trace_batch: bool = self.config.get("train.trace_level") == "batch"
        self.visualize_graph: bool = self.config.get("train.visualize_graph")
        self.epoch: int = 0
        self.num_updates: int = 0

    def _loss_sum(self, batch: Batch) -> Tensor:
        "Loss of a micro-batch, summed over its active positions."
        raise NotImplementedError

    def _num_active(self, batch: Batch) -> int:
        raise NotImplementedError

    def _check_loss(self, value: float):
        if self.abort_on_nan and not math.isfinite(value):
            raise DivergenceError(
                "Loss became {} at epoch {}, update {}; aborting".format(
                    value, self.epoch, self.num_updates
                )
            )

    def _export_graph(self, loss: Tensor):
        from torchviz import make_dot

        f = os.path.join(self.config.folder, "cost_value_" + self.job_id[0:8])
        graph = make_dot(loss, params=dict(self.model.named_parameters()))
        graph.save(f + ".gv")
        self.config.log("Exported compute graph to " + f + ".gv")

    def process_window(self, window: List[Batch]) -> Dict[str, Any]:
        """One optimizer update over the accumulated gradients of `window`.

        Returns the mean loss per active position and timing information.

        """
        prepare_time = -time.time()
        num_active = sum(self._num_active(batch) for batch in window)
        if num_active == 0:
            raise ValueError("update window without active positions")
        self.optimizer.zero_grad()
        prepare_time += time.time()

        forward_time = backward_time = 0.0
        sum_loss = 0.0
        for index, batch in enumerate(window):
            forward_time -= time.time()
            loss = self._loss_sum(batch) / num_active
            forward_time += time.time()
            value = loss.item()
            self._check_loss(value)
            if self.visualize_graph and self.num_updates == 0 and index == 0:
                self._export_graph(loss)
            backward_time -= time.time()
            loss.backward()
            backward_time += time.time()
            sum_loss += value

        optimizer_time = -time.time()
        self.optimizer.step()
        optimizer_time += time.time()
        self.num_updates += 1
        return dict(
            avg_loss=sum_loss,
            size=sum(len(batch) for batch in window),
            active=num_active,
            prepare_time=prepare_time,
            forward_time=forward_time,
            backward_time=backward_time,
            optimizer_time=optimizer_time,
        )

    def _trace_window(self, index: int, num_windows: int, result: Dict[str, Any]):
        if self.trace_batch:
            batch_trace = dict(
                type=self.type_str,
                scope="batch",
                epoch=self.epoch,
                batch=index,
                batches=num_windows,
                lr=self.optimizer.get_lr()
                if hasattr(self.optimizer, "get_lr")
                else [group["lr"] for group in self.optimizer.param_groups],
                **result,
            )
            self.trace(**batch_trace, event="batch_completed")
        self.config.print(
            (
                "\r"  # go back
                + "{}  batch{: "
                + str(1 + int(math.ceil(math.log10(max(num_windows, 2)))))
                + "d}/{}"
                + ", avg_loss {:.4E}, time {:6.2f}s"
                + "\033[K"  # clear to right
            ).format(
                self.config.log_prefix,
                index,
                num_windows - 1,
                result["avg_loss"],
                result["prepare_time"]
                + result["forward_time"]
                + result["backward_time"]
                + result["optimizer_time"],
            ),
            end="",
            flush=True,
        )

    def run_windows(self, windows: List[List[Batch]]) -> Dict[str, Any]:
        "Runs the given update windows and returns a trace entry."
        self.model.train()
        sum_loss = 0.0
        sum_active = 0
        size = 0
        epoch_time = -time.time()
        for index, window in enumerate(windows):
            result = self.process_window(window)
            self._trace_window(index, len(windows), result)
            sum_loss += result["avg_loss"] * result["active"]
            sum_active += result["active"]
            size += result["size"]
        epoch_time += time.time()
        self.config.print("\033[2K\r", end="", flush=True)  # clear line and go back

        trace_entry = dict(
            type=self.type_str,
            scope="epoch",
            epoch=self.epoch,
            batches=len(windows),
            size=size,
            avg_loss=sum_loss / max(sum_active, 1),
            epoch_time=epoch_time,
            event="epoch_completed",
        )
        return trace_entry

    def windows(self, batches: List[Batch]) -> List[List[Batch]]:
        return [
            batches[i : i + self.grad_accum]
            for i in range(0, len(batches), self.grad_accum)
        ]


class FinetuneJob(TrainingJob):
    """Sequence labeling fine-tuning of a single seed.

    Builds the model for the configured adaptation strategy (mask configuration,
    repetitions, early exit, and adapters), trains for `train.max_epochs` epochs,
    keeps the weights of the epoch with the best validation micro-F1, and reports
    the test micro-F1 of those weights in a :class:`RunManifest`.

    """

    def __init__(
        self,
        config: Config,
        dataset: Dataset,
        seed: int,
        parent_job: Job = None,
        pretrained: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(config, dataset, parent_job)
        self.type_str = "finetune"
        self.seed = seed
        self.max_epochs: int = config.get("train.max_epochs")
        self.strategy: str = config.check("finetune.strategy", STRATEGIES)
        self.r: int = config.get("finetune.r")
        check_strategy(self.strategy, self.r)
        self.exit_layer: int = config.get("finetune.exit_layer")
        for key in ["train", "valid", "test"]:
            if len(dataset.split(key)) == 0:
                raise ValueError("{} split of the dataset is empty".format(key))

        self.model = self._create_model(pretrained)
        self.lora = self.model.lora_attached
        self.mask_config = self.model.mask_config(self.strategy)
        self.optimizer = LabOptimizer.create(config, self.model)
        self.valid_job = EvaluationJob(
            config.clone(), dataset, self, self.model, "valid", self.mask_config, self.r
        )
        self.valid_trace: List[Dict[str, Any]] = []
        self.manifest: Optional[RunManifest] = None

        if self.__class__ == FinetuneJob:
            for f in Job.job_created_hooks:
                f(self)

    @property
    def name(self) -> str:
        return run_name(
            self.dataset.get_option("name"),
            self.strategy,
            self.r,
            self.exit_layer,
            self.seed,
        )

    def _create_model(self, pretrained: Optional[Dict[str, Any]]) -> LabModel:
        model = LabModel.create(
            self.config, self.dataset.vocab_size(), self.dataset.num_labels(), self.seed
        )
        if pretrained is not None:
            meta = pretrained["model"]["meta"]
            if meta["vocab_size"] != self.dataset.vocab_size():
                raise ConfigurationError(
                    "pretrained model has {} tokens, the data has {}".format(
                        meta["vocab_size"], self.dataset.vocab_size()
                    )
                )
            state = {
                key: value
                for key, value in pretrained["model"]["state_dict"].items()
                if not key.startswith("cls_head.")
            }
            missing, unexpected = model.load_state_dict(state, strict=False)
            if unexpected or any(not key.startswith("cls_head.") for key in missing):
                raise ConfigurationError(
                    "pretrained weights do not fit the model (missing {}, "
                    "unexpected {})".format(missing, unexpected)
                )
            model.reset_head(self.seed)
        if self.exit_layer:
            model.set_early_exit(self.exit_layer)

        lora = self.config.check("lora.enabled", ["auto", "always", "never"])
        if lora == "always" or (lora == "auto" and pretrained is not None):
            model.attach_lora(
                self.config.get("lora.targets"),
                rank=self.config.get("lora.rank"),
                alpha=self.config.get("lora.alpha"),
                dropout=self.config.get("lora.dropout"),
                seed=self.seed,
            )
        model.dropout_stream.reset(self.seed)
        self.config.log(
            "Created {} model with {} trainable of {} parameters{}".format(
                self.strategy,
                model.num_parameters(trainable_only=True),
                model.num_parameters(),
                " (LoRA)" if model.lora_attached else "",
            )
        )
        return model

    def _num_active(self, batch: Batch) -> int:
        return batch.num_active()

    def _loss_sum(self, batch: Batch) -> Tensor:
        logits = self.model.forward_sl(
            batch.ids, batch.pad_flags, self.mask_config, self.r
        )
        return sl_loss_sum(logits, batch)

    def run_epoch(self) -> Dict[str, Any]:
        batches = list(
            self.dataset.batches(
                "train", self.batch_size, epoch_generator(self.seed, self.epoch)
            )
        )
        trace_entry = self.run_windows(self.windows(batches))
        return self.trace(**trace_entry, echo=True, echo_prefix="  ", log=True)

    def run(self) -> RunManifest:
        self.config.log("Starting fine-tuning run {}...".format(self.name))
        train_time = -time.time()
        best_f1, best_state = -1.0, None
        while self.epoch < self.max_epochs:
            self.epoch += 1
            self.config.log("Starting epoch {}...".format(self.epoch))
            self.run_epoch()
            self.valid_job.epoch = self.epoch
            trace_entry = self.valid_job.run()
            self.valid_trace.append(trace_entry)
            if trace_entry["f1"] > best_f1:
                best_f1 = trace_entry["f1"]
                best_state = copy.deepcopy(self.model.state_dict())
        train_time += time.time()

        best_epoch = 1 + max(
            range(len(self.valid_trace)), key=lambda i: self.valid_trace[i]["f1"]
        )
        if best_state is not None:
            self.model.load_state_dict(best_state)
        self.config.log("Restored weights of epoch {}.".format(best_epoch))

        test_job = EvaluationJob(
            self.config.clone(),
            self.dataset,
            self,
            self.model,
            "test",
            self.mask_config,
            self.r,
        )
        test_job.epoch = best_epoch
        test_time = -time.time()
        test_entry = test_job.run()
        test_time += time.time()

        test = {key: test_entry[key] for key in ["tp", "fp", "fn"]}
        test.update({key: test_entry[key] for key in ["precision", "recall", "f1"]})
        self.manifest = RunManifest(
            dataset=self.dataset.get_option("name"),
            strategy=self.strategy,
            r=self.r,
            exit_layer=self.exit_layer,
            seed=self.seed,
            f1=test["f1"],
            precision=test["precision"],
            recall=test["recall"],
            test=test,
            valid_f1=[entry["f1"] for entry in self.valid_trace],
            best_epoch=best_epoch,
            lora=self.model.lora_attached,
            trainable_parameters=self.model.num_parameters(trainable_only=True),
            skipped_layer_fraction=self.model.skipped_layer_fraction(),
            config=json.loads(self.config.to_json()),
            timings=dict(train=train_time, test=test_time),
        )
        trace_entry = dict(
            type=self.type_str,
            scope="train",
            run=self.name,
            seed=self.seed,
            best_epoch=best_epoch,
            valid_f1=self.manifest.valid_f1,
            f1=self.manifest.f1,
            event="train_completed",
        )
        self.trace(**trace_entry, echo=True, echo_prefix="  ", log=True)
        return self.manifest

    def save(self, folder: Optional[str] = None):
        "Writes manifest and checkpoint of a finished run."
        folder = folder or self.config.folder
        os.makedirs(folder, exist_ok=True)
        filename = os.path.join(folder, self.name)
        self.manifest.save(filename + ".json")
        checkpoint = {
            "type": "finetune",
            "model": self.model.save(),
            "manifest": self.manifest.to_dict(),
        }
        checkpoint = self.config.save_to(checkpoint)
        checkpoint = self.dataset.save_to(checkpoint)
        save_checkpoint(checkpoint, filename + ".pt")
        self.config.log("Saved run {} to {}.{{json,pt}}".format(self.name, filename))


def copy_corpus(config: Config, tokenizer: ChunkTokenizer) -> List[LabeledSequence]:
    """Tokenized pretraining sequences: each sentence followed by copies of itself.

    Sequences longer than ``dataset.max_len`` tokens are truncated at a word
    boundary.

    """
    sentences = gen_copy_corpus(
        config.get("pretrain.num_sentences"),
        config.get("pretrain.seed"),
        trigger_prob=config.get("dataset.synthetic.trigger_prob"),
        min_words=config.get("dataset.synthetic.min_words"),
        max_words=config.get("dataset.synthetic.max_words"),
    )
    repeats = config.check_range("pretrain.repeats", 1, float("inf"))
    max_len = config.get("dataset.max_len")
    corpus = []
    for sentence in sentences:
        words = sentence * repeats
        sequence, _ = tokenizer.encode(
            LabeledSequence(words, [OUTSIDE] * len(words)), max_len
        )
        corpus.append(sequence)
    return corpus


class PretrainingJob(TrainingJob):
    """Causal language model pretraining on a synthetic copy corpus.

    Runs `pretrain.steps` updates on the all-causal full-depth model. Aborts with a
    :class:`DivergenceError` when the loss stays above ``divergence_factor`` times
    the initial loss for ``divergence_patience`` consecutive updates.

    """

    def __init__(self, config: Config, parent_job: Job = None):
        super().__init__(config, None, parent_job)
        self.type_str = "pretrain"
        self.seed: int = config.get("pretrain.seed")
        self.steps: int = config.check_range("pretrain.steps", 0, float("inf"))
        self.divergence_factor: float = config.get("pretrain.divergence_factor")
        self.divergence_patience: int = config.get("pretrain.divergence_patience")
        self.tokenizer = ChunkTokenizer.build(inventory(), config.get("dataset.chunk"))
        self.corpus = copy_corpus(config, self.tokenizer)
        if len(self.corpus) == 0:
            raise ValueError("pretraining corpus is empty")
        self.label_index = {OUTSIDE: 0}
        self.model = LabModel.create(config, len(self.tokenizer), 1, self.seed)
        self.model.dropout_stream.reset(self.seed)
        self.optimizer = LabOptimizer.create(config, self.model)
        self.losses: List[float] = []

        if self.__class__ == PretrainingJob:
            for f in Job.job_created_hooks:
                f(self)

    def _num_active(self, batch: Batch) -> int:
        return int((~batch.pad_flags[:, 1:]).sum())

    def _loss_sum(self, batch: Batch) -> Tensor:
        return lm_loss_sum(self.model.forward_lm(batch.ids, batch.pad_flags), batch)

    def _window_stream(self) -> Iterator[List[Batch]]:
        "Endless update windows; the corpus is reshuffled for every pass."
        corpus_pass = 0
        while True:
            generator = epoch_generator(self.seed, corpus_pass)
            order = torch.randperm(len(self.corpus), generator=generator).tolist()
            batches = [
                collate(
                    [self.corpus[i] for i in order[start : start + self.batch_size]],
                    self.label_index,
                )
                for start in range(0, len(order), self.batch_size)
            ]
            for window in self.windows(batches):
                yield window
            corpus_pass += 1

    def run(self):
        self.config.log(
            "Starting pretraining for {} updates on {} sequences...".format(
                self.steps, len(self.corpus)
            )
        )
        self.model.train()
        windows = self._window_stream()
        above = 0
        pretrain_time = -time.time()
        for step in range(self.steps):
            result = self.process_window(next(windows))
            self._trace_window(step, self.steps, result)
            self.losses.append(result["avg_loss"])
            if result["avg_loss"] > self.divergence_factor * self.losses[0]:
                above += 1
                if above >= self.divergence_patience:
                    raise DivergenceError(
                        "Loss {:.4E} stayed above {} times the initial loss {:.4E} "
                        "for {} updates; aborting".format(
                            result["avg_loss"],
                            self.divergence_factor,
                            self.losses[0],
                            above,
                        )
                    )
            else:
                above = 0
        pretrain_time += time.time()
        self.config.print("\033[2K\r", end="", flush=True)

        trace_entry = dict(
            type=self.type_str,
            scope="train",
            steps=self.steps,
            initial_loss=self.losses[0] if self.losses else None,
            final_loss=self.losses[-1] if self.losses else None,
            pretrain_time=pretrain_time,
            event="pretrain_completed",
        )
        return self.trace(**trace_entry, echo=True, echo_prefix="  ", log=True)

    def checkpoint_file(self, folder: Optional[str] = None) -> str:
        return os.path.join(
            folder or self.config.folder,
            "{}_pretrained.pt".format(self.config.get("dataset.name")),
        )

    def save(self, folder: Optional[str] = None) -> str:
        filename = self.checkpoint_file(folder)
        checkpoint = {
            "type": "pretrain",
            "model": self.model.save(),
            "losses": list(self.losses),
            "dataset": {
                "name": self.config.get("dataset.name"),
                "tokenizer": self.tokenizer.to_dict(),
                "label_vocabulary": [],
            },
        }
        checkpoint = self.config.save_to(checkpoint)
        save_checkpoint(checkpoint, filename)
        self.config.log("Saved pretrained model to {}".format(filename))
        return filename
