from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Dict, Iterator, List, Optional

import torch
from torch import Tensor

from bdlab import Config, Configurable
from bdlab.util.conll import (
    DatasetSplit,
    LabeledSequence,
    label_vocabulary,
    read_conll,
    validate_iob2,
)
from bdlab.util.synthetic import gen_task, inventory
from bdlab.util.tokenizer import ChunkTokenizer

SPLITS = ["train", "valid", "test"]


@dataclass
class Batch:
    """Tokenized sequences padded to the longest one."""

    #: [batch, n] token ids, PAD at pad positions
    ids: Tensor
    #: [batch, n] true at pad positions
    pad_flags: Tensor
    #: [batch, n] true at the first token of each word
    word_start: Tensor
    #: [batch, n] label index of the word starting at a position, 0 elsewhere
    labels: Tensor
    sequences: List[LabeledSequence]

    def __len__(self):
        return len(self.sequences)

    def num_active(self) -> int:
        return int(self.word_start.sum())


def collate(sequences: List[LabeledSequence], label_index: Dict[str, int]) -> Batch:
    if len(sequences) == 0:
        raise ValueError("cannot build an empty batch")
    n = max(len(s.token_ids) for s in sequences)
    ids = torch.full((len(sequences), n), ChunkTokenizer.PAD, dtype=torch.long)
    pad_flags = torch.ones(len(sequences), n, dtype=torch.bool)
    word_start = torch.zeros(len(sequences), n, dtype=torch.bool)
    labels = torch.zeros(len(sequences), n, dtype=torch.long)
    for b, sequence in enumerate(sequences):
        m = len(sequence.token_ids)
        ids[b, :m] = torch.tensor(sequence.token_ids, dtype=torch.long)
        pad_flags[b, :m] = False
        starts = torch.tensor(sequence.word_start, dtype=torch.bool)
        word_start[b, :m] = starts
        labels[b, :m][starts] = torch.tensor(
            [label_index[tag] for tag in sequence.labels], dtype=torch.long
        )
    return Batch(ids, pad_flags, word_start, labels, sequences)


class Dataset(Configurable):
    """Tokenized train/valid/test splits of a sequence labeling task.

    To load a dataset, use `Dataset.create()`.

    """

    def __init__(
        self,
        config: Config,
        split: DatasetSplit,
        tokenizer: ChunkTokenizer,
        seed: Optional[int] = None,
    ):
        super().__init__(config, "dataset")
        self.tokenizer = tokenizer
        self.seed = seed
        self.label_vocabulary: List[str] = list(split.label_vocabulary)
        self.label_index = {tag: i for i, tag in enumerate(self.label_vocabulary)}
        max_len = self.get_option("max_len")
        self._splits: Dict[str, List[LabeledSequence]] = {}
        for key, sequences in split.splits().items():
            encoded, truncated = [], 0
            for sequence in sequences:
                sequence, was_truncated = tokenizer.encode(sequence, max_len)
                encoded.append(sequence)
                truncated += was_truncated
            if truncated:
                config.log(
                    "Truncated {} of {} {} sequences to {} tokens".format(
                        truncated, len(sequences), key, max_len
                    )
                )
            self._splits[key] = encoded

    ## LOADING ##########################################################################

    @staticmethod
    def create(config: Config, tokenizer: Optional[ChunkTokenizer] = None) -> Dataset:
        """Generates or loads the dataset described by the ``dataset`` options.

        A given `tokenizer` (e.g., of a pretrained model) is used instead of
        building one.

        """
        dataset_type = config.check("dataset.type", ["synthetic", "conll"])
        chunk = config.get("dataset.chunk")
        seed = None
        if dataset_type == "synthetic":
            seed = config.get("dataset.synthetic.seed")
            split = gen_task(
                config.check("dataset.synthetic.task", ["lookahead", "leftcontext"]),
                config.get("dataset.synthetic.num_sentences"),
                seed,
                trigger_prob=config.get("dataset.synthetic.trigger_prob"),
                min_words=config.get("dataset.synthetic.min_words"),
                max_words=config.get("dataset.synthetic.max_words"),
            )
            if tokenizer is None:
                # same vocabulary for every task and the pretraining corpus
                tokenizer = ChunkTokenizer.build(inventory(), chunk)
        else:
            mode = config.check("dataset.iob2_mode", ["strict", "repair"])
            sequences = {}
            for key in SPLITS:
                filename = config.get("dataset.files." + key)
                if not filename:
                    raise IOError(
                        "Filename for split {} not specified in config".format(key)
                    )
                if not os.path.exists(filename):
                    raise IOError(
                        "File {} for split {} could not be found".format(filename, key)
                    )
                sequences[key] = read_conll(filename)
                for sequence in sequences[key]:
                    sequence.labels = validate_iob2(sequence.labels, mode)
                config.log("Loaded {} {} sentences".format(len(sequences[key]), key))
            split = DatasetSplit(
                sequences["train"],
                sequences["valid"],
                sequences["test"],
                label_vocabulary(s for key in SPLITS for s in sequences[key]),
            )
            if tokenizer is None:
                tokenizer = ChunkTokenizer.build(
                    (w for s in split.train for w in s.words), chunk
                )
        return Dataset(config, split, tokenizer, seed)

    @staticmethod
    def tokenizer_from(checkpoint: Dict) -> Optional[ChunkTokenizer]:
        data = checkpoint.get("dataset")
        if data is None:
            return None
        return ChunkTokenizer.from_dict(data["tokenizer"])

    def save_to(self, checkpoint: Dict) -> Dict:
        """Adds tokenizer and label vocabulary to a checkpoint"""
        checkpoint["dataset"] = {
            "name": self.get_option("name"),
            "tokenizer": self.tokenizer.to_dict(),
            "label_vocabulary": list(self.label_vocabulary),
        }
        return checkpoint

    ## ACCESS ###########################################################################

    def split(self, key: str) -> List[LabeledSequence]:
        try:
            return self._splits[key]
        except KeyError:
            raise KeyError("unknown split {}; allowed values are {}".format(key, SPLITS))

    def num_labels(self) -> int:
        return len(self.label_vocabulary)

    def vocab_size(self) -> int:
        return len(self.tokenizer)

    def manifest(self) -> Dict[str, Any]:
        return {
            "name": self.get_option("name"),
            "sizes": {key: len(self._splits[key]) for key in SPLITS},
            "label_vocabulary": list(self.label_vocabulary),
            "seed": self.seed,
        }

    def batches(
        self,
        key: str,
        batch_size: int,
        generator: Optional[torch.Generator] = None,
        limit: int = 0,
    ) -> Iterator[Batch]:
        """Batches of a split, shuffled with `generator` if given.

        With `limit` > 0, only the first `limit` sequences are used.

        """
        if batch_size < 1:
            raise ValueError("batch size must be positive, found {}".format(batch_size))
        sequences = self.split(key)
        if limit > 0:
            sequences = sequences[:limit]
        if generator is not None:
            order = torch.randperm(len(sequences), generator=generator).tolist()
        else:
            order = list(range(len(sequences)))
        for start in range(0, len(order), batch_size):
            yield collate(
                [sequences[i] for i in order[start : start + batch_size]],
                self.label_index,
            )
