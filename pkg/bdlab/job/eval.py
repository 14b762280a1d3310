import time
from typing import Any, Dict, List, Optional

import torch

from bdlab import Config, Dataset
from bdlab.job import Job
from bdlab.model.masking import LayerMaskConfig
from bdlab.util.conll import extract_spans, validate_iob2
from bdlab.util.metric import F1Result, micro_f1


@torch.no_grad()
def predict_tags(
    model,
    dataset: Dataset,
    key: str,
    mask_config: LayerMaskConfig,
    r: int,
    batch_size: int,
    limit: int = 0,
) -> List[List[str]]:
    """Predicted IOB2 tags for every sentence of a split.

    A word's tag is the argmax label at its first token. Invalid IOB2 predictions
    (I-X without a preceding B-X or I-X) are read as B-X.

    """
    model.check_labels(dataset.num_labels())
    was_training = model.training
    model.eval()
    result = []
    try:
        for batch in dataset.batches(key, batch_size, limit=limit):
            logits = model.forward_sl(batch.ids, batch.pad_flags, mask_config, r)
            predicted = logits.argmax(dim=-1)
            for b in range(len(batch)):
                indexes = predicted[b][batch.word_start[b]].tolist()
                tags = [dataset.label_vocabulary[i] for i in indexes]
                result.append(validate_iob2(tags, "repair"))
    finally:
        model.train(was_training)
    return result


def evaluate(
    model,
    dataset: Dataset,
    key: str,
    mask_config: LayerMaskConfig,
    r: int,
    batch_size: int,
    limit: int = 0,
) -> F1Result:
    predictions = predict_tags(model, dataset, key, mask_config, r, batch_size, limit)
    sequences = dataset.split(key)
    if limit > 0:
        sequences = sequences[:limit]
    gold = [extract_spans(s.labels) for s in sequences]
    return micro_f1(gold, [extract_spans(tags) for tags in predictions])


class EvaluationJob(Job):
    """Span micro-F1 of a sequence labeling model on one split."""

    def __init__(
        self,
        config: Config,
        dataset: Dataset,
        parent_job: Optional[Job],
        model,
        split: str,
        mask_config: LayerMaskConfig,
        r: int,
    ):
        super().__init__(config, dataset, parent_job)
        self.model = model
        self.split = split
        self.mask_config = mask_config
        self.r = r
        self.batch_size = config.get("eval.batch_size")
        self.epoch = -1

        if self.__class__ == EvaluationJob:
            for f in Job.job_created_hooks:
                f(self)

    def run(self) -> Dict[str, Any]:
        self.config.log("Evaluating on {} split...".format(self.split))
        eval_time = -time.time()
        result = evaluate(
            self.model, self.dataset, self.split, self.mask_config, self.r, self.batch_size
        )
        eval_time += time.time()
        trace_entry = dict(
            type="span_f1",
            scope="epoch",
            split=self.split,
            epoch=self.epoch,
            size=len(self.dataset.split(self.split)),
            eval_time=eval_time,
            event="eval_completed",
            **result.to_dict(),
        )
        return self.trace(**trace_entry, echo=True, echo_prefix="  ", log=True)
