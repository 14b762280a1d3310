"""Best span micro-F1 attainable by a causal predictor on the lookahead task.

The label of word p is B-NXT iff word p+1 is the trigger. Words are drawn
independently, so for any predictor that sees words 1..p (and the sentence
length), word p is positive with probability `trigger_prob` if it is not the last
word and with probability 0 if it is. The best predictor ranks these two position
classes by success probability and predicts positive on a prefix of the ranking.

"""
from dataclasses import dataclass
from typing import List, Tuple

from bdlab.util.conll import extract_spans
from bdlab.util.metric import SeedAggregate, aggregate, micro_f1
from bdlab.util.synthetic import gen_sentences, label_sentence


@dataclass
class OracleResult:
    #: expected micro-F1 of the best causal predictor
    ceiling: float
    #: whether the best predictor marks non-final words (else it predicts nothing)
    predict_non_final: bool
    #: micro-F1 of that predictor on sampled data, one value per shard
    empirical: SeedAggregate


def _f1_of_counts(tp: float, fp: float, fn: float) -> float:
    if tp == fp == fn == 0:
        return 1.0
    return 2 * tp / (2 * tp + fp + fn) if tp > 0 else 0.0


def sweep_position_classes(
    classes: List[Tuple[float, float]]
) -> Tuple[float, int]:
    """Best expected F1 over prefixes of position classes sorted by success rate.

    Each class is a pair (expected count, success probability). Returns the F1 and
    the length of the best prefix.

    """
    ranked = sorted(classes, key=lambda c: -c[1])
    positives = sum(count * p for count, p in ranked)
    best_f1, best_prefix = _f1_of_counts(0.0, 0.0, positives), 0
    tp = fp = 0.0
    for i, (count, p) in enumerate(ranked):
        tp += count * p
        fp += count * (1 - p)
        f1 = _f1_of_counts(tp, fp, positives - tp)
        if f1 > best_f1:
            best_f1, best_prefix = f1, i + 1
    return best_f1, best_prefix


def causal_chance_oracle(
    task: str = "lookahead",
    trigger_prob: float = 0.15,
    min_words: int = 8,
    max_words: int = 24,
    num_words: int = 100_000,
    shards: int = 10,
    seed: int = 0,
) -> OracleResult:
    if task != "lookahead":
        raise ValueError("the causal chance oracle supports the lookahead task only")
    if shards < 2:
        raise ValueError("need at least two shards")

    mean_length = (min_words + max_words) / 2
    non_final = (mean_length - 1, trigger_prob)
    final = (1.0, 0.0)
    ceiling, prefix = sweep_position_classes([non_final, final])
    predict_non_final = prefix >= 1

    # sample until every shard holds num_words / shards words
    shard_words = -(-num_words // shards)
    values = []
    for shard in range(shards):
        gold, pred, words = [], [], 0
        batch_seed = 0
        while words < shard_words:
            sentences = gen_sentences(
                1000,
                seed=[seed, shard, batch_seed],
                trigger_prob=trigger_prob,
                min_words=min_words,
                max_words=max_words,
                unique=False,
            )
            batch_seed += 1
            for sentence in sentences:
                gold.append(extract_spans(label_sentence(sentence, task)))
                tags = ["O"] * len(sentence)
                if predict_non_final:
                    tags[:-1] = ["B-NXT"] * (len(sentence) - 1)
                pred.append(extract_spans(tags))
                words += len(sentence)
                if words >= shard_words:
                    break
        values.append(micro_f1(gold, pred).f1)
    return OracleResult(ceiling, predict_non_final, aggregate(values))
