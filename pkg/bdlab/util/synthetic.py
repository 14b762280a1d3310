"""Synthetic sequence labeling tasks.

Sentences are sequences of symbol words; each word is the trigger "!" with
probability `trigger_prob` and otherwise one of 20 symbols drawn uniformly.

* lookahead: a word is labeled B-NXT iff the word after it is the trigger. The
  label depends on right context only, so causal models cannot predict it.
* leftcontext: a word is labeled B-PRV iff the word before it is the trigger.

"""
from typing import List, Tuple

import numpy as np

from bdlab.util.conll import OUTSIDE, DatasetSplit, LabeledSequence

SYMBOLS = [
    "ab", "cde", "fg", "hijk", "lm", "nop", "qr", "stuv", "wx", "yz",
    "bat", "cog", "dim", "elk", "fizz", "gnu", "hex", "ion", "jolt", "kiwi",
]
TRIGGER = "!"

TASKS = {"lookahead": "B-NXT", "leftcontext": "B-PRV"}

#: sizes of the train and valid splits; test gets the rest
SPLIT_RATIOS = (0.7, 0.1)


def inventory() -> List[str]:
    "All words the generator can produce."
    return SYMBOLS + [TRIGGER]


def _sentence(
    rng: np.random.Generator, trigger_prob: float, min_words: int, max_words: int
) -> Tuple[str, ...]:
    length = int(rng.integers(min_words, max_words + 1))
    triggers = rng.random(length) < trigger_prob
    symbols = rng.integers(0, len(SYMBOLS), length)
    return tuple(TRIGGER if t else SYMBOLS[s] for t, s in zip(triggers, symbols))


def gen_sentences(
    n_sentences: int,
    seed,
    trigger_prob: float = 0.15,
    min_words: int = 8,
    max_words: int = 24,
    unique: bool = True,
) -> List[List[str]]:
    """Sample sentences; with `unique`, no sentence occurs twice."""
    if not 0.0 <= trigger_prob <= 1.0:
        raise ValueError("trigger probability must be in [0, 1]")
    if not 1 <= min_words <= max_words:
        raise ValueError("need 1 <= min_words <= max_words")
    rng = np.random.default_rng(seed)
    sentences, seen = [], set()
    attempts = 0
    while len(sentences) < n_sentences:
        attempts += 1
        if attempts > 100 * n_sentences + 1000:
            raise ValueError(
                "cannot generate {} distinct sentences with these settings".format(
                    n_sentences
                )
            )
        sentence = _sentence(rng, trigger_prob, min_words, max_words)
        if unique:
            if sentence in seen:
                continue
            seen.add(sentence)
        sentences.append(list(sentence))
    return sentences


def label_sentence(words: List[str], task: str) -> List[str]:
    if task == "lookahead":
        return [
            TASKS[task] if i + 1 < len(words) and words[i + 1] == TRIGGER else OUTSIDE
            for i in range(len(words))
        ]
    elif task == "leftcontext":
        return [
            TASKS[task] if i > 0 and words[i - 1] == TRIGGER else OUTSIDE
            for i in range(len(words))
        ]
    raise ValueError(
        "unknown synthetic task {}; allowed values are {}".format(task, list(TASKS))
    )


def gen_task(
    task: str,
    n_sentences: int,
    seed,
    trigger_prob: float = 0.15,
    min_words: int = 8,
    max_words: int = 24,
) -> DatasetSplit:
    """Labeled, shuffled, and split sentences of a synthetic task.

    Splits hold int(0.7 n), int(0.1 n), and the remaining sentences; no sentence
    occurs in two splits.

    """
    if task not in TASKS:
        raise ValueError(
            "unknown synthetic task {}; allowed values are {}".format(task, list(TASKS))
        )
    if n_sentences < 100:
        raise ValueError("need at least 100 sentences, found {}".format(n_sentences))
    sentences = gen_sentences(n_sentences, seed, trigger_prob, min_words, max_words)
    order = np.random.default_rng([seed, 1]).permutation(n_sentences)
    sequences = [
        LabeledSequence(sentences[i], label_sentence(sentences[i], task)) for i in order
    ]
    n_train = int(SPLIT_RATIOS[0] * n_sentences)
    n_valid = int(SPLIT_RATIOS[1] * n_sentences)
    return DatasetSplit(
        train=sequences[:n_train],
        valid=sequences[n_train : n_train + n_valid],
        test=sequences[n_train + n_valid :],
        label_vocabulary=[OUTSIDE, TASKS[task]],
    )


def gen_lookahead_task(n_sentences: int, seed: int, **kwargs) -> DatasetSplit:
    return gen_task("lookahead", n_sentences, seed, **kwargs)


def gen_leftcontext_task(n_sentences: int, seed: int, **kwargs) -> DatasetSplit:
    return gen_task("leftcontext", n_sentences, seed, **kwargs)


def gen_copy_corpus(
    n_sentences: int,
    seed,
    trigger_prob: float = 0.15,
    min_words: int = 8,
    max_words: int = 24,
) -> List[List[str]]:
    """Unlabeled sentences for language model pretraining.

    Uses a seed stream separate from the labeled tasks, so pretraining sentences
    are independent of the fine-tuning splits.

    """
    return gen_sentences(
        n_sentences,
        seed + 1_000_003,
        trigger_prob,
        min_words,
        max_words,
        unique=False,
    )
