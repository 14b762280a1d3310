"""Labeled sequences, CoNLL column files, and the IOB2 tagging scheme."""
import re
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, NamedTuple

from bdlab.misc import ContractError, IOB2Error, ParseError

TAG_PATTERN = re.compile(r"^(O|[BI]-[A-Za-z0-9_]+)$")
OUTSIDE = "O"


@dataclass
class LabeledSequence:
    """One sentence: words with one IOB2 tag each and, once tokenized, its tokens.

    ``word_start[i]`` is true iff token i is the first token of a word; pad flags
    are all false for a single sequence and are set when batching.

    """

    words: List[str]
    labels: List[str]
    token_ids: List[int] = field(default_factory=list)
    word_start: List[bool] = field(default_factory=list)
    pad_flags: List[bool] = field(default_factory=list)

    def __len__(self):
        return len(self.words)


@dataclass
class DatasetSplit:
    train: List[LabeledSequence]
    valid: List[LabeledSequence]
    test: List[LabeledSequence]
    #: "O" first, then the other tags in sorted order
    label_vocabulary: List[str]

    def splits(self):
        return {"train": self.train, "valid": self.valid, "test": self.test}


def label_vocabulary(sequences: Iterable[LabeledSequence], extra=()) -> List[str]:
    tags = set(extra)
    for sequence in sequences:
        tags.update(sequence.labels)
    tags.discard(OUTSIDE)
    return [OUTSIDE] + sorted(tags)


# -- FILES -----------------------------------------------------------------------------


def read_conll(path: str) -> List[LabeledSequence]:
    """Read a CoNLL column file.

    Each non-blank line holds a word in the first and its tag in the last
    whitespace-separated column; blank lines separate sentences (runs of blank
    lines count as one separator) and ``-DOCSTART-`` lines are skipped.

    """
    sequences = []
    words: List[str] = []
    labels: List[str] = []

    def flush():
        nonlocal words, labels
        if words:
            sequences.append(LabeledSequence(words, labels))
            words, labels = [], []

    with open(path, "r", encoding="utf-8") as file:
        for line_number, line in enumerate(file, 1):
            line = line.rstrip("\r\n")
            fields = line.split()
            if len(fields) == 0:
                flush()
                continue
            if fields[0] == "-DOCSTART-":
                flush()
                continue
            if len(fields) < 2:
                raise ParseError(
                    path, line_number, len(line) + 1, "expected a word and a tag"
                )
            tag = fields[-1]
            if not TAG_PATTERN.match(tag):
                raise ParseError(
                    path,
                    line_number,
                    line.rfind(tag) + 1,
                    "malformed tag {!r}".format(tag),
                )
            words.append(fields[0])
            labels.append(tag)
    flush()
    return sequences


def write_conll(path: str, sequences: Iterable[LabeledSequence]):
    "Write one ``word<TAB>tag`` line per word and a blank line after each sentence."
    with open(path, "w", encoding="utf-8") as file:
        for sequence in sequences:
            for word, tag in zip(sequence.words, sequence.labels):
                file.write("{}\t{}\n".format(word, tag))
            file.write("\n")


# -- IOB2 ------------------------------------------------------------------------------


class Span(NamedTuple):
    #: first word (inclusive)
    start: int
    #: last word (inclusive)
    end: int
    type: str


SpanSet = FrozenSet[Span]


def validate_iob2(tags: List[str], mode: str = "strict") -> List[str]:
    """Check that every I-X follows B-X or I-X.

    In mode "strict", raises :class:`IOB2Error` at the first violation; in mode
    "repair", every violating I-X becomes B-X.

    """
    if mode not in ["strict", "repair"]:
        raise ValueError("unknown IOB2 mode {}".format(mode))
    result = list(tags)
    previous = OUTSIDE
    for i, tag in enumerate(tags):
        if not TAG_PATTERN.match(tag):
            raise IOB2Error(i, "malformed tag {!r}".format(tag))
        if tag.startswith("I-") and previous[2:] != tag[2:]:
            if mode == "strict":
                raise IOB2Error(
                    i, "{} does not continue {}".format(tag, previous)
                )
            result[i] = "B-" + tag[2:]
        previous = result[i]
    return result


def extract_spans(tags: List[str]) -> SpanSet:
    "Maximal B-X (I-X)* runs as inclusive (start, end, type) spans."
    try:
        validate_iob2(tags, "strict")
    except IOB2Error as e:
        raise ContractError("cannot extract spans from invalid tags: {}".format(e))
    spans = []
    start = None
    for i, tag in enumerate(list(tags) + [OUTSIDE]):
        if start is not None and not tag.startswith("I-"):
            spans.append(Span(start, i - 1, tags[start][2:]))
            start = None
        if tag.startswith("B-"):
            start = i
    return frozenset(spans)


def tags_from_spans(spans: Iterable[Span], length: int) -> List[str]:
    "Inverse of :func:`extract_spans` for non-overlapping spans."
    tags = [OUTSIDE] * length
    for span in sorted(spans):
        if span.start < 0 or span.end >= length or span.start > span.end:
            raise ContractError("span {} out of range for length {}".format(span, length))
        if any(tag != OUTSIDE for tag in tags[span.start : span.end + 1]):
            raise ContractError("span {} overlaps another span".format(span))
        tags[span.start] = "B-" + span.type
        for i in range(span.start + 1, span.end + 1):
            tags[i] = "I-" + span.type
    return tags
