from typing import Dict, Iterable, List, Tuple

from bdlab.util.conll import LabeledSequence

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class ChunkTokenizer:
    """Splits words into character chunks of a fixed length.

    Id 0 is the padding token and id 1 the unknown token; the chunks seen when
    building the vocabulary get ids 2, 3, ... in sorted order.

    """

    PAD = 0
    UNK = 1

    def __init__(self, vocabulary: List[str], chunk: int = 2):
        if chunk < 1:
            raise ValueError("chunk length must be positive, found {}".format(chunk))
        if vocabulary[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with the pad and unknown tokens")
        self.chunk = chunk
        self.vocabulary = list(vocabulary)
        self.index: Dict[str, int] = {t: i for i, t in enumerate(self.vocabulary)}

    @staticmethod
    def build(words: Iterable[str], chunk: int = 2) -> "ChunkTokenizer":
        chunks = set()
        for word in words:
            chunks.update(ChunkTokenizer.split_word(word, chunk))
        return ChunkTokenizer([PAD_TOKEN, UNK_TOKEN] + sorted(chunks), chunk)

    @staticmethod
    def split_word(word: str, chunk: int) -> List[str]:
        return [word[i : i + chunk] for i in range(0, len(word), chunk)]

    def __len__(self):
        return len(self.vocabulary)

    def tokenize(self, words: List[str]) -> Tuple[List[int], List[bool]]:
        """Token ids of `words` and the flags marking the first token of each word."""
        if len(words) == 0:
            raise ValueError("cannot tokenize an empty word list")
        ids, word_start = [], []
        for word in words:
            pieces = self.split_word(word, self.chunk)
            if len(pieces) == 0:
                raise ValueError("cannot tokenize an empty word")
            for i, piece in enumerate(pieces):
                ids.append(self.index.get(piece, self.UNK))
                word_start.append(i == 0)
        return ids, word_start

    def encode(
        self, sequence: LabeledSequence, max_len: int
    ) -> Tuple[LabeledSequence, bool]:
        """Tokenized copy of `sequence`, truncated to at most `max_len` tokens.

        Truncation keeps whole words only, except when the first word alone is
        longer than `max_len`. Returns the sequence and whether it was truncated.

        """
        ids, word_start = self.tokenize(sequence.words)
        n_words = len(sequence.words)
        truncated = len(ids) > max_len
        if truncated:
            starts = [i for i, start in enumerate(word_start) if start]
            n_words = max(1, sum(1 for s in starts[1:] if s <= max_len))
            end = starts[n_words] if n_words < len(starts) else len(ids)
            end = min(end, max_len)
            ids, word_start = ids[:end], word_start[:end]
        return (
            LabeledSequence(
                words=sequence.words[:n_words],
                labels=sequence.labels[:n_words],
                token_ids=ids,
                word_start=word_start,
                pad_flags=[False] * len(ids),
            ),
            truncated,
        )

    def to_dict(self):
        return {"chunk": self.chunk, "vocabulary": self.vocabulary}

    @staticmethod
    def from_dict(data) -> "ChunkTokenizer":
        return ChunkTokenizer(data["vocabulary"], data["chunk"])
