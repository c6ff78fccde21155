__doc__ = """
Byte-pair encoding subwords.

Words are split into characters and the last character carries the
end-of-word marker `</w>`. Learning repeatedly merges the most frequent
adjacent symbol pair; applying a model merges, in learned order, the pairs it
knows. Joining the segments of a word and dropping the final marker gives the
word back.

```python
from contextnmt.nmtBpe import apply_bpe, learn_bpe

model = learn_bpe({"lower": 5, "low": 7, "newest": 3}, num_merges=10, threshold=2)
apply_bpe(model, "lowest")
```

The model file starts with a `#version: 1 threshold: <n>` header followed by
one space separated merge pair per line.
"""

import logging
import re
from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

logger = logging.getLogger(__name__)

END_OF_WORD = "</w>"
FORMAT_VERSION = 1

_HEADER = re.compile(r"^#version: (\d+) threshold: (\d+)$")

Pair = Tuple[str, str]


class SubwordModel:
    """
    An ordered list of merges learned by `learn_bpe`.
    """

    def __init__(self, merges: Sequence[Pair] = (), vocab_threshold: int = 0) -> None:
        if vocab_threshold < 0:
            raise ValueError(f"vocab_threshold must be >= 0, got {vocab_threshold}")
        self.merges: List[Pair] = [tuple(m) for m in merges]
        "Merge operations in learned order"
        self.vocab_threshold = vocab_threshold
        "Minimum pair frequency a merge needed to be learned"
        self._ranks: Dict[Pair, int] = {m: n for n, m in enumerate(self.merges)}
        self._cache: Dict[str, Tuple[str, ...]] = {}

    def segment(self, token: str) -> List[str]:
        "Split a token into subwords"
        if token not in self._cache:
            self._cache[token] = tuple(self._merge(token))
        return list(self._cache[token])

    def _merge(self, token: str) -> List[str]:
        if not token:
            return []
        symbols = list(token[:-1]) + [token[-1] + END_OF_WORD]
        while len(symbols) > 1:
            ranked = [
                (self._ranks[pair], n)
                for n, pair in enumerate(zip(symbols, symbols[1:]))
                if pair in self._ranks
            ]
            if not ranked:
                break
            rank = min(ranked)[0]
            first, second = self.merges[rank]
            merged = []
            i = 0
            while i < len(symbols):
                if (
                    i < len(symbols) - 1
                    and symbols[i] == first
                    and symbols[i + 1] == second
                ):
                    merged.append(first + second)
                    i += 2
                else:
                    merged.append(symbols[i])
                    i += 1
            symbols = merged
        return symbols

    def segment_sentence(self, tokens: Iterable[str]) -> List[str]:
        out: List[str] = []
        for token in tokens:
            out.extend(self.segment(token))
        return out

    def save(self, path: Union[Path, str]) -> None:
        with Path(path).open("w", encoding="utf-8") as f:
            f.write(f"#version: {FORMAT_VERSION} threshold: {self.vocab_threshold}\n")
            for first, second in self.merges:
                f.write(f"{first} {second}\n")

    @staticmethod
    def load(path: Union[Path, str]) -> "SubwordModel":
        """Read a model file.

        Raises:
            ValueError: missing header, unknown version or malformed merge line
        """
        with Path(path).open("r", encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            match = _HEADER.match(header)
            if match is None:
                raise ValueError(f"Invalid subword model header: {header!r}")
            version, threshold = int(match.group(1)), int(match.group(2))
            if version != FORMAT_VERSION:
                raise ValueError(f"Unsupported subword model version {version}")
            merges = []
            for n, line in enumerate(f, start=2):
                parts = line.rstrip("\n").split(" ")
                if len(parts) != 2:
                    raise ValueError(f"Malformed merge on line {n}: {line!r}")
                merges.append((parts[0], parts[1]))
        return SubwordModel(merges, threshold)

    def __len__(self) -> int:
        return len(self.merges)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SubwordModel):
            return False
        return (
            self.merges == other.merges
            and self.vocab_threshold == other.vocab_threshold
        )

    def __repr__(self) -> str:
        return (
            f"<SubwordModel merges={len(self.merges)} "
            f"threshold={self.vocab_threshold}>"
        )


def _initial_symbols(word: str) -> Tuple[str, ...]:
    return tuple(word[:-1]) + (word[-1] + END_OF_WORD,)


def learn_bpe(
    corpus: Mapping[str, int], num_merges: int, threshold: int = 0
) -> SubwordModel:
    """Learn merges greedily from a word frequency map.

    Args:
        corpus (Mapping[str, int]): word → frequency
        num_merges (int): maximum number of merges
        threshold (int): stop once the best pair is less frequent than this

    Returns:
        SubwordModel: the learned model. Ties between equally frequent pairs
        go to the lexicographically smallest pair.
    """
    if num_merges < 0:
        raise ValueError(f"num_merges must be >= 0, got {num_merges}")
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")

    words: Dict[Tuple[str, ...], int] = Counter()
    for word, freq in corpus.items():
        if word and freq > 0:
            words[_initial_symbols(word)] += freq

    merges: List[Pair] = []
    for _ in range(num_merges):
        pairs: Counter = Counter()
        for symbols, freq in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += freq
        if not pairs:
            break
        best, freq = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        if freq < threshold:
            logger.debug("Stopping BPE: best pair %s has frequency %d", best, freq)
            break
        merges.append(best)
        words = _apply_merge(words, best)

    logger.info("Learned %d merges (threshold %d)", len(merges), threshold)
    return SubwordModel(merges, threshold)


def _apply_merge(
    words: Mapping[Tuple[str, ...], int], pair: Pair
) -> Dict[Tuple[str, ...], int]:
    first, second = pair
    out: Dict[Tuple[str, ...], int] = Counter()
    for symbols, freq in words.items():
        merged = []
        i = 0
        while i < len(symbols):
            if symbols[i : i + 2] == (first, second):
                merged.append(first + second)
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        out[tuple(merged)] += freq
    return out


def apply_bpe(model: SubwordModel, token: str) -> List[str]:
    "Segment a single token with a learned model"
    return model.segment(token)


def join_subwords(segments: Sequence[str]) -> List[str]:
    """Undo segmentation: glue subwords until one carries the end-of-word marker.

    A trailing run without a marker (a truncated hypothesis) becomes a word too.
    """
    words: List[str] = []
    current = ""
    for seg in segments:
        if seg.endswith(END_OF_WORD):
            words.append(current + seg[: -len(END_OF_WORD)])
            current = ""
        else:
            current += seg
    if current:
        words.append(current)
    return words


def word_frequencies(sentences: Iterable[Sequence[str]]) -> Dict[str, int]:
    "Count token types over tokenized sentences"
    counts: Counter = Counter()
    for tokens in sentences:
        counts.update(tokens)
    return dict(counts)


def symbol_inventory(model: SubwordModel, corpus: Iterable[str]) -> set:
    "Every symbol segmentation of `corpus` words may produce under `model`"
    inventory = set()
    for word in corpus:
        if word:
            inventory.update(_initial_symbols(word))
    inventory.update(first + second for first, second in model.merges)
    return inventory
