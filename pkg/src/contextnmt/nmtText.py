__doc__ = """
Corpus preparation: tokenization, length cleaning, first-token casing,
parallel corpus files and document-aware context extraction.

A parallel corpus is two UTF-8 files with one sentence per line. A blank line
in both files at the same position ends a document.

```python
from contextnmt.nmtText import read_parallel, extract_context_pairs

docs = read_parallel("train.src", "train.trg")
examples = extract_context_pairs(docs[0], src_vocab, trg_vocab)
```
"""

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Union

import yaml

from contextnmt.nmtBpe import SubwordModel, join_subwords, learn_bpe, word_frequencies
from contextnmt.nmtUtils import ConfigurationError, ContractError
from contextnmt.nmtVocab import EMPTY, EOS, Vocabulary

logger = logging.getLogger(__name__)

__all__ = [
    "CasingModel",
    "ContextualExample",
    "Document",
    "SentencePair",
    "TextPipeline",
    "clean_corpus",
    "detokenize",
    "extract_context_pairs",
    "prepare",
    "read_parallel",
    "read_source",
    "tokenize",
    "write_parallel",
]

_OPENING = set("([{«¿¡")


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> List[str]:
    """Split on whitespace, then peel leading and trailing punctuation
    characters off every chunk as single-character tokens.

    Args:
        text (str): a sentence

    Returns:
        List[str]: tokens. Running it again on the joined output changes nothing.
    """
    tokens: List[str] = []
    for chunk in text.split():
        start, end = 0, len(chunk)
        while start < end and _is_punct(chunk[start]):
            start += 1
        while end > start and _is_punct(chunk[end - 1]):
            end -= 1
        tokens.extend(chunk[:start])
        if start < end:
            tokens.append(chunk[start:end])
        tokens.extend(chunk[end:])
    return tokens


def detokenize(tokens: Sequence[str]) -> str:
    "Join tokens, gluing punctuation back onto its neighbour"
    out = ""
    glue_next = False
    for token in tokens:
        single_punct = len(token) == 1 and _is_punct(token)
        if not out:
            out = token
        elif glue_next or (single_punct and token not in _OPENING):
            out += token
        else:
            out += " " + token
        glue_next = single_punct and token in _OPENING
    return out


@dataclass(frozen=True)
class SentencePair:
    "An aligned source/target sentence, space separated tokens"
    src: str
    trg: str


@dataclass
class Document:
    """
    An ordered run of aligned sentence pairs.
    """

    doc_id: str
    pairs: List[SentencePair] = field(default_factory=list)
    tags: Dict[str, object] = field(default_factory=dict)
    "Generator annotations (synthetic corpora only)"

    @property
    def sources(self) -> List[str]:
        return [p.src for p in self.pairs]

    @property
    def targets(self) -> List[str]:
        return [p.trg for p in self.pairs]

    def map(self, src_fn, trg_fn=None) -> "Document":
        "A copy with every source (and target) sentence passed through a function"
        trg_fn = trg_fn or src_fn
        return Document(
            self.doc_id,
            [SentencePair(src_fn(p.src), trg_fn(p.trg)) for p in self.pairs],
            dict(self.tags),
        )

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[SentencePair]:
        return iter(self.pairs)

    def __getitem__(self, i: int) -> SentencePair:
        return self.pairs[i]

    def __repr__(self) -> str:
        return f"<Document {self.doc_id} pairs={len(self.pairs)}>"


def _read_lines(path: Union[Path, str]) -> List[str]:
    with Path(path).open("r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def read_parallel(
    src_path: Union[Path, str], trg_path: Union[Path, str]
) -> List[Document]:
    """Read two aligned corpus files into documents.

    Raises:
        ContractError: the files have a different number of lines, or a blank
        line appears on only one side
    """
    src_lines, trg_lines = _read_lines(src_path), _read_lines(trg_path)
    if len(src_lines) != len(trg_lines):
        raise ContractError(
            f"{src_path} has {len(src_lines)} lines but {trg_path} has {len(trg_lines)}"
        )
    docs: List[Document] = []
    current: List[SentencePair] = []

    def _flush():
        if current:
            docs.append(Document(f"doc{len(docs):06d}", list(current)))
            current.clear()

    for n, (src, trg) in enumerate(zip(src_lines, trg_lines), start=1):
        src_blank, trg_blank = not src.strip(), not trg.strip()
        if src_blank != trg_blank:
            raise ContractError(f"Document boundary on one side only at line {n}")
        if src_blank:
            _flush()
        else:
            current.append(SentencePair(src.strip(), trg.strip()))
    _flush()
    return docs


def read_source(path: Union[Path, str]) -> List[Document]:
    "Source-only documents, blank lines separating them; targets are empty"
    docs = read_parallel(path, path)
    return [Document(d.doc_id, [SentencePair(p.src, "") for p in d]) for d in docs]


def write_parallel(
    docs: Iterable[Document],
    src_path: Union[Path, str],
    trg_path: Union[Path, str],
) -> None:
    "Write documents as two aligned files, separated by blank lines"
    with Path(src_path).open("w", encoding="utf-8") as fs, Path(trg_path).open(
        "w", encoding="utf-8"
    ) as ft:
        first = True
        for doc in docs:
            if not doc.pairs:
                continue
            if not first:
                fs.write("\n")
                ft.write("\n")
            first = False
            for pair in doc.pairs:
                fs.write(pair.src + "\n")
                ft.write(pair.trg + "\n")


def clean_corpus(docs: Iterable[Document], max_len: int = 80) -> List[Document]:
    """Drop sentence pairs with more than `max_len` tokens on either side.

    A dropped pair splits its document so the next kept sentence starts a new
    document and gets an empty context. Fragments after the first are named
    `<doc_id>#<n>`.

    Raises:
        ValueError: max_len < 1
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    out: List[Document] = []
    dropped = 0
    for doc in docs:
        fragments: List[List[SentencePair]] = [[]]
        for pair in doc.pairs:
            if len(pair.src.split()) > max_len or len(pair.trg.split()) > max_len:
                dropped += 1
                if fragments[-1]:
                    fragments.append([])
                continue
            fragments[-1].append(pair)
        fragments = [f for f in fragments if f] or [[]]
        for n, pairs in enumerate(fragments):
            doc_id = doc.doc_id if n == 0 else f"{doc.doc_id}#{n}"
            out.append(Document(doc_id, pairs, dict(doc.tags)))
    if dropped:
        logger.info("Dropped %d sentence pairs longer than %d tokens", dropped, max_len)
    return out


class CasingModel:
    """
    First-token casing: a sentence-initial token is lowercased iff its
    lowercase form is more frequent in the training corpus.
    """

    def __init__(self, lowercase: Iterable[str] = ()) -> None:
        self.lowercase = set(lowercase)
        "Capitalized forms that are lowercased at sentence start"

    @staticmethod
    def learn(sentences: Iterable[Sequence[str]]) -> "CasingModel":
        counts: Counter = Counter()
        for tokens in sentences:
            counts.update(tokens)
        return CasingModel(
            t for t, c in counts.items() if t != t.lower() and counts[t.lower()] > c
        )

    def apply(self, tokens: Sequence[str]) -> List[str]:
        tokens = list(tokens)
        if tokens and tokens[0] in self.lowercase:
            tokens[0] = tokens[0].lower()
        return tokens

    @staticmethod
    def recase(tokens: Sequence[str]) -> List[str]:
        "Capitalize the first letter of the first token"
        tokens = list(tokens)
        if tokens and tokens[0]:
            tokens[0] = tokens[0][0].upper() + tokens[0][1:]
        return tokens

    def save(self, path: Union[Path, str]) -> None:
        with Path(path).open("w", encoding="utf-8") as f:
            yaml.safe_dump({"lowercase": sorted(self.lowercase)}, f, allow_unicode=True)

    @staticmethod
    def load(path: Union[Path, str]) -> "CasingModel":
        with Path(path).open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        return CasingModel(data.get("lowercase", []))

    def __eq__(self, other) -> bool:
        return isinstance(other, CasingModel) and self.lowercase == other.lowercase


@dataclass
class ContextualExample:
    """
    One training or inference instance: the previous sentence pair and the
    current one, as EOS-terminated id sequences.
    """

    aux_src: Optional[List[int]]
    "None when the previous source is not available"
    aux_trg: Optional[List[int]]
    "None when the previous target is not available"
    src: List[int]
    trg: Optional[List[int]]
    "None when translating"
    doc_id: str = ""
    position: int = 0

    def __post_init__(self):
        if self.src is None:
            raise ContractError("ContextualExample.src is required")
        for name in ("src", "trg"):
            seq = getattr(self, name)
            if seq is not None and (not seq or seq == [EOS]):
                raise ContractError(f"ContextualExample.{name} must not be empty")
        for name in ("aux_src", "aux_trg", "src", "trg"):
            seq = getattr(self, name)
            if seq is not None and (not seq or seq[-1] != EOS):
                raise ContractError(f"ContextualExample.{name} must end with EOS")


EMPTY_CONTEXT = [EMPTY, EOS]
"Context of the first sentence of a document"


def extract_context_pairs(
    doc: Document, src_vocab: Vocabulary, trg_vocab: Vocabulary
) -> List[ContextualExample]:
    """One example per sentence pair, the previous pair acting as context.

    Args:
        doc (Document): a cleaned, tokenized and segmented document
        src_vocab (Vocabulary): source side ids
        trg_vocab (Vocabulary): target side ids

    Returns:
        List[ContextualExample]: the first example gets EMPTY contexts
    """
    examples = []
    prev_src, prev_trg = list(EMPTY_CONTEXT), list(EMPTY_CONTEXT)
    for n, pair in enumerate(doc.pairs):
        src = src_vocab.encode(pair.src.split(), add_eos=True)
        trg = trg_vocab.encode(pair.trg.split(), add_eos=True)
        examples.append(ContextualExample(prev_src, prev_trg, src, trg, doc.doc_id, n))
        prev_src, prev_trg = src, trg
    return examples


class TextPipeline:
    """
    Everything needed to go from raw text to ids and back: casing models,
    the subword model and both vocabularies.

    Saved as a directory holding `casing.src.yaml`, `casing.trg.yaml`,
    `bpe.codes`, `vocab.src` and `vocab.trg`.
    """

    FILES = {
        "src_casing": "casing.src.yaml",
        "trg_casing": "casing.trg.yaml",
        "subwords": "bpe.codes",
        "src_vocab": "vocab.src",
        "trg_vocab": "vocab.trg",
    }

    def __init__(
        self,
        subwords: SubwordModel,
        src_vocab: Vocabulary,
        trg_vocab: Vocabulary,
        src_casing: Optional[CasingModel] = None,
        trg_casing: Optional[CasingModel] = None,
    ) -> None:
        self.subwords = subwords
        self.src_vocab = src_vocab
        self.trg_vocab = trg_vocab
        self.src_casing = src_casing or CasingModel()
        self.trg_casing = trg_casing or CasingModel()

    @property
    def vocab_fingerprint(self) -> str:
        "Source and target vocabulary digests"
        return f"{self.src_vocab.fingerprint}:{self.trg_vocab.fingerprint}"

    def _side(self, side: str):
        if side == "src":
            return self.src_casing, self.src_vocab
        if side == "trg":
            return self.trg_casing, self.trg_vocab
        raise ValueError(f"side must be 'src' or 'trg', got {side!r}")

    def segment(self, text: str, side: str) -> str:
        "Raw sentence → space separated subwords"
        casing, _ = self._side(side)
        return " ".join(self.subwords.segment_sentence(casing.apply(tokenize(text))))

    def encode(self, text: str, side: str) -> List[int]:
        "Raw sentence → EOS-terminated ids"
        _, vocab = self._side(side)
        return vocab.encode(self.segment(text, side).split(), add_eos=True)

    def decode(self, ids: Sequence[int], side: str = "trg") -> str:
        "Ids → detokenized, recased sentence"
        casing, vocab = self._side(side)
        words = join_subwords(vocab.decode(ids))
        return detokenize(casing.recase(words))

    def segment_document(self, doc: Document) -> Document:
        return doc.map(
            lambda s: self.segment(s, "src"), lambda s: self.segment(s, "trg")
        )

    def examples(self, doc: Document) -> List[ContextualExample]:
        "Raw document → contextual examples"
        return extract_context_pairs(
            self.segment_document(doc), self.src_vocab, self.trg_vocab
        )

    def save(self, directory: Union[Path, str]) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.src_casing.save(directory / self.FILES["src_casing"])
        self.trg_casing.save(directory / self.FILES["trg_casing"])
        self.subwords.save(directory / self.FILES["subwords"])
        self.src_vocab.save(directory / self.FILES["src_vocab"])
        self.trg_vocab.save(directory / self.FILES["trg_vocab"])

    @staticmethod
    def load(directory: Union[Path, str]) -> "TextPipeline":
        directory = Path(directory)
        names = TextPipeline.FILES.values()
        missing = [n for n in names if not (directory / n).exists()]
        if missing:
            raise ConfigurationError(
                f"{directory} is not a prepared data directory, missing {missing}"
            )
        return TextPipeline(
            SubwordModel.load(directory / TextPipeline.FILES["subwords"]),
            Vocabulary.load(directory / TextPipeline.FILES["src_vocab"]),
            Vocabulary.load(directory / TextPipeline.FILES["trg_vocab"]),
            CasingModel.load(directory / TextPipeline.FILES["src_casing"]),
            CasingModel.load(directory / TextPipeline.FILES["trg_casing"]),
        )

    def __repr__(self) -> str:
        return (
            f"<TextPipeline merges={len(self.subwords)} "
            f"src_vocab={len(self.src_vocab)} trg_vocab={len(self.trg_vocab)}>"
        )


def prepare(
    docs: Sequence[Document],
    out_dir: Union[Path, str],
    num_merges: int = 90000,
    threshold: int = 50,
    max_len: int = 80,
) -> TextPipeline:
    """Tokenize, clean, case and segment a raw corpus, learn the pipeline
    models and write everything to `out_dir`.

    The subword model is learned jointly over both sides; vocabularies are
    separate. The segmented corpus goes to `train.src` / `train.trg`.

    Raises:
        ConfigurationError: nothing survives cleaning
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tokenized = [d.map(lambda s: " ".join(tokenize(s))) for d in docs]
    cleaned = [d for d in clean_corpus(tokenized, max_len) if d.pairs]
    if not cleaned:
        raise ConfigurationError("The corpus is empty after cleaning")

    src_casing = CasingModel.learn(s.split() for d in cleaned for s in d.sources)
    trg_casing = CasingModel.learn(s.split() for d in cleaned for s in d.targets)
    cased = [
        d.map(
            lambda s: " ".join(src_casing.apply(s.split())),
            lambda s: " ".join(trg_casing.apply(s.split())),
        )
        for d in cleaned
    ]

    frequencies = word_frequencies(
        s.split() for d in cased for s in d.sources + d.targets
    )
    subwords = learn_bpe(frequencies, num_merges, threshold)
    segmented = [
        d.map(lambda s: " ".join(subwords.segment_sentence(s.split()))) for d in cased
    ]

    pipeline = TextPipeline(
        subwords,
        Vocabulary.build(t for d in segmented for s in d.sources for t in s.split()),
        Vocabulary.build(t for d in segmented for s in d.targets for t in s.split()),
        src_casing,
        trg_casing,
    )
    pipeline.save(out_dir)
    write_parallel(segmented, out_dir / "train.src", out_dir / "train.trg")
    logger.info(
        "Prepared %d documents (%d pairs) in %s: %r",
        len(segmented),
        sum(len(d) for d in segmented),
        out_dir,
        pipeline,
    )
    return pipeline
