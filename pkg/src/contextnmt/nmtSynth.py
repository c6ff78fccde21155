__doc__ = """
A synthetic parallel language with controlled discourse phenomena.

Every document has two sentences. Discourse-linked documents come in three
flavours:

* coreference: the first sentence introduces a noun that has one masculine and
  one feminine translation, the reference picks one of them at random, and the
  second sentence refers back to it with a pronoun agreeing with the chosen
  translation. Only the previous *target* sentence tells the gender.
* cohesion: the first sentence uses a word with two synonymous translations,
  the second repeats the word and its translation must repeat the same
  synonym.
* disambiguation: the first sentence mentions a topic word that selects the
  sense, and so the translation, of an ambiguous word in the second sentence.

The remaining documents are two unrelated sentences. Contrastive test sets
drawn from the same lexicon are produced by `generate_testset`.

```python
from contextnmt.nmtSynth import SynthConfig, generate_corpus, generate_testset

cfg = SynthConfig(seed=7, num_documents=1000)
docs = generate_corpus(cfg)
blocks = generate_testset(cfg, "coreference")
```
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from contextnmt.nmtContrastive import ContrastiveBlock, ContrastivePair, SetKind
from contextnmt.nmtText import Document, SentencePair
from contextnmt.nmtUtils import ConfigurationError

logger = logging.getLogger(__name__)

__all__ = ["SynthConfig", "SynthLexicon", "generate_corpus", "generate_testset"]

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]

GENDERS = ("m", "f")
NUMBERS = ("sg", "pl")
PHENOMENA = ("coreference", "cohesion", "disambiguation")

_DETERMINERS = {
    ("m", "sg"): "le",
    ("f", "sg"): "la",
    ("m", "pl"): "les",
    ("f", "pl"): "les",
}
_PRONOUNS = {
    ("m", "sg"): "il",
    ("f", "sg"): "elle",
    ("m", "pl"): "ils",
    ("f", "pl"): "elles",
}
_SRC_PRONOUNS = {"sg": "it", "pl": "they"}
_SRC_COPULA = {"sg": "is", "pl": "are"}
_TRG_COPULA = {"sg": "est", "pl": "sont"}

# Seed streams
_LEXICON, _CORPUS, _TESTSET = 0, 1, 2


@dataclass
class SynthConfig:
    """
    Settings of the generator. The same settings always produce the same
    lexicon, corpus and test sets.
    """

    seed: int = 1234
    num_documents: int = 20000
    proportion: float = 0.5
    "Share of discourse-linked documents"
    mix: Tuple[float, float, float] = (0.5, 0.25, 0.25)
    "Relative weights of coreference, cohesion and disambiguation documents"
    filler_range: Tuple[int, int] = (0, 2)
    "Fewest and most filler words closing a sentence"
    num_nouns: int = 40
    num_objects: int = 40
    num_subjects: int = 20
    num_verbs: int = 20
    num_adjectives: int = 20
    num_fillers: int = 10
    num_synonym_items: int = 60
    num_ambiguous_items: int = 60
    topics_per_sense: int = 2

    def __post_init__(self):
        self.mix = tuple(float(w) for w in self.mix)
        self.filler_range = tuple(int(n) for n in self.filler_range)
        for f in fields(self):
            if f.name.startswith("num_") or f.name == "topics_per_sense":
                if getattr(self, f.name) < 1:
                    raise ConfigurationError(f"{f.name} must be positive")
        if not 0.0 <= self.proportion <= 1.0:
            raise ConfigurationError(
                f"proportion must be in [0, 1], got {self.proportion}"
            )
        if len(self.mix) != 3 or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise ConfigurationError(
                f"mix needs 3 non-negative weights, got {self.mix}"
            )
        low, high = self.filler_range
        if not 0 <= low <= high:
            raise ConfigurationError(f"Invalid filler_range {self.filler_range}")

    @staticmethod
    def from_dict(data: dict) -> "SynthConfig":
        known = {f.name for f in fields(SynthConfig)}
        unknown = set(data) - known
        if unknown:
            names = ", ".join(sorted(unknown))
            raise ConfigurationError(f"Unknown synth settings: {names}")
        return SynthConfig(**data)

    @staticmethod
    def from_yaml(path: Union[Path, str]) -> "SynthConfig":
        with Path(path).open(encoding="utf-8") as f:
            return SynthConfig.from_dict(yaml.safe_load(f) or {})

    def to_dict(self) -> dict:
        data = asdict(self)
        data["mix"] = list(self.mix)
        data["filler_range"] = list(self.filler_range)
        return data

    def rng(self, stream: int, *keys: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream, *keys])


class _WordMaker:
    "Distinct pseudo-words of three syllables, in random order"

    def __init__(self, rng: np.random.Generator) -> None:
        self.order = rng.permutation(len(_SYLLABLES) ** 3)
        self.n = 0

    def __call__(self) -> str:
        n, self.n = int(self.order[self.n]), self.n + 1
        base = len(_SYLLABLES)
        return "".join(_SYLLABLES[(n // base**i) % base] for i in (2, 1, 0))


@dataclass
class SynthNoun:
    "A source noun with one translation per gender"
    src: str
    trg: Dict[str, str]


@dataclass
class SynthItem:
    """A source word with two translations: synonyms for cohesion items,
    senses selected by topic words for ambiguous items."""

    src: str
    trg: Tuple[str, str]
    topics: Tuple[List[Tuple[str, str]], List[Tuple[str, str]]] = field(
        default_factory=lambda: ([], [])
    )
    "Source/target topic words selecting each translation (ambiguous items)"


@dataclass
class SynthLexicon:
    """
    Words of the synthetic language. Target nouns carry their gender in the
    last letter (`o` masculine, `a` feminine), plurals add `s`, feminine
    adjectives add `e`.
    """

    nouns: List[SynthNoun] = field(default_factory=list)
    "Ambiguous antecedents"
    objects: List[Tuple[str, str, str]] = field(default_factory=list)
    "Unambiguous nouns: source, target, gender"
    subjects: List[str] = field(default_factory=list)
    "Names, identical on both sides"
    verbs: List[Tuple[str, str]] = field(default_factory=list)
    adjectives: List[Tuple[str, str]] = field(default_factory=list)
    "Source, target masculine singular stem"
    fillers: List[Tuple[str, str]] = field(default_factory=list)
    synonyms: List[SynthItem] = field(default_factory=list)
    ambiguous: List[SynthItem] = field(default_factory=list)

    @staticmethod
    def build(cfg: SynthConfig) -> "SynthLexicon":
        "The lexicon of a configuration, drawn from its seed"
        rng = cfg.rng(_LEXICON)
        src, trg = _WordMaker(rng), _WordMaker(rng)

        lex = SynthLexicon()
        lex.nouns = [
            SynthNoun(src(), {"m": trg() + "o", "f": trg() + "a"})
            for _ in range(cfg.num_nouns)
        ]
        lex.objects = []
        for _ in range(cfg.num_objects):
            gender = GENDERS[int(rng.integers(2))]
            lex.objects.append((src(), trg() + ("o" if gender == "m" else "a"), gender))
        lex.subjects = [src().capitalize() for _ in range(cfg.num_subjects)]
        lex.verbs = [(src(), trg()) for _ in range(cfg.num_verbs)]
        lex.adjectives = [(src(), trg()) for _ in range(cfg.num_adjectives)]
        lex.fillers = [(src(), trg()) for _ in range(cfg.num_fillers)]
        lex.synonyms = [
            SynthItem(src(), (trg(), trg())) for _ in range(cfg.num_synonym_items)
        ]
        lex.ambiguous = []
        for _ in range(cfg.num_ambiguous_items):
            word = src()
            senses = (trg() + "o", trg() + "o")
            topics = tuple(
                [(src(), trg() + "o") for _ in range(cfg.topics_per_sense)]
                for _ in range(2)
            )
            lex.ambiguous.append(SynthItem(word, senses, topics))
        return lex

    def words(self, side: str) -> set:
        "Every token a sentence on `side` can contain"
        out = {".", ","}
        if side == "src":
            out |= {"the", "really", *_SRC_PRONOUNS.values(), *_SRC_COPULA.values()}
            out |= {n.src for n in self.nouns} | {n.src + "s" for n in self.nouns}
            out |= {o[0] for o in self.objects} | {o[0] + "s" for o in self.objects}
            out |= {v[0] for v in self.verbs} | {a[0] for a in self.adjectives}
            out |= {f[0] for f in self.fillers} | {s.src for s in self.synonyms}
            for item in self.ambiguous:
                out.add(item.src)
                out |= {t[0] for sense in item.topics for t in sense}
        else:
            out |= {"vraiment", *_DETERMINERS.values(), *_PRONOUNS.values()}
            out |= set(_TRG_COPULA.values())
            for n in self.nouns:
                out |= set(n.trg.values()) | {t + "s" for t in n.trg.values()}
            out |= {o[1] for o in self.objects} | {o[1] + "s" for o in self.objects}
            out |= {v[1] for v in self.verbs}
            for _, stem in self.adjectives:
                out |= {stem, stem + "e", stem + "s", stem + "es"}
            out |= {f[1] for f in self.fillers}
            out |= {t for s in self.synonyms for t in s.trg}
            for item in self.ambiguous:
                out |= set(item.trg)
                out |= {t[1] for sense in item.topics for t in sense}
        out |= set(self.subjects)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: Union[Path, str]) -> None:
        with Path(path).open("w", encoding="utf-8") as f:
            yaml.safe_dump(
                _plain(self.to_dict()), f, allow_unicode=True, sort_keys=False
            )


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


# Sentence templates, each returning (source, target) token lists


def _pick(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


def _fillers(rng, lex: SynthLexicon, cfg: SynthConfig) -> Tuple[List[str], List[str]]:
    low, high = cfg.filler_range
    chosen = [_pick(rng, lex.fillers) for _ in range(int(rng.integers(low, high + 1)))]
    return [f[0] for f in chosen], [f[1] for f in chosen]


def _join(src: List[str], trg: List[str]) -> SentencePair:
    return SentencePair(" ".join(src), " ".join(trg))


@dataclass
class _Frame:
    "The words of a sentence that stay fixed across a test block"
    subject: str
    verb: Tuple[str, str]
    fill: Tuple[List[str], List[str]]

    @staticmethod
    def draw(rng, lex: SynthLexicon, cfg: SynthConfig) -> "_Frame":
        return _Frame(
            _pick(rng, lex.subjects), _pick(rng, lex.verbs), _fillers(rng, lex, cfg)
        )


def _mention(
    frame: _Frame, noun_src: str, noun_trg: str, gender: str, number: str
) -> SentencePair:
    "<subject> <verb> the <noun> ..."
    plural = "s" if number == "pl" else ""
    src = [frame.subject, frame.verb[0], "the", noun_src + plural, *frame.fill[0], "."]
    trg = [
        frame.subject,
        frame.verb[1],
        _DETERMINERS[gender, number],
        noun_trg + plural,
        *frame.fill[1],
        ".",
    ]
    return _join(src, trg)


def _pronoun_sentence(
    adjective: Tuple[str, str], fill, gender: str, number: str
) -> SentencePair:
    "<pronoun> is <adjective> ..."
    stem = adjective[1] + ("e" if gender == "f" else "")
    stem += "s" if number == "pl" else ""
    src = [_SRC_PRONOUNS[number], _SRC_COPULA[number], adjective[0], *fill[0], "."]
    trg = [_PRONOUNS[gender, number], _TRG_COPULA[number], stem, *fill[1], "."]
    return _join(src, trg)


def _cohesion_pair(
    subject: str, item: SynthItem, choice: int, fill
) -> Tuple[SentencePair, SentencePair]:
    first = _join(
        [subject, "is", item.src, *fill[0], "."],
        [subject, "est", item.trg[choice], *fill[1], "."],
    )
    second = _join(["really", item.src, "."], ["vraiment", item.trg[choice], "."])
    return first, second


def _coreference_doc(rng, lex, cfg, doc_id: str) -> Document:
    noun = _pick(rng, lex.nouns)
    gender = GENDERS[int(rng.integers(2))]
    number = NUMBERS[int(rng.integers(2))]
    frame = _Frame.draw(rng, lex, cfg)
    first = _mention(frame, noun.src, noun.trg[gender], gender, number)
    second = _pronoun_sentence(
        _pick(rng, lex.adjectives), _fillers(rng, lex, cfg), gender, number
    )
    tags = {
        "phenomenon": "coreference",
        "noun": noun.src,
        "antecedent": noun.trg[gender],
        "gender": gender,
        "number": number,
    }
    return Document(doc_id, [first, second], tags)


def _cohesion_doc(rng, lex, cfg, doc_id: str) -> Document:
    item = _pick(rng, lex.synonyms)
    choice = int(rng.integers(2))
    first, second = _cohesion_pair(
        _pick(rng, lex.subjects), item, choice, _fillers(rng, lex, cfg)
    )
    tags = {"phenomenon": "cohesion", "item": item.src, "choice": item.trg[choice]}
    return Document(doc_id, [first, second], tags)


def _disambiguation_doc(rng, lex, cfg, doc_id: str) -> Document:
    item = _pick(rng, lex.ambiguous)
    sense = int(rng.integers(2))
    topic = _pick(rng, item.topics[sense])
    first = _mention(_Frame.draw(rng, lex, cfg), topic[0], topic[1], "m", "sg")
    second = _mention(_Frame.draw(rng, lex, cfg), item.src, item.trg[sense], "m", "sg")
    tags = {
        "phenomenon": "disambiguation",
        "item": item.src,
        "sense": sense,
        "topic": topic[0],
    }
    return Document(doc_id, [first, second], tags)


def _plain_doc(rng, lex, cfg, doc_id: str) -> Document:
    pairs = []
    for _ in range(2):
        src, trg, gender = _pick(rng, lex.objects)
        number = NUMBERS[int(rng.integers(2))]
        pairs.append(_mention(_Frame.draw(rng, lex, cfg), src, trg, gender, number))
    return Document(doc_id, pairs, {"phenomenon": "none"})


_BUILDERS = {
    "coreference": _coreference_doc,
    "cohesion": _cohesion_doc,
    "disambiguation": _disambiguation_doc,
}


def _document(
    cfg: SynthConfig, lex: SynthLexicon, weights: np.ndarray, n: int
) -> Document:
    rng = cfg.rng(_CORPUS, n)
    doc_id = f"synth{n:06d}"
    if rng.random() >= cfg.proportion:
        return _plain_doc(rng, lex, cfg, doc_id)
    phenomenon = PHENOMENA[int(rng.choice(len(PHENOMENA), p=weights))]
    return _BUILDERS[phenomenon](rng, lex, cfg, doc_id)


def generate_corpus(cfg: SynthConfig, threads: int = 1) -> List[Document]:
    """Generate `cfg.num_documents` two-sentence documents.

    Every document draws from its own generator seeded by (seed, index), so
    the corpus does not depend on `threads`.

    Returns:
        List[Document]: documents tagged with their `phenomenon` and the
        choices made for them
    """
    lex = SynthLexicon.build(cfg)
    weights = np.asarray(cfg.mix, dtype=np.float64)
    weights = weights / weights.sum()

    def _one(n: int) -> Document:
        return _document(cfg, lex, weights, n)

    if threads <= 1:
        docs = [_one(n) for n in range(cfg.num_documents)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            docs = list(pool.map(_one, range(cfg.num_documents)))
    counts = {p: sum(d.tags["phenomenon"] == p for d in docs) for p in PHENOMENA}
    logger.info("Generated %d documents, linked: %s", len(docs), counts)
    return docs


# Test sets


def _coreference_blocks(
    cfg: SynthConfig, lex: SynthLexicon, count: int
) -> List[ContrastiveBlock]:
    if len(lex.nouns) < 3 or (count + 1) // 2 > len(lex.nouns):
        raise ConfigurationError(
            f"{count} coreference blocks need at least "
            f"{max(3, (count + 1) // 2)} nouns, "
            f"the lexicon has {len(lex.nouns)}"
        )
    rng = cfg.rng(_TESTSET, 0)
    order = {number: rng.permutation(len(lex.nouns)) for number in NUMBERS}
    blocks = []
    for b in range(count):
        number = NUMBERS[b % 2]
        i = int(order[number][b // 2])
        noun = lex.nouns[i]
        others = [n for j, n in enumerate(lex.nouns) if j != i]
        frame = _Frame.draw(rng, lex, cfg)
        adjective = _pick(rng, lex.adjectives)
        fill = _fillers(rng, lex, cfg)
        context_src = _mention(frame, noun.src, noun.trg["m"], "m", number).src
        candidates = {g: _pronoun_sentence(adjective, fill, g, number) for g in GENDERS}

        pairs = []
        for correctness in ("correct", "semi-correct"):
            for gender in GENDERS:
                antecedent = noun if correctness == "correct" else _pick(rng, others)
                other = "f" if gender == "m" else "m"
                context = _mention(
                    frame, noun.src, antecedent.trg[gender], gender, number
                )
                pairs.append(
                    ContrastivePair(
                        context_src,
                        context.trg,
                        candidates[gender].src,
                        candidates[gender].trg,
                        candidates[other].trg,
                        {
                            "pronoun_class": f"{gender}.{number}",
                            "correctness": correctness,
                        },
                    )
                )
        block_id = f"coref-{b + 1:03d}"
        blocks.append(ContrastiveBlock(block_id, SetKind.coreference, pairs))
    return blocks


def _coherence_blocks(
    cfg: SynthConfig, lex: SynthLexicon, count: int
) -> List[ContrastiveBlock]:
    n_cohesion, n_disambiguation = (count + 1) // 2, count // 2
    if n_cohesion > len(lex.synonyms) or n_disambiguation > len(lex.ambiguous):
        raise ConfigurationError(
            f"{count} coherence blocks need {n_cohesion} synonym and "
            f"{n_disambiguation} ambiguous items, the lexicon has "
            f"{len(lex.synonyms)} and {len(lex.ambiguous)}"
        )
    rng = cfg.rng(_TESTSET, 1)
    synonyms = rng.permutation(len(lex.synonyms))
    ambiguous = rng.permutation(len(lex.ambiguous))
    blocks = []
    for b in range(count):
        if b % 2 == 0:
            item = lex.synonyms[int(synonyms[b // 2])]
            subject = _pick(rng, lex.subjects)
            fill = _fillers(rng, lex, cfg)
            docs = [_cohesion_pair(subject, item, choice, fill) for choice in (0, 1)]
            phenomenon = "cohesion"
        else:
            item = lex.ambiguous[int(ambiguous[b // 2])]
            frame, current = _Frame.draw(rng, lex, cfg), _Frame.draw(rng, lex, cfg)
            docs = []
            for sense in (0, 1):
                topic = _pick(rng, item.topics[sense])
                docs.append(
                    (
                        _mention(frame, topic[0], topic[1], "m", "sg"),
                        _mention(current, item.src, item.trg[sense], "m", "sg"),
                    )
                )
            phenomenon = "disambiguation"
        pairs = [
            ContrastivePair(
                first.src,
                first.trg,
                second.src,
                second.trg,
                docs[1 - n][1].trg,
                {"phenomenon": phenomenon},
            )
            for n, (first, second) in enumerate(docs)
        ]
        blocks.append(ContrastiveBlock(f"coh-{b + 1:03d}", SetKind.coherence, pairs))
    return blocks


DEFAULT_BLOCKS = {SetKind.coreference: 50, SetKind.coherence: 100}


def generate_testset(
    cfg: SynthConfig, kind: Union[SetKind, str], num_blocks: Optional[int] = None
) -> List[ContrastiveBlock]:
    """Contrastive blocks over the corpus lexicon.

    Coreference blocks alternate singular and plural antecedents. Their
    correct pairs use the noun's own masculine and feminine translations,
    their semi-correct pairs translate the antecedent as another noun of the
    same gender; the pronoun always agrees with the translation given in the
    context. Coherence blocks alternate cohesion and disambiguation items.

    Args:
        cfg (SynthConfig): generator settings, shared with the corpus
        kind (SetKind | str): `coreference` or `coherence`
        num_blocks (int, optional): defaults to 50 coreference or 100
        coherence blocks

    Raises:
        ConfigurationError: the lexicon is too small for distinct blocks
    """
    kind = SetKind(kind)
    count = DEFAULT_BLOCKS[kind] if num_blocks is None else num_blocks
    if count < 1:
        raise ConfigurationError(f"num_blocks must be positive, got {count}")
    lex = SynthLexicon.build(cfg)
    if kind == SetKind.coreference:
        return _coreference_blocks(cfg, lex, count)
    return _coherence_blocks(cfg, lex, count)
