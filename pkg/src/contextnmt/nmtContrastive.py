__doc__ = """
Contrastive test sets: reading, validation, scoring and reports.

A test set is a sequence of blocks. Every block holds contrastive pairs
sharing a source sentence; each pair offers a correct and an incorrect
translation of that sentence, and a model gets the pair right when it scores
the correct one strictly higher.

Blocks are laid out so that a model ignoring the previous sentence can only
get half of them right:

* coreference blocks hold four pairs, two per antecedent gender, two of them
  semi-correct, and only two distinct translations of the current sentence,
  each correct as often as it is incorrect;
* coherence blocks hold two pairs whose correct and incorrect translations
  are swapped.

The native file format is YAML, one document per block:

```yaml
block_id: coref-001
kind: coreference
pairs:
- context_src: ...
  context_trg: ...
  src: ...
  trg_correct: ...
  trg_incorrect: ...
  tags: {pronoun_class: f.sg, correctness: correct}
```

Other formats can be read after `register_importer`.
"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import (
    Callable,
    Dict,
    Iterable,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import yaml
from tqdm import tqdm

from contextnmt.nmtStrategies import TranslationModel, make_batch
from contextnmt.nmtText import ContextualExample, TextPipeline
from contextnmt.nmtTraining import Ensemble
from contextnmt.nmtUtils import ConfigurationError, ContractError

logger = logging.getLogger(__name__)

__all__ = [
    "ContrastiveBlock",
    "ContrastivePair",
    "EvalReport",
    "ModelScorer",
    "SetKind",
    "TestSet",
    "evaluate",
    "read_testset",
    "register_importer",
    "score_candidate",
    "validate_testset",
    "write_testset",
]

PRONOUN_CLASSES = ("m.sg", "f.sg", "m.pl", "f.pl")
CORRECTNESS = ("correct", "semi-correct")
PAIR_FIELDS = ("context_src", "context_trg", "src", "trg_correct", "trg_incorrect")


class SetKind(Enum):
    coreference = "coreference"
    coherence = "coherence"


@dataclass(frozen=True)
class ContrastivePair:
    """
    A source sentence in context with two candidate translations.
    """

    context_src: str
    context_trg: str
    src: str
    trg_correct: str
    trg_incorrect: str
    tags: Dict[str, str] = field(default_factory=dict, hash=False)
    "`pronoun_class` and `correctness` for coreference pairs"

    def candidate(self, side: str) -> str:
        if side == "correct":
            return self.trg_correct
        if side == "incorrect":
            return self.trg_incorrect
        raise ValueError(f"side must be 'correct' or 'incorrect', got {side!r}")

    @property
    def gender(self) -> Optional[str]:
        "Grammatical gender of the correct pronoun, from its class tag"
        pronoun_class = self.tags.get("pronoun_class")
        return pronoun_class.split(".")[0] if pronoun_class else None

    def to_dict(self) -> dict:
        data = {name: getattr(self, name) for name in PAIR_FIELDS}
        data["tags"] = dict(self.tags)
        return data

    @staticmethod
    def from_dict(data: dict) -> "ContrastivePair":
        if not isinstance(data, dict):
            raise ContractError(
                f"A contrastive pair must be a mapping, got {type(data)}"
            )
        missing = [name for name in PAIR_FIELDS if name not in data]
        if missing:
            raise ContractError(f"Contrastive pair misses {', '.join(missing)}")
        tags = data.get("tags") or {}
        if not isinstance(tags, dict):
            raise ContractError("Contrastive pair tags must be a mapping")
        values = ("" if data[name] is None else str(data[name]) for name in PAIR_FIELDS)
        return ContrastivePair(
            *values,
            tags={str(k): str(v) for k, v in tags.items()},
        )


class ContrastiveBlock:
    """
    Contrastive pairs sharing one source sentence.
    """

    def __init__(
        self, block_id: str, kind: SetKind, pairs: Iterable[ContrastivePair] = ()
    ) -> None:
        self.block_id = str(block_id)
        self.kind = SetKind(kind)
        self.pairs: List[ContrastivePair] = list(pairs)

    def to_dict(self) -> dict:
        return {
            "block_id": self.block_id,
            "kind": self.kind.value,
            "pairs": [p.to_dict() for p in self.pairs],
        }

    @staticmethod
    def from_dict(data: dict) -> "ContrastiveBlock":
        if not isinstance(data, dict):
            raise ContractError(f"A block must be a mapping, got {type(data)}")
        for key in ("block_id", "kind", "pairs"):
            if key not in data:
                raise ContractError(f"Block misses {key}")
        try:
            kind = SetKind(data["kind"])
        except ValueError:
            raise ContractError(
                f"Block {data['block_id']} has unknown kind {data['kind']!r}"
            )
        if not isinstance(data["pairs"], list):
            raise ContractError(f"Block {data['block_id']} pairs must be a list")
        pairs = [ContrastivePair.from_dict(p) for p in data["pairs"]]
        return ContrastiveBlock(data["block_id"], kind, pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, item: int) -> ContrastivePair:
        if isinstance(item, int):
            return self.pairs[item]
        raise TypeError(f"Invalid key type: {type(item)}")

    def __iter__(self) -> Iterator[ContrastivePair]:
        return iter(self.pairs)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContrastiveBlock):
            return False
        return (
            self.block_id == other.block_id
            and self.kind == other.kind
            and self.pairs == other.pairs
        )

    def __repr__(self) -> str:
        return (
            f"<ContrastiveBlock id={self.block_id} kind={self.kind.value} "
            f"nPairs={len(self)}>"
        )


class TestSet:
    """
    An ordered collection of blocks, indexable by position or block id.
    """

    __test__ = False

    def __init__(self, blocks: Iterable[ContrastiveBlock] = ()) -> None:
        self.blocks: List[ContrastiveBlock] = list(blocks)

    @property
    def kinds(self) -> List[SetKind]:
        return sorted({b.kind for b in self.blocks}, key=lambda k: k.value)

    @property
    def pairs(self) -> List[ContrastivePair]:
        return [p for b in self.blocks for p in b]

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, item: Union[int, str]) -> ContrastiveBlock:
        if isinstance(item, int):
            return self.blocks[item]
        elif isinstance(item, str):
            try:
                return next(b for b in self.blocks if b.block_id == item)
            except StopIteration:
                raise KeyError(f"Block {item} not found")
        raise TypeError(f"Invalid key type: {type(item)}")

    def __iter__(self) -> Iterator[ContrastiveBlock]:
        return iter(self.blocks)

    def __contains__(self, value: Union[ContrastiveBlock, str]) -> bool:
        if isinstance(value, ContrastiveBlock):
            return value in self.blocks
        elif isinstance(value, str):
            return any(b.block_id == value for b in self.blocks)
        raise TypeError(f"Invalid key type: {type(value)}")

    def __eq__(self, other) -> bool:
        return isinstance(other, TestSet) and self.blocks == other.blocks

    def __repr__(self) -> str:
        kinds = ",".join(k.value for k in self.kinds)
        return f"<TestSet nBlocks={len(self)} nPairs={len(self.pairs)} kinds={kinds}>"


# Files

Importer = Callable[[Path], Iterable[ContrastiveBlock]]

_IMPORTERS: Dict[str, Importer] = {}


def register_importer(name: str, importer: Importer) -> None:
    """Make a test set format readable by `read_testset(path, format=name)`.

    Args:
        name (str): format name
        importer (Callable[[Path], Iterable[ContrastiveBlock]]): reader
    """
    _IMPORTERS[name] = importer


def _read_yaml(path: Path) -> List[ContrastiveBlock]:
    with path.open(encoding="utf-8") as f:
        try:
            records = [r for r in yaml.safe_load_all(f) if r is not None]
        except yaml.YAMLError as e:
            raise ContractError(f"{path} is not valid YAML: {e}")
    return [ContrastiveBlock.from_dict(r) for r in records]


register_importer("yaml", _read_yaml)


def read_testset(path: Union[Path, str], format: str = "yaml") -> TestSet:
    """Read a test set file.

    Raises:
        ConfigurationError: unknown format
        ContractError: malformed records
    """
    try:
        importer = _IMPORTERS[format]
    except KeyError:
        raise ConfigurationError(
            f"Unknown test set format {format!r}, "
            f"expected one of {', '.join(_IMPORTERS)}"
        )
    return TestSet(importer(Path(path)))


def write_testset(blocks: Iterable[ContrastiveBlock], path: Union[Path, str]) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        yaml.safe_dump_all(
            [b.to_dict() for b in blocks], f, allow_unicode=True, sort_keys=False
        )


# Validation


def _validate_pairs(block: ContrastiveBlock) -> List[str]:
    problems = []
    for n, pair in enumerate(block):
        where = f"block {block.block_id} pair {n}"
        empty = [name for name in PAIR_FIELDS if not getattr(pair, name).strip()]
        if empty:
            problems.append(f"{where}: empty {', '.join(empty)}")
        if pair.trg_correct == pair.trg_incorrect:
            problems.append(f"{where}: identical correct and incorrect translations")
    if len({p.src for p in block}) > 1:
        problems.append(f"block {block.block_id}: pairs differ in source sentence")
    return problems


def _validate_coreference(block: ContrastiveBlock) -> List[str]:
    name = f"block {block.block_id}"
    problems = []
    if len(block) != 4:
        problems.append(f"{name}: coreference blocks hold 4 pairs, found {len(block)}")

    classes = [p.tags.get("pronoun_class") for p in block]
    bad_classes = [c for c in classes if c not in PRONOUN_CLASSES]
    if bad_classes:
        problems.append(f"{name}: invalid pronoun_class tags {bad_classes}")
    correctness = [p.tags.get("correctness") for p in block]
    bad_correctness = [c for c in correctness if c not in CORRECTNESS]
    if bad_correctness:
        problems.append(f"{name}: invalid correctness tags {bad_correctness}")
    elif correctness.count("semi-correct") != 2:
        semi = correctness.count("semi-correct")
        problems.append(f"{name}: expected 2 semi-correct pairs, found {semi}")
    if not bad_classes:
        genders = Counter(p.gender for p in block)
        if genders["m"] != 2 or genders["f"] != 2:
            problems.append(
                f"{name}: expected 2 pairs per antecedent gender, found {dict(genders)}"
            )

    candidates = {t for p in block for t in (p.trg_correct, p.trg_incorrect)}
    if len(candidates) != 2:
        problems.append(
            f"{name}: expected 2 distinct translations of the current sentence, "
            f"found {len(candidates)}"
        )
    as_correct = Counter(p.trg_correct for p in block)
    as_incorrect = Counter(p.trg_incorrect for p in block)
    if any(as_correct[c] != as_incorrect[c] for c in candidates):
        problems.append(
            f"{name}: every translation must be correct as often as it is incorrect"
        )
    return problems


def _validate_coherence(block: ContrastiveBlock) -> List[str]:
    name = f"block {block.block_id}"
    if len(block) != 2:
        return [f"{name}: coherence blocks hold 2 pairs, found {len(block)}"]
    a, b = block.pairs
    if a.trg_incorrect != b.trg_correct or b.trg_incorrect != a.trg_correct:
        return [
            f"{name}: the incorrect translation of each pair must be "
            "the other's correct one"
        ]
    return []


def validate_testset(blocks: Iterable[ContrastiveBlock]) -> List[str]:
    """Check the structure that makes a context-blind model score exactly 50%.

    Returns:
        List[str]: human readable violations, empty for a well-formed set
    """
    problems: List[str] = []
    seen = set()
    for block in blocks:
        if block.block_id in seen:
            problems.append(f"block {block.block_id}: duplicate block id")
        seen.add(block.block_id)
        problems.extend(_validate_pairs(block))
        if block.kind == SetKind.coreference:
            problems.extend(_validate_coreference(block))
        else:
            problems.extend(_validate_coherence(block))
    return problems


# Scoring

PairScorer = Callable[[ContrastivePair], Tuple[float, float]]
"Scores of the correct and the incorrect translation of a pair"


def _as_ensemble(model: Union[Ensemble, TranslationModel]) -> Ensemble:
    return model if isinstance(model, Ensemble) else Ensemble([model])


def _examples(pipeline: TextPipeline, pair: ContrastivePair, sides: Sequence[str]):
    aux_src = pipeline.encode(pair.context_src, "src")
    aux_trg = pipeline.encode(pair.context_trg, "trg")
    src = pipeline.encode(pair.src, "src")
    candidates = [pipeline.encode(pair.candidate(s), "trg") for s in sides]
    return [ContextualExample(aux_src, aux_trg, src, trg) for trg in candidates]


def _score(
    ensemble: Ensemble,
    examples: Sequence[ContextualExample],
    include_prefix: bool,
) -> List[float]:
    built = [ensemble.build(e) for e in examples]
    batch = make_batch(built)
    logprobs = ensemble.token_logprobs(batch)
    if not include_prefix:
        for row, b in enumerate(built):
            logprobs[row, : b.prefix_length] = 0.0
    return [float(s) for s in logprobs.sum(axis=1)]


def score_candidate(
    model: Union[Ensemble, TranslationModel],
    pipeline: TextPipeline,
    pair: ContrastivePair,
    side: str = "correct",
    include_prefix: bool = True,
) -> float:
    """Teacher-forced log-probability of one translation of a pair.

    Strategies producing two sentences score the previous translation, CONCAT
    and the candidate. The previous translation is shared by both candidates,
    so leaving its tokens out (`include_prefix=False`) never changes which
    candidate wins. Scores are not length normalized.

    Args:
        model (Ensemble | TranslationModel): the scoring model
        pipeline (TextPipeline): preprocessing of the model's training data
        pair (ContrastivePair): the pair
        side (str): `correct` or `incorrect`
        include_prefix (bool, optional): include the previous translation's
        tokens. Defaults to True.

    Returns:
        float: sum of token log-probabilities, EOS included
    """
    ensemble = _as_ensemble(model)
    return _score(ensemble, _examples(pipeline, pair, [side]), include_prefix)[0]


class ModelScorer:
    """
    Scores both translations of a pair with a model, in one batch.
    """

    def __init__(
        self,
        model: Union[Ensemble, TranslationModel],
        pipeline: TextPipeline,
        include_prefix: bool = True,
    ) -> None:
        self.ensemble = _as_ensemble(model)
        self.pipeline = pipeline
        self.include_prefix = include_prefix

    def __call__(self, pair: ContrastivePair) -> Tuple[float, float]:
        examples = _examples(self.pipeline, pair, ["correct", "incorrect"])
        correct, incorrect = _score(self.ensemble, examples, self.include_prefix)
        return correct, incorrect


# Evaluation


@dataclass
class PairResult:
    correct_score: float
    incorrect_score: float
    tags: Dict[str, str] = field(default_factory=dict)

    @property
    def right(self) -> bool:
        "Ties count as wrong"
        return self.correct_score > self.incorrect_score


@dataclass
class BlockResult:
    block_id: str
    kind: SetKind
    pairs: List[PairResult]

    @property
    def num_right(self) -> int:
        return sum(p.right for p in self.pairs)


def _percent(outcomes: Sequence[bool]) -> Optional[float]:
    return 100.0 * sum(outcomes) / len(outcomes) if outcomes else None


class EvalReport:
    """
    Accuracies of a model on one or more test sets, in % of pairs scored
    right, with the breakdowns by pronoun class, by correct versus
    semi-correct examples and, for coherence sets, by phenomenon.
    """

    COLUMNS = ("all",) + PRONOUN_CLASSES + ("corr.", "semi")

    def __init__(self, blocks: Sequence[BlockResult]) -> None:
        self.blocks = list(blocks)

    def _pairs(self, kind: Optional[SetKind] = None) -> List[PairResult]:
        blocks = [b for b in self.blocks if kind is None or b.kind == kind]
        return [p for b in blocks for p in b.pairs]

    def _by_tag(self, tag: str, kind: Optional[SetKind] = None) -> Dict[str, float]:
        groups: Dict[str, List[bool]] = {}
        for p in self._pairs(kind):
            if tag in p.tags:
                groups.setdefault(p.tags[tag], []).append(p.right)
        return {k: _percent(v) for k, v in sorted(groups.items())}

    @property
    def overall(self) -> Optional[float]:
        return _percent([p.right for p in self._pairs()])

    @property
    def by_class(self) -> Dict[str, float]:
        return self._by_tag("pronoun_class")

    @property
    def by_correctness(self) -> Dict[str, float]:
        return self._by_tag("correctness")

    @property
    def by_phenomenon(self) -> Dict[str, float]:
        return self._by_tag("phenomenon")

    @property
    def kinds(self) -> List[SetKind]:
        return sorted({b.kind for b in self.blocks}, key=lambda k: k.value)

    def accuracy(self, kind: SetKind) -> Optional[float]:
        return _percent([p.right for p in self._pairs(kind)])

    def row(self, kind: SetKind) -> Dict[str, Optional[float]]:
        "The table row of one kind of test set; coherence fills only `all`"
        row: Dict[str, Optional[float]] = {c: None for c in self.COLUMNS}
        row["all"] = self.accuracy(kind)
        if kind == SetKind.coreference:
            classes = self._by_tag("pronoun_class", kind)
            correctness = self._by_tag("correctness", kind)
            for c in PRONOUN_CLASSES:
                row[c] = classes.get(c)
            row["corr."] = correctness.get("correct")
            row["semi"] = correctness.get("semi-correct")
        return row

    def table(self) -> str:
        "Human readable table, one row per kind of test set"
        header = f"{'set':<12}" + "".join(f"{c:>8}" for c in self.COLUMNS)
        lines = [header, "-" * len(header)]
        for kind in self.kinds:
            row = self.row(kind)
            cells = "".join(
                f"{'-':>8}" if row[c] is None else f"{row[c]:>8.1f}"
                for c in self.COLUMNS
            )
            lines.append(f"{kind.value:<12}{cells}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "num_pairs": len(self._pairs()),
            "sets": {k.value: self.row(k) for k in self.kinds},
            "by_class": self.by_class,
            "by_correctness": self.by_correctness,
            "by_phenomenon": self.by_phenomenon,
            "blocks": [
                {
                    "block_id": b.block_id,
                    "kind": b.kind.value,
                    "right": b.num_right,
                    "scores": [[p.correct_score, p.incorrect_score] for p in b.pairs],
                }
                for b in self.blocks
            ],
        }

    def save(self, path: Union[Path, str]) -> Path:
        "Write the YAML report"
        path = Path(path)
        with path.open("w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, allow_unicode=True, sort_keys=False)
        return path

    def __repr__(self) -> str:
        overall = "-" if self.overall is None else f"{self.overall:.1f}%"
        return f"<EvalReport nBlocks={len(self.blocks)} overall={overall}>"


def evaluate(
    scorer: PairScorer,
    blocks: Iterable[ContrastiveBlock],
    threads: int = 1,
    progress: bool = False,
) -> EvalReport:
    """Score every pair and aggregate.

    A pair is right when its correct translation scores strictly higher than
    its incorrect one.

    Args:
        scorer (PairScorer): scores of both translations of a pair, e.g. a
        `ModelScorer`
        blocks (Iterable[ContrastiveBlock]): the test set
        threads (int, optional): pairs scored in parallel. Defaults to 1.
        progress (bool, optional): show a progress bar. Defaults to False.
    """
    blocks = list(blocks)
    pairs = [p for b in blocks for p in b]

    def _one(pair: ContrastivePair) -> PairResult:
        correct, incorrect = scorer(pair)
        return PairResult(float(correct), float(incorrect), dict(pair.tags))

    bar = tqdm(total=len(pairs), desc="scoring", disable=not progress)
    if threads <= 1:
        results = []
        for pair in pairs:
            results.append(_one(pair))
            bar.update()
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = []
            for r in pool.map(_one, pairs):
                results.append(r)
                bar.update()
    bar.close()

    out, n = [], 0
    for block in blocks:
        out.append(BlockResult(block.block_id, block.kind, results[n : n + len(block)]))
        n += len(block)
    report = EvalReport(out)
    logger.info("Contrastive accuracy %s over %d pairs", report.overall, len(pairs))
    return report


def accuracy_hook(
    pipeline: TextPipeline, testset: Sequence[ContrastiveBlock]
) -> Callable[[TranslationModel, int], Dict[str, object]]:
    """A training checkpoint hook recording contrastive accuracy.

    Returns:
        Callable: for `train(on_checkpoint=...)`
    """
    testset = list(testset)

    def _hook(model: TranslationModel, updates: int) -> Dict[str, object]:
        report = evaluate(ModelScorer(model, pipeline), testset)
        return {"contrastive": {k.value: report.accuracy(k) for k in report.kinds}}

    return _hook
