from __future__ import annotations

from pathlib import Path
from typing import Generator, List, Optional, Tuple

from contextnmt.nmtModel import ModelConfig, ModelDims
from contextnmt.nmtStrategies import STRATEGIES, TranslationModel
from contextnmt.nmtText import ContextualExample, Document, SentencePair
from contextnmt.nmtVocab import EOS

toy_corpus = [
    [
        ("the cat sleeps .", "le chat dort ."),
        ("it is black .", "il est noir ."),
    ],
    [
        ("the table is old .", "la table est vieille ."),
        ("it is red .", "elle est rouge ."),
        ("the cat sleeps on it .", "le chat dort dessus ."),
    ],
    [
        ("the dogs bark .", "les chiens aboient ."),
    ],
]
"Three small lowercased documents"

TOY_SRC_VOCAB = 14
TOY_TRG_VOCAB = 16


def toy_documents() -> List[Document]:
    return [
        Document(f"toy{n}", [SentencePair(s, t) for s, t in pairs])
        for n, pairs in enumerate(toy_corpus)
    ]


def toy_dims(emb_dim: int = 4, hidden_dim: int = 3) -> ModelDims:
    return ModelDims(TOY_SRC_VOCAB, TOY_TRG_VOCAB, emb_dim, hidden_dim)


def toy_model(
    strategy: str = "baseline", seed: int = 0, dims: Optional[ModelDims] = None
) -> TranslationModel:
    return TranslationModel(ModelConfig(dims or toy_dims(), strategy, seed=seed))


def toy_example(position: int = 1) -> ContextualExample:
    "Ids stay below both toy vocabulary sizes"
    return ContextualExample(
        [5, 6, EOS], [7, EOS], [8, 9, 10, EOS], [11, 12, EOS], "toy", position
    )


def toy_examples() -> List[ContextualExample]:
    return [
        toy_example(),
        ContextualExample([8, EOS], [11, 13, EOS], [6, 5, EOS], [9, EOS], "toy", 2),
        ContextualExample(
            [9, 10, EOS], [12, EOS], [13, EOS], [14, 15, 7, EOS], "toy", 3
        ),
    ]


def strategy_feeder(
    num_encoders: Optional[int] = None,
) -> Generator[Tuple[str, TranslationModel], None, None]:
    "Every strategy (or those with `num_encoders` encoders) with a tiny model"
    for name, strategy in STRATEGIES.items():
        if num_encoders is None or strategy.num_encoders == num_encoders:
            yield name, toy_model(name)


def write_lines(path: Path, lines: List[str]) -> Path:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path
