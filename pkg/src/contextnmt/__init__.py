__doc__ = """
contextnmt is a small, numpy-only toolkit for **contextual** neural machine
translation: recurrent encoder-decoder models that read the previous sentence
of a document (source side, target side or both) next to the one being
translated, and the contrastive test sets that measure whether they actually
use it.

## How to train a model?

```python
from contextnmt import TrainConfig, TextPipeline, prepare, read_parallel, train
from contextnmt.nmtText import extract_context_pairs

pipeline = prepare(read_parallel("corpus.src", "corpus.trg"), "data/", num_merges=2000)
docs = read_parallel("data/train.src", "data/train.trg")
examples = [
    e
    for d in docs
    for e in extract_context_pairs(d, pipeline.src_vocab, pipeline.trg_vocab)
]
config = TrainConfig(strategy="s-hier-to-2", emb_dim=64, hidden_dim=128)
vocab_sizes = len(pipeline.src_vocab), len(pipeline.trg_vocab)
run = train(config, examples, "runs/s-hier-to-2", *vocab_sizes)
```

Twelve strategies are available, see `contextnmt.nmtStrategies.STRATEGIES`:
`baseline`, the single-encoder concatenations `2-to-2` and `2-to-1`, the
multi-encoder combiners `s-concat`, `s-gate`, `s-hier`, `t-concat`,
`t-gate`, `t-hier`, `s-t-hier`, and the two-sentence decoders `s-hier-to-2`
and `s-t-hier-to-2`.

## How to evaluate it?

```python
from contextnmt import Ensemble, ModelScorer, evaluate, read_testset
from contextnmt.nmtCheckpoint import last_checkpoints

ensemble = Ensemble.from_checkpoints(last_checkpoints("runs/s-hier-to-2"))
report = evaluate(ModelScorer(ensemble, pipeline), read_testset("coreference.yaml"))
print(report.table())
```

## How to translate documents?

```python
from contextnmt.nmtDecoding import translate_document

results = translate_document(ensemble, pipeline, doc, beam_size=12, mode="stream")
print([r.text for r in results])
```

Everything is also available from the `contextnmt` command line.
"""
from contextnmt.nmtCheckpoint import Checkpoint
from contextnmt.nmtContrastive import (
    ContrastiveBlock,
    ContrastivePair,
    EvalReport,
    ModelScorer,
    evaluate,
    read_testset,
    validate_testset,
)
from contextnmt.nmtDecoding import beam_search, translate_document
from contextnmt.nmtStrategies import STRATEGIES, TranslationModel, get_strategy
from contextnmt.nmtText import TextPipeline, prepare, read_parallel
from contextnmt.nmtTraining import Ensemble, TrainConfig, train

__all__ = [
    "Checkpoint",
    "ContrastiveBlock",
    "ContrastivePair",
    "Ensemble",
    "EvalReport",
    "ModelScorer",
    "STRATEGIES",
    "TextPipeline",
    "TrainConfig",
    "TranslationModel",
    "beam_search",
    "evaluate",
    "get_strategy",
    "prepare",
    "read_parallel",
    "read_testset",
    "train",
    "translate_document",
    "validate_testset",
]


__pdoc__ = {}
__pdoc__["contextnmt.contextnmt"] = False
__pdoc__["abc.ABC"] = False
__pdoc__["enum.Enum"] = False
