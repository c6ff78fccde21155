__doc__ = """
Translation: beam search, extraction of the current sentence from
two-sentence outputs, document translation and attention reports.

Beam search talks to a `Scorer`, anything with

* `initial_state()`: the decoder state for a single hypothesis,
* `step(state, prev_ids)`: log-probabilities [n×V] of the next token for the
  n live hypotheses, the new state and an attention record,
* `select(state, rows)`: the state restricted to (and reordered by) rows.

`EnsembleScorer` adapts an `Ensemble` (or a single model) to it.

Documents are translated sentence by sentence. Strategies reading the
previous target take it, depending on `mode`, from the running system's own
previous output (`stream`), from supplied baseline translations
(`baseline`), or from the reference (`reference`).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import yaml

from contextnmt.nmtStrategies import BuiltExample, make_batch
from contextnmt.nmtText import EMPTY_CONTEXT, ContextualExample, Document, TextPipeline
from contextnmt.nmtTraining import Ensemble
from contextnmt.nmtUtils import ConfigurationError, ContractError, split_at_first
from contextnmt.nmtVocab import CONCAT, EOS

logger = logging.getLogger(__name__)

__all__ = [
    "MODES",
    "EnsembleScorer",
    "Hypothesis",
    "TranslationResult",
    "beam_search",
    "default_max_out_len",
    "export_attention",
    "extract_current",
    "greedy_decode",
    "translate_document",
    "translate_documents",
    "translate_example",
    "write_attention_report",
    "write_translations",
]

MODES = ("stream", "baseline", "reference")
"Sources of the previous target sentence when translating"


class Scorer(Protocol):
    def initial_state(self) -> Any:
        ...

    def step(
        self, state: Any, prev_ids: Optional[np.ndarray]
    ) -> Tuple[np.ndarray, Any, dict]:
        ...

    def select(self, state: Any, rows: Sequence[int]) -> Any:
        ...


class EnsembleScorer:
    "Beam search scorer over one built input"

    def __init__(self, ensemble: Ensemble, built: BuiltExample) -> None:
        self.ensemble = ensemble
        self.built = BuiltExample(built.inputs)

    def initial_state(self):
        return self.ensemble.start(make_batch([self.built]))

    def step(self, state, prev_ids):
        return self.ensemble.step(state, prev_ids)

    def select(self, state, rows):
        return self.ensemble.select(state, rows)


@dataclass
class Hypothesis:
    """
    A scored output sequence.
    """

    tokens: List[int]
    "Output ids, EOS included when the hypothesis finished on it"
    logprob: float = 0.0
    "Sum of the chosen per-step log-probabilities"
    step_logprobs: List[float] = field(default_factory=list)
    attention: List[dict] = field(default_factory=list)
    "Per step: `encoders` (one weight row per encoder) and `beta` (or None)"

    @property
    def score(self) -> float:
        "Length-normalized log-probability used for the final ranking"
        return self.logprob / max(len(self.tokens), 1)

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS

    def __len__(self) -> int:
        return len(self.tokens)


def _attention_row(record: dict, row: int) -> dict:
    beta = record.get("beta")
    return {
        "encoders": [np.asarray(a)[row].copy() for a in record.get("encoders", [])],
        "beta": None if beta is None else np.asarray(beta)[row].copy(),
    }


def beam_search(
    scorer: Scorer, beam_size: int = 12, max_out_len: int = 50, n_best: int = 1
) -> Union[Hypothesis, List[Hypothesis]]:
    """Length-synchronous beam search.

    At every step the best `beam_size − finished` expansions survive;
    expansions ending in EOS are finished. Search stops when `beam_size`
    hypotheses are finished or none is live; at `max_out_len` the live ones
    are finished as they are. Finished hypotheses are ranked by
    log-probability divided by length. Equal scores are ordered by token id.

    Args:
        scorer (Scorer): model access
        beam_size (int): beam width, 1 is greedy decoding
        max_out_len (int): maximum output length, EOS included
        n_best (int): return the n best instead of the best

    Raises:
        ValueError: beam_size or max_out_len below 1
        ContractError: every expansion has a non-finite score
    """
    if beam_size < 1:
        raise ValueError(f"beam_size must be >= 1, got {beam_size}")
    if max_out_len < 1:
        raise ValueError(f"max_out_len must be >= 1, got {max_out_len}")

    state = scorer.initial_state()
    live = [Hypothesis([])]
    finished: List[Hypothesis] = []
    prev: Optional[np.ndarray] = None

    for _ in range(max_out_len):
        logprobs, state, attention = scorer.step(state, prev)
        logprobs = np.asarray(logprobs, dtype=np.float64)
        vocab = logprobs.shape[1]
        totals = np.array([h.logprob for h in live])[:, None] + logprobs
        flat = totals.reshape(-1)
        rows = np.repeat(np.arange(len(live)), vocab)
        tokens = np.tile(np.arange(vocab), len(live))
        order = np.lexsort((rows, tokens, -flat))
        order = order[np.isfinite(flat[order])][: beam_size - len(finished)]

        survivors, keep_rows = [], []
        for i in order:
            row, token = int(rows[i]), int(tokens[i])
            parent = live[row]
            hyp = Hypothesis(
                parent.tokens + [token],
                parent.logprob + float(logprobs[row, token]),
                parent.step_logprobs + [float(logprobs[row, token])],
                parent.attention + [_attention_row(attention, row)],
            )
            if token == EOS:
                finished.append(hyp)
            else:
                survivors.append(hyp)
                keep_rows.append(row)

        if not survivors or len(finished) >= beam_size:
            live = []
            break
        live = survivors
        state = scorer.select(state, keep_rows)
        prev = np.array([h.tokens[-1] for h in live], dtype=np.int64)

    finished.extend(live)
    if not finished:
        raise ContractError("No hypothesis with a finite score")
    ranked = sorted(finished, key=lambda h: (-h.score, h.tokens))
    return ranked[:n_best] if n_best > 1 else ranked[0]


def greedy_decode(scorer: Scorer, max_out_len: int = 50) -> Hypothesis:
    return beam_search(scorer, 1, max_out_len)


def default_max_out_len(input_length: int) -> int:
    return 3 * input_length + 5


def extract_current(tokens: Sequence[int]) -> List[int]:
    "Tokens after the first CONCAT, or all of them when there is none"
    _, suffix, _ = split_at_first(tokens, CONCAT)
    return suffix


def _strip_eos(tokens: Sequence[int]) -> List[int]:
    tokens = list(tokens)
    return tokens[:-1] if tokens and tokens[-1] == EOS else tokens


@dataclass
class TranslationResult:
    hypothesis: Hypothesis
    tokens: List[int]
    "The current sentence's ids, EOS excluded"
    text: str
    example: ContextualExample
    "Input actually used, auxiliary sentences included"


def translate_example(
    ensemble: Ensemble,
    example: ContextualExample,
    beam_size: int = 12,
    max_out_len: Optional[int] = None,
) -> Tuple[Hypothesis, List[int]]:
    "Decode one example; returns the hypothesis and the extracted current sentence"
    source_only = ContextualExample(example.aux_src, example.aux_trg, example.src, None)
    built = ensemble.build(source_only)
    limit = max_out_len or default_max_out_len(len(built.inputs[0]))
    hyp = beam_search(EnsembleScorer(ensemble, built), beam_size, limit)
    tokens = _strip_eos(hyp.tokens)
    if ensemble.strategy.num_outputs == 2:
        tokens = extract_current(tokens)
    return hyp, tokens


def translate_document(
    ensemble: Ensemble,
    pipeline: TextPipeline,
    doc: Document,
    beam_size: int = 12,
    mode: str = "stream",
    baseline: Optional[Sequence[str]] = None,
    max_out_len: Optional[int] = None,
) -> List[TranslationResult]:
    """Translate a raw document in order.

    Raises:
        ConfigurationError: unknown mode, `baseline` mode without baseline
        translations, or `reference` mode on a document without targets
    """
    if mode not in MODES:
        raise ConfigurationError(f"Unknown mode {mode}, expected one of {MODES}")
    if mode == "baseline" and (baseline is None or len(baseline) < len(doc)):
        raise ConfigurationError(
            "baseline mode needs one baseline translation per sentence"
        )

    results: List[TranslationResult] = []
    prev_src = list(EMPTY_CONTEXT)
    for i, pair in enumerate(doc.pairs):
        src = pipeline.encode(pair.src, "src")
        if i == 0:
            aux_trg = list(EMPTY_CONTEXT)
        elif mode == "stream":
            previous = results[-1].tokens
            aux_trg = previous + [EOS] if previous else list(EMPTY_CONTEXT)
        elif mode == "baseline":
            aux_trg = pipeline.encode(baseline[i - 1], "trg")
        else:
            if not doc.pairs[i - 1].trg:
                raise ConfigurationError("reference mode needs target sentences")
            aux_trg = pipeline.encode(doc.pairs[i - 1].trg, "trg")
        example = ContextualExample(prev_src, aux_trg, src, None, doc.doc_id, i)
        hyp, tokens = translate_example(ensemble, example, beam_size, max_out_len)
        text = pipeline.decode(tokens + [EOS])
        results.append(TranslationResult(hyp, tokens, text, example))
        prev_src = src
    logger.debug("Translated %s, %d sentences, mode %s", doc.doc_id, len(doc), mode)
    return results


def translate_documents(
    ensemble: Ensemble,
    pipeline: TextPipeline,
    docs: Sequence[Document],
    beam_size: int = 12,
    mode: str = "stream",
    baselines: Optional[Sequence[Sequence[str]]] = None,
    threads: int = 1,
) -> List[List[TranslationResult]]:
    "Translate documents, in parallel across documents when threads > 1"
    baselines = baselines if baselines is not None else [None] * len(docs)

    def _one(args):
        doc, base = args
        return translate_document(ensemble, pipeline, doc, beam_size, mode, base)

    if threads <= 1:
        return [_one(a) for a in zip(docs, baselines)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_one, zip(docs, baselines)))


def write_translations(
    results: Sequence[Sequence[TranslationResult]], path: Union[Path, str]
) -> None:
    "One sentence per line, documents separated by a blank line"
    with Path(path).open("w", encoding="utf-8") as f:
        for n, doc in enumerate(results):
            if n:
                f.write("\n")
            for r in doc:
                f.write(r.text + "\n")


def export_attention(
    hyp: Hypothesis,
    inputs: Optional[Sequence[Sequence[str]]] = None,
    outputs: Optional[Sequence[str]] = None,
) -> Dict[str, object]:
    """Attention of a hypothesis as plain data, one record per output step.

    Args:
        hyp (Hypothesis): a decoded hypothesis
        inputs (Sequence[Sequence[str]], optional): input tokens per encoder
        outputs (Sequence[str], optional): output tokens

    Returns:
        dict: `inputs`, `outputs` and `steps`, each step holding the weight
        row of every encoder and, for hierarchical models, the encoder
        weights `beta`
    """
    steps = []
    for i, record in enumerate(hyp.attention):
        step = {
            "step": i,
            "token": outputs[i] if outputs is not None else int(hyp.tokens[i]),
            "encoders": [[float(w) for w in row] for row in record["encoders"]],
        }
        if record.get("beta") is not None:
            step["beta"] = [float(b) for b in record["beta"]]
        steps.append(step)
    return {
        "inputs": [list(seq) for seq in inputs] if inputs is not None else None,
        "outputs": (
            list(outputs) if outputs is not None else [int(t) for t in hyp.tokens]
        ),
        "logprob": float(hyp.logprob),
        "steps": steps,
    }


def write_attention_report(reports: Sequence[dict], path: Union[Path, str]) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        yaml.safe_dump_all(list(reports), f, allow_unicode=True, sort_keys=False)
