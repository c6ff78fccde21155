import itertools
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

import numpy as np
import yaml

from contextnmt.nmtDecoding import (
    Hypothesis,
    beam_search,
    default_max_out_len,
    export_attention,
    extract_current,
    greedy_decode,
    translate_document,
    translate_documents,
    write_attention_report,
    write_translations,
)
from contextnmt.nmtModel import ModelConfig, ModelDims
from contextnmt.nmtStrategies import TranslationModel
from contextnmt.nmtText import EMPTY_CONTEXT, Document, SentencePair, prepare
from contextnmt.nmtTraining import Ensemble
from contextnmt.nmtUtils import ConfigurationError, ContractError
from contextnmt.nmtVocab import CONCAT, EOS
from tests import toy_documents


class MarkovScorer:
    "Next-token distributions that depend on the previous token only"

    def __init__(self, start, table):
        self.start = np.asarray(start, dtype=np.float64)
        self.table = np.asarray(table, dtype=np.float64)

    def initial_state(self):
        return None

    def step(self, state, prev_ids):
        probs = self.start[None] if prev_ids is None else self.table[prev_ids]
        with np.errstate(divide="ignore"):
            logprobs = np.log(probs)
        attention = {"encoders": [np.full((len(probs), 2), 0.5)], "beta": None}
        return logprobs, state, attention

    def select(self, state, rows):
        return state


def trap_scorer() -> MarkovScorer:
    "Greedy takes 3 first and ends worse than 4 EOS"
    start = [0, 0, 0, 0.6, 0.4]
    table = [
        [0.2, 0.2, 0.2, 0.2, 0.2],
        [0, 0, 0.6, 0.4, 0],
        [0.2, 0.2, 0.2, 0.2, 0.2],
        [0, 0.4, 0.3, 0, 0.3],
        [0, 0.05, 0.9, 0.05, 0],
    ]
    return MarkovScorer(start, table)


def brute_force(scorer: MarkovScorer, max_out_len: int):
    "Best sequence by length-normalized log-probability over all candidates"
    vocab = len(scorer.start)
    best = None
    for length in range(1, max_out_len + 1):
        for tokens in itertools.product(range(vocab), repeat=length):
            if EOS in tokens[:-1]:
                continue
            if tokens[-1] != EOS and length < max_out_len:
                continue
            probs = [scorer.start[tokens[0]]] + [
                scorer.table[a, b] for a, b in zip(tokens, tokens[1:])
            ]
            if min(probs) == 0:
                continue
            score = np.sum(np.log(probs)) / length
            if best is None or score > best[0]:
                best = (score, list(tokens))
    return best


class TestBeamSearch(TestCase):
    def test_beam_beats_greedy(self):
        scorer = trap_scorer()
        self.assertEqual(greedy_decode(scorer, 3).tokens, [3, 1, EOS])
        best = beam_search(scorer, beam_size=2, max_out_len=3)
        self.assertEqual(best.tokens, [4, EOS])
        self.assertAlmostEqual(best.logprob, np.log(0.36))
        self.assertAlmostEqual(best.score, np.log(0.36) / 2)
        self.assertTrue(best.finished)
        self.assertEqual(len(best.attention), 2)

    def test_n_best(self):
        ranked = beam_search(trap_scorer(), beam_size=2, max_out_len=3, n_best=2)
        self.assertEqual([h.tokens for h in ranked], [[4, EOS], [3, 1, EOS]])
        np.testing.assert_allclose(ranked[1].step_logprobs, np.log([0.6, 0.4, 0.6]))

    def test_exhaustive(self):
        "A beam wide enough for every candidate finds the brute force optimum"
        rng = np.random.default_rng(7)
        for _ in range(5):
            table = rng.random((5, 5))
            table[:, 0] = 0
            table /= table.sum(axis=1, keepdims=True)
            start = rng.random(5)
            start[0] = 0
            start /= start.sum()
            scorer = MarkovScorer(start, table)
            score, tokens = brute_force(scorer, 3)
            best = beam_search(scorer, beam_size=100, max_out_len=3)
            self.assertEqual(best.tokens, tokens)
            self.assertAlmostEqual(best.score, score)

    def test_unfinished_at_limit(self):
        scorer = MarkovScorer([0, 0, 0, 1.0, 0], np.tile([0, 0, 0, 1.0, 0], (5, 1)))
        best = beam_search(scorer, beam_size=3, max_out_len=4)
        self.assertEqual(best.tokens, [3, 3, 3, 3])
        self.assertFalse(best.finished)

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            beam_search(trap_scorer(), beam_size=0)
        with self.assertRaises(ValueError):
            beam_search(trap_scorer(), max_out_len=0)

    def test_no_finite_expansion(self):
        with self.assertRaises(ContractError):
            beam_search(MarkovScorer(np.zeros(5), np.eye(5)), beam_size=2)
        # dead end after the first token
        table = np.zeros((5, 5))
        with self.assertRaises(ContractError):
            beam_search(MarkovScorer([0, 0, 0, 1.0, 0], table), max_out_len=3)


class TestHelpers(TestCase):
    def test_extract_current(self):
        self.assertEqual(extract_current([5, CONCAT, 6, 7]), [6, 7])
        self.assertEqual(extract_current([5, 6]), [5, 6])
        self.assertEqual(extract_current([5, CONCAT, 6, CONCAT, 7]), [6, CONCAT, 7])

    def test_max_out_len(self):
        self.assertEqual(default_max_out_len(4), 17)

    def test_export_attention(self):
        hyp = Hypothesis(
            [7, EOS],
            -1.5,
            [-1.0, -0.5],
            [
                {
                    "encoders": [np.array([0.25, 0.75]), np.array([1.0])],
                    "beta": np.array([0.4, 0.6]),
                },
                {
                    "encoders": [np.array([0.5, 0.5]), np.array([1.0])],
                    "beta": np.array([0.1, 0.9]),
                },
            ],
        )
        report = export_attention(hyp, [["a", "</s>"], ["</s>"]], ["x", "</s>"])
        self.assertEqual(report["outputs"], ["x", "</s>"])
        self.assertEqual(report["logprob"], -1.5)
        self.assertEqual(report["steps"][0]["encoders"], [[0.25, 0.75], [1.0]])
        self.assertEqual(report["steps"][1]["beta"], [0.1, 0.9])
        self.assertEqual(report["steps"][1]["token"], "</s>")
        plain = export_attention(
            Hypothesis([7], -1.0, [-1.0], [{"encoders": [np.ones(1)], "beta": None}])
        )
        self.assertIsNone(plain["inputs"])
        self.assertEqual(plain["outputs"], [7])
        self.assertNotIn("beta", plain["steps"][0])
        with TemporaryDirectory() as tmp:
            path = Path(tmp) / "attention.yaml"
            write_attention_report([report, plain], path)
            with path.open(encoding="utf-8") as f:
                loaded = list(yaml.safe_load_all(f))
        self.assertEqual(loaded, [report, plain])


class TestTranslateDocument(TestCase):
    @classmethod
    def setUpClass(cls):
        with TemporaryDirectory() as tmp:
            cls.pipeline = prepare(toy_documents(), tmp, num_merges=1000, threshold=0)
        cls.dims = ModelDims(
            len(cls.pipeline.src_vocab), len(cls.pipeline.trg_vocab), 4, 3
        )
        cls.doc = toy_documents()[1]

    def _ensemble(self, strategy):
        return Ensemble([TranslationModel(ModelConfig(self.dims, strategy, seed=1))])

    def test_stream(self):
        ensemble = self._ensemble("t-hier")
        results = translate_document(
            ensemble, self.pipeline, self.doc, beam_size=2, max_out_len=4
        )
        self.assertEqual(len(results), len(self.doc))
        self.assertEqual(results[0].example.aux_trg, EMPTY_CONTEXT)
        self.assertEqual(results[0].example.aux_src, EMPTY_CONTEXT)
        for previous, current in zip(results, results[1:]):
            expected = previous.tokens + [EOS] if previous.tokens else EMPTY_CONTEXT
            self.assertEqual(current.example.aux_trg, expected)
            self.assertEqual(current.example.aux_src, previous.example.src)
        for r in results:
            self.assertNotIn(EOS, r.tokens)
            self.assertLessEqual(len(r.hypothesis), 4)

    def test_two_sentence_output(self):
        ensemble = self._ensemble("2-to-2")
        results = translate_document(
            ensemble, self.pipeline, self.doc, beam_size=2, max_out_len=6
        )
        for r in results:
            output = r.hypothesis.tokens
            if r.hypothesis.finished:
                output = output[:-1]
            self.assertEqual(r.tokens, extract_current(output))

    def test_reference_and_baseline(self):
        ensemble = self._ensemble("t-gate")
        reference = translate_document(
            ensemble,
            self.pipeline,
            self.doc,
            beam_size=1,
            mode="reference",
            max_out_len=3,
        )
        self.assertEqual(
            reference[1].example.aux_trg, self.pipeline.encode(self.doc[0].trg, "trg")
        )
        baseline = ["le chat .", "le chien .", "le ."]
        results = translate_document(
            ensemble,
            self.pipeline,
            self.doc,
            beam_size=1,
            mode="baseline",
            baseline=baseline,
            max_out_len=3,
        )
        expected = self.pipeline.encode("le chien .", "trg")
        self.assertEqual(results[2].example.aux_trg, expected)

    def test_errors(self):
        ensemble = self._ensemble("t-hier")
        with self.assertRaises(ConfigurationError):
            translate_document(ensemble, self.pipeline, self.doc, mode="oracle")
        with self.assertRaises(ConfigurationError):
            translate_document(ensemble, self.pipeline, self.doc, mode="baseline")
        untranslated = Document(
            "d", [SentencePair("the cat", ""), SentencePair("the dog", "")]
        )
        with self.assertRaises(ConfigurationError):
            translate_document(
                ensemble,
                self.pipeline,
                untranslated,
                beam_size=1,
                mode="reference",
                max_out_len=2,
            )

    def test_threads(self):
        ensemble = self._ensemble("s-hier")
        docs = toy_documents()
        one = translate_documents(ensemble, self.pipeline, docs, beam_size=2, threads=1)
        two = translate_documents(ensemble, self.pipeline, docs, beam_size=2, threads=2)
        texts = [[[r.text for r in d] for d in run] for run in (one, two)]
        self.assertEqual(texts[0], texts[1])
        with TemporaryDirectory() as tmp:
            path = Path(tmp) / "out.txt"
            write_translations(one, path)
            lines = path.read_text(encoding="utf-8").split("\n")
        self.assertEqual(len(lines), sum(len(d) for d in docs) + len(docs) - 1 + 1)
        self.assertEqual(lines[len(docs[0])], "")
