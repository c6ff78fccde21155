import math
from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

from contextnmt.nmtBleu import bleu, corpus_bleu, read_lines
from contextnmt.nmtUtils import ContractError
from tests import write_lines


class TestBleu(TestCase):
    def test_identical(self):
        refs = ["the cat sat on the mat .", "a dog barked loudly today"]
        self.assertAlmostEqual(bleu(refs, refs), 100.0)

    def test_identical_short_sentences(self):
        self.assertAlmostEqual(bleu(["a b c"], ["a b c"]), 100.0)
        self.assertAlmostEqual(bleu(["il dort", "oui"], ["il dort", "oui"]), 100.0)

    def test_empty_corpus(self):
        self.assertEqual(bleu([], []), 100.0)
        self.assertEqual(bleu([""], [""]), 100.0)
        self.assertEqual(corpus_bleu([], []).hyp_len, 0)

    def test_two_sentences(self):
        hyps = ["the cat sat on the mat", "a dog barked"]
        refs = ["the cat sat on a mat", "a dog barked loudly"]
        score = corpus_bleu(hyps, refs)
        # clipped matches over totals, summed over both sentences
        precisions = [8 / 9, 5 / 7, 3 / 5, 1 / 3]
        for got, expected in zip(score.precisions, precisions):
            self.assertAlmostEqual(got, 100 * expected, delta=0.01)
        self.assertEqual((score.hyp_len, score.ref_len), (9, 10))
        expected = 100 * math.exp(1 - 10 / 9) * math.prod(precisions) ** 0.25
        self.assertAlmostEqual(score.score, expected, delta=0.01)

    def test_clipped_unigrams(self):
        self.assertAlmostEqual(bleu(["the the the"], ["the cat"], max_n=1), 100 / 3)
        self.assertEqual(bleu(["the the the"], ["the cat"]), 0.0)

    def test_brevity_penalty(self):
        score = corpus_bleu(["the cat sat on the"], ["the cat sat on the mat"], max_n=1)
        self.assertAlmostEqual(score.brevity_penalty, math.exp(1 - 6 / 5))
        self.assertAlmostEqual(score.score, 100 * math.exp(-0.2))
        self.assertEqual((score.hyp_len, score.ref_len), (5, 6))
        self.assertEqual(corpus_bleu([""], ["a b"]).brevity_penalty, 0.0)

    def test_case_sensitive(self):
        score = corpus_bleu(["The cat sat down"], ["the cat sat down"])
        self.assertEqual(score.precisions[0], 75.0)
        self.assertLess(score.score, 100.0)
        self.assertTrue(str(score).startswith("BLEU = "))

    def test_errors(self):
        with self.assertRaises(ContractError):
            bleu(["a"], ["a", "b"])
        with self.assertRaises(ValueError):
            bleu(["a"], ["a"], max_n=0)

    def test_read_lines(self):
        with TemporaryDirectory() as tmp:
            path = write_lines(Path(tmp) / "hyp.txt", ["le chat", "", "il dort"])
            self.assertEqual(read_lines(path), ["le chat", "", "il dort"])
