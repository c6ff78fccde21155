from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

from contextnmt.nmtBpe import (
    END_OF_WORD,
    SubwordModel,
    apply_bpe,
    join_subwords,
    learn_bpe,
    symbol_inventory,
    word_frequencies,
)

corpus = {"low": 5, "lower": 2, "newest": 6, "widest": 3}


class TestLearn(TestCase):
    def test_merge_order(self):
        model = learn_bpe(corpus, num_merges=2)
        # (e, s) and (s, t</w>) are both seen 9 times, the smaller pair wins
        self.assertEqual(model.merges, [("e", "s"), ("es", "t" + END_OF_WORD)])

    def test_threshold(self):
        model = learn_bpe(corpus, num_merges=100, threshold=7)
        self.assertEqual(
            model.merges, [("e", "s"), ("es", "t" + END_OF_WORD), ("l", "o")]
        )
        self.assertEqual(model.vocab_threshold, 7)

    def test_runs_out_of_pairs(self):
        model = learn_bpe({"ab": 1}, num_merges=10)
        self.assertEqual(len(model), 1)
        self.assertEqual(model.segment("ab"), ["ab" + END_OF_WORD])

    def test_invalid(self):
        with self.assertRaises(ValueError):
            learn_bpe(corpus, num_merges=-1)
        with self.assertRaises(ValueError):
            learn_bpe(corpus, num_merges=1, threshold=-1)


class TestApply(TestCase):
    def test_segment(self):
        model = learn_bpe(corpus, num_merges=2)
        self.assertEqual(
            apply_bpe(model, "lowest"), ["l", "o", "w", "est" + END_OF_WORD]
        )
        self.assertEqual(apply_bpe(model, "x"), ["x" + END_OF_WORD])
        self.assertEqual(apply_bpe(model, ""), [])

    def test_join(self):
        model = learn_bpe(corpus, num_merges=5)
        words = ["widest", "lowest", "newer", "a"]
        segments = model.segment_sentence(words)
        self.assertEqual(join_subwords(segments), words)
        self.assertEqual(join_subwords(["lo", "w"]), ["low"])

    def test_inventory(self):
        model = learn_bpe(corpus, num_merges=3)
        inventory = symbol_inventory(model, corpus)
        for word in ("low", "lowest", "widest"):
            for segment in model.segment(word):
                self.assertIn(segment, inventory)

    def test_word_frequencies(self):
        self.assertEqual(
            word_frequencies([["a", "b"], ["a"]]), {"a": 2, "b": 1}
        )


class TestFile(TestCase):
    def test_save_load(self):
        model = learn_bpe(corpus, num_merges=4, threshold=2)
        with TemporaryDirectory() as tmp:
            path = Path(tmp) / "bpe.codes"
            model.save(path)
            lines = path.read_text(encoding="utf-8").splitlines()
            self.assertEqual(lines[0], "#version: 1 threshold: 2")
            self.assertEqual(len(lines), 5)
            self.assertEqual(SubwordModel.load(path), model)

    def test_bad_header(self):
        with TemporaryDirectory() as tmp:
            path = Path(tmp) / "bpe.codes"
            path.write_text("e s\n", encoding="utf-8")
            with self.assertRaises(ValueError):
                SubwordModel.load(path)
            path.write_text("#version: 2 threshold: 0\ne s\n", encoding="utf-8")
            with self.assertRaises(ValueError):
                SubwordModel.load(path)
