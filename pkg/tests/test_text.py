from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

from contextnmt.nmtText import (
    EMPTY_CONTEXT,
    CasingModel,
    ContextualExample,
    Document,
    SentencePair,
    TextPipeline,
    clean_corpus,
    detokenize,
    extract_context_pairs,
    prepare,
    read_parallel,
    read_source,
    tokenize,
    write_parallel,
)
from contextnmt.nmtUtils import ConfigurationError, ContractError
from contextnmt.nmtVocab import EMPTY, EOS, UNK, Vocabulary
from tests import toy_documents, write_lines


class TestTokenize(TestCase):
    def test_tokenize(self):
        self.assertEqual(tokenize("Hello, world!"), ["Hello", ",", "world", "!"])
        self.assertEqual(tokenize("(a) b"), ["(", "a", ")", "b"])
        self.assertEqual(tokenize("l'homme"), ["l'homme"])
        self.assertEqual(tokenize("  "), [])

    def test_idempotent(self):
        for text in ("Hello, world!", "«Oui», dit-il...", "(a) b"):
            tokens = tokenize(text)
            self.assertEqual(tokenize(" ".join(tokens)), tokens)

    def test_detokenize(self):
        self.assertEqual(detokenize(["Hello", ",", "world", "!"]), "Hello, world!")
        self.assertEqual(detokenize(["(", "a", ")", "b"]), "(a) b")
        self.assertEqual(detokenize([]), "")


class TestParallel(TestCase):
    def test_read_documents(self):
        with TemporaryDirectory() as tmp:
            src = write_lines(Path(tmp) / "a.src", ["a", "b", "", "c"])
            trg = write_lines(Path(tmp) / "a.trg", ["A", "B", "", "C"])
            docs = read_parallel(src, trg)
        self.assertEqual(len(docs), 2)
        self.assertEqual(docs[0].sources, ["a", "b"])
        self.assertEqual(docs[1].targets, ["C"])
        self.assertNotEqual(docs[0].doc_id, docs[1].doc_id)

    def test_misaligned(self):
        with TemporaryDirectory() as tmp:
            src = write_lines(Path(tmp) / "a.src", ["a", "", "c"])
            trg = write_lines(Path(tmp) / "a.trg", ["A", "B", "C"])
            with self.assertRaises(ContractError):
                read_parallel(src, trg)
            short = write_lines(Path(tmp) / "b.trg", ["A"])
            with self.assertRaises(ContractError):
                read_parallel(src, short)

    def test_write_read(self):
        docs = toy_documents()
        with TemporaryDirectory() as tmp:
            src, trg = Path(tmp) / "c.src", Path(tmp) / "c.trg"
            write_parallel(docs, src, trg)
            again = read_parallel(src, trg)
            sources = read_source(src)
        self.assertEqual([d.pairs for d in again], [d.pairs for d in docs])
        self.assertEqual([d.sources for d in sources], [d.sources for d in docs])
        self.assertTrue(all(p.trg == "" for d in sources for p in d))


class TestClean(TestCase):
    def test_split_on_dropped_pair(self):
        doc = Document(
            "d",
            [
                SentencePair("a b", "A B"),
                SentencePair("a b c d", "A"),
                SentencePair("c", "C"),
            ],
        )
        cleaned = clean_corpus([doc], max_len=3)
        self.assertEqual([d.doc_id for d in cleaned], ["d", "d#1"])
        self.assertEqual(cleaned[1].sources, ["c"])
        with self.assertRaises(ValueError):
            clean_corpus([doc], max_len=0)


class TestCasing(TestCase):
    def test_learn_apply(self):
        casing = CasingModel.learn(
            [["The", "cat"], ["the", "dog"], ["the", "end"], ["Paris"]]
        )
        self.assertEqual(casing.apply(["The", "cat"]), ["the", "cat"])
        self.assertEqual(casing.apply(["Paris", "The"]), ["Paris", "The"])
        self.assertEqual(CasingModel.recase(["the", "cat"]), ["The", "cat"])

    def test_save_load(self):
        casing = CasingModel(["The", "A"])
        with TemporaryDirectory() as tmp:
            casing.save(Path(tmp) / "casing.yaml")
            self.assertEqual(CasingModel.load(Path(tmp) / "casing.yaml"), casing)


class TestContextPairs(TestCase):
    def test_extract(self):
        doc = Document("d", [SentencePair("a", "x"), SentencePair("b a", "y x")])
        src_vocab, trg_vocab = Vocabulary(["a", "b"]), Vocabulary(["x", "y"])
        first, second = extract_context_pairs(doc, src_vocab, trg_vocab)
        self.assertEqual(first.aux_src, EMPTY_CONTEXT)
        self.assertEqual(first.aux_trg, [EMPTY, EOS])
        self.assertEqual(first.src, [5, EOS])
        self.assertEqual(second.aux_src, first.src)
        self.assertEqual(second.aux_trg, first.trg)
        self.assertEqual(second.trg, [6, 5, EOS])
        self.assertEqual((second.doc_id, second.position), ("d", 1))

    def test_contract(self):
        with self.assertRaises(ContractError):
            ContextualExample(None, None, [EOS], None)
        with self.assertRaises(ContractError):
            ContextualExample(None, None, [5], None)
        with self.assertRaises(ContractError):
            ContextualExample([5], None, [5, EOS], None)
        ContextualExample(None, None, [UNK, EOS], None)


class TestPipeline(TestCase):
    def test_prepare(self):
        with TemporaryDirectory() as tmp:
            pipeline = prepare(toy_documents(), tmp, num_merges=1000, threshold=0)
            for name in TextPipeline.FILES.values():
                self.assertTrue((Path(tmp) / name).exists())
            segmented = read_parallel(Path(tmp) / "train.src", Path(tmp) / "train.trg")
            loaded = TextPipeline.load(tmp)
        self.assertEqual(len(segmented), 3)
        self.assertEqual(loaded.src_vocab, pipeline.src_vocab)
        self.assertEqual(loaded.trg_vocab, pipeline.trg_vocab)
        self.assertEqual(loaded.subwords, pipeline.subwords)

        ids = pipeline.encode("the cat sleeps.", "src")
        self.assertEqual(ids[-1], EOS)
        self.assertNotIn(UNK, ids)
        trg = pipeline.encode("le chat dort .", "trg")
        self.assertEqual(pipeline.decode(trg), "Le chat dort.")

        examples = pipeline.examples(toy_documents()[1])
        self.assertEqual(len(examples), 3)
        self.assertEqual(examples[0].aux_trg, EMPTY_CONTEXT)

    def test_not_prepared(self):
        with TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigurationError):
                TextPipeline.load(tmp)

    def test_empty_after_cleaning(self):
        docs = [Document("d", [SentencePair("a b c", "A B C")])]
        with TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigurationError):
                prepare(docs, tmp, max_len=2)
