from unittest import TestCase

import numpy as np

from contextnmt.nmtModel import ModelConfig, ParameterStore
from contextnmt.nmtStrategies import (
    STRATEGIES,
    Batch,
    BuiltExample,
    TranslationModel,
    build_example,
    combine_concat,
    combine_gate,
    combine_hier,
    concatenate,
    get_strategy,
    make_batch,
    neutralize_auxiliary,
    split_concatenated,
)
from contextnmt.nmtTensor import Tensor, precision
from contextnmt.nmtText import ContextualExample
from contextnmt.nmtUtils import ConfigurationError, ContractError
from contextnmt.nmtVocab import CONCAT, EOS, PAD
from tests import strategy_feeder, toy_dims, toy_example, toy_examples, toy_model

expected_table = {
    "baseline": ([], 1, 1, 1),
    "2-to-2": (["src"], 2, 2, 1),
    "2-to-1": (["src"], 2, 1, 1),
    "s-concat": (["src"], 2, 1, 2),
    "s-gate": (["src"], 2, 1, 2),
    "s-hier": (["src"], 2, 1, 2),
    "t-concat": (["trg"], 2, 1, 2),
    "t-gate": (["trg"], 2, 1, 2),
    "t-hier": (["trg"], 2, 1, 2),
    "s-t-hier": (["src", "trg"], 3, 1, 3),
    "s-hier-to-2": (["src"], 2, 2, 2),
    "s-t-hier-to-2": (["src", "trg"], 3, 2, 3),
}
"aux, #In, #Out, #Enc"


class TestStrategyTable(TestCase):
    def test_twelve_strategies(self):
        self.assertEqual(set(STRATEGIES), set(expected_table))
        for name, (aux, n_in, n_out, n_enc) in expected_table.items():
            s = get_strategy(name)
            self.assertEqual(list(s.aux), aux, name)
            self.assertEqual(s.num_inputs, n_in, name)
            self.assertEqual(s.num_outputs, n_out, name)
            self.assertEqual(s.num_encoders, n_enc, name)

    def test_describe(self):
        "The table read off built models"
        for name, model in strategy_feeder():
            aux, n_in, n_out, n_enc = expected_table[name]
            self.assertEqual(
                model.describe(),
                {
                    "aux": aux,
                    "num_inputs": n_in,
                    "num_outputs": n_out,
                    "num_encoders": n_enc,
                },
                name,
            )

    def test_unknown(self):
        with self.assertRaises(ConfigurationError):
            get_strategy("s-t-gate")
        with self.assertRaises(ConfigurationError):
            TranslationModel(ModelConfig(toy_dims(), "t-t-hier"))

    def test_properties(self):
        self.assertTrue(get_strategy("2-to-2").concatenates_source)
        self.assertFalse(get_strategy("s-hier-to-2").concatenates_source)
        self.assertEqual(get_strategy("s-t-hier").encoder_sides, ["src", "src", "trg"])
        self.assertEqual(get_strategy("t-gate").encoder_sides, ["src", "trg"])
        self.assertTrue(get_strategy("t-hier").needs_previous_target)
        self.assertFalse(get_strategy("2-to-1").needs_previous_target)


class TestBuild(TestCase):
    def test_concatenate(self):
        self.assertEqual(concatenate([5, 6, EOS], [7, EOS]), [5, 6, CONCAT, 7, EOS])
        self.assertEqual(
            split_concatenated([5, 6, CONCAT, 7, EOS]), ([5, 6, EOS], [7, EOS])
        )
        self.assertEqual(split_concatenated([7, EOS]), ([], [7, EOS]))

    def test_build(self):
        raw = toy_example()
        cases = {
            "baseline": ([[8, 9, 10, EOS]], [11, 12, EOS], 0),
            "2-to-2": ([[5, 6, CONCAT, 8, 9, 10, EOS]], [7, CONCAT, 11, 12, EOS], 2),
            "2-to-1": ([[5, 6, CONCAT, 8, 9, 10, EOS]], [11, 12, EOS], 0),
            "s-gate": ([[8, 9, 10, EOS], [5, 6, EOS]], [11, 12, EOS], 0),
            "t-hier": ([[8, 9, 10, EOS], [7, EOS]], [11, 12, EOS], 0),
            "s-t-hier": ([[8, 9, 10, EOS], [5, 6, EOS], [7, EOS]], [11, 12, EOS], 0),
            "s-hier-to-2": (
                [[8, 9, 10, EOS], [5, 6, EOS]],
                [7, CONCAT, 11, 12, EOS],
                2,
            ),
        }
        for name, (inputs, target, prefix) in cases.items():
            built = build_example(get_strategy(name), raw)
            self.assertEqual(built.inputs, inputs, name)
            self.assertEqual(built.target, target, name)
            self.assertEqual(built.prefix_length, prefix, name)
        self.assertEqual(built.length, 5)

    def test_missing_context(self):
        raw = ContextualExample(None, [7, EOS], [8, EOS], [9, EOS])
        with self.assertRaises(ContractError):
            build_example(get_strategy("s-hier"), raw)
        self.assertEqual(build_example(get_strategy("t-hier"), raw).inputs[1], [7, EOS])
        no_trg = ContextualExample([5, EOS], None, [8, EOS], [9, EOS])
        with self.assertRaises(ContractError):
            build_example(get_strategy("2-to-2"), no_trg)

    def test_make_batch(self):
        built = [build_example(get_strategy("s-hier"), e) for e in toy_examples()]
        batch = make_batch(built)
        self.assertIsInstance(batch, Batch)
        self.assertEqual(batch.size, 3)
        ids, mask = batch.inputs[0]
        self.assertEqual(ids.shape, (3, 4))
        np.testing.assert_equal(ids[2], [13, EOS, PAD, PAD])
        np.testing.assert_equal(mask[2], [True, True, False, False])
        self.assertEqual(batch.num_tokens, 3 + 2 + 4)
        with self.assertRaises(ContractError):
            make_batch([])
        with self.assertRaises(ContractError):
            make_batch([built[0], BuiltExample([[5, EOS]])])


def _params(**arrays) -> ParameterStore:
    store = ParameterStore()
    for name, value in arrays.items():
        store.add(f"combiner.{name}", np.asarray(value, dtype=np.float64))
    return store


class TestCombiners(TestCase):
    def test_concat(self):
        with precision(np.float64):
            store = _params(W_c=np.vstack([np.eye(2), 2 * np.eye(2)]), b_c=[1.0, 0.0])
            c = combine_concat(
                [Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])], store.scope("combiner")
            )
            np.testing.assert_allclose(c.data, [[8.0, 10.0]])
            with self.assertRaises(ConfigurationError):
                combine_concat([Tensor([[1.0, 2.0]])] * 3, store.scope("combiner"))

    def test_gate(self):
        with precision(np.float64):
            zero, eye = np.zeros((2, 2)), np.eye(2)
            store = _params(W_r=zero, W_s=zero, W_t=eye, W_u=eye, b_r=[0.25, 0.75])
            p = store.scope("combiner")
            c1, c2 = Tensor([[1.0, 1.0]]), Tensor([[3.0, 5.0]])
            # tanh: r = tanh(0) + b_r, not squashed
            np.testing.assert_allclose(
                combine_gate(c1, c2, p, "tanh").data,
                [[0.25 + 0.75 * 3, 0.75 + 0.25 * 5]],
            )
            r = 1 / (1 + np.exp(-np.array([0.25, 0.75])))
            np.testing.assert_allclose(
                combine_gate(c1, c2, p, "sigmoid").data,
                [r * [1.0, 1.0] + (1 - r) * [3.0, 5.0]],
            )
            with self.assertRaises(ConfigurationError):
                combine_gate(c1, c2, p, "relu")

    def test_hier(self):
        with precision(np.float64):
            eye = np.eye(2)
            store = _params(
                W_b=np.zeros((3, 2)),
                v_b=[1.0, 1.0],
                b_e=0.0,
                **{"U_b.0": eye, "U_c.0": eye, "U_b.1": eye, "U_c.1": eye},
            )
            cs = [Tensor([[0.0, 0.0]]), Tensor([[10.0, 10.0]])]
            z = Tensor([[0.3, -0.2, 0.1]])
            c, trace = combine_hier(cs, z, store.scope("combiner"))
            e = np.array([0.0, 2 * np.tanh(10.0)])
            beta = np.exp(e) / np.exp(e).sum()
            np.testing.assert_allclose(trace.energies[0], e)
            np.testing.assert_allclose(trace.weights[0], beta)
            np.testing.assert_allclose(c.data, [[10 * beta[1], 10 * beta[1]]])

    def test_beta_sums_to_one(self):
        for name, model in strategy_feeder(num_encoders=3):
            batch = make_batch([model.build(e) for e in toy_examples()])
            traces = model.encode(batch)
            step = model.step(model.initial_state(traces), None, traces)
            beta = step.attention["beta"]
            self.assertEqual(beta.shape, (3, 3), name)
            np.testing.assert_allclose(beta.sum(axis=1), np.ones(3), rtol=1e-5)


class TestNeutralize(TestCase):
    "A multi-encoder model with a neutral combiner matches the baseline"

    def _compare(self, name, gate_activation="tanh"):
        with precision(np.float64):
            config = ModelConfig(toy_dims(), name, gate_activation, seed=4)
            model = TranslationModel(config)
            baseline = TranslationModel(ModelConfig(toy_dims(), "baseline", seed=4))
            for p in baseline.params:
                np.testing.assert_equal(model.params[p].data, baseline.params[p].data)
            neutralize_auxiliary(model)
            examples = toy_examples()
            expected = baseline.token_logprobs(
                make_batch([baseline.build(e) for e in examples])
            )
            actual = model.token_logprobs(
                make_batch([model.build(e) for e in examples])
            )
        np.testing.assert_allclose(actual, expected, rtol=1e-7, atol=1e-9)

    def test_concat(self):
        self._compare("s-concat")
        self._compare("t-concat")

    def test_gate(self):
        self._compare("s-gate")
        self._compare("t-gate", "sigmoid")

    def test_hier(self):
        self._compare("s-hier")
        self._compare("s-t-hier")


class TestLoss(TestCase):
    def test_every_strategy(self):
        for name, model in strategy_feeder():
            batch = make_batch([model.build(e) for e in toy_examples()])
            value = model.loss(batch).item()
            self.assertTrue(np.isfinite(value), name)
            self.assertGreater(value, 0, name)

    def test_token_logprobs_match_loss(self):
        model = toy_model("s-hier-to-2")
        batch = make_batch([model.build(e) for e in toy_examples()])
        logprobs = model.token_logprobs(batch)
        np.testing.assert_equal(logprobs[~batch.target_mask], 0.0)
        self.assertAlmostEqual(
            -logprobs.sum() / batch.num_tokens, model.loss(batch).item(), places=4
        )
