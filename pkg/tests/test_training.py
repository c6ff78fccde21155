from pathlib import Path
from tempfile import TemporaryDirectory
from unittest import TestCase

import numpy as np
import yaml

from contextnmt.nmtCheckpoint import Checkpoint
from contextnmt.nmtModel import ModelConfig, ModelDims, ParameterStore
from contextnmt.nmtStrategies import TranslationModel, make_batch
from contextnmt.nmtTensor import precision
from contextnmt.nmtTraining import (
    AdamState,
    Ensemble,
    TrainConfig,
    TrainingRun,
    adam_step,
    check_gradients,
    clip_gradients,
    ensemble_scores,
    evaluate_loss,
    loss,
    make_batches,
    train,
)
from contextnmt.nmtUtils import ConfigurationError, NonFiniteGradientError
from tests import (
    TOY_SRC_VOCAB,
    TOY_TRG_VOCAB,
    strategy_feeder,
    toy_dims,
    toy_example,
    toy_examples,
    toy_model,
)


class TestTrainConfig(TestCase):
    def test_defaults(self):
        config = TrainConfig()
        self.assertEqual(config.strategy, "baseline")
        self.assertEqual((config.emb_dim, config.hidden_dim), (512, 1024))
        self.assertEqual(config.learning_rate, 1e-4)
        self.assertEqual(config.batch_size, 80)
        self.assertEqual(config.checkpoint_interval, 30000)
        self.assertEqual(config.patience, 5)
        self.assertEqual(config.ensemble_size, 3)

    def test_max_len(self):
        self.assertEqual(TrainConfig().effective_max_len, 50)
        self.assertEqual(TrainConfig(strategy="2-to-2").effective_max_len, 76)
        self.assertEqual(TrainConfig(strategy="2-to-1").effective_max_len, 76)
        self.assertEqual(TrainConfig(strategy="s-hier-to-2").effective_max_len, 50)
        config = TrainConfig(strategy="2-to-2", max_len=30)
        self.assertEqual(config.effective_max_len, 30)

    def test_validation(self):
        with self.assertRaises(ConfigurationError):
            TrainConfig(strategy="s-t-concat")
        with self.assertRaises(ConfigurationError):
            TrainConfig(batch_size=0)
        with self.assertRaises(ConfigurationError):
            TrainConfig(valid_fraction=1.0)
        with self.assertRaises(ConfigurationError):
            TrainConfig.from_dict({"strategy": "baseline", "dropout": 0.1})

    def test_overrides(self):
        config = TrainConfig(strategy="s-hier", patience=2)
        changed = config.with_overrides(patience=None, hidden_dim=8)
        self.assertEqual(changed.patience, 2)
        self.assertEqual(changed.hidden_dim, 8)
        self.assertEqual(config.hidden_dim, 1024)

    def test_yaml(self):
        config = TrainConfig(
            strategy="t-gate", gate_activation="sigmoid", max_updates=10
        )
        with TemporaryDirectory() as tmp:
            path = Path(tmp) / "train.yaml"
            path.write_text(config.to_yaml(), encoding="utf-8")
            self.assertEqual(TrainConfig.from_yaml(path), config)
            path.write_text("- a\n- b\n", encoding="utf-8")
            with self.assertRaises(ConfigurationError):
                TrainConfig.from_yaml(path)

    def test_model_config(self):
        config = TrainConfig(strategy="s-gate", emb_dim=4, hidden_dim=3)
        model_config = config.model_config(10, 12)
        self.assertEqual(model_config.dims, ModelDims(10, 12, 4, 3))
        self.assertEqual(model_config.strategy, "s-gate")


class TestOptimizer(TestCase):
    def _store(self, grad):
        store = ParameterStore()
        p = store.add("w", np.array([1.0, -2.0]))
        store.add("unused", np.array([3.0]))
        p.grad = np.asarray(grad, dtype=p.data.dtype)
        return store

    def test_adam_first_step(self):
        store = self._store([0.5, -0.1])
        state = AdamState.for_params(store)
        adam_step(store, state, lr=0.01)
        self.assertEqual(state.step, 1)
        np.testing.assert_allclose(store["w"].data, [0.99, -1.99], rtol=1e-5)
        np.testing.assert_equal(store["unused"].data, [3.0])

    def test_non_finite(self):
        store = self._store([np.nan, 1.0])
        state = AdamState.for_params(store)
        with self.assertRaises(NonFiniteGradientError):
            adam_step(store, state, lr=0.01)
        self.assertEqual(state.step, 0)
        np.testing.assert_equal(store["w"].data, [1.0, -2.0])

    def test_clip(self):
        store = self._store([3.0, 4.0])
        self.assertAlmostEqual(clip_gradients(store, 1.0), 5.0, places=5)
        np.testing.assert_allclose(store["w"].grad, [0.6, 0.8], rtol=1e-5)
        self.assertAlmostEqual(clip_gradients(store, 10.0), 1.0, places=5)
        np.testing.assert_allclose(store["w"].grad, [0.6, 0.8], rtol=1e-5)


class TestEnsemble(TestCase):
    def test_scores(self):
        mean = ensemble_scores([np.log([[0.9, 0.1]]), np.log([[0.5, 0.5]])])
        np.testing.assert_allclose(mean, [[0.7, 0.3]])
        self.assertEqual(mean.dtype, np.float64)
        with self.assertRaises(ConfigurationError):
            ensemble_scores([])

    def test_members_must_match(self):
        with self.assertRaises(ConfigurationError):
            Ensemble([])
        with self.assertRaises(ConfigurationError):
            Ensemble([toy_model("s-hier"), toy_model("s-gate")])
        dims = ModelDims(20, TOY_TRG_VOCAB, 4, 3)
        other = TranslationModel(ModelConfig(dims, "s-hier"))
        with self.assertRaises(ConfigurationError):
            Ensemble([toy_model("s-hier"), other])

    def test_vocabulary_fingerprints(self):
        "Same sizes but different tokens"
        dims = toy_dims()
        a = TranslationModel(ModelConfig(dims, "s-hier", vocab_fingerprint="a:b"))
        b = TranslationModel(ModelConfig(dims, "s-hier", vocab_fingerprint="a:c"))
        with self.assertRaises(ConfigurationError):
            Ensemble([a, b])
        same = TranslationModel(ModelConfig(dims, "s-hier", vocab_fingerprint="a:b"))
        self.assertEqual(len(Ensemble([a, same]).models), 2)
        # a member without a fingerprint is checked by size only
        self.assertEqual(len(Ensemble([a, toy_model("s-hier")]).models), 2)

    def test_same_members(self):
        "An ensemble of identical models predicts like one of them"
        model = toy_model("t-hier")
        batch = make_batch([model.build(e) for e in toy_examples()])
        single = Ensemble([model]).token_logprobs(batch)
        double = Ensemble([model, toy_model("t-hier")]).token_logprobs(batch)
        np.testing.assert_allclose(single, model.token_logprobs(batch))
        np.testing.assert_allclose(double, single, rtol=1e-5, atol=1e-6)

    def test_step(self):
        ensemble = Ensemble([toy_model("s-hier", seed=1), toy_model("s-hier", seed=2)])
        batch = make_batch([ensemble.build(toy_example())])
        state = ensemble.start(batch)
        logprobs, state, attention = ensemble.step(state, None)
        self.assertEqual(logprobs.shape, (1, TOY_TRG_VOCAB))
        np.testing.assert_allclose(np.exp(logprobs).sum(), 1.0)
        self.assertEqual(attention["beta"].shape, (1, 2))
        state = ensemble.select(state, [0, 0, 0])
        logprobs, _, _ = ensemble.step(state, np.array([5, 6, 7]))
        self.assertEqual(logprobs.shape, (3, TOY_TRG_VOCAB))


class TestBatches(TestCase):
    def test_make_batches(self):
        model = toy_model("2-to-1")
        built = [model.build(e) for e in toy_examples() * 5]
        batches = make_batches(built, 4, np.random.default_rng(0), bucket_batches=2)
        self.assertEqual(sum(b.size for b in batches), 15)
        self.assertEqual(sorted(b.size for b in batches), [3, 4, 4, 4])
        self.assertGreater(evaluate_loss(model, batches), 0)

    def test_loss_accepts_examples(self):
        model = toy_model()
        built = [model.build(e) for e in toy_examples()]
        self.assertAlmostEqual(
            loss(built, model).item(), model.loss(make_batch(built)).item(), places=6
        )


class TestTrain(TestCase):
    def test_overfit(self):
        config = TrainConfig(
            strategy="s-hier-to-2",
            emb_dim=8,
            hidden_dim=8,
            learning_rate=0.02,
            batch_size=4,
            checkpoint_interval=40,
            max_updates=80,
            valid_fraction=0,
            ensemble_size=1,
            log_interval=1000,
        )
        hook_calls = []

        def hook(model, updates):
            hook_calls.append(updates)
            return {"contrastive": {"coreference": 50.0}}

        with TemporaryDirectory() as tmp:
            run = train(
                config,
                [toy_example()] * 4,
                tmp,
                TOY_SRC_VOCAB,
                TOY_TRG_VOCAB,
                on_checkpoint=hook,
                vocab_fingerprint="src:trg",
            )
            self.assertEqual([p.name for p in run.checkpoints], [
                "model.00000040.ckpt",
                "model.00000080.ckpt",
            ])
            self.assertEqual(run.last_checkpoints, run.checkpoints[-1:])
            restored = Checkpoint.load(run.last_checkpoints[0]).model_config
            self.assertEqual(restored.vocab_fingerprint, "src:trg")
            with (Path(tmp) / "history.yaml").open() as f:
                history = yaml.safe_load(f)
        self.assertEqual(len(run.losses), 80)
        self.assertLess(run.losses[-1], 0.5 * run.losses[0])
        self.assertEqual(hook_calls, [40, 80])
        self.assertEqual([h["updates"] for h in history], [40, 80])
        self.assertEqual(history[0]["contrastive"], {"coreference": 50.0})
        self.assertNotIn("valid_loss", history[0])

    def test_validation_and_final_checkpoint(self):
        config = TrainConfig(
            emb_dim=4,
            hidden_dim=3,
            batch_size=2,
            checkpoint_interval=1000,
            max_epochs=2,
            log_interval=1000,
        )
        with TemporaryDirectory() as tmp:
            run = train(
                config,
                toy_examples(),
                tmp,
                TOY_SRC_VOCAB,
                TOY_TRG_VOCAB,
                valid=[toy_example()],
            )
            self.assertEqual(len(run.checkpoints), 1)
            self.assertTrue(run.checkpoints[0].exists())
        self.assertEqual(len(run.losses), 4)
        self.assertIn("valid_loss", run.history[0])

    def test_last_checkpoints(self):
        paths = [Path(f"model.{n:08d}.ckpt") for n in (10, 20, 30, 40)]
        self.assertEqual(TrainingRun(paths).last_checkpoints, paths[-3:])
        run = TrainingRun(paths, ensemble_size=2)
        self.assertEqual(run.last_checkpoints, paths[-2:])
        self.assertEqual(TrainingRun(paths[:1]).last_checkpoints, paths[:1])

    def test_nothing_to_train(self):
        config = TrainConfig(emb_dim=4, hidden_dim=3, max_len=2)
        with TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigurationError):
                train(config, toy_examples(), tmp, TOY_SRC_VOCAB, TOY_TRG_VOCAB)


class TestGradients(TestCase):
    def test_every_strategy(self):
        with precision(np.float64):
            for name, model in strategy_feeder():
                batch = make_batch([model.build(e) for e in toy_examples()[:2]])
                errors = check_gradients(model, batch, positions_per_tensor=1)
                self.assertEqual(set(errors), set(model.params), name)
                worst = max(errors, key=errors.get)
                self.assertLess(errors[worst], 1e-4, f"{name} {worst}")

    def test_dims(self):
        self.assertEqual(toy_dims().context_dim, 6)
