__doc__ = """
Training: teacher-forced cross-entropy, Adam, batching by length,
checkpointing with early stopping, and checkpoint ensembles.

```python
from contextnmt.nmtTraining import TrainConfig, train

config = TrainConfig.from_yaml("train.yaml").with_overrides(strategy="s-hier-to-2")
run = train(config, examples, "runs/s-hier-to-2", src_vocab_size, trg_vocab_size)
run.checkpoints  # paths, oldest first
```

Every `checkpoint_interval` updates the model is validated, a checkpoint is
written and an entry is appended to `history.yaml` in the run directory.
Training stops after `patience` validations without improvement, after
`max_epochs`, or after `max_updates`.
"""

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import yaml
from tqdm import tqdm

from contextnmt.nmtCheckpoint import Checkpoint
from contextnmt.nmtModel import ModelConfig, ModelDims, ParameterStore
from contextnmt.nmtStrategies import (
    Batch,
    BuiltExample,
    TranslationModel,
    get_strategy,
    make_batch,
)
from contextnmt.nmtTensor import numerical_gradient, relative_error
from contextnmt.nmtText import ContextualExample
from contextnmt.nmtUtils import ConfigurationError, NonFiniteGradientError, chunked

logger = logging.getLogger(__name__)

__all__ = [
    "AdamState",
    "Ensemble",
    "TrainConfig",
    "TrainingRun",
    "adam_step",
    "ensemble_scores",
    "loss",
    "train",
]


@dataclass
class TrainConfig:
    """
    Every training setting, loadable from a YAML mapping with the same keys.
    """

    strategy: str = "baseline"
    emb_dim: int = 512
    hidden_dim: int = 1024
    gate_activation: str = "tanh"
    learning_rate: float = 1e-4
    batch_size: int = 80
    max_len: Optional[int] = None
    "None selects 50, or 76 when the strategy concatenates source sentences"
    checkpoint_interval: int = 30000
    patience: int = 5
    clip_norm: float = 1.0
    valid_fraction: float = 0.05
    max_epochs: int = 100
    max_updates: Optional[int] = None
    bucket_batches: int = 20
    "Batches drawn from a window sorted by length"
    ensemble_size: int = 3
    log_interval: int = 100
    seed: int = 1234

    def __post_init__(self):
        get_strategy(self.strategy)
        positive = (
            "emb_dim",
            "hidden_dim",
            "learning_rate",
            "batch_size",
            "checkpoint_interval",
            "patience",
            "clip_norm",
            "max_epochs",
            "bucket_batches",
            "ensemble_size",
            "log_interval",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(
                    f"{name} must be positive, got {getattr(self, name)}"
                )
        for name in ("max_len", "max_updates"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if not 0 <= self.valid_fraction < 1:
            raise ConfigurationError(
                f"valid_fraction must be in [0, 1), got {self.valid_fraction}"
            )

    @property
    def effective_max_len(self) -> int:
        if self.max_len is not None:
            return self.max_len
        return 76 if get_strategy(self.strategy).concatenates_source else 50

    @staticmethod
    def from_dict(data: dict) -> "TrainConfig":
        """
        Raises:
            ConfigurationError: unknown keys
        """
        known = {f.name for f in fields(TrainConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"Unknown training config keys: {sorted(unknown)}")
        return TrainConfig(**data)

    @staticmethod
    def from_yaml(path: Union[Path, str]) -> "TrainConfig":
        with Path(path).open("r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path} must hold a mapping")
        return TrainConfig.from_dict(data)

    def with_overrides(self, **overrides) -> "TrainConfig":
        "A copy with every non-None override applied"
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return TrainConfig.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def model_config(
        self,
        src_vocab_size: int,
        trg_vocab_size: int,
        vocab_fingerprint: Optional[str] = None,
    ) -> ModelConfig:
        dims = ModelDims(src_vocab_size, trg_vocab_size, self.emb_dim, self.hidden_dim)
        return ModelConfig(
            dims, self.strategy, self.gate_activation, self.seed, vocab_fingerprint
        )


def loss(batch: Union[Batch, Sequence[BuiltExample]], model: TranslationModel):
    "Mean negative log-likelihood of the non-pad target tokens of a batch"
    if not isinstance(batch, Batch):
        batch = make_batch(batch)
    return model.loss(batch)


# Optimization


@dataclass
class AdamState:
    """
    Moments and step counter of the Adam optimizer.
    """

    first: Dict[str, np.ndarray]
    second: Dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(params: ParameterStore) -> "AdamState":
        return AdamState(
            {n: np.zeros_like(p.data) for n, p in params.items()},
            {n: np.zeros_like(p.data) for n, p in params.items()},
        )


def check_finite(params: ParameterStore) -> None:
    for name, p in params.items():
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            bad = int(np.size(p.grad) - np.isfinite(p.grad).sum())
            raise NonFiniteGradientError(
                f"Gradient of {name} {p.shape} has {bad} non-finite values"
            )


def clip_gradients(params: ParameterStore, max_norm: float) -> float:
    "Scale gradients down to a global norm of at most `max_norm`; returns the norm"
    grads = [p.grad for _, p in params.items() if p.grad is not None]
    norm = float(np.sqrt(sum(np.sum(g.astype(np.float64) ** 2) for g in grads)))
    if norm > max_norm:
        factor = max_norm / norm
        for _, p in params.items():
            if p.grad is not None:
                p.grad = p.grad * p.grad.dtype.type(factor)
    return norm


def adam_step(params: ParameterStore, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    Parameters without a gradient are left alone.

    Raises:
        NonFiniteGradientError: a gradient holds NaN or inf; nothing is updated
    """
    check_finite(params)
    state.step += 1
    t = state.step
    correction1 = 1 - state.beta1**t
    correction2 = 1 - state.beta2**t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state.beta1 * state.first[name] + (1 - state.beta1) * g
        v = state.beta2 * state.second[name] + (1 - state.beta2) * g * g
        state.first[name], state.second[name] = m, v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        p.data -= update.astype(p.data.dtype)


# Ensembles


def ensemble_scores(logprobs: Sequence[np.ndarray]) -> np.ndarray:
    """Average the distributions of several models.

    Args:
        logprobs (Sequence[np.ndarray]): per-model log-probabilities [B×V]

    Returns:
        np.ndarray: the mean distribution, renormalized, as float64
    """
    if not logprobs:
        raise ConfigurationError("An ensemble needs at least one model")
    probs = [np.exp(np.asarray(lp, dtype=np.float64)) for lp in logprobs]
    mean = np.mean(probs, axis=0)
    return mean / mean.sum(axis=-1, keepdims=True)


def _same_vocabularies(a: ModelConfig, b: ModelConfig) -> bool:
    sizes = (a.dims.src_vocab_size, a.dims.trg_vocab_size)
    if sizes != (b.dims.src_vocab_size, b.dims.trg_vocab_size):
        return False
    # configs written without a fingerprint are compared by size only
    if a.vocab_fingerprint is None or b.vocab_fingerprint is None:
        return True
    return a.vocab_fingerprint == b.vocab_fingerprint


class Ensemble:
    """
    Several models of the same strategy and vocabularies behaving as one.
    A single model is an ensemble of one.
    """

    def __init__(self, models: Sequence[TranslationModel]) -> None:
        models = list(models)
        if not models:
            raise ConfigurationError("An ensemble needs at least one model")
        first = models[0]
        for m in models[1:]:
            if m.strategy != first.strategy:
                raise ConfigurationError(
                    f"Ensemble mixes strategies {first.strategy.name} "
                    f"and {m.strategy.name}"
                )
            if not _same_vocabularies(first.config, m.config):
                raise ConfigurationError("Ensemble members have different vocabularies")
        self.models = models

    @staticmethod
    def from_checkpoints(paths: Sequence[Union[Path, str]]) -> "Ensemble":
        return Ensemble([Checkpoint.load(p).model() for p in paths])

    @property
    def strategy(self):
        return self.models[0].strategy

    def build(self, raw: ContextualExample) -> BuiltExample:
        return self.models[0].build(raw)

    def start(self, batch: Batch):
        "Encode a batch with every member; returns the joint decoder state"
        states = []
        for model in self.models:
            traces = model.encode(batch)
            states.append((traces, model.initial_state(traces)))
        return states

    def step(self, states, prev_ids: Optional[np.ndarray]):
        """Advance every member one step.

        Returns:
            tuple: ensemble log-probabilities [B×V], new joint state and the
            attention record of the first member
        """
        steps, new_states = [], []
        for model, (traces, state) in zip(self.models, states):
            out = model.step(state, prev_ids, traces)
            steps.append(out)
            new_states.append((traces, out.state))
        probs = ensemble_scores([s.logprobs.data for s in steps])
        with np.errstate(divide="ignore"):
            return np.log(probs), new_states, steps[0].attention

    @staticmethod
    def select(states, rows: Sequence[int]):
        "Keep (and reorder) batch rows of a joint state"
        return [
            ([t.select(rows) for t in traces], state.select(rows))
            for traces, state in states
        ]

    def token_logprobs(self, batch: Batch) -> np.ndarray:
        "Ensemble log p of every reference token [B×T], 0 on padding"
        if len(self.models) == 1:
            return self.models[0].token_logprobs(batch)
        out = np.zeros(batch.target.shape, dtype=np.float64)
        rows = np.arange(batch.size)
        streams = [m._teacher_forced(batch) for m in self.models]
        for per_model in zip(*streams):
            t = per_model[0][0]
            probs = ensemble_scores([lp.data for _, lp in per_model])
            out[:, t] = np.log(probs[rows, batch.target[:, t]])
        return np.where(batch.target_mask, out, 0.0)

    def __len__(self) -> int:
        return len(self.models)

    def __repr__(self) -> str:
        return f"<Ensemble {self.strategy.name} members={len(self.models)}>"


# Training loop


def make_batches(
    examples: Sequence[BuiltExample],
    batch_size: int,
    rng: np.random.Generator,
    bucket_batches: int = 20,
) -> List[Batch]:
    """Shuffle, sort windows of `batch_size × bucket_batches` examples by
    length, cut them into batches and shuffle the batches."""
    order = rng.permutation(len(examples))
    groups: List[List[int]] = []
    for window in chunked(order, batch_size * bucket_batches):
        ranked = sorted(window, key=lambda i: (examples[i].length, i))
        groups.extend(list(g) for g in chunked(ranked, batch_size))
    return [
        make_batch([examples[i] for i in groups[g]])
        for g in rng.permutation(len(groups))
    ]


def evaluate_loss(model: TranslationModel, batches: Sequence[Batch]) -> float:
    "Token-weighted mean loss, no gradients"
    total, tokens = 0.0, 0
    for batch in batches:
        total += model.loss(batch).item() * batch.num_tokens
        tokens += batch.num_tokens
    return total / max(tokens, 1)


@dataclass
class TrainingRun:
    checkpoints: List[Path] = field(default_factory=list)
    "Written checkpoints, oldest first"
    losses: List[float] = field(default_factory=list)
    "Training loss of every update"
    history: List[dict] = field(default_factory=list)
    "One record per checkpoint"
    model: Optional[TranslationModel] = None
    "The model after the last update"
    ensemble_size: int = 3
    "Checkpoints ensembled at decoding"

    @property
    def last_checkpoints(self) -> List[Path]:
        return self.checkpoints[-self.ensemble_size :]


CheckpointHook = Callable[[TranslationModel, int], Dict[str, object]]


def train(
    config: TrainConfig,
    examples: Sequence[ContextualExample],
    out_dir: Union[Path, str],
    src_vocab_size: int,
    trg_vocab_size: int,
    valid: Optional[Sequence[ContextualExample]] = None,
    on_checkpoint: Optional[CheckpointHook] = None,
    progress: bool = False,
    vocab_fingerprint: Optional[str] = None,
) -> TrainingRun:
    """Train a model for `config.strategy`.

    Args:
        config (TrainConfig): settings
        examples (Sequence[ContextualExample]): training examples
        out_dir (Path): run directory for checkpoints and `history.yaml`
        src_vocab_size (int): source vocabulary size
        trg_vocab_size (int): target vocabulary size
        valid (Sequence[ContextualExample], optional): validation examples.
        Defaults to a `valid_fraction` share held out from `examples`.
        on_checkpoint (CheckpointHook, optional): extra metrics recorded with
        every checkpoint, e.g. contrastive accuracy
        progress (bool, optional): show a progress bar. Defaults to False.
        vocab_fingerprint (str, optional): stored in the model config so that
        ensembles can reject members trained on other vocabularies

    Raises:
        ConfigurationError: no example is left after length filtering
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    model = TranslationModel(
        config.model_config(src_vocab_size, trg_vocab_size, vocab_fingerprint)
    )
    max_len = config.effective_max_len

    built = [b for b in (model.build(e) for e in examples) if b.length <= max_len]
    if not built:
        raise ConfigurationError(
            f"No training example is {max_len} tokens or shorter"
        )
    if valid is None and config.valid_fraction > 0 and len(built) > 1:
        n_valid = max(1, int(round(len(built) * config.valid_fraction)))
        held = set(rng.choice(len(built), size=n_valid, replace=False).tolist())
        valid_built = [b for n, b in enumerate(built) if n in held]
        built = [b for n, b in enumerate(built) if n not in held]
    else:
        valid_built = [model.build(e) for e in valid or []]
    valid_batches = [
        make_batch(list(c)) for c in chunked(valid_built, config.batch_size)
    ]
    logger.info(
        "Training %s on %d examples (%d validation), max_len %d",
        config.strategy,
        len(built),
        len(valid_built),
        max_len,
    )

    adam = AdamState.for_params(model.params)
    run = TrainingRun(model=model, ensemble_size=config.ensemble_size)
    best, bad = np.inf, 0
    since_checkpoint: List[float] = []
    stop = False

    def _checkpoint(updates: int) -> bool:
        nonlocal best, bad
        record: Dict[str, object] = {
            "updates": updates,
            "train_loss": (
                float(np.mean(since_checkpoint)) if since_checkpoint else None
            ),
        }
        if valid_batches:
            record["valid_loss"] = evaluate_loss(model, valid_batches)
        if on_checkpoint is not None:
            record.update(on_checkpoint(model, updates))
        ckpt = Checkpoint.from_model(
            model, updates, {"train": config.to_dict()}, (adam.first, adam.second)
        )
        run.checkpoints.append(ckpt.save(out_dir / Checkpoint.file_name(updates)))
        run.history.append(record)
        with (out_dir / "history.yaml").open("w", encoding="utf-8") as f:
            yaml.safe_dump(run.history, f, sort_keys=False)
        logger.info("Checkpoint %s", record)
        since_checkpoint.clear()

        if "valid_loss" not in record:
            return False
        if record["valid_loss"] < best:
            best, bad = record["valid_loss"], 0
            return False
        bad += 1
        if bad >= config.patience:
            logger.info(
                "Validation loss has not improved for %d checkpoints, stopping", bad
            )
            return True
        return False

    updates = 0
    for epoch in range(config.max_epochs):
        batches = make_batches(built, config.batch_size, rng, config.bucket_batches)
        for batch in tqdm(batches, desc=f"epoch {epoch + 1}", disable=not progress):
            value = model.gradients(batch)
            norm = clip_gradients(model.params, config.clip_norm)
            adam_step(model.params, adam, config.learning_rate)
            updates += 1
            run.losses.append(value)
            since_checkpoint.append(value)
            if updates % config.log_interval == 0:
                logger.info("update %d loss %.4f grad norm %.3f", updates, value, norm)
            if updates % config.checkpoint_interval == 0 and _checkpoint(updates):
                stop = True
            if config.max_updates is not None and updates >= config.max_updates:
                stop = True
            if stop:
                break
        if stop:
            break
    if not run.checkpoints or since_checkpoint:
        _checkpoint(updates)
    return run


def check_gradients(
    model: TranslationModel, batch: Batch, positions_per_tensor: int = 3, seed: int = 0
) -> Dict[str, float]:
    """Compare analytic and central-difference gradients of the loss.

    Build the model inside `precision(np.float64)` for meaningful results.

    Returns:
        Dict[str, float]: the largest relative error of each parameter tensor
    """
    rng = np.random.default_rng(seed)
    model.gradients(batch)
    errors = {}
    for name, p in model.params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = rng.choice(p.size, size=min(positions_per_tensor, p.size), replace=False)
        positions = [np.unravel_index(int(i), p.shape) if p.ndim else () for i in flat]
        numeric = numerical_gradient(lambda: model.loss(batch), p, positions)
        idx = tuple(np.array(positions).T) if p.ndim else ()
        errors[name] = relative_error(analytic[idx], numeric[idx])
    return errors

