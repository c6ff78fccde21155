__doc__ = """
Context integration strategies.

| strategy        | aux      | #In | #Out | #Enc | how the context enters               |
|-----------------|----------|-----|------|------|--------------------------------------|
| `baseline`      |          | 1   | 1    | 1    | not at all                           |
| `2-to-2`        | src      | 2   | 2    | 1    | concatenated input and output        |
| `2-to-1`        | src      | 2   | 1    | 1    | concatenated input                   |
| `s-concat`      | src      | 2   | 1    | 2    | second encoder, concatenation        |
| `s-gate`        | src      | 2   | 1    | 2    | second encoder, gate                 |
| `s-hier`        | src      | 2   | 1    | 2    | second encoder, hierarchical         |
| `t-concat`      | trg      | 2   | 1    | 2    | encoder of the previous target       |
| `t-gate`        | trg      | 2   | 1    | 2    |                                      |
| `t-hier`        | trg      | 2   | 1    | 2    |                                      |
| `s-t-hier`      | src, trg | 3   | 1    | 3    | both previous sentences              |
| `s-hier-to-2`   | src      | 2   | 2    | 2    | hierarchical, decodes two sentences  |
| `s-t-hier-to-2` | src, trg | 3   | 2    | 3    |                                      |

Concatenation drops the EOS of the previous sentence and inserts the
`<concat>` token: `a b </s>` + `c </s>` → `a b <concat> c </s>`.

Encoders are ordered main source first, then the previous source, then the
previous target. Auxiliary source encoders share the source embeddings;
auxiliary target encoders share the target embeddings. Every encoder has its
own attention.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from contextnmt.nmtModel import (
    DecoderState,
    DecoderStep,
    EncoderTrace,
    Initializer,
    ModelConfig,
    ModelDims,
    ParameterScope,
    ParameterStore,
    attend,
    decode_step,
    encode,
    init_attention,
    init_decoder,
    init_decoder_params,
    init_encoder,
    project_keys,
)
from contextnmt.nmtTensor import (
    ComputationTape,
    Tensor,
    concat,
    expand,
    get_default_dtype,
    matmul,
    pick,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    tanh,
)
from contextnmt.nmtText import ContextualExample
from contextnmt.nmtUtils import ConfigurationError, ContractError, split_at_first
from contextnmt.nmtVocab import CONCAT, EOS, PAD

logger = logging.getLogger(__name__)

__all__ = [
    "STRATEGIES",
    "Batch",
    "BuiltExample",
    "StrategyConfig",
    "TranslationModel",
    "build_example",
    "combine_concat",
    "combine_gate",
    "combine_hier",
    "context_provider",
    "get_strategy",
    "make_batch",
]


@dataclass(frozen=True)
class StrategyConfig:
    """
    One system configuration.
    """

    name: str
    aux: Tuple[str, ...] = ()
    "Auxiliary sentences used, among `src` and `trg`"
    num_encoders: int = 1
    num_outputs: int = 1
    combiner: Optional[str] = None
    "`concat`, `gate` or `hier` for multi-encoder strategies"

    @property
    def num_inputs(self) -> int:
        return 1 + len(self.aux)

    @property
    def aux_kind(self) -> str:
        if not self.aux:
            return "none"
        return "both" if len(self.aux) == 2 else self.aux[0]

    @property
    def concatenates_source(self) -> bool:
        return self.num_encoders == 1 and bool(self.aux)

    @property
    def encoder_sides(self) -> List[str]:
        "Language of each encoder's input, main encoder first"
        if self.num_encoders == 1:
            return ["src"]
        return ["src"] + list(self.aux)

    @property
    def needs_previous_target(self) -> bool:
        "Whether translating needs the previous target sentence as input"
        return "trg" in self.aux


STRATEGIES: Dict[str, StrategyConfig] = {
    s.name: s
    for s in (
        StrategyConfig("baseline"),
        StrategyConfig("2-to-2", ("src",), 1, 2),
        StrategyConfig("2-to-1", ("src",), 1, 1),
        StrategyConfig("s-concat", ("src",), 2, 1, "concat"),
        StrategyConfig("s-gate", ("src",), 2, 1, "gate"),
        StrategyConfig("s-hier", ("src",), 2, 1, "hier"),
        StrategyConfig("t-concat", ("trg",), 2, 1, "concat"),
        StrategyConfig("t-gate", ("trg",), 2, 1, "gate"),
        StrategyConfig("t-hier", ("trg",), 2, 1, "hier"),
        StrategyConfig("s-t-hier", ("src", "trg"), 3, 1, "hier"),
        StrategyConfig("s-hier-to-2", ("src",), 2, 2, "hier"),
        StrategyConfig("s-t-hier-to-2", ("src", "trg"), 3, 2, "hier"),
    )
}
"Every available strategy by id"


def get_strategy(name: str) -> StrategyConfig:
    try:
        return STRATEGIES[name]
    except KeyError:
        raise ConfigurationError(
            f"Unknown strategy {name!r}, expected one of {', '.join(STRATEGIES)}"
        )


# Examples and batches


@dataclass
class BuiltExample:
    """
    Model-ready sequences: one input per encoder (main first) and the
    decoder target.
    """

    inputs: List[List[int]]
    target: Optional[List[int]] = None
    prefix_length: int = 0
    "Leading target tokens that belong to the previous sentence, CONCAT included"
    doc_id: str = ""
    position: int = 0

    @property
    def length(self) -> int:
        "Longest sequence of the example"
        return max(len(s) for s in self.inputs + [self.target or []])


def concatenate(previous: Sequence[int], current: Sequence[int]) -> List[int]:
    "previous (EOS dropped) ⧺ CONCAT ⧺ current"
    prefix = list(previous)
    if prefix and prefix[-1] == EOS:
        prefix = prefix[:-1]
    return prefix + [CONCAT] + list(current)


def split_concatenated(target: Sequence[int]) -> Tuple[List[int], List[int]]:
    """Split a concatenated target at its first CONCAT.

    Returns:
        Tuple[List[int], List[int]]: the previous sentence (EOS terminated)
        and the current one. Without CONCAT the previous part is empty.
    """
    prefix, suffix, found = split_at_first(target, CONCAT)
    return (prefix + [EOS] if found else []), suffix


def build_example(strategy: StrategyConfig, raw: ContextualExample) -> BuiltExample:
    """Arrange a contextual example for a strategy.

    Raises:
        ContractError: an auxiliary sentence the strategy needs is missing
    """
    aux = {"src": raw.aux_src, "trg": raw.aux_trg}
    for side in strategy.aux:
        if aux[side] is None:
            raise ContractError(f"{strategy.name} needs aux_{side}")

    if strategy.concatenates_source:
        inputs = [concatenate(raw.aux_src, raw.src)]
    else:
        inputs = [list(raw.src)] + [list(aux[side]) for side in strategy.aux]

    target, prefix_length = None, 0
    if raw.trg is not None:
        if strategy.num_outputs == 2:
            if raw.aux_trg is None:
                raise ContractError(
                    f"{strategy.name} needs aux_trg to build its target"
                )
            target = concatenate(raw.aux_trg, raw.trg)
            prefix_length = len(raw.aux_trg)
        else:
            target = list(raw.trg)
    return BuiltExample(inputs, target, prefix_length, raw.doc_id, raw.position)


def pad_sequences(seqs: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    "Right-pad id sequences into [B×T] ids and a mask"
    longest = max(len(s) for s in seqs)
    ids = np.full((len(seqs), longest), PAD, dtype=np.int64)
    mask = np.zeros((len(seqs), longest), dtype=bool)
    for n, seq in enumerate(seqs):
        ids[n, : len(seq)] = seq
        mask[n, : len(seq)] = True
    return ids, mask


@dataclass
class Batch:
    inputs: List[Tuple[np.ndarray, np.ndarray]]
    "(ids, mask) per encoder"
    target: Optional[np.ndarray] = None
    target_mask: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.inputs[0][0].shape[0]

    @property
    def num_tokens(self) -> int:
        return int(self.target_mask.sum()) if self.target_mask is not None else 0


def make_batch(examples: Sequence[BuiltExample]) -> Batch:
    """Pad built examples into a batch.

    Raises:
        ContractError: empty batch, or examples disagree on encoder count or
        target presence
    """
    if not examples:
        raise ContractError("Cannot batch zero examples")
    n_inputs = {len(e.inputs) for e in examples}
    if len(n_inputs) != 1:
        raise ContractError(f"Examples have different input counts: {n_inputs}")
    inputs = [
        pad_sequences([e.inputs[k] for e in examples])
        for k in range(n_inputs.pop())
    ]
    has_target = {e.target is not None for e in examples}
    if has_target == {True}:
        target, target_mask = pad_sequences([e.target for e in examples])
        return Batch(inputs, target, target_mask)
    if has_target == {False}:
        return Batch(inputs)
    raise ContractError("Some examples of the batch have a target and some do not")


# Combiners


def _bias(b: Tensor, rows: int) -> Tensor:
    return expand(b, 0, rows)


def combine_concat(cs: Sequence[Tensor], p: ParameterScope) -> Tensor:
    """c = [c1; c2] W_c + b_c

    Raises:
        ConfigurationError: not exactly two context vectors
    """
    if len(cs) != 2:
        raise ConfigurationError(f"The concat combiner takes 2 contexts, got {len(cs)}")
    return matmul(concat(cs, axis=-1), p["W_c"]) + _bias(p["b_c"], cs[0].shape[0])


def combine_gate(
    c1: Tensor, c2: Tensor, p: ParameterScope, activation: str = "tanh"
) -> Tensor:
    """r ⊙ (c1 W_t) + (1 − r) ⊙ (c2 W_u)

    With the `tanh` activation r = tanh(c1 W_r + c2 W_s) + b_r, so r is not
    confined to [0, 1]; with `sigmoid`, r = sigmoid(c1 W_r + c2 W_s + b_r).
    """
    rows = c1.shape[0]
    pre = matmul(c1, p["W_r"]) + matmul(c2, p["W_s"])
    if activation == "tanh":
        r = tanh(pre) + _bias(p["b_r"], rows)
    elif activation == "sigmoid":
        r = sigmoid(pre + _bias(p["b_r"], rows))
    else:
        raise ConfigurationError(f"Unknown gate activation {activation}")
    return r * matmul(c1, p["W_t"]) + sub(1.0, r) * matmul(c2, p["W_u"])


@dataclass
class HierAttentionTrace:
    energies: np.ndarray
    "e [B×K]"
    weights: np.ndarray
    "β [B×K], rows sum to 1"


def combine_hier(
    cs: Sequence[Tensor], z: Tensor, p: ParameterScope
) -> Tuple[Tensor, HierAttentionTrace]:
    """Attention over encoders.

    e_k = v_b · tanh(z W_b + c_k U_b^k) + b_e, β = softmax(e),
    c = Σ_k β_k (c_k U_c^k)

    Args:
        cs (Sequence[Tensor]): K context vectors [B×2H]
        z (Tensor): the decoder query [B×H]
        p (ParameterScope): `W_b`, `v_b`, `b_e` and `U_b.k`, `U_c.k` per encoder
    """
    if not cs:
        raise ConfigurationError("The hierarchical combiner needs at least one context")
    rows, width = cs[0].shape
    query = matmul(z, p["W_b"])
    v = reshape(p["v_b"], (width, 1))
    energies = [
        matmul(tanh(query + matmul(c, p[f"U_b.{k}"])), v) + p["b_e"]
        for k, c in enumerate(cs)
    ]
    e = concat(energies, axis=-1)
    beta = softmax(e, axis=-1)
    out = None
    for k, c in enumerate(cs):
        term = expand(beta[:, k], 1, width) * matmul(c, p[f"U_c.{k}"])
        out = term if out is None else out + term
    return out, HierAttentionTrace(e.data.copy(), beta.data.copy())


def init_combiner(
    p: ParameterScope, strategy: StrategyConfig, dims: ModelDims, init: Initializer
) -> None:
    width, k = dims.context_dim, strategy.num_encoders
    if strategy.combiner == "concat":
        if k != 2:
            raise ConfigurationError(
                f"{strategy.name}: concat combines exactly 2 encoders"
            )
        p.add("W_c", init.glorot(width * k, width))
        p.add("b_c", Initializer.zeros(width))
    elif strategy.combiner == "gate":
        for name in ("W_r", "W_s", "W_t", "W_u"):
            p.add(name, init.glorot(width, width))
        p.add("b_r", Initializer.zeros(width))
    elif strategy.combiner == "hier":
        p.add("W_b", init.glorot(dims.hidden_dim, width))
        p.add("v_b", init.glorot(width, 1).reshape(width))
        p.add("b_e", np.zeros(()))
        for n in range(k):
            p.add(f"U_b.{n}", init.glorot(width, width))
            p.add(f"U_c.{n}", init.glorot(width, width))
    else:
        raise ConfigurationError(f"Unknown combiner {strategy.combiner}")


def context_provider(
    strategy: StrategyConfig,
    traces: Sequence[EncoderTrace],
    z: Tensor,
    params: ParameterStore,
    gate_activation: str = "tanh",
) -> Tuple[Tensor, Dict[str, object]]:
    """Attend over every encoder with its own attention, then combine.

    Returns:
        Tuple[Tensor, dict]: the context vector and the attention record
        (`encoders`: α per encoder, `beta`: hierarchical weights or None)

    Raises:
        ConfigurationError: the number of traces is not the strategy's
        encoder count
    """
    if len(traces) != strategy.num_encoders:
        raise ConfigurationError(
            f"{strategy.name} has {strategy.num_encoders} encoders, "
            f"got {len(traces)} traces"
        )
    contexts, alphas = [], []
    for k, trace in enumerate(traces):
        c, alpha = attend(z, trace, params.scope(f"attention.{k}"))
        contexts.append(c)
        alphas.append(alpha.data.copy())
    record: Dict[str, object] = {"encoders": alphas, "beta": None}
    if strategy.num_encoders == 1:
        return contexts[0], record

    p = params.scope("combiner")
    if strategy.combiner == "concat":
        return combine_concat(contexts, p), record
    if strategy.combiner == "gate":
        return combine_gate(contexts[0], contexts[1], p, gate_activation), record
    out, hier = combine_hier(contexts, z, p)
    record["beta"] = hier.weights
    return out, record


# The assembled model


class TranslationModel:
    """
    A complete system for one strategy: parameters plus the forward passes
    used by training, decoding and scoring.

    ```python
    config = ModelConfig(ModelDims(50, 60, emb_dim=16, hidden_dim=16), "s-hier-to-2")
    model = TranslationModel(config)
    batch = make_batch([model.build(example) for example in examples])
    loss = model.loss(batch)
    ```
    """

    def __init__(self, config: ModelConfig, params: Optional[ParameterStore] = None):
        self.config = config
        self.strategy = get_strategy(config.strategy)
        self.params = params if params is not None else self.init_params(config)

    @staticmethod
    def init_params(config: ModelConfig) -> ParameterStore:
        "Fresh parameters; main-path tensors come first so they match a baseline"
        strategy = get_strategy(config.strategy)
        dims = config.dims
        init = Initializer(config.seed)
        store = ParameterStore()
        store.add("src_emb", init.glorot(dims.src_vocab_size, dims.emb_dim))
        store.add("trg_emb", init.glorot(dims.trg_vocab_size, dims.emb_dim))
        init_decoder_params(store, dims, init)
        for k in range(strategy.num_encoders):
            init_encoder(store.scope(f"encoder.{k}"), dims, init)
            init_attention(store.scope(f"attention.{k}"), dims, init)
        if strategy.combiner is not None:
            init_combiner(store.scope("combiner"), strategy, dims, init)
        return store

    @property
    def dims(self) -> ModelDims:
        return self.config.dims

    def build(self, raw: ContextualExample) -> BuiltExample:
        return build_example(self.strategy, raw)

    def describe(self) -> Dict[str, object]:
        "Aux, #In, #Out and #Enc read off the built model"
        sample = ContextualExample([10, EOS], [11, EOS], [12, EOS], [13, EOS])
        built = self.build(sample)
        flat = [t for seq in built.inputs for t in seq]
        aux = [side for side, token in (("src", 10), ("trg", 11)) if token in flat]
        encoders = {n.split(".")[1] for n in self.params if n.startswith("encoder.")}
        return {
            "aux": aux,
            "num_inputs": 1 + len(aux),
            "num_outputs": 2 if CONCAT in built.target else 1,
            "num_encoders": len(encoders),
        }

    def encode(self, batch: Batch) -> List[EncoderTrace]:
        sides = self.strategy.encoder_sides
        if len(batch.inputs) != len(sides):
            raise ConfigurationError(
                f"{self.strategy.name} has {len(sides)} encoders, "
                f"the batch has {len(batch.inputs)} inputs"
            )
        traces = []
        for k, ((ids, mask), side) in enumerate(zip(batch.inputs, sides)):
            table = self.params["src_emb" if side == "src" else "trg_emb"]
            trace = encode(ids, mask, table, self.params.scope(f"encoder.{k}"))
            trace.keys = project_keys(trace, self.params.scope(f"attention.{k}"))
            traces.append(trace)
        return traces

    def initial_state(self, traces: Sequence[EncoderTrace]) -> DecoderState:
        return init_decoder(traces, self.params)

    def step(
        self,
        state: DecoderState,
        prev_ids: Optional[np.ndarray],
        traces: Sequence[EncoderTrace],
        output_projection: Optional[Tensor] = None,
    ) -> DecoderStep:
        def provider(z: Tensor):
            return context_provider(
                self.strategy, traces, z, self.params, self.config.gate_activation
            )

        return decode_step(state, prev_ids, provider, self.params, output_projection)

    def _teacher_forced(self, batch: Batch):
        "Yield (step index, log-probabilities) along the reference target"
        if batch.target is None:
            raise ContractError("Teacher forcing needs a batch with targets")
        traces = self.encode(batch)
        state = self.initial_state(traces)
        projection = self.params["trg_emb"].T
        for t in range(batch.target.shape[1]):
            prev = None if t == 0 else batch.target[:, t - 1]
            step = self.step(state, prev, traces, projection)
            yield t, step.logprobs
            state = step.state

    def loss(self, batch: Batch) -> Tensor:
        """Mean negative log-likelihood over non-pad target tokens.

        Run it inside a `ComputationTape` to get gradients.
        """
        total = None
        dtype = get_default_dtype()
        for t, logprobs in self._teacher_forced(batch):
            gold = pick(logprobs, batch.target[:, t])
            term = (gold * Tensor(batch.target_mask[:, t].astype(dtype))).sum()
            total = term if total is None else total + term
        return scale(total, -1.0 / batch.num_tokens)

    def token_logprobs(self, batch: Batch) -> np.ndarray:
        "log p of every reference token [B×T], 0 on padding"
        out = np.zeros(batch.target.shape, dtype=np.float64)
        rows = np.arange(batch.size)
        for t, logprobs in self._teacher_forced(batch):
            out[:, t] = logprobs.data[rows, batch.target[:, t]]
        return np.where(batch.target_mask, out, 0.0)

    def gradients(self, batch: Batch) -> float:
        "Zero, then fill every parameter gradient; returns the loss"
        self.params.zero_grad()
        with ComputationTape() as tape:
            value = self.loss(batch)
        tape.backward(value)
        return value.item()

    def __repr__(self) -> str:
        return f"<TranslationModel {self.strategy.name} {self.params!r}>"


def neutralize_auxiliary(model: TranslationModel) -> None:
    """Set the combiner so only the main encoder's context gets through.

    With it a multi-encoder model computes the same distributions as a
    baseline holding the same main-path parameters.
    """
    strategy = model.strategy
    if strategy.combiner is None:
        return
    p = model.params.scope("combiner")
    width = model.dims.context_dim
    eye = np.eye(width)
    if strategy.combiner == "concat":
        p["W_c"].data[...] = np.concatenate([eye, np.zeros((width, width))])
        p["b_c"].data[...] = 0
    elif strategy.combiner == "gate":
        p["W_r"].data[...] = 0
        p["W_s"].data[...] = 0
        p["W_t"].data[...] = eye
        if model.config.gate_activation == "tanh":
            p["b_r"].data[...] = 1
        else:
            # sigmoid saturates to 1 only in the limit
            p["b_r"].data[...] = 40
    else:
        k = strategy.num_encoders
        for n in range(k):
            p[f"U_b.{n}"].data[...] = 0
            p[f"U_c.{n}"].data[...] = k * eye if n == 0 else 0
