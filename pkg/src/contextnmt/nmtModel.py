__doc__ = """
The attentional encoder–decoder every strategy is built from.

* A bidirectional encoder of layer-normalized gated recurrent cells.
* Additive attention over one encoder's states.
* A conditional decoder: a first recurrent sub-step on the previous target
  embedding, attention queried with its output, a second recurrent sub-step
  on the context vector, then a tanh deep output projected onto the target
  embedding table (tied output layer).

All maps are row-vector maps `x @ W` with `W` of shape `[in × out]`, and
every function works on a batch of B sentences at once. Parameters live in
a `ParameterStore` under dotted names such as `encoder.0.fwd.U`.
"""

from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from contextnmt.nmtTensor import (
    Tensor,
    concat,
    expand,
    get_default_dtype,
    layer_norm,
    log_softmax,
    matmul,
    reshape,
    sigmoid,
    softmax,
    sub,
    take,
    tanh,
    tensor_sum,
)
from contextnmt.nmtUtils import ConfigurationError, ContractError

__all__ = [
    "DecoderState",
    "DecoderStep",
    "EncoderTrace",
    "ModelConfig",
    "ModelDims",
    "ParameterStore",
    "attend",
    "decode_step",
    "encode",
    "init_decoder",
]


@dataclass
class ModelDims:
    "Sizes of a model. Defaults are the full-scale ones; shrink them for desk runs"
    src_vocab_size: int
    trg_vocab_size: int
    emb_dim: int = 512
    hidden_dim: int = 1024

    def __post_init__(self):
        for name, value in asdict(self).items():
            if int(value) < 1:
                raise ConfigurationError(f"{name} must be positive, got {value}")

    @property
    def context_dim(self) -> int:
        "Width of encoder states and context vectors"
        return 2 * self.hidden_dim


@dataclass
class ModelConfig:
    """
    Architecture selection: which strategy, its sizes, the gate activation of
    the gate combiner and the initialization seed.
    """

    dims: ModelDims
    strategy: str = "baseline"
    gate_activation: str = "tanh"
    seed: int = 1234
    vocab_fingerprint: Optional[str] = None
    "Source and target vocabulary digests, None when unknown"

    def __post_init__(self):
        if isinstance(self.dims, dict):
            self.dims = ModelDims(**self.dims)
        if self.gate_activation not in ("tanh", "sigmoid"):
            raise ConfigurationError(
                f"gate_activation must be tanh or sigmoid, got {self.gate_activation}"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "ModelConfig":
        return ModelConfig(**data)


class Initializer:
    "Seeded parameter initializers"

    def __init__(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def glorot(self, *shape: int) -> np.ndarray:
        fan_in, fan_out = (shape[0], shape[-1]) if len(shape) > 1 else (shape[0], 1)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-limit, limit, size=shape)

    def orthogonal(self, n: int, blocks: int = 1) -> np.ndarray:
        "`blocks` orthogonal [n×n] matrices side by side"
        mats = []
        for _ in range(blocks):
            q, r = np.linalg.qr(self.rng.normal(size=(n, n)))
            mats.append(q * np.sign(np.diag(r)))
        return np.concatenate(mats, axis=1)

    @staticmethod
    def zeros(*shape: int) -> np.ndarray:
        return np.zeros(shape)

    @staticmethod
    def ones(*shape: int) -> np.ndarray:
        return np.ones(shape)


class ParameterStore:
    """
    Named, trainable tensors in creation order.

    ```python
    store = ParameterStore()
    store.add("decoder.W_init", np.zeros((4, 2)))
    enc = store.scope("encoder.0")
    enc.add("fwd.W", np.eye(3))
    store["encoder.0.fwd.W"] is enc["fwd.W"]
    ```
    """

    def __init__(self) -> None:
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, array: npt.ArrayLike) -> Tensor:
        if name in self._params:
            raise KeyError(f"Parameter {name} already exists")
        tensor = Tensor(array, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def scope(self, prefix: str) -> "ParameterScope":
        return ParameterScope(self, prefix)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            raise KeyError(f"No parameter named {name}")

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def arrays(self) -> Dict[str, np.ndarray]:
        "Copies of every parameter array"
        return {n: p.data.copy() for n, p in self._params.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """Overwrite parameter values in place.

        Raises:
            ConfigurationError: a name is missing or a shape differs
        """
        missing = set(self._params) ^ set(arrays)
        if missing:
            raise ConfigurationError(f"Parameter sets differ on {sorted(missing)}")
        for name, array in arrays.items():
            p = self._params[name]
            if p.shape != tuple(array.shape):
                raise ConfigurationError(
                    f"Parameter {name}: expected shape {p.shape}, got {array.shape}"
                )
            p.data[...] = array

    @property
    def nParameters(self) -> int:
        return sum(p.size for p in self._params.values())

    def __repr__(self) -> str:
        return f"<ParameterStore tensors={len(self)} values={self.nParameters}>"


class ParameterScope:
    "A view of a ParameterStore under a name prefix"

    def __init__(self, store: ParameterStore, prefix: str) -> None:
        self.store = store
        self.prefix = prefix

    def _full(self, name: str) -> str:
        return f"{self.prefix}.{name}" if self.prefix else name

    def add(self, name: str, array: npt.ArrayLike) -> Tensor:
        return self.store.add(self._full(name), array)

    def scope(self, prefix: str) -> "ParameterScope":
        return ParameterScope(self.store, self._full(prefix))

    def __getitem__(self, name: str) -> Tensor:
        return self.store[self._full(name)]

    def names(self) -> List[str]:
        head = self.prefix + "."
        return [n for n in self.store if n.startswith(head)]


# Parameter layouts


def _init_layer_norm(p: ParameterScope, name: str, width: int) -> None:
    p.add(f"{name}.gain", Initializer.ones(width))
    p.add(f"{name}.bias", Initializer.zeros(width))


def init_gru(p: ParameterScope, in_dim: int, hidden: int, init: Initializer) -> None:
    "Gates (`W`, `U`) and candidate (`Wx`, `Ux`) maps, each behind a layer norm"
    p.add("W", init.glorot(in_dim, 2 * hidden))
    p.add("U", init.orthogonal(hidden, 2))
    p.add("Wx", init.glorot(in_dim, hidden))
    p.add("Ux", init.orthogonal(hidden))
    for name, width in (("ln_W", 2 * hidden), ("ln_U", 2 * hidden)):
        _init_layer_norm(p, name, width)
    for name in ("ln_Wx", "ln_Ux"):
        _init_layer_norm(p, name, hidden)


def init_encoder(p: ParameterScope, dims: ModelDims, init: Initializer) -> None:
    init_gru(p.scope("fwd"), dims.emb_dim, dims.hidden_dim, init)
    init_gru(p.scope("bwd"), dims.emb_dim, dims.hidden_dim, init)


def init_attention(p: ParameterScope, dims: ModelDims, init: Initializer) -> None:
    a = dims.context_dim
    p.add("W", init.glorot(dims.hidden_dim, a))
    p.add("U", init.glorot(dims.context_dim, a))
    p.add("b", Initializer.zeros(a))
    p.add("v", init.glorot(a, 1))


def init_decoder_params(p: ParameterStore, dims: ModelDims, init: Initializer) -> None:
    d = p.scope("decoder")
    d.add("W_init", init.glorot(dims.context_dim, dims.hidden_dim))
    d.add("b_init", Initializer.zeros(dims.hidden_dim))
    init_gru(d.scope("gru1"), dims.emb_dim, dims.hidden_dim, init)
    init_gru(d.scope("gru2"), dims.context_dim, dims.hidden_dim, init)
    d.add("W_z", init.glorot(dims.hidden_dim, dims.emb_dim))
    d.add("W_y", init.glorot(dims.emb_dim, dims.emb_dim))
    d.add("W_c", init.glorot(dims.context_dim, dims.emb_dim))
    _init_layer_norm(d, "ln_out", dims.emb_dim)


# Forward computation


def _ln(x: Tensor, p: ParameterScope, name: str) -> Tensor:
    return layer_norm(x, p[f"{name}.gain"], p[f"{name}.bias"])


def _row_mask(mask: Optional[np.ndarray], width: int) -> Optional[Tensor]:
    if mask is None:
        return None
    m = np.asarray(mask, dtype=get_default_dtype()).reshape(-1, 1)
    return Tensor(np.repeat(m, width, axis=1))


def gru_step(
    x: Tensor, h: Tensor, p: ParameterScope, mask: Optional[np.ndarray] = None
) -> Tensor:
    """One gated recurrent update of states h [B×H] on inputs x [B×in].

    Rows where `mask` is 0 keep their previous state.
    """
    hidden = h.shape[1]
    gates = sigmoid(
        _ln(matmul(x, p["W"]), p, "ln_W") + _ln(matmul(h, p["U"]), p, "ln_U")
    )
    reset = gates[:, :hidden]
    update = gates[:, hidden:]
    candidate = tanh(
        _ln(matmul(x, p["Wx"]), p, "ln_Wx")
        + reset * _ln(matmul(h, p["Ux"]), p, "ln_Ux")
    )
    h_new = update * h + sub(1.0, update) * candidate
    m = _row_mask(mask, hidden)
    if m is None:
        return h_new
    return m * h_new + sub(1.0, m) * h


@dataclass
class EncoderTrace:
    """
    What the decoder sees of one encoded input.
    """

    embeddings: Tensor
    "Input embeddings [B×T×emb_dim]"
    states: Tensor
    "Concatenated forward/backward states [B×T×2·hidden_dim]"
    mask: np.ndarray
    "True on real (non-pad) positions [B×T]"
    keys: Optional[Tensor] = None
    "States projected by this encoder's attention [B×T×2·hidden_dim]"

    @property
    def length(self) -> int:
        return self.states.shape[1]

    def select(self, rows: Sequence[int]) -> "EncoderTrace":
        "Reorder or repeat batch rows (inference only, outside a tape)"
        rows = np.asarray(rows, dtype=np.int64)
        return EncoderTrace(
            Tensor(self.embeddings.data[rows]),
            Tensor(self.states.data[rows]),
            self.mask[rows],
            None if self.keys is None else Tensor(self.keys.data[rows]),
        )


def encode(
    ids: np.ndarray, mask: np.ndarray, embeddings: Tensor, p: ParameterScope
) -> EncoderTrace:
    """Run the bidirectional encoder over a padded batch.

    Args:
        ids (np.ndarray): token ids [B×T]
        mask (np.ndarray): True on real positions [B×T]
        embeddings (Tensor): the embedding table of the input language [V×E]
        p (ParameterScope): the encoder's parameters (`fwd.*`, `bwd.*`)

    Raises:
        ContractError: empty input or an id outside the embedding table
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ContractError(f"encode needs a non-empty [B×T] batch, got {ids.shape}")
    mask = np.asarray(mask, dtype=bool)
    batch, length = ids.shape
    hidden = p["fwd.Ux"].shape[0]
    dtype = get_default_dtype()

    embs = [take(embeddings, ids[:, t]) for t in range(length)]

    h = Tensor(np.zeros((batch, hidden), dtype=dtype))
    forward = []
    for t in range(length):
        h = gru_step(embs[t], h, p.scope("fwd"), mask[:, t])
        forward.append(h)

    h = Tensor(np.zeros((batch, hidden), dtype=dtype))
    backward: List[Optional[Tensor]] = [None] * length
    for t in reversed(range(length)):
        h = gru_step(embs[t], h, p.scope("bwd"), mask[:, t])
        backward[t] = h

    states = concat(
        [
            reshape(concat([f, b], axis=-1), (batch, 1, 2 * hidden))
            for f, b in zip(forward, backward)
        ],
        axis=1,
    )
    emb_dim = embeddings.shape[1]
    stacked = concat([reshape(e, (batch, 1, emb_dim)) for e in embs], axis=1)
    return EncoderTrace(stacked, states, mask)


def project_keys(trace: EncoderTrace, p: ParameterScope) -> Tensor:
    "Attention keys U·h_j of every position, computed once per sentence"
    batch, length, width = trace.states.shape
    flat = reshape(trace.states, (batch * length, width))
    keys = matmul(flat, p["U"])
    return reshape(keys, (batch, length, keys.shape[1]))


def attend(
    query: Tensor, trace: EncoderTrace, p: ParameterScope
) -> Tuple[Tensor, Tensor]:
    """Additive attention of a decoder query over one encoder.

    Args:
        query (Tensor): decoder states [B×hidden_dim]
        trace (EncoderTrace): the encoded input
        p (ParameterScope): this encoder's attention (`W`, `U`, `b`, `v`)

    Returns:
        Tuple[Tensor, Tensor]: context vectors [B×2·hidden_dim] and attention
        weights α [B×T], zero on padding
    """
    batch, length, width = trace.states.shape
    keys = trace.keys if trace.keys is not None else project_keys(trace, p)
    att = keys.shape[2]
    q = matmul(query, p["W"]) + expand(p["b"], 0, batch)
    energy = tanh(keys + expand(q, 1, length))
    flat = reshape(energy, (batch * length, att))
    scores = reshape(matmul(flat, p["v"]), (batch, length))
    alpha = softmax(scores, mask=trace.mask, axis=-1)
    context = tensor_sum(expand(alpha, 2, width) * trace.states, axis=1)
    return context, alpha


def init_decoder(traces: Sequence[EncoderTrace], p: ParameterStore) -> "DecoderState":
    """z_0 = tanh(W_init · mean_j h_j + b_init) over the current sentence.

    Only the first (main) trace is used.
    """
    if not traces:
        raise ContractError("init_decoder needs at least one encoder trace")
    main = traces[0]
    batch, length, width = main.states.shape
    m = main.mask.astype(get_default_dtype())
    lengths = np.maximum(m.sum(axis=1, keepdims=True), 1)
    summed = tensor_sum(main.states * expand(Tensor(m), 2, width), axis=1)
    mean = summed * Tensor(np.repeat(1.0 / lengths, width, axis=1))
    z = tanh(matmul(mean, p["decoder.W_init"]) + expand(p["decoder.b_init"], 0, batch))
    return DecoderState(z)


@dataclass
class DecoderState:
    """
    Recurrent decoder state between output steps.
    """

    z: Tensor
    "Decoder state [B×hidden_dim]"
    prev_ids: Optional[np.ndarray] = None
    "Target ids fed at the last step [B]; None before the first step"
    step: int = 0

    def select(self, rows: Sequence[int]) -> "DecoderState":
        rows = np.asarray(rows, dtype=np.int64)
        prev = None if self.prev_ids is None else self.prev_ids[rows]
        return DecoderState(Tensor(self.z.data[rows]), prev, self.step)


@dataclass
class DecoderStep:
    """
    Everything one decoder step produced.
    """

    state: DecoderState
    context: Tensor
    "c_i [B×2·hidden_dim]"
    output: Tensor
    "Deep output u_i [B×emb_dim]"
    logprobs: Tensor
    "Log of the output distribution [B×V]"
    attention: Dict[str, object] = field(default_factory=dict)
    "`encoders`: list of α [B×T_k] arrays; `beta`: [B×K] for hierarchical models"

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.logprobs.data)


ContextProvider = Callable[[Tensor], Tuple[Tensor, Dict[str, object]]]


def decode_step(
    state: DecoderState,
    prev_ids: Optional[np.ndarray],
    c_provider: ContextProvider,
    p: ParameterStore,
    output_projection: Optional[Tensor] = None,
) -> DecoderStep:
    """One conditional decoder step.

    Args:
        state (DecoderState): z_{i-1}
        prev_ids (np.ndarray, optional): previous target ids [B]; None at the
        first step, which uses a zero embedding
        c_provider (ContextProvider): maps the intermediate state to the
        context vector and attention record
        p (ParameterStore): model parameters
        output_projection (Tensor, optional): `trg_emb` transposed, computed
        once per sentence by the caller. Defaults to computing it here.

    Returns:
        DecoderStep: new state, context, deep output and log-probabilities
    """
    trg_emb = p["trg_emb"]
    batch = state.z.shape[0]
    if prev_ids is None:
        y = Tensor(np.zeros((batch, trg_emb.shape[1]), dtype=get_default_dtype()))
    else:
        y = take(trg_emb, prev_ids)
    d = p.scope("decoder")
    s1 = gru_step(y, state.z, d.scope("gru1"))
    context, attention = c_provider(s1)
    z = gru_step(context, s1, d.scope("gru2"))
    pre = matmul(z, d["W_z"]) + matmul(y, d["W_y"]) + matmul(context, d["W_c"])
    output = tanh(_ln(pre, d, "ln_out"))
    if output_projection is None:
        output_projection = trg_emb.T
    logprobs = log_softmax(matmul(output, output_projection), axis=-1)
    prev = None if prev_ids is None else np.asarray(prev_ids, dtype=np.int64)
    new_state = DecoderState(z, prev, state.step + 1)
    return DecoderStep(new_state, context, output, logprobs, attention)
