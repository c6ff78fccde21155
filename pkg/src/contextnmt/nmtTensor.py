__doc__ = """
Dense tensors with reverse-mode automatic differentiation.

Every vector and matrix of the translation models lives in a `Tensor`. When a
`ComputationTape` is active on the current thread, operations on tensors that
require a gradient are recorded; `backward` replays the tape in reverse and
accumulates gradients into the leaf tensors.

```python
from contextnmt.nmtTensor import ComputationTape, Tensor, backward, matmul, tanh
import numpy as np

w = Tensor(np.eye(2), requires_grad=True)
x = Tensor([[0.5, -1.0]])

with ComputationTape():
    loss = tanh(matmul(x, w)).sum()
backward(loss)
w.grad  # d loss / d w
```

Only scalar-with-tensor broadcasting is implicit. Anything else (bias rows,
attention over positions) goes through explicit `expand`.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt

from contextnmt.nmtUtils import (
    ContractError,
    DimensionError,
    EmptySupportError,
    OutsideOfTapeError,
    raise_if_outside_tape,
)

__all__ = [
    "ComputationTape",
    "Tensor",
    "backward",
    "elementwise",
    "matmul",
    "precision",
    "softmax",
]

_default_dtype = np.dtype(np.float32)
_local = threading.local()


def set_default_dtype(dtype: npt.DTypeLike) -> None:
    "Set the floating point precision used for new tensors (float32 or float64)"
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Only float32 and float64 are supported, got {dtype}")
    _default_dtype = dtype


def get_default_dtype() -> np.dtype:
    return _default_dtype


@contextmanager
def precision(dtype: npt.DTypeLike) -> Iterator[None]:
    """Temporarily switch the global precision, e.g. to float64 for
    gradient checks."""
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _tape_stack() -> List["ComputationTape"]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Optional["ComputationTape"]:
    "The innermost recording tape of the current thread, if any"
    stack = _tape_stack()
    return stack[-1] if stack else None


class Node:
    "A recorded operation: inputs, output and the rule giving input grads"

    __slots__ = ("inputs", "output", "backward_fn", "tape", "name")

    def __init__(self, inputs, output, backward_fn, tape, name) -> None:
        self.inputs: Tuple["Tensor", ...] = inputs
        self.output: "Tensor" = output
        self.backward_fn: Callable = backward_fn
        self.tape: "ComputationTape" = tape
        self.name: str = name

    def __repr__(self) -> str:
        return f"<Node {self.name} -> {self.output.shape}>"


class ComputationTape:
    """
    Ordered record of the operations executed while the tape is active.

    Tapes are thread local: each thread has its own stack of active tapes, so
    independent tapes may run on separate threads.
    """

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self._recording = False

    def __enter__(self) -> "ComputationTape":
        self._recording = True
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self._recording = False
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            stack.remove(self)

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    @raise_if_outside_tape
    def backward(self, loss: "Tensor") -> None:
        """Replay the tape in reverse, accumulating d loss / d leaf into the
        `grad` of every leaf tensor that requires a gradient.

        Raises:
            ContractError: the loss is not a scalar
        """
        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            return
        if loss._node is None:
            loss._accumulate(np.ones_like(loss.data))
            return

        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            input_grads = node.backward_fn(g)
            for tensor, tensor_grad in zip(node.inputs, input_grads):
                if tensor_grad is None or not tensor.requires_grad:
                    continue
                if tensor._node is None:
                    tensor._accumulate(tensor_grad)
                else:
                    key = id(tensor)
                    if key in grads:
                        tensor_grad = grads[key] + tensor_grad
                    grads[key] = tensor_grad

    def reset(self) -> None:
        "Forget every recorded operation"
        self.nodes = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return f"<ComputationTape nodes={len(self.nodes)} recording={self._recording}>"


Operand = Union["Tensor", float, int, np.ndarray]


class Tensor:
    """
    A dense numeric array with an optional gradient.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_node")

    def __init__(
        self,
        data: npt.ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[npt.DTypeLike] = None,
    ) -> None:
        values = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        if not values.flags.c_contiguous:
            values = values.copy()
        self.data: np.ndarray = values
        "The values, C-ordered"
        self.requires_grad = requires_grad
        "Whether gradients flow into this tensor"
        self.grad: Optional[np.ndarray] = None
        "Accumulated gradient, same shape as data"
        self.name = name
        self._node: Optional[Node] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), dtype=self.data.dtype)

    def _accumulate(self, g: np.ndarray) -> None:
        g = np.asarray(g, dtype=self.data.dtype).reshape(self.data.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def __add__(self, other: Operand) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: Operand) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: Operand) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: Operand) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: Operand) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: Operand) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self, axis: Optional[int] = None) -> "Tensor":
        return tensor_sum(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def __getitem__(self, key) -> "Tensor":
        return index(self, key)

    def __len__(self) -> int:
        return self.data.shape[0]

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return (
            f"<Tensor{label} shape={self.shape} dtype={self.dtype.name} "
            f"requires_grad={self.requires_grad}>"
        )


def _as_tensor(x: Operand) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _result(
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]],
    name: str,
) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        node = Node(tuple(inputs), out, backward_fn, tape, name)
        out._node = node
        tape.record(node)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    "Sum a broadcast gradient back onto a scalar operand"
    if t.data.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


def backward(loss: Tensor) -> None:
    """Populate `grad` of every leaf reachable from `loss`.

    Repeated calls without `zero_grad` accumulate.

    Raises:
        ContractError: the loss is not a scalar
        OutsideOfTapeError: the loss was not produced on a tape
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            loss._accumulate(np.ones_like(loss.data))
            return
        raise OutsideOfTapeError(
            "The loss was not produced by operations recorded on a tape"
        )
    loss._node.tape.backward(loss)


# Linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m×k] and b [k×n].

    Raises:
        DimensionError: the operands are not matrices or inner dimensions differ
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def _backward(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), _backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {x.shape}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


# Elementwise


def add(a: Operand, b: Operand) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("add", a, b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_reduce_to(g, a), _reduce_to(g, b)),
        "add",
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("sub", a, b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_reduce_to(g, a), _reduce_to(-g, b)),
        "sub",
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_reduce_to(g * bd, a), _reduce_to(g * ad, b)),
        "mul",
    )


def scale(x: Tensor, factor: float) -> Tensor:
    x = _as_tensor(x)
    factor = x.data.dtype.type(factor)
    return _result(x.data * factor, (x,), lambda g: (g * factor,), "scale")


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    # exp of the negative magnitude never overflows
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1 / (1 + e), e / (1 + e)).astype(x.data.dtype)
    return _result(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    return _result(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    return _result(np.log(xd), (x,), lambda g: (g / xd,), "log")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "scale": scale,
    "exp": exp,
    "log": log,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch an elementwise operation by name.

    Args:
        op (str): one of add, mul, sub, tanh, sigmoid, scale, exp, log
        *args: operands; `scale` takes a tensor and a python float

    Raises:
        ValueError: unknown operation
        DimensionError: operand shapes differ (scalars excepted)
    """
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"Unknown elementwise operation {op}")
    return fn(*args)


# Reductions and normalization


def tensor_sum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def _backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.repeat(np.expand_dims(g, axis), shape[axis], axis=axis),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), _backward, "sum")


def mean(x: Tensor) -> Tensor:
    return scale(tensor_sum(x), 1.0 / x.size)


def _mask_array(mask, shape) -> Optional[np.ndarray]:
    if mask is None:
        return None
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    m = m.astype(bool)
    if m.shape != shape:
        raise DimensionError(f"softmax: mask {m.shape} does not match logits {shape}")
    return m


def _shifted_logits(x: Tensor, m: Optional[np.ndarray], axis: int) -> np.ndarray:
    xd = x.data
    if m is None:
        return xd - xd.max(axis=axis, keepdims=True)
    if not m.any(axis=axis).all():
        raise EmptySupportError("softmax: every position of a row is masked")
    masked = np.where(m, xd, -np.inf)
    shifted = masked - masked.max(axis=axis, keepdims=True)
    return shifted


def softmax(x: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Normalized exponentials along `axis`; masked positions are exactly 0.

    The maximum over unmasked logits is subtracted before exponentiation.

    Raises:
        EmptySupportError: a row has no unmasked position
        DimensionError: the mask shape differs from the logits
    """
    x = _as_tensor(x)
    m = _mask_array(mask, x.shape)
    e = np.exp(_shifted_logits(x, m, axis))
    if m is not None:
        e = np.where(m, e, 0)
    p = (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)

    def _backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _result(p, (x,), _backward, "softmax")


def log_softmax(x: Tensor, mask=None, axis: int = -1) -> Tensor:
    "Logarithm of `softmax`, computed without forming tiny probabilities"
    x = _as_tensor(x)
    m = _mask_array(mask, x.shape)
    shifted = _shifted_logits(x, m, axis)
    e = np.exp(shifted)
    if m is not None:
        e = np.where(m, e, 0)
    lse = np.log(e.sum(axis=axis, keepdims=True))
    y = (shifted - lse).astype(x.dtype)
    p = np.exp(y)

    def _backward(g):
        if m is not None:
            g = np.where(m, g, 0)
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _result(y, (x,), _backward, "log_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply a
    learned gain and bias of shape [last axis]."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain {gain.shape} and bias {bias.shape} must be ({d},)"
        )
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(xd.var(axis=-1, keepdims=True) + eps)
    xhat = (xd - mu) * inv_std
    gd = gain.data
    lead = tuple(range(xd.ndim - 1))

    def _backward(g):
        gxhat = g * gd
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    out = (xhat * gd + bias.data).astype(x.dtype)
    return _result(out, (x, gain, bias), _backward, "layer_norm")


# Shape manipulation


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}")
    return _result(y.copy(), (x,), lambda g: (g.reshape(old),), "reshape")


def expand(x: Tensor, axis: int, n: int) -> Tensor:
    """Insert a new axis at `axis` and repeat `x` n times along it.

    This is the only way to broadcast a non-scalar tensor.
    """
    x = _as_tensor(x)
    y = np.repeat(np.expand_dims(x.data, axis), n, axis=axis)
    return _result(y, (x,), lambda g: (g.sum(axis=axis),), "expand")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: shapes {[t.shape for t in tensors]} differ off axis {axis}"
        )
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(y, tensors, _backward, "concat")


def index(x: Tensor, key) -> Tensor:
    "Basic slicing (ints and slices); the gradient is scattered back"
    x = _as_tensor(x)
    shape, dtype = x.shape, x.dtype

    def _backward(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[key] += g
        return (gx,)

    return _result(np.array(x.data[key]), (x,), _backward, "index")


def take(table: Tensor, ids: npt.ArrayLike) -> Tensor:
    """Gather rows of a [V×E] table: the embedding lookup.

    Raises:
        ContractError: an id is outside [0, V)
    """
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise ContractError(
            f"take: ids must lie in [0, {n}), got range [{ids.min()}, {ids.max()}]"
        )
    shape, dtype = table.shape, table.dtype

    def _backward(g):
        gt = np.zeros(shape, dtype=dtype)
        np.add.at(gt, ids, g)
        return (gt,)

    return _result(table.data[ids], (table,), _backward, "take")


def pick(x: Tensor, ids: npt.ArrayLike) -> Tensor:
    "Select x[b, ids[b]] from a [B×V] tensor"
    x = _as_tensor(x)
    ids = np.asarray(ids, dtype=np.int64)
    if x.ndim != 2 or ids.shape != (x.shape[0],):
        raise DimensionError(f"pick: cannot pick {ids.shape} from {x.shape}")
    rows = np.arange(x.shape[0])
    shape, dtype = x.shape, x.dtype

    def _backward(g):
        gx = np.zeros(shape, dtype=dtype)
        gx[rows, ids] = g
        return (gx,)

    return _result(x.data[rows, ids], (x,), _backward, "pick")


# Construction helpers


def zeros(shape: Sequence[int], requires_grad: bool = False, name=None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad, name=name)


def ones(shape: Sequence[int], requires_grad: bool = False, name=None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=requires_grad, name=name)


# Gradient checking


def numerical_gradient(
    f: Callable[[], Tensor],
    t: Tensor,
    positions: Optional[Sequence[Tuple[int, ...]]] = None,
    step: float = 1e-5,
) -> np.ndarray:
    """Central differences of the scalar `f()` with respect to entries of `t`.

    Entries not listed in `positions` are left at 0.
    """
    grad = np.zeros_like(t.data)
    if positions is None:
        positions = list(np.ndindex(*t.shape))
    for pos in positions:
        original = t.data[pos]
        t.data[pos] = original + step
        plus = f().item()
        t.data[pos] = original - step
        minus = f().item()
        t.data[pos] = original
        grad[pos] = (plus - minus) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5):
    "Largest elementwise |a - n| / max(|a| + |n|, floor)"
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    return float((np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)).max())
