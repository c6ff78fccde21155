__doc__ = "Shared errors, decorators and small helpers for contextnmt."

from functools import wraps
from typing import Iterable, Iterator, List, Sequence, Tuple, TypeVar

__all__ = [
    "CheckpointFormatError",
    "ConfigurationError",
    "ContractError",
    "DimensionError",
    "EmptySupportError",
    "NonFiniteGradientError",
    "OutsideOfTapeError",
]

T = TypeVar("T")


class DimensionError(ValueError):
    "Two operands have incompatible shapes"


class EmptySupportError(ValueError):
    "A masked softmax was asked to normalize over zero positions"


class ContractError(ValueError):
    "A precondition of an operation does not hold"


class ConfigurationError(ValueError):
    "A configuration (strategy, config file, ensemble, lexicon) is invalid"


class NonFiniteGradientError(ArithmeticError):
    "A gradient contains NaN or infinite values"


class OutsideOfTapeError(Exception):
    "Backward was requested for a tensor that was not recorded on a tape"


class CheckpointFormatError(Exception):
    "A checkpoint file has an unknown signature or version"


def raise_if_outside_tape(method):
    """Raise an exception if the method is called on a tape that is not recording"""

    @wraps(method)
    def wrapper(self, *args, **kwargs):
        if not self._recording and not self.nodes:
            raise OutsideOfTapeError(
                "This method should be called on a tape that recorded operations"
            )
        return method(self, *args, **kwargs)

    return wrapper


def chunked(items: Sequence[T], size: int) -> Iterator[Sequence[T]]:
    "Yield consecutive slices of at most `size` items"
    if size < 1:
        raise ValueError(f"chunk size must be positive, got {size}")
    for start in range(0, len(items), size):
        yield items[start : start + size]


def split_at_first(seq: Iterable[T], marker: T) -> Tuple[List[T], List[T], bool]:
    """Split a sequence at the first occurrence of `marker`.

    Returns:
        Tuple[list, list, bool]: prefix, suffix (marker excluded) and whether
        the marker was found. When it is not found the prefix is empty and the
        suffix holds the whole sequence.
    """
    items = list(seq)
    try:
        pos = items.index(marker)
    except ValueError:
        return [], items, False
    return items[:pos], items[pos + 1 :], True
