from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.exceptions import NonFiniteError, ShapeError, TapeError

ArrayLike = Union[np.ndarray, Sequence, float, int]
Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_DEFAULT_DTYPE: ContextVar[np.dtype] = ContextVar("tensor_default_dtype", default=np.dtype(np.float32))
_ACTIVE_TAPES: ContextVar[Tuple["GradTape", ...]] = ContextVar("active_grad_tapes", default=())


def default_dtype() -> np.dtype:
    """Floating dtype used for tensors built from non-float data"""
    return _DEFAULT_DTYPE.get()


@contextmanager
def precision(dtype: Union[str, np.dtype]) -> Iterator[np.dtype]:
    """Switch the default floating precision inside a block.

    Gradient checks run under ``precision("float64")``; everything else
    defaults to 32-bit.
    """
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {resolved}")
    token = _DEFAULT_DTYPE.set(resolved)
    try:
        yield resolved
    finally:
        _DEFAULT_DTYPE.reset(token)


class Tensor:
    """Dense row-major array taking part in differentiable computations.

    The wrapped array is never mutated after construction.
    """

    __slots__ = ("data", "name")

    def __init__(self, data: ArrayLike, dtype: Optional[Union[str, np.dtype]] = None, name: Optional[str] = None):
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = default_dtype()
        array = np.array(data, dtype=dtype, order="C", copy=True)
        if array.ndim == 0:
            array = array.reshape(())
        elif 0 in array.shape:
            raise ShapeError(f"tensor dimensions must be positive, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"tensor {name or '<unnamed>'} holds non-finite values")
        array.flags.writeable = False
        self.data = array
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        # Ops hand over freshly allocated arrays; skip the defensive copy.
        tensor = cls.__new__(cls)
        array = np.asarray(array)
        if not array.flags.c_contiguous:
            array = array.copy()
        array.flags.writeable = False
        tensor.data = array
        tensor.name = None
        return tensor

    @classmethod
    def zeros(cls, shape: Sequence[int], dtype: Optional[Union[str, np.dtype]] = None) -> "Tensor":
        return cls(np.zeros(tuple(shape), dtype=dtype or default_dtype()))

    @classmethod
    def ones(cls, shape: Sequence[int], dtype: Optional[Union[str, np.dtype]] = None) -> "Tensor":
        return cls(np.ones(tuple(shape), dtype=dtype or default_dtype()))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        """Writable copy of the values"""
        return np.array(self.data, copy=True)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, tensor has shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype: Union[str, np.dtype]) -> "Tensor":
        return Tensor(self.data.astype(dtype), name=self.name)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from src.tensor import ops
        return ops.matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        from src.tensor import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from src.tensor import ops
        return ops.sub(self, other)

    def __mul__(self, other: Union["Tensor", float, int]) -> "Tensor":
        from src.tensor import ops
        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"


@dataclass
class TapeEntry:
    """One recorded primitive application"""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Backward


class GradTape:
    """Reverse-mode record of primitive applications.

    Use as a context manager; every primitive evaluated inside the block is
    appended in order. A tape belongs to one training step and one thread.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._token = None

    def __enter__(self) -> "GradTape":
        self._token = _ACTIVE_TAPES.set(_ACTIVE_TAPES.get() + (self,))
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE_TAPES.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward: Backward) -> None:
        self.entries.append(TapeEntry(op=op, inputs=inputs, output=output, backward=backward))

    def gradient(self, loss: Tensor, wrt: Sequence[Tensor]) -> List[Tensor]:
        """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``"""
        if loss.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")

        seen_inputs = {id(t) for entry in self.entries for t in entry.inputs}
        for tensor in wrt:
            if id(tensor) not in seen_inputs and tensor is not loss:
                raise TapeError(f"{tensor!r} was not recorded on this tape")

        grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            upstream = grads.get(id(entry.output))
            if upstream is None:
                continue
            for tensor, contribution in zip(entry.inputs, entry.backward(upstream)):
                if contribution is None:
                    continue
                key = id(tensor)
                if key in grads:
                    grads[key] = grads[key] + contribution
                else:
                    grads[key] = contribution

        result = []
        for tensor in wrt:
            g = grads.get(id(tensor))
            if g is None:
                g = np.zeros_like(tensor.data)
            result.append(Tensor._wrap(np.asarray(g, dtype=tensor.dtype).reshape(tensor.shape)))
        return result


def grad(loss: Tensor, wrt: Sequence[Tensor], tape: GradTape) -> Dict[Tensor, Tensor]:
    """Map each tensor in ``wrt`` to d(loss)/d(tensor)"""
    return dict(zip(wrt, tape.gradient(loss, wrt)))


def emit(op: str, out: np.ndarray, inputs: Tuple[Tensor, ...], backward: Backward) -> Tensor:
    """Wrap a primitive's result, check it is finite and record it on active tapes"""
    if not np.all(np.isfinite(out)):
        shapes = ", ".join(str(t.shape) for t in inputs)
        raise NonFiniteError(f"{op} produced non-finite values (inputs {shapes})")
    result = Tensor._wrap(out)
    for tape in _ACTIVE_TAPES.get():
        tape.record(op, inputs, result, backward)
    return result
