"""
Dense tensor value type and the gradient tape.

Tensors are plain value carriers over numpy arrays. Differentiable operations
are `Function` subclasses; while a `Tape` is active on the current thread every
operation touching a tensor with ``requires_grad`` is recorded so that a later
``Tape.backward`` can produce exact reverse-mode gradients.
"""

import itertools
import logging
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from bcgn.core.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence[Any]]

_NODE_IDS = itertools.count(1)
_ACTIVE_TAPE: ContextVar[Optional["Tape"]] = ContextVar("bcgn_active_tape", default=None)


class Tensor:
    """
    Dense row-major array with optional gradient-tape participation.

    Data is held as float32 by default; float64 data is kept as-is so that
    checking and oracle code can run in double precision.
    """

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Optional[np.dtype] = None,
    ):
        """
        Args:
            data: Array contents (copied only when a dtype conversion is needed)
            requires_grad: Whether gradients should flow into this tensor
            dtype: Explicit dtype; defaults to float64 for float64 input, else float32
        """
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype == np.float64:
                dtype = np.float64
            else:
                dtype = np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.node_id = next(_NODE_IDS)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        """Return the value of a single-element tensor as a Python float."""
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Return a copy of the underlying array."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """Return a tensor sharing data but excluded from gradient tracking."""
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def astype(self, dtype: np.dtype, requires_grad: Optional[bool] = None) -> "Tensor":
        """Return a converted copy (a fresh leaf)."""
        grad = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.data.astype(dtype), requires_grad=grad, dtype=dtype)

    def __add__(self, other: Union["Tensor", float]) -> "Tensor":
        from bcgn.services.tensor import functional as F

        return F.add(self, other)

    def __radd__(self, other: float) -> "Tensor":
        from bcgn.services.tensor import functional as F

        return F.add(self, other)

    def __sub__(self, other: Union["Tensor", float]) -> "Tensor":
        from bcgn.services.tensor import functional as F

        return F.sub(self, other)

    def __rsub__(self, other: float) -> "Tensor":
        from bcgn.services.tensor import functional as F

        return F.add(F.mul(self, -1.0), other)

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        from bcgn.services.tensor import functional as F

        return F.mul(self, other)

    def __rmul__(self, other: float) -> "Tensor":
        from bcgn.services.tensor import functional as F

        return F.mul(self, other)

    def __neg__(self) -> "Tensor":
        from bcgn.services.tensor import functional as F

        return F.mul(self, -1.0)

    def __repr__(self) -> str:
        return (
            f"Tensor(shape={self.shape}, dtype={self.dtype}, "
            f"requires_grad={self.requires_grad}, node_id={self.node_id})"
        )


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement ``forward`` on raw arrays and ``backward`` mapping the
    gradient of the output to one gradient per input (``None`` for inputs that
    are not differentiable).
    """

    name = "function"

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"Forward pass not implemented for {self.name}")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"Backward pass not implemented for {self.name}")

    @classmethod
    def apply(cls, *tensors: Tensor, **kwargs: Any) -> Tensor:
        """
        Run the forward pass and record it on the active tape.

        Args:
            *tensors: Input tensors
            **kwargs: Non-differentiable parameters forwarded to ``forward``

        Returns:
            Output tensor; it requires grad only if it was recorded

        Raises:
            NumericalError: If the forward pass produced NaN or Inf
        """
        fn = cls()
        out_data = fn.forward(*(t.data for t in tensors), **kwargs)
        if not np.all(np.isfinite(out_data)):
            raise NumericalError(f"{cls.name} produced non-finite values")

        out = Tensor(out_data, dtype=out_data.dtype)
        tape = _ACTIVE_TAPE.get()
        if tape is not None and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            tape.record(fn, tensors, out)
        return out


@dataclass
class _Record:
    fn: Function
    inputs: Tuple[Tensor, ...]
    output_id: int


class Tape:
    """
    Ordered record of differentiable operations.

    A tape is activated with ``with Tape() as tape:``. Records are appended in
    execution order, which is a topological order of the graph. A tape must be
    used from one thread at a time; ``fork``/``merge`` let independent
    sub-graphs be recorded on worker threads and spliced back in a fixed order.
    """

    def __init__(self, parent: Optional["Tape"] = None):
        self._records: List[_Record] = []
        self._leaves: Dict[int, Tensor] = {}
        self._produced: set = set()
        self._parent_produced: frozenset = (
            frozenset(parent._produced | parent._parent_produced) if parent else frozenset()
        )
        self._tokens: List[Any] = []

    def __enter__(self) -> "Tape":
        self._tokens.append(_ACTIVE_TAPE.set(self))
        return self

    def __exit__(self, *exc: Any) -> None:
        _ACTIVE_TAPE.reset(self._tokens.pop())

    def __len__(self) -> int:
        return len(self._records)

    @property
    def leaves(self) -> Dict[int, Tensor]:
        """Tensors requiring grad that entered the graph without being produced on it."""
        return dict(self._leaves)

    def record(self, fn: Function, inputs: Tuple[Tensor, ...], output: Tensor) -> None:
        for t in inputs:
            if (
                t.requires_grad
                and t.node_id not in self._produced
                and t.node_id not in self._parent_produced
            ):
                self._leaves.setdefault(t.node_id, t)
        self._records.append(_Record(fn, tuple(inputs), output.node_id))
        self._produced.add(output.node_id)

    def fork(self) -> "Tape":
        """Create a child tape for recording an independent sub-graph."""
        return Tape(parent=self)

    def merge(self, child: "Tape") -> None:
        """Append a child's records after the current ones."""
        self._records.extend(child._records)
        self._produced |= child._produced
        for node_id, leaf in child._leaves.items():
            if node_id not in self._produced:
                self._leaves.setdefault(node_id, leaf)

    def backward(
        self,
        loss: Tensor,
        seeds: Optional[Dict[int, np.ndarray]] = None,
    ) -> Dict[int, Tensor]:
        """
        Reverse-mode pass from a scalar loss.

        Args:
            loss: Scalar tensor recorded on this tape
            seeds: Extra upstream gradients keyed by node id, added to the seed

        Returns:
            Gradient map {node_id: Tensor} covering every leaf of the tape
            (zeros for leaves the loss does not depend on)

        Raises:
            ShapeError: If the loss is not a scalar
        """
        if loss.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")

        grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
        for node_id, seed in (seeds or {}).items():
            grads[node_id] = grads[node_id] + seed if node_id in grads else seed

        for rec in reversed(self._records):
            upstream = grads.pop(rec.output_id, None)
            if upstream is None:
                continue
            for t, g in zip(rec.inputs, rec.fn.backward(upstream)):
                if g is None or not t.requires_grad:
                    continue
                g = np.asarray(g, dtype=t.data.dtype)
                existing = grads.get(t.node_id)
                grads[t.node_id] = g if existing is None else existing + g

        result: Dict[int, Tensor] = {}
        for node_id, leaf in self._leaves.items():
            g = grads.get(node_id)
            if g is None:
                g = np.zeros_like(leaf.data)
            result[node_id] = Tensor(g.reshape(leaf.shape), dtype=leaf.data.dtype)
        return result


def active_tape() -> Optional[Tape]:
    """Return the tape active on the current thread, if any."""
    return _ACTIVE_TAPE.get()


def backward(loss: Tensor, tape: Optional[Tape] = None) -> Dict[int, Tensor]:
    """
    Compute gradients of a scalar loss for every leaf on the tape.

    Args:
        loss: Scalar loss tensor
        tape: Tape the loss was recorded on; defaults to the active tape

    Returns:
        Gradient map {node_id: Tensor}
    """
    tape = tape or _ACTIVE_TAPE.get()
    if tape is None:
        raise RuntimeError("backward needs a tape; build the loss inside `with Tape()`")
    return tape.backward(loss)


def gradients_for(grads: Dict[int, Tensor], tensors: Iterable[Tensor]) -> List[Tensor]:
    """Look up gradients for tensors, with zeros for tensors off the graph."""
    out = []
    for t in tensors:
        g = grads.get(t.node_id)
        out.append(g if g is not None else Tensor(np.zeros_like(t.data), dtype=t.dtype))
    return out
