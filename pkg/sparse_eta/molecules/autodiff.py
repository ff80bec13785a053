"""
A minimal reverse-mode gradient tape over numpy arrays.

Operations append a node (value, parents, vector-Jacobian product) to the
tape in evaluation order, so walking the tape backwards visits every node
after all of its consumers. A tape is single-use: :meth:`GradientTape.backward`
consumes it.

Example:
    ```python
    tape = GradientTape()
    w = tape.watch("w", np.array(3.0))
    grads = tape.backward(square(w))
    grads["w"]  # 6.0
    ```
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from sparse_eta.atoms.error_utils import ConsumedTapeError, ValidationError

ArrayLike = Union[np.ndarray, float, int]
Vjp = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Variable:
    """A value recorded on a tape."""

    __slots__ = ("value", "index", "tape")

    def __init__(self, value: np.ndarray, index: int, tape: "GradientTape"):
        self.value = value
        self.index = index
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __add__(self, other: Union["Variable", ArrayLike]) -> "Variable":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Variable":
        return add(other, self)

    def __sub__(self, other: Union["Variable", ArrayLike]) -> "Variable":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Variable":
        return sub(other, self)

    def __mul__(self, other: Union["Variable", ArrayLike]) -> "Variable":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Variable":
        return mul(other, self)

    def __truediv__(self, other: Union["Variable", ArrayLike]) -> "Variable":
        return div(self, other)

    def __matmul__(self, other: "Variable") -> "Variable":
        return matmul(self, other)

    def __neg__(self) -> "Variable":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"Variable(shape={self.value.shape}, index={self.index})"


@dataclass
class _TapeNode:
    parents: Tuple[int, ...]
    vjp: Optional[Vjp]


class GradientTape:
    """
    Records one forward evaluation and replays it backwards once.

    Watched arrays are the differentiable inputs; everything else enters as a
    constant.
    """

    def __init__(self) -> None:
        self._values: List[np.ndarray] = []
        self._nodes: List[_TapeNode] = []
        self._watched: Dict[str, int] = {}
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def consumed(self) -> bool:
        return self._consumed

    def watch(self, name: str, value: ArrayLike) -> Variable:
        if name in self._watched:
            raise ValidationError(
                message=f"Parameter '{name}' is already watched",
                input_value=name,
                validation_type="tape_watch"
            )
        var = self._push(np.array(value, dtype=float), (), None)
        self._watched[name] = var.index
        return var

    def watch_all(self, arrays: Mapping[str, np.ndarray]) -> Dict[str, Variable]:
        return {name: self.watch(name, value) for name, value in arrays.items()}

    def constant(self, value: ArrayLike) -> Variable:
        return self._push(np.asarray(value, dtype=float), (), None)

    def _push(self, value: np.ndarray, parents: Tuple[int, ...], vjp: Optional[Vjp]) -> Variable:
        if self._consumed:
            raise ConsumedTapeError("Cannot record on a tape that has already been replayed")
        self._values.append(value)
        self._nodes.append(_TapeNode(parents=parents, vjp=vjp))
        return Variable(value, len(self._values) - 1, self)

    def record(self, value: np.ndarray, parents: Sequence[Variable], vjp: Vjp) -> Variable:
        """Append the result of an operation together with its vector-Jacobian product."""
        for parent in parents:
            if parent.tape is not self:
                raise ValidationError(
                    message="Operands belong to different tapes",
                    validation_type="tape_mismatch"
                )
        return self._push(value, tuple(p.index for p in parents), vjp)

    def backward(self, loss: Variable) -> Dict[str, np.ndarray]:
        """
        Gradients of a scalar ``loss`` with respect to every watched array.

        Watched arrays the loss does not depend on get zero gradients.

        Raises:
            ConsumedTapeError: If the tape was already replayed
            ValidationError: If ``loss`` is not a scalar on this tape
        """
        if self._consumed:
            raise ConsumedTapeError("Gradient tape has already been consumed")
        if loss.tape is not self or loss.value.size != 1:
            raise ValidationError(
                message="backward() needs a scalar recorded on this tape",
                input_value=str(loss.value.shape),
                validation_type="tape_loss"
            )
        self._consumed = True

        adjoints: List[Optional[np.ndarray]] = [None] * len(self._nodes)
        adjoints[loss.index] = np.ones_like(loss.value)
        for idx in range(loss.index, -1, -1):
            adj = adjoints[idx]
            node = self._nodes[idx]
            if adj is None or node.vjp is None:
                continue
            for parent, grad in zip(node.parents, node.vjp(adj)):
                if grad is None:
                    continue
                if adjoints[parent] is None:
                    adjoints[parent] = np.array(grad, dtype=float)
                else:
                    adjoints[parent] = adjoints[parent] + grad

        grads: Dict[str, np.ndarray] = {}
        for name, idx in self._watched.items():
            adj = adjoints[idx]
            grads[name] = np.zeros_like(self._values[idx]) if adj is None else adj.reshape(
                self._values[idx].shape
            )
        self._values.clear()
        return grads


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undo numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _lift(x: Union[Variable, ArrayLike], tape: GradientTape) -> Variable:
    return x if isinstance(x, Variable) else tape.constant(x)


def _binary_operands(
    a: Union[Variable, ArrayLike], b: Union[Variable, ArrayLike]
) -> Tuple[GradientTape, Variable, Variable]:
    tape = a.tape if isinstance(a, Variable) else getattr(b, "tape", None)
    if tape is None:
        raise ValidationError(
            message="At least one operand must be a Variable",
            validation_type="tape_operand"
        )
    return tape, _lift(a, tape), _lift(b, tape)


def add(a: Union[Variable, ArrayLike], b: Union[Variable, ArrayLike]) -> Variable:
    tape, a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: Union[Variable, ArrayLike], b: Union[Variable, ArrayLike]) -> Variable:
    tape, a, b = _binary_operands(a, b)
    sa, sb = a.shape, b.shape
    return tape.record(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    )


def mul(a: Union[Variable, ArrayLike], b: Union[Variable, ArrayLike]) -> Variable:
    tape, a, b = _binary_operands(a, b)
    av, bv = a.value, b.value
    return tape.record(
        av * bv, (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a: Union[Variable, ArrayLike], b: Union[Variable, ArrayLike]) -> Variable:
    tape, a, b = _binary_operands(a, b)
    av, bv = a.value, b.value
    out = av / bv
    return tape.record(
        out, (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape))
    )


def scale(a: Variable, factor: float) -> Variable:
    return a.tape.record(a.value * factor, (a,), lambda g: (g * factor,))


def matmul(a: Variable, b: Variable) -> Variable:
    tape, a, b = _binary_operands(a, b)
    av, bv = a.value, b.value
    return tape.record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def relu(a: Variable) -> Variable:
    mask = a.value > 0.0
    return a.tape.record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def softplus(a: Variable) -> Variable:
    """``log(1 + exp(a))`` computed without overflow."""
    x = a.value
    sigmoid = 0.5 * (1.0 + np.tanh(0.5 * x))
    return a.tape.record(np.logaddexp(0.0, x), (a,), lambda g: (g * sigmoid,))


def exp(a: Variable) -> Variable:
    out = np.exp(a.value)
    return a.tape.record(out, (a,), lambda g: (g * out,))


def log(a: Variable) -> Variable:
    x = a.value
    return a.tape.record(np.log(x), (a,), lambda g: (g / x,))


def square(a: Variable) -> Variable:
    x = a.value
    return a.tape.record(x * x, (a,), lambda g: (2.0 * g * x,))


def clamp(a: Variable, low: float, high: float) -> Variable:
    """Elementwise clip; the gradient is zero where the bound is active."""
    x = a.value
    inside = (x >= low) & (x <= high)
    return a.tape.record(np.clip(x, low, high), (a,), lambda g: (g * inside,))


def reduce_sum(a: Variable) -> Variable:
    shape = a.shape
    return a.tape.record(np.asarray(a.value.sum()), (a,), lambda g: (np.broadcast_to(g, shape),))


def reduce_mean(a: Variable) -> Variable:
    shape = a.shape
    n = max(a.value.size, 1)
    return a.tape.record(
        np.asarray(a.value.sum() / n), (a,),
        lambda g: (np.broadcast_to(g / n, shape),)
    )


def gather_rows(a: Variable, index: np.ndarray) -> Variable:
    """``a[index]``; repeated indices accumulate their gradients."""
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def vjp(g: np.ndarray) -> Tuple[np.ndarray]:
        out = np.zeros(shape, dtype=float)
        np.add.at(out, index, g)
        return (out,)

    return a.tape.record(a.value[index], (a,), vjp)


def segment_sum(a: Variable, segment_ids: np.ndarray, num_segments: int) -> Variable:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``segment_ids``."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    out = np.zeros((num_segments,) + a.shape[1:], dtype=float)
    np.add.at(out, segment_ids, a.value)
    return a.tape.record(out, (a,), lambda g: (g[segment_ids],))


def scale_rows(a: Variable, weights: np.ndarray) -> Variable:
    """Multiply row ``i`` of a 2-D ``a`` by the constant ``weights[i]``."""
    w = np.asarray(weights, dtype=float)[:, None]
    return a.tape.record(a.value * w, (a,), lambda g: (g * w,))


def concat_cols(parts: Sequence[Variable]) -> Variable:
    if not parts:
        raise ValidationError(message="Nothing to concatenate", validation_type="tape_operand")
    tape = parts[0].tape
    bounds = np.cumsum([p.shape[1] for p in parts])[:-1]
    return tape.record(
        np.concatenate([p.value for p in parts], axis=1),
        tuple(parts),
        lambda g: tuple(np.split(g, bounds, axis=1))
    )


@dataclass
class AdamState:
    """First/second moment estimates and the step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update.

    Returns new parameter arrays and a new state; the inputs are not modified.
    Parameters missing from ``grads`` are treated as having zero gradient.
    """
    t = state.t + 1
    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, value in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(value)
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - beta2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = value - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(m=new_m, v=new_v, t=t)
