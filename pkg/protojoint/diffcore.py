"""Reverse-mode differentiation over dense float64 matrices.

A :class:`DiffGraph` is an append-only record of primitive applications.
Node values are computed lazily by :meth:`DiffGraph.evaluate` and memoized
until a parameter changes. There is no broadcasting: every primitive
documents the exact shapes it accepts.
"""

from __future__ import annotations

import abc
import logging
from collections.abc import Sequence
from dataclasses import dataclass
from dataclasses import field as dataclass_field
from typing import Any, ClassVar

import numpy as np

from protojoint.exceptions import DomainError, ShapeError
from protojoint.types import Matrix

log = logging.getLogger(__name__)

Shape = tuple[int, int]

LEAF_OPS = ("parameter", "constant")


def as_matrix(values: Any) -> Matrix:
    """Coerce scalars, vectors and matrices to a 2-D float64 array."""
    array = np.array(values, dtype=np.float64)

    if array.ndim == 0:
        return array.reshape(1, 1)

    if array.ndim == 1:
        return array.reshape(1, -1)

    if array.ndim != 2:  # noqa: PLR2004
        raise ShapeError(f"expected at most 2 dimensions, got {array.ndim}")

    return array


@dataclass
class Tensor:
    """A dense real matrix.

    Attributes:
        values: Row-major float64 values, always two-dimensional.
        requires_grad: Whether gradients are accumulated for this tensor.
    """

    values: Matrix
    requires_grad: bool = False

    def __post_init__(self):
        self.values = as_matrix(self.values)

        if not np.all(np.isfinite(self.values)):
            raise DomainError("tensor contains non-finite values")

    @property
    def shape(self) -> Shape:
        rows, cols = self.values.shape
        return rows, cols

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])


@dataclass(frozen=True, eq=False)
class Node:
    """One entry of a :class:`DiffGraph`.

    Attributes:
        index: Position in the graph; inputs always have smaller indices.
        op: Primitive name, or ``parameter``/``constant`` for leaves.
        inputs: Indices of the input nodes.
        shape: Output shape, inferred when the node is recorded.
        requires_grad: True when a parameter is reachable through the inputs.
        attrs: Primitive options (scale factors, gather indices).
        label: Free-form provenance shown in error messages.
    """

    index: int
    op: str
    inputs: tuple[int, ...]
    shape: Shape
    requires_grad: bool
    attrs: dict[str, Any] = dataclass_field(default_factory=dict)
    label: str = ""

    def describe(self) -> str:
        suffix = f" ({self.label})" if self.label else ""
        return f"node {self.index} [{self.op}]{suffix}"


PRIMITIVES: dict[str, type[BasePrimitive]] = {}


class BasePrimitive(abc.ABC):
    """Abstract base class for all graph primitives.

    Subclasses declare a unique ``name`` and are registered automatically.
    """

    name: ClassVar[str]
    arity: ClassVar[int | None] = 1

    def __init_subclass__(cls, **kwargs: Any):
        super().__init_subclass__(**kwargs)
        PRIMITIVES[cls.name] = cls

    @classmethod
    @abc.abstractmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        raise NotImplementedError

    @classmethod
    @abc.abstractmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        raise NotImplementedError

    @classmethod
    @abc.abstractmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        raise NotImplementedError


def _same_shape(shapes: list[Shape]) -> Shape:
    first = shapes[0]
    for shape in shapes[1:]:
        if shape != first:
            raise ShapeError(f"operand shapes differ: {first} vs {shape}")
    return first


def _nonempty_rows(shape: Shape) -> Shape:
    if shape[1] == 0:
        raise ShapeError(f"row operation over zero columns {shape}")
    return shape


def _softmax(x: Matrix) -> Matrix:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _logsumexp(x: Matrix) -> Matrix:
    peak = x.max(axis=1, keepdims=True)
    return peak + np.log(np.exp(x - peak).sum(axis=1, keepdims=True))


class MatMul(BasePrimitive):
    name = "matmul"
    arity = 2

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        (m, k), (k2, n) = shapes
        if k != k2:
            raise ShapeError(f"inner dimensions differ: {shapes[0]} @ {shapes[1]}")
        return m, n

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0] @ xs[1]

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad @ xs[1].T, xs[0].T @ grad]


class Transpose(BasePrimitive):
    name = "transpose"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        rows, cols = shapes[0]
        return cols, rows

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0].T.copy()

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad.T]


class ConcatCols(BasePrimitive):
    name = "concat_cols"
    arity = None

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        rows = {shape[0] for shape in shapes}
        if len(rows) != 1:
            raise ShapeError(f"row counts differ: {shapes}")
        return shapes[0][0], sum(shape[1] for shape in shapes)

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return np.concatenate(xs, axis=1)

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        offsets = np.cumsum([x.shape[1] for x in xs])[:-1]
        return list(np.split(grad, offsets, axis=1))


class ConcatRows(BasePrimitive):
    name = "concat_rows"
    arity = None

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        cols = {shape[1] for shape in shapes}
        if len(cols) != 1:
            raise ShapeError(f"column counts differ: {shapes}")
        return sum(shape[0] for shape in shapes), shapes[0][1]

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return np.concatenate(xs, axis=0)

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        offsets = np.cumsum([x.shape[0] for x in xs])[:-1]
        return list(np.split(grad, offsets, axis=0))


class RowSoftmax(BasePrimitive):
    name = "row_softmax"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return _nonempty_rows(shapes[0])

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return _softmax(xs[0])

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [out * (grad - (grad * out).sum(axis=1, keepdims=True))]


class RowLogSoftmax(BasePrimitive):
    name = "row_log_softmax"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return _nonempty_rows(shapes[0])

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0] - _logsumexp(xs[0])

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad - np.exp(out) * grad.sum(axis=1, keepdims=True)]


class RowLogSumExp(BasePrimitive):
    name = "row_logsumexp"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        rows, _ = _nonempty_rows(shapes[0])
        return rows, 1

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return _logsumexp(xs[0])

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad * np.exp(xs[0] - out)]


class ColMean(BasePrimitive):
    """Column-wise mean over rows: ``m x n -> 1 x n``."""

    name = "col_mean"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        rows, cols = shapes[0]
        if rows == 0:
            raise ShapeError("mean over zero rows")
        return 1, cols

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0].mean(axis=0, keepdims=True)

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        rows = xs[0].shape[0]
        return [np.repeat(grad / rows, rows, axis=0)]


class RowMean(BasePrimitive):
    """Row-wise mean over columns: ``m x n -> m x 1``."""

    name = "row_mean"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        rows, _ = _nonempty_rows(shapes[0])
        return rows, 1

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0].mean(axis=1, keepdims=True)

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        cols = xs[0].shape[1]
        return [np.repeat(grad / cols, cols, axis=1)]


class Add(BasePrimitive):
    name = "add"
    arity = 2

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return _same_shape(shapes)

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0] + xs[1]

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad, grad]


class Sub(BasePrimitive):
    name = "sub"
    arity = 2

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return _same_shape(shapes)

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0] - xs[1]

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad, -grad]


class Mul(BasePrimitive):
    name = "mul"
    arity = 2

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return _same_shape(shapes)

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0] * xs[1]

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad * xs[1], grad * xs[0]]


class Exp(BasePrimitive):
    name = "exp"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return shapes[0]

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        with np.errstate(over="ignore"):
            return np.exp(xs[0])

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad * out]


class Log(BasePrimitive):
    name = "log"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return shapes[0]

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        if np.any(xs[0] <= 0):
            raise DomainError("nonpositive input to log")
        return np.log(xs[0])

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad / xs[0]]


class Tanh(BasePrimitive):
    name = "tanh"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return shapes[0]

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return np.tanh(xs[0])

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad * (1.0 - out * out)]


class Sigmoid(BasePrimitive):
    name = "sigmoid"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return shapes[0]

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        # tanh form never overflows
        return 0.5 * (1.0 + np.tanh(0.5 * xs[0]))

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad * out * (1.0 - out)]


class SquaredDistance(BasePrimitive):
    """Pairwise squared Euclidean distances: ``(m x d, n x d) -> m x n``."""

    name = "sq_dist"
    arity = 2

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        (m, d), (n, d2) = shapes
        if d != d2:
            raise ShapeError(f"vector dimensions differ: {shapes[0]} vs {shapes[1]}")
        return m, n

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        diff = xs[0][:, None, :] - xs[1][None, :, :]
        return (diff * diff).sum(axis=2)

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        a, b = xs
        grad_a = 2.0 * (grad.sum(axis=1, keepdims=True) * a - grad @ b)
        grad_b = 2.0 * (grad.sum(axis=0)[:, None] * b - grad.T @ a)
        return [grad_a, grad_b]


class Inner(BasePrimitive):
    """Pairwise inner products: ``(m x d, n x d) -> m x n``."""

    name = "inner"
    arity = 2

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        (m, d), (n, d2) = shapes
        if d != d2:
            raise ShapeError(f"vector dimensions differ: {shapes[0]} vs {shapes[1]}")
        return m, n

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0] @ xs[1].T

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad @ xs[1], grad.T @ xs[0]]


class Scale(BasePrimitive):
    name = "scale"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return shapes[0]

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0] * attrs["factor"]

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [grad * attrs["factor"]]


class GatherRows(BasePrimitive):
    name = "gather_rows"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        rows, cols = shapes[0]
        index = attrs["index"]
        if index.size and (index.min() < 0 or index.max() >= rows):
            raise ShapeError(f"row index out of range for {shapes[0]}")
        return int(index.size), cols

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0][attrs["index"]]

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        result = np.zeros_like(xs[0])
        np.add.at(result, attrs["index"], grad)
        return [result]


class Pick(BasePrimitive):
    """Select individual entries ``(rows[k], cols[k])`` into a ``k x 1`` column."""

    name = "pick"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        rows, cols = shapes[0]
        r, c = attrs["rows"], attrs["cols"]
        if r.shape != c.shape:
            raise ShapeError("pick needs as many row as column indices")
        if r.size and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise ShapeError(f"entry index out of range for {shapes[0]}")
        return int(r.size), 1

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return xs[0][attrs["rows"], attrs["cols"]].reshape(-1, 1)

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        result = np.zeros_like(xs[0])
        np.add.at(result, (attrs["rows"], attrs["cols"]), grad[:, 0])
        return [result]


class Sum(BasePrimitive):
    name = "sum"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return 1, 1

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        return np.array([[xs[0].sum()]])

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        return [np.full(xs[0].shape, grad[0, 0])]


class NormalizeRows(BasePrimitive):
    name = "normalize_rows"

    @classmethod
    def infer_shape(cls, shapes: list[Shape], attrs: dict[str, Any]) -> Shape:
        return _nonempty_rows(shapes[0])

    @classmethod
    def forward(cls, xs: list[Matrix], attrs: dict[str, Any]) -> Matrix:
        norms = np.sqrt((xs[0] * xs[0]).sum(axis=1, keepdims=True))
        if np.any(norms < 1e-12):  # noqa: PLR2004
            raise DomainError("zero-norm row cannot be normalized")
        return xs[0] / norms

    @classmethod
    def backward(cls, grad: Matrix, xs: list[Matrix], out: Matrix, attrs: dict[str, Any]) -> list[Matrix | None]:
        norms = np.sqrt((xs[0] * xs[0]).sum(axis=1, keepdims=True))
        return [(grad - out * (grad * out).sum(axis=1, keepdims=True)) / norms]


class DiffGraph:
    """Append-only computation record.

    Leaves are either named parameters (differentiable) or constants. Every
    other node applies a registered primitive to earlier nodes.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.parameters: dict[str, int] = {}
        self._leaves: dict[int, Matrix] = {}
        self._values: dict[int, Matrix] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def parameter(self, name: str, value: Tensor | Matrix) -> Node:
        """Register a named parameter leaf. Registering a name twice returns the same node."""
        if name in self.parameters:
            return self.nodes[self.parameters[name]]

        values = value.values if isinstance(value, Tensor) else Tensor(value).values
        node = self._record("parameter", (), values.shape, requires_grad=True, label=name)
        self._leaves[node.index] = values.copy()
        self.parameters[name] = node.index
        return node

    def constant(self, value: Any, label: str = "") -> Node:
        values = as_matrix(value)
        values.setflags(write=False)
        node = self._record("constant", (), (values.shape[0], values.shape[1]), requires_grad=False, label=label)
        self._leaves[node.index] = values
        return node

    def set_parameter(self, name: str, value: Matrix) -> None:
        index = self.parameters[name]
        values = as_matrix(value)
        if values.shape != self.nodes[index].shape:
            raise ShapeError(f"parameter {name} has shape {self.nodes[index].shape}, got {values.shape}")
        self._leaves[index] = values.copy()
        self._values.clear()

    def parameter_value(self, name: str) -> Matrix:
        return self._leaves[self.parameters[name]]

    def _record(
        self,
        op: str,
        inputs: tuple[int, ...],
        shape: Shape,
        requires_grad: bool,
        attrs: dict[str, Any] | None = None,
        label: str = "",
    ) -> Node:
        node = Node(
            index=len(self.nodes),
            op=op,
            inputs=inputs,
            shape=shape,
            requires_grad=requires_grad,
            attrs=attrs or {},
            label=label,
        )
        self.nodes.append(node)
        return node

    def apply(self, op: str, inputs: Sequence[Node], label: str = "", **attrs: Any) -> Node:
        primitive = PRIMITIVES[op]

        if primitive.arity is not None and len(inputs) != primitive.arity:
            raise ShapeError(f"{op} takes {primitive.arity} inputs, got {len(inputs)}")
        if not inputs:
            raise ShapeError(f"{op} needs at least one input")

        for node in inputs:
            self._check_owned(node)

        try:
            shape = primitive.infer_shape([node.shape for node in inputs], attrs)
        except ShapeError as err:
            suffix = f" ({label})" if label else ""
            raise ShapeError(f"{op} at node {len(self.nodes)}{suffix}: {err}") from err

        return self._record(
            op,
            tuple(node.index for node in inputs),
            shape,
            requires_grad=any(node.requires_grad for node in inputs),
            attrs=attrs,
            label=label,
        )

    def _check_owned(self, node: Node) -> None:
        if node.index >= len(self.nodes) or self.nodes[node.index] is not node:
            raise ShapeError(f"{node.describe()} does not belong to this graph")

    # primitive shorthands

    def matmul(self, a: Node, b: Node, label: str = "") -> Node:
        return self.apply("matmul", [a, b], label)

    def transpose(self, a: Node, label: str = "") -> Node:
        return self.apply("transpose", [a], label)

    def concat_cols(self, parts: Sequence[Node], label: str = "") -> Node:
        return parts[0] if len(parts) == 1 else self.apply("concat_cols", parts, label)

    def concat_rows(self, parts: Sequence[Node], label: str = "") -> Node:
        return parts[0] if len(parts) == 1 else self.apply("concat_rows", parts, label)

    def row_softmax(self, a: Node, label: str = "") -> Node:
        return self.apply("row_softmax", [a], label)

    def row_log_softmax(self, a: Node, label: str = "") -> Node:
        return self.apply("row_log_softmax", [a], label)

    def row_logsumexp(self, a: Node, label: str = "") -> Node:
        return self.apply("row_logsumexp", [a], label)

    def col_mean(self, a: Node, label: str = "") -> Node:
        return self.apply("col_mean", [a], label)

    def row_mean(self, a: Node, label: str = "") -> Node:
        return self.apply("row_mean", [a], label)

    def add(self, a: Node, b: Node, label: str = "") -> Node:
        return self.apply("add", [a, b], label)

    def sub(self, a: Node, b: Node, label: str = "") -> Node:
        return self.apply("sub", [a, b], label)

    def mul(self, a: Node, b: Node, label: str = "") -> Node:
        return self.apply("mul", [a, b], label)

    def exp(self, a: Node, label: str = "") -> Node:
        return self.apply("exp", [a], label)

    def log(self, a: Node, label: str = "") -> Node:
        return self.apply("log", [a], label)

    def tanh(self, a: Node, label: str = "") -> Node:
        return self.apply("tanh", [a], label)

    def sigmoid(self, a: Node, label: str = "") -> Node:
        return self.apply("sigmoid", [a], label)

    def sq_dist(self, a: Node, b: Node, label: str = "") -> Node:
        return self.apply("sq_dist", [a, b], label)

    def inner(self, a: Node, b: Node, label: str = "") -> Node:
        return self.apply("inner", [a, b], label)

    def scale(self, a: Node, factor: float, label: str = "") -> Node:
        return self.apply("scale", [a], label, factor=float(factor))

    def gather_rows(self, a: Node, index: Sequence[int] | np.ndarray, label: str = "") -> Node:
        return self.apply("gather_rows", [a], label, index=np.asarray(index, dtype=np.intp).reshape(-1))

    def pick(self, a: Node, rows: Sequence[int], cols: Sequence[int], label: str = "") -> Node:
        return self.apply(
            "pick",
            [a],
            label,
            rows=np.asarray(rows, dtype=np.intp).reshape(-1),
            cols=np.asarray(cols, dtype=np.intp).reshape(-1),
        )

    def sum(self, a: Node, label: str = "") -> Node:
        return self.apply("sum", [a], label)

    def normalize_rows(self, a: Node, label: str = "") -> Node:
        return self.apply("normalize_rows", [a], label)

    # evaluation

    def _ancestors(self, root: Node) -> list[int]:
        seen = {root.index}
        stack = [root.index]

        while stack:
            for parent in self.nodes[stack.pop()].inputs:
                if parent not in seen:
                    seen.add(parent)
                    stack.append(parent)

        return sorted(seen)

    def value(self, root: Node) -> Matrix:
        """Return the memoized forward value of ``root`` as a numpy array."""
        self._check_owned(root)

        if root.index in self._values:
            return self._values[root.index]

        for index in self._ancestors(root):
            if index in self._values:
                continue

            node = self.nodes[index]

            if node.op in LEAF_OPS:
                self._values[index] = self._leaves[index]
                continue

            xs = [self._values[i] for i in node.inputs]
            try:
                out = PRIMITIVES[node.op].forward(xs, node.attrs)
            except DomainError as err:
                raise DomainError(f"{node.describe()}: {err}") from err

            if not np.all(np.isfinite(out)):
                raise DomainError(f"{node.describe()}: non-finite values produced")

            self._values[index] = out

        return self._values[root.index]

    def evaluate(self, root: Node) -> Tensor:
        return Tensor(self.value(root).copy())

    def scalar(self, root: Node) -> float:
        if root.shape != (1, 1):
            raise ShapeError(f"{root.describe()} is not a scalar, shape {root.shape}")
        return float(self.value(root)[0, 0])

    def gradients(self, loss: Node) -> dict[str, Matrix]:
        """Exact reverse-mode gradients of a scalar node w.r.t. every parameter.

        Parameters that ``loss`` does not depend on get zero gradients.
        """
        if loss.shape != (1, 1):
            raise ShapeError(f"gradients need a 1x1 loss, {loss.describe()} has shape {loss.shape}")

        self.value(loss)
        adjoints: dict[int, Matrix] = {loss.index: np.ones((1, 1))}

        for index in reversed(self._ancestors(loss)):
            node = self.nodes[index]
            grad = adjoints.get(index)

            if grad is None or node.op in LEAF_OPS or not node.requires_grad:
                continue

            xs = [self._values[i] for i in node.inputs]
            input_grads = PRIMITIVES[node.op].backward(grad, xs, self._values[index], node.attrs)

            for parent, parent_grad in zip(node.inputs, input_grads, strict=True):
                if parent_grad is None or not self.nodes[parent].requires_grad:
                    continue
                if parent in adjoints:
                    adjoints[parent] = adjoints[parent] + parent_grad
                else:
                    adjoints[parent] = parent_grad

        return {
            name: adjoints.get(index, np.zeros(self.nodes[index].shape)).copy()
            for name, index in self.parameters.items()
        }


def evaluate(graph: DiffGraph, root: Node) -> Tensor:
    return graph.evaluate(root)


def gradients(graph: DiffGraph, loss: Node) -> dict[str, Matrix]:
    return graph.gradients(loss)


def check_gradients(graph: DiffGraph, loss: Node, epsilon: float = 1e-5) -> float:
    """Compare analytic gradients against central finite differences.

    Every coordinate of every parameter is perturbed by ``+-epsilon``.

    Returns:
        The maximum over coordinates of
        ``|analytic - numeric| / max(1e-8, |analytic| + |numeric|)``;
        0.0 for a graph without parameters.
    """
    analytic = graph.gradients(loss)
    worst = 0.0

    for name in graph.parameters:
        base = graph.parameter_value(name).copy()

        for position in np.ndindex(*base.shape):
            shifted = base.copy()
            shifted[position] = base[position] + epsilon
            graph.set_parameter(name, shifted)
            upper = graph.scalar(loss)

            shifted[position] = base[position] - epsilon
            graph.set_parameter(name, shifted)
            lower = graph.scalar(loss)

            numeric = (upper - lower) / (2.0 * epsilon)
            exact = analytic[name][position]
            error = abs(exact - numeric) / max(1e-8, abs(exact) + abs(numeric))
            worst = max(worst, error)

        graph.set_parameter(name, base)

    log.debug("Gradient check over %d parameters: max relative error %.3e", len(graph.parameters), worst)
    return worst
