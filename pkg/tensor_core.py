#!/usr/bin/env python3
"""
🧮 Tensor core for the combined-attention stack
Dense float64 tensors, a tape-style differentiation graph and a finite-difference oracle.
Every op validates shapes up front; there is no implicit broadcasting except `scale`.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from sentry_config import get_logger

logger = get_logger(__name__)

Number = Union[int, float]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# ============= Errors =============

class TensorShapeError(ValueError):
    """Operand shapes do not conform"""


class DomainError(ValueError):
    """Input lies outside the documented domain of an operation"""


class GraphContractError(RuntimeError):
    """Misuse of the differentiation graph (non-scalar root, mixed graphs)"""


# ============= Tensor & Graph =============

class Tensor:
    """Float64 array plus an optional handle into a differentiation graph.

    Tensors without a node id are constants: ops accept them but never
    propagate gradients into them.
    """

    __slots__ = ("data", "graph", "node_id")

    def __init__(self, data, graph: Optional["Graph"] = None, node_id: Optional[int] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.graph = graph
        self.node_id = node_id

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def flat(self) -> np.ndarray:
        """Row-major view of the values"""
        return self.data.reshape(-1)

    @property
    def is_constant(self) -> bool:
        return self.node_id is None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise TensorShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        kind = "const" if self.is_constant else f"node={self.node_id}"
        return f"Tensor(shape={self.shape}, {kind})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


@dataclass
class _Node:
    parents: Tuple[Optional[int], ...]
    backward: Optional[BackwardFn]
    shape: Tuple[int, ...]


class Graph:
    """Ordered record of operations; node ids are positions in the record.

    A graph belongs to one forward/backward pass. Parameters are bound by name
    so gradients can be read back per parameter path after `backward`.
    """

    def __init__(self):
        self._nodes: List[_Node] = []
        self._parameters: Dict[str, Tensor] = {}
        self.grads: Dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, data) -> Tensor:
        """Differentiable input with no parents"""
        value = np.array(data, dtype=np.float64)
        self._nodes.append(_Node(parents=(), backward=None, shape=value.shape))
        return Tensor(value, self, len(self._nodes) - 1)

    def parameter(self, name: str, value: np.ndarray) -> Tensor:
        """Bind a named parameter; repeated binds return the same node"""
        bound = self._parameters.get(name)
        if bound is None:
            bound = self.leaf(value)
            self._parameters[name] = bound
        return bound

    @property
    def parameters(self) -> Dict[str, Tensor]:
        return dict(self._parameters)

    def record(self, value: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
        parent_ids = []
        for parent in parents:
            if parent.node_id is not None and parent.graph is not self:
                raise GraphContractError("operands belong to different graphs")
            parent_ids.append(parent.node_id)
        self._nodes.append(_Node(parents=tuple(parent_ids), backward=backward, shape=value.shape))
        return Tensor(value, self, len(self._nodes) - 1)

    def backward(self, root: Tensor) -> Dict[int, np.ndarray]:
        """Reverse sweep from a scalar root; fan-out gradients accumulate additively"""
        if root.graph is not self or root.node_id is None:
            raise GraphContractError("backward root is not a node of this graph")
        if root.size != 1:
            raise GraphContractError(f"backward root must be scalar, got shape {root.shape}")

        grads: Dict[int, np.ndarray] = {root.node_id: np.ones_like(root.data)}
        for node_id in range(root.node_id, -1, -1):
            upstream = grads.get(node_id)
            node = self._nodes[node_id]
            if upstream is None or node.backward is None:
                continue
            for parent_id, parent_grad in zip(node.parents, node.backward(upstream)):
                if parent_id is None or parent_grad is None:
                    continue
                if parent_id in grads:
                    grads[parent_id] = grads[parent_id] + parent_grad
                else:
                    grads[parent_id] = parent_grad
        self.grads = grads
        return grads

    def grad(self, tensor: Tensor) -> np.ndarray:
        """Gradient of the last backward root w.r.t. `tensor` (zeros when unreached)"""
        if tensor.node_id is None:
            return np.zeros_like(tensor.data)
        return self.grads.get(tensor.node_id, np.zeros_like(tensor.data))

    def parameter_grads(self) -> Dict[str, np.ndarray]:
        return {name: self.grad(tensor) for name, tensor in self._parameters.items()}


def _emit(value: np.ndarray, operands: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    graph = None
    for operand in operands:
        if operand.node_id is None:
            continue
        if graph is None:
            graph = operand.graph
        elif operand.graph is not graph:
            raise GraphContractError("operands belong to different graphs")
    if graph is None:
        return Tensor(value)
    return graph.record(value, operands, backward)


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _require_same_shape(op: str, x: Tensor, y: Tensor):
    if x.shape != y.shape:
        raise TensorShapeError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


def _require_matrix(op: str, x: Tensor):
    if x.data.ndim != 2:
        raise TensorShapeError(f"{op}: expected a matrix, got shape {x.shape}")


def make_rng(seed: int) -> np.random.Generator:
    """The single seeded generator every random draw flows from"""
    return np.random.default_rng(seed)


def glorot_normal(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_in, fan_out))


# ============= Linear algebra =============

def matmul(x: Tensor, y: Tensor) -> Tensor:
    _require_matrix("matmul", x)
    _require_matrix("matmul", y)
    if x.shape[1] != y.shape[0]:
        raise TensorShapeError(f"matmul: cannot multiply {x.shape} by {y.shape}")
    xd, yd = x.data, y.data
    return _emit(xd @ yd, (x, y), lambda g: (g @ yd.T, xd.T @ g))


def transpose(x: Tensor) -> Tensor:
    _require_matrix("transpose", x)
    return _emit(x.data.T.copy(), (x,), lambda g: (g.T,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a row vector [d] to every row of x [n×d]"""
    _require_matrix("add_bias", x)
    if bias.data.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise TensorShapeError(f"add_bias: bias {bias.shape} does not fit rows of {x.shape}")
    return _emit(x.data + bias.data[None, :], (x, bias), lambda g: (g, g.sum(axis=0)))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add_bias(out, bias)


def pairwise_l1(x: Tensor, y: Tensor) -> Tensor:
    """out[i][j] = Σ_k |x[i][k] − y[j][k]|; subgradient uses sign(0) = 0"""
    _require_matrix("pairwise_l1", x)
    _require_matrix("pairwise_l1", y)
    if x.shape[1] != y.shape[1]:
        raise TensorShapeError(f"pairwise_l1: feature widths differ {x.shape} vs {y.shape}")
    diff = x.data[:, None, :] - y.data[None, :, :]

    def backward(g):
        weighted = g[:, :, None] * np.sign(diff)
        return weighted.sum(axis=1), -weighted.sum(axis=0)

    return _emit(np.abs(diff).sum(axis=-1), (x, y), backward)


# ============= Elementwise =============

def add(x: Tensor, y: Tensor) -> Tensor:
    _require_same_shape("add", x, y)
    return _emit(x.data + y.data, (x, y), lambda g: (g, g))


def sub(x: Tensor, y: Tensor) -> Tensor:
    _require_same_shape("sub", x, y)
    return _emit(x.data - y.data, (x, y), lambda g: (g, -g))


def mul(x: Tensor, y: Tensor) -> Tensor:
    _require_same_shape("mul", x, y)
    xd, yd = x.data, y.data
    return _emit(xd * yd, (x, y), lambda g: (g * yd, g * xd))


def scale(x: Tensor, factor: Number) -> Tensor:
    factor = float(factor)
    return _emit(x.data * factor, (x,), lambda g: (g * factor,))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _emit(t, (x,), lambda g: (g * (1.0 - t * t),))


def _sigmoid_values(values: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(values))
    return np.where(values >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_values(x.data)
    return _emit(s, (x,), lambda g: (g * s * (1.0 - s),))


def arctan(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(np.arctan(xd), (x,), lambda g: (g / (1.0 + xd * xd),))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),))


def abs_(x: Tensor) -> Tensor:
    xd = x.data
    return _emit(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


ELEMENTWISE_OPS: Dict[str, Callable[..., Tensor]] = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "arctan": arctan,
    "relu": relu,
    "abs": abs_,
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
}


def elementwise(op: str, *operands) -> Tensor:
    """Dispatch by op name; `scale` takes (tensor, factor)"""
    fn = ELEMENTWISE_OPS.get(op)
    if fn is None:
        raise DomainError(f"unknown elementwise op {op!r}; expected one of {sorted(ELEMENTWISE_OPS)}")
    return fn(*operands)


# ============= Reductions & reshaping =============

def mean_all(x: Tensor) -> Tensor:
    count = x.size
    if count == 0:
        raise DomainError("mean_all of an empty tensor")
    shape = x.shape
    return _emit(np.asarray(x.data.mean()), (x,), lambda g: (np.full(shape, float(g) / count),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _emit(np.asarray(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def broadcast_scalar(s: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicitly tile a single-element tensor to `shape`"""
    if s.size != 1:
        raise TensorShapeError(f"broadcast_scalar: expected one element, got shape {s.shape}")
    s_shape = s.shape
    value = np.full(tuple(shape), s.item())
    return _emit(value, (s,), lambda g: (np.asarray(g.sum()).reshape(s_shape),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        value = x.data.reshape(tuple(shape))
    except ValueError as e:
        raise TensorShapeError(f"reshape: cannot view {original} as {tuple(shape)}") from e
    return _emit(value, (x,), lambda g: (g.reshape(original),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise TensorShapeError("concat: nothing to concatenate")
    ndim = tensors[0].data.ndim
    for t in tensors:
        if t.data.ndim != ndim:
            raise TensorShapeError(f"concat: rank mismatch {tensors[0].shape} vs {t.shape}")
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise TensorShapeError(f"concat: {[t.shape for t in tensors]} along axis {axis}") from e
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _emit(value, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=1)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _require_matrix("slice_cols", x)
    if not 0 <= start <= stop <= x.shape[1]:
        raise TensorShapeError(f"slice_cols: [{start}:{stop}] outside {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _emit(x.data[:, start:stop].copy(), (x,), backward)


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    _require_matrix("slice_rows", x)
    if not 0 <= start <= stop <= x.shape[0]:
        raise TensorShapeError(f"slice_rows: [{start}:{stop}] outside {x.shape}")
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _emit(x.data[start:stop].copy(), (x,), backward)


def take_rows(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of a [V×d] table; repeated ids accumulate gradient"""
    _require_matrix("take_rows", table)
    index = np.asarray(list(ids), dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        bad = int(index[(index < 0) | (index >= table.shape[0])][0])
        raise DomainError(f"take_rows: id {bad} outside [0, {table.shape[0]})")
    shape = table.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return _emit(table.data[index].reshape(len(index), shape[1]), (table,), backward)


# ============= Normalization & losses =============

def softmax_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise softmax with max subtraction.

    `mask` marks valid columns; invalid columns get probability exactly 0
    (additive −∞ before the exponent). A row with no valid column is all zeros.
    """
    _require_matrix("softmax_rows", x)
    rows, cols = x.shape
    valid = np.ones(cols, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if valid.shape != (cols,):
        raise TensorShapeError(f"softmax_rows: mask length {valid.shape} does not match {cols} columns")

    if rows == 0 or not valid.any():
        probs = np.zeros((rows, cols))
    else:
        row_max = np.max(np.where(valid[None, :], x.data, -np.inf), axis=1, keepdims=True)
        shifted = np.where(valid[None, :], x.data - row_max, -np.inf)
        exps = np.exp(shifted)
        probs = exps / exps.sum(axis=1, keepdims=True)

    def backward(g):
        inner = (g * probs).sum(axis=1, keepdims=True)
        return (probs * (g - inner),)

    return _emit(probs, (x,), backward)


def layer_norm(x: Tensor, gain: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis; gain/bias are [d] vectors"""
    _require_matrix("layer_norm", x)
    width = x.shape[1]
    for name, vec in (("gain", gain), ("bias", bias)):
        if vec is not None and vec.shape != (width,):
            raise TensorShapeError(f"layer_norm: {name} {vec.shape} does not fit width {width}")

    centered = x.data - x.data.mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    x_hat = centered * inv_std
    gain_values = gain.data if gain is not None else np.ones(width)
    out = x_hat * gain_values[None, :]
    if bias is not None:
        out = out + bias.data[None, :]

    operands = [x]
    if gain is not None:
        operands.append(gain)
    if bias is not None:
        operands.append(bias)

    def backward(g):
        g_hat = g * gain_values[None, :]
        g_x = inv_std * (
            g_hat
            - g_hat.mean(axis=1, keepdims=True)
            - x_hat * (g_hat * x_hat).mean(axis=1, keepdims=True)
        )
        grads = [g_x]
        if gain is not None:
            grads.append((g * x_hat).sum(axis=0))
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return _emit(out, tuple(operands), backward)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-likelihood of `label` under softmax(logits); logits are raw scores"""
    values = logits.data.reshape(-1)
    num_classes = values.shape[0]
    if not 0 <= int(label) < num_classes:
        raise DomainError(f"cross_entropy: label {label} outside [0, {num_classes})")
    label = int(label)
    top = values.max()
    exps = np.exp(values - top)
    total = exps.sum()
    loss = np.log(total) + top - values[label]
    shape = logits.shape

    def backward(g):
        probs = exps / total
        probs[label] -= 1.0
        return ((float(g) * probs).reshape(shape),)

    return _emit(np.asarray(loss), (logits,), backward)


def softmax_vector(values: np.ndarray) -> np.ndarray:
    """Probabilities for a plain logits array (no graph)"""
    shifted = np.exp(values - np.max(values))
    return shifted / shifted.sum()


# ============= Finite-difference oracle =============

@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients with central differences"""
    max_relative_error: float
    per_parameter: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    excluded: List[Tuple[str, Tuple[int, ...]]] = field(default_factory=list)
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.checked > 0 and self.max_relative_error < tolerance

    def to_dict(self) -> Dict:
        return {
            "max_relative_error": self.max_relative_error,
            "per_parameter": self.per_parameter,
            "checked": self.checked,
            "excluded": [[name, list(idx)] for name, idx in self.excluded],
            "worst": [self.worst[0], list(self.worst[1])] if self.worst else None,
        }


def relative_error(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(
    f: Callable[[Graph], Tensor],
    params: Dict[str, np.ndarray],
    eps: float = 1e-5,
    *,
    rng: Optional[np.random.Generator] = None,
    max_coords: Optional[int] = None,
    atol: float = 1e-9,
    kink_tol: float = 1e-3,
) -> GradCheckReport:
    """Central differences per coordinate of every array in `params`.

    `f` must build its scalar output on the graph it is handed and read
    parameters through `graph.parameter(name, params[name])`; the arrays are
    perturbed in place and restored. When the one-sided slopes disagree the
    coordinate is re-probed at eps/2: a gap that halves is smooth curvature and
    is checked normally, a gap that persists is an L1 or relu kink and is
    reported as excluded, and a gap that vanishes is checked at the half step.
    Differences below `atol` count as exact agreement.
    """
    graph = Graph()
    root = f(graph)
    graph.backward(root)
    analytic = graph.parameter_grads()
    base = root.item()

    def evaluate() -> float:
        return f(Graph()).item()

    report = GradCheckReport(max_relative_error=0.0)
    for name, array in params.items():
        grad = analytic.get(name, np.zeros_like(array))
        coords = list(np.ndindex(*array.shape))
        if max_coords is not None and len(coords) > max_coords:
            picker = rng if rng is not None else make_rng(0)
            chosen = picker.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(chosen)]

        def one_sided(idx, step: float) -> Tuple[float, float]:
            original = array[idx]
            array[idx] = original + step
            plus = evaluate()
            array[idx] = original - step
            minus = evaluate()
            array[idx] = original
            return (plus - base) / step, (base - minus) / step

        worst_here = 0.0
        for idx in coords:
            forward_slope, backward_slope = one_sided(idx, eps)
            numeric = (forward_slope + backward_slope) / 2.0
            gap = abs(forward_slope - backward_slope)
            if gap > kink_tol * max(1.0, abs(forward_slope), abs(backward_slope)):
                # smooth curvature halves the gap at eps/2; a slope jump does not
                half_forward, half_backward = one_sided(idx, eps / 2.0)
                half_gap = abs(half_forward - half_backward)
                if abs(half_gap - gap / 2.0) > 0.25 * gap:
                    if half_gap > 0.25 * gap:
                        report.excluded.append((name, idx))
                        continue
                    numeric = (half_forward + half_backward) / 2.0

            a = float(grad[idx])
            err = 0.0 if abs(a - numeric) <= atol else relative_error(a, numeric)
            report.checked += 1
            if err > worst_here:
                worst_here = err
            if err > report.max_relative_error:
                report.max_relative_error = err
                report.worst = (name, idx)
        report.per_parameter[name] = worst_here

    if report.excluded:
        logger.info(f"🔍 Gradient check excluded {len(report.excluded)} coordinates near kinks")
    return report
