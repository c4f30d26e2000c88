"""Reverse-mode automatic differentiation over batched scalar programs.

The engine records a program as a flat, topologically ordered tape.  Every
node value is either a python float or a rank-1 ``float64`` array; a scalar
node combined with a vector node broadcasts along the single batch axis
(the only broadcasting the engine performs).  Backward propagates the
gradient of the *sum* of the output node, which for a per-sample loss
vector scaled by 1/B is exactly the gradient of the batch-mean loss.

The math primitive set is deliberately small: add, mul, div, abs, exp, ln,
sqrt, square, arctan, max, stop_grad.  ``sub``/``neg``/``relu`` are sugar
that lowers onto these.  Besides the math ops there are four node sources:
constants, named inputs, parameters, and per-sample parameter gathers
(embedding-table lookups, which are parameter *addressing* rather than
arithmetic).

stop_grad is the identity in the forward pass and contributes exactly zero
to every adjoint upstream of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Tape",
    "ParamStore",
    "DomainError",
    "DivergenceError",
    "TapeUsageError",
    "forward",
    "backward",
    "sgd_step",
    "adagrad_decay_step",
    "finite_difference_gradients",
    "MATH_OPS",
]

# Node kinds.  Sources first, then the math primitives.
_CONST = 0
_INPUT = 1
_PARAM = 2
_GATHER = 3
_ADD = 4
_MUL = 5
_DIV = 6
_ABS = 7
_EXP = 8
_LN = 9
_SQRT = 10
_SQUARE = 11
_ARCTAN = 12
_MAX = 13
_STOP_GRAD = 14

_OP_NAMES = {
    _CONST: "const",
    _INPUT: "input",
    _PARAM: "param",
    _GATHER: "param_gather",
    _ADD: "add",
    _MUL: "mul",
    _DIV: "div",
    _ABS: "abs",
    _EXP: "exp",
    _LN: "ln",
    _SQRT: "sqrt",
    _SQUARE: "square",
    _ARCTAN: "arctan",
    _MAX: "max",
    _STOP_GRAD: "stop_grad",
}

#: Names of the math primitives (useful for fuzzing the gradient check).
MATH_OPS = ("add", "mul", "div", "abs", "exp", "ln", "sqrt", "square", "arctan", "max", "stop_grad")


class DomainError(ValueError):
    """A primitive was evaluated outside its mathematical domain."""


class DivergenceError(ArithmeticError):
    """A non-finite value appeared (forward value, loss, or gradient)."""


class TapeUsageError(RuntimeError):
    """The tape API was used out of order (e.g. backward before forward)."""


class Tape:
    """A recorded program: topologically ordered nodes plus per-node storage.

    Build it by calling the node constructors (``input``, ``param``,
    ``add``, ...), each of which returns an integer node id usable as an
    argument to later constructors.  Mark the final node with
    ``set_output`` before running :func:`forward`.
    """

    def __init__(self):
        self.ops: list[int] = []
        self.arg_a: list[int] = []
        self.arg_b: list[int] = []
        self.aux: list = []
        self.input_names: list[str] = []
        self.output: int | None = None
        self.values: list | None = None
        self.adjoints: list | None = None

    def __len__(self) -> int:
        return len(self.ops)

    # -- node constructors -------------------------------------------------

    def _node(self, op: int, a: int = -1, b: int = -1, aux=None) -> int:
        n = len(self.ops)
        if a >= n or b >= n:
            raise TapeUsageError("node arguments must precede the node")
        self.ops.append(op)
        self.arg_a.append(a)
        self.arg_b.append(b)
        self.aux.append(aux)
        return n

    def const(self, value: float) -> int:
        return self._node(_CONST, aux=float(value))

    def input(self, name: str) -> int:
        if name in self.input_names:
            raise TapeUsageError(f"duplicate input name {name!r}")
        self.input_names.append(name)
        return self._node(_INPUT, aux=name)

    def param(self, index: int) -> int:
        return self._node(_PARAM, aux=int(index))

    def param_gather(self, index_node: int, base: int, stride: int, offset: int) -> int:
        """Per-sample lookup params[base + idx*stride + offset] for an int input node."""
        return self._node(_GATHER, a=index_node, aux=(int(base), int(stride), int(offset)))

    def add(self, a: int, b: int) -> int:
        return self._node(_ADD, a, b)

    def mul(self, a: int, b: int) -> int:
        return self._node(_MUL, a, b)

    def div(self, a: int, b: int) -> int:
        return self._node(_DIV, a, b)

    def abs(self, a: int) -> int:
        return self._node(_ABS, a)

    def exp(self, a: int) -> int:
        return self._node(_EXP, a)

    def ln(self, a: int) -> int:
        return self._node(_LN, a)

    def sqrt(self, a: int) -> int:
        return self._node(_SQRT, a)

    def square(self, a: int) -> int:
        return self._node(_SQUARE, a)

    def arctan(self, a: int) -> int:
        return self._node(_ARCTAN, a)

    def max(self, a: int, b: int) -> int:
        return self._node(_MAX, a, b)

    def stop_grad(self, a: int) -> int:
        return self._node(_STOP_GRAD, a)

    # -- sugar (lowers onto the primitives above) --------------------------

    def neg(self, a: int) -> int:
        return self.mul(a, self.const(-1.0))

    def sub(self, a: int, b: int) -> int:
        return self.add(a, self.neg(b))

    def relu(self, a: int) -> int:
        return self.max(a, self.const(0.0))

    def set_output(self, node: int) -> None:
        if not 0 <= node < len(self.ops):
            raise TapeUsageError("output node does not exist")
        self.output = node

    def op_name(self, node: int) -> str:
        return _OP_NAMES[self.ops[node]]

    def value_of(self, node: int):
        """Value of a node after the most recent forward pass."""
        if self.values is None:
            raise TapeUsageError("forward has not run on this tape")
        return self.values[node]


@dataclass
class ParamStore:
    """Flat parameter vector with a same-shape gradient and optimizer state."""

    values: np.ndarray
    grads: np.ndarray = field(default=None)  # type: ignore[assignment]
    accum: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("parameter vector must be rank-1")
        if self.grads is None:
            self.grads = np.zeros_like(self.values)
        if self.accum is None:
            self.accum = np.zeros_like(self.values)
        if len(self.grads) != len(self.values) or len(self.accum) != len(self.values):
            raise ValueError("values, grads, and accum must have identical length")

    def __len__(self) -> int:
        return len(self.values)

    def zero_grads(self) -> None:
        self.grads[:] = 0.0


def _check_finite(v, node: int, op: int):
    if isinstance(v, np.ndarray):
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite value at node {node} ({_OP_NAMES[op]})")
    elif not np.isfinite(v):
        raise DivergenceError(f"non-finite value at node {node} ({_OP_NAMES[op]})")
    return v


def forward(tape: Tape, params, inputs: dict | None = None):
    """Evaluate every node; return the output value.

    ``params`` is a ParamStore or a flat float array.  ``inputs`` maps the
    tape's input names to floats or rank-1 arrays (int arrays for gather
    indices).  Domain violations raise :class:`DomainError` naming the node
    instead of propagating NaN; any non-finite result raises
    :class:`DivergenceError`.
    """
    pvals = params.values if isinstance(params, ParamStore) else np.asarray(params, dtype=np.float64)
    inputs = inputs or {}
    for name in tape.input_names:
        if name not in inputs:
            raise TapeUsageError(f"missing input {name!r}")
    n = len(tape.ops)
    values: list = [None] * n
    ops, arg_a, arg_b, aux = tape.ops, tape.arg_a, tape.arg_b, tape.aux
    tape.values = None  # a failed pass must not leave stale state behind
    tape.adjoints = None
    # numpy overflow warnings are redundant: every node is finite-checked
    # in the loop and raises DivergenceError with the node named
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        _forward_loop(pvals, inputs, values, ops, arg_a, arg_b, aux, n)
    tape.values = values
    tape.adjoints = None
    if tape.output is None:
        raise TapeUsageError("tape has no output node")
    return values[tape.output]


def _forward_loop(pvals, inputs, values, ops, arg_a, arg_b, aux, n):
    for i in range(n):
        op = ops[i]
        if op == _ADD:
            v = values[arg_a[i]] + values[arg_b[i]]
        elif op == _MUL:
            v = values[arg_a[i]] * values[arg_b[i]]
        elif op == _SQUARE:
            a = values[arg_a[i]]
            v = a * a
        elif op == _DIV:
            b = values[arg_b[i]]
            if np.any(b == 0.0):
                raise DomainError(f"division by zero at node {i}")
            v = values[arg_a[i]] / b
        elif op == _ABS:
            v = np.abs(values[arg_a[i]])
        elif op == _EXP:
            v = np.exp(values[arg_a[i]])
        elif op == _LN:
            a = values[arg_a[i]]
            if np.any(a <= 0.0):
                raise DomainError(f"ln of non-positive value at node {i}")
            v = np.log(a)
        elif op == _SQRT:
            a = values[arg_a[i]]
            if np.any(a < 0.0):
                raise DomainError(f"sqrt of negative value at node {i}")
            v = np.sqrt(a)
        elif op == _ARCTAN:
            v = np.arctan(values[arg_a[i]])
        elif op == _MAX:
            v = np.maximum(values[arg_a[i]], values[arg_b[i]])
        elif op == _STOP_GRAD:
            v = values[arg_a[i]]
        elif op == _PARAM:
            v = float(pvals[aux[i]])
        elif op == _CONST:
            v = aux[i]
        elif op == _INPUT:
            v = inputs[aux[i]]
            if isinstance(v, np.ndarray) and v.ndim > 1:
                raise TapeUsageError("inputs must be scalars or rank-1 arrays")
        elif op == _GATHER:
            base, stride, offset = aux[i]
            idx = values[arg_a[i]]
            v = pvals[base + np.asarray(idx, dtype=np.int64) * stride + offset]
        else:  # pragma: no cover - exhaustive
            raise TapeUsageError(f"unknown op {op}")
        if op != _INPUT or not np.issubdtype(np.asarray(v).dtype, np.integer):
            _check_finite(v, i, op)
        values[i] = v


def backward(tape: Tape, param_count: int) -> np.ndarray:
    """Gradient of the summed output w.r.t. each parameter slot.

    Requires a prior :func:`forward` on the same tape.  Paths through
    stop_grad contribute exactly zero; untouched parameters keep an exact
    0.0 gradient.
    """
    if tape.values is None:
        raise TapeUsageError("backward before forward")
    if tape.output is None:
        raise TapeUsageError("tape has no output node")
    n = len(tape.ops)
    values = tape.values
    adj: list = [None] * n
    grads = np.zeros(param_count, dtype=np.float64)

    def acc(node: int, contrib) -> None:
        if np.ndim(values[node]) == 0 and np.ndim(contrib) > 0:
            contrib = contrib.sum()
        if adj[node] is None:
            adj[node] = contrib + 0.0  # force a copy so later += is safe
        else:
            adj[node] = adj[node] + contrib

    out = tape.output
    adj[out] = np.ones_like(values[out]) if np.ndim(values[out]) > 0 else 1.0

    ops, arg_a, arg_b, aux = tape.ops, tape.arg_a, tape.arg_b, tape.aux
    # overflow chatter is redundant here too: param/gather accumulation
    # checks gradient finiteness and raises DivergenceError
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        _backward_loop(values, adj, grads, acc, ops, arg_a, arg_b, aux, n)
    tape.adjoints = adj
    return grads


def _backward_loop(values, adj, grads, acc, ops, arg_a, arg_b, aux, n):
    for i in range(n - 1, -1, -1):
        g = adj[i]
        if g is None:
            continue
        op = ops[i]
        if op == _ADD:
            acc(arg_a[i], g)
            acc(arg_b[i], g)
        elif op == _MUL:
            acc(arg_a[i], g * values[arg_b[i]])
            acc(arg_b[i], g * values[arg_a[i]])
        elif op == _SQUARE:
            acc(arg_a[i], 2.0 * values[arg_a[i]] * g)
        elif op == _DIV:
            b = values[arg_b[i]]
            acc(arg_a[i], g / b)
            acc(arg_b[i], -g * values[arg_a[i]] / (b * b))
        elif op == _ABS:
            # subgradient 0 at exactly 0
            acc(arg_a[i], g * np.sign(values[arg_a[i]]))
        elif op == _EXP:
            acc(arg_a[i], g * values[i])
        elif op == _LN:
            acc(arg_a[i], g / values[arg_a[i]])
        elif op == _SQRT:
            acc(arg_a[i], g / (2.0 * values[i]))
        elif op == _ARCTAN:
            a = values[arg_a[i]]
            acc(arg_a[i], g / (1.0 + a * a))
        elif op == _MAX:
            a, b = values[arg_a[i]], values[arg_b[i]]
            take_a = a >= b  # ties go to the first argument
            acc(arg_a[i], g * take_a)
            acc(arg_b[i], g * np.logical_not(take_a))
        elif op == _STOP_GRAD:
            pass  # barrier: nothing flows upstream
        elif op == _PARAM:
            gs = g.sum() if np.ndim(g) > 0 else g
            if not np.isfinite(gs):
                raise DivergenceError(f"non-finite gradient at param node {i}")
            grads[aux[i]] += gs
        elif op == _GATHER:
            base, stride, offset = aux[i]
            idx = np.asarray(values[arg_a[i]], dtype=np.int64)
            gv = np.broadcast_to(np.asarray(g, dtype=np.float64), idx.shape)
            if not np.all(np.isfinite(gv)):
                raise DivergenceError(f"non-finite gradient at gather node {i}")
            np.add.at(grads, base + idx * stride + offset, gv)
        # const/input: no upstream


def sgd_step(params: ParamStore, lr: float) -> None:
    """Plain gradient step ``w -= lr * g``; rejects non-finite gradients."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not np.all(np.isfinite(params.grads)):
        raise DivergenceError("non-finite gradient: step rejected")
    params.values -= lr * params.grads


def adagrad_decay_step(params: ParamStore, lr: float, decay: float = 0.9, eps: float = 1e-8) -> None:
    """Adagrad with a decayed squared-gradient accumulator.

    accum <- decay * accum + g**2 ; w -= lr * g / (sqrt(accum) + eps).
    decay=1 recovers classic Adagrad.
    """
    if lr <= 0:
        raise ValueError("lr must be positive")
    if not 0.0 < decay <= 1.0:
        raise ValueError("decay must be in (0, 1]")
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not np.all(np.isfinite(params.grads)):
        raise DivergenceError("non-finite gradient: step rejected")
    params.accum *= decay
    params.accum += params.grads * params.grads
    params.values -= lr * params.grads / (np.sqrt(params.accum) + eps)


def finite_difference_gradients(tape: Tape, param_values: np.ndarray, inputs: dict | None = None,
                                h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the summed output w.r.t. each parameter."""
    base = np.asarray(param_values, dtype=np.float64).copy()
    grads = np.zeros_like(base)

    def total(pv):
        out = forward(tape, pv, inputs)
        return float(np.sum(out))

    for k in range(len(base)):
        pv = base.copy()
        pv[k] = base[k] + h
        hi = total(pv)
        pv[k] = base[k] - h
        lo = total(pv)
        grads[k] = (hi - lo) / (2.0 * h)
    # restore forward values at the unperturbed point
    forward(tape, base, inputs)
    return grads
