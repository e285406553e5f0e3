"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations as they execute. Walking the
records backwards yields vector-Jacobian products with respect to any input
node. Only the primitives needed by the decoder zoo are provided: matrix
multiply, broadcasting add/mul, tanh, relu, leaky relu, sigmoid, sin, cos,
reshape and sum-of-squares.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

from typing import Any, Callable, NamedTuple

import numpy as np

FD_STEP = 1e-5
LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    """Input does not match the shape a model expects."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in a checked computation."""


def as_tensor(value, name: str = "tensor") -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out leading axes added by broadcasting, then axes that were size 1
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(a):
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class _Prim(NamedTuple):
    forward: Callable[..., np.ndarray]
    # backward(g, inputs, out, attrs) -> one gradient per input
    backward: Callable[..., tuple]


_PRIMS: dict[str, _Prim] = {
    "matmul": _Prim(
        lambda a, b: a @ b,
        lambda g, ins, out, at: (g @ ins[1].T, ins[0].T @ g),
    ),
    "add": _Prim(
        lambda a, b: a + b,
        lambda g, ins, out, at: (_unbroadcast(g, ins[0].shape), _unbroadcast(g, ins[1].shape)),
    ),
    "mul": _Prim(
        lambda a, b: a * b,
        lambda g, ins, out, at: (
            _unbroadcast(g * ins[1], ins[0].shape),
            _unbroadcast(g * ins[0], ins[1].shape),
        ),
    ),
    "tanh": _Prim(np.tanh, lambda g, ins, out, at: (g * (1.0 - out * out),)),
    # subgradient 0 at the kink
    "relu": _Prim(
        lambda a: np.where(a > 0, a, 0.0),
        lambda g, ins, out, at: (g * (ins[0] > 0),),
    ),
    "leaky_relu": _Prim(
        lambda a, slope=LEAKY_SLOPE: np.where(a > 0, a, slope * a),
        lambda g, ins, out, at: (g * np.where(ins[0] > 0, 1.0, at.get("slope", LEAKY_SLOPE)),),
    ),
    "sigmoid": _Prim(_sigmoid, lambda g, ins, out, at: (g * out * (1.0 - out),)),
    "sin": _Prim(np.sin, lambda g, ins, out, at: (g * np.cos(ins[0]),)),
    "cos": _Prim(np.cos, lambda g, ins, out, at: (-g * np.sin(ins[0]),)),
    "reshape": _Prim(
        lambda a, shape: a.reshape(shape),
        lambda g, ins, out, at: (g.reshape(ins[0].shape),),
    ),
    "sum_squares": _Prim(
        lambda a: np.sum(a * a),
        lambda g, ins, out, at: (2.0 * g * ins[0],),
    ),
}


class Node:
    """Handle to a value recorded on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.index]

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def _lift(self, other) -> "Node":
        return other if isinstance(other, Node) else self.tape.const(other)

    def __add__(self, other):
        return self.tape.apply("add", self, self._lift(other))

    __radd__ = __add__

    def __mul__(self, other):
        return self.tape.apply("mul", self, self._lift(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.tape.apply("matmul", self, self._lift(other))

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __repr__(self):
        return f"Node(#{self.index}, shape={self.shape})"


class _Record(NamedTuple):
    op: str  # "input", "const" or a primitive name
    inputs: tuple
    attrs: dict
    needs_grad: bool


class Tape:
    """Ordered record of primitive operations.

    Records are appended in execution order, which is already a topological
    order of the computation graph, so the backward pass is a single reverse
    sweep.
    """

    def __init__(self, check_finite: bool = True):
        self.check_finite = check_finite
        self.records: list[_Record] = []
        self.values: list[np.ndarray] = []

    def __len__(self):
        return len(self.records)

    def _push(self, record: _Record, value: np.ndarray) -> Node:
        self.records.append(record)
        self.values.append(value)
        return Node(self, len(self.records) - 1)

    def input(self, value) -> Node:
        return self._push(_Record("input", (), {}, True), np.asarray(value, dtype=np.float64))

    def const(self, value) -> Node:
        return self._push(_Record("const", (), {}, False), np.asarray(value, dtype=np.float64))

    def apply(self, op: str, *args: Node, **attrs: Any) -> Node:
        prim = _PRIMS[op]
        ins = [self.values[a.index] for a in args]
        with np.errstate(over="ignore", invalid="ignore"):
            out = prim.forward(*ins, **attrs)
        if self.check_finite and not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite output from '{op}'")
        needs = any(self.records[a.index].needs_grad for a in args)
        return self._push(_Record(op, tuple(a.index for a in args), attrs, needs), out)

    # elementwise conveniences
    def tanh(self, a):
        return self.apply("tanh", a)

    def relu(self, a):
        return self.apply("relu", a)

    def leaky_relu(self, a, slope=LEAKY_SLOPE):
        return self.apply("leaky_relu", a, slope=slope)

    def sigmoid(self, a):
        return self.apply("sigmoid", a)

    def sin(self, a):
        return self.apply("sin", a)

    def cos(self, a):
        return self.apply("cos", a)

    def reshape(self, a, shape):
        return self.apply("reshape", a, shape=tuple(shape))

    def sum_squares(self, a):
        return self.apply("sum_squares", a)

    def backward(self, output: Node, cotangent=None) -> list:
        """Accumulate adjoints from ``output`` back to every recorded node.

        Returns a list indexed like the tape; entries for nodes that do not
        influence ``output`` (or do not need gradients) are ``None``.
        """
        out_val = self.values[output.index]
        if cotangent is None:
            cotangent = np.ones_like(out_val)
        cotangent = np.asarray(cotangent, dtype=np.float64)
        if cotangent.shape != out_val.shape:
            raise ShapeError(f"cotangent shape {cotangent.shape} != output shape {out_val.shape}")
        adj: list = [None] * len(self.records)
        adj[output.index] = cotangent
        for i in range(output.index, -1, -1):
            g = adj[i]
            rec = self.records[i]
            if g is None or not rec.inputs:
                continue
            ins = [self.values[j] for j in rec.inputs]
            grads = _PRIMS[rec.op].backward(g, ins, self.values[i], rec.attrs)
            for j, gj in zip(rec.inputs, grads):
                if not self.records[j].needs_grad:
                    continue
                adj[j] = gj if adj[j] is None else adj[j] + gj
        return adj

    def gradient(self, output: Node, wrt: Node, cotangent=None) -> np.ndarray:
        g = self.backward(output, cotangent)[wrt.index]
        return np.zeros_like(wrt.value) if g is None else g

    def replay(self, inputs: dict | None = None) -> list:
        """Re-execute the recorded program, optionally with new input values.

        ``inputs`` maps node index to a replacement value. Without
        replacements the recomputed values are bit-identical to the recorded
        ones.
        """
        inputs = inputs or {}
        vals: list = []
        for i, rec in enumerate(self.records):
            if rec.op in ("input", "const"):
                vals.append(np.asarray(inputs.get(i, self.values[i]), dtype=np.float64))
            else:
                vals.append(_PRIMS[rec.op].forward(*(vals[j] for j in rec.inputs), **rec.attrs))
        return vals


# Model-level entry points. A model is anything with ``latent_dim``,
# ``output_shape`` and ``trace(tape, z_node) -> x_node`` over a leading batch
# axis.


def _batched(model, z) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[None, :] if single else z
    if zb.ndim != 2 or zb.shape[1] != model.latent_dim:
        raise ShapeError(f"latent has shape {z.shape}, model expects (..., {model.latent_dim})")
    return zb, single


def linearize(model, z, check_finite: bool = True):
    """Evaluate ``G(z)`` once and return ``(x, pullback)``.

    ``pullback(u)`` returns ``u^T dG/dz`` at ``z`` without re-running the
    forward pass. ``z`` may be a single latent or a batch.
    """
    zb, single = _batched(model, z)
    tape = Tape(check_finite=check_finite)
    zn = tape.input(zb)
    xn = model.trace(tape, zn)
    x = xn.value

    def pullback(u):
        u = np.asarray(u, dtype=np.float64)
        ub = u[None] if single else u
        if ub.shape != x.shape:
            raise ShapeError(f"cotangent has shape {u.shape}, expected {x.shape[1:] if single else x.shape}")
        g = tape.gradient(xn, zn, ub)
        return g[0] if single else g

    return (x[0] if single else x), pullback


def forward_eval(model, z) -> np.ndarray:
    """Decode ``z`` (shape ``(d,)`` or ``(n, d)``). Raises on non-finite values."""
    return linearize(model, z)[0]


def vjp(model, z, cotangent) -> np.ndarray:
    """``cotangent^T dG/dz`` at ``z``."""
    _, pull = linearize(model, z)
    return pull(cotangent)


def grad_check(model, z, probes: int = 10, seed: int = 0, step: float = FD_STEP) -> float:
    """Largest relative error between the tape gradient and central differences.

    Each probe draws a random cotangent ``u`` and compares ``vjp(u)`` with the
    central-difference gradient of ``u . G(z)``, coordinate by coordinate.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    z = np.asarray(z, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x0, pull = linearize(model, z)
    worst = 0.0
    for _ in range(probes):
        u = rng.standard_normal(x0.shape)
        analytic = pull(u)
        numeric = np.empty_like(z)
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = step
            hi = np.sum(u * forward_eval(model, z + e))
            lo = np.sum(u * forward_eval(model, z - e))
            numeric[i] = (hi - lo) / (2 * step)
        scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-300)
        worst = max(worst, float(np.linalg.norm(analytic - numeric) / scale))
    return worst
