"""Scalar reverse-mode autodiff on an append-only tape.

Every arithmetic operation on a :class:`TapeVar` appends one node to its
:class:`ScalarTape`. ``gradient`` runs a plain reverse sweep and returns
floats. ``gradient_as_vars`` runs the same sweep but records the adjoint
computation back onto the tape, so its results can be differentiated again
(reverse-over-reverse). That is how second derivatives such as S_xx are
obtained.

All values are Python floats (IEEE double).
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, Union

OP_KINDS = (
    "input",
    "const",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "square",
    "pow",
    "tanh",
    "sigmoid",
    "exp",
    "log",
)

EXP_CLAMP = 500.0

Number = Union[int, float]


class DomainError(ArithmeticError):
    """Raised when an operation is evaluated outside its domain."""

    def __init__(self, message: str, node_id: int):
        super().__init__(f"{message} (node {node_id})")
        self.node_id = node_id


def _clamp_exponent(x: float) -> float:
    return min(max(x, -EXP_CLAMP), EXP_CLAMP)


def _sigmoid(x: float) -> float:
    x = _clamp_exponent(x)
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class ScalarTape:
    """Topologically ordered record of scalar operations.

    Nodes are stored in parallel lists indexed by node id; parents always
    have smaller ids than their children.
    """

    def __init__(self):
        self.ops: list[str] = []
        self.parents: list[tuple[int, ...]] = []
        self.partials: list[tuple[float, ...]] = []
        self.values: list[float] = []
        self.exponents: dict[int, float] = {}
        self.roots: list[int] = []

    def __len__(self) -> int:
        return len(self.values)

    def _append(self, op, parents, partials, value) -> TapeVar:
        node_id = len(self.values)
        self.ops.append(op)
        self.parents.append(parents)
        self.partials.append(partials)
        self.values.append(value)
        return TapeVar(self, node_id, value)

    def var(self, value: Number) -> TapeVar:
        """Create an independent input variable."""
        v = self._append("input", (), (), float(value))
        self.roots.append(v.node_id)
        return v

    def const(self, value: Number) -> TapeVar:
        return self._append("const", (), (), float(value))

    def lift(self, x) -> TapeVar:
        if isinstance(x, TapeVar):
            if x.tape is not self:
                raise ValueError("variable belongs to a different tape")
            return x
        return self.const(x)

    def record(self, op: str, parents: Sequence[TapeVar], value=None,
               exponent: float | None = None) -> TapeVar:
        """Append one node of kind ``op`` computed from ``parents``.

        ``value`` is only consulted for ``const``; every other kind computes
        its value and local partials from the parent values.
        """
        if op not in OP_KINDS:
            raise ValueError(f"unknown op kind {op!r}")
        if op == "const":
            return self.const(value)
        if op == "input":
            return self.var(value)
        ps = tuple(self.lift(p) for p in parents)
        ids = tuple(p.node_id for p in ps)
        vals = tuple(p.value for p in ps)
        node_id = len(self.values)

        if op == "add":
            a, b = vals
            return self._append(op, ids, (1.0, 1.0), a + b)
        if op == "sub":
            a, b = vals
            return self._append(op, ids, (1.0, -1.0), a - b)
        if op == "mul":
            a, b = vals
            return self._append(op, ids, (b, a), a * b)
        if op == "div":
            a, b = vals
            if b == 0.0:
                raise DomainError("division by zero", node_id)
            out = a / b
            return self._append(op, ids, (1.0 / b, -out / b), out)
        (a,) = vals
        if op == "neg":
            return self._append(op, ids, (-1.0,), -a)
        if op == "square":
            return self._append(op, ids, (2.0 * a,), a * a)
        if op == "pow":
            n = float(exponent)
            if a < 0.0 and not n.is_integer():
                raise DomainError("negative base with fractional exponent", node_id)
            if a == 0.0 and n < 1.0:
                raise DomainError("zero base with exponent below one", node_id)
            out = a ** n
            v = self._append(op, ids, (n * a ** (n - 1.0),), out)
            self.exponents[v.node_id] = n
            return v
        if op == "tanh":
            out = math.tanh(a)
            return self._append(op, ids, (1.0 - out * out,), out)
        if op == "sigmoid":
            out = _sigmoid(a)
            return self._append(op, ids, (out * (1.0 - out),), out)
        if op == "exp":
            out = math.exp(_clamp_exponent(a))
            return self._append(op, ids, (out,), out)
        if op == "log":
            if a <= 0.0:
                raise DomainError("log of nonpositive value", node_id)
            return self._append(op, ids, (1.0 / a,), math.log(a))
        raise AssertionError(op)

    def _partial_vars(self, node_id: int):
        """Local partials of ``node_id`` as tape expressions (or plain constants).

        Plain floats are returned where the partial does not depend on any
        variable, which avoids recording needless constant nodes.
        """
        op = self.ops[node_id]
        ids = self.parents[node_id]
        out = TapeVar(self, node_id, self.values[node_id])
        ps = [TapeVar(self, i, self.values[i]) for i in ids]
        if op == "add":
            return (1.0, 1.0)
        if op == "sub":
            return (1.0, -1.0)
        if op == "neg":
            return (-1.0,)
        if op == "mul":
            return (ps[1], ps[0])
        if op == "div":
            return (1.0 / ps[1], -out / ps[1])
        if op == "square":
            return (2.0 * ps[0],)
        if op == "pow":
            n = self.exponents[node_id]
            if n == 1.0:
                return (1.0,)
            if n == 2.0:
                return (2.0 * ps[0],)
            return (n * ps[0] ** (n - 1.0),)
        if op == "tanh":
            return (1.0 - square(out),)
        if op == "sigmoid":
            return (out * (1.0 - out),)
        if op == "exp":
            return (out,)
        if op == "log":
            return (1.0 / ps[0],)
        return ()


class TapeVar:
    """Handle to one node of a :class:`ScalarTape`."""

    __slots__ = ("tape", "node_id", "value")

    def __init__(self, tape: ScalarTape, node_id: int, value: float):
        self.tape = tape
        self.node_id = node_id
        self.value = value

    def __repr__(self):
        return f"TapeVar(id={self.node_id}, value={self.value!r})"

    def __float__(self):
        return self.value

    def __add__(self, other):
        return self.tape.record("add", (self, other))

    def __radd__(self, other):
        return self.tape.record("add", (other, self))

    def __sub__(self, other):
        return self.tape.record("sub", (self, other))

    def __rsub__(self, other):
        return self.tape.record("sub", (other, self))

    def __mul__(self, other):
        return self.tape.record("mul", (self, other))

    def __rmul__(self, other):
        return self.tape.record("mul", (other, self))

    def __truediv__(self, other):
        return self.tape.record("div", (self, other))

    def __rtruediv__(self, other):
        return self.tape.record("div", (other, self))

    def __neg__(self):
        return self.tape.record("neg", (self,))

    def __pow__(self, exponent):
        if isinstance(exponent, TapeVar):
            return exp(exponent * log(self))
        if exponent == 2:
            return square(self)
        return self.tape.record("pow", (self,), exponent=float(exponent))


def square(x: TapeVar) -> TapeVar:
    return x.tape.record("square", (x,))


def tanh(x: TapeVar) -> TapeVar:
    return x.tape.record("tanh", (x,))


def sigmoid(x: TapeVar) -> TapeVar:
    return x.tape.record("sigmoid", (x,))


def exp(x: TapeVar) -> TapeVar:
    return x.tape.record("exp", (x,))


def log(x: TapeVar) -> TapeVar:
    return x.tape.record("log", (x,))


def _check_same_tape(output: TapeVar, wrt: Iterable[TapeVar]):
    for w in wrt:
        if w.tape is not output.tape:
            raise ValueError("wrt variable lives on a different tape")


def gradient(output: TapeVar, wrt: Sequence[TapeVar]) -> list[float]:
    """d output / d wrt_i as floats; zero for variables output does not depend on."""
    wrt = list(wrt)
    _check_same_tape(output, wrt)
    if not wrt:
        return []
    tape = output.tape
    lo = min(w.node_id for w in wrt)
    adj = {output.node_id: 1.0}
    parents, partials = tape.parents, tape.partials
    for i in range(output.node_id, lo - 1, -1):
        a = adj.get(i)
        if a is None or a == 0.0:
            continue
        for p, d in zip(parents[i], partials[i]):
            if p >= lo:
                adj[p] = adj.get(p, 0.0) + a * d
    return [adj.get(w.node_id, 0.0) for w in wrt]


def _scaled(adjoint: TapeVar, local) -> TapeVar:
    if isinstance(local, TapeVar):
        return adjoint * local
    if local == 1.0:
        return adjoint
    if local == -1.0:
        return -adjoint
    return adjoint * local


def gradient_as_vars(output: TapeVar, wrt: Sequence[TapeVar]) -> list[TapeVar]:
    """Like :func:`gradient`, but the results are recorded on the tape.

    The returned variables can themselves be passed to ``gradient`` or
    ``gradient_as_vars`` to obtain higher derivatives.
    """
    wrt = list(wrt)
    _check_same_tape(output, wrt)
    if not wrt:
        return []
    tape = output.tape
    lo = min(w.node_id for w in wrt)
    seed = tape.const(1.0)
    adj: dict[int, TapeVar] = {output.node_id: seed}
    # nodes recorded during the sweep have ids above output.node_id and are
    # never visited
    for i in range(output.node_id, lo - 1, -1):
        a = adj.get(i)
        if a is None:
            continue
        ids = tape.parents[i]
        if not ids or all(p < lo for p in ids):
            continue
        locals_ = tape._partial_vars(i)
        for p, d in zip(ids, locals_):
            if p < lo:
                continue
            if a is seed:
                contrib = d if isinstance(d, TapeVar) else tape.const(d)
            else:
                contrib = _scaled(a, d)
            adj[p] = contrib if p not in adj else adj[p] + contrib
    zero = None
    out = []
    for w in wrt:
        g = adj.get(w.node_id)
        if g is None:
            if zero is None:
                zero = tape.const(0.0)
            g = zero
        out.append(g)
    return out
