"""Scalar computation graph with graph-to-graph differentiation.

Nodes are appended to a flat, topologically ordered store; differentiation
appends the reverse-mode adjoint as ordinary nodes of the same graph, so a
derivative is itself differentiable to arbitrary depth.  Evaluation binds
leaf variables to python floats or to numpy arrays of a common shape (the
batch trick: one graph, vectorized over samples by re-binding leaves).
"""

from __future__ import annotations

from typing import Iterable, Mapping, Sequence

import numpy as np

# Op kinds.  Arity is implied: VAR/CONST are leaves, ADD/SUB/MUL/DIV are
# binary, the rest unary.
VAR = 0
CONST = 1
ADD = 2
SUB = 3
MUL = 4
DIV = 5
NEG = 6
TANH = 7
SQUARE = 8
STOPGRAD = 9
SQRT = 10

_ARITY = {VAR: 0, CONST: 0, ADD: 2, SUB: 2, MUL: 2, DIV: 2,
          NEG: 1, TANH: 1, SQUARE: 1, STOPGRAD: 1, SQRT: 1}

OP_NAMES = {VAR: "var", CONST: "const", ADD: "add", SUB: "sub", MUL: "mul",
            DIV: "div", NEG: "neg", TANH: "tanh", SQUARE: "square",
            STOPGRAD: "stop_gradient", SQRT: "sqrt"}


class GraphError(ValueError):
    """Malformed construction: bad arity, unknown op, invalid operand id."""


class EvaluationError(RuntimeError):
    """Unbound variable or non-finite division during evaluation."""


class Graph:
    """Append-only scalar expression graph.

    Operand ids always point backwards, so ascending node id is a
    topological order and descending id is a reverse-topological order;
    both :meth:`evaluate` and :meth:`grad` rely on this invariant.

    ``dedup=True`` hash-conses structurally identical nodes.  It is purely
    a size optimization: values and derivatives are unchanged (tested).
    """

    def __init__(self, dedup: bool = True):
        self.ops: list[int] = []
        self.args: list[tuple[int, ...]] = []
        self.payload: list[float | None] = []
        self._dedup = dedup
        self._memo: dict[tuple, int] = {}

    def __len__(self) -> int:
        return len(self.ops)

    # -- construction -----------------------------------------------------

    def build(self, op: int, operands: Sequence[int] = (),
              payload: float | None = None) -> int:
        """Append one node and return its id (or a structural duplicate's)."""
        if op not in _ARITY:
            raise GraphError(f"unknown op kind {op}")
        operands = tuple(operands)
        if len(operands) != _ARITY[op]:
            raise GraphError(
                f"{OP_NAMES[op]} expects {_ARITY[op]} operands, got {len(operands)}")
        n = len(self.ops)
        for o in operands:
            if not 0 <= o < n:
                raise GraphError(f"operand id {o} out of range (graph has {n} nodes)")
        if op == CONST:
            if payload is None or not np.isfinite(payload):
                raise GraphError("const node needs a finite payload")
            payload = float(payload)
        elif payload is not None:
            raise GraphError(f"{OP_NAMES[op]} takes no payload")
        if self._dedup and op != VAR:
            key = (op, operands, payload)
            hit = self._memo.get(key)
            if hit is not None:
                return hit
            self._memo[key] = n
        self.ops.append(op)
        self.args.append(operands)
        self.payload.append(payload)
        return n

    def var(self) -> int:
        return self.build(VAR)

    def const(self, value: float) -> int:
        return self.build(CONST, (), value)

    # Arithmetic helpers.  These fold constant operands (values are
    # unaffected; it keeps nested adjoint graphs from ballooning).

    def _const_of(self, i: int) -> float | None:
        return self.payload[i] if self.ops[i] == CONST else None

    def add(self, a: int, b: int) -> int:
        ca, cb = self._const_of(a), self._const_of(b)
        if ca is not None and cb is not None:
            return self.const(ca + cb)
        if ca == 0.0:
            return b
        if cb == 0.0:
            return a
        return self.build(ADD, (a, b))

    def sub(self, a: int, b: int) -> int:
        ca, cb = self._const_of(a), self._const_of(b)
        if ca is not None and cb is not None:
            return self.const(ca - cb)
        if cb == 0.0:
            return a
        if ca == 0.0:
            return self.neg(b)
        return self.build(SUB, (a, b))

    def mul(self, a: int, b: int) -> int:
        ca, cb = self._const_of(a), self._const_of(b)
        if ca is not None and cb is not None:
            return self.const(ca * cb)
        if ca == 1.0:
            return b
        if cb == 1.0:
            return a
        if ca == 0.0 or cb == 0.0:
            return self.const(0.0)
        return self.build(MUL, (a, b))

    def div(self, a: int, b: int) -> int:
        ca, cb = self._const_of(a), self._const_of(b)
        if cb is not None and cb == 0.0:
            raise GraphError("division by constant zero")
        if ca is not None and cb is not None:
            return self.const(ca / cb)
        if cb == 1.0:
            return a
        if ca == 0.0:
            return self.const(0.0)
        return self.build(DIV, (a, b))

    def neg(self, a: int) -> int:
        ca = self._const_of(a)
        if ca is not None:
            return self.const(-ca)
        return self.build(NEG, (a,))

    def tanh(self, a: int) -> int:
        return self.build(TANH, (a,))

    def square(self, a: int) -> int:
        ca = self._const_of(a)
        if ca is not None:
            return self.const(ca * ca)
        return self.build(SQUARE, (a,))

    def sqrt(self, a: int) -> int:
        ca = self._const_of(a)
        if ca is not None:
            if ca < 0:
                raise GraphError("sqrt of negative constant")
            return self.const(float(np.sqrt(ca)))
        return self.build(SQRT, (a,))

    def stop_gradient(self, a: int) -> int:
        return self.build(STOPGRAD, (a,))

    # -- traversal ---------------------------------------------------------

    def reachable(self, outs: Iterable[int]) -> list[int]:
        """Ids of all nodes an output set depends on, ascending."""
        seen = set()
        stack = list(outs)
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.args[i])
        return sorted(seen)

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, outs, bindings: Mapping[int, float | np.ndarray]):
        """Forward-evaluate node(s) under leaf bindings.

        ``outs`` may be a single id or a sequence.  Bindings map VAR node
        ids to floats or same-shaped numpy arrays; results broadcast
        accordingly.  Pure function of the bindings.
        """
        single = np.isscalar(outs)
        out_ids = [outs] if single else list(outs)
        out_set = set(out_ids)
        order = self.reachable(out_ids)
        # last consumer of each node, so large batched evaluations can drop
        # intermediate values as soon as they are dead
        last_use: dict[int, int] = {i: i for i in out_ids}
        for i in order:
            for a in self.args[i]:
                last_use[a] = i
        vals: dict[int, float | np.ndarray] = {}
        for i in order:
            op = self.ops[i]
            if op == VAR:
                if i not in bindings:
                    raise EvaluationError(f"unbound variable node {i}")
                vals[i] = bindings[i]
            elif op == CONST:
                vals[i] = self.payload[i]
            elif op == ADD:
                a, b = self.args[i]
                vals[i] = vals[a] + vals[b]
            elif op == SUB:
                a, b = self.args[i]
                vals[i] = vals[a] - vals[b]
            elif op == MUL:
                a, b = self.args[i]
                vals[i] = vals[a] * vals[b]
            elif op == DIV:
                a, b = self.args[i]
                try:
                    with np.errstate(divide="ignore", invalid="ignore"):
                        r = vals[a] / vals[b]
                except ZeroDivisionError:
                    raise EvaluationError(f"non-finite division at node {i}")
                if not np.all(np.isfinite(r)):
                    raise EvaluationError(f"non-finite division at node {i}")
                vals[i] = r
            elif op == NEG:
                vals[i] = -vals[self.args[i][0]]
            elif op == TANH:
                vals[i] = np.tanh(vals[self.args[i][0]])
            elif op == SQUARE:
                v = vals[self.args[i][0]]
                vals[i] = v * v
            elif op == SQRT:
                v = vals[self.args[i][0]]
                with np.errstate(invalid="ignore"):
                    r = np.sqrt(v)
                if not np.all(np.isfinite(r)):
                    raise EvaluationError(f"non-finite square root at node {i}")
                vals[i] = r
            elif op == STOPGRAD:
                vals[i] = vals[self.args[i][0]]
            for a in set(self.args[i]):
                if last_use.get(a) == i and a not in out_set:
                    del vals[a]
        res = [vals[i] for i in out_ids]
        return res[0] if single else res

    # -- differentiation ----------------------------------------------------

    def grad(self, out: int, wrt: Sequence[int]) -> list[int]:
        """Append the reverse-mode adjoint of ``out`` and return node ids
        of d(out)/d(w) for each leaf variable w in ``wrt``.

        The returned nodes are ordinary graph nodes, so ``grad`` composes
        with itself to arbitrary depth.  Adjoints do not flow through
        STOPGRAD nodes.
        """
        for w in wrt:
            if self.ops[w] != VAR:
                raise GraphError(f"grad target {w} is not a leaf variable")
        adj: dict[int, int] = {out: self.const(1.0)}

        def acc(i: int, term: int) -> None:
            prev = adj.get(i)
            adj[i] = term if prev is None else self.add(prev, term)

        for i in reversed(self.reachable([out])):
            a_i = adj.get(i)
            if a_i is None:
                continue
            op = self.ops[i]
            if op in (VAR, CONST):
                continue
            if op == ADD:
                u, v = self.args[i]
                acc(u, a_i)
                acc(v, a_i)
            elif op == SUB:
                u, v = self.args[i]
                acc(u, a_i)
                acc(v, self.neg(a_i))
            elif op == MUL:
                u, v = self.args[i]
                acc(u, self.mul(a_i, v))
                acc(v, self.mul(a_i, u))
            elif op == DIV:
                u, v = self.args[i]
                acc(u, self.div(a_i, v))
                acc(v, self.neg(self.div(self.mul(a_i, u), self.square(v))))
            elif op == NEG:
                acc(self.args[i][0], self.neg(a_i))
            elif op == TANH:
                one = self.const(1.0)
                acc(self.args[i][0], self.mul(a_i, self.sub(one, self.square(i))))
            elif op == SQUARE:
                u = self.args[i][0]
                acc(u, self.mul(a_i, self.mul(self.const(2.0), u)))
            elif op == SQRT:
                # d sqrt(u)/du = 1 / (2 sqrt(u)), reusing this node
                acc(self.args[i][0], self.div(a_i, self.mul(self.const(2.0), i)))
            elif op == STOPGRAD:
                pass
        return [adj[w] if w in adj else self.const(0.0) for w in wrt]

    # -- substitution ---------------------------------------------------------

    def substitute(self, outs: Sequence[int], mapping: Mapping[int, int]) -> list[int]:
        """Rebuild expressions with some leaf variables replaced by nodes.

        Nodes that do not depend on any mapped variable are reused as-is.
        This is how a potential network template gets applied at trajectory
        positions that are themselves graph expressions.
        """
        for k in mapping:
            if self.ops[k] != VAR:
                raise GraphError(f"substitute key {k} is not a leaf variable")
        new: dict[int, int] = dict(mapping)
        for i in self.reachable(outs):
            if i in new:
                continue
            ops_args = self.args[i]
            if not ops_args:
                new[i] = i
                continue
            mapped = tuple(new[a] for a in ops_args)
            new[i] = i if mapped == ops_args else self.build(self.ops[i], mapped,
                                                             self.payload[i])
        return [new[o] for o in outs]
