"""Graph nodes and reverse-mode accumulation.

Every primitive accepts plain arrays or :class:`Var` nodes.  With no ``Var``
among its arguments a primitive is a thin numpy call and records nothing, so
the same numerical code serves fast evaluation and differentiation.

Vector-Jacobian products are written with the same primitives.  When the
backward pass runs with ``create_graph=True`` the cotangents are ``Var``
nodes themselves, which is how gradients of gradients are obtained.
"""

from __future__ import annotations

import numpy as np


class Var:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("value", "args", "vjp", "kw", "name")
    __array_ufunc__ = None  # make numpy defer to our reflected operators
    __array_priority__ = 1000

    def __init__(self, value, args=(), vjp=None, kw=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.args = args
        self.vjp = vjp
        self.kw = kw
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def is_leaf(self):
        return self.vjp is None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var{label}(shape={self.value.shape})"

    def __len__(self):
        return len(self.value)

    # arithmetic; imported lazily to avoid a cycle with ops
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __rmatmul__(self, other):
        return _ops().matmul(other, self)

    def __pow__(self, k):
        if k == 2:
            return _ops().mul(self, self)
        raise TypeError("only squaring is supported on Var")

    def __getitem__(self, idx):
        return _ops().getitem(self, idx)

    @property
    def T(self):
        return _ops().swapaxes(self)

    def sum(self, axis=None, keepdims=False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return _ops().reshape(self, shape)


_OPS = None


def _ops():
    global _OPS
    if _OPS is None:
        from . import ops

        _OPS = ops
    return _OPS


def value(x):
    """Raw array behind ``x`` (identity for non-``Var`` inputs)."""
    return x.value if isinstance(x, Var) else x


def primitive(fwd, vjp):
    """Wrap ``fwd`` into a graph-recording op.

    ``vjp(g, out, args, needs, **kw)`` returns one cotangent per positional
    argument (``None`` where ``needs[i]`` is false).
    """

    def op(*args, **kw):
        vals = [a.value if isinstance(a, Var) else a for a in args]
        out = fwd(*vals, **kw)
        for a in args:
            if isinstance(a, Var):
                return Var(out, args, vjp, kw or None)
        return out

    op.__name__ = getattr(fwd, "__name__", "op")
    op.__doc__ = fwd.__doc__
    return op


def _toposort(root, stop=()):
    order = []
    seen = set()
    stop = set(stop)
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if id(node) in stop:
            continue
        for a in node.args:
            if isinstance(a, Var) and id(a) not in seen:
                stack.append((a, False))
    return order


class Tape:
    """Topologically ordered record of the graph below a root node.

    Building the tape is separate from running it, so the same tape can be
    swept more than once.
    """

    def __init__(self, root, stop=()):
        if not isinstance(root, Var):
            raise TypeError("tape root must be a Var")
        self.root = root
        # nodes in ``stop`` are recorded but their inputs are not traversed
        self.nodes = _toposort(root, [id(n) for n in stop])

    @property
    def leaves(self):
        return [n for n in self.nodes if n.is_leaf]

    def backward(self, wrt=None, seed=None, create_graph=False):
        """Adjoints of the root with respect to ``wrt`` (default: all leaves).

        Returns a list aligned with ``wrt``; leaves the root does not depend
        on get zero adjoints.
        """
        if wrt is None:
            wrt = self.leaves
        if seed is None:
            if self.root.value.size != 1:
                raise ValueError(
                    f"backward needs a scalar root or an explicit seed, got shape {self.root.shape}"
                )
            seed = np.ones_like(self.root.value)
        wrt_ids = {id(w) for w in wrt}
        relevant = set()
        for node in self.nodes:
            nid = id(node)
            if nid in wrt_ids:
                relevant.add(nid)
                continue
            for a in node.args:
                if isinstance(a, Var) and id(a) in relevant:
                    relevant.add(nid)
                    break
        if id(self.root) not in relevant:
            return [np.zeros_like(w.value) for w in wrt]

        cot = {id(self.root): seed}
        found = {}
        for node in reversed(self.nodes):
            nid = id(node)
            if nid not in relevant:
                continue
            g = cot.pop(nid, None)
            if g is None:
                continue
            if nid in wrt_ids:
                found[nid] = g
            if node.vjp is None:
                continue
            needs = tuple(isinstance(a, Var) and id(a) in relevant and id(a) != nid for a in node.args)
            if not any(needs):
                continue
            if create_graph:
                out = node
                args = node.args
            else:
                out = node.value
                args = tuple(a.value if isinstance(a, Var) else a for a in node.args)
                g = g.value if isinstance(g, Var) else g
            grads = node.vjp(g, out, args, needs, **(node.kw or {}))
            for a, need, ga in zip(node.args, needs, grads):
                if not need or ga is None:
                    continue
                aid = id(a)
                prev = cot.get(aid)
                cot[aid] = ga if prev is None else prev + ga
        res = []
        for w in wrt:
            g = found.get(id(w))
            if g is None:
                g = np.zeros_like(w.value)
            elif not create_graph and isinstance(g, Var):
                g = g.value
            res.append(g)
        return res


def grad(root, wrt, seed=None, create_graph=False):
    """Gradient of ``root`` with respect to each node in ``wrt``.

    ``wrt`` may contain interior nodes; only paths from ``wrt`` to ``root``
    are swept.  A non-scalar root needs an explicit ``seed`` cotangent.
    """
    single = isinstance(wrt, Var)
    wrt_list = [wrt] if single else list(wrt)
    # With one target, nothing upstream of it can matter; with several, one
    # may lie upstream of another, so the whole graph is kept.
    stop = wrt_list if single else ()
    out = Tape(root, stop=stop).backward(wrt_list, seed=seed, create_graph=create_graph)
    return out[0] if single else out


def forward(fn, *inputs):
    """Evaluate ``fn`` on fresh leaves; return ``(value, tape, leaves)``."""
    leaves = [Var(np.array(x, dtype=np.float64)) for x in inputs]
    out = fn(*leaves)
    if not isinstance(out, Var):
        return np.asarray(out), None, leaves
    return out.value, Tape(out), leaves


def backward(tape, root=None):
    """Adjoints of a scalar root, aligned with ``tape.leaves``."""
    if root is not None and root is not tape.root:
        tape = Tape(root)
    return tape.backward()
