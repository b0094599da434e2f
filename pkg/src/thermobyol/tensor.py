"""Dense tensors with tape-based reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus the closure needed to push gradients back
to its inputs. Graphs are built define-by-run; calling :func:`backward` on a
scalar walks the recorded graph once and returns a gradient map for the
trainable Parameters that fed it. Training code keeps values in float32;
gradient-check tests build float64 graphs and the engine preserves whichever
dtype it is given.
"""

import numpy as np

from .errors import (
    DegenerateVector,
    InvalidAxis,
    NotScalar,
    ShapeMismatch,
)

_FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """Immutable n-d value; may carry autodiff history."""

    __slots__ = ("data", "_parents", "_grad_fn")

    def __init__(self, data, parents=(), grad_fn=None, dtype=None):
        self.data = _as_array(data, dtype)
        self._parents = tuple(parents)
        self._grad_fn = grad_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def rank(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """Same value, cut off from the graph (stop-gradient)."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"

    # -- elementwise arithmetic (strict shapes; only scalars broadcast) ------

    def _binary(self, other, fwd, bwd_self, bwd_other):
        if isinstance(other, Tensor):
            if other.shape != self.shape:
                raise ShapeMismatch(
                    f"elementwise operands disagree: {self.shape} vs {other.shape}"
                )
            out = Tensor(
                fwd(self.data, other.data),
                parents=(self, other),
                grad_fn=lambda g, a=self, b=other: (
                    bwd_self(g, a.data, b.data),
                    bwd_other(g, a.data, b.data),
                ),
            )
            return out
        c = float(other)
        return Tensor(
            fwd(self.data, c),
            parents=(self,),
            grad_fn=lambda g, a=self: (bwd_self(g, a.data, c),),
        )

    def __add__(self, other):
        return self._binary(other, lambda a, b: a + b, lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binary(other, lambda a, b: a - b, lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        c = float(other)
        return Tensor(c - self.data, parents=(self,), grad_fn=lambda g: (-g,))

    def __mul__(self, other):
        return self._binary(
            other, lambda a, b: a * b, lambda g, a, b: g * b, lambda g, a, b: g * a
        )

    __rmul__ = __mul__

    def __neg__(self):
        return Tensor(-self.data, parents=(self,), grad_fn=lambda g: (-g,))

    def matmul(self, other):
        if self.rank != 2 or other.rank != 2:
            raise ShapeMismatch("matmul expects rank-2 operands")
        if self.shape[1] != other.shape[0]:
            raise ShapeMismatch(
                f"matmul inner dimensions disagree: {self.shape} x {other.shape}"
            )
        return Tensor(
            self.data @ other.data,
            parents=(self, other),
            grad_fn=lambda g, a=self, b=other: (g @ b.data.T, a.data.T @ g),
        )

    __matmul__ = matmul

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor(
            self.data.reshape(shape),
            parents=(self,),
            grad_fn=lambda g: (g.reshape(old),),
        )

    def sum(self, axes=None):
        return reduce("sum", self, axes)

    def mean(self, axes=None):
        return reduce("mean", self, axes)


class Parameter(Tensor):
    """Named leaf tensor; only trainable ones show up in gradient maps."""

    __slots__ = ("name", "trainable")

    def __init__(self, data, name, trainable=True, dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name
        self.trainable = trainable

    def assign(self, array):
        """In-place value update (optimizer / EMA use, between tapes)."""
        arr = np.asarray(array, dtype=self.data.dtype)
        if arr.shape != self.data.shape:
            raise ShapeMismatch(
                f"assign to {self.name}: {arr.shape} vs {self.data.shape}"
            )
        self.data = arr.copy()

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.shape}, trainable={self.trainable})"


def tensor_new(shape, fill=0.0, data=None, dtype=np.float32):
    """Build a tensor of `shape` from a constant fill or explicit flat data."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeMismatch(f"shape entries must be positive, got {shape}")
    n = int(np.prod(shape)) if shape else 1
    if data is not None:
        flat = _as_array(data, dtype).reshape(-1)
        if flat.size != n:
            raise ShapeMismatch(f"data length {flat.size} != product(shape) {n}")
        return Tensor(flat.reshape(shape))
    return Tensor(np.full(shape, fill, dtype=dtype))


def elementwise(op, a, b):
    """Named elementwise entry point: add, sub, mul, or scalar_mul."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "scalar_mul":
        # scalar first by convention: elementwise('scalar_mul', c, tensor)
        return b * float(a) if isinstance(b, Tensor) else a * float(b)
    raise ValueError(f"unknown elementwise op {op!r}")


def reduce(op, a, axes=None):
    """Sum or mean over the given axes (None = all), differentiable."""
    if op not in ("sum", "mean"):
        raise ValueError(f"unknown reduce op {op!r}")
    if axes is None:
        ax = tuple(range(a.rank))
    elif isinstance(axes, int):
        ax = (axes,)
    else:
        ax = tuple(int(x) for x in axes)
    for x in ax:
        if x < 0 or x >= a.rank:
            raise InvalidAxis(f"axis {x} invalid for rank {a.rank}")
    if len(set(ax)) != len(ax):
        raise InvalidAxis(f"duplicate axes {ax}")
    count = int(np.prod([a.shape[x] for x in ax])) if ax else 1
    out_data = a.data.sum(axis=ax) if ax else a.data.copy()
    if op == "mean":
        out_data = out_data / count

    in_shape = a.shape

    def grad_fn(g):
        expanded = np.expand_dims(g, ax) if ax else g
        full = np.broadcast_to(expanded, in_shape)
        if op == "mean":
            full = full / count
        return (np.ascontiguousarray(full),)

    return Tensor(out_data, parents=(a,), grad_fn=grad_fn)


_NORM_TOL = 1e-12


def l2_normalize(v):
    """v / ||v||2 for a vector, or row-wise for a rank-2 batch."""
    if v.rank == 1:
        norms = np.linalg.norm(v.data, keepdims=True)
        if norms.item() <= _NORM_TOL:
            raise DegenerateVector("vector norm below tolerance")
        y = v.data / norms

        def grad_fn(g):
            return ((g - y * np.dot(y, g)) / norms,)

        return Tensor(y, parents=(v,), grad_fn=grad_fn)
    if v.rank == 2:
        norms = np.linalg.norm(v.data, axis=1, keepdims=True)
        if np.any(norms <= _NORM_TOL):
            raise DegenerateVector("a row norm is below tolerance")
        y = v.data / norms

        def grad_fn(g):
            dots = np.sum(y * g, axis=1, keepdims=True)
            return ((g - y * dots) / norms,)

        return Tensor(y, parents=(v,), grad_fn=grad_fn)
    raise ShapeMismatch("l2_normalize expects rank-1 or rank-2 input")


def backward(loss):
    """Reverse sweep from a scalar; returns {Parameter: gradient array}.

    Only trainable parameters appear in the map. The recorded graph is not
    reusable afterwards (grad closures are dropped from visited nodes).
    """
    if loss.rank != 0:
        raise NotScalar(f"backward needs a rank-0 loss, got shape {loss.shape}")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones((), dtype=loss.data.dtype)}
    node_by_id = {id(loss): loss}
    result = {}
    for node in reversed(topo):
        node_by_id[id(node)] = node
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            if node.trainable:
                acc = result.get(node)
                result[node] = g.copy() if acc is None else acc + g
            continue
        if node._grad_fn is None:
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        node._grad_fn = None  # free the tape

    return result


def finite_difference_grad(f, x, eps=1e-3):
    """Central-difference gradient of scalar-valued f at array x (test oracle)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(x))
        flat[i] = orig - eps
        lo = float(f(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
