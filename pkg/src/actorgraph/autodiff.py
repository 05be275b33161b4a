"""Dense float64 tensors with reverse-mode differentiation.

The op vocabulary is deliberately small: exactly what the tubelet GCN,
the relation graphs, the embedder and the losses need. There is no general
broadcasting; ``affine`` is the only op that adds a row vector to a matrix.

Every op returns a new :class:`Tensor` holding its parents and a closure that
maps the output gradient to one gradient per parent.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

EDGE_EPS = 1e-6


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, name: str | None = None) -> Tensor:
    """A constant (no gradient requested)."""
    return Tensor(data, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data, parents, backward) -> Tensor:
    return Tensor(data, _parents=tuple(parents), _backward=backward)


def _check_same(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- elementwise ------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def inverse_distance(d: Tensor, eps: float = EDGE_EPS) -> Tensor:
    """Edge strength ``1 / (d + eps)`` for nonnegative distances."""
    inv = 1.0 / (d.data + eps)
    return _make(inv, (d,), lambda g: (-g * inv * inv,))


# -- matrix ops -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions {a.shape} x {b.shape} disagree")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``b`` a single row added to every row."""
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: input {x.shape} does not fit weight {w.shape}")
    if b is None:
        return matmul(x, w)
    if b.shape != (1, w.shape[1]):
        raise ShapeError(f"affine: bias shape {b.shape}, expected (1, {w.shape[1]})")
    out = x.data @ w.data + b.data

    def back(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0, keepdims=True)

    return _make(out, (x, w, b), back)


def temporal_aggregate(g: Tensor, x: Tensor) -> Tensor:
    """Row ``i`` of the result is ``g[i] @ x_i`` where ``x`` stacks N blocks of T rows.

    Equivalent to a block-diagonal affinity times the stacked features.
    """
    n, t = g.shape
    if x.shape[0] != n * t:
        raise ShapeError(f"temporal_aggregate: affinity {g.shape} needs {n * t} feature rows, got {x.shape[0]}")
    x3 = x.data.reshape(n, t, x.shape[1])
    out = np.einsum("nt,ntd->nd", g.data, x3)

    def back(grad):
        gg = np.einsum("nd,ntd->nt", grad, x3)
        gx = np.einsum("nt,nd->ntd", g.data, grad).reshape(x.shape)
        return gg, gx

    return _make(out, (g, x), back)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_last: row counts {a.shape[0]} and {b.shape[0]} differ")
    k = a.shape[1]
    return _make(np.concatenate([a.data, b.data], axis=1), (a, b),
                 lambda g: (g[:, :k], g[:, k:]))


def gather_rows(x: Tensor, index: Sequence[int]) -> Tensor:
    """Rows ``x[index]``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.size == 0:
        raise ShapeError("gather_rows: empty index")
    n = x.shape[0]

    def back(g):
        gx = np.zeros((n, g.shape[1]))
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(x.data[idx], (x,), back)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row softmax; entries where ``mask`` is False get weight exactly 0.

    Every row must keep at least one unmasked entry.
    """
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise ShapeError(f"softmax_rows: mask {mask.shape} vs input {z.shape}")
        if not mask.any(axis=1).all():
            raise ShapeError("softmax_rows: a row has no unmasked entries")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, (x,), back)


def row_distance(a: Tensor, b: Tensor) -> Tensor:
    """Per-row L2 distance, shape (n, 1). Subgradient 0 at coincident rows."""
    _check_same(a, b, "row_distance")
    diff = a.data - b.data
    d = np.sqrt((diff * diff).sum(axis=1, keepdims=True))
    safe = np.where(d > 0, d, 1.0)

    def back(g):
        u = np.where(d > 0, diff / safe, 0.0) * g
        return u, -u

    return _make(d, (a, b), back)


def l2_distance(u: Tensor, v: Tensor) -> Tensor:
    if u.shape[0] != 1:
        raise ShapeError(f"l2_distance: expected row vectors, got {u.shape}")
    return row_distance(u, v)


def pairwise_distance(a: Tensor, b: Tensor) -> Tensor:
    """``out[i, j] = ||a_i - b_j||``; subgradient 0 where the distance is 0."""
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"pairwise_distance: widths {a.shape[1]} and {b.shape[1]} differ")
    diff = a.data[:, None, :] - b.data[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=2))

    def back(g):
        r = np.where(d > 0, g / np.where(d > 0, d, 1.0), 0.0)
        ga = r.sum(axis=1, keepdims=True) * a.data - r @ b.data
        gb = r.sum(axis=0)[:, None] * b.data - r.T @ a.data
        return ga, gb

    return _make(d, (a, b), back)


def segment_max(x: Tensor, n_segments: int) -> Tensor:
    """Column-wise max over equal contiguous row blocks.

    ``x`` has ``n_segments * k`` rows; block ``i`` is rows ``i*k .. i*k+k-1``.
    The gradient reaches only the arg-max row of each block and column, with
    ties going to the lowest index.
    """
    rows, cols = x.shape
    if n_segments <= 0 or rows % n_segments:
        raise ShapeError(f"segment_max: {rows} rows do not split into {n_segments} blocks")
    k = rows // n_segments
    blocks = x.data.reshape(n_segments, k, cols)
    arg = blocks.argmax(axis=1)
    out = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]

    def back(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[:, None, :], g[:, None, :], axis=1)
        return (gb.reshape(rows, cols),)

    return _make(out, (x,), back)


# -- reductions and losses --------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    return _make(x.data.sum(), (x,), lambda g: (np.full(x.shape, g[0, 0]),))


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    return _make(x.data.mean(), (x,), lambda g: (np.full(x.shape, g[0, 0] / n),))


def add_scalars(terms: Iterable[Tensor]) -> Tensor:
    terms = list(terms)
    if not terms:
        raise ShapeError("add_scalars: nothing to add")
    for t in terms:
        if t.shape != (1, 1):
            raise ShapeError(f"add_scalars: non-scalar term {t.shape}")
    total = sum(t.data[0, 0] for t in terms)
    return _make(total, terms, lambda g: tuple(g for _ in terms))


def bce_multilabel(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy with logits, computed in log-sum-exp form."""
    t = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def back(g):
        return (g[0, 0] * (_sigmoid(z) - t) / n,)

    return _make(loss.mean(), (logits,), back)


def dropout(x: Tensor, rate: float, seed: int, train: bool) -> Tensor:
    """Inverted dropout: kept units are scaled by ``1 / (1 - rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    rng = np.random.Generator(np.random.PCG64(seed))
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


# -- differentiation --------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar loss for every leaf that requested one.

    Leaves also get their ``.grad`` attribute set (overwritten, not summed).
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = {id(loss): np.ones((1, 1))}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g
                leaves[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return leaves


def finite_difference_check(fn: Callable[[], Tensor], params: Sequence[Tensor],
                            eps: float = 1e-5) -> float:
    """Largest ``|analytic - numeric| / max(1, |numeric|)`` over all entries.

    ``fn`` rebuilds the computation from the current values of ``params`` on
    every call; parameter values are perturbed in place and restored.
    """
    for p in params:
        p.grad = None
    analytic = backward(fn())
    worst = 0.0
    for p in params:
        a = analytic.get(p, np.zeros(p.shape))
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = fn().item()
            flat[k] = orig - eps
            down = fn().item()
            flat[k] = orig
            numeric = (up - down) / (2.0 * eps)
            err = abs(a.reshape(-1)[k] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
