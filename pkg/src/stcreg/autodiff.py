"""Dense float64 tensors with reverse-mode automatic differentiation.

Values are numpy float64 arrays wrapped in graph ``Node`` objects.  Every
operation records its parent nodes plus one vector-Jacobian closure per
parent, so :func:`backward` can sweep the graph once in reverse
topological order and accumulate exact gradients for the leaves.

The operation set is deliberately small: 3D cross-correlation, a few
elementwise maps, axis reductions, an affine map along the last axis,
a fused softmax/KL-divergence, and the index permutations (flips,
quarter-turn rotations, reshape, slicing) the rest of the package needs.
There is no broadcasting beyond the bias additions built into ``linear``
and ``conv3d``, no float32 mode, and no higher-order derivatives.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericError

Array = np.ndarray
Vjp = Callable[[Array], Array]

_AXIS_NAMES_4D = ("C", "T", "H", "W")


class Node:
    """One value in the computation graph.

    A node with no parents is a leaf (an input or a parameter); anything
    else was produced by an operation.  ``requires_grad`` is true for
    trainable leaves and for any node with a trainable ancestor.  Values
    are treated as immutable once wrapped: updates rebind ``value`` to a
    fresh array so closures captured by downstream ops stay valid.
    """

    __slots__ = ("value", "op", "parents", "requires_grad", "_vjps")

    def __init__(
        self,
        value,
        op: str = "leaf",
        parents: Sequence["Node"] = (),
        requires_grad: bool = False,
        vjps: Sequence[Vjp] = (),
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self.parents
        )
        self._vjps = tuple(vjps)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def size(self) -> int:
        return self.value.size

    def __repr__(self) -> str:
        return f"Node(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Node") -> "Node":
        return add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return sub(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return mul(self, other)


def as_node(x) -> Node:
    """Wrap ``x`` as a constant leaf unless it already is a Node."""
    return x if isinstance(x, Node) else Node(x)


def leaf(value, requires_grad: bool = False) -> Node:
    """Create a leaf node, typically a parameter when ``requires_grad``."""
    return Node(value, op="leaf", requires_grad=requires_grad)


def _check_same_shape(op: str, a: Node, b: Node) -> None:
    sa, sb = a.value.shape, b.value.shape
    if sa == sb:
        return
    if len(sa) != len(sb):
        raise DimensionError(f"{op}: rank mismatch {sa} vs {sb}")
    axis = next(i for i, (m, n) in enumerate(zip(sa, sb)) if m != n)
    raise DimensionError(f"{op}: shapes {sa} and {sb} differ at axis {axis}")


# ---------------------------------------------------------------------------
# elementwise operations


def relu(x) -> Node:
    """max(x, 0); the subgradient at exactly 0 is taken as 0."""
    x = as_node(x)
    mask = (x.value > 0.0).astype(np.float64)
    return Node(np.maximum(x.value, 0.0), "relu", (x,), vjps=(lambda g: g * mask,))


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_same_shape("add", a, b)
    return Node(a.value + b.value, "add", (a, b), vjps=(lambda g: g, lambda g: g))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_same_shape("sub", a, b)
    return Node(a.value - b.value, "sub", (a, b), vjps=(lambda g: g, lambda g: -g))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_same_shape("mul", a, b)
    return Node(
        a.value * b.value,
        "mul",
        (a, b),
        vjps=(lambda g: g * b.value, lambda g: g * a.value),
    )


def scale(x, c: float) -> Node:
    """Multiply by a python scalar (not a graph value)."""
    x = as_node(x)
    c = float(c)
    return Node(x.value * c, "scale", (x,), vjps=(lambda g: g * c,))


# ---------------------------------------------------------------------------
# reductions


def _normalize_axes(x: Node, axes: Iterable[int]) -> tuple[int, ...]:
    axes = tuple(sorted({int(a) for a in axes}))
    if not axes:
        raise ValueError("reduction requires at least one axis")
    ndim = x.value.ndim
    for a in axes:
        if not 0 <= a < ndim:
            raise ValueError(f"axis {a} out of range for rank-{ndim} input")
    return axes


def _inverse_perm(perm: tuple[int, ...]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


def reduce_sum(x, axes: Iterable[int]) -> Node:
    x = as_node(x)
    axes = _normalize_axes(x, axes)
    shape = x.value.shape

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axes), shape)

    return Node(np.sum(x.value, axis=axes), "sum", (x,), vjps=(vjp,))


def reduce_mean(x, axes: Iterable[int]) -> Node:
    x = as_node(x)
    axes = _normalize_axes(x, axes)
    shape = x.value.shape
    count = 1
    for a in axes:
        count *= shape[a]

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g / count, axes), shape)

    return Node(np.mean(x.value, axis=axes), "mean", (x,), vjps=(vjp,))


def reduce_max(x, axes: Iterable[int]) -> Node:
    """Max over ``axes``.

    The backward pass routes the whole gradient to the first maximal
    element in row-major scan order, which makes tie-breaking (and
    therefore training) deterministic.
    """
    x = as_node(x)
    axes = _normalize_axes(x, axes)
    kept = tuple(i for i in range(x.value.ndim) if i not in axes)
    perm = kept + axes
    moved = np.transpose(x.value, perm)
    kept_shape = moved.shape[: len(kept)]
    moved_shape = moved.shape
    flat = moved.reshape(kept_shape + (-1,))
    idx = np.argmax(flat, axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    inv = _inverse_perm(perm)

    def vjp(g):
        gf = np.zeros(flat.shape, dtype=np.float64)
        np.put_along_axis(gf, idx[..., None], np.asarray(g)[..., None], axis=-1)
        return np.transpose(gf.reshape(moved_shape), inv)

    return Node(out, "max", (x,), vjps=(vjp,))


# ---------------------------------------------------------------------------
# linear and convolution


def linear(x, weight, bias) -> Node:
    """Affine map along the last axis: ``y = x @ weight.T + bias``."""
    x, w, b = as_node(x), as_node(weight), as_node(bias)
    if w.value.ndim != 2:
        raise DimensionError(f"linear: weight must be 2-D, got {w.shape}")
    if b.value.ndim != 1 or b.shape[0] != w.shape[0]:
        raise DimensionError(f"linear: bias {b.shape} does not match weight rows {w.shape[0]}")
    if x.value.ndim < 1 or x.shape[-1] != w.shape[1]:
        raise DimensionError(
            f"linear: input last axis {x.shape[-1] if x.value.ndim else None}"
            f" does not match weight columns {w.shape[1]}"
        )
    d_out, d_in = w.shape
    out = x.value @ w.value.T + b.value
    xv, wv = x.value, w.value

    def vjp_x(g):
        return g @ wv

    def vjp_w(g):
        return g.reshape(-1, d_out).T @ xv.reshape(-1, d_in)

    def vjp_b(g):
        return g.reshape(-1, d_out).sum(axis=0)

    return Node(out, "linear", (x, w, b), vjps=(vjp_x, vjp_w, vjp_b))


def conv3d(x, kernel, bias, stride=(1, 1, 1), padding=(0, 0, 0)) -> Node:
    """3D cross-correlation over a C×T×H×W input.

    ``kernel`` has shape (C_out, C_in, kT, kH, kW); the output temporal
    extent is floor((T + 2·pad_t − kT)/stride_t) + 1 and likewise for H
    and W.  No kernel flip is performed (the usual deep-learning
    convention).
    """
    x, k, b = as_node(x), as_node(kernel), as_node(bias)
    if x.value.ndim != 4:
        raise DimensionError(f"conv3d: input must be C,T,H,W, got {x.shape}")
    if k.value.ndim != 5:
        raise DimensionError(f"conv3d: kernel must be 5-D, got {k.shape}")
    c_out, c_in = k.shape[0], k.shape[1]
    if x.shape[0] != c_in:
        raise DimensionError(
            f"conv3d: input has {x.shape[0]} channels but kernel expects {c_in} (axis C)"
        )
    if b.value.ndim != 1 or b.shape[0] != c_out:
        raise DimensionError(f"conv3d: bias {b.shape} does not match {c_out} output channels")
    stride = tuple(int(s) for s in stride)
    padding = tuple(int(p) for p in padding)
    if len(stride) != 3 or any(s < 1 for s in stride):
        raise ValueError(f"conv3d: stride must be three ints >= 1, got {stride}")
    if len(padding) != 3 or any(p < 0 for p in padding):
        raise ValueError(f"conv3d: padding must be three ints >= 0, got {padding}")

    ksize = k.shape[2:]
    padded_dims = tuple(x.shape[1 + i] + 2 * padding[i] for i in range(3))
    for i in range(3):
        if ksize[i] > padded_dims[i]:
            raise DimensionError(
                f"conv3d: kernel extent {ksize[i]} exceeds padded input"
                f" extent {padded_dims[i]} along axis {_AXIS_NAMES_4D[1 + i]}"
            )

    pt, ph, pw = padding
    st, sh, sw = stride
    xp = np.pad(x.value, ((0, 0), (pt, pt), (ph, ph), (pw, pw)))
    win = sliding_window_view(xp, ksize, axis=(1, 2, 3))[:, ::st, ::sh, ::sw]
    out = np.tensordot(k.value, win, axes=([1, 2, 3, 4], [0, 4, 5, 6]))
    out = out + b.value[:, None, None, None]
    out_dims = out.shape[1:]
    kv = k.value
    in_shape = x.shape
    padded_shape = xp.shape

    def vjp_x(g):
        spread = np.tensordot(kv, g, axes=([0], [0]))  # C_in,kT,kH,kW,T",H",W"
        dxp = np.zeros(padded_shape, dtype=np.float64)
        t2, h2, w2 = out_dims
        for i in range(ksize[0]):
            for j in range(ksize[1]):
                for l in range(ksize[2]):
                    dxp[
                        :,
                        i : i + st * t2 : st,
                        j : j + sh * h2 : sh,
                        l : l + sw * w2 : sw,
                    ] += spread[:, i, j, l]
        return dxp[
            :,
            pt : pt + in_shape[1],
            ph : ph + in_shape[2],
            pw : pw + in_shape[3],
        ]

    def vjp_k(g):
        return np.tensordot(g, win, axes=([1, 2, 3], [1, 2, 3]))

    def vjp_b(g):
        return g.sum(axis=(1, 2, 3))

    return Node(out, "conv3d", (x, k, b), vjps=(vjp_x, vjp_k, vjp_b))


# ---------------------------------------------------------------------------
# softmax + KL divergence


def _log_softmax(v: Array) -> Array:
    m = np.max(v)
    shifted = v - m
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax_kl(logits_p, logits_q) -> Node:
    """KL(P || Q) for P = softmax(logits_p), Q = softmax(logits_q).

    Computed in log space with max subtraction; differentiable with
    respect to both logit vectors.
    """
    p, q = as_node(logits_p), as_node(logits_q)
    if p.value.ndim != 1:
        raise DimensionError(f"softmax_kl: logits must be 1-D, got {p.shape}")
    _check_same_shape("softmax_kl", p, q)
    if not (np.all(np.isfinite(p.value)) and np.all(np.isfinite(q.value))):
        raise NumericError("softmax_kl: non-finite logits")
    lp = _log_softmax(p.value)
    lq = _log_softmax(q.value)
    pp = np.exp(lp)
    qq = np.exp(lq)
    gap = lp - lq
    kl = float(np.sum(pp * gap))
    # tiny negative values can appear through rounding when P ~ Q
    kl = max(kl, 0.0)

    def vjp_p(g):
        return g * (pp * (gap - kl))

    def vjp_q(g):
        return g * (qq - pp)

    return Node(np.asarray(kl), "softmax_kl", (p, q), vjps=(vjp_p, vjp_q))


# ---------------------------------------------------------------------------
# index permutations and views


def flip(x, axes: Iterable[int]) -> Node:
    """Reverse the listed axes; gradient is the same reversal."""
    x = as_node(x)
    axes = _normalize_axes(x, axes)
    return Node(
        np.flip(x.value, axis=axes).copy(),
        "flip",
        (x,),
        vjps=(lambda g: np.flip(g, axis=axes),),
    )


def rot90(x, k: int) -> Node:
    """Rotate the last two axes by k quarter turns counter-clockwise."""
    x = as_node(x)
    if x.value.ndim < 2:
        raise DimensionError(f"rot90: need at least 2 axes, got shape {x.shape}")
    k = int(k) % 4
    ax = (x.value.ndim - 2, x.value.ndim - 1)
    return Node(
        np.rot90(x.value, k, axes=ax).copy(),
        "rot90",
        (x,),
        vjps=(lambda g: np.rot90(g, -k, axes=ax),),
    )


def reshape(x, shape: Sequence[int]) -> Node:
    x = as_node(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}")
    old = x.shape
    return Node(
        x.value.reshape(shape), "reshape", (x,), vjps=(lambda g: g.reshape(old),)
    )


def vector_slice(x, start: int, stop: int) -> Node:
    """Contiguous slice of a 1-D node; gradient zero-pads back."""
    x = as_node(x)
    if x.value.ndim != 1:
        raise DimensionError(f"vector_slice: input must be 1-D, got {x.shape}")
    n = x.size
    start, stop = int(start), int(stop)
    if not (0 <= start < stop <= n):
        raise ValueError(f"vector_slice: bad range [{start}, {stop}) for length {n}")

    def vjp(g):
        out = np.zeros(n, dtype=np.float64)
        out[start:stop] = g
        return out

    return Node(x.value[start:stop].copy(), "slice", (x,), vjps=(vjp,))


# ---------------------------------------------------------------------------
# reverse-mode sweep


def _toposort(root: Node) -> list[Node]:
    """Reverse-postorder DFS restricted to gradient-requiring nodes."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict[Node, Array]:
    """Gradients of a scalar loss for every gradient-requiring leaf.

    Returns a mapping keyed by leaf node identity.  Leaves that are not
    reachable from the loss are simply absent (their gradient is zero).
    Running twice on the same graph gives bit-identical results: the
    accumulation order is fixed by the graph structure alone.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return {}
    grads: dict[Node, Array] = {loss: np.ones_like(loss.value)}
    for node in reversed(_toposort(loss)):
        g = grads.get(node)
        if g is None or not node.parents:
            continue
        for parent, vjp in zip(node.parents, node._vjps):
            if not parent.requires_grad:
                continue
            pg = vjp(g)
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg
        del grads[node]
    return {n: g for n, g in grads.items() if not n.parents}


# ---------------------------------------------------------------------------
# gradient checking


def finite_diff_check(
    f: Callable[[Node], Node], params: Array, eps: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a 1-D parameter node to a scalar loss node and must be
    deterministic.  The analytic gradient comes from one reverse sweep at
    ``params``; each coordinate is then probed with a symmetric step of
    ``eps``.  The per-coordinate error is |g - d| / max(|g|, |d|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("finite_diff_check: eps must be positive")
    params = np.asarray(params, dtype=np.float64).ravel()
    center = leaf(params.copy(), requires_grad=True)
    loss = f(center)
    if loss.value.size != 1:
        raise ValueError("finite_diff_check: f must return a scalar node")
    grad = backward(loss).get(center)
    if grad is None:
        grad = np.zeros_like(params)
    worst = 0.0
    for i in range(params.size):
        up = params.copy()
        up[i] += eps
        down = params.copy()
        down[i] -= eps
        hi = float(f(Node(up)).value)
        lo = float(f(Node(down)).value)
        d = (hi - lo) / (2.0 * eps)
        err = abs(grad[i] - d) / max(abs(grad[i]), abs(d), 1e-8)
        worst = max(worst, err)
    return worst
