"""Dense 64-bit tensors with reverse-mode automatic differentiation.

The engine is a dynamic tape: every operation on tensors that require
gradients records its parents and a VJP (vector-Jacobian product) closure.
The VJP closures are written in terms of the same differentiable
primitives, which is what makes second-order gradients work: calling
``backward(..., create_graph=True)`` produces gradient tensors that are
themselves graph nodes, so a gradient-norm penalty can be differentiated
again exactly.

Broadcasting is deliberately restricted to the two patterns the networks
use: a true scalar (size-1 tensor) against anything, and same-rank shapes
whose axes either match or are 1 on one side (per-channel / per-pixel
broadcasts written with explicit singleton axes). Implicit rank promotion
is rejected with a DimensionError.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_ids = itertools.count()
_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class _enable_grad:
    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = True
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


class Tensor:
    """A contiguous row-major float64 array plus its place in the tape.

    Tensors are immutable after creation; ops return new tensors. The
    tape is the implicit graph formed by ``_parents`` links, rebuilt on
    every forward pass and garbage-collected with its tensors.
    """

    __slots__ = ("data", "requires_grad", "node_id", "op", "_parents", "_vjps")

    def __init__(self, data, requires_grad=False, _parents=(), _vjps=(), op="leaf"):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_ids)
        self.op = op
        self._parents = tuple(_parents)
        self._vjps = tuple(_vjps)

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a size-1 tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """Same values, cut loose from the graph."""
        return Tensor(self.data, requires_grad=False, op="detach")

    def parents(self) -> tuple["Tensor", ...]:
        return self._parents

    def ancestors(self) -> Iterator["Tensor"]:
        """Every tensor reachable through parent links (graph walk)."""
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            for p in node._parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    yield p
                    stack.append(p)

    def depends_on(self, other: "Tensor") -> bool:
        return any(a is other for a in self.ancestors())

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def square(self):
        return mul(self, self)

    def abs(self):
        return tabs(self)

    def sqrt(self):
        return tsqrt(self)

    def backward(self, create_graph=False) -> "GradientMap":
        return backward(self, create_graph=create_graph)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def parameter(data, rng=None) -> Tensor:
    """Leaf tensor that accumulates gradients."""
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, op="param")


class GradientMap:
    """node_id -> gradient tensor, as produced by :func:`backward`."""

    def __init__(self, grads: dict[int, Tensor]):
        self._grads = grads

    def __getitem__(self, key) -> Tensor:
        nid = key.node_id if isinstance(key, Tensor) else int(key)
        return self._grads[nid]

    def get(self, key, default=None):
        nid = key.node_id if isinstance(key, Tensor) else int(key)
        return self._grads.get(nid, default)

    def __contains__(self, key) -> bool:
        nid = key.node_id if isinstance(key, Tensor) else int(key)
        return nid in self._grads

    def __len__(self) -> int:
        return len(self._grads)

    def ids(self):
        return self._grads.keys()


# -- graph plumbing ---------------------------------------------------------


def _record(data, op, parents: Sequence[Tensor], vjps: Sequence[Callable]) -> Tensor:
    """Wrap an op result, keeping graph links only when they can matter."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _vjps=vjps, op=op)
    return Tensor(data, op=op)


def backward(loss: Tensor, create_graph: bool = False) -> GradientMap:
    """Reverse-mode sweep from a scalar loss.

    With ``create_graph=True`` the returned gradients are graph nodes, so
    expressions built from them (e.g. a gradient-norm penalty) can be
    differentiated again.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    # Deterministic topological order over the requires_grad subgraph.
    topo: list[Tensor] = []
    state: dict[int, int] = {}  # id -> 0 visiting, 1 done
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            state[id(node)] = 1
            continue
        if state.get(id(node)) is not None:
            continue
        state[id(node)] = 0
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and state.get(id(p)) is None:
                stack.append((p, False))

    grads: dict[int, Tensor] = {
        loss.node_id: Tensor(np.ones_like(loss.data), op="seed")
    }
    by_obj: dict[int, Tensor] = {id(loss): grads[loss.node_id]}

    ctx = _enable_grad() if create_graph else no_grad()
    with ctx:
        for node in reversed(topo):
            g = by_obj.get(id(node))
            if g is None:
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                prev = by_obj.get(id(parent))
                total = contrib if prev is None else add(prev, contrib)
                by_obj[id(parent)] = total
                grads[parent.node_id] = total
    return GradientMap(grads)


# -- broadcasting helpers ---------------------------------------------------


def _check_broadcast(sa: tuple[int, ...], sb: tuple[int, ...], opname: str):
    if sa == sb:
        return
    if _numel(sa) == 1 or _numel(sb) == 1:
        return
    if len(sa) == len(sb) and all(a == b or a == 1 or b == 1 for a, b in zip(sa, sb)):
        return
    raise DimensionError(f"{opname}: shapes not broadcast-compatible", sa, sb)


def _numel(shape: Iterable[int]) -> int:
    return int(np.prod(list(shape), dtype=np.int64)) if shape else 1


def _unbroadcast(g: Tensor, target_shape: tuple[int, ...]) -> Tensor:
    """Sum a gradient back down to the shape of a broadcast input."""
    if g.shape == target_shape:
        return g
    if _numel(target_shape) == 1:
        return reshape(tsum(g), *target_shape)
    axes = tuple(
        i for i, (got, want) in enumerate(zip(g.shape, target_shape)) if want == 1 and got != 1
    )
    return tsum(g, axis=axes, keepdims=True)


# -- binary primitives ------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    return _record(
        a.data + b.data,
        "add",
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    return _record(
        a.data - b.data,
        "sub",
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(neg(g), b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    return _record(
        a.data * b.data,
        "mul",
        (a, b),
        (lambda g: _unbroadcast(mul(g, b), a.shape), lambda g: _unbroadcast(mul(g, a), b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "div")
    return _record(
        a.data / b.data,
        "div",
        (a, b),
        (
            lambda g: _unbroadcast(div(g, b), a.shape),
            lambda g: _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape),
        ),
    )


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("matmul needs 2-D operands", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner dimensions disagree", a.shape, b.shape)
    return _record(
        a.data @ b.data,
        "matmul",
        (a, b),
        (lambda g: matmul(g, transpose(b)), lambda g: matmul(transpose(a), g)),
    )


# -- unary primitives -------------------------------------------------------


def neg(x) -> Tensor:
    x = as_tensor(x)
    return _record(-x.data, "neg", (x,), (lambda g: neg(g),))


def texp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)
    holder = []
    out = _record(out_data, "exp", (x,), (lambda g: mul(g, holder[0]),))
    holder.append(out)
    return out


def tlog(x) -> Tensor:
    x = as_tensor(x)
    return _record(np.log(x.data), "log", (x,), (lambda g: div(g, x),))


def tsqrt(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.sqrt(x.data)
    holder = []
    out = _record(out_data, "sqrt", (x,), (lambda g: div(g, mul(2.0, holder[0])),))
    holder.append(out)
    return out


def tpow(x, p: float) -> Tensor:
    x = as_tensor(x)
    p = float(p)
    return _record(
        np.power(x.data, p), "pow", (x,), (lambda g: mul(g, mul(p, tpow(x, p - 1.0))),)
    )


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # exp(-|x|) never overflows, so both tails stay finite
    z = np.exp(-np.abs(x.data))
    out_data = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    holder = []
    out = _record(
        out_data, "sigmoid", (x,), (lambda g: mul(g, mul(holder[0], sub(1.0, holder[0]))),)
    )
    holder.append(out)
    return out


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))
    return _record(out_data, "softplus", (x,), (lambda g: mul(g, sigmoid(x)),))


def leaky_relu(x, alpha: float = 0.2) -> Tensor:
    x = as_tensor(x)
    slope = Tensor(np.where(x.data > 0, 1.0, float(alpha)))
    return _record(x.data * slope.data, "leaky_relu", (x,), (lambda g: mul(g, slope),))


def relu(x) -> Tensor:
    return leaky_relu(x, 0.0)


def tabs(x) -> Tensor:
    x = as_tensor(x)
    sign = Tensor(np.sign(x.data))
    return _record(np.abs(x.data), "abs", (x,), (lambda g: mul(g, sign),))


# -- shape primitives -------------------------------------------------------


def reshape(x, *shape) -> Tensor:
    x = as_tensor(x)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    new = np.reshape(x.data, shape)
    old_shape = x.shape
    return _record(new, "reshape", (x,), (lambda g: reshape(g, old_shape),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(int(a) for a in axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    return _record(
        np.ascontiguousarray(np.transpose(x.data, axes)),
        "transpose",
        (x,),
        (lambda g: transpose(g, inv),),
    )


# -- reductions -------------------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    out_data = np.sum(x.data, axis=axis, keepdims=keepdims)
    x_shape = x.shape

    def vjp(g: Tensor) -> Tensor:
        if axis is None:
            expanded = reshape(g, (1,) * len(x_shape)) if x_shape else reshape(g, ())
        elif keepdims:
            expanded = g
        else:
            kd_shape = list(x_shape)
            for a in axis:
                kd_shape[a] = 1
            expanded = reshape(g, tuple(kd_shape))
        if expanded.shape == x_shape:
            return expanded
        return mul(expanded, Tensor(np.ones(x_shape)))

    return _record(out_data, "sum", (x,), (vjp,))


def tmean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    axis_n = _norm_axis(axis, x.ndim)
    if axis_n is None:
        count = x.size
    else:
        count = _numel([x.shape[a] for a in axis_n])
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def l1(x) -> Tensor:
    """Mean absolute value. Zero exactly for a zero tensor."""
    return tmean(tabs(x))


def l2(x) -> Tensor:
    """Euclidean norm sqrt(sum of squares)."""
    return tsqrt(tsum(mul(x, x)))


# -- convolution ------------------------------------------------------------


def _conv_out_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def unfold(x, kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    """im2col: (N,C,H,W) -> (N, C*kh*kw, H'*W') patch matrix.

    Linear map; its adjoint is :func:`fold`, and the two reference each
    other as VJPs, which keeps convolution twice-differentiable.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError("unfold expects a N,C,H,W tensor", x.shape)
    n, c, h, w = x.shape
    oh, ow = _conv_out_size(h, kh, stride, pad), _conv_out_size(w, kw, stride, pad)
    if oh <= 0 or ow <= 0:
        raise DimensionError(
            f"unfold: non-positive output size {oh}x{ow}", x.shape, (kh, kw)
        )
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = padded.strides
    windows = np.lib.stride_tricks.as_strided(
        padded,
        shape=(n, c, oh, ow, kh, kw),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    cols = np.ascontiguousarray(windows.transpose(0, 1, 4, 5, 2, 3)).reshape(
        n, c * kh * kw, oh * ow
    )
    in_shape = x.shape
    return _record(
        cols,
        "unfold",
        (x,),
        (lambda g: fold(g, in_shape, kh, kw, stride, pad),),
    )


def fold(cols, out_shape: tuple[int, int, int, int], kh: int, kw: int, stride: int = 1, pad: int = 0) -> Tensor:
    """col2im scatter-add, the adjoint of :func:`unfold`."""
    cols = as_tensor(cols)
    n, c, h, w = out_shape
    oh, ow = _conv_out_size(h, kh, stride, pad), _conv_out_size(w, kw, stride, pad)
    if cols.shape != (n, c * kh * kw, oh * ow):
        raise DimensionError("fold: column shape mismatch", cols.shape, (n, c * kh * kw, oh * ow))
    y6 = cols.data.reshape(n, c, kh, kw, oh, ow)
    buf = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    for a in range(kh):
        for b in range(kw):
            buf[:, :, a : a + stride * oh : stride, b : b + stride * ow : stride] += y6[
                :, :, a, b
            ]
    out = buf[:, :, pad : pad + h, pad : pad + w]
    return _record(
        np.ascontiguousarray(out),
        "fold",
        (cols,),
        (lambda g: unfold(g, kh, kw, stride, pad),),
    )


def conv2d(x, kernel, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of (N,C,H,W) with (O,C,kh,kw) kernels.

    Built from unfold + matmul so gradients (first and second order) come
    from the primitives.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError("conv2d expects N,C,H,W input and O,C,kh,kw kernel", x.shape, kernel.shape)
    n, c, h, w = x.shape
    o, ck, kh, kw = kernel.shape
    if ck != c:
        raise DimensionError("conv2d channel mismatch", x.shape, kernel.shape)
    if kh % 2 == 0 or kw % 2 == 0:
        raise ContractError(f"conv2d kernel sides must be odd, got {kh}x{kw}")
    oh, ow = _conv_out_size(h, kh, stride, pad), _conv_out_size(w, kw, stride, pad)
    if oh <= 0 or ow <= 0:
        raise DimensionError(f"conv2d: non-positive output size {oh}x{ow}", x.shape, kernel.shape)
    cols = unfold(x, kh, kw, stride, pad)  # (N, C*kh*kw, L)
    flat = reshape(transpose(cols, (1, 0, 2)), (c * kh * kw, n * oh * ow))
    kmat = reshape(kernel, (o, c * kh * kw))
    out = matmul(kmat, flat)  # (O, N*L)
    out = transpose(reshape(out, (o, n, oh, ow)), (1, 0, 2, 3))
    return out


# -- gradient checking ------------------------------------------------------


def grad_check(f: Callable[[Tensor], Tensor], point: Tensor, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    x = Tensor(point.data.copy(), requires_grad=True)
    loss = f(x)
    if loss.data.size != 1:
        raise ContractError("grad_check target must produce a scalar")
    gm = backward(loss)
    g = gm.get(x)
    analytic = np.zeros_like(x.data) if g is None else g.data.copy()

    # Values are computed with recording left on: a loss built on an inner
    # backward (gradient penalties) has no value at all under no_grad.
    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(Tensor(x.data)).item()
        flat[i] = orig - h
        fm = f(Tensor(x.data)).item()
        flat[i] = orig
        numeric[i] = (fp - fm) / (2.0 * h)

    analytic_flat = analytic.reshape(-1)
    if not (np.all(np.isfinite(analytic_flat)) and np.all(np.isfinite(numeric))):
        raise NumericError("grad_check: NaN or Inf encountered")
    denom = np.maximum(1.0, np.abs(analytic_flat))
    return float(np.max(np.abs(analytic_flat - numeric) / denom)) if flat.size else 0.0
